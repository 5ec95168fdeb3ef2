//! Automated mechanism design as program search.
//!
//! Candidate mechanism components are small programs in a sandboxed
//! expression language ([`dsl`]). A setting ([`mechanisms::SettingSpec`])
//! pairs an auction environment with a fixing process that forces any
//! candidate into feasibility, strategy-proofness, individual rationality
//! and weak budget balance. Candidates are scored by Monte Carlo
//! simulation ([`evaluation`]) and evolved with an island-model search
//! ([`evolution`]) whose proposals come either from a remote LLM endpoint
//! or from a local symbolic mutator ([`proposers`]). The [`oracle`] module
//! verifies the design criteria by brute-force grid search.

pub mod distributions;
pub mod dsl;
pub mod evaluation;
pub mod evolution;
pub mod mechanisms;
pub mod oracle;
pub mod proposers;

pub use dsl::{EvalContext, EvalError, HeuristicProgram, HeuristicSignature, ParseError, Value};

