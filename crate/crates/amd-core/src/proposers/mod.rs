//! Candidate-generation backends.
//!
//! Two proposers share one interface: [`llm::LlmProposer`] sends the
//! setting's prompts to an OpenAI-compatible chat-completions endpoint,
//! and [`symbolic::SymbolicProposer`] applies local genetic operators to
//! the sampled parents. Proposer failures never crash the evolution
//! loop: a transient problem becomes a typed rejection, and only an
//! endpoint that stays down beyond the retry budget aborts the run.

pub mod llm;
pub mod prompts;
pub mod symbolic;

pub use llm::{LlmEndpointConfig, LlmProposer};
pub use prompts::{render_prompts, PromptLibrary, PromptSettingDesc};
pub use symbolic::SymbolicProposer;

/// Everything a proposer needs for one iteration: sampled parents (with
/// scores), the optional strategy index, the version counter used in the
/// `heuristic_v{version}` instruction, and a seed for local randomness.
#[derive(Debug, Clone)]
pub struct ProposalRequest {
    /// `(canonical source, score)` pairs; between 1 and
    /// `functions_per_prompt` of them.
    pub parents: Vec<(String, f64)>,
    /// 1-based strategy index, when strategies are enabled.
    pub strategy_id: Option<u8>,
    pub version: u64,
    /// Seed for the symbolic backend; derived from the run seed and the
    /// iteration so proposals are reproducible and resumable.
    pub rng_seed: u64,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ProposeError {
    /// This proposal failed (bad completion, unparseable parent, ...);
    /// the run records it and moves on.
    #[error("proposal rejected: {0}")]
    Rejected(String),
    /// The backend is gone (endpoint down beyond retries); the run stops.
    #[error("proposer unavailable: {0}")]
    Unavailable(String),
}

/// A source of candidate heuristics.
pub trait Proposer {
    fn propose(&mut self, request: &ProposalRequest) -> Result<String, ProposeError>;

    /// Short name for logs and run summaries.
    fn name(&self) -> &'static str;
}

#[cfg(test)]
mod tests;
