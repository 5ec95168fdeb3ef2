//! Island-model evolutionary search over heuristic programs.
//!
//! The database keeps scored programs in isolated islands, clustered by
//! rounded score. Each iteration samples a cluster (softmax over cluster
//! best scores at the current temperature, which decays linearly with
//! the number of registered programs), samples parents within the
//! cluster with a bias toward shorter programs, asks the proposer for a
//! candidate, evaluates it under the setting's fix, and registers the
//! result. Periodically the weaker half of the islands is wiped and
//! reseeded from the survivors' best programs.

mod database;
mod run;

pub use database::{Candidate, ProgramDatabase, RegisterError, ResetReport, ScoredProgram};
pub use run::{run, RunError, RunReport, RunState, StopCause, TraceRow};

use serde::{Deserialize, Serialize};

/// Reset clock: wall time matches long unattended runs, iteration count
/// makes runs reproducible and resumable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetPeriod {
    WallSeconds(u64),
    Iterations(u64),
}

fn default_num_islands() -> usize {
    10
}

fn default_reset_period() -> ResetPeriod {
    ResetPeriod::WallSeconds(3600)
}

fn default_temperature_init() -> f64 {
    0.1
}

fn default_decay_horizon() -> u64 {
    30_000
}

fn default_functions_per_prompt() -> usize {
    2
}

fn default_max_iterations() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    #[serde(default = "default_num_islands")]
    pub num_islands: usize,
    #[serde(default = "default_reset_period")]
    pub reset_period: ResetPeriod,
    #[serde(default = "default_temperature_init")]
    pub temperature_init: f64,
    #[serde(default)]
    pub temperature_floor: f64,
    #[serde(default = "default_decay_horizon")]
    pub decay_horizon: u64,
    #[serde(default = "default_functions_per_prompt")]
    pub functions_per_prompt: usize,
    /// Strategy texts cycled through the user prompts; `None` disables
    /// pre-set strategies and leaves variation to the proposer.
    #[serde(default)]
    pub strategies: Option<Vec<String>>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u64,
    /// Optional early stop once the best score reaches this value.
    #[serde(default)]
    pub target_score: Option<f64>,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            num_islands: default_num_islands(),
            reset_period: default_reset_period(),
            temperature_init: default_temperature_init(),
            temperature_floor: 0.0,
            decay_horizon: default_decay_horizon(),
            functions_per_prompt: default_functions_per_prompt(),
            strategies: Some(
                crate::proposers::PromptLibrary::embedded()
                    .strategies()
                    .to_vec(),
            ),
            max_iterations: default_max_iterations(),
            target_score: None,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_islands < 2 {
            return Err("need at least two islands".into());
        }
        if self.functions_per_prompt < 1 {
            return Err("functions_per_prompt must be at least 1".into());
        }
        if let Some(strategies) = &self.strategies {
            if strategies.is_empty() {
                return Err("strategy list must not be empty when present".into());
            }
        }
        Ok(())
    }

    /// Cluster-sampling temperature after `total_registered` programs:
    /// linear decay from the initial value to the floor over the decay
    /// horizon.
    pub fn temperature(&self, total_registered: u64) -> f64 {
        let decayed = self.temperature_init
            * (1.0 - total_registered as f64 / self.decay_horizon as f64);
        decayed.max(self.temperature_floor)
    }
}

/// Temperature with the default schedule: max(0, 0.1 (1 - n / 30000)).
pub fn temperature(total_registered: u64) -> f64 {
    EvolutionConfig::default().temperature(total_registered)
}

/// Cluster key: score truncated to three decimals (the fourth decimal
/// is dropped, so 0.5834 and 0.5835 share a cluster).
pub fn cluster_key(score: f64) -> i64 {
    (score * 1000.0).floor() as i64
}

#[cfg(test)]
mod tests;
