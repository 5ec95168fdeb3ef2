//! Auction settings and fixing processes.
//!
//! A setting pairs an environment (bidders, items, value distribution)
//! with the post-processing fix that turns an arbitrary candidate
//! heuristic into a mechanism satisfying feasibility, strategy-proofness,
//! individual rationality and weak budget balance:
//!
//! * single-item allocation heuristics get the monotonicity fix — the
//!   winner's payment is raised to the lowest price above which they
//!   always win ([`single_item`]);
//! * redistribution heuristics ride on VCG payments and get the
//!   waterfilling fix plus the own-bid-independent correction, with an
//!   optional reverse pass that returns part of the leftover surplus
//!   ([`redistribution`]).
//!
//! [`myerson`] provides the optimal-auction baselines the evolved
//! mechanisms are compared against.

pub mod goal;
pub mod myerson;
pub mod redistribution;
pub mod single_item;
pub mod vcg;

pub use goal::{GoalFunction, Metric};
pub use myerson::myerson_optimal;
pub use redistribution::{
    corrected_fix, redistribution_vector, reverse_waterfill, waterfill, RedistributionFixer,
    ReverseAggregation,
};
pub use single_item::{
    adapt_per_bidder, critical_price, solve_single_item, AllocationScores, DslJointRule,
    DslPerBidderRule, ScoreVec,
};
pub use vcg::vcg_unit_demand;

use serde::{Deserialize, Serialize};

use crate::distributions::{BidDistribution, DistError, MarginalDistribution};
use crate::dsl::{HeuristicSignature, SignatureKind};

pub const DEFAULT_EPSILON: f64 = 0.001;
pub const DEFAULT_FIX_GRID_RESOLUTION: usize = 101;

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_fix_grid_resolution() -> usize {
    DEFAULT_FIX_GRID_RESOLUTION
}

/// How (and whether) the reverse-waterfilling pass aggregates the
/// per-probe surplus share over a bidder's possible bids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReverseFixMode {
    #[default]
    Off,
    /// Take the maximum over probed bids.
    Max,
    /// Conservative variant: take the minimum, which keeps weak budget
    /// balance at every realized profile.
    Min,
}

/// Declarative description of one auction design problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SettingSpec {
    /// Single item, joint allocation heuristic, revenue objective.
    SingleItemRevenue {
        n_bidders: usize,
        distribution: BidDistribution,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    /// Single item with a per-bidder score heuristic sharing one marginal
    /// (several marginals mean the score averages over all of them).
    RediscoveryPerBidder {
        n_bidders: usize,
        distributions: Vec<MarginalDistribution>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    /// Multi-unit unit-demand VCG with an evolved redistribution function.
    VcgRedistribution {
        n_bidders: usize,
        n_items: usize,
        distribution: MarginalDistribution,
        #[serde(default = "default_fix_grid_resolution")]
        fix_grid_resolution: usize,
        #[serde(default)]
        reverse_fix: ReverseFixMode,
    },
    /// Distillation: score is the negated distance to a tabulated goal
    /// function on inputs drawn from the inner setting.
    Distillation { inner: Box<SettingSpec>, goal: GoalFunction, metric: Metric },
}

impl SettingSpec {
    pub fn validate(&self) -> Result<(), DistError> {
        match self {
            SettingSpec::SingleItemRevenue { n_bidders, distribution, epsilon } => {
                if *n_bidders < 1 {
                    return Err(DistError::Domain("need at least one bidder".into()));
                }
                if *epsilon <= 0.0 {
                    return Err(DistError::Domain("epsilon must be positive".into()));
                }
                if matches!(distribution, BidDistribution::GridJoint(_)) && *n_bidders != 2 {
                    return Err(DistError::Domain(
                        "the grid joint distribution is defined for two bidders".into(),
                    ));
                }
                distribution.validate()
            }
            SettingSpec::RediscoveryPerBidder { n_bidders, distributions, epsilon } => {
                if *n_bidders < 1 {
                    return Err(DistError::Domain("need at least one bidder".into()));
                }
                if *epsilon <= 0.0 {
                    return Err(DistError::Domain("epsilon must be positive".into()));
                }
                if distributions.is_empty() {
                    return Err(DistError::Domain(
                        "rediscovery needs at least one distribution".into(),
                    ));
                }
                distributions.iter().try_for_each(MarginalDistribution::validate)
            }
            SettingSpec::VcgRedistribution {
                n_bidders,
                n_items,
                distribution,
                fix_grid_resolution,
                ..
            } => {
                if *n_items < 1 || n_items >= n_bidders {
                    return Err(DistError::Domain(
                        "redistribution needs 1 <= n_items < n_bidders so the Clarke threshold exists"
                            .into(),
                    ));
                }
                if *fix_grid_resolution < 2 {
                    return Err(DistError::Domain("fix grid needs at least 2 points".into()));
                }
                distribution.validate()
            }
            SettingSpec::Distillation { inner, goal, .. } => {
                inner.validate()?;
                goal.validate().map_err(|e| DistError::Domain(e.to_string()))?;
                let expected_dim = match inner.signature().kind {
                    SignatureKind::PerBidderScore => 1,
                    SignatureKind::Redistribution => inner.n_bidders() - 1,
                    SignatureKind::JointAllocation => {
                        return Err(DistError::Domain(
                            "distillation targets scalar-output heuristics".into(),
                        ))
                    }
                };
                if goal.input_dim() != expected_dim {
                    return Err(DistError::Domain(format!(
                        "goal function has {} input dimensions, setting provides {}",
                        goal.input_dim(),
                        expected_dim
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn n_bidders(&self) -> usize {
        match self {
            SettingSpec::SingleItemRevenue { n_bidders, .. }
            | SettingSpec::RediscoveryPerBidder { n_bidders, .. }
            | SettingSpec::VcgRedistribution { n_bidders, .. } => *n_bidders,
            SettingSpec::Distillation { inner, .. } => inner.n_bidders(),
        }
    }

    /// The heuristic shape this setting evolves.
    pub fn signature(&self) -> HeuristicSignature {
        match self {
            SettingSpec::SingleItemRevenue { .. } => HeuristicSignature::joint_allocation(),
            SettingSpec::RediscoveryPerBidder { .. } => HeuristicSignature::per_bidder_score(),
            SettingSpec::VcgRedistribution { .. } => HeuristicSignature::redistribution(),
            SettingSpec::Distillation { inner, .. } => inner.signature(),
        }
    }
}

/// Allocation, payments and redistribution for one bid profile after the
/// setting's fix has been applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    /// Winning bidder indices; at most `n_items` of them.
    pub winners: Vec<usize>,
    /// Per-bidder payments; zero for losers.
    pub payments: Vec<f64>,
    /// Per-bidder redistribution; all zero in revenue settings.
    pub redistribution: Vec<f64>,
}

impl MechanismOutcome {
    pub fn no_sale(n_bidders: usize) -> Self {
        Self {
            winners: Vec::new(),
            payments: vec![0.0; n_bidders],
            redistribution: vec![0.0; n_bidders],
        }
    }

    pub fn total_payment(&self) -> f64 {
        self.payments.iter().sum()
    }

    pub fn total_redistribution(&self) -> f64 {
        self.redistribution.iter().sum()
    }

    pub fn is_winner(&self, bidder: usize) -> bool {
        self.winners.contains(&bidder)
    }
}

/// Index of the largest component, ties resolving to the lowest index.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
