//! Single-item allocation with the monotonicity fix.
//!
//! A candidate allocation rule maps a bid profile to n+1 scores; the
//! argmax names the winner, the last slot means "no sale". The fix scans
//! the winner's bid down a price grid and charges the lowest grid price
//! above which the winner always stays the argmax. That price depends
//! only on the other bids, so the fixed mechanism poses an own-bid
//! independent take-it-or-leave-it offer and is strategy-proof on the
//! grid for any rule whatsoever.

use smallvec::SmallVec;

use super::{argmax_lowest, MechanismOutcome};
use crate::dsl::{
    evaluate, DistributionHooks, EvalContext, EvalError, HeuristicProgram, Value,
    DEFAULT_STEP_BUDGET,
};

pub type ScoreVec = SmallVec<[f64; 8]>;

/// Anything that can produce the n+1 allocation scores, with a cheap way
/// to re-score after replacing a single bid (the fix probes thousands of
/// replacements per profile).
pub trait AllocationScores: Sync {
    fn n_bidders(&self) -> usize;

    fn scores(&self, bids: &[f64]) -> Result<ScoreVec, EvalError>;

    fn scores_with(&self, bids: &[f64], slot: usize, bid: f64) -> Result<ScoreVec, EvalError> {
        let mut probe: SmallVec<[f64; 8]> = SmallVec::from_slice(bids);
        probe[slot] = bid;
        self.scores(&probe)
    }
}

/// A `JointAllocation` DSL heuristic as an allocation rule.
pub struct DslJointRule<'a> {
    program: &'a HeuristicProgram,
    hooks: Option<&'a dyn DistributionHooks>,
    n_bidders: usize,
}

impl<'a> DslJointRule<'a> {
    pub fn new(
        program: &'a HeuristicProgram,
        hooks: Option<&'a dyn DistributionHooks>,
        n_bidders: usize,
    ) -> Self {
        Self { program, hooks, n_bidders }
    }
}

impl AllocationScores for DslJointRule<'_> {
    fn n_bidders(&self) -> usize {
        self.n_bidders
    }

    fn scores(&self, bids: &[f64]) -> Result<ScoreVec, EvalError> {
        let mut ctx = EvalContext::new()
            .bind(&self.program.params()[0], Value::vector(bids))
            .with_budget(DEFAULT_STEP_BUDGET);
        if let Some(hooks) = self.hooks {
            ctx = ctx.with_distribution(hooks);
        }
        let out = evaluate(self.program, &ctx)?;
        let vec = out
            .as_vector()
            .ok_or_else(|| EvalError::Shape("allocation heuristic must return a vector".into()))?;
        if vec.len() != self.n_bidders + 1 {
            return Err(EvalError::Shape(format!(
                "allocation heuristic returned {} scores for {} bidders (need n+1)",
                vec.len(),
                self.n_bidders
            )));
        }
        Ok(ScoreVec::from_slice(vec))
    }
}

/// A `PerBidderScore` heuristic lifted to the n+1 score form
/// `[h(b_1), ..., h(b_n), 0]`: the no-sale slot wins exactly when every
/// per-bidder score is negative. Scores over the price scan grid are
/// precomputed so each probe is a table lookup.
pub struct DslPerBidderRule<'a> {
    program: &'a HeuristicProgram,
    hooks: Option<&'a dyn DistributionHooks>,
    n_bidders: usize,
    grid_steps: usize,
    table: Vec<Result<f64, EvalError>>,
}

impl<'a> DslPerBidderRule<'a> {
    /// `epsilon` is the scan granularity; the table covers the grid
    /// {0, eps, ..., 1}.
    pub fn new(
        program: &'a HeuristicProgram,
        hooks: Option<&'a dyn DistributionHooks>,
        n_bidders: usize,
        epsilon: f64,
    ) -> Self {
        let grid_steps = steps_for(epsilon);
        let table = (0..=grid_steps)
            .map(|i| eval_per_bidder(program, hooks, i as f64 / grid_steps as f64))
            .collect();
        Self { program, hooks, n_bidders, grid_steps, table }
    }

    fn score_of(&self, bid: f64) -> Result<f64, EvalError> {
        let scaled = bid * self.grid_steps as f64;
        let idx = scaled.round();
        if idx >= 0.0 && idx <= self.grid_steps as f64 && idx / self.grid_steps as f64 == bid {
            self.table[idx as usize].clone()
        } else {
            eval_per_bidder(self.program, self.hooks, bid)
        }
    }
}

fn eval_per_bidder(
    program: &HeuristicProgram,
    hooks: Option<&dyn DistributionHooks>,
    bid: f64,
) -> Result<f64, EvalError> {
    let mut ctx = EvalContext::new()
        .bind(&program.params()[0], Value::Scalar(bid))
        .with_budget(DEFAULT_STEP_BUDGET);
    if let Some(hooks) = hooks {
        ctx = ctx.with_distribution(hooks);
    }
    let out = evaluate(program, &ctx)?;
    out.as_scalar()
        .ok_or_else(|| EvalError::Shape("per-bidder heuristic must return a scalar".into()))
}

impl AllocationScores for DslPerBidderRule<'_> {
    fn n_bidders(&self) -> usize {
        self.n_bidders
    }

    fn scores(&self, bids: &[f64]) -> Result<ScoreVec, EvalError> {
        let mut out = ScoreVec::with_capacity(bids.len() + 1);
        for bid in bids {
            out.push(self.score_of(*bid)?);
        }
        out.push(0.0);
        Ok(out)
    }

    fn scores_with(&self, bids: &[f64], slot: usize, bid: f64) -> Result<ScoreVec, EvalError> {
        let mut out = self.scores(bids)?;
        out[slot] = self.score_of(bid)?;
        Ok(out)
    }
}

/// The per-bidder adapter as a standalone operation:
/// `[h(b_1), ..., h(b_n), 0]`.
pub fn adapt_per_bidder(
    program: &HeuristicProgram,
    bids: &[f64],
    hooks: Option<&dyn DistributionHooks>,
) -> Result<ScoreVec, EvalError> {
    let mut out = ScoreVec::with_capacity(bids.len() + 1);
    for bid in bids {
        out.push(eval_per_bidder(program, hooks, *bid)?);
    }
    out.push(0.0);
    Ok(out)
}

pub(crate) fn steps_for(epsilon: f64) -> usize {
    assert!(epsilon > 0.0 && epsilon <= 1.0, "epsilon must be in (0, 1]");
    ((1.0 / epsilon).round() as usize).max(1)
}

/// Critical price for `winner` given the other bids: the smallest grid
/// price p in {0, eps, ..., 1} such that the winner is the argmax at
/// every probed bid above p. The descending scan stops at the highest
/// losing probe and returns one grid step above it; if the winner never
/// loses the price clamps to 0, and if they lose even at the top of the
/// grid there is no valid price (the caller sees it exceed any bid, so
/// no sale happens).
pub fn critical_price(
    rule: &dyn AllocationScores,
    bids: &[f64],
    winner: usize,
    epsilon: f64,
) -> Result<f64, EvalError> {
    let steps = steps_for(epsilon);
    for i in (0..=steps).rev() {
        let probe = i as f64 / steps as f64;
        let scores = rule.scores_with(bids, winner, probe)?;
        if argmax_lowest(&scores) != winner {
            return Ok((i + 1) as f64 / steps as f64);
        }
    }
    Ok(0.0)
}

/// Run the fixed single-item mechanism on one profile: evaluate the rule,
/// pick the argmax (no-sale slot included), then charge the critical
/// price if the winner can afford it and call off the sale otherwise.
pub fn solve_single_item(
    rule: &dyn AllocationScores,
    bids: &[f64],
    epsilon: f64,
) -> Result<MechanismOutcome, EvalError> {
    let n = bids.len();
    debug_assert_eq!(n, rule.n_bidders());
    let scores = rule.scores(bids)?;
    let slot = argmax_lowest(&scores);
    if slot == n {
        return Ok(MechanismOutcome::no_sale(n));
    }
    let price = critical_price(rule, bids, slot, epsilon)?;
    if price <= bids[slot] {
        let mut outcome = MechanismOutcome::no_sale(n);
        outcome.winners.push(slot);
        outcome.payments[slot] = price;
        Ok(outcome)
    } else {
        Ok(MechanismOutcome::no_sale(n))
    }
}
