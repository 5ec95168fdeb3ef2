//! Independent brute-force verification of the design criteria.
//!
//! The oracle treats a fixed mechanism as an opaque outcome function and
//! checks strategy-proofness (max regret over grid deviations),
//! individual rationality, feasibility, and weak budget balance by
//! exhaustive grid sweeps. It never reuses the fixes' own reasoning:
//! utilities are recomputed from outcomes alone, so the checks stay an
//! independent route. [`exhaustive`] adds a small-space enumeration used
//! to validate the evolutionary engine against a known optimum.

pub mod exhaustive;

pub use exhaustive::{exhaustive_small_search, ExhaustiveError, RestrictedSpace};

use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dsl::{DistributionHooks, EvalError, HeuristicProgram};
use crate::mechanisms::{
    solve_single_item, AllocationScores, MechanismOutcome, RedistributionFixer,
    ReverseAggregation,
};

/// A mechanism under verification: bids in, full outcome out.
pub trait Mechanism {
    fn n_bidders(&self) -> usize;
    /// Feasibility bound: how many winners are allowed.
    fn max_winners(&self) -> usize;
    fn outcome(&self, bids: &[f64]) -> Result<MechanismOutcome, EvalError>;
}

/// Grid used for a verification sweep, recorded in the report so results
/// are reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub profile_step: f64,
    pub deviation_step: f64,
    pub n_bidders: usize,
}

/// Verification results over the full declared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub max_regret: f64,
    pub max_wbb_violation: f64,
    pub min_redistribution: f64,
    pub feasibility_ok: bool,
    pub grid: GridSpec,
}

fn levels(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

/// Precomputed outcomes for every profile on the grid, flattened in
/// row-major multi-index order.
struct OutcomeTable {
    levels: Vec<f64>,
    n: usize,
    winner_mask: Vec<u8>,
    payments: Vec<f64>,
    redistribution: Vec<f64>,
    max_winners_seen: usize,
}

impl OutcomeTable {
    fn build(mech: &dyn Mechanism, step: f64) -> Result<Self, EvalError> {
        let levels = levels(step);
        let n = mech.n_bidders();
        assert!(n <= 8, "the grid oracle addresses winners with an 8-bit mask");
        let n_profiles = levels.len().pow(n as u32);
        let mut winner_mask = vec![0u8; n_profiles];
        let mut payments = vec![0.0; n_profiles * n];
        let mut redistribution = vec![0.0; n_profiles * n];
        let mut max_winners_seen = 0;
        let mut profile = vec![0.0; n];
        let mut index = vec![0usize; n];
        for p in 0..n_profiles {
            for (d, &i) in index.iter().enumerate() {
                profile[d] = levels[i];
            }
            let outcome = mech.outcome(&profile)?;
            let mut mask = 0u8;
            for &w in &outcome.winners {
                mask |= 1 << w;
            }
            winner_mask[p] = mask;
            max_winners_seen = max_winners_seen.max(outcome.winners.len());
            payments[p * n..(p + 1) * n].copy_from_slice(&outcome.payments);
            redistribution[p * n..(p + 1) * n].copy_from_slice(&outcome.redistribution);
            for d in (0..n).rev() {
                index[d] += 1;
                if index[d] < levels.len() {
                    break;
                }
                index[d] = 0;
            }
        }
        Ok(Self { levels, n, winner_mask, payments, redistribution, max_winners_seen })
    }

    fn utility(&self, profile_idx: usize, bidder: usize, value: f64) -> f64 {
        let won = self.winner_mask[profile_idx] >> bidder & 1 == 1;
        let pay = self.payments[profile_idx * self.n + bidder];
        let red = self.redistribution[profile_idx * self.n + bidder];
        value * won as u8 as f64 - pay + red
    }
}

/// Max over profiles, bidders and grid deviations of the utility gain
/// from misreporting. Utility is value·(allocated) − payment +
/// redistribution; losers keep only their redistribution.
pub fn regret_grid(
    mech: &dyn Mechanism,
    profile_step: f64,
    deviation_step: f64,
) -> Result<f64, EvalError> {
    let table = OutcomeTable::build(mech, profile_step)?;
    let dev_levels = levels(deviation_step);
    let same_grid = dev_levels == table.levels;
    let n = table.n;
    let n_levels = table.levels.len();
    let n_profiles = table.winner_mask.len();
    let mut strides = vec![1usize; n];
    for d in (0..n.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * n_levels;
    }

    let mut max_regret = f64::NEG_INFINITY;
    let mut digits = vec![0usize; n];
    for p in 0..n_profiles {
        let mut rem = p;
        for d in 0..n {
            digits[d] = rem / strides[d];
            rem %= strides[d];
        }
        for bidder in 0..n {
            let value = table.levels[digits[bidder]];
            let truthful = table.utility(p, bidder, value);
            if same_grid {
                let base = p - digits[bidder] * strides[bidder];
                for dev in 0..n_levels {
                    let dev_idx = base + dev * strides[bidder];
                    let gain = table.utility(dev_idx, bidder, value) - truthful;
                    if gain > max_regret {
                        max_regret = gain;
                    }
                }
            } else {
                let mut profile: Vec<f64> =
                    digits.iter().map(|&i| table.levels[i]).collect();
                for &dev in &dev_levels {
                    profile[bidder] = dev;
                    let outcome = mech.outcome(&profile)?;
                    let won = outcome.winners.contains(&bidder);
                    let u = value * won as u8 as f64 - outcome.payments[bidder]
                        + outcome.redistribution[bidder];
                    if u - truthful > max_regret {
                        max_regret = u - truthful;
                    }
                }
                profile[bidder] = table.levels[digits[bidder]];
            }
        }
    }
    Ok(max_regret.max(0.0))
}

/// Max over the grid of (Σ redistribution − Σ payments), clamped at 0.
pub fn wbb_check(mech: &dyn Mechanism, profile_step: f64) -> Result<f64, EvalError> {
    let table = OutcomeTable::build(mech, profile_step)?;
    let n = table.n;
    let mut worst = 0.0f64;
    for p in 0..table.winner_mask.len() {
        let red: f64 = table.redistribution[p * n..(p + 1) * n].iter().sum();
        let pay: f64 = table.payments[p * n..(p + 1) * n].iter().sum();
        worst = worst.max(red - pay);
    }
    Ok(worst)
}

/// Minimum redistribution component over the grid, plus the feasibility
/// flag (never more winners than items).
pub fn ir_feasibility_check(
    mech: &dyn Mechanism,
    profile_step: f64,
) -> Result<(f64, bool), EvalError> {
    let table = OutcomeTable::build(mech, profile_step)?;
    let min_red = table.redistribution.iter().copied().fold(f64::INFINITY, f64::min);
    let feasible = table.max_winners_seen <= mech.max_winners();
    Ok((if min_red.is_finite() { min_red } else { 0.0 }, feasible))
}

/// All criteria in one pass over a shared outcome table.
pub fn verify_mechanism(
    mech: &dyn Mechanism,
    profile_step: f64,
    deviation_step: f64,
) -> Result<CriteriaReport, EvalError> {
    let max_regret = regret_grid(mech, profile_step, deviation_step)?;
    let max_wbb_violation = wbb_check(mech, profile_step)?;
    let (min_redistribution, feasibility_ok) = ir_feasibility_check(mech, profile_step)?;
    Ok(CriteriaReport {
        max_regret,
        max_wbb_violation,
        min_redistribution,
        feasibility_ok,
        grid: GridSpec { profile_step, deviation_step, n_bidders: mech.n_bidders() },
    })
}

/// The fixed single-item mechanism as an oracle subject.
pub struct FixedSingleItem<'a, R: AllocationScores> {
    pub rule: &'a R,
    pub n_bidders: usize,
    pub epsilon: f64,
}

impl<R: AllocationScores> Mechanism for FixedSingleItem<'_, R> {
    fn n_bidders(&self) -> usize {
        self.n_bidders
    }

    fn max_winners(&self) -> usize {
        1
    }

    fn outcome(&self, bids: &[f64]) -> Result<MechanismOutcome, EvalError> {
        solve_single_item(self.rule, bids, self.epsilon)
    }
}

/// The corrected (optionally reverse-fixed) redistribution mechanism as
/// an oracle subject. Deductions and add-backs are memoized per
/// (bidder, other-bids) key: on a profile grid the other-bids recur
/// constantly and the sweep is the expensive part.
pub struct FixedRedistribution<'a> {
    program: &'a HeuristicProgram,
    fixer: RedistributionFixer<'a>,
    n_bidders: usize,
    n_items: usize,
    reverse: Option<ReverseAggregation>,
    rebate_cache: RefCell<HashMap<Vec<u64>, (f64, Option<f64>)>>,
}

impl<'a> FixedRedistribution<'a> {
    pub fn new(
        program: &'a HeuristicProgram,
        hooks: Option<&'a dyn DistributionHooks>,
        n_bidders: usize,
        n_items: usize,
        grid_resolution: usize,
        reverse: Option<ReverseAggregation>,
    ) -> Self {
        let fixer =
            RedistributionFixer::new(program, hooks, n_bidders, n_items, grid_resolution);
        Self {
            program,
            fixer,
            n_bidders,
            n_items,
            reverse,
            rebate_cache: RefCell::new(HashMap::new()),
        }
    }
}

impl Mechanism for FixedRedistribution<'_> {
    fn n_bidders(&self) -> usize {
        self.n_bidders
    }

    fn max_winners(&self) -> usize {
        self.n_items
    }

    fn outcome(&self, bids: &[f64]) -> Result<MechanismOutcome, EvalError> {
        let _ = self.program;
        let (winners, payments) = crate::mechanisms::vcg_unit_demand(bids, self.n_items);
        let mut redistribution = Vec::with_capacity(self.n_bidders);
        let mut addback = vec![0.0; self.n_bidders];
        for i in 0..self.n_bidders {
            let mut key: Vec<u64> = Vec::with_capacity(self.n_bidders);
            key.push(i as u64);
            for (j, b) in bids.iter().enumerate() {
                if j != i {
                    key.push(b.to_bits());
                }
            }
            if let Some((fixed, add)) = self.rebate_cache.borrow().get(&key) {
                redistribution.push(*fixed);
                addback[i] = add.unwrap_or(0.0);
                continue;
            }
            let fixed_i = self.fixer.corrected_component(bids, i)?;
            let add_i = match self.reverse {
                Some(aggregation) => Some(self.fixer.reverse_addback_component(bids, i, aggregation)?),
                None => None,
            };
            self.rebate_cache.borrow_mut().insert(key, (fixed_i, add_i));
            redistribution.push(fixed_i);
            addback[i] = add_i.unwrap_or(0.0);
        }
        for (r, a) in redistribution.iter_mut().zip(addback) {
            *r += a;
        }
        Ok(MechanismOutcome {
            winners: winners.to_vec(),
            payments: payments.to_vec(),
            redistribution,
        })
    }
}

#[cfg(test)]
mod tests;
