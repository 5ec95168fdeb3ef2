//! VCG redistribution and its fixing processes.
//!
//! The evolved heuristic maps each bidder's ascending-sorted other-bids
//! to a rebate. Three layers force the design criteria:
//!
//! 1. rebates clamp at zero (individual rationality);
//! 2. when the rebate total exceeds the collected VCG payments, the
//!    waterfilling pass zeroes the smallest rebates and deducts the rest
//!    of the overflow evenly from the others, so the total matches the
//!    payments exactly;
//! 3. the waterfilling deduction at a profile depends on the bidder's
//!    own bid, which would break strategy-proofness, so the corrected
//!    fix instead deducts the *maximum* deduction over a grid of the
//!    bidder's possible bids — an own-bid independent quantity.
//!
//! The optional reverse pass adds back a share of the surplus that the
//! corrected fix leaves on the table, aggregated over the same grid to
//! stay own-bid independent.

use smallvec::SmallVec;

use super::vcg::{vcg_total_payment, vcg_unit_demand};
use super::MechanismOutcome;
use crate::dsl::{
    evaluate, DistributionHooks, EvalContext, EvalError, HeuristicProgram, Value,
    DEFAULT_STEP_BUDGET,
};

/// Aggregation for the reverse-waterfilling add-back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReverseAggregation {
    Max,
    Min,
}

/// Evenly deduct any rebate overflow above `payment_total`.
///
/// If the rebates already fit the budget they pass through unchanged.
/// Otherwise entries are zeroed from the smallest up until the remaining
/// overflow can be split evenly among the rest; the output then sums to
/// exactly the payment total and stays within [0, input] componentwise.
pub fn waterfill(redistri: &[f64], payment_total: f64) -> SmallVec<[f64; 8]> {
    let n = redistri.len();
    let total: f64 = redistri.iter().sum();
    let mut overflow = total - payment_total;
    if overflow < 0.0 {
        return SmallVec::from_slice(redistri);
    }
    let mut order: SmallVec<[usize; 8]> = (0..n).collect();
    order.sort_by(|&a, &b| redistri[a].total_cmp(&redistri[b]));
    let mut sorted: SmallVec<[f64; 8]> = order.iter().map(|&i| redistri[i]).collect();
    for j in 0..n {
        if sorted[j] * (n - j) as f64 > overflow {
            let per_bidder = overflow / (n - j) as f64;
            for v in sorted[j..].iter_mut() {
                *v = (*v - per_bidder).max(0.0);
            }
            break;
        } else {
            overflow -= sorted[j];
            sorted[j] = 0.0;
        }
    }
    let mut out: SmallVec<[f64; 8]> = SmallVec::from_elem(0.0, n);
    for (k, &i) in order.iter().enumerate() {
        out[i] = sorted[k];
    }
    out
}

/// Rebate vector before any fix: component i is the heuristic evaluated
/// on the ascending-sorted bids of everyone but i.
pub fn redistribution_vector(
    program: &HeuristicProgram,
    bids: &[f64],
    hooks: Option<&dyn DistributionHooks>,
) -> Result<Vec<f64>, EvalError> {
    let mut out = Vec::with_capacity(bids.len());
    for i in 0..bids.len() {
        out.push(eval_rebate(program, hooks, &sorted_others(bids, i))?);
    }
    Ok(out)
}

fn sorted_others(bids: &[f64], skip: usize) -> SmallVec<[f64; 8]> {
    let mut others: SmallVec<[f64; 8]> = SmallVec::with_capacity(bids.len() - 1);
    for (j, b) in bids.iter().enumerate() {
        if j != skip {
            others.push(*b);
        }
    }
    others.sort_unstable_by(|a, b| a.total_cmp(b));
    others
}

fn eval_rebate(
    program: &HeuristicProgram,
    hooks: Option<&dyn DistributionHooks>,
    others_sorted: &[f64],
) -> Result<f64, EvalError> {
    let mut ctx = EvalContext::new()
        .bind(&program.params()[0], Value::vector(others_sorted))
        .with_budget(DEFAULT_STEP_BUDGET);
    if let Some(hooks) = hooks {
        ctx = ctx.with_distribution(hooks);
    }
    evaluate(program, &ctx)?
        .as_scalar()
        .ok_or_else(|| EvalError::Shape("redistribution heuristic must return a scalar".into()))
}

/// Precomputed machinery for fixing one heuristic in one setting.
pub struct RedistributionFixer<'a> {
    program: &'a HeuristicProgram,
    hooks: Option<&'a dyn DistributionHooks>,
    n_bidders: usize,
    n_items: usize,
    grid: Vec<f64>,
}

impl<'a> RedistributionFixer<'a> {
    pub fn new(
        program: &'a HeuristicProgram,
        hooks: Option<&'a dyn DistributionHooks>,
        n_bidders: usize,
        n_items: usize,
        grid_resolution: usize,
    ) -> Self {
        assert!(n_items < n_bidders);
        assert!(grid_resolution >= 2);
        let grid = (0..grid_resolution)
            .map(|i| i as f64 / (grid_resolution - 1) as f64)
            .collect();
        Self { program, hooks, n_bidders, n_items, grid }
    }

    /// Rebate clamped at zero, the individual-rationality floor.
    fn rebate(&self, others_sorted: &[f64]) -> Result<f64, EvalError> {
        Ok(eval_rebate(self.program, self.hooks, others_sorted)?.max(0.0))
    }


    /// The own-bid independent deduction for bidder i: the waterfilling
    /// fix value at component i, maximized over the grid of i's possible
    /// bids, with VCG payments recomputed at every probe.
    fn deduction(&self, bids: &[f64], bidder: usize, own_rebate: f64) -> Result<f64, EvalError> {
        let n = self.n_bidders;
        let mut probe: SmallVec<[f64; 8]> = SmallVec::from_slice(bids);
        let mut worst = 0.0f64;
        let mut rebates: SmallVec<[f64; 8]> = SmallVec::from_elem(0.0, n);
        for &b in &self.grid {
            probe[bidder] = b;
            for j in 0..n {
                rebates[j] = if j == bidder {
                    own_rebate
                } else {
                    self.rebate(&sorted_others(&probe, j))?
                };
            }
            let payment_total = vcg_total_payment(&probe, self.n_items);
            let fixed = waterfill(&rebates, payment_total);
            worst = worst.max(own_rebate - fixed[bidder]);
        }
        Ok(worst)
    }

    /// One bidder's corrected rebate: own rebate minus the maximal
    /// deduction, floored at zero. Depends only on the other bids.
    pub fn corrected_component(&self, bids: &[f64], bidder: usize) -> Result<f64, EvalError> {
        let own = self.rebate(&sorted_others(bids, bidder))?;
        let deduction = self.deduction(bids, bidder, own)?;
        Ok((own - deduction).max(0.0))
    }

    /// Corrected fix: VCG winners and payments at the true bids plus the
    /// rebate vector after subtracting each bidder's maximal deduction,
    /// floored at zero.
    pub fn corrected(&self, bids: &[f64]) -> Result<MechanismOutcome, EvalError> {
        debug_assert_eq!(bids.len(), self.n_bidders);
        let (winners, payments) = vcg_unit_demand(bids, self.n_items);
        let mut redistribution = Vec::with_capacity(self.n_bidders);
        for i in 0..self.n_bidders {
            redistribution.push(self.corrected_component(bids, i)?);
        }
        Ok(MechanismOutcome {
            winners: winners.to_vec(),
            payments: payments.to_vec(),
            redistribution,
        })
    }

    /// One bidder's reverse-waterfilling add-back: the post-waterfilling
    /// surplus share `surplus / n`, aggregated over the grid of the
    /// bidder's possible bids. Own-bid independent like the deduction.
    pub fn reverse_addback_component(
        &self,
        bids: &[f64],
        bidder: usize,
        aggregation: ReverseAggregation,
    ) -> Result<f64, EvalError> {
        let n = self.n_bidders;
        let own = self.rebate(&sorted_others(bids, bidder))?;
        let mut probe: SmallVec<[f64; 8]> = SmallVec::from_slice(bids);
        let mut rebates: SmallVec<[f64; 8]> = SmallVec::from_elem(0.0, n);
        let mut agg: Option<f64> = None;
        for &b in &self.grid {
            probe[bidder] = b;
            for j in 0..n {
                rebates[j] =
                    if j == bidder { own } else { self.rebate(&sorted_others(&probe, j))? };
            }
            let payment_total = vcg_total_payment(&probe, self.n_items);
            let fixed = waterfill(&rebates, payment_total);
            let surplus = (payment_total - fixed.iter().sum::<f64>()).max(0.0);
            let share = surplus / n as f64;
            agg = Some(match (agg, aggregation) {
                (None, _) => share,
                (Some(a), ReverseAggregation::Max) => a.max(share),
                (Some(a), ReverseAggregation::Min) => a.min(share),
            });
        }
        Ok(agg.unwrap_or(0.0))
    }

    /// Add-backs for every bidder.
    pub fn reverse_addback(
        &self,
        bids: &[f64],
        aggregation: ReverseAggregation,
    ) -> Result<Vec<f64>, EvalError> {
        (0..self.n_bidders)
            .map(|i| self.reverse_addback_component(bids, i, aggregation))
            .collect()
    }
}

/// One-shot corrected fix (see [`RedistributionFixer::corrected`]).
pub fn corrected_fix(
    program: &HeuristicProgram,
    bids: &[f64],
    n_items: usize,
    grid_resolution: usize,
    hooks: Option<&dyn DistributionHooks>,
) -> Result<MechanismOutcome, EvalError> {
    RedistributionFixer::new(program, hooks, bids.len(), n_items, grid_resolution)
        .corrected(bids)
}

/// Reverse-waterfilling on top of a corrected outcome: adds the
/// aggregated surplus share to each bidder's rebate. The add-back is own
/// bid independent by construction and nonnegative, so SP, IR and
/// feasibility survive; weak budget balance is guaranteed for the `Min`
/// aggregation and measured, not assumed, for `Max`.
pub fn reverse_waterfill(
    outcome: &MechanismOutcome,
    program: &HeuristicProgram,
    bids: &[f64],
    n_items: usize,
    grid_resolution: usize,
    aggregation: ReverseAggregation,
    hooks: Option<&dyn DistributionHooks>,
) -> Result<MechanismOutcome, EvalError> {
    let fixer =
        RedistributionFixer::new(program, hooks, bids.len(), n_items, grid_resolution);
    let addback = fixer.reverse_addback(bids, aggregation)?;
    let mut out = outcome.clone();
    for (r, a) in out.redistribution.iter_mut().zip(addback) {
        *r += a;
    }
    Ok(out)
}
