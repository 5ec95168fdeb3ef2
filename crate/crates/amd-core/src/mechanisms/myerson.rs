//! Myerson optimal-auction baselines.
//!
//! The winner is the bidder with the highest (optionally ironed) virtual
//! valuation, provided it is nonnegative; the payment is the critical
//! bid found by the same grid scan the heuristic pipeline uses, so the
//! two paths are directly comparable.

use super::single_item::{solve_single_item, AllocationScores, ScoreVec};
use super::MechanismOutcome;
use crate::distributions::{DistError, IronedVirtualValuation, MarginalDistribution};
use crate::dsl::EvalError;

enum VirtualFns {
    Plain(Vec<MarginalDistribution>),
    Ironed(Vec<IronedVirtualValuation>),
}

/// Per-bidder virtual valuations as an allocation rule. `marginals` has
/// either one entry shared by all bidders or one entry per bidder.
pub struct MyersonRule {
    fns: VirtualFns,
    n_bidders: usize,
}

impl MyersonRule {
    pub fn new(
        marginals: &[MarginalDistribution],
        n_bidders: usize,
        ironed: bool,
    ) -> Result<Self, DistError> {
        assert!(
            marginals.len() == 1 || marginals.len() == n_bidders,
            "need one shared marginal or one per bidder"
        );
        let expand = |k: usize| &marginals[if marginals.len() == 1 { 0 } else { k }];
        let fns = if ironed {
            let ironed = (0..n_bidders)
                .map(|k| IronedVirtualValuation::new(expand(k)))
                .collect::<Result<Vec<_>, _>>()?;
            VirtualFns::Ironed(ironed)
        } else {
            for m in marginals {
                m.validate()?;
            }
            VirtualFns::Plain((0..n_bidders).map(|k| expand(k).clone()).collect())
        };
        Ok(Self { fns, n_bidders })
    }

    /// Virtual valuation of `bidder` at `bid`; negative infinity where
    /// the density vanishes, so such bids can never win.
    fn value(&self, bidder: usize, bid: f64) -> f64 {
        match &self.fns {
            VirtualFns::Plain(ms) => {
                let m = &ms[bidder];
                let density = m.pdf_total(bid);
                if density <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    bid - (1.0 - m.cdf_total(bid)) / density
                }
            }
            VirtualFns::Ironed(fs) => fs[bidder].value(bid.clamp(0.0, 1.0)).unwrap_or(f64::NEG_INFINITY),
        }
    }
}

impl AllocationScores for MyersonRule {
    fn n_bidders(&self) -> usize {
        self.n_bidders
    }

    fn scores(&self, bids: &[f64]) -> Result<ScoreVec, EvalError> {
        let mut out = ScoreVec::with_capacity(bids.len() + 1);
        for (i, b) in bids.iter().enumerate() {
            out.push(self.value(i, *b));
        }
        out.push(0.0);
        Ok(out)
    }

    fn scores_with(&self, bids: &[f64], slot: usize, bid: f64) -> Result<ScoreVec, EvalError> {
        let mut out = self.scores(bids)?;
        out[slot] = self.value(slot, bid);
        Ok(out)
    }
}

/// Run the (optionally ironed) Myerson auction on one profile.
pub fn myerson_optimal(
    marginals: &[MarginalDistribution],
    bids: &[f64],
    ironed: bool,
    epsilon: f64,
) -> Result<MechanismOutcome, DistError> {
    let rule = MyersonRule::new(marginals, bids.len(), ironed)?;
    solve_single_item(&rule, bids, epsilon)
        .map_err(|e| DistError::Domain(format!("virtual valuation evaluation failed: {e}")))
}
