//! Ironing of non-monotone virtual valuations.
//!
//! In quantile space the revenue curve is R(q) = q · F⁻¹(1 − q) and its
//! derivative is the virtual valuation at the corresponding value. Where
//! F is irregular the derivative is not monotone; replacing R by its
//! concave hull (the upper convex envelope) and differentiating yields
//! the ironed virtual valuation, which is nondecreasing in the value by
//! concavity of the hull.

use super::{DistError, MarginalDistribution};

/// Default number of quantile samples used to build the hull.
const HULL_GRID: usize = 4001;

/// Precomputed ironed virtual valuation for one marginal.
#[derive(Debug, Clone)]
pub struct IronedVirtualValuation {
    dist: MarginalDistribution,
    hull_q: Vec<f64>,
    hull_r: Vec<f64>,
}

impl IronedVirtualValuation {
    pub fn new(dist: &MarginalDistribution) -> Result<Self, DistError> {
        Self::with_grid(dist, HULL_GRID)
    }

    pub fn with_grid(dist: &MarginalDistribution, n_grid: usize) -> Result<Self, DistError> {
        dist.validate()?;
        let (lo, hi) = dist.support();
        if !(hi - lo).is_finite() || hi - lo <= 0.0 {
            return Err(DistError::Domain("degenerate support".into()));
        }
        if n_grid < 3 {
            return Err(DistError::Domain("hull grid needs at least 3 points".into()));
        }
        let n = n_grid - 1;
        let mut qs = Vec::with_capacity(n_grid);
        let mut rs = Vec::with_capacity(n_grid);
        for k in 0..=n {
            let q = k as f64 / n as f64;
            qs.push(q);
            rs.push(q * dist.quantile(1.0 - q));
        }
        // Upper hull by monotone chain: drop middle points that lie
        // below the chord of their neighbours.
        let mut hull: Vec<usize> = Vec::with_capacity(n_grid);
        for k in 0..=n {
            while hull.len() >= 2 {
                let i = hull[hull.len() - 2];
                let j = hull[hull.len() - 1];
                let cross = (qs[j] - qs[i]) * (rs[k] - rs[i]) - (qs[k] - qs[i]) * (rs[j] - rs[i]);
                if cross >= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(k);
        }
        let hull_q: Vec<f64> = hull.iter().map(|&k| qs[k]).collect();
        let hull_r: Vec<f64> = hull.iter().map(|&k| rs[k]).collect();
        Ok(Self { dist: dist.clone(), hull_q, hull_r })
    }

    /// Ironed virtual valuation at value `v`.
    pub fn value(&self, v: f64) -> Result<f64, DistError> {
        if !(0.0..=1.0).contains(&v) {
            return Err(DistError::OutOfSupport(v));
        }
        let q = (1.0 - self.dist.cdf_total(v)).clamp(0.0, 1.0);
        Ok(self.slope_at(q))
    }

    fn slope_at(&self, q: f64) -> f64 {
        // Find the hull segment containing q; its slope is the ironed
        // virtual valuation there.
        let n = self.hull_q.len();
        debug_assert!(n >= 2);
        let mut idx = match self
            .hull_q
            .binary_search_by(|x| x.partial_cmp(&q).unwrap())
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if idx >= n - 1 {
            idx = n - 2;
        }
        let dq = self.hull_q[idx + 1] - self.hull_q[idx];
        (self.hull_r[idx + 1] - self.hull_r[idx]) / dq
    }
}
