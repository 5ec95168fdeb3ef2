//! Bidder value distributions on [0, 1].
//!
//! Three marginal families are supported: uniform, Beta(α, β), and
//! piecewise-uniform (the marginals of the correlated grid distribution).
//! The correlated 5×5 grid joint lives in [`grid`]. All sampling goes
//! through inverse-CDF transforms driven by a seeded ChaCha stream, so a
//! batch is fully determined by (seed, distribution, size).

mod beta;
mod grid;
mod ironing;

pub use grid::GridJointDistribution;
pub use ironing::IronedVirtualValuation;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::DistributionHooks;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum DistError {
    #[error("value {0} is outside the support")]
    OutOfSupport(f64),
    #[error("{0}")]
    Domain(String),
}

/// A univariate value distribution on a sub-interval of [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarginalDistribution {
    Uniform { lo: f64, hi: f64 },
    Beta { alpha: f64, beta: f64 },
    PiecewiseUniform(PiecewiseUniform),
}

impl MarginalDistribution {
    pub fn uniform01() -> Self {
        MarginalDistribution::Uniform { lo: 0.0, hi: 1.0 }
    }

    pub fn validate(&self) -> Result<(), DistError> {
        match self {
            MarginalDistribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi && *lo >= 0.0 && *hi <= 1.0) {
                    return Err(DistError::Domain(format!(
                        "uniform support [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1"
                    )));
                }
                Ok(())
            }
            MarginalDistribution::Beta { alpha, beta } => {
                if !(alpha.is_finite() && beta.is_finite() && *alpha > 0.0 && *beta > 0.0) {
                    return Err(DistError::Domain(
                        "beta parameters must be positive".into(),
                    ));
                }
                Ok(())
            }
            MarginalDistribution::PiecewiseUniform(pw) => pw.validate(),
        }
    }

    /// Short identifier used in sample batches and reports.
    pub fn id(&self) -> String {
        match self {
            MarginalDistribution::Uniform { lo, hi } => format!("uniform[{lo},{hi}]"),
            MarginalDistribution::Beta { alpha, beta } => format!("beta({alpha},{beta})"),
            MarginalDistribution::PiecewiseUniform(pw) => {
                format!("piecewise_uniform({} pieces)", pw.densities.len())
            }
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            MarginalDistribution::Uniform { lo, hi } => (*lo, *hi),
            MarginalDistribution::Beta { .. } => (0.0, 1.0),
            MarginalDistribution::PiecewiseUniform(pw) => {
                (pw.breakpoints[0], *pw.breakpoints.last().unwrap())
            }
        }
    }

    /// Density at `v`. Errors outside [0, 1]; within [0, 1] but outside
    /// the support the density is zero.
    pub fn pdf(&self, v: f64) -> Result<f64, DistError> {
        check_unit(v)?;
        Ok(self.pdf_total(v))
    }

    pub fn cdf(&self, v: f64) -> Result<f64, DistError> {
        check_unit(v)?;
        Ok(self.cdf_total(v))
    }

    pub fn survival(&self, v: f64) -> Result<f64, DistError> {
        Ok(1.0 - self.cdf(v)?)
    }

    /// Myerson's virtual valuation v - (1 - F(v)) / f(v).
    pub fn virtual_valuation(&self, v: f64) -> Result<f64, DistError> {
        let density = self.pdf(v)?;
        if density <= 0.0 {
            return Err(DistError::Domain(format!(
                "virtual valuation undefined where the density vanishes (v = {v})"
            )));
        }
        Ok(v - (1.0 - self.cdf_total(v)) / density)
    }

    /// Ironed virtual valuation: the derivative of the concave hull of
    /// the quantile-space revenue curve. Nondecreasing by construction.
    pub fn ironed_virtual_valuation(&self, v: f64) -> Result<f64, DistError> {
        let ironed = IronedVirtualValuation::new(self)?;
        ironed.value(v)
    }

    // Total variants (no support error): used by the DSL hooks and the
    // samplers, which must never fail on stray inputs.
    pub(crate) fn pdf_total(&self, v: f64) -> f64 {
        match self {
            MarginalDistribution::Uniform { lo, hi } => {
                if v >= *lo && v <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            MarginalDistribution::Beta { alpha, beta } => {
                if (0.0..=1.0).contains(&v) {
                    beta::pdf(v, *alpha, *beta)
                } else {
                    0.0
                }
            }
            MarginalDistribution::PiecewiseUniform(pw) => pw.pdf(v),
        }
    }

    pub(crate) fn cdf_total(&self, v: f64) -> f64 {
        match self {
            MarginalDistribution::Uniform { lo, hi } => ((v - lo) / (hi - lo)).clamp(0.0, 1.0),
            MarginalDistribution::Beta { alpha, beta } => {
                if v <= 0.0 {
                    0.0
                } else if v >= 1.0 {
                    1.0
                } else {
                    beta::regularized_incomplete(v, *alpha, *beta)
                }
            }
            MarginalDistribution::PiecewiseUniform(pw) => pw.cdf(v),
        }
    }

    /// Inverse CDF; `q` in [0, 1].
    pub fn quantile(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        match self {
            MarginalDistribution::Uniform { lo, hi } => lo + q * (hi - lo),
            MarginalDistribution::Beta { .. } => {
                // Bisection on the CDF: monotone, so this is exact to the
                // bracket width and fully deterministic.
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf_total(mid) < q {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
            MarginalDistribution::PiecewiseUniform(pw) => pw.quantile(q),
        }
    }
}

impl DistributionHooks for MarginalDistribution {
    fn pdf(&self, v: f64) -> f64 {
        self.pdf_total(v)
    }

    fn cdf(&self, v: f64) -> f64 {
        self.cdf_total(v)
    }
}

fn check_unit(v: f64) -> Result<(), DistError> {
    if !(0.0..=1.0).contains(&v) {
        Err(DistError::OutOfSupport(v))
    } else {
        Ok(())
    }
}

/// Piecewise-constant density. Cells are half-open except the last, so
/// the density is defined everywhere on the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseUniform {
    /// `k + 1` strictly increasing breakpoints spanning the support.
    pub breakpoints: Vec<f64>,
    /// `k` nonnegative densities, normalized to integrate to one.
    pub densities: Vec<f64>,
}

impl PiecewiseUniform {
    /// Build and normalize. The raw densities are scaled so the integral
    /// over the support is exactly one.
    pub fn new(breakpoints: Vec<f64>, densities: Vec<f64>) -> Result<Self, DistError> {
        let pw = Self { breakpoints, densities };
        pw.validate_shape()?;
        let mass: f64 = pw.mass();
        if mass <= 0.0 || !mass.is_finite() {
            return Err(DistError::Domain("piecewise density has no mass".into()));
        }
        let densities = pw.densities.iter().map(|d| d / mass).collect();
        let normalized = Self { breakpoints: pw.breakpoints, densities };
        Ok(normalized)
    }

    fn mass(&self) -> f64 {
        self.densities
            .iter()
            .zip(self.breakpoints.windows(2))
            .map(|(d, w)| d * (w[1] - w[0]))
            .sum()
    }

    fn validate_shape(&self) -> Result<(), DistError> {
        if self.breakpoints.len() != self.densities.len() + 1 || self.densities.is_empty() {
            return Err(DistError::Domain(
                "piecewise distribution needs k+1 breakpoints for k densities".into(),
            ));
        }
        if !self.breakpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(DistError::Domain("breakpoints must be strictly increasing".into()));
        }
        if self.breakpoints[0] < 0.0 || *self.breakpoints.last().unwrap() > 1.0 + 1e-12 {
            return Err(DistError::Domain("support must lie within [0, 1]".into()));
        }
        if self.densities.iter().any(|d| *d < 0.0 || !d.is_finite()) {
            return Err(DistError::Domain("densities must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), DistError> {
        self.validate_shape()?;
        if (self.mass() - 1.0).abs() > 1e-9 {
            return Err(DistError::Domain("piecewise density is not normalized".into()));
        }
        Ok(())
    }

    fn piece_of(&self, v: f64) -> Option<usize> {
        let last = self.densities.len() - 1;
        if v < self.breakpoints[0] || v > *self.breakpoints.last().unwrap() {
            return None;
        }
        for i in 0..last {
            if v < self.breakpoints[i + 1] {
                return Some(i);
            }
        }
        Some(last)
    }

    pub fn pdf(&self, v: f64) -> f64 {
        self.piece_of(v).map(|i| self.densities[i]).unwrap_or(0.0)
    }

    pub fn cdf(&self, v: f64) -> f64 {
        if v <= self.breakpoints[0] {
            return 0.0;
        }
        let mut acc = 0.0;
        for (i, w) in self.breakpoints.windows(2).enumerate() {
            if v >= w[1] {
                acc += self.densities[i] * (w[1] - w[0]);
            } else {
                acc += self.densities[i] * (v - w[0]);
                break;
            }
        }
        acc.min(1.0)
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        let mut acc = 0.0;
        for (i, w) in self.breakpoints.windows(2).enumerate() {
            let piece_mass = self.densities[i] * (w[1] - w[0]);
            if acc + piece_mass >= q {
                if self.densities[i] == 0.0 {
                    return w[1];
                }
                return w[0] + (q - acc) / self.densities[i];
            }
            acc += piece_mass;
        }
        *self.breakpoints.last().unwrap()
    }
}

/// A reproducible batch of bid profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub profiles: Vec<Vec<f64>>,
    pub seed: u64,
    pub distribution_id: String,
}

/// Where a setting's bids come from: i.i.d. draws from one marginal, or
/// the correlated grid joint (two bidders).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BidDistribution {
    Iid(MarginalDistribution),
    GridJoint(GridJointDistribution),
}

impl BidDistribution {
    pub fn id(&self) -> String {
        match self {
            BidDistribution::Iid(m) => m.id(),
            BidDistribution::GridJoint(g) => g.id(),
        }
    }

    pub fn validate(&self) -> Result<(), DistError> {
        match self {
            BidDistribution::Iid(m) => m.validate(),
            BidDistribution::GridJoint(g) => g.validate(),
        }
    }

    /// The marginal a per-bidder DSL context should bind, if the joint
    /// has a single shared one.
    pub fn shared_marginal(&self) -> Option<&MarginalDistribution> {
        match self {
            BidDistribution::Iid(m) => Some(m),
            BidDistribution::GridJoint(_) => None,
        }
    }

    pub fn sample(&self, n_bidders: usize, batch_size: usize, seed: u64) -> SampleBatch {
        assert!(batch_size >= 1, "batch_size must be at least 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profiles = match self {
            BidDistribution::Iid(marginal) => (0..batch_size)
                .map(|_| {
                    (0..n_bidders)
                        .map(|_| marginal.quantile(rng.gen::<f64>()))
                        .collect()
                })
                .collect(),
            BidDistribution::GridJoint(grid) => {
                assert_eq!(n_bidders, 2, "the grid joint is a two-bidder distribution");
                (0..batch_size).map(|_| grid.sample_profile(&mut rng).to_vec()).collect()
            }
        };
        SampleBatch { profiles, seed, distribution_id: self.id() }
    }
}

/// Seed for parallel worker `index`: base seed XOR the worker index, so
/// concurrent samplers draw from disjoint streams.
pub fn derive_worker_seed(base: u64, worker_index: u64) -> u64 {
    base ^ worker_index
}
