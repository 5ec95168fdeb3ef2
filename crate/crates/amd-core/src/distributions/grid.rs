//! The correlated two-bidder grid distribution.
//!
//! The unit square is divided into k×k cells of side 1/k with a uniform
//! density inside each cell. Row index i spans bidder 1's value band
//! [i·side, (i+1)·side) and column index j spans bidder 2's; cells are
//! half-open except the last so the density is defined on all of [0,1]².
//! The raw cell matrix need not be normalized: the constructor divides by
//! Z = cell_area · Σ entries.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DistError, MarginalDistribution, PiecewiseUniform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridJointFile", into = "GridJointFile")]
pub struct GridJointDistribution {
    cells: Vec<Vec<f64>>,
    side: f64,
    /// Normalizer: cell_area × Σ cells.
    z: f64,
    /// Cumulative cell probabilities in row-major order, for sampling.
    cumulative: Vec<f64>,
}

/// On-disk form: `{"cells": [[...k rows of k...]], "side": 1/k}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridJointFile {
    cells: Vec<Vec<f64>>,
    side: f64,
}

impl TryFrom<GridJointFile> for GridJointDistribution {
    type Error = DistError;

    fn try_from(file: GridJointFile) -> Result<Self, DistError> {
        GridJointDistribution::new(file.cells, file.side)
    }
}

impl From<GridJointDistribution> for GridJointFile {
    fn from(grid: GridJointDistribution) -> Self {
        GridJointFile { cells: grid.cells, side: grid.side }
    }
}

impl GridJointDistribution {
    pub fn new(cells: Vec<Vec<f64>>, side: f64) -> Result<Self, DistError> {
        let k = cells.len();
        if k == 0 || cells.iter().any(|row| row.len() != k) {
            return Err(DistError::Domain("cell matrix must be square".into()));
        }
        if (side * k as f64 - 1.0).abs() > 1e-9 {
            return Err(DistError::Domain(format!(
                "side {side} times {k} cells must cover [0, 1]"
            )));
        }
        if cells.iter().flatten().any(|m| *m < 0.0 || !m.is_finite()) {
            return Err(DistError::Domain("cell weights must be nonnegative".into()));
        }
        let total: f64 = cells.iter().flatten().sum();
        if total <= 0.0 {
            return Err(DistError::Domain("cell weights must have positive mass".into()));
        }
        let cell_area = side * side;
        let z = cell_area * total;
        let mut cumulative = Vec::with_capacity(k * k);
        let mut acc = 0.0;
        for row in &cells {
            for m in row {
                acc += m * cell_area / z;
                cumulative.push(acc);
            }
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(Self { cells, side, z, cumulative })
    }

    pub fn from_json(text: &str) -> Result<Self, DistError> {
        let file: GridJointFile = serde_json::from_str(text)
            .map_err(|e| DistError::Domain(format!("invalid grid file: {e}")))?;
        file.try_into()
    }

    pub fn validate(&self) -> Result<(), DistError> {
        // Reconstruct to re-run the invariants.
        Self::new(self.cells.clone(), self.side).map(|_| ())
    }

    pub fn id(&self) -> String {
        format!("grid_joint({}x{})", self.cells.len(), self.cells.len())
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn normalizer(&self) -> f64 {
        self.z
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    fn band(&self, v: f64) -> usize {
        let k = self.cells.len();
        ((v / self.side) as usize).min(k - 1)
    }

    /// Normalized joint density at (bidder 1 value, bidder 2 value).
    pub fn density(&self, b1: f64, b2: f64) -> Result<f64, DistError> {
        for v in [b1, b2] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DistError::OutOfSupport(v));
            }
        }
        Ok(self.cells[self.band(b1)][self.band(b2)] / self.z)
    }

    /// Marginal of bidder 1 (index 0) or bidder 2 (index 1).
    pub fn marginal(&self, bidder: usize) -> MarginalDistribution {
        let k = self.cells.len();
        let raw: Vec<f64> = match bidder {
            0 => self.cells.iter().map(|row| row.iter().sum()).collect(),
            1 => (0..k).map(|j| self.cells.iter().map(|row| row[j]).sum()).collect(),
            _ => panic!("grid joint has exactly two bidders"),
        };
        let breakpoints = (0..=k).map(|i| i as f64 * self.side).collect();
        let pw = PiecewiseUniform::new(breakpoints, raw)
            .expect("grid invariants guarantee a valid marginal");
        MarginalDistribution::PiecewiseUniform(pw)
    }

    /// One correlated profile: pick a cell by weight, then uniform within
    /// the cell. Three RNG draws per profile, in a fixed order.
    pub fn sample_profile<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        let k = self.cells.len();
        let u = rng.gen::<f64>();
        let cell = match self.cumulative.binary_search_by(|p| p.partial_cmp(&u).unwrap()) {
            Ok(i) => (i + 1).min(k * k - 1),
            Err(i) => i.min(k * k - 1),
        };
        let (i, j) = (cell / k, cell % k);
        let b1 = (i as f64 + rng.gen::<f64>()) * self.side;
        let b2 = (j as f64 + rng.gen::<f64>()) * self.side;
        [b1.min(1.0), b2.min(1.0)]
    }
}
