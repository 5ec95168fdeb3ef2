//! Tabulated goal functions for distillation.
//!
//! A goal function stands in for a trained network: a table of outputs on
//! a rectangular input grid, queried by multilinear interpolation. Tables
//! load from JSON: `{"grid": [[...dim1...], ...], "values": <nested
//! array>, "metric_hint": "L1"|"L2"}`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum GoalError {
    #[error("goal function file is invalid: {0}")]
    Parse(String),
    #[error("{0}")]
    Shape(String),
}

/// Distance metric between heuristic and goal outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "L1")]
    L1,
    #[serde(rename = "L2")]
    L2,
}

impl Metric {
    pub fn distance(&self, a: f64, b: f64) -> f64 {
        match self {
            Metric::L1 => (a - b).abs(),
            Metric::L2 => (a - b) * (a - b),
        }
    }
}

/// Tabulated input→output mapping with multilinear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GoalFile", into = "GoalFile")]
pub struct GoalFunction {
    grids: Vec<Vec<f64>>,
    values: Vec<f64>,
    metric_hint: Metric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GoalFile {
    grid: Vec<Vec<f64>>,
    values: serde_json::Value,
    metric_hint: Metric,
}

impl TryFrom<GoalFile> for GoalFunction {
    type Error = GoalError;

    fn try_from(file: GoalFile) -> Result<Self, GoalError> {
        let mut values = Vec::new();
        flatten(&file.values, &file.grid, 0, &mut values)?;
        GoalFunction::new(file.grid, values, file.metric_hint)
    }
}

impl From<GoalFunction> for GoalFile {
    fn from(goal: GoalFunction) -> Self {
        let values = nest(&goal.values, &goal.grids, 0);
        GoalFile { grid: goal.grids, values, metric_hint: goal.metric_hint }
    }
}

fn flatten(
    value: &serde_json::Value,
    grids: &[Vec<f64>],
    dim: usize,
    out: &mut Vec<f64>,
) -> Result<(), GoalError> {
    if dim == grids.len() {
        let x = value
            .as_f64()
            .ok_or_else(|| GoalError::Parse(format!("expected a number, got {value}")))?;
        out.push(x);
        return Ok(());
    }
    let arr = value
        .as_array()
        .ok_or_else(|| GoalError::Parse(format!("expected a nested array at depth {dim}")))?;
    if arr.len() != grids[dim].len() {
        return Err(GoalError::Shape(format!(
            "values dimension {dim} has length {}, grid has {}",
            arr.len(),
            grids[dim].len()
        )));
    }
    for item in arr {
        flatten(item, grids, dim + 1, out)?;
    }
    Ok(())
}

fn nest(values: &[f64], grids: &[Vec<f64>], dim: usize) -> serde_json::Value {
    if dim == grids.len() {
        debug_assert_eq!(values.len(), 1);
        return serde_json::json!(values[0]);
    }
    let stride: usize = grids[dim + 1..].iter().map(Vec::len).product();
    let items: Vec<serde_json::Value> = (0..grids[dim].len())
        .map(|i| nest(&values[i * stride..(i + 1) * stride], grids, dim + 1))
        .collect();
    serde_json::Value::Array(items)
}

impl GoalFunction {
    pub fn new(
        grids: Vec<Vec<f64>>,
        values: Vec<f64>,
        metric_hint: Metric,
    ) -> Result<Self, GoalError> {
        let goal = Self { grids, values, metric_hint };
        goal.validate()?;
        Ok(goal)
    }

    /// Build a table by evaluating `f` at every grid point (row-major).
    pub fn tabulate<F: FnMut(&[f64]) -> f64>(
        grids: Vec<Vec<f64>>,
        metric_hint: Metric,
        mut f: F,
    ) -> Result<Self, GoalError> {
        let dims: Vec<usize> = grids.iter().map(Vec::len).collect();
        let total: usize = dims.iter().product();
        let mut values = Vec::with_capacity(total);
        let mut point = vec![0.0; grids.len()];
        let mut index = vec![0usize; grids.len()];
        for _ in 0..total {
            for (d, &i) in index.iter().enumerate() {
                point[d] = grids[d][i];
            }
            values.push(f(&point));
            for d in (0..index.len()).rev() {
                index[d] += 1;
                if index[d] < dims[d] {
                    break;
                }
                index[d] = 0;
            }
        }
        Self::new(grids, values, metric_hint)
    }

    pub fn from_json(text: &str) -> Result<Self, GoalError> {
        let file: GoalFile =
            serde_json::from_str(text).map_err(|e| GoalError::Parse(e.to_string()))?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        let file: GoalFile = self.clone().into();
        serde_json::to_string(&file).expect("goal serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), GoalError> {
        if self.grids.is_empty() {
            return Err(GoalError::Shape("goal needs at least one input dimension".into()));
        }
        for (d, grid) in self.grids.iter().enumerate() {
            if grid.len() < 2 {
                return Err(GoalError::Shape(format!("grid dimension {d} needs >= 2 points")));
            }
            if !grid.windows(2).all(|w| w[0] < w[1]) {
                return Err(GoalError::Shape(format!(
                    "grid dimension {d} must be strictly increasing"
                )));
            }
        }
        let expected: usize = self.grids.iter().map(Vec::len).product();
        if self.values.len() != expected {
            return Err(GoalError::Shape(format!(
                "table has {} values, grid shape needs {expected}",
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(GoalError::Shape("table values must be finite".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.grids.len()
    }

    pub fn metric_hint(&self) -> Metric {
        self.metric_hint
    }

    /// Multilinear interpolation at `x`; coordinates clamp to the grid
    /// range.
    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.grids.len(), "goal input dimension mismatch");
        let d = self.grids.len();
        // Cell index and intra-cell weight per dimension.
        let mut lo_idx = vec![0usize; d];
        let mut weight = vec![0.0f64; d];
        for (dim, grid) in self.grids.iter().enumerate() {
            let v = x[dim].clamp(grid[0], *grid.last().unwrap());
            let i = match grid.binary_search_by(|g| g.partial_cmp(&v).unwrap()) {
                Ok(i) => i.min(grid.len() - 2),
                Err(i) => i.saturating_sub(1).min(grid.len() - 2),
            };
            lo_idx[dim] = i;
            weight[dim] = (v - grid[i]) / (grid[i + 1] - grid[i]);
        }
        let strides: Vec<usize> = (0..d)
            .map(|dim| self.grids[dim + 1..].iter().map(Vec::len).product())
            .collect();
        let mut acc = 0.0;
        for corner in 0u32..(1 << d) {
            let mut w = 1.0;
            let mut offset = 0usize;
            for dim in 0..d {
                if corner >> dim & 1 == 1 {
                    w *= weight[dim];
                    offset += (lo_idx[dim] + 1) * strides[dim];
                } else {
                    w *= 1.0 - weight[dim];
                    offset += lo_idx[dim] * strides[dim];
                }
            }
            acc += w * self.values[offset];
        }
        acc
    }
}
