use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance allowed when checking that standardized inputs sit in the unit
/// cube; absorbs rounding from the standardization itself.
const UNIT_CUBE_SLACK: f64 = 1e-9;

/// A set of design points with their scalar responses.
///
/// Inputs are stored row-per-point and are expected on the unit cube; raw
/// data should be standardized first (see [`crate::persistence::read_dataset_csv`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    /// Builds a dataset from an `n x p` input matrix and a response vector of
    /// length `n`.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid("dataset must have at least one point and one input"));
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                what: "response length vs design rows",
                expected: x.nrows(),
                got: y.len(),
            });
        }
        for (i, v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "design entry {} is not finite",
                    i
                )));
            }
            if *v < -UNIT_CUBE_SLACK || *v > 1.0 + UNIT_CUBE_SLACK {
                return Err(Error::invalid(format!(
                    "design entry {v} lies outside the unit cube; standardize inputs first"
                )));
            }
        }
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("response value {v} is not finite")));
        }
        Ok(Dataset { x, y })
    }

    /// Builds a dataset from row slices.
    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("dataset must have at least one point"));
        }
        let p = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                what: "design row width",
                expected: p,
                got: bad.len(),
            });
        }
        let x = DMatrix::from_row_iterator(rows.len(), p, rows.iter().flatten().copied());
        Dataset::new(x, DVector::from_column_slice(y))
    }

    /// Number of design points.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of input dimensions.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// The `n x p` input matrix.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// The response vector.
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// The `i`-th design point as a slice-backed vector.
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Spread of the responses, `max(y) - min(y)`.
    pub fn y_range(&self) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in self.y.iter() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        hi - lo
    }
}

/// Per-column affine map taking raw inputs to the unit cube and back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationMap {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl StandardizationMap {
    /// Identity map for data already on the unit cube.
    pub fn identity(p: usize) -> Self {
        StandardizationMap {
            mins: vec![0.0; p],
            maxs: vec![1.0; p],
        }
    }

    /// Computes column-wise min and max of raw rows.
    pub fn from_raw_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("cannot standardize an empty dataset"));
        }
        let p = rows[0].len();
        let mut mins = vec![f64::INFINITY; p];
        let mut maxs = vec![f64::NEG_INFINITY; p];
        for r in rows {
            for j in 0..p {
                mins[j] = mins[j].min(r[j]);
                maxs[j] = maxs[j].max(r[j]);
            }
        }
        for j in 0..p {
            if maxs[j] - mins[j] <= 0.0 {
                return Err(Error::parse(
                    format!("input column {} has zero range and cannot be standardized", j + 1),
                    None,
                ));
            }
        }
        Ok(StandardizationMap { mins, maxs })
    }

    pub fn p(&self) -> usize {
        self.mins.len()
    }

    /// Maps one raw point to the unit cube.
    pub fn to_unit(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.p() {
            return Err(Error::DimensionMismatch {
                what: "standardization input width",
                expected: self.p(),
                got: raw.len(),
            });
        }
        Ok(raw
            .iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect())
    }

    /// Maps one unit-cube point back to raw coordinates.
    pub fn to_raw(&self, unit: &[f64]) -> Result<Vec<f64>> {
        if unit.len() != self.p() {
            return Err(Error::DimensionMismatch {
                what: "standardization input width",
                expected: self.p(),
                got: unit.len(),
            });
        }
        Ok(unit
            .iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect())
    }
}

/// Point prediction with its decomposition and uncertainty.
///
/// For stationary kriging models the trend carries the whole prediction:
/// `global == mean`, `local == 0`, and `v_at_query == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Posterior mean at the query.
    pub mean: f64,
    /// Smooth trend component of the mean.
    pub global: f64,
    /// Local adjustment component of the mean.
    pub local: f64,
    /// Posterior standard deviation at the query.
    pub sd: f64,
    /// Standardized local variance at the query.
    pub v_at_query: f64,
}

impl Prediction {
    /// Two-sided interval `mean ± z * sd` at the given coverage level.
    pub fn interval(&self, level: f64) -> Result<(f64, f64)> {
        let z = normal_quantile_two_sided(level)?;
        Ok((self.mean - z * self.sd, self.mean + z * self.sd))
    }
}

/// Standard normal quantile for a central interval of the given coverage,
/// e.g. 0.95 -> 1.959964.
pub fn normal_quantile_two_sided(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!(
            "coverage level must lie strictly between 0 and 1, got {level}"
        )));
    }
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(0.5 + level / 2.0))
}
