use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Condition estimates at or above this value are treated as overflow when
/// deciding whether a factorization is trustworthy.
pub const COND_OVERFLOW: f64 = 1e12;

/// Relative diagonal boosts tried, in order, when a factorization fails.
const JITTER_LADDER: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

/// How [`safe_cholesky`] responds to a failed factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JitterPolicy {
    /// Retry with growing relative diagonal boosts before giving up.
    Ladder,
    /// Fail immediately if the matrix is not numerically positive definite.
    Strict,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy::Ladder
    }
}

/// Squared-exponential correlation across active dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix(DMatrix<f64>);

impl CorrMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Correlations between one query point and every design point.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrVector(DVector<f64>);

impl CorrVector {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

/// Summary of how densely a design fills the input space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignStats {
    /// Harmonic-style average inter-point distance.
    pub d_avg: f64,
    /// Smallest roughness at which correlation decays to 0.01 at `d_avg`.
    pub alpha_lower: f64,
}

/// Gaussian correlation `exp(-sum_j scales_j * h_j^2)` for a separation `h`.
pub fn gaussian_corr(h: &[f64], scales: &[f64]) -> Result<f64> {
    check_scales(scales, h.len())?;
    if let Some(v) = h.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("separation entry {v} is not finite")));
    }
    Ok((-weighted_sq_dist_offset(h, scales)).exp())
}

fn check_scales(scales: &[f64], p: usize) -> Result<()> {
    if scales.len() != p {
        return Err(Error::DimensionMismatch {
            what: "kernel scales vs input dimension",
            expected: p,
            got: scales.len(),
        });
    }
    for s in scales {
        if !s.is_finite() || *s < 0.0 {
            return Err(Error::invalid(format!(
                "kernel scale {s} must be finite and nonnegative"
            )));
        }
    }
    Ok(())
}

fn check_points_finite(x: &DMatrix<f64>) -> Result<()> {
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("design entry {v} is not finite")));
    }
    Ok(())
}

/// Copies a point matrix into row-major storage so that per-point slices are
/// contiguous in the pair loops below.
pub(crate) fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, p) = x.shape();
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        for j in 0..p {
            out[i * p + j] = x[(i, j)];
        }
    }
    out
}

fn weighted_sq_dist_offset(h: &[f64], scales: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (hj, sj) in h.iter().zip(scales) {
        acc += sj * hj * hj;
    }
    acc
}

/// Weighted squared distance `sum_j scales_j * (a_j - b_j)^2`.
pub(crate) fn weighted_sq_dist(a: &[f64], b: &[f64], scales: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..scales.len() {
        let d = a[j] - b[j];
        acc += scales[j] * d * d;
    }
    acc
}

/// Correlation matrix of a design under the Gaussian kernel.
///
/// The result has a unit diagonal and is exactly symmetric: each off-diagonal
/// value is computed once and mirrored.
pub fn corr_matrix(x: &DMatrix<f64>, scales: &[f64]) -> Result<CorrMatrix> {
    check_scales(scales, x.ncols())?;
    check_points_finite(x)?;
    let n = x.nrows();
    let p = x.ncols();
    let rows = row_major(x);
    let mut m = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        let a = &rows[i * p..(i + 1) * p];
        for k in (i + 1)..n {
            let b = &rows[k * p..(k + 1) * p];
            let v = (-weighted_sq_dist(a, b, scales)).exp();
            m[(i, k)] = v;
            m[(k, i)] = v;
        }
    }
    Ok(CorrMatrix(m))
}

/// Correlations between `query` and every row of `x`.
pub fn corr_vector(x: &DMatrix<f64>, query: &[f64], scales: &[f64]) -> Result<CorrVector> {
    check_scales(scales, x.ncols())?;
    check_points_finite(x)?;
    if query.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            what: "query width vs design width",
            expected: x.ncols(),
            got: query.len(),
        });
    }
    if let Some(v) = query.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("query entry {v} is not finite")));
    }
    let n = x.nrows();
    let p = x.ncols();
    let rows = row_major(x);
    let mut v = DVector::zeros(n);
    for i in 0..n {
        let a = &rows[i * p..(i + 1) * p];
        v[i] = (-weighted_sq_dist(a, query, scales)).exp();
    }
    Ok(CorrVector(v))
}

/// Average inter-point distance of a design and the derived lower bound for
/// the local roughness.
///
/// The average is `(mean of 1/d^2 over all pairs)^(-1/2)`; the bound is
/// `ln(100) / d_avg^2`, the smallest scale at which correlation falls to 0.01
/// at distance `d_avg`.
pub fn design_stats(x: &DMatrix<f64>) -> Result<DesignStats> {
    check_points_finite(x)?;
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid(
            "design statistics need at least two points",
        ));
    }
    let p = x.ncols();
    let rows = row_major(x);
    let mut inv_sum = 0.0;
    for i in 0..n {
        let a = &rows[i * p..(i + 1) * p];
        for k in (i + 1)..n {
            let b = &rows[k * p..(k + 1) * p];
            let mut d2 = 0.0;
            for j in 0..p {
                let d = a[j] - b[j];
                d2 += d * d;
            }
            if d2 == 0.0 {
                return Err(Error::DegenerateDesign(format!(
                    "points {i} and {k} coincide"
                )));
            }
            inv_sum += 1.0 / d2;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mean_inv = inv_sum / pairs;
    let d_avg = mean_inv.sqrt().recip();
    let alpha_lower = 100f64.ln() * mean_inv;
    Ok(DesignStats { d_avg, alpha_lower })
}

/// A successful Cholesky factorization together with the regularization it
/// needed and a cheap condition estimate.
pub struct CholFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    cond_estimate: f64,
}

impl CholFactor {
    /// Diagonal boost that was added to obtain the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Squared ratio of the extreme factor diagonals; a rough estimate of the
    /// matrix condition number.
    pub fn cond_estimate(&self) -> f64 {
        self.cond_estimate
    }

    /// Whether the condition estimate is at or beyond [`COND_OVERFLOW`].
    pub fn is_ill_conditioned(&self) -> bool {
        self.cond_estimate >= COND_OVERFLOW
    }

    /// Solves `M x = b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Solves `M X = B` column by column.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Solves `L x = b` with the lower-triangular factor alone.
    pub fn forward_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        let l = self.chol.l_dirty();
        l.solve_lower_triangular_mut(&mut out);
        out
    }

    /// Log-determinant of the factorized matrix.
    pub fn logdet(&self) -> f64 {
        let l = self.chol.l_dirty();
        let mut acc = 0.0;
        for i in 0..l.nrows() {
            acc += l[(i, i)].ln();
        }
        2.0 * acc
    }

    /// The lower-triangular factor as a dense matrix.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Factorizes a symmetric positive definite matrix, optionally retrying with
/// small relative diagonal boosts when rounding pushes it indefinite.
pub fn safe_cholesky(m: &DMatrix<f64>, policy: JitterPolicy) -> Result<CholFactor> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::invalid(format!(
            "factorization needs a nonempty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if let Some(v) = m.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("matrix entry {v} is not finite")));
    }
    let n = m.nrows();
    let mean_diag = m.diagonal().sum() / n as f64;
    let ladder: &[f64] = match policy {
        JitterPolicy::Ladder => &JITTER_LADDER,
        JitterPolicy::Strict => &JITTER_LADDER[..1],
    };
    let mut max_jitter = 0.0;
    for mult in ladder {
        let jitter = mult * mean_diag;
        max_jitter = jitter;
        let mut trial = m.clone();
        if jitter > 0.0 {
            for i in 0..n {
                trial[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(trial) {
            let l = chol.l_dirty();
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for i in 0..n {
                let d = l[(i, i)];
                lo = lo.min(d);
                hi = hi.max(d);
            }
            let cond_estimate = if lo > 0.0 {
                let r = hi / lo;
                r * r
            } else {
                f64::INFINITY
            };
            return Ok(CholFactor {
                chol,
                jitter,
                cond_estimate,
            });
        }
    }
    Err(Error::SingularMatrix {
        n,
        max_jitter,
        detail: format!("diagonal mean {mean_diag:.6e}"),
    })
}
