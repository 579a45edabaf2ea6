use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::closed_form_mu_tau2;
use crate::kernels::{
    self, corr_matrix, corr_vector, design_stats, safe_cholesky, CholFactor, JitterPolicy,
};
use crate::types::{normal_quantile_two_sided, Dataset, Prediction};

/// Floor applied to raw local variance estimates so their square roots and
/// ratios stay well defined far from the design.
pub const VOLATILITY_FLOOR: f64 = 1e-8;

/// Maximum number of volatility refreshes per assembly.
const MAX_VOLATILITY_REFRESHES: usize = 4;

/// The refresh loop stops early once the largest relative change in the
/// standardized variances drops below this.
const VOLATILITY_TOL: f64 = 1e-4;

/// Posterior variances may round slightly negative at design points because
/// the variance bracket cancels through solves whose rounding grows with the
/// matrix conditioning, and the regularization ladder admits factorizations
/// up to roughly 1e12. Negatives within this fraction of the process
/// variance clamp to zero; anything worse signals a broken factorization.
const NEG_VARIANCE_TOL: f64 = 1e-2;

/// Full parameter state of a composite model.
///
/// `theta` scales the smooth global kernel, `alpha` the rough local kernel,
/// `lambda` is the local share `sigma^2 / tau^2` of the total variance, and
/// `b` is the bandwidth exponent of the variance smoother. `mu` and `tau2`
/// hold their closed-form values once a model is assembled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgpParams {
    pub lambda: f64,
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Common gap `alpha_j - theta_j` when the model was parameterized that
    /// way; `None` when `alpha` varies freely.
    pub kappa: Option<f64>,
    pub b: f64,
    pub mu: f64,
    pub tau2: f64,
}

impl CgpParams {
    /// Parameters with free `alpha`.
    pub fn new(lambda: f64, theta: Vec<f64>, alpha: Vec<f64>, b: f64) -> Self {
        CgpParams {
            lambda,
            theta,
            alpha,
            kappa: None,
            b,
            mu: 0.0,
            tau2: 1.0,
        }
    }

    /// Parameters with `alpha_j = theta_j + kappa`.
    pub fn with_kappa(lambda: f64, theta: Vec<f64>, kappa: f64, b: f64) -> Self {
        let alpha = theta.iter().map(|t| t + kappa).collect();
        CgpParams {
            lambda,
            theta,
            alpha,
            kappa: Some(kappa),
            b,
            mu: 0.0,
            tau2: 1.0,
        }
    }

    pub fn p(&self) -> usize {
        self.theta.len()
    }

    /// Checks the admissible region: `lambda` and `b` in the unit interval,
    /// `0 <= theta_j <= alpha_lower <= alpha_j` in every dimension.
    pub fn validate(&self, alpha_lower: f64) -> Result<()> {
        if self.theta.len() != self.alpha.len() {
            return Err(Error::DimensionMismatch {
                what: "theta vs alpha length",
                expected: self.theta.len(),
                got: self.alpha.len(),
            });
        }
        if self.theta.is_empty() {
            return Err(Error::invalid("parameters need at least one dimension"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::invalid(format!(
                "bandwidth exponent b must lie in [0, 1], got {}",
                self.b
            )));
        }
        let slack = 1e-9 * alpha_lower.max(1.0);
        for j in 0..self.theta.len() {
            let t = self.theta[j];
            let a = self.alpha[j];
            if !t.is_finite() || !a.is_finite() {
                return Err(Error::invalid("kernel scales must be finite"));
            }
            if t < 0.0 {
                return Err(Error::invalid(format!("theta[{j}] = {t} is negative")));
            }
            if t > alpha_lower + slack {
                return Err(Error::invalid(format!(
                    "theta[{j}] = {t} exceeds the global-roughness cap {alpha_lower}"
                )));
            }
            if a + slack < alpha_lower {
                return Err(Error::invalid(format!(
                    "alpha[{j}] = {a} lies below the local-roughness floor {alpha_lower}"
                )));
            }
            if a + slack < t {
                return Err(Error::invalid(format!(
                    "alpha[{j}] = {a} is smaller than theta[{j}] = {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Kernel-smoothed local variance surface estimated from trend residuals.
///
/// Standardized so the variances at the design points average to one; the
/// overall level is carried by the model variance instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityState {
    s2: DVector<f64>,
    sigma_diag: DVector<f64>,
    scale: f64,
    theta: Vec<f64>,
    b: f64,
    degenerate: bool,
}

impl VolatilityState {
    /// Constant unit variance; used before the first refresh and whenever the
    /// residuals carry no signal.
    pub fn identity(n: usize, theta: Vec<f64>, b: f64) -> Self {
        VolatilityState {
            s2: DVector::zeros(n),
            sigma_diag: DVector::from_element(n, 1.0),
            scale: 1.0,
            theta,
            b,
            degenerate: true,
        }
    }

    /// Standardized variances at the design points.
    pub fn sigma_diag(&self) -> &DVector<f64> {
        &self.sigma_diag
    }

    /// Squared residuals the surface was smoothed from.
    pub fn s2(&self) -> &DVector<f64> {
        &self.s2
    }

    /// Mean raw variance that was divided out during standardization.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Standardized variance at an arbitrary query point.
    pub fn value_at(&self, x: &DMatrix<f64>, query: &[f64]) -> Result<f64> {
        if self.degenerate {
            return Ok(1.0);
        }
        let raw = volatility_fn(&self.s2, x, &self.theta, self.b, query)?;
        Ok(raw.max(VOLATILITY_FLOOR) / self.scale)
    }

    pub(crate) fn from_parts(
        s2: DVector<f64>,
        sigma_diag: DVector<f64>,
        scale: f64,
        theta: Vec<f64>,
        b: f64,
        degenerate: bool,
    ) -> Self {
        VolatilityState {
            s2,
            sigma_diag,
            scale,
            theta,
            b,
            degenerate,
        }
    }
}

/// Kernel-weighted average of squared residuals at a query point.
///
/// Weights are `exp(-b * sum_j theta_j (x_ij - query_j)^2)`, computed after
/// subtracting the smallest exponent so that far from the design the nearest
/// points still carry all the weight instead of everything underflowing.
pub fn volatility_fn(
    s2: &DVector<f64>,
    x: &DMatrix<f64>,
    theta: &[f64],
    b: f64,
    query: &[f64],
) -> Result<f64> {
    let n = x.nrows();
    let p = x.ncols();
    if s2.len() != n {
        return Err(Error::DimensionMismatch {
            what: "squared residuals vs design rows",
            expected: n,
            got: s2.len(),
        });
    }
    if theta.len() != p {
        return Err(Error::DimensionMismatch {
            what: "theta vs input dimension",
            expected: p,
            got: theta.len(),
        });
    }
    if query.len() != p {
        return Err(Error::DimensionMismatch {
            what: "query width vs input dimension",
            expected: p,
            got: query.len(),
        });
    }
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::invalid(format!(
            "bandwidth exponent b must lie in [0, 1], got {b}"
        )));
    }
    for (v, name) in theta
        .iter()
        .map(|v| (*v, "theta"))
        .chain(query.iter().map(|v| (*v, "query")))
    {
        if !v.is_finite() || (name == "theta" && v < 0.0) {
            return Err(Error::invalid(format!("{name} entry {v} is invalid")));
        }
    }
    if let Some(bad) = s2.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::invalid(format!(
            "squared residual {bad} must be finite and nonnegative"
        )));
    }

    let scales: Vec<f64> = theta.iter().map(|t| b * t).collect();
    let rows = kernels::row_major(x);
    let mut exponents = vec![0.0; n];
    let mut min_e = f64::INFINITY;
    for i in 0..n {
        let e = kernels::weighted_sq_dist(&rows[i * p..(i + 1) * p], query, &scales);
        exponents[i] = e;
        min_e = min_e.min(e);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let w = (-(exponents[i] - min_e)).exp();
        num += w * s2[i];
        den += w;
    }
    Ok(num / den)
}

/// Smooths squared residuals into a standardized volatility state.
///
/// Raw variances are floored at [`VOLATILITY_FLOOR`] and divided by their
/// mean so the design-point variances average to one. Residuals that are all
/// exactly zero carry no variance signal; the state degenerates to constant
/// unit variance.
pub fn update_volatility(
    residuals: &DVector<f64>,
    x: &DMatrix<f64>,
    theta: &[f64],
    b: f64,
) -> Result<VolatilityState> {
    let n = x.nrows();
    if residuals.len() != n {
        return Err(Error::DimensionMismatch {
            what: "residuals vs design rows",
            expected: n,
            got: residuals.len(),
        });
    }
    if let Some(bad) = residuals.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("residual {bad} is not finite")));
    }
    let s2 = residuals.map(|r| r * r);
    if s2.max() == 0.0 {
        return Ok(VolatilityState::identity(n, theta.to_vec(), b));
    }
    let mut raw = DVector::zeros(n);
    for i in 0..n {
        let q: Vec<f64> = x.row(i).iter().copied().collect();
        raw[i] = volatility_fn(&s2, x, theta, b, &q)?.max(VOLATILITY_FLOOR);
    }
    let scale = raw.sum() / n as f64;
    let sigma_diag = raw.map(|v| v / scale);
    Ok(VolatilityState::from_parts(
        s2,
        sigma_diag,
        scale,
        theta.to_vec(),
        b,
        false,
    ))
}

/// Builds the combined correlation matrix `G + lambda * S^{1/2} L S^{1/2}`
/// where `S` is the diagonal volatility matrix.
fn combined_corr(
    g: &DMatrix<f64>,
    l: &DMatrix<f64>,
    sigma_diag: &DVector<f64>,
    lambda: f64,
) -> DMatrix<f64> {
    let n = g.nrows();
    if lambda == 0.0 {
        return g.clone();
    }
    let sqrt_sig: Vec<f64> = sigma_diag.iter().map(|v| v.sqrt()).collect();
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        q[(i, i)] = g[(i, i)] + lambda * sqrt_sig[i] * sqrt_sig[i] * l[(i, i)];
        for k in (i + 1)..n {
            let v = g[(i, k)] + lambda * sqrt_sig[i] * l[(i, k)] * sqrt_sig[k];
            q[(i, k)] = v;
            q[(k, i)] = v;
        }
    }
    q
}

/// Everything the assembly pipeline produces for one parameter set.
pub(crate) struct Assembly {
    pub vol: VolatilityState,
    pub chol_q: CholFactor,
    pub mu_hat: f64,
    pub tau2_hat: f64,
    pub jitter_events: usize,
    pub max_cond: f64,
    pub degenerate_constant: bool,
}

fn assembly_step(
    data: &Dataset,
    g: &DMatrix<f64>,
    l: &DMatrix<f64>,
    lambda: f64,
    sigma_diag: &DVector<f64>,
    policy: JitterPolicy,
) -> Result<(CholFactor, f64, f64)> {
    let q = combined_corr(g, l, sigma_diag, lambda);
    let chol = safe_cholesky(&q, policy)?;
    let (mu, tau2) = closed_form_mu_tau2(data.y(), &chol)?;
    Ok((chol, mu, tau2))
}

/// Runs the volatility refresh loop at fixed kernel parameters and returns
/// the final state together with its factorization and closed-form trend.
pub(crate) fn assemble(
    data: &Dataset,
    lambda: f64,
    theta: &[f64],
    alpha: &[f64],
    b: f64,
    policy: JitterPolicy,
) -> Result<Assembly> {
    let x = data.x();
    let n = data.n();
    let g = corr_matrix(x, theta)?.into_inner();
    let degenerate_constant = data.y_range() == 0.0;

    let mut jitter_events = 0usize;
    let mut max_cond = 0.0f64;
    let mut track = |chol: &CholFactor| {
        if chol.jitter() > 0.0 {
            jitter_events += 1;
        }
        max_cond = max_cond.max(chol.cond_estimate());
    };

    if lambda == 0.0 || degenerate_constant {
        let vol = VolatilityState::identity(n, theta.to_vec(), b);
        let l = DMatrix::zeros(n, n);
        let (chol, mu, tau2) = assembly_step(data, &g, &l, 0.0, vol.sigma_diag(), policy)?;
        track(&chol);
        return Ok(Assembly {
            vol,
            chol_q: chol,
            mu_hat: mu,
            tau2_hat: tau2,
            jitter_events,
            max_cond,
            degenerate_constant,
        });
    }

    let l = corr_matrix(x, alpha)?.into_inner();
    let mut vol = VolatilityState::identity(n, theta.to_vec(), b);
    let (mut chol, mut mu, mut tau2) =
        assembly_step(data, &g, &l, lambda, vol.sigma_diag(), policy)?;
    track(&chol);
    for _ in 0..MAX_VOLATILITY_REFRESHES {
        let centered = data.y() - DVector::from_element(n, mu);
        let resid = &centered - &g * chol.solve_vec(&centered);
        let new_vol = update_volatility(&resid, x, theta, b)?;
        let mut delta = 0.0f64;
        for i in 0..n {
            let prev = vol.sigma_diag()[i];
            let change = (new_vol.sigma_diag()[i] - prev).abs() / prev.max(VOLATILITY_FLOOR);
            delta = delta.max(change);
        }
        vol = new_vol;
        let step = assembly_step(data, &g, &l, lambda, vol.sigma_diag(), policy)?;
        chol = step.0;
        mu = step.1;
        tau2 = step.2;
        track(&chol);
        if delta < VOLATILITY_TOL {
            break;
        }
    }
    Ok(Assembly {
        vol,
        chol_q: chol,
        mu_hat: mu,
        tau2_hat: tau2,
        jitter_events,
        max_cond,
        degenerate_constant,
    })
}

/// Re-factorizes the combined correlation matrix for an already-known
/// volatility state, e.g. when restoring an archived model.
pub(crate) fn assemble_fixed(
    data: &Dataset,
    lambda: f64,
    theta: &[f64],
    alpha: &[f64],
    vol: &VolatilityState,
    policy: JitterPolicy,
) -> Result<Assembly> {
    let g = corr_matrix(data.x(), theta)?.into_inner();
    let l = if lambda == 0.0 {
        DMatrix::zeros(data.n(), data.n())
    } else {
        corr_matrix(data.x(), alpha)?.into_inner()
    };
    let (chol, mu, tau2) = assembly_step(data, &g, &l, lambda, vol.sigma_diag(), policy)?;
    let jitter_events = if chol.jitter() > 0.0 { 1 } else { 0 };
    let max_cond = chol.cond_estimate();
    Ok(Assembly {
        vol: vol.clone(),
        chol_q: chol,
        mu_hat: mu,
        tau2_hat: tau2,
        jitter_events,
        max_cond,
        degenerate_constant: data.y_range() == 0.0,
    })
}

/// Shared prediction state: the factorized combined correlation matrix and
/// the vectors every query needs.
pub(crate) struct PredictorCore {
    pub chol: CholFactor,
    pub weights: DVector<f64>,
    pub q_inv_one: DVector<f64>,
    pub one_q_inv_one: f64,
    pub mu: f64,
    pub tau2: f64,
}

impl PredictorCore {
    fn new(y: &DVector<f64>, chol: CholFactor, mu: f64, tau2: f64) -> Self {
        let n = y.len();
        let centered = y - DVector::from_element(n, mu);
        let weights = chol.solve_vec(&centered);
        let q_inv_one = chol.solve_vec(&DVector::from_element(n, 1.0));
        let one_q_inv_one = q_inv_one.sum();
        PredictorCore {
            chol,
            weights,
            q_inv_one,
            one_q_inv_one,
            mu,
            tau2,
        }
    }
}

fn predict_point(
    data: &Dataset,
    params: &CgpParams,
    vol: &VolatilityState,
    core: &PredictorCore,
    query: &[f64],
) -> Result<Prediction> {
    let x = data.x();
    let g = corr_vector(x, query, &params.theta)?.into_inner();
    let v = vol.value_at(x, query)?;
    let global = core.mu + g.dot(&core.weights);

    let (local, qv) = if params.lambda > 0.0 {
        let l = corr_vector(x, query, &params.alpha)?.into_inner();
        let sqrt_v = v.sqrt();
        let mut u = DVector::zeros(data.n());
        for i in 0..data.n() {
            u[i] = vol.sigma_diag()[i].sqrt() * l[i];
        }
        let local = params.lambda * sqrt_v * u.dot(&core.weights);
        let qv = &g + &u * (params.lambda * sqrt_v);
        (local, qv)
    } else {
        (0.0, g.clone())
    };
    let mean = global + local;

    let q_inv_qv = core.chol.solve_vec(&qv);
    let t1 = qv.dot(&q_inv_qv);
    let t2 = 1.0 - qv.dot(&core.q_inv_one);
    let mut var = core.tau2 * (1.0 + params.lambda * v - t1 + t2 * t2 / core.one_q_inv_one);
    if var < 0.0 {
        let tol = NEG_VARIANCE_TOL * core.tau2 * (1.0 + params.lambda * v.max(1.0));
        if var >= -tol {
            var = 0.0;
        } else {
            return Err(Error::SingularMatrix {
                n: data.n(),
                max_jitter: core.chol.jitter(),
                detail: format!("posterior variance {var:.6e} is negative beyond rounding"),
            });
        }
    }

    Ok(Prediction {
        mean,
        global,
        local,
        sd: var.sqrt(),
        v_at_query: v,
    })
}

/// A composite model ready for prediction.
pub struct FittedCgp {
    data: Dataset,
    params: CgpParams,
    vol: VolatilityState,
    core: PredictorCore,
    alpha_lower: f64,
    policy: JitterPolicy,
    jitter_events: usize,
    max_cond: f64,
    degenerate_constant: bool,
}

impl FittedCgp {
    /// Assembles a model at fixed kernel parameters: runs the volatility
    /// refresh loop, factorizes the combined correlation matrix, and fills in
    /// the closed-form trend and variance.
    pub fn with_params(
        data: Dataset,
        params: CgpParams,
        policy: JitterPolicy,
    ) -> Result<FittedCgp> {
        if params.p() != data.p() {
            return Err(Error::DimensionMismatch {
                what: "parameter dimension vs design width",
                expected: data.p(),
                got: params.p(),
            });
        }
        let stats = design_stats(data.x())?;
        params.validate(stats.alpha_lower)?;
        let assembly = assemble(
            &data,
            params.lambda,
            &params.theta,
            &params.alpha,
            params.b,
            policy,
        )?;
        Ok(FittedCgp::from_assembly(
            data,
            params,
            assembly,
            stats.alpha_lower,
            policy,
        ))
    }

    /// Restores a model from a known volatility state without re-running the
    /// refresh loop.
    pub fn with_volatility(
        data: Dataset,
        params: CgpParams,
        vol: VolatilityState,
        policy: JitterPolicy,
    ) -> Result<FittedCgp> {
        if params.p() != data.p() {
            return Err(Error::DimensionMismatch {
                what: "parameter dimension vs design width",
                expected: data.p(),
                got: params.p(),
            });
        }
        if vol.sigma_diag().len() != data.n() {
            return Err(Error::DimensionMismatch {
                what: "volatility state vs design rows",
                expected: data.n(),
                got: vol.sigma_diag().len(),
            });
        }
        let stats = design_stats(data.x())?;
        params.validate(stats.alpha_lower)?;
        let assembly = assemble_fixed(
            &data,
            params.lambda,
            &params.theta,
            &params.alpha,
            &vol,
            policy,
        )?;
        Ok(FittedCgp::from_assembly(
            data,
            params,
            assembly,
            stats.alpha_lower,
            policy,
        ))
    }

    pub(crate) fn from_assembly(
        data: Dataset,
        mut params: CgpParams,
        assembly: Assembly,
        alpha_lower: f64,
        policy: JitterPolicy,
    ) -> FittedCgp {
        params.mu = assembly.mu_hat;
        params.tau2 = assembly.tau2_hat;
        if assembly.degenerate_constant {
            // A constant response carries no signal for the local part; the
            // assembly dropped it, so the recorded ratio must agree.
            params.lambda = 0.0;
        }
        let core = PredictorCore::new(
            data.y(),
            assembly.chol_q,
            assembly.mu_hat,
            assembly.tau2_hat,
        );
        FittedCgp {
            data,
            params,
            vol: assembly.vol,
            core,
            alpha_lower,
            policy,
            jitter_events: assembly.jitter_events,
            max_cond: assembly.max_cond,
            degenerate_constant: assembly.degenerate_constant,
        }
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn params(&self) -> &CgpParams {
        &self.params
    }

    pub fn volatility(&self) -> &VolatilityState {
        &self.vol
    }

    pub fn mu_hat(&self) -> f64 {
        self.params.mu
    }

    pub fn tau2_hat(&self) -> f64 {
        self.params.tau2
    }

    pub fn alpha_lower(&self) -> f64 {
        self.alpha_lower
    }

    /// Number of factorizations that needed a diagonal boost during assembly.
    pub fn jitter_events(&self) -> usize {
        self.jitter_events
    }

    /// Largest condition estimate seen across assembly factorizations.
    pub fn max_cond(&self) -> f64 {
        self.max_cond
    }

    /// Whether the responses were constant, collapsing the model to its mean.
    pub fn is_degenerate_constant(&self) -> bool {
        self.degenerate_constant
    }

    /// Predicts at one standardized query point.
    pub fn predict_one(&self, query: &[f64]) -> Result<Prediction> {
        predict_point(&self.data, &self.params, &self.vol, &self.core, query)
    }

    /// Predicts at each row of a standardized query matrix.
    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        check_query_width(queries, self.data.p())?;
        (0..queries.nrows())
            .map(|i| {
                let q: Vec<f64> = queries.row(i).iter().copied().collect();
                self.predict_one(&q)
            })
            .collect()
    }

    /// Posterior variance of the surface at a query point.
    pub fn posterior_variance(&self, query: &[f64]) -> Result<f64> {
        let pred = self.predict_one(query)?;
        Ok(pred.sd * pred.sd)
    }

    /// Central prediction interval at the given coverage level.
    pub fn prediction_interval(&self, query: &[f64], level: f64) -> Result<(f64, f64)> {
        let z = normal_quantile_two_sided(level)?;
        let pred = self.predict_one(query)?;
        Ok((pred.mean - z * pred.sd, pred.mean + z * pred.sd))
    }

    /// Two-stage form of the predictor: smooth the data, then interpolate the
    /// standardized residuals with the local kernel. Agrees with
    /// [`FittedCgp::predict`] up to rounding; exposed as a diagnostic.
    pub fn predict_sequential(&self, queries: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_query_width(queries, self.data.p())?;
        let x = self.data.x();
        let n = self.data.n();
        let g_mat = corr_matrix(x, &self.params.theta)?.into_inner();
        let l_mat = corr_matrix(x, &self.params.alpha)?.into_inner();
        let chol_l = safe_cholesky(&l_mat, self.policy)?;

        let centered = self.data.y() - DVector::from_element(n, self.params.mu);
        let resid = &centered - &g_mat * &self.core.weights;
        let mut standardized = DVector::zeros(n);
        for i in 0..n {
            standardized[i] = resid[i] / self.vol.sigma_diag()[i].sqrt();
        }
        let z = chol_l.solve_vec(&standardized);

        let mut out = Vec::with_capacity(queries.nrows());
        for i in 0..queries.nrows() {
            let q: Vec<f64> = queries.row(i).iter().copied().collect();
            let g = corr_vector(x, &q, &self.params.theta)?.into_inner();
            let l = corr_vector(x, &q, &self.params.alpha)?.into_inner();
            let v = self.vol.value_at(x, &q)?;
            let global = self.params.mu + g.dot(&self.core.weights);
            out.push(global + v.sqrt() * l.dot(&z));
        }
        Ok(out)
    }

    /// Attaches known observation error variances, producing a smoothing
    /// predictor for noisy responses. The noise-to-signal weight is the
    /// reciprocal of the fitted model variance.
    pub fn with_noise(&self, error_variances: Vec<f64>) -> Result<NoisyCgp> {
        let n = self.data.n();
        if error_variances.len() != n {
            return Err(Error::DimensionMismatch {
                what: "error variances vs design rows",
                expected: n,
                got: error_variances.len(),
            });
        }
        if let Some(bad) = error_variances.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!(
                "error variance {bad} must be finite and nonnegative"
            )));
        }
        if self.params.tau2 <= 0.0 {
            return Err(Error::invalid(
                "noise attachment needs a positive fitted variance",
            ));
        }
        let rho = 1.0 / self.params.tau2;
        let noise = NoiseSpec {
            error_variances,
            rho,
        };
        NoisyCgp::assemble(
            self.data.clone(),
            self.params.clone(),
            self.vol.clone(),
            noise,
            self.alpha_lower,
            self.policy,
        )
    }
}

fn check_query_width(queries: &DMatrix<f64>, p: usize) -> Result<()> {
    if queries.ncols() != p {
        return Err(Error::DimensionMismatch {
            what: "query width vs design width",
            expected: p,
            got: queries.ncols(),
        });
    }
    Ok(())
}

/// Known observation error variances and the weight applied to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// One error variance per design point.
    pub error_variances: Vec<f64>,
    /// Ratio converting error variances to correlation scale, `1 / tau2`.
    pub rho: f64,
}

/// A composite model that smooths rather than interpolates, for responses
/// observed with known error variances.
pub struct NoisyCgp {
    data: Dataset,
    params: CgpParams,
    vol: VolatilityState,
    core: PredictorCore,
    noise: NoiseSpec,
    alpha_lower: f64,
    jitter_events: usize,
}

impl NoisyCgp {
    fn assemble(
        data: Dataset,
        mut params: CgpParams,
        vol: VolatilityState,
        noise: NoiseSpec,
        alpha_lower: f64,
        policy: JitterPolicy,
    ) -> Result<NoisyCgp> {
        let n = data.n();
        let g = corr_matrix(data.x(), &params.theta)?.into_inner();
        let l = if params.lambda == 0.0 {
            DMatrix::zeros(n, n)
        } else {
            corr_matrix(data.x(), &params.alpha)?.into_inner()
        };
        let mut q = combined_corr(&g, &l, vol.sigma_diag(), params.lambda);
        for i in 0..n {
            q[(i, i)] += noise.rho * noise.error_variances[i];
        }
        let chol = safe_cholesky(&q, policy)?;
        let (mu, tau2) = closed_form_mu_tau2(data.y(), &chol)?;
        let jitter_events = if chol.jitter() > 0.0 { 1 } else { 0 };
        params.mu = mu;
        params.tau2 = tau2;
        let core = PredictorCore::new(data.y(), chol, mu, tau2);
        Ok(NoisyCgp {
            data,
            params,
            vol,
            core,
            noise,
            alpha_lower,
            jitter_events,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn params(&self) -> &CgpParams {
        &self.params
    }

    pub fn volatility(&self) -> &VolatilityState {
        &self.vol
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn alpha_lower(&self) -> f64 {
        self.alpha_lower
    }

    pub fn jitter_events(&self) -> usize {
        self.jitter_events
    }

    /// Predicts the noise-free surface at one standardized query point.
    pub fn predict_one(&self, query: &[f64]) -> Result<Prediction> {
        predict_point(&self.data, &self.params, &self.vol, &self.core, query)
    }

    /// Predicts at each row of a standardized query matrix.
    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        check_query_width(queries, self.data.p())?;
        (0..queries.nrows())
            .map(|i| {
                let q: Vec<f64> = queries.row(i).iter().copied().collect();
                self.predict_one(&q)
            })
            .collect()
    }
}
