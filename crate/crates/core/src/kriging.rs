use std::fmt;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{
    multistart_minimize, FitOptions, FitReport, FittedParams, NmOptions, PENALTY, TIE_WINDOW,
};
use crate::kernels::{corr_matrix, corr_vector, design_stats, safe_cholesky, CholFactor, JitterPolicy};
use crate::types::{normal_quantile_two_sided, Dataset, Prediction};

/// Posterior variances may round slightly negative at design points because
/// `1 - r'R⁻¹r` cancels through solves whose rounding grows with the matrix
/// conditioning, and the regularization ladder admits factorizations up to
/// roughly 1e12. Negatives within this fraction of the process variance
/// clamp to zero; anything worse signals a broken factorization.
const NEG_VARIANCE_TOL: f64 = 1e-2;

/// Search range for the correlation roughness, explored geometrically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBounds {
    pub lo: f64,
    pub hi: f64,
}

impl ThetaBounds {
    /// Default range for a design with the given roughness floor: wide at the
    /// smooth end, extending to a thousand times the floor at the rough end.
    pub fn default_for(alpha_lower: f64) -> Self {
        ThetaBounds {
            lo: 1e-2,
            hi: (1000.0 * alpha_lower).max(1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.hi >= self.lo) {
            return Err(Error::invalid(format!(
                "roughness bounds must satisfy 0 < lo <= hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn decode(&self, u: f64) -> f64 {
        self.lo * (self.hi / self.lo).powf(u)
    }
}

/// Search range for the nugget, explored geometrically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuggetBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for NuggetBounds {
    fn default() -> Self {
        NuggetBounds { lo: 1e-8, hi: 1.0 }
    }
}

impl NuggetBounds {
    fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.hi >= self.lo) {
            return Err(Error::invalid(format!(
                "nugget bounds must satisfy 0 < lo <= hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn decode(&self, u: f64) -> f64 {
        self.lo * (self.hi / self.lo).powf(u)
    }
}

/// A product of input powers, the building block of regression bases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Monomial {
    /// One exponent per input dimension.
    pub exponents: Vec<u32>,
}

impl Monomial {
    pub fn constant(p: usize) -> Self {
        Monomial {
            exponents: vec![0; p],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(x)
            .map(|(e, v)| v.powi(*e as i32))
            .product()
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (j, e) in self.exponents.iter().enumerate() {
            match e {
                0 => {}
                1 => parts.push(format!("x{}", j + 1)),
                _ => parts.push(format!("x{}^{}", j + 1, e)),
            }
        }
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join("*"))
        }
    }
}

/// `1, x1, ..., xp`.
pub fn linear_basis(p: usize) -> Vec<Monomial> {
    let mut basis = vec![Monomial::constant(p)];
    for j in 0..p {
        let mut e = vec![0; p];
        e[j] = 1;
        basis.push(Monomial { exponents: e });
    }
    basis
}

/// Full quadratic: intercept, linear terms, squares, and pairwise products.
pub fn quadratic_basis(p: usize) -> Vec<Monomial> {
    let mut basis = linear_basis(p);
    for i in 0..p {
        for j in i..p {
            let mut e = vec![0; p];
            e[i] += 1;
            e[j] += 1;
            basis.push(Monomial { exponents: e });
        }
    }
    basis
}

/// Parses a basis description: `constant`, `linear`, `quadratic`, or a
/// comma-separated list of monomials like `1, x1, x2^2, x1*x3`.
pub fn parse_basis(spec: &str, p: usize) -> Result<Vec<Monomial>> {
    match spec.trim() {
        "constant" => return Ok(vec![Monomial::constant(p)]),
        "linear" => return Ok(linear_basis(p)),
        "quadratic" => return Ok(quadratic_basis(p)),
        _ => {}
    }
    let mut basis = Vec::new();
    for term in spec.split(',') {
        basis.push(parse_monomial(term, p)?);
    }
    if basis.is_empty() {
        return Err(Error::invalid("basis description is empty"));
    }
    Ok(basis)
}

fn parse_monomial(term: &str, p: usize) -> Result<Monomial> {
    let term = term.trim();
    if term.is_empty() {
        return Err(Error::invalid("empty monomial in basis description"));
    }
    let mut exponents = vec![0u32; p];
    for factor in term.split('*') {
        let factor = factor.trim();
        if factor == "1" {
            continue;
        }
        let rest = factor
            .strip_prefix('x')
            .ok_or_else(|| Error::invalid(format!("cannot parse basis factor `{factor}`")))?;
        let (idx_str, exp_str) = match rest.split_once('^') {
            Some((i, e)) => (i, Some(e)),
            None => (rest, None),
        };
        let idx: usize = idx_str
            .parse()
            .map_err(|_| Error::invalid(format!("cannot parse input index in `{factor}`")))?;
        if idx == 0 || idx > p {
            return Err(Error::invalid(format!(
                "basis factor `{factor}` refers to input {idx}, but the data has {p}"
            )));
        }
        let exp: u32 = match exp_str {
            Some(e) => e
                .parse()
                .map_err(|_| Error::invalid(format!("cannot parse exponent in `{factor}`")))?,
            None => 1,
        };
        exponents[idx - 1] += exp;
    }
    Ok(Monomial { exponents })
}

/// Evaluates each basis monomial at each design point.
fn basis_matrix(basis: &[Monomial], x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let k = basis.len();
    let mut f = DMatrix::zeros(n, k);
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        for (c, m) in basis.iter().enumerate() {
            f[(i, c)] = m.eval(&row);
        }
    }
    f
}

/// Shared state of the constant-trend stationary predictors.
struct StationaryCore {
    data: Dataset,
    theta: Vec<f64>,
    delta: f64,
    mu: f64,
    sigma2: f64,
    chol: CholFactor,
    weights: DVector<f64>,
    r_inv_one: DVector<f64>,
    one_r_inv_one: f64,
    degenerate_constant: bool,
}

fn assemble_stationary(
    data: &Dataset,
    theta: &[f64],
    delta: f64,
    policy: JitterPolicy,
) -> Result<StationaryCore> {
    if theta.len() != data.p() {
        return Err(Error::DimensionMismatch {
            what: "theta vs input dimension",
            expected: data.p(),
            got: theta.len(),
        });
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::invalid(format!(
            "nugget must be finite and nonnegative, got {delta}"
        )));
    }
    let mut r = corr_matrix(data.x(), theta)?.into_inner();
    if delta > 0.0 {
        for i in 0..data.n() {
            r[(i, i)] += delta;
        }
    }
    let chol = safe_cholesky(&r, policy)?;
    let (mu, sigma2) = crate::estimate::closed_form_mu_tau2(data.y(), &chol)?;
    let n = data.n();
    let centered = data.y() - DVector::from_element(n, mu);
    let weights = chol.solve_vec(&centered);
    let r_inv_one = chol.solve_vec(&DVector::from_element(n, 1.0));
    let one_r_inv_one = r_inv_one.sum();
    Ok(StationaryCore {
        data: data.clone(),
        theta: theta.to_vec(),
        delta,
        mu,
        sigma2,
        chol,
        weights,
        r_inv_one,
        one_r_inv_one,
        degenerate_constant: data.y_range() == 0.0,
    })
}

impl StationaryCore {
    fn predict_one(&self, query: &[f64]) -> Result<Prediction> {
        let r = corr_vector(self.data.x(), query, &self.theta)?.into_inner();
        let mean = self.mu + r.dot(&self.weights);
        let r_inv_r = self.chol.solve_vec(&r);
        let t1 = r.dot(&r_inv_r);
        let t2 = 1.0 - r.dot(&self.r_inv_one);
        let mut var = self.sigma2 * (1.0 - t1 + t2 * t2 / self.one_r_inv_one);
        if var < 0.0 {
            let tol = NEG_VARIANCE_TOL * self.sigma2;
            if var >= -tol {
                var = 0.0;
            } else {
                return Err(Error::SingularMatrix {
                    n: self.data.n(),
                    max_jitter: self.chol.jitter(),
                    detail: format!("posterior variance {var:.6e} is negative beyond rounding"),
                });
            }
        }
        Ok(Prediction {
            mean,
            global: mean,
            local: 0.0,
            sd: var.sqrt(),
            v_at_query: 1.0,
        })
    }

    fn predict(&self, queries: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        if queries.ncols() != self.data.p() {
            return Err(Error::DimensionMismatch {
                what: "query width vs design width",
                expected: self.data.p(),
                got: queries.ncols(),
            });
        }
        (0..queries.nrows())
            .map(|i| {
                let q: Vec<f64> = queries.row(i).iter().copied().collect();
                self.predict_one(&q)
            })
            .collect()
    }
}

/// Stationary interpolator with a constant trend.
pub struct OkModel {
    core: StationaryCore,
}

impl OkModel {
    /// Builds the model at fixed roughness without any optimization.
    pub fn with_params(data: Dataset, theta: Vec<f64>) -> Result<OkModel> {
        Self::with_params_policy(data, theta, JitterPolicy::Ladder)
    }

    pub fn with_params_policy(
        data: Dataset,
        theta: Vec<f64>,
        policy: JitterPolicy,
    ) -> Result<OkModel> {
        check_theta(&theta)?;
        let core = assemble_stationary(&data, &theta, 0.0, policy)?;
        Ok(OkModel { core })
    }

    pub fn data(&self) -> &Dataset {
        &self.core.data
    }

    pub fn theta(&self) -> &[f64] {
        &self.core.theta
    }

    pub fn mu_hat(&self) -> f64 {
        self.core.mu
    }

    pub fn sigma2_hat(&self) -> f64 {
        self.core.sigma2
    }

    pub fn jitter(&self) -> f64 {
        self.core.chol.jitter()
    }

    pub fn cond_estimate(&self) -> f64 {
        self.core.chol.cond_estimate()
    }

    pub fn is_ill_conditioned(&self) -> bool {
        self.core.chol.is_ill_conditioned()
    }

    pub fn is_degenerate_constant(&self) -> bool {
        self.core.degenerate_constant
    }

    pub fn predict_one(&self, query: &[f64]) -> Result<Prediction> {
        self.core.predict_one(query)
    }

    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        self.core.predict(queries)
    }

    pub fn prediction_interval(&self, query: &[f64], level: f64) -> Result<(f64, f64)> {
        let z = normal_quantile_two_sided(level)?;
        let pred = self.predict_one(query)?;
        Ok((pred.mean - z * pred.sd, pred.mean + z * pred.sd))
    }
}

/// Stationary smoother: ordinary kriging with an additive diagonal nugget.
pub struct NuggetModel {
    core: StationaryCore,
}

impl NuggetModel {
    /// Builds the model at fixed roughness and nugget.
    pub fn with_params(data: Dataset, theta: Vec<f64>, nugget: f64) -> Result<NuggetModel> {
        check_theta(&theta)?;
        let core = assemble_stationary(&data, &theta, nugget, JitterPolicy::Ladder)?;
        Ok(NuggetModel { core })
    }

    pub fn data(&self) -> &Dataset {
        &self.core.data
    }

    pub fn theta(&self) -> &[f64] {
        &self.core.theta
    }

    pub fn nugget(&self) -> f64 {
        self.core.delta
    }

    pub fn mu_hat(&self) -> f64 {
        self.core.mu
    }

    pub fn sigma2_hat(&self) -> f64 {
        self.core.sigma2
    }

    pub fn is_degenerate_constant(&self) -> bool {
        self.core.degenerate_constant
    }

    pub fn predict_one(&self, query: &[f64]) -> Result<Prediction> {
        self.core.predict_one(query)
    }

    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        self.core.predict(queries)
    }

    pub fn prediction_interval(&self, query: &[f64], level: f64) -> Result<(f64, f64)> {
        let z = normal_quantile_two_sided(level)?;
        let pred = self.predict_one(query)?;
        Ok((pred.mean - z * pred.sd, pred.mean + z * pred.sd))
    }
}

fn check_theta(theta: &[f64]) -> Result<()> {
    if theta.is_empty() {
        return Err(Error::invalid("theta needs at least one dimension"));
    }
    for t in theta {
        if !t.is_finite() || *t < 0.0 {
            return Err(Error::invalid(format!(
                "theta entry {t} must be finite and nonnegative"
            )));
        }
    }
    Ok(())
}

/// Kriging with a polynomial trend fitted by generalized least squares.
pub struct UkModel {
    data: Dataset,
    basis: Vec<Monomial>,
    theta: Vec<f64>,
    beta: DVector<f64>,
    sigma2: f64,
    chol: CholFactor,
    weights: DVector<f64>,
    f_mat: DMatrix<f64>,
    gram_chol: Cholesky<f64, nalgebra::Dyn>,
    degenerate_constant: bool,
}

impl UkModel {
    /// Builds the model at fixed roughness without any optimization.
    pub fn with_params(data: Dataset, basis: Vec<Monomial>, theta: Vec<f64>) -> Result<UkModel> {
        check_theta(&theta)?;
        check_basis(&basis, &data)?;
        let f_mat = basis_matrix(&basis, data.x());
        check_basis_rank(&f_mat, &basis)?;
        Self::assemble(data, basis, theta, f_mat, JitterPolicy::Ladder)
    }

    fn assemble(
        data: Dataset,
        basis: Vec<Monomial>,
        theta: Vec<f64>,
        f_mat: DMatrix<f64>,
        policy: JitterPolicy,
    ) -> Result<UkModel> {
        let r = corr_matrix(data.x(), &theta)?.into_inner();
        let chol = safe_cholesky(&r, policy)?;
        let parts = uk_gls(&data, &f_mat, &chol)?;
        let centered = data.y() - &f_mat * &parts.beta;
        let weights = chol.solve_vec(&centered);
        Ok(UkModel {
            degenerate_constant: data.y_range() == 0.0,
            data,
            basis,
            theta,
            beta: parts.beta,
            sigma2: parts.sigma2,
            chol,
            weights,
            f_mat,
            gram_chol: parts.gram_chol,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn basis(&self) -> &[Monomial] {
        &self.basis
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn beta_hat(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn sigma2_hat(&self) -> f64 {
        self.sigma2
    }

    pub fn is_degenerate_constant(&self) -> bool {
        self.degenerate_constant
    }

    pub fn predict_one(&self, query: &[f64]) -> Result<Prediction> {
        let r = corr_vector(self.data.x(), query, &self.theta)?.into_inner();
        let f_q = DVector::from_iterator(
            self.basis.len(),
            self.basis.iter().map(|m| m.eval(query)),
        );
        let mean = f_q.dot(&self.beta) + r.dot(&self.weights);

        let r_inv_r = self.chol.solve_vec(&r);
        let u = &f_q - self.f_mat.transpose() * &r_inv_r;
        let gram_inv_u = self.gram_chol.solve(&u);
        let mut var = self.sigma2 * (1.0 - r.dot(&r_inv_r) + u.dot(&gram_inv_u));
        if var < 0.0 {
            let tol = NEG_VARIANCE_TOL * self.sigma2;
            if var >= -tol {
                var = 0.0;
            } else {
                return Err(Error::SingularMatrix {
                    n: self.data.n(),
                    max_jitter: self.chol.jitter(),
                    detail: format!("posterior variance {var:.6e} is negative beyond rounding"),
                });
            }
        }
        Ok(Prediction {
            mean,
            global: mean,
            local: 0.0,
            sd: var.sqrt(),
            v_at_query: 1.0,
        })
    }

    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        if queries.ncols() != self.data.p() {
            return Err(Error::DimensionMismatch {
                what: "query width vs design width",
                expected: self.data.p(),
                got: queries.ncols(),
            });
        }
        (0..queries.nrows())
            .map(|i| {
                let q: Vec<f64> = queries.row(i).iter().copied().collect();
                self.predict_one(&q)
            })
            .collect()
    }

    pub fn prediction_interval(&self, query: &[f64], level: f64) -> Result<(f64, f64)> {
        let z = normal_quantile_two_sided(level)?;
        let pred = self.predict_one(query)?;
        Ok((pred.mean - z * pred.sd, pred.mean + z * pred.sd))
    }
}

struct UkGlsParts {
    beta: DVector<f64>,
    sigma2: f64,
    gram_chol: Cholesky<f64, nalgebra::Dyn>,
}

fn uk_gls(data: &Dataset, f_mat: &DMatrix<f64>, chol: &CholFactor) -> Result<UkGlsParts> {
    let r_inv_f = chol.solve_mat(f_mat);
    let gram = f_mat.transpose() * &r_inv_f;
    let gram_chol = Cholesky::new(gram).ok_or_else(|| {
        Error::IllPosedBasis("basis Gram matrix is not positive definite on this design".into())
    })?;
    let r_inv_y = chol.solve_vec(data.y());
    let fty = f_mat.transpose() * r_inv_y;
    let beta = gram_chol.solve(&fty);
    let resid = data.y() - f_mat * &beta;
    let half = chol.forward_solve(&resid);
    let sigma2 = half.dot(&half) / data.n() as f64;
    Ok(UkGlsParts {
        beta,
        sigma2,
        gram_chol,
    })
}

fn check_basis(basis: &[Monomial], data: &Dataset) -> Result<()> {
    if basis.is_empty() {
        return Err(Error::invalid("regression basis is empty"));
    }
    if basis.len() > data.n() {
        return Err(Error::IllPosedBasis(format!(
            "{} basis functions exceed the {} observations",
            basis.len(),
            data.n()
        )));
    }
    for m in basis {
        if m.exponents.len() != data.p() {
            return Err(Error::DimensionMismatch {
                what: "monomial width vs input dimension",
                expected: data.p(),
                got: m.exponents.len(),
            });
        }
    }
    Ok(())
}

fn check_basis_rank(f_mat: &DMatrix<f64>, basis: &[Monomial]) -> Result<()> {
    let svd = f_mat.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let eps = f_mat.nrows().max(f_mat.ncols()) as f64 * f64::EPSILON * smax.max(1.0);
    let rank = svd.rank(eps);
    if rank < basis.len() {
        let names: Vec<String> = basis.iter().map(|m| m.to_string()).collect();
        return Err(Error::IllPosedBasis(format!(
            "basis [{}] has rank {} on this design, need {}",
            names.join(", "),
            rank,
            basis.len()
        )));
    }
    Ok(())
}

/// Maximum-likelihood ordinary kriging fit.
pub fn fit_ok(
    data: &Dataset,
    bounds: Option<ThetaBounds>,
    opts: &FitOptions,
) -> Result<(OkModel, FitReport)> {
    let started = Instant::now();
    let stats = design_stats(data.x())?;
    let bounds = bounds.unwrap_or_else(|| ThetaBounds::default_for(stats.alpha_lower));
    bounds.validate()?;
    let p = data.p();

    if data.y_range() == 0.0 {
        let theta = vec![bounds.lo; p];
        let model = OkModel::with_params_policy(data.clone(), theta.clone(), opts.jitter)?;
        let report = stationary_report(
            "ok",
            theta,
            None,
            None,
            model.mu_hat(),
            model.sigma2_hat(),
            f64::NAN,
            0,
            Vec::new(),
            true,
            0,
            &model.core,
            stats.alpha_lower,
            true,
            started,
        );
        return Ok((model, report));
    }

    let objective = |u: &[f64]| -> f64 {
        let theta: Vec<f64> = u.iter().map(|v| bounds.decode(*v)).collect();
        stationary_objective(data, &theta, 0.0, opts.jitter)
    };
    let search = run_stationary_search(&objective, p, opts)?;
    let theta: Vec<f64> = search.x.iter().map(|v| bounds.decode(*v)).collect();
    let model = OkModel::with_params_policy(data.clone(), theta.clone(), opts.jitter)?;
    let report = stationary_report(
        "ok",
        theta,
        None,
        None,
        model.mu_hat(),
        model.sigma2_hat(),
        search.f,
        search.restarts,
        search.restart_objectives,
        search.converged,
        search.evaluations,
        &model.core,
        stats.alpha_lower,
        false,
        started,
    );
    Ok((model, report))
}

/// Maximum-likelihood fit of kriging with a nugget.
pub fn fit_nugget(
    data: &Dataset,
    theta_bounds: Option<ThetaBounds>,
    nugget_bounds: Option<NuggetBounds>,
    opts: &FitOptions,
) -> Result<(NuggetModel, FitReport)> {
    let started = Instant::now();
    let stats = design_stats(data.x())?;
    let t_bounds = theta_bounds.unwrap_or_else(|| ThetaBounds::default_for(stats.alpha_lower));
    t_bounds.validate()?;
    let n_bounds = nugget_bounds.unwrap_or_default();
    n_bounds.validate()?;
    let p = data.p();

    if data.y_range() == 0.0 {
        let theta = vec![t_bounds.lo; p];
        let model = NuggetModel::with_params(data.clone(), theta.clone(), n_bounds.lo)?;
        let report = stationary_report(
            "nugget",
            theta,
            Some(n_bounds.lo),
            None,
            model.mu_hat(),
            model.sigma2_hat(),
            f64::NAN,
            0,
            Vec::new(),
            true,
            0,
            &model.core,
            stats.alpha_lower,
            true,
            started,
        );
        return Ok((model, report));
    }

    let objective = |u: &[f64]| -> f64 {
        let theta: Vec<f64> = u[..p].iter().map(|v| t_bounds.decode(*v)).collect();
        let delta = n_bounds.decode(u[p]);
        stationary_objective(data, &theta, delta, opts.jitter)
    };
    let search = run_stationary_search(&objective, p + 1, opts)?;
    let theta: Vec<f64> = search.x[..p].iter().map(|v| t_bounds.decode(*v)).collect();
    let delta = n_bounds.decode(search.x[p]);
    let model = NuggetModel::with_params(data.clone(), theta.clone(), delta)?;
    let report = stationary_report(
        "nugget",
        theta,
        Some(delta),
        None,
        model.mu_hat(),
        model.sigma2_hat(),
        search.f,
        search.restarts,
        search.restart_objectives,
        search.converged,
        search.evaluations,
        &model.core,
        stats.alpha_lower,
        false,
        started,
    );
    Ok((model, report))
}

/// Maximum-likelihood universal kriging fit over a fixed basis.
pub fn fit_uk(
    data: &Dataset,
    basis: Vec<Monomial>,
    bounds: Option<ThetaBounds>,
    opts: &FitOptions,
) -> Result<(UkModel, FitReport)> {
    let started = Instant::now();
    let stats = design_stats(data.x())?;
    let t_bounds = bounds.unwrap_or_else(|| ThetaBounds::default_for(stats.alpha_lower));
    t_bounds.validate()?;
    check_basis(&basis, data)?;
    let f_mat = basis_matrix(&basis, data.x());
    check_basis_rank(&f_mat, &basis)?;
    let p = data.p();

    if data.y_range() == 0.0 {
        let theta = vec![t_bounds.lo; p];
        let model = UkModel::assemble(data.clone(), basis, theta.clone(), f_mat, opts.jitter)?;
        let beta: Vec<f64> = model.beta.iter().copied().collect();
        let report = stationary_report_uk(
            theta,
            beta,
            model.sigma2_hat(),
            f64::NAN,
            0,
            Vec::new(),
            true,
            0,
            &model,
            stats.alpha_lower,
            true,
            started,
        );
        return Ok((model, report));
    }

    let objective = |u: &[f64]| -> f64 {
        let theta: Vec<f64> = u.iter().map(|v| t_bounds.decode(*v)).collect();
        uk_objective(data, &f_mat, &theta, opts.jitter)
    };
    let search = run_stationary_search(&objective, p, opts)?;
    let theta: Vec<f64> = search.x.iter().map(|v| t_bounds.decode(*v)).collect();
    let model = UkModel::assemble(data.clone(), basis, theta.clone(), f_mat, opts.jitter)?;
    let beta: Vec<f64> = model.beta.iter().copied().collect();
    let report = stationary_report_uk(
        theta,
        beta,
        model.sigma2_hat(),
        search.f,
        search.restarts,
        search.restart_objectives,
        search.converged,
        search.evaluations,
        &model,
        stats.alpha_lower,
        false,
        started,
    );
    Ok((model, report))
}

fn stationary_objective(data: &Dataset, theta: &[f64], delta: f64, policy: JitterPolicy) -> f64 {
    match assemble_stationary(data, theta, delta, policy) {
        Ok(core) => {
            data.n() as f64 * core.sigma2.max(1e-300).ln() + core.chol.logdet()
        }
        Err(_) => PENALTY,
    }
}

fn uk_objective(data: &Dataset, f_mat: &DMatrix<f64>, theta: &[f64], policy: JitterPolicy) -> f64 {
    let r = match corr_matrix(data.x(), theta) {
        Ok(r) => r.into_inner(),
        Err(_) => return PENALTY,
    };
    let chol = match safe_cholesky(&r, policy) {
        Ok(c) => c,
        Err(_) => return PENALTY,
    };
    match uk_gls(data, f_mat, &chol) {
        Ok(parts) => data.n() as f64 * parts.sigma2.max(1e-300).ln() + chol.logdet(),
        Err(_) => PENALTY,
    }
}

struct SearchResult {
    x: Vec<f64>,
    f: f64,
    restarts: usize,
    restart_objectives: Vec<f64>,
    converged: bool,
    evaluations: usize,
}

fn run_stationary_search(
    objective: &dyn Fn(&[f64]) -> f64,
    dim: usize,
    opts: &FitOptions,
) -> Result<SearchResult> {
    let restarts = opts.restarts.unwrap_or_else(|| 10usize.max(2 * dim));
    if restarts == 0 {
        return Err(Error::invalid("fit needs at least one restart"));
    }
    let nm = NmOptions {
        max_evals: opts.max_evals_per_restart.unwrap_or(80 * dim),
        ftol_abs: 1e-9,
        xtol: 1e-8,
    };
    let outcomes = multistart_minimize(objective, dim, restarts, opts.seed, &nm)?;
    let best_f = outcomes.iter().map(|o| o.f).fold(f64::INFINITY, f64::min);
    if best_f >= PENALTY {
        return Err(Error::EstimationFailed {
            detail: "every restart ended in a penalized region".into(),
            report: None,
        });
    }
    let winner = outcomes
        .iter()
        .filter(|o| o.f <= best_f + TIE_WINDOW)
        .min_by(|a, b| a.f.total_cmp(&b.f).then(a.start_index.cmp(&b.start_index)))
        .expect("at least one restart");
    Ok(SearchResult {
        x: winner.x.clone(),
        f: winner.f,
        restarts,
        restart_objectives: outcomes.iter().map(|o| o.f).collect(),
        converged: winner.converged,
        evaluations: outcomes.iter().map(|o| o.evals).sum(),
    })
}

#[allow(clippy::too_many_arguments)]
fn stationary_report(
    model: &str,
    theta: Vec<f64>,
    nugget: Option<f64>,
    beta: Option<Vec<f64>>,
    mu: f64,
    sigma2: f64,
    objective: f64,
    restarts: usize,
    restart_objectives: Vec<f64>,
    converged: bool,
    evaluations: usize,
    core: &StationaryCore,
    alpha_lower: f64,
    degenerate_constant: bool,
    started: Instant,
) -> FitReport {
    FitReport {
        model: model.into(),
        best_params: FittedParams::Stationary {
            theta,
            nugget,
            beta,
            mu,
            sigma2,
        },
        objective,
        restarts,
        restart_objectives,
        converged,
        evaluations,
        jitter_events: if core.chol.jitter() > 0.0 { 1 } else { 0 },
        max_cond_estimate: core.chol.cond_estimate(),
        alpha_lower,
        degenerate_constant,
        wall_time: started.elapsed(),
    }
}

#[allow(clippy::too_many_arguments)]
fn stationary_report_uk(
    theta: Vec<f64>,
    beta: Vec<f64>,
    sigma2: f64,
    objective: f64,
    restarts: usize,
    restart_objectives: Vec<f64>,
    converged: bool,
    evaluations: usize,
    model: &UkModel,
    alpha_lower: f64,
    degenerate_constant: bool,
    started: Instant,
) -> FitReport {
    FitReport {
        model: "uk".into(),
        best_params: FittedParams::Stationary {
            theta,
            nugget: None,
            beta: Some(beta),
            mu: f64::NAN,
            sigma2,
        },
        objective,
        restarts,
        restart_objectives,
        converged,
        evaluations,
        jitter_events: if model.chol.jitter() > 0.0 { 1 } else { 0 },
        max_cond_estimate: model.chol.cond_estimate(),
        alpha_lower,
        degenerate_constant,
        wall_time: started.elapsed(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_dataset() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| (5.0 * r[0]).sin()).collect();
        Dataset::from_rows(&rows, &y).unwrap()
    }

    #[test]
    fn ok_predictor_matches_dense_oracle() {
        let data = line_dataset();
        let theta = vec![10.0];
        let model = OkModel::with_params(data.clone(), theta.clone()).unwrap();

        let n = data.n();
        let mut r = DMatrix::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                let d = data.x()[(i, 0)] - data.x()[(k, 0)];
                r[(i, k)] = (-theta[0] * d * d).exp();
            }
        }
        let r_inv = r.try_inverse().unwrap();
        let ones = DVector::from_element(n, 1.0);
        let mu = (ones.transpose() * &r_inv * data.y())[(0, 0)]
            / (ones.transpose() * &r_inv * &ones)[(0, 0)];
        for q in [0.1, 0.33, 0.61, 0.95] {
            let mut rq = DVector::zeros(n);
            for i in 0..n {
                let d = data.x()[(i, 0)] - q;
                rq[i] = (-theta[0] * d * d).exp();
            }
            let expect = mu + (rq.transpose() * &r_inv * (data.y() - &ones * mu))[(0, 0)];
            let got = model.predict_one(&[q]).unwrap().mean;
            assert!((got - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn ok_interpolates_with_zero_sd_at_design_points() {
        let data = line_dataset();
        let model = OkModel::with_params(data.clone(), vec![20.0]).unwrap();
        for i in 0..data.n() {
            let pred = model.predict_one(&data.point(i)).unwrap();
            assert!((pred.mean - data.y()[i]).abs() < 1e-8);
            assert!(pred.sd < 1e-6);
            assert_eq!(pred.global, pred.mean);
            assert_eq!(pred.local, 0.0);
            assert_eq!(pred.v_at_query, 1.0);
        }
        let between = model.predict_one(&[0.375]).unwrap();
        assert!(between.sd > 0.0);
    }

    #[test]
    fn shifting_responses_shifts_predictions_by_the_same_constant() {
        let data = line_dataset();
        let shift = 13.25;
        let shifted: Vec<f64> = data.y().iter().map(|v| v + shift).collect();
        let rows: Vec<Vec<f64>> = (0..data.n()).map(|i| data.point(i)).collect();
        let data2 = Dataset::from_rows(&rows, &shifted).unwrap();
        let m1 = OkModel::with_params(data, vec![15.0]).unwrap();
        let m2 = OkModel::with_params(data2, vec![15.0]).unwrap();
        assert!((m2.mu_hat() - m1.mu_hat() - shift).abs() < 1e-9);
        assert!((m2.sigma2_hat() - m1.sigma2_hat()).abs() < 1e-9 * m1.sigma2_hat().max(1.0));
        for q in [0.2, 0.55, 0.81] {
            let p1 = m1.predict_one(&[q]).unwrap();
            let p2 = m2.predict_one(&[q]).unwrap();
            assert!((p2.mean - p1.mean - shift).abs() < 1e-9);
            assert!((p2.sd - p1.sd).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_nugget_reproduces_ordinary_kriging_exactly() {
        let data = line_dataset();
        let ok = OkModel::with_params(data.clone(), vec![12.0]).unwrap();
        let nug = NuggetModel::with_params(data, vec![12.0], 0.0).unwrap();
        for q in [0.0, 0.3, 0.72, 1.0] {
            let a = ok.predict_one(&[q]).unwrap();
            let b = nug.predict_one(&[q]).unwrap();
            assert_eq!(a.mean.to_bits(), b.mean.to_bits());
            assert_eq!(a.sd.to_bits(), b.sd.to_bits());
        }
    }

    #[test]
    fn huge_nugget_pulls_predictions_to_the_mean() {
        let data = line_dataset();
        let model = NuggetModel::with_params(data.clone(), vec![12.0], 1e8).unwrap();
        let mu = model.mu_hat();
        for i in 0..data.n() {
            let pred = model.predict_one(&data.point(i)).unwrap();
            assert!((pred.mean - mu).abs() < 1e-6 * data.y_range());
        }
    }

    #[test]
    fn nugget_smooths_instead_of_interpolating() {
        let data = line_dataset();
        let model = NuggetModel::with_params(data.clone(), vec![12.0], 0.1).unwrap();
        let mut off = 0usize;
        for i in 0..data.n() {
            let pred = model.predict_one(&data.point(i)).unwrap();
            if (pred.mean - data.y()[i]).abs() > 1e-6 * data.y_range() {
                off += 1;
            }
            assert!(pred.sd > 0.0);
        }
        assert!(off > 0);
    }

    #[test]
    fn uk_with_constant_basis_matches_ok() {
        let data = line_dataset();
        let ok = OkModel::with_params(data.clone(), vec![9.0]).unwrap();
        let uk = UkModel::with_params(data, vec![Monomial::constant(1)], vec![9.0]).unwrap();
        assert!((uk.beta_hat()[0] - ok.mu_hat()).abs() < 1e-10 * ok.mu_hat().abs().max(1.0));
        for q in [0.15, 0.48, 0.9] {
            let a = ok.predict_one(&[q]).unwrap();
            let b = uk.predict_one(&[q]).unwrap();
            assert!((a.mean - b.mean).abs() < 1e-10);
            assert!((a.sd - b.sd).abs() < 1e-10);
        }
    }

    #[test]
    fn uk_rejects_rank_deficient_basis() {
        let data = line_dataset();
        let dup = vec![
            Monomial::constant(1),
            Monomial { exponents: vec![1] },
            Monomial { exponents: vec![1] },
        ];
        assert!(matches!(
            UkModel::with_params(data, dup, vec![9.0]),
            Err(Error::IllPosedBasis(_))
        ));
    }

    #[test]
    fn basis_parsing_covers_named_and_explicit_forms() {
        assert_eq!(parse_basis("constant", 2).unwrap().len(), 1);
        assert_eq!(parse_basis("linear", 2).unwrap().len(), 3);
        assert_eq!(parse_basis("quadratic", 2).unwrap().len(), 6);
        let custom = parse_basis("1, x1, x2^2, x1*x2", 2).unwrap();
        assert_eq!(custom.len(), 4);
        assert_eq!(custom[2].exponents, vec![0, 2]);
        assert_eq!(custom[3].exponents, vec![1, 1]);
        assert_eq!(custom[3].to_string(), "x1*x2");
        assert!(parse_basis("x3", 2).is_err());
        assert!(parse_basis("banana", 2).is_err());
    }

    #[test]
    fn monomial_evaluates_products_of_powers() {
        let m = Monomial {
            exponents: vec![2, 0, 1],
        };
        assert!((m.eval(&[2.0, 5.0, 3.0]) - 12.0).abs() < 1e-14);
        assert_eq!(Monomial::constant(3).eval(&[4.0, 5.0, 6.0]), 1.0);
    }

    #[test]
    fn fit_ok_recovers_a_reasonable_roughness() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 11.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| (8.0 * r[0]).sin()).collect();
        let data = Dataset::from_rows(&rows, &y).unwrap();
        let opts = FitOptions {
            restarts: Some(4),
            max_evals_per_restart: Some(120),
            ..FitOptions::default()
        };
        let (model, report) = fit_ok(&data, None, &opts).unwrap();
        assert_eq!(report.model, "ok");
        assert!(report.objective.is_finite());
        for i in 0..data.n() {
            let pred = model.predict_one(&data.point(i)).unwrap();
            assert!((pred.mean - data.y()[i]).abs() < 1e-6 * data.y_range());
        }
    }

    #[test]
    fn fit_nugget_on_noisy_replicate_like_data_finds_positive_nugget() {
        let rows: Vec<Vec<f64>> = (0..14).map(|i| vec![i as f64 / 13.0]).collect();
        let y: Vec<f64> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (3.0 * r[0]).sin() + if i % 2 == 0 { 0.25 } else { -0.25 })
            .collect();
        let data = Dataset::from_rows(&rows, &y).unwrap();
        let opts = FitOptions {
            restarts: Some(5),
            max_evals_per_restart: Some(160),
            ..FitOptions::default()
        };
        let (model, report) = fit_nugget(&data, None, None, &opts).unwrap();
        assert_eq!(report.model, "nugget");
        assert!(model.nugget() > 1e-6);
    }
}
