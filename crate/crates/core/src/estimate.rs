use std::cell::Cell;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::cgp::{self, CgpParams, FittedCgp};
use crate::error::{Error, Result};
use crate::kernels::{design_stats, CholFactor, JitterPolicy};
use crate::types::Dataset;

/// Objective value returned when a parameter point cannot be evaluated, e.g.
/// because its correlation matrix would not factorize.
pub const PENALTY: f64 = 1e12;

/// Smallest variance admitted inside the log-likelihood; keeps the objective
/// finite for degenerate constant responses.
const TAU2_FLOOR: f64 = 1e-300;

/// If every global roughness lands below this, the largest one is raised to
/// it so the trend kernel never goes exactly flat.
const THETA_FLOOR: f64 = 1e-6;

/// Candidates whose objectives differ by at most this are tied and resolved
/// toward the least complex model.
pub(crate) const TIE_WINDOW: f64 = 1e-10;

/// Initial simplex edge on the unit search cube.
const SIMPLEX_STEP: f64 = 0.2;

/// Generalized-least-squares mean and plug-in variance under a factorized
/// correlation matrix: `mu = (1'Q^{-1}y) / (1'Q^{-1}1)` and
/// `tau2 = (y - mu 1)' Q^{-1} (y - mu 1) / n`.
pub fn closed_form_mu_tau2(y: &DVector<f64>, chol: &CholFactor) -> Result<(f64, f64)> {
    let n = y.len();
    let ones = DVector::from_element(n, 1.0);
    let a = chol.solve_vec(&ones);
    let denom = a.sum();
    if !denom.is_finite() || denom <= 0.0 {
        return Err(Error::EstimationFailed {
            detail: format!("generalized mean is undefined: 1'Q^-1 1 = {denom}"),
            report: None,
        });
    }
    let c = chol.solve_vec(y);
    let mu = c.sum() / denom;
    if !mu.is_finite() {
        return Err(Error::EstimationFailed {
            detail: "generalized mean is not finite".into(),
            report: None,
        });
    }
    let centered = y - DVector::from_element(n, mu);
    let half = chol.forward_solve(&centered);
    let tau2 = half.dot(&half) / n as f64;
    if !tau2.is_finite() {
        return Err(Error::EstimationFailed {
            detail: "variance estimate is not finite".into(),
            report: None,
        });
    }
    Ok((mu, tau2))
}

/// Profile negative log-likelihood (up to constants) for given kernel
/// parameters: `n * ln(tau2) + ln det Q` with the trend and variance at
/// their closed-form values.
pub fn profile_neg_loglik(
    data: &Dataset,
    params: &CgpParams,
    policy: JitterPolicy,
) -> Result<f64> {
    let assembly = cgp::assemble(
        data,
        params.lambda,
        &params.theta,
        &params.alpha,
        params.b,
        policy,
    )?;
    Ok(objective_value(
        data.n(),
        assembly.tau2_hat,
        assembly.chol_q.logdet(),
    ))
}

fn objective_value(n: usize, tau2: f64, logdet: f64) -> f64 {
    n as f64 * tau2.max(TAU2_FLOOR).ln() + logdet
}

/// Which shape the search space takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    /// `alpha_j = theta_j + kappa` with one shared gap; `p + 3` free values.
    Reduced,
    /// Every `alpha_j` free above the roughness floor; `2p + 2` free values.
    Full,
}

/// Controls for the maximum-likelihood fits.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub parameterization: Parameterization,
    /// Number of local searches; defaults to `max(10, 2 * dim)`.
    pub restarts: Option<usize>,
    /// Seed for the start-point sequence; everything else is deterministic.
    pub seed: u64,
    /// Per-restart evaluation budget; defaults to `80 * dim`.
    pub max_evals_per_restart: Option<usize>,
    pub jitter: JitterPolicy,
    /// Upper end of the searched `kappa` (and free `alpha`) range, as a
    /// multiple of the roughness floor.
    pub kappa_max_ratio: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            parameterization: Parameterization::Reduced,
            restarts: None,
            seed: 0,
            max_evals_per_restart: None,
            jitter: JitterPolicy::Ladder,
            kappa_max_ratio: 1000.0,
        }
    }
}

/// Best parameters found by a fit, in the shape of the model they belong to.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FittedParams {
    Cgp { params: CgpParams },
    Stationary {
        theta: Vec<f64>,
        nugget: Option<f64>,
        beta: Option<Vec<f64>>,
        mu: f64,
        sigma2: f64,
    },
}

/// Summary of one maximum-likelihood fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub model: String,
    pub best_params: FittedParams,
    pub objective: f64,
    pub restarts: usize,
    /// Final objective of each restart, in start order.
    pub restart_objectives: Vec<f64>,
    pub converged: bool,
    pub evaluations: usize,
    /// Factorizations that needed a diagonal boost across the whole fit.
    pub jitter_events: usize,
    pub max_cond_estimate: f64,
    pub alpha_lower: f64,
    pub degenerate_constant: bool,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Maps the search cube to model parameters and evaluates the profile
/// likelihood, recording penalties and conditioning trouble along the way.
pub struct ProfileObjective<'a> {
    data: &'a Dataset,
    alpha_lower: f64,
    parameterization: Parameterization,
    policy: JitterPolicy,
    kappa_max_ratio: f64,
    evaluations: Cell<usize>,
    penalties: Cell<usize>,
    jitter_events: Cell<usize>,
    max_cond: Cell<f64>,
}

impl<'a> ProfileObjective<'a> {
    pub fn new(
        data: &'a Dataset,
        parameterization: Parameterization,
        policy: JitterPolicy,
        kappa_max_ratio: f64,
    ) -> Result<Self> {
        if !(kappa_max_ratio.is_finite() && kappa_max_ratio >= 1.0) {
            return Err(Error::invalid(format!(
                "kappa range multiple must be at least 1, got {kappa_max_ratio}"
            )));
        }
        let stats = design_stats(data.x())?;
        Ok(ProfileObjective {
            data,
            alpha_lower: stats.alpha_lower,
            parameterization,
            policy,
            kappa_max_ratio,
            evaluations: Cell::new(0),
            penalties: Cell::new(0),
            jitter_events: Cell::new(0),
            max_cond: Cell::new(0.0),
        })
    }

    /// Dimension of the search cube.
    pub fn dim(&self) -> usize {
        let p = self.data.p();
        match self.parameterization {
            Parameterization::Reduced => p + 3,
            Parameterization::Full => 2 * p + 2,
        }
    }

    pub fn alpha_lower(&self) -> f64 {
        self.alpha_lower
    }

    /// Translates a point of the unit search cube into model parameters.
    ///
    /// `lambda` and `b` map linearly; `theta_j` maps linearly onto
    /// `[0, alpha_lower]`; the gap `kappa` (or each free `alpha_j`) maps
    /// geometrically across its range so small and large roughness get equal
    /// resolution.
    pub fn decode(&self, u: &[f64]) -> CgpParams {
        let p = self.data.p();
        let al = self.alpha_lower;
        let lambda = u[0];
        let mut theta: Vec<f64> = (0..p).map(|j| u[1 + j] * al).collect();
        let (mut max_idx, mut max_val) = (0, theta[0]);
        for (j, t) in theta.iter().enumerate() {
            if *t > max_val {
                max_idx = j;
                max_val = *t;
            }
        }
        if max_val < THETA_FLOOR {
            theta[max_idx] = THETA_FLOOR;
        }
        match self.parameterization {
            Parameterization::Reduced => {
                let kappa = al * self.kappa_max_ratio.powf(u[p + 1]);
                let b = u[p + 2];
                let mut params = CgpParams::with_kappa(lambda, theta, kappa, b);
                params.kappa = Some(kappa);
                params
            }
            Parameterization::Full => {
                let ratio = self.kappa_max_ratio + 1.0;
                let alpha: Vec<f64> = (0..p).map(|j| al * ratio.powf(u[p + 1 + j])).collect();
                let b = u[2 * p + 1];
                CgpParams::new(lambda, theta, alpha, b)
            }
        }
    }

    /// Objective at a search-cube point; [`PENALTY`] when assembly fails.
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.evaluations.set(self.evaluations.get() + 1);
        let params = self.decode(u);
        match cgp::assemble(
            self.data,
            params.lambda,
            &params.theta,
            &params.alpha,
            params.b,
            self.policy,
        ) {
            Ok(assembly) => {
                self.jitter_events
                    .set(self.jitter_events.get() + assembly.jitter_events);
                self.max_cond
                    .set(self.max_cond.get().max(assembly.max_cond));
                objective_value(self.data.n(), assembly.tau2_hat, assembly.chol_q.logdet())
            }
            Err(_) => {
                self.penalties.set(self.penalties.get() + 1);
                PENALTY
            }
        }
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations.get()
    }

    pub fn penalties(&self) -> usize {
        self.penalties.get()
    }

    pub fn jitter_events(&self) -> usize {
        self.jitter_events.get()
    }

    pub fn max_cond(&self) -> f64 {
        self.max_cond.get()
    }
}

/// Maximum-likelihood fit of the composite model.
///
/// Runs a deterministic multistart simplex search over the profile
/// likelihood; ties are broken toward smaller `lambda`, then a smaller gap
/// between local and global roughness. One extra search starts from a
/// stationary fit of the same data, so the composite model never ends up
/// worse than its `lambda = 0` restriction for lack of a good start.
pub fn fit_cgp(data: &Dataset, opts: &FitOptions) -> Result<(FittedCgp, FitReport)> {
    let started = Instant::now();
    let objective = ProfileObjective::new(
        data,
        opts.parameterization,
        opts.jitter,
        opts.kappa_max_ratio,
    )?;
    let dim = objective.dim();
    let restarts = opts.restarts.unwrap_or_else(|| 10usize.max(2 * dim));
    if restarts == 0 {
        return Err(Error::invalid("fit needs at least one restart"));
    }

    if data.y_range() == 0.0 {
        let params = objective.decode(&vec![0.0; dim]);
        let assembly = cgp::assemble(
            data,
            params.lambda,
            &params.theta,
            &params.alpha,
            params.b,
            opts.jitter,
        )?;
        let obj = objective_value(data.n(), assembly.tau2_hat, assembly.chol_q.logdet());
        let alpha_lower = objective.alpha_lower();
        let max_cond = assembly.max_cond;
        let jitter_events = assembly.jitter_events;
        let model = FittedCgp::from_assembly(
            data.clone(),
            params,
            assembly,
            alpha_lower,
            opts.jitter,
        );
        let report = FitReport {
            model: "cgp".into(),
            best_params: FittedParams::Cgp {
                params: model.params().clone(),
            },
            objective: obj,
            restarts: 0,
            restart_objectives: Vec::new(),
            converged: true,
            evaluations: 1,
            jitter_events,
            max_cond_estimate: max_cond,
            alpha_lower,
            degenerate_constant: true,
            wall_time: started.elapsed(),
        };
        return Ok((model, report));
    }

    let nm = NmOptions {
        max_evals: opts.max_evals_per_restart.unwrap_or(80 * dim),
        ftol_abs: 1e-9,
        xtol: 1e-8,
    };
    let mut outcomes = multistart_minimize(&|u| objective.eval(u), dim, restarts, opts.seed, &nm)?;
    if let Ok((ok_model, _)) = crate::kriging::fit_ok(data, None, opts) {
        let start = stationary_start(&objective, ok_model.theta());
        let mut outcome = nelder_mead_box(&|u| objective.eval(u), &start, SIMPLEX_STEP, &nm);
        outcome.start_index = restarts;
        outcomes.push(outcome);
    }

    let best_f = outcomes
        .iter()
        .map(|o| o.f)
        .fold(f64::INFINITY, f64::min);
    if best_f >= PENALTY {
        let report = penalized_report(&objective, &outcomes, opts, restarts, started.elapsed());
        return Err(Error::EstimationFailed {
            detail: "every restart ended in a penalized region".into(),
            report: Some(Box::new(report)),
        });
    }
    let winner = outcomes
        .iter()
        .filter(|o| o.f <= best_f + TIE_WINDOW)
        .min_by(|a, b| {
            let pa = objective.decode(&a.x);
            let pb = objective.decode(&b.x);
            let ka = pa.kappa.unwrap_or_else(|| pa.alpha.iter().sum());
            let kb = pb.kappa.unwrap_or_else(|| pb.alpha.iter().sum());
            pa.lambda
                .total_cmp(&pb.lambda)
                .then(ka.total_cmp(&kb))
                .then(a.start_index.cmp(&b.start_index))
        })
        .expect("at least one restart");

    let params = objective.decode(&winner.x);
    let assembly = cgp::assemble(
        data,
        params.lambda,
        &params.theta,
        &params.alpha,
        params.b,
        opts.jitter,
    )
    .map_err(|e| Error::EstimationFailed {
        detail: format!("winning parameters failed final assembly: {e}"),
        report: None,
    })?;
    let final_objective =
        objective_value(data.n(), assembly.tau2_hat, assembly.chol_q.logdet());
    let alpha_lower = objective.alpha_lower();
    let jitter_events = objective.jitter_events() + assembly.jitter_events;
    let max_cond = objective.max_cond().max(assembly.max_cond);
    let degenerate_constant = assembly.degenerate_constant;
    let converged = winner.converged;
    let evaluations = objective.evaluations();
    let model =
        FittedCgp::from_assembly(data.clone(), params, assembly, alpha_lower, opts.jitter);
    let report = FitReport {
        model: "cgp".into(),
        best_params: FittedParams::Cgp {
            params: model.params().clone(),
        },
        objective: final_objective,
        restarts: outcomes.len(),
        restart_objectives: outcomes.iter().map(|o| o.f).collect(),
        converged,
        evaluations,
        jitter_events,
        max_cond_estimate: max_cond,
        alpha_lower,
        degenerate_constant,
        wall_time: started.elapsed(),
    };
    Ok((model, report))
}

/// Search-cube coordinates for a composite fit started at a stationary
/// solution: `lambda = 0`, the global roughness copied (clamped to its box),
/// the local gap at its smallest, and the bandwidth power centered.
fn stationary_start(objective: &ProfileObjective<'_>, theta: &[f64]) -> Vec<f64> {
    let al = objective.alpha_lower();
    let p = theta.len();
    let mut u = vec![0.0; objective.dim()];
    for (j, t) in theta.iter().enumerate() {
        u[1 + j] = (t / al).clamp(0.0, 1.0);
    }
    let b_coord = match objective.parameterization {
        Parameterization::Reduced => p + 2,
        Parameterization::Full => 2 * p + 1,
    };
    u[b_coord] = 0.5;
    u
}

fn penalized_report(
    objective: &ProfileObjective<'_>,
    outcomes: &[RestartOutcome],
    opts: &FitOptions,
    restarts: usize,
    wall_time: Duration,
) -> FitReport {
    let best = outcomes
        .iter()
        .min_by(|a, b| a.f.total_cmp(&b.f).then(a.start_index.cmp(&b.start_index)))
        .expect("at least one restart");
    let params = objective.decode(&best.x);
    let _ = opts;
    FitReport {
        model: "cgp".into(),
        best_params: FittedParams::Cgp { params },
        objective: best.f,
        restarts,
        restart_objectives: outcomes.iter().map(|o| o.f).collect(),
        converged: false,
        evaluations: objective.evaluations(),
        jitter_events: objective.jitter_events(),
        max_cond_estimate: objective.max_cond(),
        alpha_lower: objective.alpha_lower(),
        degenerate_constant: false,
        wall_time,
    }
}

/// Stopping rules for one simplex search.
#[derive(Debug, Clone)]
pub(crate) struct NmOptions {
    pub max_evals: usize,
    pub ftol_abs: f64,
    pub xtol: f64,
}

/// Result of one local search.
#[derive(Debug, Clone)]
pub(crate) struct RestartOutcome {
    pub start_index: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Runs `restarts` simplex searches from a shifted low-discrepancy sequence
/// on the unit cube and returns every outcome in start order.
pub(crate) fn multistart_minimize(
    f: &dyn Fn(&[f64]) -> f64,
    dim: usize,
    restarts: usize,
    seed: u64,
    nm: &NmOptions,
) -> Result<Vec<RestartOutcome>> {
    if dim == 0 {
        return Err(Error::invalid("search space has no dimensions"));
    }
    if dim > HALTON_PRIMES.len() {
        return Err(Error::invalid(format!(
            "search dimension {dim} exceeds the supported maximum {}",
            HALTON_PRIMES.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    let mut outcomes = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let mut start = vec![0.0; dim];
        for j in 0..dim {
            let h = radical_inverse((r + 1) as u64, HALTON_PRIMES[j]);
            start[j] = (h + shift[j]).fract();
        }
        let mut outcome = nelder_mead_box(f, &start, SIMPLEX_STEP, nm);
        outcome.start_index = r;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

const HALTON_PRIMES: [u64; 30] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113,
];

/// Van der Corput radical inverse of `index` in the given base.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut result = 0.0;
    let mut scale = inv;
    while index > 0 {
        result += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    result
}

fn clamp_unit(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Nelder–Mead simplex search restricted to the unit cube; proposals that
/// leave the cube are projected back onto it.
pub(crate) fn nelder_mead_box(
    f: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    step: f64,
    opts: &NmOptions,
) -> RestartOutcome {
    let dim = start.len();
    let mut evals = 0usize;
    let eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    let mut base = start.to_vec();
    clamp_unit(&mut base);
    simplex.push(base.clone());
    for j in 0..dim {
        let mut v = base.clone();
        v[j] = if v[j] + step <= 1.0 { v[j] + step } else { v[j] - step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let mut converged = false;
    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        let fspread = values[worst] - values[best];
        let mut xspread = 0.0f64;
        for v in &simplex {
            for j in 0..dim {
                xspread = xspread.max((v[j] - simplex[best][j]).abs());
            }
        }
        if fspread <= opts.ftol_abs + 1e-9 * values[best].abs() || xspread <= opts.xtol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; dim];
        for (i, v) in simplex.iter().enumerate() {
            if i == worst {
                continue;
            }
            for j in 0..dim {
                centroid[j] += v[j];
            }
        }
        for c in centroid.iter_mut() {
            *c /= dim as f64;
        }

        let mut reflected = vec![0.0; dim];
        for j in 0..dim {
            reflected[j] = centroid[j] + (centroid[j] - simplex[worst][j]);
        }
        clamp_unit(&mut reflected);
        let fr = eval(&reflected, &mut evals);

        if fr < values[best] {
            let mut expanded = vec![0.0; dim];
            for j in 0..dim {
                expanded[j] = centroid[j] + 2.0 * (centroid[j] - simplex[worst][j]);
            }
            clamp_unit(&mut expanded);
            let fe = eval(&expanded, &mut evals);
            if fe < fr {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = fr;
            continue;
        }

        let contracted = if fr < values[worst] {
            let mut c = vec![0.0; dim];
            for j in 0..dim {
                c[j] = centroid[j] + 0.5 * (reflected[j] - centroid[j]);
            }
            c
        } else {
            let mut c = vec![0.0; dim];
            for j in 0..dim {
                c[j] = centroid[j] - 0.5 * (centroid[j] - simplex[worst][j]);
            }
            c
        };
        let mut contracted = contracted;
        clamp_unit(&mut contracted);
        let fc = eval(&contracted, &mut evals);
        if fc < values[worst].min(fr) {
            simplex[worst] = contracted;
            values[worst] = fc;
            continue;
        }

        for i in 0..=dim {
            if i == best {
                continue;
            }
            for j in 0..dim {
                simplex[i][j] = simplex[best][j] + 0.5 * (simplex[i][j] - simplex[best][j]);
            }
            values[i] = eval(&simplex[i], &mut evals);
            if evals >= opts.max_evals {
                break;
            }
        }
    }

    let mut best_idx = 0;
    for i in 1..=dim {
        if values[i] < values[best_idx] {
            best_idx = i;
        }
    }
    RestartOutcome {
        start_index: 0,
        x: simplex[best_idx].clone(),
        f: values[best_idx],
        evals,
        converged,
    }
}
