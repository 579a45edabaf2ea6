use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::cgp::FittedCgp;
use crate::design::{bundled_design, maximin_lhd, random_lhd, Design};
use crate::error::{Error, Result};
use crate::estimate::{fit_cgp, FitOptions};
use crate::kernels::{corr_matrix, safe_cholesky, JitterPolicy};
use crate::kriging::{fit_nugget, fit_ok, NuggetModel, OkModel};
use crate::types::{normal_quantile_two_sided, Dataset, Prediction};

/// A test surface with its input domain.
pub struct TestFunction {
    pub name: &'static str,
    pub dim: usize,
    pub domain: Vec<(f64, f64)>,
    eval: fn(&[f64]) -> f64,
}

impl TestFunction {
    /// Evaluates at a point given in domain coordinates.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "test function input width",
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok((self.eval)(x))
    }

    /// Maps a unit-cube point into the domain.
    pub fn to_domain(&self, unit: &[f64]) -> Result<Vec<f64>> {
        if unit.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "test function input width",
                expected: self.dim,
                got: unit.len(),
            });
        }
        Ok(unit
            .iter()
            .zip(&self.domain)
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect())
    }

    /// Evaluates at a unit-cube point.
    pub fn eval_unit(&self, unit: &[f64]) -> Result<f64> {
        let x = self.to_domain(unit)?;
        Ok((self.eval)(&x))
    }

    /// Responses for every row of a unit-cube point matrix.
    pub fn eval_unit_rows(&self, points: &DMatrix<f64>) -> Result<Vec<f64>> {
        (0..points.nrows())
            .map(|i| {
                let u: Vec<f64> = points.row(i).iter().copied().collect();
                self.eval_unit(&u)
            })
            .collect()
    }
}

fn xiong1d(x: &[f64]) -> f64 {
    let t = x[0] - 0.9;
    (30.0 * t.powi(4)).sin() * (2.0 * t).cos() + t / 2.0
}

fn gramacy1d(x: &[f64]) -> f64 {
    (10.0 * PI * x[0]).sin() / (2.0 * x[0]) + (x[0] - 1.0).powi(4)
}

fn damped1d(x: &[f64]) -> f64 {
    (-2.0 * x[0]).exp() * (4.0 * PI * x[0] * x[0]).sin()
}

fn recip2d(x: &[f64]) -> f64 {
    (1.0 / (x[0] * x[1])).sin()
}

fn michalewicz10(x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (i, v) in x.iter().enumerate() {
        let k = (i + 1) as f64;
        acc += v.sin() * (k * v * v / PI).sin().powi(20);
    }
    -acc
}

/// Names accepted by [`test_function`].
pub const TEST_FUNCTIONS: [&str; 5] = [
    "xiong1d",
    "gramacy1d",
    "damped1d",
    "recip2d",
    "michalewicz10",
];

/// Looks up a bundled test function by name.
pub fn test_function(name: &str) -> Result<TestFunction> {
    let f = match name {
        "xiong1d" => TestFunction {
            name: "xiong1d",
            dim: 1,
            domain: vec![(0.0, 1.0)],
            eval: xiong1d,
        },
        "gramacy1d" => TestFunction {
            name: "gramacy1d",
            dim: 1,
            domain: vec![(0.05, 1.05)],
            eval: gramacy1d,
        },
        "damped1d" => TestFunction {
            name: "damped1d",
            dim: 1,
            domain: vec![(0.0, 1.0)],
            eval: damped1d,
        },
        "recip2d" => TestFunction {
            name: "recip2d",
            dim: 2,
            domain: vec![(0.3, 1.0), (0.3, 1.0)],
            eval: recip2d,
        },
        "michalewicz10" => TestFunction {
            name: "michalewicz10",
            dim: 10,
            domain: vec![(0.0, PI); 10],
            eval: michalewicz10,
        },
        other => {
            return Err(Error::invalid(format!(
                "unknown test function `{other}`; available: {}",
                TEST_FUNCTIONS.join(", ")
            )))
        }
    };
    Ok(f)
}

/// Root mean squared prediction error.
pub fn rmspe(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions vs true values",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("prediction error needs at least one point"));
    }
    let n = pred.len() as f64;
    let ss: f64 = pred
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / n).sqrt())
}

/// Interval score at miscoverage `alpha`: the width plus `2/alpha` times the
/// distance by which the value escapes the interval. Values on the boundary
/// count as covered.
pub fn interval_score(lower: f64, upper: f64, value: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "miscoverage must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    if !(lower.is_finite() && upper.is_finite() && value.is_finite()) || upper < lower {
        return Err(Error::invalid(format!(
            "interval [{lower}, {upper}] and value {value} must be finite with upper >= lower"
        )));
    }
    let mut score = upper - lower;
    if value < lower {
        score += 2.0 / alpha * (lower - value);
    }
    if value > upper {
        score += 2.0 / alpha * (value - upper);
    }
    Ok(score)
}

/// Mean interval score over paired bounds and values.
pub fn mean_interval_score(
    lowers: &[f64],
    uppers: &[f64],
    values: &[f64],
    alpha: f64,
) -> Result<f64> {
    if lowers.len() != values.len() || uppers.len() != values.len() {
        return Err(Error::DimensionMismatch {
            what: "interval bounds vs values",
            expected: values.len(),
            got: lowers.len().min(uppers.len()),
        });
    }
    if values.is_empty() {
        return Err(Error::invalid("interval score needs at least one point"));
    }
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += interval_score(lowers[i], uppers[i], values[i], alpha)?;
    }
    Ok(acc / values.len() as f64)
}

/// Fraction of values falling inside their intervals (boundaries count).
pub fn coverage(lowers: &[f64], uppers: &[f64], values: &[f64]) -> Result<f64> {
    if lowers.len() != values.len() || uppers.len() != values.len() {
        return Err(Error::DimensionMismatch {
            what: "interval bounds vs values",
            expected: values.len(),
            got: lowers.len().min(uppers.len()),
        });
    }
    if values.is_empty() {
        return Err(Error::invalid("coverage needs at least one point"));
    }
    let hits = values
        .iter()
        .enumerate()
        .filter(|(i, v)| lowers[*i] <= **v && **v <= uppers[*i])
        .count();
    Ok(hits as f64 / values.len() as f64)
}

/// Draws one realization of a stationary Gaussian process on the given
/// points. Returns the responses and any diagonal boost the factorization
/// needed.
pub fn simulate_gp_path(
    points: &DMatrix<f64>,
    theta: &[f64],
    mu: f64,
    sigma2: f64,
    seed: u64,
) -> Result<(DVector<f64>, f64)> {
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(Error::invalid(format!(
            "path variance must be finite and nonnegative, got {sigma2}"
        )));
    }
    let r = corr_matrix(points, theta)?.into_inner();
    let chol = safe_cholesky(&r, JitterPolicy::Ladder)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let z = DVector::from_iterator(
        points.nrows(),
        (0..points.nrows()).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    let path = chol.lower() * z * sigma2.sqrt() + DVector::from_element(points.nrows(), mu);
    Ok((path, chol.jitter()))
}

/// Splitmix-style mixing for per-purpose, per-replication seeds.
pub(crate) fn derived_seed(base: u64, purpose: u64, rep: u64) -> u64 {
    let mut z = base
        ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ rep.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SEED_DESIGN: u64 = 1;
const SEED_RESPONSE: u64 = 2;
const SEED_TEST: u64 = 3;
const SEED_FIT: u64 = 4;

/// Uniform unit-cube sample for held-out evaluation.
fn uniform_points(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, p, |_, _| rng.gen::<f64>())
}

/// Models the benchmark harness can fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchModel {
    /// Ordinary kriging, the stationary baseline.
    Gp,
    /// Ordinary kriging with a fitted nugget.
    Nugget,
    /// The composite model.
    Cgp,
}

impl BenchModel {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gp" | "ok" => Ok(BenchModel::Gp),
            "nugget" => Ok(BenchModel::Nugget),
            "cgp" => Ok(BenchModel::Cgp),
            other => Err(Error::invalid(format!(
                "unknown benchmark model `{other}`; available: gp, nugget, cgp"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BenchModel::Gp => "gp",
            BenchModel::Nugget => "nugget",
            BenchModel::Cgp => "cgp",
        }
    }
}

/// Design generators the benchmark harness can use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    RandomLhd,
    MaximinLhd,
}

impl DesignKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "random-lhd" => Ok(DesignKind::RandomLhd),
            "maximin-lhd" => Ok(DesignKind::MaximinLhd),
            other => Err(Error::invalid(format!(
                "unknown design kind `{other}`; available: random-lhd, maximin-lhd"
            ))),
        }
    }

    fn build(&self, n: usize, p: usize, seed: u64) -> Result<Design> {
        match self {
            DesignKind::RandomLhd => random_lhd(n, p, seed),
            DesignKind::MaximinLhd => maximin_lhd(n, p, seed, 10_000),
        }
    }
}

enum FittedAny {
    Gp(OkModel),
    Nugget(NuggetModel),
    Cgp(FittedCgp),
}

impl FittedAny {
    fn predict(&self, queries: &DMatrix<f64>) -> Result<Vec<Prediction>> {
        match self {
            FittedAny::Gp(m) => m.predict(queries),
            FittedAny::Nugget(m) => m.predict(queries),
            FittedAny::Cgp(m) => m.predict(queries),
        }
    }

    fn lambda_hat(&self) -> f64 {
        match self {
            FittedAny::Cgp(m) => m.params().lambda,
            _ => f64::NAN,
        }
    }
}

fn fit_model(model: BenchModel, data: &Dataset, seed: u64) -> Result<FittedAny> {
    let opts = FitOptions {
        seed,
        ..FitOptions::default()
    };
    match model {
        BenchModel::Gp => Ok(FittedAny::Gp(fit_ok(data, None, &opts)?.0)),
        BenchModel::Nugget => Ok(FittedAny::Nugget(fit_nugget(data, None, None, &opts)?.0)),
        BenchModel::Cgp => Ok(FittedAny::Cgp(fit_cgp(data, &opts)?.0)),
    }
}

/// Prediction-quality metrics for one model on one test set.
#[derive(Debug, Clone, Copy)]
pub struct PredictionMetrics {
    pub rmspe: f64,
    pub interval_score: f64,
    pub coverage: f64,
}

/// Scores predictions against true values at the given coverage level.
pub fn score_predictions(
    preds: &[Prediction],
    truth: &[f64],
    level: f64,
) -> Result<PredictionMetrics> {
    if preds.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions vs true values",
            expected: truth.len(),
            got: preds.len(),
        });
    }
    let z = normal_quantile_two_sided(level)?;
    let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
    let lowers: Vec<f64> = preds.iter().map(|p| p.mean - z * p.sd).collect();
    let uppers: Vec<f64> = preds.iter().map(|p| p.mean + z * p.sd).collect();
    Ok(PredictionMetrics {
        rmspe: rmspe(&means, truth)?,
        interval_score: mean_interval_score(&lowers, &uppers, truth, 1.0 - level)?,
        coverage: coverage(&lowers, &uppers, truth)?,
    })
}

/// What to run: a function, a design recipe, models to compare, and seeds.
#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub function: String,
    pub design_kind: DesignKind,
    pub n: usize,
    pub models: Vec<BenchModel>,
    pub replications: usize,
    pub n_test: usize,
    pub seed: u64,
    pub level: f64,
}

/// One model's scores on one replication. A failed fit leaves the metrics
/// as NaN and records the failure.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub replication: usize,
    pub design_seed: u64,
    pub model: &'static str,
    pub rmspe: f64,
    pub interval_score: f64,
    pub coverage: f64,
    pub lambda_hat: f64,
    pub fit_seconds: f64,
    pub error: Option<String>,
}

/// The full table from one benchmark run, ordered by replication then model.
#[derive(Debug, Clone)]
pub struct BenchResult {
    pub function: String,
    pub n: usize,
    pub n_test: usize,
    pub replications: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchResult {
    /// Per-replication scores as a formatted table. Wall-clock timing is
    /// deliberately left out so the table is a pure function of the spec.
    pub fn table(&self) -> Table {
        let mut t = Table::new(
            "fits",
            &[
                "replication",
                "design_seed",
                "model",
                "rmspe",
                "interval_score",
                "coverage",
                "lambda_hat",
                "error",
            ],
        );
        for row in &self.rows {
            t.rows.push(vec![
                row.replication.to_string(),
                row.design_seed.to_string(),
                row.model.to_string(),
                fmt_value(row.rmspe),
                fmt_value(row.interval_score),
                fmt_value(row.coverage),
                fmt_value(row.lambda_hat),
                row.error.clone().unwrap_or_default(),
            ]);
        }
        t
    }

    /// Finite scores of one metric for one model, in replication order.
    pub fn metric_for(&self, model: BenchModel, metric: fn(&BenchRow) -> f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.model == model.name())
            .map(metric)
            .filter(|v| v.is_finite())
            .collect()
    }
}

/// Runs every replication of a benchmark spec. Fit failures are recorded in
/// their row and the run keeps going.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchResult> {
    let f = test_function(&spec.function)?;
    if spec.replications == 0 {
        return Err(Error::invalid("a benchmark needs at least one replication"));
    }
    if spec.models.is_empty() {
        return Err(Error::invalid("a benchmark needs at least one model"));
    }
    if !(spec.level > 0.0 && spec.level < 1.0) {
        return Err(Error::invalid(format!(
            "coverage level must lie strictly between 0 and 1, got {}",
            spec.level
        )));
    }
    let mut rows = Vec::with_capacity(spec.replications * spec.models.len());
    for r in 0..spec.replications {
        let design_seed = derived_seed(spec.seed, SEED_DESIGN, r as u64);
        let design = spec.design_kind.build(spec.n, f.dim, design_seed)?;
        let y = f.eval_unit_rows(design.points())?;
        let data = Dataset::new(design.points().clone(), DVector::from_vec(y))?;
        let test = uniform_points(spec.n_test, f.dim, derived_seed(spec.seed, SEED_TEST, r as u64));
        let truth = f.eval_unit_rows(&test)?;
        for &model in &spec.models {
            let started = Instant::now();
            let outcome = fit_model(model, &data, derived_seed(spec.seed, SEED_FIT, r as u64))
                .and_then(|fitted| {
                    let preds = fitted.predict(&test)?;
                    let metrics = score_predictions(&preds, &truth, spec.level)?;
                    Ok((metrics, fitted.lambda_hat()))
                });
            let fit_seconds = started.elapsed().as_secs_f64();
            let row = match outcome {
                Ok((m, lambda_hat)) => BenchRow {
                    replication: r,
                    design_seed,
                    model: model.name(),
                    rmspe: m.rmspe,
                    interval_score: m.interval_score,
                    coverage: m.coverage,
                    lambda_hat,
                    fit_seconds,
                    error: None,
                },
                Err(e) => BenchRow {
                    replication: r,
                    design_seed,
                    model: model.name(),
                    rmspe: f64::NAN,
                    interval_score: f64::NAN,
                    coverage: f64::NAN,
                    lambda_hat: f64::NAN,
                    fit_seconds,
                    error: Some(e.to_string()),
                },
            };
            rows.push(row);
        }
    }
    Ok(BenchResult {
        function: spec.function.clone(),
        n: spec.n,
        n_test: spec.n_test,
        replications: spec.replications,
        rows,
    })
}

/// A named table of formatted values, ready for CSV output.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Table {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Formats a value the way all benchmark outputs do: shortest digits that
/// round-trip.
pub fn fmt_value(v: f64) -> String {
    format!("{v}")
}

/// Results of one benchmark suite: per-replication tables and a summary.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: String,
    pub tables: Vec<Table>,
    pub summary: Vec<(String, f64)>,
}

impl SuiteReport {
    /// The summary as a deterministic JSON document.
    pub fn summary_json(&self) -> String {
        let mut map = serde_json::Map::new();
        map.insert(
            "suite".into(),
            serde_json::Value::String(self.suite.clone()),
        );
        let mut metrics = serde_json::Map::new();
        for (k, v) in &self.summary {
            let value = match serde_json::Number::from_f64(*v) {
                Some(num) => serde_json::Value::Number(num),
                None => serde_json::Value::Null,
            };
            metrics.insert(k.clone(), value);
        }
        map.insert("summary".into(), serde_json::Value::Object(metrics));
        serde_json::to_string_pretty(&serde_json::Value::Object(map))
            .expect("summary serializes")
    }
}

/// Benchmark suites runnable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteKind {
    /// recip2d accuracy comparison on maximin designs.
    Table1,
    /// 10-D accuracy comparison on random Latin hypercubes.
    Michalewicz,
    /// Stationary 2-D paths; checks how often the local share collapses.
    Degeneration,
    /// Interval quality on the damped oscillation.
    Intervals,
    /// Accuracy on the sparse oscillatory design, with a nugget baseline.
    NuggetCompare,
}

impl SuiteKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "table1" => Ok(SuiteKind::Table1),
            "michalewicz" => Ok(SuiteKind::Michalewicz),
            "degeneration" => Ok(SuiteKind::Degeneration),
            "intervals" => Ok(SuiteKind::Intervals),
            "nugget-compare" => Ok(SuiteKind::NuggetCompare),
            other => Err(Error::invalid(format!(
                "unknown suite `{other}`; available: table1, michalewicz, degeneration, intervals, nugget-compare"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SuiteKind::Table1 => "table1",
            SuiteKind::Michalewicz => "michalewicz",
            SuiteKind::Degeneration => "degeneration",
            SuiteKind::Intervals => "intervals",
            SuiteKind::NuggetCompare => "nugget-compare",
        }
    }

    fn default_replications(&self) -> usize {
        match self {
            SuiteKind::Degeneration => 50,
            SuiteKind::Table1 => 10,
            SuiteKind::Michalewicz => 10,
            SuiteKind::Intervals | SuiteKind::NuggetCompare => 1,
        }
    }
}

/// Options shared by all suites.
#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    pub replications: Option<usize>,
    pub seed: u64,
}

/// Runs a benchmark suite to completion.
pub fn run_suite(kind: SuiteKind, opts: &SuiteOptions) -> Result<SuiteReport> {
    let reps = opts
        .replications
        .unwrap_or_else(|| kind.default_replications());
    if reps == 0 {
        return Err(Error::invalid("a suite needs at least one replication"));
    }
    match kind {
        SuiteKind::Degeneration => degeneration_suite(reps, opts.seed),
        SuiteKind::Table1 => table1_suite(reps, opts.seed),
        SuiteKind::Michalewicz => michalewicz_suite(reps, opts.seed),
        SuiteKind::Intervals => intervals_suite(opts.seed),
        SuiteKind::NuggetCompare => nugget_compare_suite(opts.seed),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn degeneration_suite(reps: usize, seed: u64) -> Result<SuiteReport> {
    let design = maximin_lhd(24, 2, derived_seed(seed, SEED_DESIGN, 0), 10_000)?;
    let mut table = Table::new(
        "fits",
        &["replication", "theta1", "theta2", "lambda_hat", "objective"],
    );
    let mut collapsed = 0usize;
    for r in 0..reps {
        let mut rng = ChaCha20Rng::seed_from_u64(derived_seed(seed, SEED_RESPONSE, r as u64));
        let theta = [rng.gen_range(1.0..5.0), rng.gen_range(1.0..5.0)];
        let path_seed = rng.gen::<u64>();
        let (y, _) = simulate_gp_path(design.points(), &theta, 0.0, 1.0, path_seed)?;
        let data = Dataset::new(design.points().clone(), y)?;
        let opts = FitOptions {
            seed: derived_seed(seed, SEED_FIT, r as u64),
            ..FitOptions::default()
        };
        let (model, report) = fit_cgp(&data, &opts)?;
        let lambda = model.params().lambda;
        if lambda <= 0.01 {
            collapsed += 1;
        }
        table.rows.push(vec![
            r.to_string(),
            fmt_value(theta[0]),
            fmt_value(theta[1]),
            fmt_value(lambda),
            fmt_value(report.objective),
        ]);
    }
    let fraction = collapsed as f64 / reps as f64;
    Ok(SuiteReport {
        suite: "degeneration".into(),
        tables: vec![table],
        summary: vec![
            ("replications".into(), reps as f64),
            ("fraction_lambda_le_0.01".into(), fraction),
        ],
    })
}

fn table1_suite(reps: usize, seed: u64) -> Result<SuiteReport> {
    let spec = BenchmarkSpec {
        function: "recip2d".into(),
        design_kind: DesignKind::MaximinLhd,
        n: 24,
        models: vec![BenchModel::Gp, BenchModel::Cgp],
        replications: reps,
        n_test: 5000,
        seed,
        level: 0.95,
    };
    let result = run_benchmark(&spec)?;
    let mut gp = result.metric_for(BenchModel::Gp, |r| r.rmspe);
    let mut cgp = result.metric_for(BenchModel::Cgp, |r| r.rmspe);
    let mut improvements: Vec<f64> = gp
        .iter()
        .zip(&cgp)
        .map(|(g, c)| (g - c) / g)
        .collect();
    Ok(SuiteReport {
        suite: "table1".into(),
        tables: vec![result.table()],
        summary: vec![
            ("replications".into(), reps as f64),
            ("median_rmspe_gp".into(), median(&mut gp)),
            ("median_rmspe_cgp".into(), median(&mut cgp)),
            ("median_improvement".into(), median(&mut improvements)),
        ],
    })
}

fn michalewicz_suite(reps: usize, seed: u64) -> Result<SuiteReport> {
    let spec = BenchmarkSpec {
        function: "michalewicz10".into(),
        design_kind: DesignKind::RandomLhd,
        n: 100,
        models: vec![BenchModel::Gp, BenchModel::Cgp],
        replications: reps,
        n_test: 5000,
        seed,
        level: 0.95,
    };
    let result = run_benchmark(&spec)?;
    let gp = result.metric_for(BenchModel::Gp, |r| r.rmspe);
    let cgp = result.metric_for(BenchModel::Cgp, |r| r.rmspe);
    let wins = gp
        .iter()
        .zip(&cgp)
        .filter(|(g, c)| c <= g)
        .count();
    Ok(SuiteReport {
        suite: "michalewicz".into(),
        tables: vec![result.table()],
        summary: vec![
            ("replications".into(), reps as f64),
            ("cgp_wins".into(), wins as f64),
        ],
    })
}

fn grid_1d(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64)
}

/// Fits the given models to a fixed 1-D design, scores them on fresh test
/// points, and tabulates a plot-ready grid of predictions with bounds.
fn fixed_design_comparison(
    suite: &str,
    function: &str,
    design_name: &str,
    models: &[BenchModel],
    seed: u64,
) -> Result<SuiteReport> {
    let f = test_function(function)?;
    let design = bundled_design(design_name)?;
    let y = f.eval_unit_rows(design.points())?;
    let data = Dataset::new(design.points().clone(), DVector::from_vec(y))?;
    let test = uniform_points(3000, 1, derived_seed(seed, SEED_TEST, 0));
    let truth = f.eval_unit_rows(&test)?;
    let grid = grid_1d(400);
    let grid_truth = f.eval_unit_rows(&grid)?;
    let level = 0.95;
    let z = normal_quantile_two_sided(level)?;

    let mut metrics_table = Table::new(
        "metrics",
        &["model", "rmspe", "interval_score", "coverage"],
    );
    let mut grid_table = Table::new("grid", &["model", "x", "truth", "mean", "lower", "upper"]);
    let mut summary = Vec::new();
    for &model in models {
        let fitted = fit_model(model, &data, derived_seed(seed, SEED_FIT, 0))?;
        let preds = fitted.predict(&test)?;
        let m = score_predictions(&preds, &truth, level)?;
        metrics_table.rows.push(vec![
            model.name().into(),
            fmt_value(m.rmspe),
            fmt_value(m.interval_score),
            fmt_value(m.coverage),
        ]);
        summary.push((format!("rmspe_{}", model.name()), m.rmspe));
        summary.push((format!("interval_score_{}", model.name()), m.interval_score));
        let grid_preds = fitted.predict(&grid)?;
        for (i, p) in grid_preds.iter().enumerate() {
            grid_table.rows.push(vec![
                model.name().into(),
                fmt_value(grid[(i, 0)]),
                fmt_value(grid_truth[i]),
                fmt_value(p.mean),
                fmt_value(p.mean - z * p.sd),
                fmt_value(p.mean + z * p.sd),
            ]);
        }
    }
    Ok(SuiteReport {
        suite: suite.into(),
        tables: vec![metrics_table, grid_table],
        summary,
    })
}

fn intervals_suite(seed: u64) -> Result<SuiteReport> {
    let mut report = fixed_design_comparison(
        "intervals",
        "damped1d",
        "damped24",
        &[BenchModel::Gp, BenchModel::Cgp],
        seed,
    )?;
    let gp = report
        .summary
        .iter()
        .find(|(k, _)| k == "interval_score_gp")
        .map(|(_, v)| *v)
        .unwrap_or(f64::NAN);
    let cgp = report
        .summary
        .iter()
        .find(|(k, _)| k == "interval_score_cgp")
        .map(|(_, v)| *v)
        .unwrap_or(f64::NAN);
    report
        .summary
        .push(("interval_score_improvement".into(), (gp - cgp) / gp));
    Ok(report)
}

fn nugget_compare_suite(seed: u64) -> Result<SuiteReport> {
    fixed_design_comparison(
        "nugget-compare",
        "gramacy1d",
        "gramacy20",
        &[BenchModel::Gp, BenchModel::Nugget, BenchModel::Cgp],
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_function_values_match_frozen_references() {
        let xiong = test_function("xiong1d").unwrap();
        assert!(xiong.eval(&[0.9]).unwrap().abs() < 1e-15);

        let recip = test_function("recip2d").unwrap();
        assert!((recip.eval(&[1.0, 1.0]).unwrap() - 0.8414709848078965).abs() < 1e-15);

        let damped = test_function("damped1d").unwrap();
        assert!((damped.eval(&[0.25]).unwrap() - 0.42888194248035344).abs() < 1e-12);

        let gramacy = test_function("gramacy1d").unwrap();
        assert!(gramacy.eval(&[1.0]).unwrap().abs() < 1e-12);

        let mich = test_function("michalewicz10").unwrap();
        assert_eq!(mich.eval(&[0.0; 10]).unwrap(), 0.0);
        assert!(test_function("mystery").is_err());
    }

    #[test]
    fn unit_mapping_spans_the_domain() {
        let f = test_function("gramacy1d").unwrap();
        assert!((f.to_domain(&[0.0]).unwrap()[0] - 0.05).abs() < 1e-15);
        assert!((f.to_domain(&[1.0]).unwrap()[0] - 1.05).abs() < 1e-15);
        let m = test_function("michalewicz10").unwrap();
        let top = m.to_domain(&[1.0; 10]).unwrap();
        for v in top {
            assert!((v - PI).abs() < 1e-15);
        }
    }

    #[test]
    fn rmspe_matches_hand_values_and_validates() {
        let v = rmspe(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!((v - 3.5355339059327378).abs() < 1e-14);
        assert_eq!(rmspe(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(rmspe(&[2.5, 2.5, 2.5], &[2.0, 2.0, 2.0]).unwrap(), 0.5);
        assert!(rmspe(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmspe_is_a_norm_up_to_permutation() {
        let a = [0.3, -1.2, 2.0, 0.0];
        let b = [1.0, 0.5, -0.5, 2.0];
        let c = [0.0, 0.0, 1.0, -1.0];
        let ab = rmspe(&a, &b).unwrap();
        let bc = rmspe(&b, &c).unwrap();
        let ac = rmspe(&a, &c).unwrap();
        assert!(ac <= ab + bc + 1e-15);
        let a_rev: Vec<f64> = a.iter().rev().copied().collect();
        let b_rev: Vec<f64> = b.iter().rev().copied().collect();
        assert!((rmspe(&a_rev, &b_rev).unwrap() - ab).abs() < 1e-15);
    }

    #[test]
    fn interval_score_matches_hand_values() {
        assert_eq!(interval_score(0.0, 1.0, 0.5, 0.05).unwrap(), 1.0);
        assert_eq!(interval_score(0.0, 1.0, 1.5, 0.05).unwrap(), 21.0);
        assert_eq!(interval_score(0.0, 1.0, 1.0, 0.05).unwrap(), 1.0);
        assert_eq!(interval_score(0.0, 1.0, -0.25, 0.05).unwrap(), 11.0);
        assert!(interval_score(1.0, 0.0, 0.5, 0.05).is_err());
        assert!(interval_score(0.0, 1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn widening_a_covering_interval_raises_the_score() {
        for (l, u, x) in [(0.0, 1.0, 0.5), (-2.0, 3.0, 0.0), (1.0, 1.0, 1.0)] {
            let base = interval_score(l, u, x, 0.05).unwrap();
            let wider = interval_score(l - 0.1, u + 0.2, x, 0.05).unwrap();
            assert!(wider > base);
        }
    }

    #[test]
    fn coverage_counts_boundaries_as_hits() {
        let c = coverage(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &[0.5, 1.0, 2.0]).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gp_path_is_deterministic_and_seed_sensitive() {
        let d = random_lhd(20, 2, 77).unwrap();
        let (a, jitter_a) = simulate_gp_path(d.points(), &[2.0, 3.0], 1.5, 4.0, 13).unwrap();
        let (b, _) = simulate_gp_path(d.points(), &[2.0, 3.0], 1.5, 4.0, 13).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert!(jitter_a >= 0.0);
        let (c, _) = simulate_gp_path(d.points(), &[2.0, 3.0], 1.5, 4.0, 14).unwrap();
        assert!(a.iter().zip(c.iter()).any(|(x, y)| x != y));
    }

    #[test]
    fn zero_variance_path_is_the_constant_mean() {
        let d = random_lhd(6, 1, 5).unwrap();
        let (y, _) = simulate_gp_path(d.points(), &[4.0], 2.5, 0.0, 99).unwrap();
        for v in y.iter() {
            assert_eq!(*v, 2.5);
        }
    }

    #[test]
    fn perfectly_correlated_path_is_nearly_constant() {
        let d = random_lhd(5, 1, 21).unwrap();
        let (y, jitter) = simulate_gp_path(d.points(), &[0.0], 0.0, 1.0, 7).unwrap();
        assert!(jitter > 0.0);
        let spread = y.max() - y.min();
        assert!(spread < 1e-3, "spread {spread} with jitter {jitter}");
    }

    #[test]
    fn path_covariance_matches_the_kernel_monte_carlo() {
        let pts = DMatrix::from_row_slice(3, 1, &[0.1, 0.5, 0.8]);
        let theta = [3.0];
        let sigma2 = 2.0;
        let reps = 10_000;
        let mut sums = DMatrix::<f64>::zeros(3, 3);
        for s in 0..reps {
            let (y, _) = simulate_gp_path(&pts, &theta, 0.0, sigma2, s as u64).unwrap();
            sums += &y * y.transpose();
        }
        let emp = sums / reps as f64;
        let want = corr_matrix(&pts, &theta).unwrap().into_inner() * sigma2;
        for i in 0..3 {
            for j in 0..3 {
                let rel = (emp[(i, j)] - want[(i, j)]).abs() / want[(i, j)].abs();
                assert!(rel < 0.05, "covariance ({i},{j}): {} vs {}", emp[(i, j)], want[(i, j)]);
            }
        }
    }

    #[test]
    fn derived_seeds_separate_purposes_and_replications() {
        let a = derived_seed(0, SEED_DESIGN, 0);
        let b = derived_seed(0, SEED_RESPONSE, 0);
        let c = derived_seed(0, SEED_DESIGN, 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derived_seed(0, SEED_DESIGN, 0));
    }

    #[test]
    fn suite_and_model_parsing_cover_the_menu() {
        for name in ["table1", "michalewicz", "degeneration", "intervals", "nugget-compare"] {
            assert_eq!(SuiteKind::parse(name).unwrap().name(), name);
        }
        assert!(SuiteKind::parse("unknown").is_err());
        assert_eq!(BenchModel::parse("ok").unwrap(), BenchModel::Gp);
        assert!(BenchModel::parse("tgp").is_err());
        assert!(DesignKind::parse("maximin-lhd").is_ok());
        assert!(DesignKind::parse("grid").is_err());
    }

    #[test]
    fn table_csv_has_header_then_rows() {
        let mut t = Table::new("demo", &["a", "b"]);
        t.rows.push(vec!["1".into(), "0.5".into()]);
        assert_eq!(t.to_csv(), "a,b\n1,0.5\n");
    }

    #[test]
    fn score_predictions_combines_all_three_metrics() {
        let preds = vec![
            Prediction {
                mean: 1.0,
                global: 1.0,
                local: 0.0,
                sd: 0.5,
                v_at_query: 1.0,
            },
            Prediction {
                mean: -1.0,
                global: -1.0,
                local: 0.0,
                sd: 0.1,
                v_at_query: 1.0,
            },
        ];
        let m = score_predictions(&preds, &[1.2, -1.0], 0.95).unwrap();
        assert!((m.rmspe - (0.04f64 / 2.0).sqrt()).abs() < 1e-12);
        assert_eq!(m.coverage, 1.0);
        assert!(m.interval_score > 0.0);
    }

    #[test]
    fn benchmark_tables_are_reproducible_for_a_seed() {
        let spec = BenchmarkSpec {
            function: "damped1d".into(),
            design_kind: DesignKind::RandomLhd,
            n: 10,
            models: vec![BenchModel::Gp],
            replications: 1,
            n_test: 50,
            seed: 11,
            level: 0.95,
        };
        let a = run_benchmark(&spec).unwrap().table().to_csv();
        let b = run_benchmark(&spec).unwrap().table().to_csv();
        assert_eq!(a, b);
        assert!(a.lines().count() == 2);
        let row = a.lines().nth(1).unwrap();
        assert!(row.starts_with("0,"), "row: {row}");
        assert!(row.ends_with(','), "error column should be empty: {row}");
    }
}
