use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use cgp_core::bench::{fmt_value, run_suite, SuiteKind, SuiteOptions};
use cgp_core::design::{
    bundled_design, maximin_lhd, random_lhd, Design, BUNDLED_DESIGNS, DEFAULT_MAXIMIN_ITERS,
};
use cgp_core::estimate::{fit_cgp, FitOptions, FitReport, FittedParams, Parameterization};
use cgp_core::kriging::{fit_nugget, fit_ok, fit_uk, parse_basis};
use cgp_core::persistence::{
    load_model, points_csv, read_dataset_csv, read_points_csv, save_model, AnyModel, CsvOptions,
};
use cgp_core::{normal_quantile_two_sided, Error, Result};

/// Fits, predicts with, and benchmarks composite Gaussian process
/// surrogates. All randomness is seed-derived: the same flags always produce
/// the same bytes. Results go to standard output or the given files;
/// diagnostics go to standard error.
#[derive(Parser)]
#[command(name = "cgp", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a dataset CSV and write a model archive.
    Fit(FitArgs),
    /// Predict from a model archive on a query grid or CSV.
    Predict(PredictArgs),
    /// Run a benchmark suite and write its tables.
    Bench(BenchArgs),
    /// Generate a space-filling design as CSV.
    Design(DesignArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Ok,
    Uk,
    Nugget,
    Cgp,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ParamModeArg {
    Reduced,
    Full,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV: input columns plus one response column.
    #[arg(long)]
    data: PathBuf,
    /// Model family to fit.
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Trend basis for `uk`: `constant`, `linear`, `quadratic`, or a comma
    /// list of monomials like `x1,x2,x1*x2,x1^2`.
    #[arg(long)]
    basis: Option<String>,
    /// Local searches to run; defaults to max(10, 2·dim).
    #[arg(long)]
    restarts: Option<usize>,
    /// Seed for the search start points.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Search over the reduced (single kappa) or full per-coordinate alpha.
    #[arg(long, value_enum, default_value_t = ParamModeArg::Reduced)]
    param_mode: ParamModeArg,
    /// Treat the first CSV row as data, not a header.
    #[arg(long)]
    no_header: bool,
    /// 1-based response column; the last column when omitted.
    #[arg(long)]
    response_col: Option<usize>,
    /// Where to write the model archive.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Model archive written by `fit`.
    #[arg(long)]
    model_file: PathBuf,
    /// Query points: a CSV path, or `grid:P:COUNT` for a COUNT^P lattice
    /// spanning the training input ranges.
    #[arg(long)]
    query: String,
    /// Central prediction-interval coverage.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Treat the first query-CSV row as data, not a header.
    #[arg(long)]
    no_header: bool,
    /// Output CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// One of: table1, michalewicz, degeneration, intervals, nugget-compare.
    #[arg(long)]
    suite: String,
    /// Replications to run; each suite has its own default.
    #[arg(long)]
    replications: Option<usize>,
    /// Base seed for design, response, test-point, and search streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for the result tables and summary.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DesignArgs {
    /// `random-lhd`, `maximin-lhd`, or a bundled name
    /// (xiong17, gramacy20, damped24).
    #[arg(long)]
    kind: String,
    /// Number of points (Latin hypercube kinds only).
    #[arg(long)]
    n: Option<usize>,
    /// Number of input dimensions (Latin hypercube kinds only).
    #[arg(long)]
    p: Option<usize>,
    /// Seed for the point layout.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Predict(args) => run_predict(args),
        Command::Bench(args) => run_bench(args),
        Command::Design(args) => run_design(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Stable exit categories: 2 for bad input, 3 for numerical failure,
/// 4 for filesystem trouble.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::EstimationFailed { .. } | Error::SingularMatrix { .. } => 3,
        Error::Io(_) => 4,
        _ => 2,
    }
}

fn run_fit(args: FitArgs) -> Result<()> {
    if args.basis.is_some() && args.model != ModelArg::Uk {
        return Err(Error::InvalidArgument(
            "--basis only applies to --model uk".into(),
        ));
    }
    let csv_opts = CsvOptions {
        has_header: !args.no_header,
        response_column: args.response_col,
    };
    let (data, map) = read_dataset_csv(&args.data, &csv_opts)?;
    let opts = FitOptions {
        parameterization: match args.param_mode {
            ParamModeArg::Reduced => Parameterization::Reduced,
            ParamModeArg::Full => Parameterization::Full,
        },
        restarts: args.restarts,
        seed: args.seed,
        ..FitOptions::default()
    };
    let (model, report): (AnyModel, FitReport) = match args.model {
        ModelArg::Ok => {
            let (m, r) = fit_ok(&data, None, &opts)?;
            (m.into(), r)
        }
        ModelArg::Uk => {
            let spec = args.basis.as_deref().unwrap_or("linear");
            let basis = parse_basis(spec, data.p())?;
            let (m, r) = fit_uk(&data, basis, None, &opts)?;
            (m.into(), r)
        }
        ModelArg::Nugget => {
            let (m, r) = fit_nugget(&data, None, None, &opts)?;
            (m.into(), r)
        }
        ModelArg::Cgp => {
            let (m, r) = fit_cgp(&data, &opts)?;
            (m.into(), r)
        }
    };
    if report.degenerate_constant {
        eprintln!("warning: degenerate constant response; variance estimate is 0");
    }
    eprintln!(
        "fit finished in {:.2}s ({} evaluations, {} jitter events)",
        report.wall_time.as_secs_f64(),
        report.evaluations,
        report.jitter_events
    );
    save_model(&model, &map, &args.out)?;
    print!("{}", fit_report_table(&report));
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidArgument(format!("fit report failed to serialize: {e}")))?;
    println!("{json}");
    Ok(())
}

fn push_kv(out: &mut String, key: &str, value: String) {
    out.push_str(&format!("{key:<16} {value}\n"));
}

fn join_values(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| fmt_value(*v))
        .collect::<Vec<_>>()
        .join(", ")
}

/// The human half of the fit output: one aligned key/value line per field.
fn fit_report_table(report: &FitReport) -> String {
    let mut out = String::new();
    push_kv(&mut out, "model", report.model.clone());
    push_kv(&mut out, "objective", fmt_value(report.objective));
    push_kv(&mut out, "converged", report.converged.to_string());
    push_kv(&mut out, "restarts", report.restarts.to_string());
    push_kv(&mut out, "evaluations", report.evaluations.to_string());
    push_kv(&mut out, "alpha_lower", fmt_value(report.alpha_lower));
    match &report.best_params {
        FittedParams::Cgp { params } => {
            push_kv(&mut out, "lambda", fmt_value(params.lambda));
            push_kv(&mut out, "b", fmt_value(params.b));
            push_kv(&mut out, "theta", join_values(&params.theta));
            push_kv(&mut out, "alpha", join_values(&params.alpha));
            if let Some(kappa) = params.kappa {
                push_kv(&mut out, "kappa", fmt_value(kappa));
            }
            push_kv(&mut out, "mu", fmt_value(params.mu));
            push_kv(&mut out, "tau2", fmt_value(params.tau2));
        }
        FittedParams::Stationary {
            theta,
            nugget,
            beta,
            mu,
            sigma2,
        } => {
            push_kv(&mut out, "theta", join_values(theta));
            if let Some(nugget) = nugget {
                push_kv(&mut out, "nugget", fmt_value(*nugget));
            }
            if let Some(beta) = beta {
                push_kv(&mut out, "beta", join_values(beta));
            } else {
                push_kv(&mut out, "mu", fmt_value(*mu));
            }
            push_kv(&mut out, "sigma2", fmt_value(*sigma2));
        }
    }
    if report.degenerate_constant {
        push_kv(&mut out, "degenerate", "constant response".into());
    }
    out
}

/// Expands `grid:P:COUNT` into a COUNT^P lattice on the unit cube, first
/// coordinate slowest.
fn unit_grid(p: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    if count < 2 {
        return Err(Error::InvalidArgument(
            "a query grid needs at least 2 points per dimension".into(),
        ));
    }
    let total = count.checked_pow(p as u32).filter(|t| *t <= 1_000_000);
    let total = total.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "grid:{p}:{count} would exceed 1,000,000 query points"
        ))
    })?;
    let levels: Vec<f64> = (0..count)
        .map(|i| i as f64 / (count - 1) as f64)
        .collect();
    let mut rows = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut row = vec![0.0; p];
        for j in (0..p).rev() {
            row[j] = levels[rem % count];
            rem /= count;
        }
        rows.push(row);
    }
    Ok(rows)
}

enum QuerySpec {
    Grid { p: usize, count: usize },
    Csv(PathBuf),
}

fn parse_query(query: &str) -> Result<QuerySpec> {
    if let Some(rest) = query.strip_prefix("grid:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "query `{query}` should look like grid:P:COUNT"
            )));
        }
        let p: usize = parts[0].parse().map_err(|_| {
            Error::InvalidArgument(format!("grid dimension `{}` is not a number", parts[0]))
        })?;
        let count: usize = parts[1].parse().map_err(|_| {
            Error::InvalidArgument(format!("grid count `{}` is not a number", parts[1]))
        })?;
        Ok(QuerySpec::Grid { p, count })
    } else {
        Ok(QuerySpec::Csv(PathBuf::from(query)))
    }
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let loaded = load_model(&args.model_file)?;
    let p = loaded.model.data().p();
    let map = &loaded.standardization;

    // Queries are handled on the unit cube; raw coordinates are what the
    // output echoes back.
    let (unit_rows, raw_rows): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match parse_query(&args.query)? {
        QuerySpec::Grid { p: grid_p, count } => {
            if grid_p != p {
                return Err(Error::DimensionMismatch {
                    what: "query grid dimension vs model inputs",
                    expected: p,
                    got: grid_p,
                });
            }
            let unit = unit_grid(p, count)?;
            let raw = unit
                .iter()
                .map(|u| map.to_raw(u))
                .collect::<Result<Vec<_>>>()?;
            (unit, raw)
        }
        QuerySpec::Csv(path) => {
            let raw = read_points_csv(&path, !args.no_header)?;
            for (i, row) in raw.iter().enumerate() {
                if row.len() != p {
                    return Err(Error::DimensionMismatch {
                        what: "query row width vs model inputs",
                        expected: p,
                        got: raw[i].len(),
                    });
                }
            }
            let unit = raw
                .iter()
                .map(|r| map.to_unit(r))
                .collect::<Result<Vec<_>>>()?;
            (unit, raw)
        }
    };

    let queries = DMatrix::from_fn(unit_rows.len(), p, |i, j| unit_rows[i][j]);
    let preds = loaded.model.predict(&queries)?;
    let z = normal_quantile_two_sided(args.level)?;

    let mut text = String::new();
    for j in 0..p {
        text.push_str(&format!("x{},", j + 1));
    }
    text.push_str("mean,global,local,sd,lower,upper,v\n");
    for (raw, pred) in raw_rows.iter().zip(&preds) {
        for v in raw {
            text.push_str(&format!("{},", fmt_value(*v)));
        }
        let lower = pred.mean - z * pred.sd;
        let upper = pred.mean + z * pred.sd;
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_value(pred.mean),
            fmt_value(pred.global),
            fmt_value(pred.local),
            fmt_value(pred.sd),
            fmt_value(lower),
            fmt_value(upper),
            fmt_value(pred.v_at_query)
        ));
    }

    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    eprintln!("predicted {} points at level {}", preds.len(), args.level);
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let kind = SuiteKind::parse(&args.suite)?;
    let opts = SuiteOptions {
        replications: args.replications,
        seed: args.seed,
    };
    let report = run_suite(kind, &opts)?;
    fs::create_dir_all(&args.out_dir)?;
    for table in &report.tables {
        let path = args.out_dir.join(format!("{}_{}.csv", report.suite, table.name));
        fs::write(&path, table.to_csv())?;
    }
    let summary_path = args.out_dir.join(format!("{}_summary.json", report.suite));
    let mut summary_json = report.summary_json();
    summary_json.push('\n');
    fs::write(&summary_path, &summary_json)?;

    let mut out = String::new();
    push_kv(&mut out, "suite", report.suite.clone());
    for (key, value) in &report.summary {
        push_kv(&mut out, key, fmt_value(*value));
    }
    print!("{out}");
    print!("{summary_json}");
    eprintln!(
        "wrote {} tables and a summary to {}",
        report.tables.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn run_design(args: DesignArgs) -> Result<()> {
    let design: Design = match args.kind.as_str() {
        kind @ ("random-lhd" | "maximin-lhd") => {
            let n = args.n.ok_or_else(|| {
                Error::InvalidArgument(format!("--kind {kind} needs --n"))
            })?;
            let p = args.p.ok_or_else(|| {
                Error::InvalidArgument(format!("--kind {kind} needs --p"))
            })?;
            if kind == "random-lhd" {
                random_lhd(n, p, args.seed)?
            } else {
                maximin_lhd(n, p, args.seed, DEFAULT_MAXIMIN_ITERS)?
            }
        }
        bundled if BUNDLED_DESIGNS.contains(&bundled) => {
            if args.n.is_some() || args.p.is_some() {
                return Err(Error::InvalidArgument(format!(
                    "bundled design `{bundled}` has a fixed size; drop --n/--p"
                )));
            }
            bundled_design(bundled)?
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown design kind `{other}`; available: random-lhd, maximin-lhd, {}",
                BUNDLED_DESIGNS.join(", ")
            )))
        }
    };
    let text = points_csv(design.points());
    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    eprintln!(
        "generated {} design: {} points in {} dimensions",
        design.kind(),
        design.points().nrows(),
        design.points().ncols()
    );
    Ok(())
}
