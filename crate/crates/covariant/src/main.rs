//! Command-line entry point: experiment reproductions, covariance checks,
//! the second-order root analysis, and library self-checks.
//!
//! Every run prints its fully resolved configuration before executing, and
//! identical flags and seeds produce byte-identical output files.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage error, 3 unwritable
//! output.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use covariant::covariance::{
    check_covariance, second_order_demo, theorem3_verify, Coupling,
};
use covariant::experiments::{
    self, ExperimentConfig, Fig2Metric, FisherSource, FunctionMode, UpdateEstimator, Variant,
};
use covariant::metric::{metric_transformation_residual, MetricSpec};
use covariant::naturalize::{naturalize, EstimationMode, RunnableRule};
use covariant::rules::{
    pairs, BatchScaling, DensityMode, GaussianBatchRule, GaussianData, GaussianMeanModel,
    GaussianModel, StepSchedule,
};
use covariant::{calculus, core, rng};

#[derive(Parser)]
#[command(
    name = "covariant",
    version,
    about = "Naturalized learning rules: reparameterization experiments and covariance checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plain gradient ascent on the dataset log-likelihood for each power k.
    Figure1(ExperimentArgs),
    /// Naturalized gradient ascent; variants differ in metric estimation.
    Figure2(ExperimentArgs),
    /// J-order covariance check of a rule over a congruent pair.
    Covariance(CovarianceArgs),
    /// Root analysis of the second-order covariance constraints.
    Theorem3(Theorem3Args),
    /// Gradient checks, pseudoinverse identities, transformation laws, and
    /// the nonexistence demos.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Output directory for CSV curves and metadata.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Optional key=value config file; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    run_seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Comma-separated powers, e.g. 1,2,3,4.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<u32>>,
    /// Figure-2 variant: a, b, c, d, e, or f.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    n_data: Option<usize>,
    #[arg(long)]
    fisher_samples: Option<usize>,
    /// model | uniform
    #[arg(long)]
    fisher_source: Option<String>,
    /// pinv | wstar | two-timescale
    #[arg(long)]
    mode: Option<String>,
    /// Secondary step size for --mode two-timescale.
    #[arg(long)]
    secondary_alpha: Option<f64>,
    /// Record every iteration instead of every 100th.
    #[arg(long, default_value_t = false)]
    full_resolution: bool,
}

#[derive(Args, Clone)]
struct CovarianceArgs {
    /// plain-gd | naturalized-gd
    #[arg(long, default_value = "naturalized-gd")]
    rule: String,
    /// identity | gaussian-k1-k2 | gaussian-k1-k4 | gaussian-k2-k4
    #[arg(long, default_value = "gaussian-k1-k4")]
    pair: String,
    #[arg(long, default_value_t = 1)]
    order: u8,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, default_value_t = 8)]
    probes: usize,
    #[arg(long, default_value_t = 1e-7)]
    tolerance: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = experiments::DEFAULT_RUN_SEED)]
    run_seed: u64,
    #[arg(long, default_value_t = experiments::DEFAULT_DATA_SEED)]
    data_seed: u64,
    /// rebase | independent
    #[arg(long, default_value = "rebase")]
    coupling: String,
    /// pinv | wstar | two-timescale (estimator for naturalized-gd)
    #[arg(long, default_value = "pinv")]
    mode: String,
    #[arg(long, default_value_t = 0.02)]
    secondary_alpha: f64,
}

#[derive(Args, Clone)]
struct Theorem3Args {
    /// Scalar base point of the update.
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
}

#[derive(Args, Clone)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Figure1(args) => run_figure(args, true),
        Command::Figure2(args) => run_figure(args, false),
        Command::Covariance(args) => run_covariance(args),
        Command::Theorem3(args) => run_theorem3(args),
        Command::Selfcheck(args) => run_selfcheck(args),
    };
    ExitCode::from(code)
}

/// Reads a key=value config file into (key, value) pairs.
fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {} is not key=value: '{line}'", lineno + 1))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_or<T: std::str::FromStr>(value: &str, key: &str) -> Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("config value for {key} is invalid: '{value}'"))
}

/// Flags > config file > per-variant defaults.
fn resolve_config(args: &ExperimentArgs, default_variant: Variant) -> Result<ExperimentConfig, String> {
    let variant = match &args.variant {
        Some(v) => Variant::parse(v).map_err(|e| e.to_string())?,
        None => default_variant,
    };
    let mut cfg = ExperimentConfig::for_variant(variant);

    if let Some(path) = &args.config {
        for (key, value) in read_config_file(path)? {
            match key.as_str() {
                "data_seed" => cfg.data_seed = parse_or(&value, &key)?,
                "run_seed" => cfg.run_seed = parse_or(&value, &key)?,
                "alpha" => cfg.alpha = parse_or(&value, &key)?,
                "iterations" => cfg.iterations = parse_or(&value, &key)?,
                "n_data" => cfg.n_data = parse_or(&value, &key)?,
                "fisher_samples" => cfg.fisher_samples = parse_or(&value, &key)?,
                "fisher_source" => cfg.fisher_source = parse_fisher_source(&value)?,
                "mode" => apply_mode(&mut cfg, &value, None)?,
                "k_list" | "k" => {
                    cfg.k_list = value
                        .split(',')
                        .map(|s| parse_or(s.trim(), "k"))
                        .collect::<Result<_, _>>()?;
                }
                "true_mu" => cfg.true_mu = parse_or(&value, &key)?,
                "true_var" => cfg.true_var = parse_or(&value, &key)?,
                "start_mu" => cfg.start_mu = parse_or(&value, &key)?,
                "start_var" => cfg.start_var = parse_or(&value, &key)?,
                "subsample" => cfg.subsample = parse_or(&value, &key)?,
                "full_resolution" => cfg.full_resolution = parse_or(&value, &key)?,
                other => return Err(format!("unknown config key '{other}'")),
            }
        }
    }

    if let Some(v) = args.data_seed {
        cfg.data_seed = v;
    }
    if let Some(v) = args.run_seed {
        cfg.run_seed = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = &args.k {
        cfg.k_list = v.clone();
    }
    if let Some(v) = args.n_data {
        cfg.n_data = v;
        if cfg.variant == Variant::Fig1 && args.alpha.is_none() {
            cfg.alpha = 0.001 / v as f64;
        }
    }
    if let Some(v) = args.fisher_samples {
        cfg.fisher_samples = v;
    }
    if let Some(v) = &args.fisher_source {
        cfg.fisher_source = parse_fisher_source(v)?;
    }
    if let Some(v) = &args.mode {
        apply_mode(&mut cfg, v, args.secondary_alpha)?;
    }
    cfg.full_resolution |= args.full_resolution;
    Ok(cfg)
}

fn parse_fisher_source(s: &str) -> Result<FisherSource, String> {
    match s {
        "model" => Ok(FisherSource::Model),
        "uniform" => Ok(FisherSource::Uniform),
        other => Err(format!("unknown fisher source '{other}' (expected model|uniform)")),
    }
}

fn apply_mode(
    cfg: &mut ExperimentConfig,
    mode: &str,
    secondary_alpha: Option<f64>,
) -> Result<(), String> {
    match mode {
        "pinv" => cfg.estimator = UpdateEstimator::ExplicitPinv,
        "wstar" => {
            cfg.estimator = UpdateEstimator::DirectWStar;
            cfg.metric = Fig2Metric::MeasureGram;
            cfg.function_mode = FunctionMode::LogDensity;
        }
        "two-timescale" => {
            cfg.estimator = UpdateEstimator::TwoTimescale {
                secondary_alpha: secondary_alpha.unwrap_or(0.02),
            };
            cfg.function_mode = FunctionMode::LogDensity;
        }
        other => return Err(format!("unknown mode '{other}' (expected pinv|wstar|two-timescale)")),
    }
    Ok(())
}

fn print_config(cfg: &ExperimentConfig, out: &Path) {
    println!("# resolved configuration");
    for line in cfg.metadata_lines() {
        println!("{line}");
    }
    println!("out={}", out.display());
}

fn run_figure(args: ExperimentArgs, is_fig1: bool) -> u8 {
    let default_variant = if is_fig1 { Variant::Fig1 } else { Variant::Fig2a };
    let cfg = match resolve_config(&args, default_variant) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    if is_fig1 && cfg.variant != Variant::Fig1 {
        eprintln!("error: figure1 does not take a figure-2 variant");
        return 2;
    }
    if !is_fig1 && cfg.variant == Variant::Fig1 {
        eprintln!("error: figure2 needs --variant a..f");
        return 2;
    }
    print_config(&cfg, &args.out);

    let result = if is_fig1 {
        experiments::figure1(&cfg)
    } else {
        experiments::figure2(&cfg)
    };
    let output = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    for run in &output.runs {
        println!(
            "k={} final mu={:.6} sigma_sq={:.6} diverged={} first_passage={}",
            run.k,
            run.final_mu,
            run.final_sigma_sq,
            run.diverged,
            run.first_passage.map_or("never".into(), |i| i.to_string()),
        );
        if let Some(rank) = run.min_metric_rank {
            if rank < 2 {
                println!("k={} note: metric went rank-deficient (min rank {rank})", run.k);
            }
        }
    }
    match experiments::write_output(&args.out, &output) {
        Ok(paths) => {
            for p in &paths {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: cannot write output: {e}");
            3
        }
    }
}

fn build_pair(name: &str) -> Result<core::CongruentPair, String> {
    match name {
        "identity" => Ok(pairs::identity_gaussian(2)),
        "gaussian-k1-k2" => Ok(pairs::gaussian_pair(1, 2, DensityMode::LogDensity)),
        "gaussian-k1-k4" => Ok(pairs::gaussian_pair(1, 4, DensityMode::LogDensity)),
        "gaussian-k2-k4" => Ok(pairs::gaussian_pair(2, 4, DensityMode::LogDensity)),
        "gaussian-k4-k1" => Ok(pairs::gaussian_pair(4, 1, DensityMode::LogDensity)),
        other => Err(format!(
            "unknown pair '{other}' (expected identity|gaussian-k1-k2|gaussian-k1-k4|gaussian-k2-k4|gaussian-k4-k1)"
        )),
    }
}

fn run_covariance(args: CovarianceArgs) -> u8 {
    let pair = match build_pair(&args.pair) {
        Ok(p) => p,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let coupling = match args.coupling.as_str() {
        "rebase" => Coupling::Rebase,
        "independent" => Coupling::Independent,
        other => {
            eprintln!("error: unknown coupling '{other}'");
            return 2;
        }
    };
    let data = match GaussianData::sample_gaussian(2_000, 3.0, 3.0, args.data_seed) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let schedule = match StepSchedule::constant(args.alpha) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let base = Arc::new(GaussianBatchRule::new(
        Arc::new(data),
        schedule,
        BatchScaling::Mean,
    ));
    let rule = match args.rule.as_str() {
        "plain-gd" => RunnableRule::Plain(base),
        "naturalized-gd" => {
            let mode = match args.mode.as_str() {
                "pinv" => EstimationMode::ExplicitPinv,
                "wstar" => EstimationMode::DirectWStar,
                "two-timescale" => EstimationMode::TwoTimescale {
                    secondary_alpha: args.secondary_alpha,
                },
                other => {
                    eprintln!("error: unknown mode '{other}'");
                    return 2;
                }
            };
            let spec = match mode {
                EstimationMode::DirectWStar => MetricSpec::MeasureGram,
                _ => MetricSpec::ClosedFormFisher,
            };
            RunnableRule::Naturalized(Arc::new(naturalize(base, spec).with_mode(mode)))
        }
        other => {
            eprintln!("error: unknown rule '{other}' (expected plain-gd|naturalized-gd)");
            return 2;
        }
    };

    println!("# resolved configuration");
    println!("rule={}", args.rule);
    println!("pair={}", args.pair);
    println!("order={}", args.order);
    println!("iterations={}", args.iterations);
    println!("probes={}", args.probes);
    println!("tolerance={}", args.tolerance);
    println!("alpha={}", args.alpha);
    println!("run_seed={}", args.run_seed);
    println!("coupling={}", args.coupling);

    match check_covariance(
        &rule,
        &pair,
        args.order,
        args.iterations,
        args.probes,
        args.run_seed,
        args.tolerance,
        coupling,
    ) {
        Ok(report) => {
            println!(
                "max residual {:.3e} over {} steps ({} excluded), tolerance {:.1e}",
                report.max_residual(),
                report.residuals.len(),
                report.excluded_steps(),
                report.tolerance
            );
            if report.diverged {
                println!("trajectory diverged and was truncated");
            }
            if report.pass {
                println!("PASS");
                0
            } else {
                println!("FAIL");
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run_theorem3(args: Theorem3Args) -> u8 {
    println!("# resolved configuration");
    println!("beta={}", args.beta);
    match theorem3_verify(args.beta) {
        Ok(report) => {
            let fmt = |v: &[f64]| {
                v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ")
            };
            let fmt_sci = |v: &[f64]| {
                v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
            };
            println!("b-branch roots: {{{}}}", fmt(&report.b_branch_roots));
            println!("c-branch roots: {{{}}}", fmt(&report.c_branch_roots));
            println!("intersection:   {{{}}}", fmt(&report.intersection));
            println!(
                "dense scan clusters: {} (worst residual of reported root {:.2e})",
                fmt_sci(&report.scan_roots),
                report.max_root_residual
            );
            if report.pass {
                println!("PASS: only the trivial update satisfies all four constraints");
                0
            } else {
                println!("FAIL");
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run_selfcheck(args: SelfcheckArgs) -> u8 {
    println!("# resolved configuration");
    println!("seed={}", args.seed);
    let mut failures = 0usize;
    let mut check = |name: &str, pass: bool, detail: String| {
        if pass {
            println!("ok   {name}: {detail}");
        } else {
            println!("FAIL {name}: {detail}");
            failures += 1;
        }
    };

    // Gradient checks on every shipped parameterized function.
    let functions: Vec<Box<dyn core::ParamFunction>> = vec![
        Box::new(GaussianModel::log_density(1)),
        Box::new(GaussianModel::log_density(2)),
        Box::new(GaussianModel::log_density(3)),
        Box::new(GaussianModel::log_density(4)),
        Box::new(GaussianModel::density(1)),
        Box::new(GaussianModel::density(2)),
        Box::new(GaussianMeanModel),
    ];
    for f in &functions {
        match calculus::fd_gradient_check(f.as_ref(), 32, args.seed) {
            Ok(err) => check(
                "gradient-check",
                err < 1e-4,
                format!("{} max relative error {err:.2e}", f.label()),
            ),
            Err(e) => check("gradient-check", false, format!("{}: {e}", f.label())),
        }
    }

    // Pseudoinverse identities on random PSD matrices.
    let mut rng = rng::stream(args.seed, rng::StreamLabel::Theta);
    let mut worst_penrose = 0.0f64;
    for dim in 1..=8usize {
        for _ in 0..5 {
            let b = nalgebra::DMatrix::from_fn(dim, dim, |_, _| rng::uniform_in(&mut rng, -1.0, 1.0));
            let m_raw = 0.5 * (b.transpose() * &b + (b.transpose() * &b).transpose());
            let m = match calculus::MetricMatrix::new(m_raw.clone()) {
                Ok(m) => m,
                Err(e) => {
                    check("penrose", false, format!("construction failed: {e}"));
                    continue;
                }
            };
            let p = m.pinv();
            let scale = m_raw.norm().max(1.0);
            worst_penrose = worst_penrose
                .max((&m_raw * &p * &m_raw - &m_raw).norm() / scale)
                .max((&p * &m_raw * &p - &p).norm() / p.norm().max(1.0));
            let mp = &m_raw * &p;
            let pm = &p * &m_raw;
            worst_penrose = worst_penrose
                .max((&mp - mp.transpose()).norm() / scale)
                .max((&pm - pm.transpose()).norm() / scale);
        }
    }
    check(
        "penrose",
        worst_penrose < 1e-8,
        format!("worst relative residual {worst_penrose:.2e}"),
    );

    // Congruence, the gradient transformation identity, and the metric
    // transformation law on every shipped pair.
    let mut theta_rng = rng::stream(args.seed, rng::StreamLabel::Theta);
    let mut probe_rng = rng::stream(args.seed, rng::StreamLabel::Probe);
    for pair in pairs::shipped() {
        match core::verify_congruence(&pair, 48, args.seed) {
            Ok(report) => check(
                "congruence",
                report.pass,
                format!(
                    "{}: value {:.2e}, gradient identity {:.2e}",
                    pair.label(),
                    report.max_value_residual,
                    report.max_jacobian_property_residual
                ),
            ),
            Err(e) => check("congruence", false, format!("{}: {e}", pair.label())),
        }
        let beta = pair.sample_theta(&mut theta_rng);
        let points: Vec<core::InputPoint> = (0..32)
            .map(|_| pair.f.input_space().sample(&mut probe_rng))
            .collect();
        let joint = core::JointMeasure::uniform_diagonal(points).expect("probe joint measure");
        match metric_transformation_residual(&pair, &beta, &joint) {
            Ok(r) => check(
                "metric-transformation",
                r < 1e-8,
                format!("{}: residual {r:.2e}", pair.label()),
            ),
            Err(e) => check("metric-transformation", false, format!("{}: {e}", pair.label())),
        }
    }

    // Second-order analysis: branch roots and the empirical witness.
    match theorem3_verify(0.3) {
        Ok(report) => check(
            "second-order-roots",
            report.pass,
            format!("scan clusters {:?}", report.scan_roots),
        ),
        Err(e) => check("second-order-roots", false, e.to_string()),
    }
    match second_order_demo(Arc::new(GaussianMeanModel), 1e-2, args.seed) {
        Ok(report) => check(
            "second-order-demo",
            report.pass && !report.skipped,
            format!(
                "j=2 residuals {:.2e}/{:.2e}, halving ratios {:?}",
                report.residual_log, report.residual_half_log, report.halving_ratios
            ),
        ),
        Err(e) => check("second-order-demo", false, e.to_string()),
    }

    if failures == 0 {
        println!("selfcheck: all checks passed");
        0
    } else {
        println!("selfcheck: {failures} check(s) failed");
        1
    }
}
