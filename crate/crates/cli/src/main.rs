//! `roml` command-line front end.

mod error;
mod io;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_pcg::Pcg64;
use roml::bench::{
    brute_force_miap, detection_precision_recall, generate, generate_rank4_coords, match_identification_ratios,
    recovery_rate, GroundTruth, SyntheticSpec, DEFAULT_TRIALS,
};
use roml::embed::{laplacian_embed, AffinityMatrix, PointSet, DEFAULT_SIGMA_DES, DEFAULT_SIGMA_SPA};
use roml::features::{
    augment_box_features, normalize_features, DEFAULT_KAPPA_N, DEFAULT_KAPPA_R, DEFAULT_NORM_CONSTANT,
};
use roml::select::{detect_true_inliers, estimate_inlier_count, DEFAULT_DELTA, DEFAULT_XI};
use roml::solver::{assemble_d, Tracking};
use roml::{FeatureSet, MatchReport, RomlConfig, StackingMode};
use serde_json::{json, Value};

use crate::error::{CliError, EXIT_USAGE};
use crate::io::{load_dataset, save_dataset, save_matrix, Dataset, ModeName};
use crate::report::{ppm_lists, solve_summary, ConfigEcho, Report};

/// Default weight given to the first image when tracking.
const DEFAULT_EMPHASIS: f64 = 2.0;

#[derive(Debug, Parser)]
#[command(name = "roml", version, about = "Joint inlier selection and matching across feature sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select and match n inliers per image of a dataset.
    Solve(SolveArgs),
    /// Run seeded synthetic trials and report recovery rates.
    Simulate(SimulateArgs),
    /// Estimate the number of inliers per image.
    EstimateN(EstimateArgs),
    /// Match, then flag which selected features are genuine inliers.
    DetectInliers(DetectArgs),
    /// Embed points with coordinates and descriptors into joint features.
    Embed(EmbedArgs),
    /// Exhaustively solve a tiny instance.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum LambdaArg {
    Auto,
    Value(f64),
}

impl FromStr for LambdaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(Self::Value(v)),
            _ => Err(format!("expected 'auto' or a positive number, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ModeArg {
    Descriptor,
    Coordinate,
}

impl From<ModeArg> for ModeName {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Descriptor => ModeName::Descriptor,
            ModeArg::Coordinate => ModeName::Coordinate,
        }
    }
}

/// Solver options shared by every command that runs the matcher.
#[derive(Debug, Clone, Args)]
struct SolverArgs {
    /// Sparsity weight: `auto` or a positive number.
    #[arg(long, default_value = "auto")]
    lambda: LambdaArg,
    /// Initial penalty (mode default when omitted).
    #[arg(long)]
    rho0: Option<f64>,
    /// Penalty growth factor per iteration (mode default when omitted).
    #[arg(long)]
    rho_factor: Option<f64>,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    /// Relative primal residual required to stop.
    #[arg(long, default_value_t = 1e-7)]
    primal_tol: f64,
    /// Unchanged iterations of the selections required to stop.
    #[arg(long, default_value_t = 50)]
    stable_iters: usize,
    /// Stacking mode (manifest setting when omitted).
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Column norm applied to descriptor features.
    #[arg(long, default_value_t = DEFAULT_NORM_CONSTANT)]
    norm_constant: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for the per-image assignment subproblems.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

impl SolverArgs {
    fn config(&self, n: usize, mode: StackingMode) -> Result<RomlConfig, CliError> {
        let base = match mode {
            StackingMode::Descriptor => RomlConfig::descriptor(n),
            StackingMode::Coordinate => RomlConfig::coordinate(n),
        };
        if self.parallel == 0 {
            return Err(CliError::input("--parallel must be at least 1"));
        }
        if !(self.norm_constant.is_finite() && self.norm_constant > 0.0) {
            return Err(CliError::input("--norm-constant must be positive"));
        }
        Ok(RomlConfig {
            lambda: match self.lambda {
                LambdaArg::Auto => None,
                LambdaArg::Value(v) => Some(v),
            },
            rho0: self.rho0.unwrap_or(base.rho0),
            rho_factor: self.rho_factor.unwrap_or(base.rho_factor),
            max_iters: self.max_iters,
            primal_tol: self.primal_tol,
            stable_iters: self.stable_iters,
            seed: self.seed,
            threads: self.parallel,
            ..base
        })
    }

    fn mode_or(&self, manifest: ModeName) -> StackingMode {
        self.mode.map_or(manifest, ModeName::from).into()
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Inliers to select per image.
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Keep the first image's ground-truth selection fixed.
    #[arg(long)]
    track: bool,
    /// Norm multiplier of the first image when tracking.
    #[arg(long, default_value_t = DEFAULT_EMPHASIS)]
    emphasis: f64,
    /// Treat features as box descriptors: append weighted aspect ratios,
    /// perturb by objectness, and select one box per image.
    #[arg(long)]
    col: bool,
    #[arg(long, default_value_t = DEFAULT_KAPPA_R)]
    kappa_r: f64,
    #[arg(long, default_value_t = DEFAULT_KAPPA_N)]
    kappa_n: f64,
    /// Report path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of images.
    #[arg(long = "K", default_value_t = 30)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    d: usize,
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Outliers per image.
    #[arg(long, default_value_t = 0)]
    outliers: usize,
    /// Fraction of entries per vector hit by sparse errors.
    #[arg(long, default_value_t = 0.0)]
    err: f64,
    /// Fraction of inliers per image replaced by outliers.
    #[arg(long, default_value_t = 0.0)]
    missing: f64,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    /// Generate 2D point tracks of a rigid shape instead of descriptors.
    #[arg(long)]
    coords: bool,
    /// Inlier noise level for `--coords`, in pixels.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Also write the first trial's dataset to this directory.
    #[arg(long)]
    write_dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Largest count tried (smallest image size when omitted).
    #[arg(long)]
    n_max: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    n: usize,
    /// Error-block threshold on the unit-norm scale.
    #[arg(long, default_value_t = DEFAULT_XI)]
    xi: f64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Manifest whose images list both descriptors and coordinates.
    #[arg(long)]
    manifest: PathBuf,
    /// Embedding dimension.
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA_SPA)]
    sigma_spa: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA_DES)]
    sigma_des: f64,
    /// Directory receiving the embedded features and their manifest.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, default_value_t = DEFAULT_NORM_CONSTANT)]
    norm_constant: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let start = Instant::now();
    let (report, summary, out) = match command {
        Command::Solve(a) => {
            let (r, s) = solve(&a)?;
            (r, s, a.out)
        }
        Command::Simulate(a) => {
            let (r, s) = simulate(&a)?;
            (r, s, a.out)
        }
        Command::EstimateN(a) => {
            let (r, s) = estimate(&a)?;
            (r, s, a.out)
        }
        Command::DetectInliers(a) => {
            let (r, s) = detect(&a)?;
            (r, s, a.out)
        }
        Command::Embed(a) => {
            let (r, s) = embed(&a)?;
            (r, s, a.out)
        }
        Command::Oracle(a) => {
            let (r, s) = oracle(&a)?;
            (r, s, a.out)
        }
    };
    let report = report.finish(start.elapsed().as_secs_f64());
    match out {
        Some(path) => {
            report.write(&path)?;
            println!("{summary}");
        }
        None => {
            println!("{}", report.to_json());
            eprintln!("{summary}");
        }
    }
    Ok(())
}

/// Normalizes descriptor features to `c`; coordinate features pass through.
fn prepare(sets: &[FeatureSet], mode: StackingMode, c: f64) -> Result<Vec<FeatureSet>, CliError> {
    match mode {
        StackingMode::Descriptor => Ok(sets
            .iter()
            .map(|fs| normalize_features(fs, c))
            .collect::<roml::Result<Vec<_>>>()?),
        StackingMode::Coordinate => Ok(sets.to_vec()),
    }
}

fn truth_metrics(report: &MatchReport, truth: Option<&GroundTruth>) -> Result<Value, CliError> {
    let Some(truth) = truth else {
        return Ok(Value::Null);
    };
    let (mr, ir) = match_identification_ratios(&report.ppms, truth)?;
    let mut out = json!({ "match_ratio": mr, "identification_ratio": ir });
    if truth.ppms[0].n_targets() == report.ppms[0].n_targets() {
        out["recovery_rate"] = json!(recovery_rate(&report.ppms, &truth.ppms)?);
    }
    Ok(out)
}

fn box_features(
    data: &Dataset,
    kappa_r: f64,
    kappa_n: f64,
    seed: u64,
) -> Result<Vec<FeatureSet>, CliError> {
    let mut rng = Pcg64::seed_from_u64(seed);
    data.sets
        .iter()
        .zip(&data.manifest.images)
        .map(|(fs, entry)| {
            let (Some(aspect), Some(obj)) = (&entry.aspect_ratios, &entry.objectness) else {
                return Err(CliError::input(format!(
                    "image '{}' needs aspect_ratios and objectness for --col",
                    entry.id
                )));
            };
            let unit = normalize_features(fs, 1.0)?;
            Ok(augment_box_features(&unit, aspect, obj, kappa_r, kappa_n, &mut rng)?)
        })
        .collect()
}

fn solve(a: &SolveArgs) -> Result<(Report, String), CliError> {
    let data = load_dataset(&a.manifest)?;
    let mode = a.solver.mode_or(data.manifest.mode);
    let n = match (a.col, a.n) {
        (true, None | Some(1)) => 1,
        (true, Some(n)) => return Err(CliError::input(format!("--col selects one box per image, got --n {n}"))),
        (false, Some(n)) => n,
        (false, None) => return Err(CliError::input("--n is required")),
    };
    if a.col && mode != StackingMode::Descriptor {
        return Err(CliError::input("--col needs descriptor mode"));
    }
    let raw = if a.col {
        box_features(&data, a.kappa_r, a.kappa_n, a.solver.seed)?
    } else {
        data.sets.clone()
    };
    let sets = prepare(&raw, mode, a.solver.norm_constant)?;
    let mut config = a.solver.config(n, mode)?;
    if a.track {
        let truth = data
            .truth
            .as_ref()
            .ok_or_else(|| CliError::input("--track needs ground truth for the first image"))?;
        if truth.ppms[0].n_targets() != n {
            return Err(CliError::input(format!(
                "--track: the first image lists {} inliers but --n is {n}",
                truth.ppms[0].n_targets()
            )));
        }
        config.tracking = Some(Tracking {
            fixed_first: truth.ppms[0].clone(),
            emphasis_factor: a.emphasis,
        });
    }
    let report = roml::solve_roml(&sets, &config)?;
    let d = sets[0].dim();
    let metrics = json!({
        "converged": report.converged,
        "iterations": report.iterations_used,
        "relative_primal": report.relative_primal(),
        "truth": truth_metrics(&report, data.truth.as_ref())?,
    });
    let summary = solve_summary("solve", &report, &metrics);
    let echo = ConfigEcho::new(&config, report.lambda, a.solver.norm_constant, mode)
        .with("emphasis", a.emphasis)
        .with("kappa_r", a.kappa_r)
        .with("kappa_n", a.kappa_n)
        .with("track", a.track)
        .with("col", a.col)
        .with("d", d);
    let ids: Vec<&str> = data.manifest.images.iter().map(|e| e.id.as_str()).collect();
    let r = Report::new("solve", echo)
        .field("ppms", ppm_lists(&ids, &report.ppms))
        .field("residual_history", report::residual_series(&report))
        .field("objective_history", json!(report.objective_history))
        .field("metrics", metrics);
    Ok((r, summary))
}

fn simulate(a: &SimulateArgs) -> Result<(Report, String), CliError> {
    if a.trials == 0 {
        return Err(CliError::input("--trials must be at least 1"));
    }
    let mode = if a.coords {
        StackingMode::Coordinate
    } else {
        a.solver.mode.map_or(ModeName::Descriptor, ModeName::from).into()
    };
    if a.coords != (mode == StackingMode::Coordinate) {
        return Err(CliError::input("--mode coordinate needs --coords"));
    }
    let config = a.solver.config(a.n, mode)?;
    let mut trials = Vec::with_capacity(a.trials);
    let mut rates = Vec::with_capacity(a.trials);
    let mut lambda = 0.0;
    for t in 0..a.trials {
        let seed = a.solver.seed + t as u64;
        let (sets, truth) = if a.coords {
            generate_rank4_coords(a.k, a.n, a.outliers, a.noise, seed)?
        } else {
            let spec = SyntheticSpec::new(a.k, a.n, a.n + a.outliers, a.d)
                .with_sparse_errors(a.err)
                .with_missing(a.missing)
                .with_norm_constant(a.solver.norm_constant)
                .with_seed(seed);
            generate(&spec)?
        };
        if t == 0 {
            if let Some(dir) = &a.write_dataset {
                save_dataset(dir, &sets, ModeName::from_mode(mode), Some(&truth))?;
            }
        }
        let report = roml::solve_roml(&sets, &RomlConfig { seed, ..config.clone() })?;
        lambda = report.lambda;
        let rate = recovery_rate(&report.ppms, &truth.ppms)?;
        rates.push(rate);
        trials.push(json!({
            "seed": seed,
            "recovery_rate": rate,
            "converged": report.converged,
            "iterations": report.iterations_used,
            "relative_primal": report.relative_primal(),
        }));
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let d = if a.coords { 2 } else { a.d };
    let echo = ConfigEcho::new(&config, lambda, a.solver.norm_constant, mode)
        .with("K", a.k)
        .with("d", d)
        .with("outliers", a.outliers)
        .with("err", a.err)
        .with("missing", a.missing)
        .with("trials", a.trials)
        .with("noise", a.noise);
    let summary = format!(
        "simulate: mean recovery rate {mean:.4} over {} trials (K={}, n={}, outliers={}, err={})",
        a.trials, a.k, a.n, a.outliers, a.err
    );
    let r = Report::new("simulate", echo)
        .field("trials", json!(trials))
        .field("metrics", json!({ "mean_recovery_rate": mean }));
    Ok((r, summary))
}

fn estimate(a: &EstimateArgs) -> Result<(Report, String), CliError> {
    let data = load_dataset(&a.manifest)?;
    let mode = a.solver.mode_or(data.manifest.mode);
    if mode != StackingMode::Descriptor {
        return Err(CliError::input("estimate-n needs descriptor mode"));
    }
    let sets = prepare(&data.sets, mode, a.solver.norm_constant)?;
    let config = a.solver.config(1, mode)?;
    let est = estimate_inlier_count(&sets, &config, a.delta, a.n_max)?;
    let lambda = config.resolved_lambda(sets[0].dim(), sets.len());
    let echo = ConfigEcho::new(&config, lambda, a.solver.norm_constant, mode)
        .with("delta", a.delta)
        .with("n_max", a.n_max);
    let summary = if est.found {
        format!("estimate-n: n_hat = {} (gamma series of length {})", est.n_hat, est.gamma_series.len())
    } else {
        format!("estimate-n: no jump found up to n = {}", est.n_hat)
    };
    let r = Report::new("estimate-n", echo).field(
        "metrics",
        json!({ "n_hat": est.n_hat, "found": est.found, "gamma_series": est.gamma_series }),
    );
    Ok((r, summary))
}

fn detect(a: &DetectArgs) -> Result<(Report, String), CliError> {
    let data = load_dataset(&a.manifest)?;
    let mode = a.solver.mode_or(data.manifest.mode);
    if mode != StackingMode::Descriptor {
        return Err(CliError::input("detect-inliers needs descriptor mode"));
    }
    let sets = prepare(&data.sets, mode, a.solver.norm_constant)?;
    let config = a.solver.config(a.n, mode)?;
    let report = roml::solve_roml(&sets, &config)?;
    let mask = detect_true_inliers(&report.d, sets[0].dim(), a.n, a.xi)?;
    let pr = match &data.truth {
        Some(t) => {
            let (p, r) = detection_precision_recall(&mask, t, &report.ppms)?;
            json!({ "precision": p, "recall": r })
        }
        None => Value::Null,
    };
    let ids: Vec<&str> = data.manifest.images.iter().map(|e| e.id.as_str()).collect();
    let inliers: Vec<Value> = ids
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let sources: Vec<usize> = (0..a.n)
                .filter(|&j| mask.detected[j][k])
                .map(|j| report.ppms[k].source(j))
                .collect();
            json!({ "image": id, "sources": sources })
        })
        .collect();
    let summary = format!(
        "detect-inliers: {} of {} selected features flagged as inliers",
        mask.detected_count(),
        a.n * sets.len()
    );
    let echo = ConfigEcho::new(&config, report.lambda, a.solver.norm_constant, mode).with("xi", a.xi);
    let r = Report::new("detect-inliers", echo)
        .field("ppms", ppm_lists(&ids, &report.ppms))
        .field("inliers", json!(inliers))
        .field("error_l1", json!(mask.error_l1))
        .field(
            "metrics",
            json!({
                "converged": report.converged,
                "rpca_converged": mask.converged,
                "detected": mask.detected_count(),
                "truth": pr,
            }),
        );
    Ok((r, summary))
}

fn embed(a: &EmbedArgs) -> Result<(Report, String), CliError> {
    let data = load_dataset(&a.manifest)?;
    let points = data
        .sets
        .iter()
        .zip(&data.coords)
        .zip(&data.manifest.images)
        .map(|((fs, c), entry)| {
            let coords = c
                .clone()
                .ok_or_else(|| CliError::input(format!("image '{}' has no coord_file", entry.id)))?;
            Ok(PointSet::new(coords, fs.features().clone())?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let affinity = AffinityMatrix::build(&points, a.sigma_spa, a.sigma_des)?;
    let emb = laplacian_embed(&affinity, a.dim)?;
    let sets: Vec<FeatureSet> = emb
        .feature_sets()?
        .into_iter()
        .zip(&data.manifest.images)
        .map(|(fs, entry)| FeatureSet::new(fs.features().clone(), entry.id.clone()))
        .collect::<roml::Result<_>>()?;
    let manifest = save_dataset(&a.out_dir, &sets, ModeName::Descriptor, data.truth.as_ref())?;
    save_matrix(&a.out_dir.join("eigenvalues.csv"), &roml::prox::DenseMatrix::from_row_slice(1, emb.eigenvalues.len(), &emb.eigenvalues))?;
    let echo = json!({
        "dim": a.dim,
        "sigma_spa": a.sigma_spa,
        "sigma_des": a.sigma_des,
    });
    let summary = format!("embed: {} points embedded in {} dimensions, manifest {}", emb.coords.nrows(), a.dim, display(&manifest));
    let r = Report::with_config("embed", echo)
        .field("eigenvalues", json!(emb.eigenvalues))
        .field("manifest", json!(display(&manifest)));
    Ok((r, summary))
}

fn oracle(a: &OracleArgs) -> Result<(Report, String), CliError> {
    let data = load_dataset(&a.manifest)?;
    let mode: StackingMode = a.mode.map_or(data.manifest.mode, ModeName::from).into();
    let sets = prepare(&data.sets, mode, a.norm_constant)?;
    let (ppms, optimum) = brute_force_miap(&sets, a.n, mode)?;
    let ids: Vec<&str> = data.manifest.images.iter().map(|e| e.id.as_str()).collect();
    let check = roml::prox::nuclear_norm(&assemble_d(&sets, &ppms, mode)?)?;
    let echo = json!({
        "n": a.n,
        "mode": ModeName::from_mode(mode),
        "norm_constant": a.norm_constant,
    });
    let summary = format!("oracle: optimal nuclear norm {optimum:.6}");
    let r = Report::with_config("oracle", echo)
        .field("ppms", ppm_lists(&ids, &ppms))
        .field("metrics", json!({ "optimal_nuclear": optimum, "recomputed_nuclear": check }));
    Ok((r, summary))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
