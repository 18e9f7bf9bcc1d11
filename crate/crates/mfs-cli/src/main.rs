//! Command-line front end for minimal-forcing-subset workflows.
//!
//! Four subcommands: `explain` builds the forcing subset for one decision,
//! `debug` runs the label-noise precision/recall experiment, `poison` the
//! size-collapse experiment, and `bound` the removal-effect bound check.
//! Every run writes machine-readable artifacts plus a manifest that echoes
//! the fully resolved configuration; identical configurations reproduce
//! byte-identical artifacts.
//!
//! Exit codes: 0 success, 2 usage error, 3 decision did not flip, 4 numeric
//! failure, 5 in-run assertion failed.

// Hyperparameter guards use negated comparisons so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use mfs_core::data;
use mfs_core::harness::{self, DebugParams, PoisonParams};
use mfs_core::mfs::{construct_mfs, MfsConfig, UpdateMode};
use mfs_core::model::{self, Claim, Dataset, ModelParams};
use mfs_core::solver;
use mfs_core::Error;

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 2;
const EXIT_NO_FLIP: u8 = 3;
const EXIT_ASSERT: u8 = 5;

#[derive(Parser)]
#[command(
    name = "mfs",
    version,
    about = "Explain classifier decisions by minimal forcing subsets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Construct the forcing subset for one decision and write its artifacts
    Explain(ExplainArgs),
    /// Label-noise debugging experiment against a random baseline
    Debug(DebugArgs),
    /// Poison-injection experiment measuring forcing-set collapse
    Poison(PoisonArgs),
    /// Empirical check of the removal-effect stability bound
    Bound(BoundArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Output directory (default: $MFS_OUT_DIR or ./mfs-out)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Validate flags, print the resolved configuration, and write nothing
    #[arg(long)]
    dry_run: bool,
}

impl CommonArgs {
    fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os("MFS_OUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("mfs-out"))
    }
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Generate a synthetic dataset
    #[arg(long, value_parser = ["halfmoon", "bow"])]
    gen: Option<String>,
    /// Load a CSV dataset instead of generating one
    #[arg(long, conflicts_with = "gen")]
    data: Option<PathBuf>,
    /// Label column name for --data
    #[arg(long, default_value = "label")]
    label_col: String,
    /// Sample count for generators
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Gaussian jitter for the halfmoon generator
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    /// Vocabulary size for the bag-of-words generator
    #[arg(long, default_value_t = 50)]
    vocab: usize,
}

fn resolve_source(src: &SourceArgs, seed: u64) -> Result<(Dataset, serde_json::Value), Error> {
    match (&src.gen, &src.data) {
        (Some(gen), None) => {
            let (ds, echo) = match gen.as_str() {
                "halfmoon" => (
                    data::gen_halfmoon(src.n, src.noise, seed)?,
                    json!({"gen": "halfmoon", "n": src.n, "noise": src.noise, "seed": seed}),
                ),
                "bow" => (
                    data::gen_bow_spamlike(src.n, src.vocab, seed)?,
                    json!({"gen": "bow", "n": src.n, "vocab": src.vocab, "seed": seed}),
                ),
                other => return Err(Error::InvalidParam(format!("unknown generator {other:?}"))),
            };
            Ok((ds, echo))
        }
        (None, Some(path)) => {
            let ds = data::load_csv(path, &src.label_col)?;
            let echo = json!({"data": path.display().to_string(), "label_col": src.label_col});
            Ok((ds, echo))
        }
        _ => Err(Error::InvalidParam(
            "exactly one of --gen or --data is required".into(),
        )),
    }
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Target selector: misclassified:first, row:K, or point:v1,v2,...
    #[arg(long, default_value = "misclassified:first")]
    target: String,
    #[arg(long, default_value_t = 0.4, allow_negative_numbers = true)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4, allow_negative_numbers = true)]
    delta: f64,
    #[arg(long, default_value = "newton-approx", value_parser = parse_update_mode)]
    update_mode: UpdateMode,
    #[arg(long, default_value_t = 20)]
    inner_iters: usize,
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    alpha: f64,
    /// Cap on the subset size (default: quarter of the dataset)
    #[arg(long)]
    max_set_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct DebugArgs {
    /// Flip fractions in (0, 0.5], comma separated
    #[arg(
        long = "flip",
        value_delimiter = ',',
        default_value = "0.1,0.2,0.3",
        allow_negative_numbers = true
    )]
    flip_fractions: Vec<f64>,
    /// Seeds, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 280)]
    n: usize,
    #[arg(long, default_value_t = 26)]
    vocab: usize,
    #[arg(long, default_value_t = 0.02, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, default_value_t = 0.25, allow_negative_numbers = true)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.55, allow_negative_numbers = true)]
    confidence_threshold: f64,
    #[arg(long, default_value_t = 10)]
    max_targets: usize,
    /// Budget on the pooled suspicious set
    #[arg(long, default_value_t = 30)]
    top_k: usize,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct PoisonArgs {
    /// Number of attacked targets
    #[arg(long, default_value_t = 10)]
    targets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Size of each generated blob dataset
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Distance between the two blob centers
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    separation: f64,
    /// Standard deviation of each blob
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    spread: f64,
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, default_value_t = 0.25, allow_negative_numbers = true)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
    radius: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Regularization strengths, comma separated
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,1,10",
        allow_negative_numbers = true
    )]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: CommonArgs,
}

fn parse_update_mode(s: &str) -> Result<UpdateMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::TrainingDidNotConverge { .. }
        | Error::SingularSystem
        | Error::DegenerateConstraint { .. }
        | Error::NumericalFailure(_) => 4,
        _ => EXIT_USAGE,
    }
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    resolved_config: serde_json::Value,
    seed: u64,
    artifact_paths: Vec<String>,
    tool_version: String,
}

/// Write the manifest naming every artifact of the run, itself included.
fn write_manifest(
    out_dir: &Path,
    command: &str,
    resolved_config: serde_json::Value,
    seed: u64,
    artifacts: &[&str],
) -> Result<(), Error> {
    let mut artifact_paths: Vec<String> = artifacts.iter().map(|s| s.to_string()).collect();
    artifact_paths.push("manifest.json".into());
    let manifest = RunManifest {
        command: command.into(),
        resolved_config,
        seed,
        artifact_paths,
        tool_version: env!("CARGO_PKG_VERSION").into(),
    };
    harness::write_json(&manifest, &out_dir.join("manifest.json"))
}

fn print_dry_run(resolved: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(resolved).expect("config serializes")
    );
}

fn resolve_target(selector: &str, ds: &Dataset, params: &ModelParams) -> Result<Vec<f64>, Error> {
    if let Some(rest) = selector.strip_prefix("row:") {
        let id: usize = rest
            .parse()
            .map_err(|_| Error::InvalidParam(format!("invalid row index {rest:?}")))?;
        let inst = ds.get(id).ok_or_else(|| {
            Error::InvalidParam(format!(
                "row {id} out of range (dataset has {} rows)",
                ds.len()
            ))
        })?;
        return Ok(inst.features.clone());
    }
    if let Some(rest) = selector.strip_prefix("point:") {
        let coords: Result<Vec<f64>, _> = rest.split(',').map(|v| v.trim().parse()).collect();
        let coords: Vec<f64> =
            coords.map_err(|_| Error::InvalidParam(format!("invalid point {rest:?}")))?;
        if coords.len() != ds.dim() {
            return Err(Error::Shape {
                expected: ds.dim(),
                got: coords.len(),
            });
        }
        return Ok(coords);
    }
    if selector == "misclassified:first" {
        for inst in ds.active_instances() {
            if model::predict_class(params, &inst.features)? != inst.label {
                return Ok(inst.features.clone());
            }
        }
        return Err(Error::InvalidParam(
            "no misclassified instance; pick a target with row: or point:".into(),
        ));
    }
    Err(Error::InvalidParam(format!(
        "unknown target selector {selector:?} (use misclassified:first, row:K, or point:v1,v2,...)"
    )))
}

fn write_trajectory_csv(path: &Path, trajectory: &[f64]) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(mfs_core::Error::from)?;
    w.write_record(["step", "confidence"])?;
    for (step, conf) in trajectory.iter().enumerate() {
        w.write_record([step.to_string(), format!("{conf}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Probability-of-class-1 surface on a 50x50 grid padded 0.5 beyond the data
/// range, under the initial and the post-removal (retrained) parameters.
fn write_boundary_grid(
    path: &Path,
    ds: &Dataset,
    initial: &ModelParams,
    retrained: &ModelParams,
) -> Result<(), Error> {
    const CELLS: usize = 50;
    const PAD: f64 = 0.5;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for inst in ds.active_instances() {
        for j in 0..2 {
            lo[j] = lo[j].min(inst.features[j]);
            hi[j] = hi[j].max(inst.features[j]);
        }
    }
    let axis = |j: usize, i: usize| {
        lo[j] - PAD + (hi[j] - lo[j] + 2.0 * PAD) * i as f64 / (CELLS - 1) as f64
    };
    let mut w = csv::Writer::from_path(path).map_err(mfs_core::Error::from)?;
    w.write_record(["x0", "x1", "p_initial", "p_final"])?;
    for i in 0..CELLS {
        for j in 0..CELLS {
            let point = [axis(0, i), axis(1, j)];
            let p0 = model::predict_proba(initial, &point)?;
            let p1 = model::predict_proba(retrained, &point)?;
            w.write_record([
                format!("{}", point[0]),
                format!("{}", point[1]),
                format!("{p0}"),
                format!("{p1}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_explain(args: &ExplainArgs) -> Result<u8, Error> {
    if !(args.epsilon >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "epsilon must be >= 0, got {}",
            args.epsilon
        )));
    }
    if !(args.delta > 0.0) {
        return Err(Error::InvalidParam(format!(
            "delta must be > 0, got {}",
            args.delta
        )));
    }
    let (ds, source_echo) = resolve_source(&args.source, args.seed)?;
    let config = MfsConfig {
        epsilon: args.epsilon,
        delta: args.delta,
        max_set_size: args.max_set_size,
        update_mode: args.update_mode,
        inner_iters: args.inner_iters,
        alpha: args.alpha,
        ..MfsConfig::default()
    };
    config.resolved_cap(ds.active_count())?;
    let resolved = json!({
        "source": source_echo,
        "target": args.target,
        "mfs": config,
        "seed": args.seed,
    });
    if args.common.dry_run {
        print_dry_run(&resolved);
        return Ok(EXIT_OK);
    }
    let params = solver::train(&ds, config.alpha, config.train_tol, config.train_max_iter)?;
    let x_star = resolve_target(&args.target, &ds, &params)?;
    let claim = Claim::from_model(&params, x_star, config.epsilon)?;
    let result = construct_mfs(&ds, &claim, &config, args.seed)?;

    let out_dir = args.common.out_dir();
    std::fs::create_dir_all(&out_dir)?;
    harness::write_json(&result, &out_dir.join("result.json"))?;
    let trajectory = mfs_core::mfs::confidence_trajectory(&result);
    write_trajectory_csv(&out_dir.join("trajectory.csv"), &trajectory)?;
    let mut artifacts = vec!["result.json", "trajectory.csv"];
    if ds.dim() == 2 {
        let reduced = ds.without(&result.selected_ids())?;
        let retrained = solver::train(
            &reduced,
            config.alpha,
            config.train_tol.min(1e-10),
            config.train_max_iter,
        )?;
        write_boundary_grid(&out_dir.join("boundary_grid.csv"), &ds, &params, &retrained)?;
        artifacts.push("boundary_grid.csv");
    }
    write_manifest(&out_dir, "explain", resolved, args.seed, &artifacts)?;
    Ok(if result.flipped_on_retrain {
        EXIT_OK
    } else {
        eprintln!(
            "decision did not flip on retrain (log-odds toward counterfactual: {:.6})",
            result.retrain_log_odds
        );
        EXIT_NO_FLIP
    })
}

fn cmd_debug(args: &DebugArgs) -> Result<u8, Error> {
    let params = DebugParams {
        n: args.n,
        vocab: args.vocab,
        alpha: args.alpha,
        epsilon: args.epsilon,
        confidence_threshold: args.confidence_threshold,
        max_targets: args.max_targets,
        top_k: args.top_k,
    };
    for &f in &args.flip_fractions {
        if !(f > 0.0 && f <= 0.5) {
            return Err(Error::InvalidParam(format!(
                "flip fraction must be in (0, 0.5], got {f}"
            )));
        }
    }
    if args.seeds.is_empty() || args.flip_fractions.is_empty() {
        return Err(Error::InvalidParam(
            "need at least one seed and one flip fraction".into(),
        ));
    }
    let resolved = json!({
        "params": params,
        "flip_fractions": args.flip_fractions,
        "seeds": args.seeds,
    });
    if args.common.dry_run {
        print_dry_run(&resolved);
        return Ok(EXIT_OK);
    }
    let reports = harness::run_debug_experiment(&params, &args.flip_fractions, &args.seeds)?;
    let out_dir = args.common.out_dir();
    std::fs::create_dir_all(&out_dir)?;
    harness::write_json(&reports, &out_dir.join("debug.json"))?;
    harness::write_debug_csv(&reports, &out_dir.join("debug.csv"))?;
    write_manifest(
        &out_dir,
        "debug",
        resolved,
        args.seeds[0],
        &["debug.json", "debug.csv"],
    )?;

    // Stored metrics must recompute exactly from the raw id sets.
    for report in &reports {
        for metrics in [&report.mfs, &report.random] {
            let hits = metrics
                .selected_ids
                .iter()
                .filter(|id| report.flipped_ids.binary_search(id).is_ok())
                .count();
            let k = metrics.selected_ids.len();
            let precision = if k == 0 { 0.0 } else { hits as f64 / k as f64 };
            let recall = if report.flipped_ids.is_empty() {
                1.0
            } else {
                hits as f64 / report.flipped_ids.len() as f64
            };
            if metrics.precision != precision || metrics.recall != recall {
                eprintln!(
                    "assertion failed: stored metrics do not recompute (fraction {}, seed {})",
                    report.flip_fraction, report.seed
                );
                return Ok(EXIT_ASSERT);
            }
        }
    }
    Ok(EXIT_OK)
}

fn cmd_poison(args: &PoisonArgs) -> Result<u8, Error> {
    let params = PoisonParams {
        n: args.n,
        separation: args.separation,
        spread: args.spread,
        alpha: args.alpha,
        epsilon: args.epsilon,
        radius: args.radius,
    };
    if !(params.radius > 0.0) {
        return Err(Error::InvalidParam(format!(
            "radius must be > 0, got {}",
            params.radius
        )));
    }
    let resolved = json!({
        "params": params,
        "targets": args.targets,
        "seed": args.seed,
    });
    if args.common.dry_run {
        print_dry_run(&resolved);
        return Ok(EXIT_OK);
    }
    let outcomes = harness::run_poison_experiment(args.targets, &params, args.seed)?;
    let out_dir = args.common.out_dir();
    std::fs::create_dir_all(&out_dir)?;
    harness::write_json(&outcomes, &out_dir.join("poison.json"))?;
    harness::write_poison_csv(&outcomes, &out_dir.join("poison.csv"))?;
    write_manifest(
        &out_dir,
        "poison",
        resolved,
        args.seed,
        &["poison.json", "poison.csv"],
    )?;

    // Among successful attacks the forcing set must shrink on average.
    let successes: Vec<_> = outcomes.iter().filter(|o| !o.attack_failed).collect();
    if !successes.is_empty() {
        let mean_clean: f64 =
            successes.iter().map(|o| o.size_clean as f64).sum::<f64>() / successes.len() as f64;
        let mean_poisoned: f64 = successes
            .iter()
            .map(|o| o.size_poisoned.unwrap_or(0) as f64)
            .sum::<f64>()
            / successes.len() as f64;
        if mean_poisoned >= mean_clean {
            eprintln!(
                "assertion failed: mean poisoned size {mean_poisoned:.2} did not drop below mean clean size {mean_clean:.2}"
            );
            return Ok(EXIT_ASSERT);
        }
    }
    Ok(EXIT_OK)
}

fn cmd_bound(args: &BoundArgs) -> Result<u8, Error> {
    for &alpha in &args.alphas {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParam(format!(
                "alpha must be > 0, got {alpha}"
            )));
        }
    }
    let (ds, source_echo) = resolve_source(&args.source, args.seed)?;
    let resolved = json!({
        "source": source_echo,
        "alphas": args.alphas,
        "seed": args.seed,
    });
    if args.common.dry_run {
        print_dry_run(&resolved);
        return Ok(EXIT_OK);
    }
    let estimates = harness::check_bound(&ds, &args.alphas)?;
    let out_dir = args.common.out_dir();
    std::fs::create_dir_all(&out_dir)?;
    harness::write_json(&estimates, &out_dir.join("bound.json"))?;
    harness::write_bound_csv(&estimates, &out_dir.join("bound.csv"))?;
    write_manifest(
        &out_dir,
        "bound",
        resolved,
        args.seed,
        &["bound.json", "bound.csv"],
    )?;

    let mut code = EXIT_OK;
    for est in &estimates {
        if est.violated() {
            eprintln!(
                "assertion failed: bound violated at alpha {}: observed {:.6e} > bound {:.6e} (instance {})",
                est.alpha, est.observed_error, est.bound_value, est.worst_instance_id
            );
            code = EXIT_ASSERT;
        }
    }
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_OK
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Explain(args) => cmd_explain(args),
        Command::Debug(args) => cmd_debug(args),
        Command::Poison(args) => cmd_poison(args),
        Command::Bound(args) => cmd_bound(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
