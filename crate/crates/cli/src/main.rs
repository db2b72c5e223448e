//! `ensloss` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use ensloss::derivgen::{generate_rc_derivatives, GenConfig, MarginBatch};
use ensloss::evaluation::bench::{run_benchmark, BenchConfig};
use ensloss::losses::{builtin_loss, check_loss, psi_transform, AlphaSearch, FiniteLossMixture};
use ensloss::manifest::{resolve_layers, write_atomic, KvMap, Precision, RunManifest, RunSpec, SEED_ENV};
use ensloss::models::{write_checkpoint, Mlp};
use ensloss::trainer::{train, RunRecord};
use ensloss::{BoxCoxParam, Error, Rng, Scalar};

#[derive(Parser)]
#[command(name = "ensloss", version, about = "Stochastic calibrated loss ensembles for binary classification")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write its run record, checkpoint and manifest.
    Train(TrainArgs),
    /// Check a builtin loss for calibration, boundedness and the tail condition.
    CheckLoss(CheckLossArgs),
    /// Draw one random RC derivative batch and print it as CSV.
    GenDerivs(GenDerivsArgs),
    /// Run a datasets x methods x seeds benchmark with paired t-tests.
    Bench(BenchArgs),
    /// Tabulate the psi-transform of an exponential/logistic(2z) mixture.
    Psi(PsiArgs),
}

/// Run settings shared by `train` and `bench`. Flags override `ENSLOSS_SEED`,
/// which overrides the config file.
#[derive(Args, Default)]
struct RunFlags {
    /// Flat `key = value` config file (a manifest also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// `ensloss` or `fixed:<loss>`.
    #[arg(long)]
    mode: Option<String>,
    /// `blobs`, `sparse`, a CSV file or a `.bin` dataset cache.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// `constant`, `cosine` or `step:<m1,m2>@<factor>`.
    #[arg(long)]
    lr_schedule: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Box-Cox exponent of the derivative draws.
    #[arg(long)]
    lambda: Option<f64>,
    /// Resample lambda from `lambda_pool` every T epochs.
    #[arg(long = "resample-T")]
    resample_t: Option<usize>,
    /// Hidden layer widths, e.g. `64,64`; empty for a linear model.
    #[arg(long)]
    hidden: Option<String>,
    /// `f32` or `f64`.
    #[arg(long)]
    precision: Option<String>,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunFlags {
    fn to_kv(&self) -> anyhow::Result<KvMap> {
        let mut kv = KvMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.set(k, v);
            }
        };
        put("mode", self.mode.clone());
        put("data", self.data.clone());
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("lr_schedule", self.lr_schedule.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("weight_decay", self.weight_decay.map(|v| v.to_string()));
        put("dropout", self.dropout.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("resample_T", self.resample_t.map(|v| v.to_string()));
        put("hidden", self.hidden.clone());
        put("precision", self.precision.clone());
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }

    fn resolve(&self) -> anyhow::Result<KvMap> {
        let file = self.config.as_deref().map(KvMap::load).transpose()?;
        let env_seed = std::env::var(SEED_ENV).ok();
        Ok(resolve_layers(file.as_ref(), env_seed.as_deref(), &self.to_kv()?))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Output directory.
    #[arg(long, default_value = "ensloss-run")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckLossArgs {
    /// Builtin loss name.
    loss: String,
    /// Tail exponent p of the raising-tail condition.
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// Start of the tail region.
    #[arg(long, default_value_t = 1.0)]
    z0: f64,
    /// Grid points of the tail scan.
    #[arg(long, default_value_t = 400)]
    grid: usize,
    /// Print the certificate as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenDerivsArgs {
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Standard deviation of the random margins.
    #[arg(long, default_value_t = 3.0)]
    margin_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Comma-separated datasets.
    #[arg(long)]
    datasets: Option<String>,
    /// Comma-separated modes, e.g. `ensloss,fixed:bce,fixed:hinge`.
    #[arg(long)]
    methods: Option<String>,
    /// Seeds, e.g. `0-9`.
    #[arg(long)]
    seeds: Option<String>,
    /// `final_test_acc` or `best_test_acc`.
    #[arg(long)]
    metric: Option<String>,
    /// Parallel training cells.
    #[arg(long)]
    jobs: Option<usize>,
    /// Print the cell matrix without training.
    #[arg(long)]
    dry_run: bool,
    #[arg(long, default_value = "ensloss-bench")]
    out: PathBuf,
}

#[derive(Args)]
struct PsiArgs {
    /// Weight of the exponential loss; logistic(2z) gets the rest.
    #[arg(long, default_value_t = 0.5)]
    pi1: f64,
    /// Number of theta grid points in (0, 1].
    #[arg(long, default_value_t = 10)]
    points: usize,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn usage(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, err: err.into() }
}

fn runtime(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: err.into() }
}

/// Configuration problems are usage errors; everything else is a runtime failure.
fn classify(err: anyhow::Error) -> Failure {
    let code = match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::UnknownLoss { .. } | Error::Format { .. }) => 1,
        _ => 2,
    };
    Failure { code, err }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::CheckLoss(a) => cmd_check_loss(a),
        Command::GenDerivs(a) => cmd_gen_derivs(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Psi(a) => cmd_psi(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    write_atomic(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let kv = args.run.resolve().map_err(classify)?;
    let spec = RunSpec::from_kv(&kv).map_err(|e| classify(e.into()))?;
    let (record, checkpoint) = match spec.precision {
        Precision::F64 => run_train::<f64>(&spec)?,
        Precision::F32 => run_train::<f32>(&spec)?,
    };

    let out = &args.out;
    let jsonl = record.to_jsonl();
    let curves = record.curves_csv();
    let summary = serde_json::to_string_pretty(&record.summary).map_err(runtime)?;
    write_file(&out.join("runrecord.jsonl"), jsonl.as_bytes())?;
    write_file(&out.join("curves.csv"), curves.as_bytes())?;
    write_file(&out.join("summary.json"), summary.as_bytes())?;
    write_file(&out.join("model.ckpt"), checkpoint.as_bytes())?;
    let mut manifest = RunManifest::new(spec, args.run.config.clone(), out.clone());
    manifest.add_artifact("runrecord.jsonl", jsonl.as_bytes());
    manifest.add_artifact("curves.csv", curves.as_bytes());
    manifest.add_artifact("summary.json", summary.as_bytes());
    manifest.add_artifact("model.ckpt", checkpoint.as_bytes());
    write_file(&out.join("manifest.txt"), manifest.render().as_bytes())?;

    let s = &record.summary;
    if let Some(epoch) = s.diverged_at {
        return Err(runtime(anyhow::anyhow!(
            "training diverged in epoch {epoch} after {} updates; partial record in {}",
            s.updates,
            out.display()
        )));
    }
    println!(
        "epochs {}  final test acc {:.4}  best test acc {:.4}  ({:.1}s)",
        s.epochs_run, s.final_test_acc, s.best_test_acc, record.wallclock_secs
    );
    println!("outputs in {}", out.display());
    Ok(())
}

fn run_train<T: Scalar>(spec: &RunSpec) -> Result<(RunRecord, String), Failure> {
    let data = spec.data.load::<T>(spec.train.seed).map_err(|e| match e {
        Error::Ingestion(_) | Error::Io(_) | Error::Csv(_) => usage(e),
        other => classify(other.into()),
    })?;
    info!(
        "training {} on {} ({} train / {} test rows, {} features)",
        spec.train.mode,
        data.name,
        data.n_train(),
        data.n_test(),
        data.n_features()
    );
    let (model, record): (Mlp<T>, RunRecord) = train(&data, &spec.model, &spec.train).map_err(|e| classify(e.into()))?;
    Ok((record, write_checkpoint(&model)))
}

fn cmd_check_loss(args: CheckLossArgs) -> Result<(), Failure> {
    let loss = builtin_loss(&args.loss).map_err(usage)?;
    let report = check_loss(&loss, args.p, args.z0, args.grid).map_err(|e| classify(e.into()))?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?);
        return Ok(());
    }
    println!("loss:            {}", report.name);
    println!(
        "calibrated:      {} (derivative at 0 = {:.6})",
        report.calibrated, report.calibration.derivative
    );
    println!(
        "bounded below:   {} (inf estimate {:.6})",
        report.bounded_below, report.bounded.inf_estimate
    );
    println!("raising tail:    {} (p = {}, z0 = {})", report.tail_ok, report.tail.p, report.tail.z0);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn cmd_gen_derivs(args: GenDerivsArgs) -> Result<(), Failure> {
    let lambda = BoxCoxParam::new(args.lambda).map_err(usage)?;
    if !(args.margin_sd > 0.0) {
        return Err(usage(anyhow::anyhow!("--margin-sd must be positive")));
    }
    let mut rng = Rng::new(args.seed);
    let margins: Vec<f64> = (0..args.batch_size).map(|_| args.margin_sd * rng.standard_normal()).collect();
    let batch = MarginBatch::from_margins(margins).map_err(usage)?;
    let cfg = GenConfig {
        lambda,
        ..GenConfig::default()
    };
    let d = generate_rc_derivatives(&batch, &cfg, &mut rng).map_err(|e| match e {
        Error::BatchTooSmall { .. } => usage(e),
        other => runtime(other),
    })?;
    let mut out = String::from("margin,derivative,lambda\n");
    for (z, g) in batch.margins().iter().zip(&d.derivs) {
        out.push_str(&format!("{z},{g},{}\n", args.lambda));
    }
    match &args.out {
        Some(p) => write_file(p, out.as_bytes()),
        None => emit(&out),
    }
}

/// Writes to stdout, treating a closed pipe (`| head`) as success.
fn emit(text: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(runtime(e)),
        _ => Ok(()),
    }
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    let mut kv = args.run.resolve().map_err(classify)?;
    for (k, v) in [
        ("datasets", args.datasets.clone()),
        ("methods", args.methods.clone()),
        ("seeds", args.seeds.clone()),
        ("metric", args.metric.clone()),
        ("jobs", args.jobs.map(|j| j.to_string())),
    ] {
        if let Some(v) = v {
            kv.set(k, v);
        }
    }
    if kv.get("datasets").is_none() {
        if let Some(d) = kv.remove("data") {
            kv.set("datasets", d);
        }
    }
    let cfg = BenchConfig::from_kv(&kv).map_err(|e| classify(e.into()))?;
    let cells = cfg.cells();
    if args.dry_run {
        println!("{} cells ({} datasets x {} methods x {} seeds):", cells.len(), cfg.datasets.len(), cfg.methods.len(), cfg.seeds.len());
        for c in &cells {
            println!("  {:<20} {:<28} seed {}", c.dataset, c.method.to_string(), c.seed);
        }
        return Ok(());
    }
    let report = run_benchmark(&cfg, Some(&args.out)).map_err(|e| classify(e.into()))?;
    let mut bench_kv = kv.clone();
    bench_kv.remove("data");
    write_file(&args.out.join("bench_config.txt"), bench_kv.to_string().as_bytes())?;
    report.write_outputs(&args.out).map_err(runtime)?;
    print!("{}", report.summary_text());
    if report.any_failed() {
        for c in &report.failed_cells {
            warn!("failed cell: {c}");
        }
        return Err(runtime(anyhow::anyhow!(
            "{} of {} cells failed",
            report.failed_cells.len(),
            cells.len()
        )));
    }
    Ok(())
}

fn cmd_psi(args: PsiArgs) -> Result<(), Failure> {
    let exp = builtin_loss("exponential").map_err(runtime)?;
    let log2 = builtin_loss("logistic_2z").map_err(runtime)?;
    let mix = if args.pi1 == 1.0 {
        FiniteLossMixture::single(exp)
    } else {
        FiniteLossMixture::new(vec![(exp, args.pi1), (log2, 1.0 - args.pi1)]).map_err(usage)?
    };
    if args.points == 0 {
        return Err(usage(anyhow::anyhow!("--points must be positive")));
    }
    let mut out = String::from("theta,psi\n");
    for i in 1..=args.points {
        let theta = i as f64 / args.points as f64;
        let psi = psi_transform(&mix, theta, AlphaSearch::default()).map_err(runtime)?;
        out.push_str(&format!("{theta},{psi}\n"));
    }
    emit(&out)
}
