//! Command-line interface: generate benchmark graphs, apply missingness
//! processes, train the fair classifiers, evaluate metrics, run sweeps,
//! and verify the property-oracle suite.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure. `BFTS_WORKERS` caps sweep parallelism (the `--workers` flag
//! wins). Every subcommand accepts `--config FILE`, a flat JSON object
//! whose keys mirror the long flag names; explicit flags override file
//! values.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bfts::graph::{generate_sbm, load_graph_dir, save_graph, SbmConfig};
use bfts::harness::{run_sweep, Cell, DensityPair, ExperimentPlan};
use bfts::losses::ImputationLossKind;
use bfts::metrics::{pearson_corr, METRICS_CSV_HEADER};
use bfts::missingness::{generate_mask, MissingnessKind, MissingnessSpec};
use bfts::models::{load_player_params, save_player_params};
use bfts::training::{train, SensitiveMode, TrainConfig, TrainMode};
use bfts::verify;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "bfts", version, about = "Fair node classification under adversarially missing sensitive attributes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic block-model graph into a directory.
    Generate(GenerateArgs),
    /// Rewrite a graph's observed-sensitive mask with a missingness process.
    Mask(MaskArgs),
    /// Train a model and write its checkpoint and loss curve.
    Train(TrainArgs),
    /// Evaluate a graph (optionally with a checkpoint) and print metrics.
    Evaluate(EvaluateArgs),
    /// Run every cell of an experiment plan and write the metrics CSVs.
    Sweep(SweepArgs),
    /// Run the property-oracle verification suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory for edges.tsv, features.csv, labels.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated block sizes, e.g. 600,400.
    #[arg(long)]
    block_sizes: Option<String>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    p_bias: Option<f64>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    noise: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MaskArgs {
    /// Directory holding the input graph.
    #[arg(long)]
    graph: PathBuf,
    /// Output directory for the re-masked graph.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of: mcar, degree, coverage-greedy, coverage-exact.
    #[arg(long)]
    kind: Option<String>,
    /// Fraction of nodes keeping their sensitive value.
    #[arg(long)]
    observed_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hop radius for the coverage adversary.
    #[arg(long)]
    radius: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Output directory for checkpoint.ckpt and losses.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of: bfts, vanilla, two-player, indep.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr_classifier: Option<f64>,
    #[arg(long)]
    lr_imputer: Option<f64>,
    #[arg(long)]
    lr_adversary: Option<f64>,
    #[arg(long)]
    ldam_c: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Imputation loss: ldam or ce.
    #[arg(long)]
    loss: Option<String>,
    /// observed or label-proxy.
    #[arg(long)]
    sensitive_mode: Option<String>,
    #[arg(long)]
    classifier_hidden: Option<usize>,
    #[arg(long)]
    imputer_hidden: Option<usize>,
    #[arg(long)]
    adversary_hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Trained parameters; omit for graph-only metrics.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Print a single graph metric: assortativity or corr-true.
    #[arg(long)]
    metric: Option<String>,
    /// Echo fields for the CSV row.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    observed_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment plan (JSON).
    #[arg(long)]
    plan: PathBuf,
    /// Override the plan's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker cap; defaults to BFTS_WORKERS, then to the CPU count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Corrupt exactly one named check (self-test of the suite).
    #[arg(long)]
    inject_failure: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not usage errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Mask(args) => cmd_mask(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify(args) => return cmd_verify(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

enum CliError {
    Usage(String),
    Data(String),
}

impl From<bfts::Error> for CliError {
    fn from(e: bfts::Error) -> Self {
        match e {
            bfts::Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

/// Flat JSON config file; flags override these values.
struct FileConfig(serde_json::Map<String, serde_json::Value>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig(serde_json::Map::new()));
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        match value {
            serde_json::Value::Object(map) => Ok(FileConfig(map)),
            _ => Err(CliError::Usage(format!(
                "{}: config must be a flat JSON object",
                path.display()
            ))),
        }
    }

    fn f64(&self, key: &str, flag: Option<f64>, default: f64) -> Result<f64, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| CliError::Usage(format!("config key {key:?} must be a number"))),
        }
    }

    fn usize(&self, key: &str, flag: Option<usize>, default: usize) -> Result<usize, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| CliError::Usage(format!("config key {key:?} must be an integer"))),
        }
    }

    fn u64(&self, key: &str, flag: Option<u64>, default: u64) -> Result<u64, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .ok_or_else(|| CliError::Usage(format!("config key {key:?} must be an integer"))),
        }
    }

    fn string(&self, key: &str, flag: Option<String>, default: &str) -> Result<String, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            None => Ok(default.to_string()),
            Some(v) => v
                .as_str()
                .map(String::from)
                .ok_or_else(|| CliError::Usage(format!("config key {key:?} must be a string"))),
        }
    }
}

fn parse_block_sizes(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Usage(format!("bad block size {part:?}: {e}")))
        })
        .collect()
}

fn parse_kind(text: &str) -> Result<MissingnessKind, CliError> {
    match text {
        "mcar" => Ok(MissingnessKind::Mcar),
        "degree" => Ok(MissingnessKind::Degree),
        "coverage-greedy" => Ok(MissingnessKind::CoverageGreedy),
        "coverage-exact" => Ok(MissingnessKind::CoverageExact),
        other => Err(CliError::Usage(format!(
            "unknown missingness kind {other:?} (expected mcar, degree, coverage-greedy, coverage-exact)"
        ))),
    }
}

fn parse_mode(text: &str) -> Result<TrainMode, CliError> {
    match text {
        "bfts" => Ok(TrainMode::Bfts),
        "vanilla" => Ok(TrainMode::Vanilla),
        "two-player" => Ok(TrainMode::TwoPlayer),
        "indep" | "independent-imputation" => Ok(TrainMode::IndependentImputation),
        other => Err(CliError::Usage(format!(
            "unknown mode {other:?} (expected bfts, vanilla, two-player, indep)"
        ))),
    }
}

fn parse_loss(text: &str) -> Result<ImputationLossKind, CliError> {
    match text {
        "ldam" => Ok(ImputationLossKind::Ldam),
        "ce" => Ok(ImputationLossKind::Ce),
        other => Err(CliError::Usage(format!(
            "unknown imputation loss {other:?} (expected ldam, ce)"
        ))),
    }
}

fn parse_sensitive_mode(text: &str) -> Result<SensitiveMode, CliError> {
    match text {
        "observed" => Ok(SensitiveMode::Observed),
        "label-proxy" => Ok(SensitiveMode::LabelProxy),
        other => Err(CliError::Usage(format!(
            "unknown sensitive mode {other:?} (expected observed, label-proxy)"
        ))),
    }
}

fn cmd_generate(args: GenerateArgs) -> CliResult {
    let file = FileConfig::load(args.config.as_deref())?;
    let defaults = SbmConfig::default();
    let block_sizes = match args
        .block_sizes
        .or_else(|| file.0.get("block-sizes").and_then(|v| v.as_str()).map(String::from))
    {
        Some(text) => parse_block_sizes(&text)?,
        None => defaults.block_sizes.clone(),
    };
    let cfg = SbmConfig {
        block_sizes,
        p_in: file.f64("p-in", args.p_in, defaults.p_in)?,
        p_out: file.f64("p-out", args.p_out, defaults.p_out)?,
        p_bias: file.f64("p-bias", args.p_bias, defaults.p_bias)?,
        n_features: file.usize("features", args.features, defaults.n_features)?,
        n_noise: file.usize("noise", args.noise, defaults.n_noise)?,
        gamma: file.f64("gamma", args.gamma, defaults.gamma)?,
        seed: file.u64("seed", args.seed, defaults.seed)?,
    };
    let g = generate_sbm(&cfg)?;
    save_graph(&g, &args.out)?;
    eprintln!(
        "generated {} nodes, {} edges into {}",
        g.n_nodes(),
        g.edges().len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_mask(args: MaskArgs) -> CliResult {
    let file = FileConfig::load(args.config.as_deref())?;
    let kind = parse_kind(&file.string("kind", args.kind, "mcar")?)?;
    let frac = file.f64("observed-frac", args.observed_frac, 0.3)?;
    if !(0.0..=1.0).contains(&frac) {
        return Err(CliError::Usage(format!("observed fraction {frac} not in [0,1]")));
    }
    let seed = file.u64("seed", args.seed, 0)?;
    let radius = file.usize("radius", args.radius, 1)?;
    let g = load_graph_dir(&args.graph)?;
    let spec = MissingnessSpec {
        kind,
        k_observed: ((g.n_nodes() as f64) * frac).round() as usize,
        seed,
    };
    let mask = generate_mask(&g, &spec, radius)?;
    let g = g.with_observed_mask(mask)?;
    save_graph(&g, &args.out)?;
    eprintln!(
        "masked graph: {} of {} sensitive values observed",
        g.n_observed(),
        g.n_nodes()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let file = FileConfig::load(args.config.as_deref())?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        mode: parse_mode(&file.string("mode", args.mode, "bfts")?)?,
        alpha: file.f64("alpha", args.alpha, d.alpha)?,
        beta: file.f64("beta", args.beta, d.beta)?,
        ldam_c: file.f64("ldam-c", args.ldam_c, d.ldam_c)?,
        imputation_loss: parse_loss(&file.string("loss", args.loss, "ldam")?)?,
        lr_classifier: file.f64("lr-classifier", args.lr_classifier, d.lr_classifier)?,
        lr_imputer: file.f64("lr-imputer", args.lr_imputer, d.lr_imputer)?,
        lr_adversary: file.f64("lr-adversary", args.lr_adversary, d.lr_adversary)?,
        epochs: file.usize("epochs", args.epochs, d.epochs)?,
        seed: file.u64("seed", args.seed, d.seed)?,
        weight_decay: file.f64("weight-decay", args.weight_decay, d.weight_decay)?,
        sensitive_mode: parse_sensitive_mode(&file.string(
            "sensitive-mode",
            args.sensitive_mode,
            "observed",
        )?)?,
        classifier_hidden: file.usize("classifier-hidden", args.classifier_hidden, d.classifier_hidden)?,
        imputer_hidden: file.usize("imputer-hidden", args.imputer_hidden, d.imputer_hidden)?,
        adversary_hidden: file.usize("adversary-hidden", args.adversary_hidden, d.adversary_hidden)?,
        dropout: file.f64("dropout", args.dropout, d.dropout)?,
        record_adversary_ascent: false,
    };
    let g = load_graph_dir(&args.graph)?;
    let report = train(&g, &cfg)?;

    save_player_params(&args.out.join("checkpoint.ckpt"), &report.params)?;
    let mut losses = String::from("epoch,loss_c,loss_i,loss_a,val_avpr\n");
    for (epoch, r) in report.epochs.iter().enumerate() {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        losses.push_str(&format!(
            "{},{},{},{},{}\n",
            epoch,
            r.loss_c,
            opt(r.loss_i),
            opt(r.loss_a),
            opt(r.val_avpr)
        ));
    }
    std::fs::write(args.out.join("losses.csv"), losses)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "trained {} epochs, selected epoch {} ({}s)",
        report.epochs.len(),
        report.selected_epoch,
        report.wall_time.as_secs_f64()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult {
    let g = load_graph_dir(&args.graph)?;
    if let Some(metric) = &args.metric {
        let value = match metric.as_str() {
            "assortativity" => g.label_assortativity()?,
            "corr-true" => {
                let y: Vec<f64> = g.labels().iter().map(|&v| v as f64).collect();
                let s: Vec<f64> = g.sensitive().iter().map(|&v| v as f64).collect();
                pearson_corr(&s, &y)?
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown metric {other:?} (expected assortativity, corr-true)"
                )))
            }
        };
        println!("{value}");
        return Ok(());
    }
    let Some(ckpt) = &args.checkpoint else {
        return Err(CliError::Usage(
            "evaluate needs --checkpoint (or --metric for graph-only metrics)".into(),
        ));
    };
    let mode = parse_mode(&args.mode.clone().unwrap_or_else(|| "bfts".into()))?;
    let params = load_player_params(ckpt, 0.5)?;
    let cfg = TrainConfig {
        mode,
        ..TrainConfig::default()
    };
    let cell = Cell {
        mode,
        alpha: args.alpha,
        beta: args.beta,
        observed_frac: args.observed_frac,
        density: DensityPair { p_in: 0.0, p_out: 0.0 },
        seed: args.seed,
    };
    let record = bfts::harness::evaluate_run(&g, &cfg, &cell, &params)?;
    println!("{METRICS_CSV_HEADER}");
    println!("{}", record.to_csv_row());
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CliResult {
    let plan = ExperimentPlan::load(&args.plan)?;
    let out_dir = args.out.clone().unwrap_or_else(|| plan.out_dir.clone());
    let workers = args
        .workers
        .or_else(|| {
            std::env::var("BFTS_WORKERS")
                .ok()
                .and_then(|v| v.parse::<usize>().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    let summary = run_sweep(&plan, workers, &out_dir)?;
    eprintln!(
        "sweep: {} cells ok, {} failed, outputs in {}",
        summary.rows.len(),
        summary.failures.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> ExitCode {
    let results = match verify::run_all(args.inject_failure.as_deref()) {
        Ok(results) => results,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let mut all_passed = true;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        all_passed &= r.passed;
    }
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VERIFY)
    }
}
