//! Command-line front end: synthetic data generation, training, evaluation
//! and gradient checking.
//!
//! Exit codes: 0 success, 1 runtime or data failure, 2 configuration error.
//! Each command prints a single JSON document to standard output.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use adaftr::config::{ModelConfig, TrainConfig};
use adaftr::datasets::{load_csv, synth_generate, write_csv, Batch, GenConfig, Schema};
use adaftr::error::{Error, Result};
use adaftr::metrics::evaluate;
use adaftr::trainer::{
    check_shapes, grad_check, grad_check_broken, load_checkpoint, train, GradCheckReport,
};

#[derive(Parser)]
#[command(name = "adaftr", version, about = "Joint click/conversion estimation engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic correlated click/conversion dataset.
    Synth(SynthArgs),
    /// Train a model and write checkpoint, history log and run manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences on a micro model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    records: usize,
    #[arg(long, default_value_t = 8)]
    fields: usize,
    #[arg(long, default_value_t = 50)]
    cardinality: usize,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0.1)]
    ctr_rate: f64,
    #[arg(long, default_value_t = 0.01)]
    cvr_rate: f64,
    /// Enforce the funnel constraint (conversion implies click).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    funnel: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory for data.csv and schema.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Replay a previously written run manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    data: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    schema: Option<PathBuf>,
    /// Held-out dataset for periodic evaluation.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Line-oriented key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoint, history log and manifest.
    #[arg(long, default_value = "run")]
    out: PathBuf,

    #[arg(long)]
    backbone: Option<String>,
    #[arg(long)]
    temperature_mode: Option<String>,
    #[arg(long)]
    alignment_mode: Option<String>,
    #[arg(long)]
    contrast_layer: Option<usize>,
    #[arg(long)]
    fixed_tau: Option<f64>,
    #[arg(long)]
    tau_upper: Option<f64>,
    #[arg(long)]
    tau_lower: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    expert_count: Option<usize>,
    /// Comma-separated tower widths, e.g. 128,64,32.
    #[arg(long)]
    tower_hidden_sizes: Option<String>,
    #[arg(long)]
    relatedness_hidden_sizes: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    cvr_on_clicks_only: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Report ranking metrics multiplied by 100.
    #[arg(long)]
    percent: bool,
    #[arg(long)]
    cvr_on_clicks_only: bool,
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value = "mmoe")]
    backbone: String,
    #[arg(long, default_value = "infonce")]
    alignment_mode: String,
    #[arg(long, default_value = "adaptive")]
    temperature_mode: String,
    #[arg(long, default_value_t = 0.05)]
    fixed_tau: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Deliberately corrupt one analytic gradient (negative control).
    #[arg(long)]
    break_backprop: bool,
}

/// Everything needed to reproduce a training run bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    engine_version: String,
    config: TrainConfig,
    data_path: PathBuf,
    schema_path: PathBuf,
    eval_data_path: Option<PathBuf>,
    checkpoint_path: PathBuf,
    log_path: PathBuf,
    started_unix: u64,
    finished_unix: Option<u64>,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn check_thread_env() -> Result<()> {
    if let Ok(v) = std::env::var("ADAFTR_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("invalid ADAFTR_THREADS value '{}'", v)))?;
        if n == 0 {
            return Err(Error::Config("ADAFTR_THREADS must be >= 1".into()));
        }
        // the engine is single-threaded; larger values are accepted and capped
    }
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<i32> {
    let gen = GenConfig {
        records: args.records,
        fields: args.fields,
        cardinality: args.cardinality,
        users: args.users,
        rho: args.rho,
        ctr_rate: args.ctr_rate,
        cvr_rate: args.cvr_rate,
        funnel: args.funnel,
        ..GenConfig::default()
    };
    gen.validate()?;
    let dataset = synth_generate(&gen, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let data_path = args.out.join("data.csv");
    let schema_path = args.out.join("schema.txt");
    write_csv(&dataset, &data_path)?;
    dataset.schema.save(&schema_path)?;

    let n = dataset.records.len() as f64;
    let ctr_pos = dataset.records.iter().filter(|r| r.y_ctr == 1).count() as f64 / n;
    let cvr_pos = dataset.records.iter().filter(|r| r.y_cvr == 1).count() as f64 / n;
    print_json(&serde_json::json!({
        "records": dataset.records.len(),
        "fields": args.fields,
        "users": args.users,
        "ctr_positive_rate": ctr_pos,
        "cvr_positive_rate": cvr_pos,
        "data_path": data_path,
        "schema_path": schema_path,
    }))?;
    Ok(0)
}

fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    let mut set = |key: &str, value: Option<String>| -> Result<()> {
        if let Some(v) = value {
            cfg.apply_kv(key, &v)?;
        }
        Ok(())
    };
    set("backbone", args.backbone.clone())?;
    set("temperature_mode", args.temperature_mode.clone())?;
    set("alignment_mode", args.alignment_mode.clone())?;
    set("contrast_layer", args.contrast_layer.map(|v| v.to_string()))?;
    set("fixed_tau", args.fixed_tau.map(|v| v.to_string()))?;
    set("tau_upper", args.tau_upper.map(|v| v.to_string()))?;
    set("tau_lower", args.tau_lower.map(|v| v.to_string()))?;
    set("alpha", args.alpha.map(|v| v.to_string()))?;
    set("beta", args.beta.map(|v| v.to_string()))?;
    set("lambda", args.lambda.map(|v| v.to_string()))?;
    set("embed_dim", args.embed_dim.map(|v| v.to_string()))?;
    set("expert_count", args.expert_count.map(|v| v.to_string()))?;
    set("tower_hidden_sizes", args.tower_hidden_sizes.clone())?;
    set("relatedness_hidden_sizes", args.relatedness_hidden_sizes.clone())?;
    set("lr", args.lr.map(|v| v.to_string()))?;
    set("batch_size", args.batch_size.map(|v| v.to_string()))?;
    set("epochs", args.epochs.map(|v| v.to_string()))?;
    set("seed", args.seed.map(|v| v.to_string()))?;
    set("init_seed", args.init_seed.map(|v| v.to_string()))?;
    set("eval_every", args.eval_every.map(|v| v.to_string()))?;
    set("patience", args.patience.map(|v| v.to_string()))?;
    if args.cvr_on_clicks_only {
        cfg.apply_kv("cvr_on_clicks_only", "true")?;
    }
    Ok(cfg)
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let (mut cfg, data_path, schema_path, eval_data_path) = match &args.manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Checkpoint {
                path: path.display().to_string(),
                msg: format!("cannot read manifest: {}", e),
            })?;
            let manifest: RunManifest = serde_json::from_str(&text)?;
            (
                manifest.config,
                manifest.data_path,
                manifest.schema_path,
                manifest.eval_data_path,
            )
        }
        None => {
            let cfg = resolve_train_config(&args)?;
            (
                cfg,
                args.data.clone().expect("clap enforces --data"),
                args.schema.clone().expect("clap enforces --schema"),
                args.eval_data.clone(),
            )
        }
    };
    cfg.validate()?;

    std::fs::create_dir_all(&args.out)?;
    let checkpoint_path = args.out.join("model.ckpt");
    let log_path = args.out.join("history.jsonl");
    let manifest_path = args.out.join("manifest.json");
    cfg.checkpoint_path = Some(checkpoint_path.clone());

    let dataset = load_csv(&data_path, &schema_path)?;
    let eval_dataset = match &eval_data_path {
        Some(p) => Some(load_csv(p, &schema_path)?),
        None => None,
    };

    let mut manifest = RunManifest {
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        data_path,
        schema_path,
        eval_data_path,
        checkpoint_path: checkpoint_path.clone(),
        log_path: log_path.clone(),
        started_unix: now_unix(),
        finished_unix: None,
    };
    write_manifest(&manifest_path, &manifest)?;

    let (_, history) = train(&dataset, eval_dataset.as_ref(), &cfg, Some(&log_path))?;

    manifest.finished_unix = Some(now_unix());
    write_manifest(&manifest_path, &manifest)?;

    let final_loss = history.steps.last().map(|s| s.loss);
    print_json(&serde_json::json!({
        "steps": history.steps.len(),
        "evals": history.evals.len(),
        "final_loss": final_loss,
        "checkpoint_path": checkpoint_path,
        "log_path": log_path,
        "manifest_path": manifest_path,
    }))?;
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let (params, model_cfg) = load_checkpoint(&args.checkpoint)?;
    let dataset = load_csv(&args.data, &args.schema)?;
    check_shapes(&params, &model_cfg, &dataset.schema).map_err(|e| Error::Checkpoint {
        path: args.checkpoint.display().to_string(),
        msg: e.to_string(),
    })?;
    let cfg = TrainConfig {
        model: model_cfg,
        batch_size: args.batch_size,
        cvr_on_clicks_only: args.cvr_on_clicks_only,
        ..TrainConfig::default()
    };
    let report = evaluate(&params, &dataset.schema, &dataset, &cfg)?;
    if args.percent {
        print_json(&report.in_percent())?;
    } else {
        print_json(&report)?;
    }
    Ok(0)
}

/// The self-contained micro model used by the gradient check: 3 fields,
/// embedding width 4, 2 experts, towers [8, 4], batch of 4.
fn gradcheck_fixture(seed: u64, batch_size: usize) -> (Schema, Batch) {
    use rand::prelude::*;
    let schema = Schema::new(
        vec![("f0".into(), 4), ("f1".into(), 3), ("f2".into(), 5)],
        true,
    )
    .expect("static schema");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Batch {
        user_ids: Vec::new(),
        feature_ids: Vec::new(),
        y_ctr: Vec::new(),
        y_cvr: Vec::new(),
    };
    for i in 0..batch_size {
        batch.user_ids.push(i as u64 % 3);
        batch
            .feature_ids
            .push(vec![rng.gen_range(0..4), rng.gen_range(0..3), rng.gen_range(0..5)]);
        let y_ctr = f64::from(rng.gen::<bool>());
        let y_cvr = if y_ctr == 1.0 { f64::from(rng.gen_bool(0.3)) } else { 0.0 };
        batch.y_ctr.push(y_ctr);
        batch.y_cvr.push(y_cvr);
    }
    (schema, batch)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let mut cfg = TrainConfig {
        model: ModelConfig {
            backbone: args.backbone.parse()?,
            embed_dim: 4,
            expert_count: 2,
            tower_hidden_sizes: vec![8, 4],
            relatedness_hidden_sizes: vec![4],
            init_seed: args.seed,
            ..ModelConfig::default()
        },
        batch_size: args.batch_size,
        seed: args.seed,
        ..TrainConfig::default()
    };
    cfg.loss.alignment_mode = args.alignment_mode.parse()?;
    cfg.loss.temperature_mode = args.temperature_mode.parse()?;
    cfg.loss.fixed_tau = args.fixed_tau;
    cfg.loss.lambda = 0.001;
    cfg.validate()?;

    let (schema, batch) = gradcheck_fixture(args.seed, args.batch_size);
    let report: GradCheckReport = if args.break_backprop {
        grad_check_broken(&cfg, &schema, &batch)?
    } else {
        grad_check(&cfg, &schema, &batch)?
    };
    print_json(&report)?;
    Ok(if report.passed { 0 } else { 1 })
}

fn run(cli: Cli) -> Result<i32> {
    check_thread_env()?;
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e);
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    };
    std::process::exit(code);
}
