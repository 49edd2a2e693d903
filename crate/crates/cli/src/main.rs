//! Operator entry point: training, evaluation, verification, accounting
//! and prediction as subcommands over line-delimited JSON datasets and
//! binary checkpoints.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 numerical failure.

mod manifest;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dcgct_core::data::{load_dataset, save_dataset, synth_generate, SynthOptions};
use dcgct_core::metrics::{evaluate, Protocol};
use dcgct_core::model::{count_flops, count_params, flop_presets, param_presets, ModelConfig};
use dcgct_core::skeleton::build_topology;
use dcgct_core::train::{
    load_checkpoint, predict_all_threaded, train, TrainConfig, TrainError, TrainOutputs,
};
use dcgct_core::DcGct;
use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "dcgct", version, about = "2D-to-3D pose lifting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and persist the best-by-validation checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a prediction file) against a dataset.
    Eval(EvalArgs),
    /// Run the gradient and invariant verification suites (64-bit).
    Verify(VerifyArgs),
    /// Print parameter/FLOPs accounting against the reference figures.
    Report(ReportArgs),
    /// Write predictions for a dataset as line-delimited JSON.
    Predict(PredictArgs),
    /// Generate a synthetic dataset with forward kinematics + pinhole
    /// projection.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Model config JSON (defaults materialize the reference preset).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training dataset (line-delimited JSON).
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset; drives best-checkpoint selection.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output directory for best.ckpt, log.jsonl and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Master seed for initialization, shuffling and augmentation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train config JSON; flags below override individual fields.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    /// Disable horizontal flip augmentation.
    #[arg(long)]
    no_flip: bool,
    /// Topology preset name or JSON file.
    #[arg(long, default_value = "h36m17")]
    topology: String,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate (omit with --pred-file or --identity-debug).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ProtocolArg::All)]
    protocol: ProtocolArg,
    /// Where to write the metric report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Evaluate a prediction file instead of running a model.
    #[arg(long)]
    pred_file: Option<PathBuf>,
    /// Feed the targets back as predictions (pipeline self-check).
    #[arg(long)]
    identity_debug: bool,
    #[arg(long, default_value = "h36m17")]
    topology: String,
}

#[derive(Copy, Clone, ValueEnum)]
enum ProtocolArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::One => Protocol::One,
            ProtocolArg::Two => Protocol::Two,
            ProtocolArg::All => Protocol::All,
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    suite: Suite,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Negative control: perturb one adjoint so the gradient suite must
    /// fail.
    #[arg(long)]
    corrupt_adjoints: bool,
}

#[derive(Copy, Clone, ValueEnum)]
enum Suite {
    Grads,
    Invariants,
    All,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, value_enum)]
    what: ReportKind,
    /// Additionally report a custom config (no reference target).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum ReportKind {
    Params,
    Flops,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output prediction file (line-delimited JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    frames: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_mm: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "h36m17")]
    topology: String,
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        use dcgct_core::model::ModelError;
        use dcgct_core::tensor::TensorError;
        match e {
            TrainError::NonFiniteLoss { .. }
            | TrainError::Tensor(TensorError::NonFinite { .. })
            | TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. })) => {
                Failure::Numeric(e.to_string())
            }
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Report(args) => cmd_report(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn env_threads() -> usize {
    std::env::var("DCGCT_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
}

fn read_model_config(path: &Option<PathBuf>) -> Result<ModelConfig, Failure> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            ModelConfig::from_json(&text).map_err(Failure::usage)
        }
        None => Ok(ModelConfig::paper()),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let topology = build_topology(&args.topology).map_err(Failure::usage)?;
    let model_config = read_model_config(&args.config)?;
    let dataset = load_dataset(&args.data, &topology).map_err(Failure::usage)?;
    let val = match &args.val {
        Some(p) => Some(load_dataset(p, &topology).map_err(Failure::usage)?),
        None => None,
    };

    let mut train_config = match &args.train_config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            TrainConfig::from_json(&text).map_err(Failure::usage)?
        }
        None => TrainConfig::default_for_frames(model_config.frames),
    };
    if let Some(e) = args.epochs {
        train_config.epochs = e;
    }
    if let Some(b) = args.batch_size {
        train_config.batch_size = b;
    }
    if let Some(lr) = args.lr0 {
        train_config.lr0 = lr;
    }
    if args.no_flip {
        train_config.flip_augment = false;
    }
    train_config.seed = args.seed;
    train_config.validate().map_err(Failure::usage)?;

    std::fs::create_dir_all(&args.out)?;
    let ckpt_path = args.out.join("best.ckpt");
    let log_path = args.out.join("log.jsonl");
    let manifest = RunManifest::begin(
        &args.out.join("manifest.json"),
        "train",
        Some(args.seed),
        serde_json::json!({
            "model": model_config,
            "train": train_config,
            "topology": args.topology,
            "data": args.data,
            "val": args.val,
        }),
        vec![
            ckpt_path.display().to_string(),
            log_path.display().to_string(),
        ],
    )?;

    let mut model =
        DcGct::<f32>::init(model_config, topology, args.seed).map_err(Failure::usage)?;
    let report = {
        let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
        let mut outputs = TrainOutputs {
            log: Some(&mut log),
            checkpoint_path: Some(&ckpt_path),
        };
        train(&mut model, &dataset, val.as_ref(), &train_config, &mut outputs)?
    };

    if let (Some(best), Some(epoch)) = (report.best_val_mpjpe, report.best_epoch) {
        println!("best val MPJPE {best:.3}mm at epoch {epoch}");
    } else if let Some(last) = report.epochs.last() {
        println!("final train loss {:.3}", last.train_loss);
    }
    println!("checkpoint: {}", ckpt_path.display());
    manifest.finish()?;
    Ok(())
}

/// Reads a prediction file written by `predict`: the dataset schema with
/// `pred3d_mm` in place of `target3d_mm`.
fn read_predictions(path: &Path, joints: usize) -> Result<Vec<f64>, Failure> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Failure::Usage(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        let rows = value
            .get("pred3d_mm")
            .and_then(|v| v.as_array())
            .ok_or_else(|| {
                Failure::Usage(format!("{}:{}: missing pred3d_mm", path.display(), idx + 1))
            })?;
        if rows.len() != joints {
            return Err(Failure::Usage(format!(
                "{}:{}: {} joints, expected {joints}",
                path.display(),
                idx + 1,
                rows.len()
            )));
        }
        for row in rows {
            let coords = row.as_array().filter(|c| c.len() == 3).ok_or_else(|| {
                Failure::Usage(format!(
                    "{}:{}: malformed joint row",
                    path.display(),
                    idx + 1
                ))
            })?;
            for c in coords {
                out.push(c.as_f64().ok_or_else(|| {
                    Failure::Usage(format!(
                        "{}:{}: non-numeric coordinate",
                        path.display(),
                        idx + 1
                    ))
                })?);
            }
        }
    }
    Ok(out)
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| PathBuf::from("eval-report.json"));
    let manifest = RunManifest::begin(
        &report_path.with_extension("manifest.json"),
        "eval",
        None,
        serde_json::json!({
            "ckpt": args.ckpt,
            "data": args.data,
            "protocol": match args.protocol { ProtocolArg::One => "1", ProtocolArg::Two => "2", ProtocolArg::All => "all" },
            "pred_file": args.pred_file,
            "identity_debug": args.identity_debug,
        }),
        vec![report_path.display().to_string()],
    )?;

    let (dataset, preds) = if args.identity_debug {
        let topology = build_topology(&args.topology).map_err(Failure::usage)?;
        let ds = load_dataset(&args.data, &topology).map_err(Failure::usage)?;
        let preds = ds.targets_f64();
        (ds, preds)
    } else if let Some(pred_file) = &args.pred_file {
        let topology = build_topology(&args.topology).map_err(Failure::usage)?;
        let ds = load_dataset(&args.data, &topology).map_err(Failure::usage)?;
        let preds = read_predictions(pred_file, ds.joints)?;
        if preds.len() != ds.len() * ds.joints * 3 {
            return Err(Failure::Usage(format!(
                "prediction file has {} poses, dataset has {}",
                preds.len() / (ds.joints * 3),
                ds.len()
            )));
        }
        (ds, preds)
    } else {
        let ckpt = args.ckpt.as_ref().ok_or_else(|| {
            Failure::Usage(
                "--ckpt is required unless --pred-file or --identity-debug is given".into(),
            )
        })?;
        let model = load_checkpoint::<f32>(ckpt).map_err(Failure::usage)?.model;
        let ds = load_dataset(&args.data, &model.topology).map_err(Failure::usage)?;
        let preds = predict_all_threaded(&model, &ds, env_threads())?;
        (ds, preds)
    };

    let report = evaluate(
        &preds,
        &dataset.targets_f64(),
        dataset.joints,
        dataset.actions().as_deref(),
        args.protocol.into(),
    )
    .map_err(Failure::usage)?;
    print!("{}", report.to_table());
    std::fs::write(&report_path, report.to_json())?;
    println!("report: {}", report_path.display());
    manifest.finish()?;
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let manifest = RunManifest::begin(
        Path::new("verify-manifest.json"),
        "verify",
        Some(args.seed),
        serde_json::json!({
            "suite": match args.suite { Suite::Grads => "grads", Suite::Invariants => "invariants", Suite::All => "all" },
            "corrupt_adjoints": args.corrupt_adjoints,
        }),
        vec![],
    )?;
    let mut failures = 0;
    let mut checks = 0;
    if matches!(args.suite, Suite::Grads | Suite::All) {
        let outcome = verify::grads_suite(args.seed, args.corrupt_adjoints);
        failures += outcome.failures;
        checks += outcome.checks;
    }
    if matches!(args.suite, Suite::Invariants | Suite::All) {
        let outcome = verify::invariants_suite(args.seed);
        failures += outcome.failures;
        checks += outcome.checks;
    }
    println!("{}/{} checks passed", checks - failures, checks);
    manifest.finish()?;
    if failures > 0 {
        return Err(Failure::Numeric(format!(
            "{failures} verification checks failed"
        )));
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let manifest = RunManifest::begin(
        Path::new("report-manifest.json"),
        "report",
        None,
        serde_json::json!({
            "what": match args.what { ReportKind::Params => "params", ReportKind::Flops => "flops" },
            "config": args.config,
        }),
        vec![],
    )?;
    let (presets, measure): (_, fn(&ModelConfig) -> u64) = match args.what {
        ReportKind::Params => (param_presets(), count_params as fn(&ModelConfig) -> u64),
        ReportKind::Flops => (flop_presets(), count_flops as fn(&ModelConfig) -> u64),
    };
    println!(
        "{:<26} {:>12} {:>10} {:>8} {:>8}",
        "preset", "measured(M)", "target(M)", "delta", "status"
    );
    let mut out_of_tolerance = 0;
    for preset in &presets {
        let measured = measure(&preset.config);
        let millions = measured as f64 / 1e6;
        let delta = 100.0 * (millions - preset.target_millions) / preset.target_millions;
        let ok = preset.within_tolerance(measured);
        if !ok {
            out_of_tolerance += 1;
        }
        println!(
            "{:<26} {:>12.3} {:>10.2} {:>7.2}% {:>8}",
            preset.name,
            millions,
            preset.target_millions,
            delta,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        let config = ModelConfig::from_json(&text).map_err(Failure::usage)?;
        println!(
            "{:<26} {:>12.3} {:>10} {:>8} {:>8}",
            path.display(),
            measure(&config) as f64 / 1e6,
            "-",
            "-",
            "-"
        );
    }
    manifest.finish()?;
    if out_of_tolerance > 0 {
        return Err(Failure::Numeric(format!(
            "{out_of_tolerance} presets outside tolerance"
        )));
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), Failure> {
    let manifest = RunManifest::begin(
        &args.out.with_extension("manifest.json"),
        "predict",
        None,
        serde_json::json!({ "ckpt": args.ckpt, "data": args.data }),
        vec![args.out.display().to_string()],
    )?;
    let model = load_checkpoint::<f32>(&args.ckpt)
        .map_err(Failure::usage)?
        .model;
    let dataset = load_dataset(&args.data, &model.topology).map_err(Failure::usage)?;
    let preds = predict_all_threaded(&model, &dataset, env_threads())?;
    let joints = dataset.joints;
    let mut out = String::new();
    for (s, sample) in dataset.samples.iter().enumerate() {
        let input2d: Vec<Vec<[f64; 2]>> = (0..dataset.frames)
            .map(|t| {
                (0..joints)
                    .map(|j| {
                        let base = (t * joints + j) * 2;
                        [sample.input2d[base], sample.input2d[base + 1]]
                    })
                    .collect()
            })
            .collect();
        let input_json = if dataset.frames == 1 {
            serde_json::to_value(&input2d[0])
        } else {
            serde_json::to_value(&input2d)
        }
        .expect("input serializes");
        let pred_rows: Vec<[f64; 3]> = (0..joints)
            .map(|j| {
                let base = (s * joints + j) * 3;
                [preds[base], preds[base + 1], preds[base + 2]]
            })
            .collect();
        let mut record = serde_json::json!({
            "input2d": input_json,
            "pred3d_mm": pred_rows,
        });
        if let Some(action) = &sample.action {
            record["action"] = serde_json::json!(action);
        }
        if let Some(subject) = &sample.subject {
            record["subject"] = serde_json::json!(subject);
        }
        out.push_str(&record.to_string());
        out.push('\n');
    }
    std::fs::write(&args.out, out)?;
    println!(
        "wrote {} predictions to {}",
        dataset.len(),
        args.out.display()
    );
    manifest.finish()?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    if args.count == 0 {
        return Err(Failure::Usage("--count must be >= 1".into()));
    }
    if args.frames == 0 || args.frames % 2 == 0 {
        return Err(Failure::Usage(format!(
            "--frames must be odd and >= 1, got {}",
            args.frames
        )));
    }
    let topology = build_topology(&args.topology).map_err(Failure::usage)?;
    let manifest = RunManifest::begin(
        &args.out.with_extension("manifest.json"),
        "synth",
        Some(args.seed),
        serde_json::json!({
            "count": args.count,
            "frames": args.frames,
            "noise_mm": args.noise_mm,
            "topology": args.topology,
        }),
        vec![args.out.display().to_string()],
    )?;
    let dataset = synth_generate(
        &topology,
        &SynthOptions {
            count: args.count,
            frames: args.frames,
            noise_mm: args.noise_mm,
            seed: args.seed,
        },
    );
    save_dataset(&dataset, &args.out).map_err(Failure::usage)?;
    println!("wrote {} samples to {}", dataset.len(), args.out.display());
    manifest.finish()?;
    Ok(())
}
