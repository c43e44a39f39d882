//! Command-line entry points: dataset synthesis, training, evaluation,
//! single-image inference, and the self-check suites.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 3 numerical failure.

mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::RunConfig;
use eagle_core::data::{
    crop_pad_to, crop_pad_to_multiple, io as data_io, split_assignments, synth::synth_generate,
    LesionKind, Split, WindowSpec,
};
use eagle_core::model::Eagle;
use eagle_core::tensor::{no_grad, ops, Mode};
use eagle_core::train::{checkpoint, evaluate, train_loop, TrainError, TrainOptions};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "eagle", about = "Lesion segmentation toolkit: synthesize data, train, evaluate, predict, self-check", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset on disk
    Synth(SynthArgs),
    /// Train a model from a config file
    Train(TrainArgs),
    /// Evaluate a checkpoint on one dataset split
    Eval(EvalArgs),
    /// Segment a single image container
    Predict(PredictArgs),
    /// Run the property self-check suites
    Check(CheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Number of samples
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = KindArg::Mixed)]
    kind: KindArg,
    /// Slice side length (multiple of 64)
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// key=value config file
    #[arg(long)]
    config: PathBuf,
    /// Additional key=value overrides
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory (written by `synth`)
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Also write the JSON report here
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Input grid container (.img); i16 payloads are windowed HU
    #[arg(long = "in")]
    input: PathBuf,
    /// Output mask PNG (255 = lesion)
    #[arg(long = "out")]
    output: PathBuf,
    /// Optional probability-map PNG
    #[arg(long)]
    prob_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 35.0)]
    window_level: f64,
    #[arg(long, default_value_t = 150.0)]
    window_width: f64,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    suite: SuiteArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Ce,
    Ae,
    Mixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Haar,
    Scan,
    Grad,
    Shapes,
    All,
}

impl From<SplitArg> for Split {
    fn from(v: SplitArg) -> Split {
        match v {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

enum CliError {
    /// Bad arguments, config, paths, or file formats -> exit 2.
    Usage(String),
    /// Non-finite numerics or failed property suites -> exit 3.
    Numeric(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<data_io::DataError> for CliError {
    fn from(e: data_io::DataError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<checkpoint::CheckpointError> for CliError {
    fn from(e: checkpoint::CheckpointError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<eagle_core::tensor::TensorError> for CliError {
    fn from(e: eagle_core::tensor::TensorError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(CliError::usage("--n must be >= 1"));
    }
    if args.size == 0 || !args.size.is_multiple_of(64) {
        return Err(CliError::usage(format!(
            "--size must be a positive multiple of 64, got {}",
            args.size
        )));
    }
    let kind = match args.kind {
        KindArg::Ce => LesionKind::Ce,
        KindArg::Ae => LesionKind::Ae,
        KindArg::Mixed => LesionKind::Synthetic,
    };
    let mut samples = synth_generate::<f32>(args.n, args.seed, kind, args.size)?;
    let keys: Vec<String> = samples.iter().map(|s| s.meta.patient.clone()).collect();
    let splits = split_assignments(&keys, (0.8, 0.1, 0.1), args.seed)?;
    for (sample, split) in samples.iter_mut().zip(&splits) {
        sample.meta.split = Some(*split);
    }
    let manifest = data_io::write_dataset(&args.out, &samples, args.seed)?;
    println!(
        "wrote {} samples ({} train / {} val / {} test) to {}",
        manifest.samples.len(),
        manifest.samples.iter().filter(|e| e.split == Split::Train).count(),
        manifest.samples.iter().filter(|e| e.split == Split::Val).count(),
        manifest.samples.iter().filter(|e| e.split == Split::Test).count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let content = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", args.config.display())))?;
    let mut run = RunConfig::default();
    run.apply_file(&content).map_err(CliError::Usage)?;
    run.apply_overrides(&args.overrides).map_err(CliError::Usage)?;
    run.model.validate()?;
    run.optim.validate()?;

    std::fs::create_dir_all(&run.out_dir)
        .map_err(|e| CliError::usage(format!("cannot create out_dir {}: {e}", run.out_dir.display())))?;
    std::fs::write(run.out_dir.join("config.resolved"), run.resolved())
        .map_err(|e| CliError::usage(format!("cannot write config echo: {e}")))?;

    let train_samples = data_io::load_split::<f32>(&run.data_dir, Split::Train)?;
    let val_samples = data_io::load_split::<f32>(&run.data_dir, Split::Val)?;
    let model = Eagle::<f32>::new(run.model.clone(), run.seed)?;
    println!(
        "training on {} samples, validating on {} ({} parameters)",
        train_samples.len(),
        val_samples.len(),
        model.count_params()
    );

    let opts = TrainOptions {
        optim: run.optim.clone(),
        loss_weights: run.loss,
        seed: run.seed,
        augment: run.augment,
        threshold: run.threshold,
    };
    let outcome = train_loop(&model, &train_samples, &val_samples, &opts, Some(&run.out_dir), |r| {
        println!(
            "epoch {:>3}: train {:.4} val {:.4} lr {:.2e} dsc {:.4} precision {:.4} recall {:.4}",
            r.epoch, r.train_loss, r.val_loss, r.lr, r.dsc, r.precision, r.recall
        );
        true
    })?;
    println!(
        "stopped ({:?}) at best epoch {} with val loss {:.6}; checkpoints in {}",
        outcome.stop_reason,
        outcome.best_epoch,
        outcome.best_val_loss,
        run.out_dir.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(CliError::usage("--threshold must lie in (0, 1)"));
    }
    let (model, header) = checkpoint::load::<f32>(&args.ckpt)?;
    let samples = data_io::load_split::<f32>(&args.data, args.split.into())?;
    if samples.is_empty() {
        return Err(CliError::usage(format!("split '{}' is empty", Split::from(args.split))));
    }
    let (loss, metrics) = evaluate(
        &model,
        &samples,
        &eagle_core::loss::LossWeights::default(),
        args.threshold,
        4,
    )?;
    let report = serde_json::json!({
        "dsc": metrics.dsc,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "n": samples.len(),
        "val_loss": loss,
        "checkpoint_epoch": header.epoch,
        "split": Split::from(args.split).to_string(),
    });
    let rendered = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{rendered}");
    if let Some(path) = &args.report {
        std::fs::write(path, rendered.as_bytes())
            .map_err(|e| CliError::usage(format!("cannot write report {}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(CliError::usage("--threshold must lie in (0, 1)"));
    }
    let (model, _) = checkpoint::load::<f32>(&args.ckpt)?;
    let window = WindowSpec {
        level: args.window_level,
        width: args.window_width,
    };
    window.validate()?;
    let image = data_io::read_image_tensor::<f32>(&args.input, &window)?;
    let in_shape = image.shape().to_vec();
    let (in_h, in_w) = (in_shape[1], in_shape[2]);

    let aligned = crop_pad_to_multiple(&image, model.cfg.resolution_multiple())?;
    let s = aligned.shape().to_vec();
    let batched = ops::reshape(&aligned, &[1, 1, s[1], s[2]])?;
    let prob = no_grad(|| model.forward(&batched, Mode::Eval))?;
    let prob3 = ops::reshape(&prob, &[1, s[1], s[2]])?;
    let prob_original = crop_pad_to(&prob3, in_h, in_w)?;

    let prob_values: Vec<f64> = prob_original.with_data(|d| d.iter().map(|v| *v as f64).collect());
    let mask_values: Vec<f64> = prob_values
        .iter()
        .map(|p| if *p >= args.threshold { 1.0 } else { 0.0 })
        .collect();
    data_io::write_gray_png(&args.output, in_h, in_w, &mask_values)?;
    if let Some(prob_path) = &args.prob_out {
        data_io::write_gray_png(prob_path, in_h, in_w, &prob_values)?;
    }
    println!(
        "wrote {}x{} mask to {} ({} lesion pixels at threshold {})",
        in_h,
        in_w,
        args.output.display(),
        mask_values.iter().filter(|v| **v > 0.5).count(),
        args.threshold
    );
    Ok(())
}

fn cmd_check(args: CheckArgs) -> Result<(), CliError> {
    let outcomes = match args.suite {
        SuiteArg::Haar => eagle_core::check::haar_suite(),
        SuiteArg::Scan => eagle_core::check::scan_suite(),
        SuiteArg::Grad => eagle_core::check::grad_suite(),
        SuiteArg::Shapes => eagle_core::check::shape_suite(),
        SuiteArg::All => eagle_core::check::all_suites(),
    }?;
    let mut failures = 0;
    for o in &outcomes {
        println!("[{}] {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        if !o.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CliError::Numeric(format!("{failures} of {} properties failed", outcomes.len())));
    }
    println!("all {} properties passed", outcomes.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Check(args) => cmd_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numeric(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
