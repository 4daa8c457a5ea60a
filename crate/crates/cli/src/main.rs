use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fer_core::eval::{evaluate, render_comparison_report, LabeledDataset, BASELINES};
use fer_core::model::ferw;
use fer_core::train::{train_with_progress, AdamHyper, CheckpointPolicy, SampleSource, TrainConfig};
use fer_core::{build_table1_model, EmotionLabel, Model};
use fer_service::store::Store;
use fer_service::{AppState, ServiceConfig, DEFAULT_MAX_UPLOAD_BYTES};

const STORE_ENV: &str = "FER_STORE";

/// Facial emotion recognition: train, evaluate, serve and curate.
#[derive(Debug, Parser)]
#[command(name = "fer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the reference network and write its best checkpoint.
    Train(TrainArgs),
    /// Evaluate a weight file and print the baseline comparison report.
    Eval(EvalArgs),
    /// Run the HTTP classification service.
    Serve(ServeArgs),
    /// Write the stored images as a labelled dataset archive (tar).
    ExportDataset(ExportArgs),
    /// Print a weight file's layer manifest and parameter counts.
    InspectModel(InspectArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training set root with one subdirectory per label.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Evaluation set root, scored after every epoch.
    #[arg(long = "eval", value_name = "DIR")]
    eval_data: PathBuf,
    /// Output weight file (FERW) for the peak-accuracy epoch.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Per-epoch history as CSV [default: <out> with extension .history.csv].
    #[arg(long, value_name = "FILE")]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 13)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Seeds both weight initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Adam step size.
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    /// Train with unit class weights instead of inverse-frequency weights.
    #[arg(long)]
    no_class_weights: bool,
    /// Keep the final epoch instead of the peak-accuracy epoch.
    #[arg(long)]
    keep_last: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Weight file (FERW) to evaluate.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Dataset root with one subdirectory per label.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Also write the report to this file.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Row name for the evaluated model [default: the model's manifest name].
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Weight file to install and activate at startup.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Image and model store root.
    #[arg(long, value_name = "DIR", env = STORE_ENV)]
    store: PathBuf,
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:8080", env = "FER_LISTEN")]
    listen: SocketAddr,
    /// Largest accepted classify upload in bytes.
    #[arg(long, default_value_t = DEFAULT_MAX_UPLOAD_BYTES, env = "FER_MAX_UPLOAD_BYTES")]
    max_upload_bytes: usize,
    /// Exact CORS origin of the UI [default: any origin].
    #[arg(long, value_name = "ORIGIN", env = "FER_ALLOWED_ORIGIN")]
    allowed_origin: Option<String>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Image store root.
    #[arg(long, value_name = "DIR", env = STORE_ENV)]
    store: PathBuf,
    /// Output tar archive.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Only export images with a human-provided label.
    #[arg(long)]
    labeled_only: bool,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Weight file (FERW).
    #[arg(value_name = "FILE")]
    model: PathBuf,
}

/// A runtime failure, already phrased with the path or option it concerns.
#[derive(Debug)]
struct Failure(String);

trait Context<T> {
    fn at(self, path: &Path) -> Result<T, Failure>;
}

impl<T, E: Display> Context<T> for Result<T, E> {
    fn at(self, path: &Path) -> Result<T, Failure> {
        self.map_err(|e| Failure(format!("{}: {e}", path.display())))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Serve(args) => serve(args),
        Command::ExportDataset(args) => export(args),
        Command::InspectModel(args) => inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let train_set = LabeledDataset::load(&args.data).at(&args.data)?;
    let eval_set = LabeledDataset::load(&args.eval_data).at(&args.eval_data)?;
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        seed: args.seed,
        class_weighting: !args.no_class_weights,
        checkpoint: if args.keep_last {
            CheckpointPolicy::Last
        } else {
            CheckpointPolicy::Peak
        },
        adam: AdamHyper {
            alpha: args.learning_rate,
            ..AdamHyper::default()
        },
    };
    config
        .validate()
        .map_err(|e| Failure(format!("--epochs/--batch/--learning-rate: {e}")))?;
    log::info!(
        "training on {} images ({} skipped), evaluating on {}",
        train_set.len(),
        train_set.skipped().len(),
        eval_set.len()
    );
    let history_path = args.history.unwrap_or_else(|| args.out.with_extension("history.csv"));
    let outcome = train_with_progress(build_table1_model(args.seed), &train_set, &eval_set, &config, |e| {
        println!(
            "epoch {:>3}  loss {:.4}  train-acc {:.4}  eval-top1 {:.4}  eval-top3 {:.4}",
            e.epoch, e.train_loss, e.train_accuracy, e.eval_top1, e.eval_top3
        );
    })
    .at(&args.data)?;
    ferw::save_file(&outcome.model, &args.out).at(&args.out)?;
    std::fs::write(&history_path, outcome.history.to_csv()).at(&history_path)?;
    if let Some(peak) = outcome.history.peak() {
        println!("peak eval top-1 {:.4} at epoch {}", peak.eval_top1, peak.epoch);
    }
    println!("wrote {} and {}", args.out.display(), history_path.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    let bytes = std::fs::read(path).at(path)?;
    ferw::from_bytes(&bytes).at(path)
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let data = LabeledDataset::load(&args.data).at(&args.data)?;
    let evaluation = evaluate(&model, &data).at(&args.data)?;
    let name = args.name.unwrap_or_else(|| model.spec().name.clone());
    let mut report = render_comparison_report(Some((&name, &evaluation.metrics)), &BASELINES);
    let excluded = data.skipped().len() + evaluation.failures.len();
    if excluded > 0 {
        report.push_str(&format!("\n{excluded} images excluded (unreadable or failed preprocessing)\n"));
        for f in data.skipped().iter().chain(&evaluation.failures) {
            report.push_str(&format!("  {}: {}\n", f.path.display(), f.reason));
        }
    }
    print!("{report}");
    if let Some(path) = &args.report {
        std::fs::write(path, &report).at(path)?;
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    let state = AppState::open(&args.store).at(&args.store)?;
    if let Some(path) = &args.model {
        let bytes = std::fs::read(path).at(path)?;
        let (entry, _) = state.models.install(&bytes, None).at(path)?;
        state.models.activate(&entry.model_id).at(path)?;
    }
    let config = ServiceConfig {
        max_upload_bytes: args.max_upload_bytes,
        allowed_origin: args.allowed_origin,
        ..ServiceConfig::new(args.listen, args.store.clone())
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure(format!("starting runtime: {e}")))?;
    runtime
        .block_on(fer_service::serve(config, state, async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        }))
        .map_err(|e| Failure(format!("--listen {}: {e}", args.listen)))
}

fn export(args: ExportArgs) -> Result<(), Failure> {
    if !args.store.is_dir() {
        return Err(Failure(format!("{}: store directory does not exist", args.store.display())));
    }
    let store = Store::open(&args.store).at(&args.store)?;
    let file = File::create(&args.out).at(&args.out)?;
    let mut out = BufWriter::new(file);
    let summary = store.export(args.labeled_only, &mut out).at(&args.store)?;
    out.flush().at(&args.out)?;
    println!(
        "exported {} images ({} human-labelled) to {}",
        summary.record_count,
        summary.labeled_count,
        args.out.display()
    );
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let spec = model.spec();
    let trace = spec.trace().at(&args.model)?;
    println!("model   {}", spec.name);
    println!("input   {}", dims(&spec.input_shape));
    println!(
        "labels  {}",
        EmotionLabel::ALL[..spec.classes.min(EmotionLabel::COUNT)]
            .iter()
            .map(|l| l.name())
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!();
    println!("{:>3}  {:<10} {:<10} {:<16} {:>12}", "#", "layer", "name", "output", "parameters");
    for (i, (layer, (kind, shape))) in spec.layers.iter().zip(&trace.layers).enumerate() {
        let params: usize = layer.tensor_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        let name = layer
            .tensor_shapes()
            .first()
            .and_then(|(n, _)| n.split('.').next().map(str::to_string))
            .unwrap_or_default();
        println!("{:>3}  {:<10} {:<10} {:<16} {:>12}", i + 1, kind, name, dims(shape), params);
    }
    println!();
    println!("parameters  {}", spec.parameter_count());
    println!("trainable   {}", spec.trainable_parameter_count());
    if let Some(width) = trace.flatten_width() {
        println!("flatten     {width}");
    }
    Ok(())
}

fn dims(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("×")
}
