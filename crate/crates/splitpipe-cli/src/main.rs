//! Command-line front end: planning, reporting, simulation, dataset
//! generation, training, and evaluation over the core library.

mod error;
mod io;
mod manifest;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process;

use clap::{Args, Parser, Subcommand, ValueEnum};

use splitpipe_core::cnn_ir::CnnModel;
use splitpipe_core::cost_model::{DeviceProfile, LinkProfile};
use splitpipe_core::dataset::{generate_dataset, split_train_test, to_ndjson, DatasetRecord};
use splitpipe_core::gnn::{evaluate, train, Formulation, TrainConfig};
use splitpipe_core::model_zoo::{build_reference, ModelName};
use splitpipe_core::pipeline::{
    latency_curve, optimal_split, simulate_pipeline, speedup_report, TransferPath,
};

use error::CliError;
use io::{write_atomic, ParamsFile};
use manifest::{manifest_path_for, ManifestBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PathArg {
    Direct,
    Indirect,
}

impl From<PathArg> for TransferPath {
    fn from(p: PathArg) -> Self {
        match p {
            PathArg::Direct => TransferPath::Direct,
            PathArg::Indirect => TransferPath::Indirect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormulationArg {
    Latency,
    Index,
}

impl From<FormulationArg> for Formulation {
    fn from(f: FormulationArg) -> Self {
        match f {
            FormulationArg::Latency => Formulation::Latency,
            FormulationArg::Index => Formulation::Index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitPart {
    Test,
    Train,
    All,
}

/// Exactly one source for the model under study.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct ModelArgs {
    /// Model description file (JSON).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Reference model by name (e.g. lenet5, vgg16, resnet50).
    #[arg(long)]
    zoo_model: Option<String>,
}

/// Cost-oracle inputs; unset profiles are searched for in
/// $SPLITPIPE_PROFILE_DIR, then ./profiles.
#[derive(Debug, Args)]
struct ProfileArgs {
    /// Stage-1 device profile (JSON); default file name dpu-like.json.
    #[arg(long)]
    dpu: Option<PathBuf>,
    /// Stage-2 device profile (JSON); default file name gpu-like.json.
    #[arg(long)]
    gpu: Option<PathBuf>,
    /// Interconnect profile (JSON); default file name link.json.
    #[arg(long)]
    link: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(name = "splitpipe", version, about = "Split CNN inference across two accelerators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find the optimal split for one model and print the plan.
    Plan {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        profiles: ProfileArgs,
        /// Where the cut tensor travels.
        #[arg(long, value_enum, default_value = "direct")]
        path: PathArg,
        /// Plan JSON destination.
        #[arg(long, default_value = "plan.json")]
        out: PathBuf,
    },
    /// Speedup table and per-model latency curves as CSV.
    Report {
        /// Directory of model JSON files (alternative to --zoo).
        #[arg(value_name = "MODEL_DIR", conflicts_with = "zoo", required_unless_present = "zoo")]
        models: Option<PathBuf>,
        /// Report over the built-in reference models.
        #[arg(long)]
        zoo: bool,
        #[command(flatten)]
        profiles: ProfileArgs,
        /// Output directory for speedups.csv and curve files.
        #[arg(long, default_value = "report")]
        out_dir: PathBuf,
    },
    /// Event-driven pipeline run at a fixed split.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        profiles: ProfileArgs,
        /// Split index: units before it run on stage 1.
        #[arg(long)]
        split: usize,
        #[arg(long, value_enum, default_value = "direct")]
        path: PathArg,
        /// Number of images pushed through the pipeline.
        #[arg(long, default_value_t = 1000)]
        images: usize,
        /// Capacity of the inter-stage queue.
        #[arg(long, default_value_t = 8)]
        queue: usize,
        /// Summary JSON destination.
        #[arg(long, default_value = "simulate.json")]
        out: PathBuf,
    },
    /// Generate a labeled dataset of random models as NDJSON.
    GenDataset {
        /// Number of records.
        #[arg(long)]
        n: usize,
        /// Base seed; record i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        profiles: ProfileArgs,
        #[arg(long, value_enum, default_value = "direct")]
        path: PathArg,
        /// Dataset destination.
        #[arg(long, default_value = "dataset.ndjson")]
        out: PathBuf,
    },
    /// Train a split predictor on a dataset.
    Train {
        /// NDJSON dataset produced by gen-dataset.
        #[arg(long)]
        dataset: PathBuf,
        /// Predictor formulation.
        #[arg(long, value_enum)]
        formulation: FormulationArg,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 64)]
        hidden_dim: usize,
        /// Seed for init and shuffling; also fixes the train/test split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of records used for training.
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        /// Trained-parameters destination.
        #[arg(long, default_value = "params.json")]
        out: PathBuf,
        /// Loss-curve CSV destination; defaults to <out stem>.loss.csv.
        #[arg(long)]
        loss_out: Option<PathBuf>,
    },
    /// Score a trained predictor on a dataset.
    Evaluate {
        /// NDJSON dataset produced by gen-dataset.
        #[arg(long)]
        dataset: PathBuf,
        /// Trained-parameters file produced by train.
        #[arg(long)]
        params: PathBuf,
        /// Cross-check against the formulation stored in the params file.
        #[arg(long, value_enum)]
        formulation: Option<FormulationArg>,
        /// Which side of the stored train/test split to score.
        #[arg(long, value_enum, default_value = "test")]
        split_part: SplitPart,
        /// Metrics JSON destination.
        #[arg(long, default_value = "metrics.json")]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Plan { model, profiles, path, out } => cmd_plan(&model, &profiles, path.into(), &out),
        Command::Report { models, zoo, profiles, out_dir } => {
            cmd_report(models.as_deref(), zoo, &profiles, &out_dir)
        }
        Command::Simulate { model, profiles, split, path, images, queue, out } => {
            cmd_simulate(&model, &profiles, split, path.into(), images, queue, &out)
        }
        Command::GenDataset { n, seed, profiles, path, out } => {
            cmd_gen_dataset(n, seed, &profiles, path.into(), &out)
        }
        Command::Train { dataset, formulation, epochs, lr, hidden_dim, seed, train_fraction, out, loss_out } => {
            let config = TrainConfig {
                epochs,
                learning_rate: lr,
                hidden_dim,
                seed,
                train_fraction,
                ..TrainConfig::default()
            };
            let loss_out = loss_out.unwrap_or_else(|| out.with_extension("loss.csv"));
            cmd_train(&dataset, (formulation).into(), &config, &out, &loss_out)
        }
        Command::Evaluate { dataset, params, formulation, split_part, out } => {
            cmd_evaluate(&dataset, &params, formulation.map(Into::into), split_part, &out)
        }
    }
}

struct Oracles {
    dpu: DeviceProfile,
    gpu: DeviceProfile,
    link: LinkProfile,
}

fn load_profiles(args: &ProfileArgs, mb: &mut ManifestBuilder) -> Result<Oracles, CliError> {
    let dpu_path = io::resolve_profile(args.dpu.as_deref(), "dpu-like.json")?;
    let (dpu, bytes) = io::read_device_profile(&dpu_path)?;
    mb.input(&dpu_path, &bytes);
    let gpu_path = io::resolve_profile(args.gpu.as_deref(), "gpu-like.json")?;
    let (gpu, bytes) = io::read_device_profile(&gpu_path)?;
    mb.input(&gpu_path, &bytes);
    let link_path = io::resolve_profile(args.link.as_deref(), "link.json")?;
    let (link, bytes) = io::read_link_profile(&link_path)?;
    mb.input(&link_path, &bytes);
    Ok(Oracles { dpu, gpu, link })
}

fn load_model(args: &ModelArgs, mb: &mut ManifestBuilder) -> Result<CnnModel, CliError> {
    if let Some(path) = &args.model {
        let (model, bytes) = io::read_model(path)?;
        mb.input(path, &bytes);
        mb.param("model", path.display());
        Ok(model)
    } else {
        let name = args.zoo_model.as_deref().expect("clap requires one model source");
        mb.param("zoo_model", name);
        io::read_zoo_model(name)
    }
}

fn cmd_plan(
    model_args: &ModelArgs,
    profile_args: &ProfileArgs,
    path: TransferPath,
    out: &Path,
) -> Result<(), CliError> {
    let mut mb = ManifestBuilder::start("plan");
    mb.param("path", path.as_str());
    mb.param("out", out.display());
    let model = load_model(model_args, &mut mb)?;
    let oracles = load_profiles(profile_args, &mut mb)?;
    let plan = optimal_split(&model, &oracles.dpu, &oracles.gpu, &oracles.link, path)
        .map_err(|e| CliError::Domain(e.to_string()))?;

    println!("model: {} ({} units)", model.name, model.num_units());
    println!("path: {}", path.as_str());
    println!("optimal split k* = {}", plan.split_index);
    println!("stage1 = {:.6e} s, stage2 = {:.6e} s", plan.stage1, plan.stage2);
    println!("steady = {:.6e} s, fill = {:.6e} s", plan.steady_latency, plan.fill);
    println!("speedup over stage-1-only = {:.4}", plan.speedup_over_dpu);
    println!("speedup over stage-2-only = {:.4}", plan.speedup_over_gpu);

    let bytes = io::to_json_pretty(&plan)?;
    write_atomic(out, &bytes)?;
    mb.output(out, &bytes);
    mb.finish(&manifest_path_for(out))
}

/// File-name-safe form of a model name.
fn sanitize_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}

fn cmd_report(
    models_dir: Option<&Path>,
    zoo: bool,
    profile_args: &ProfileArgs,
    out_dir: &Path,
) -> Result<(), CliError> {
    let mut mb = ManifestBuilder::start("report");
    mb.param("out_dir", out_dir.display());
    let models: Vec<CnnModel> = if zoo {
        mb.param("zoo", "true");
        ModelName::ALL.iter().map(|&n| build_reference(n)).collect()
    } else {
        let dir = models_dir.expect("clap requires a model source");
        mb.param("models", dir.display());
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| CliError::Io { path: dir.to_path_buf(), message: e.to_string() })?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().map_or(false, |ext| ext == "json"))
            .collect();
        paths.sort();
        let mut models = Vec::with_capacity(paths.len());
        for path in &paths {
            let (model, bytes) = io::read_model(path)?;
            mb.input(path, &bytes);
            models.push(model);
        }
        models
    };
    if models.is_empty() {
        return Err(CliError::Domain("no models to report on".into()));
    }
    let oracles = load_profiles(profile_args, &mut mb)?;

    let rows = speedup_report(&models, &oracles.dpu, &oracles.gpu, &oracles.link)
        .map_err(|e| CliError::Domain(e.to_string()))?;
    let mut csv = String::from("model,path,split_index,speedup_over_dpu,speedup_over_gpu\n");
    for row in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            row.model,
            row.path.as_str(),
            row.split_index,
            row.speedup_over_dpu,
            row.speedup_over_gpu
        );
    }
    let speedups_path = out_dir.join("speedups.csv");
    write_atomic(&speedups_path, csv.as_bytes())?;
    mb.output(&speedups_path, csv.as_bytes());

    for model in &models {
        for path in [TransferPath::Direct, TransferPath::Indirect] {
            let curve = latency_curve(model, &oracles.dpu, &oracles.gpu, &oracles.link, path)
                .map_err(|e| CliError::Domain(e.to_string()))?;
            let mut csv = String::from("split_index,stage1_s,stage2_s,steady_s\n");
            for point in &curve {
                let _ = writeln!(
                    csv,
                    "{},{},{},{}",
                    point.split_index, point.stage1_s, point.stage2_s, point.steady_s
                );
            }
            let file = out_dir.join(format!("curve_{}_{}.csv", sanitize_name(&model.name), path.as_str()));
            write_atomic(&file, csv.as_bytes())?;
            mb.output(&file, csv.as_bytes());
        }
    }
    println!("wrote speedups.csv and {} curve files to {}", models.len() * 2, out_dir.display());
    mb.finish(&out_dir.join("manifest.json"))
}

fn cmd_simulate(
    model_args: &ModelArgs,
    profile_args: &ProfileArgs,
    split: usize,
    path: TransferPath,
    images: usize,
    queue: usize,
    out: &Path,
) -> Result<(), CliError> {
    let mut mb = ManifestBuilder::start("simulate");
    mb.param("split", split);
    mb.param("path", path.as_str());
    mb.param("images", images);
    mb.param("queue", queue);
    mb.param("out", out.display());
    let model = load_model(model_args, &mut mb)?;
    let oracles = load_profiles(profile_args, &mut mb)?;
    let summary = simulate_pipeline(
        &model,
        &oracles.dpu,
        &oracles.gpu,
        &oracles.link,
        split,
        path,
        images,
        queue,
    )
    .map_err(|e| CliError::Domain(e.to_string()))?;
    let bytes = io::to_json_pretty(&summary)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    write_atomic(out, &bytes)?;
    mb.output(out, &bytes);
    mb.finish(&manifest_path_for(out))
}

fn cmd_gen_dataset(
    n: usize,
    seed: u64,
    profile_args: &ProfileArgs,
    path: TransferPath,
    out: &Path,
) -> Result<(), CliError> {
    let mut mb = ManifestBuilder::start("gen-dataset");
    mb.param("n", n);
    mb.param("seed", seed);
    mb.param("path", path.as_str());
    mb.param("out", out.display());
    let oracles = load_profiles(profile_args, &mut mb)?;
    let records = generate_dataset(n, seed, &oracles.dpu, &oracles.gpu, &oracles.link, path)
        .map_err(|e| CliError::Domain(e.to_string()))?;
    let text = to_ndjson(&records).map_err(|e| CliError::Internal(e.to_string()))?;
    write_atomic(out, text.as_bytes())?;
    mb.output(out, text.as_bytes());
    println!("wrote {} records to {}", records.len(), out.display());
    mb.finish(&manifest_path_for(out))
}

fn cmd_train(
    dataset: &Path,
    formulation: Formulation,
    config: &TrainConfig,
    out: &Path,
    loss_out: &Path,
) -> Result<(), CliError> {
    let mut mb = ManifestBuilder::start("train");
    mb.param("formulation", format!("{formulation:?}").to_lowercase());
    mb.param("epochs", config.epochs);
    mb.param("lr", config.learning_rate);
    mb.param("hidden_dim", config.hidden_dim);
    mb.param("seed", config.seed);
    mb.param("train_fraction", config.train_fraction);
    mb.param("out", out.display());
    mb.param("loss_out", loss_out.display());
    config.validate().map_err(|e| CliError::Domain(e.to_string()))?;
    let (records, bytes) = io::read_dataset(dataset)?;
    mb.input(dataset, &bytes);
    let (train_records, _) = split_train_test(&records, config.train_fraction, config.seed)
        .map_err(|e| CliError::Domain(e.to_string()))?;
    let samples: Vec<_> = train_records.iter().map(|r| r.sample.clone()).collect();
    let result = train(&samples, config, formulation).map_err(|e| CliError::Domain(e.to_string()))?;

    let file = ParamsFile { config: config.clone(), params: result.params };
    let bytes = io::to_json_pretty(&file)?;
    write_atomic(out, &bytes)?;
    mb.output(out, &bytes);

    let mut csv = String::from("epoch,loss\n");
    for (i, loss) in result.losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", i + 1, loss);
    }
    write_atomic(loss_out, csv.as_bytes())?;
    mb.output(loss_out, csv.as_bytes());
    println!(
        "trained {} samples for {} epochs; final loss {:.6e}",
        samples.len(),
        config.epochs,
        result.losses.last().copied().unwrap_or(f64::NAN)
    );
    mb.finish(&manifest_path_for(out))
}

/// The single transfer path all evaluated records were labeled under.
fn uniform_path(records: &[DatasetRecord]) -> Result<TransferPath, CliError> {
    let paths: BTreeSet<&str> = records.iter().map(|r| r.provenance.path.as_str()).collect();
    match paths.len() {
        0 => Err(CliError::Domain("no records to evaluate".into())),
        1 => Ok(records[0].provenance.path),
        _ => Err(CliError::Domain("dataset mixes transfer paths; evaluate them separately".into())),
    }
}

fn cmd_evaluate(
    dataset: &Path,
    params_path: &Path,
    formulation: Option<Formulation>,
    split_part: SplitPart,
    out: &Path,
) -> Result<(), CliError> {
    let mut mb = ManifestBuilder::start("evaluate");
    mb.param("split_part", format!("{split_part:?}").to_lowercase());
    mb.param("out", out.display());
    let (file, bytes) = io::read_params(params_path)?;
    mb.input(params_path, &bytes);
    if let Some(f) = formulation {
        if f != file.params.formulation {
            return Err(CliError::Domain(format!(
                "params file was trained with the {:?} formulation, not {:?}",
                file.params.formulation, f
            )));
        }
    }
    let (records, bytes) = io::read_dataset(dataset)?;
    mb.input(dataset, &bytes);
    let records = match split_part {
        SplitPart::All => records,
        part => {
            let (train_part, test_part) =
                split_train_test(&records, file.config.train_fraction, file.config.seed)
                    .map_err(|e| CliError::Domain(e.to_string()))?;
            if part == SplitPart::Train {
                train_part
            } else {
                test_part
            }
        }
    };
    let path = uniform_path(&records)?;
    mb.param("path", path.as_str());
    let samples: Vec<_> = records.iter().map(|r| r.sample.clone()).collect();
    let metrics = evaluate(&file.params, &samples, path).map_err(|e| CliError::Domain(e.to_string()))?;
    let bytes = io::to_json_pretty(&metrics)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    write_atomic(out, &bytes)?;
    mb.output(out, &bytes);
    mb.finish(&manifest_path_for(out))
}
