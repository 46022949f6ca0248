//! `advtrack` command-line pipeline: simulate, split, train, eval, report.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use advtrack::config::RunConfig;
use advtrack::dataset::{
    build_samples, detection_rate, generate_rollouts, load_rollouts, split_dataset, Rollout, Sample,
    SampleShape, DETECTION_FEATURES,
};
use advtrack::eval::{evaluate, heatmap_svg, report_csv, run_benchmark, ModelVariant, ReportRow};
use advtrack::model::{train, ModelCheckpoint, ModelConfig, TrainOptions};
use advtrack::Network;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] advtrack::ConfigError),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "advtrack", version, about = "Pursuit-evasion rollouts and adversary-location prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate rollouts and print the achieved detection rate.
    Simulate(SimulateArgs),
    /// Write a train/val/test split of a rollout directory.
    Split(SplitArgs),
    /// Train one model on a rollout directory.
    Train(TrainArgs),
    /// Score checkpoints on the test split.
    Eval(EvalArgs),
    /// Train (or reuse) and evaluate the full ablation grid.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    pub config: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; defaults to `runs/data/<name>-<hash>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Enabled components, any of `gnn,mi,omega`; `none` gives the wide-head baseline.
    #[arg(long, value_delimiter = ',')]
    pub ablation: Option<Vec<String>>,
    #[arg(long)]
    pub horizon: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// A checkpoint file or a directory searched for `model.json` files.
    pub checkpoints: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset and eval settings (default: the config echoed in `--data`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub p_threshold: Option<f64>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// CSV output path (default: stdout).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Test-sample index to render as an SVG heatmap per checkpoint.
    #[arg(long)]
    pub heatmap: Option<usize>,
    /// Directory for heatmaps (default: next to each checkpoint).
    #[arg(long)]
    pub heatmap_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Horizons (default: the config's list).
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<u32>>,
    /// Model ids (default: all five rows).
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a).map(|_| ()),
        Command::Split(a) => cmd_split(&a).map(|_| ()),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Report(a) => cmd_report(&a).map(|_| ()),
    }
}

const CONFIG_ECHO: &str = "config.toml";
const SPLIT_FILE: &str = "split.json";
const CHECKPOINT_FILE: &str = "model.json";
const METRICS_FILE: &str = "metrics.csv";

fn echo_config(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(CONFIG_ECHO), cfg.to_toml_string()).with_context(|| format!("writing config into {}", dir.display()))?;
    Ok(())
}

fn load_data_config(data: &Path) -> CliResult<RunConfig> {
    let path = data.join(CONFIG_ECHO);
    if !path.is_file() {
        return Err(CliError::Usage(format!("{} is not a rollout directory (no {CONFIG_ECHO})", data.display())));
    }
    Ok(RunConfig::load(&path)?)
}

/// Generates rollouts and returns the output directory and detection rate.
pub fn cmd_simulate(a: &SimulateArgs) -> CliResult<(PathBuf, f64)> {
    let cfg = RunConfig::load(&a.config)?;
    if a.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs/data").join(format!("{}-{}", cfg.name, cfg.simulation_hash())));
    echo_config(&cfg, &out)?;
    let generate = || generate_rollouts(&cfg, a.count, a.seed, &out);
    let paths = match a.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .context("building worker pool")?
            .install(generate),
        None => generate(),
    }
    .map_err(anyhow::Error::from)?;
    let rollouts = load_rollouts(&out).map_err(anyhow::Error::from)?;
    let rate = detection_rate(&rollouts);
    println!("{} rollouts in {}; detection rate {:.2}%", paths.len(), out.display(), 100.0 * rate);
    Ok((out, rate))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

fn rollout_names(data: &Path) -> CliResult<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(data)
        .with_context(|| format!("reading {}", data.display()))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.starts_with("rollout_") && n.ends_with(".jsonl"))
        .collect();
    names.sort();
    Ok(names)
}

pub fn cmd_split(a: &SplitArgs) -> CliResult<SplitFile> {
    let cfg = load_data_config(&a.data)?;
    let names = rollout_names(&a.data)?;
    let split = split_dataset(names.len(), cfg.dataset.split, a.seed).map_err(anyhow::Error::from)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| names[i].clone()).collect();
    let file = SplitFile {
        seed: a.seed,
        train: pick(&split.train),
        val: pick(&split.val),
        test: pick(&split.test),
    };
    fs::write(a.data.join(SPLIT_FILE), serde_json::to_string_pretty(&file).context("encoding split")?)
        .context("writing split")?;
    println!("split {} rollouts into {}/{}/{}", names.len(), file.train.len(), file.val.len(), file.test.len());
    Ok(file)
}

fn load_split(data: &Path) -> CliResult<SplitFile> {
    let path = data.join(SPLIT_FILE);
    if path.is_file() {
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    log::info!("no {SPLIT_FILE} in {}; splitting with seed 0", data.display());
    cmd_split(&SplitArgs {
        data: data.to_path_buf(),
        seed: 0,
    })
}

/// Samples for one split part at `horizon`.
pub struct PartSamples {
    pub shape: SampleShape,
    pub rollouts: Vec<Rollout>,
    pub samples: Vec<Sample>,
}

fn part_samples(data: &Path, names: &[String], cfg: &RunConfig, horizon: u32) -> CliResult<PartSamples> {
    if names.is_empty() {
        return Err(CliError::Usage("split part is empty".into()));
    }
    let rollouts: Vec<Rollout> = names
        .iter()
        .map(|n| Rollout::read(&data.join(n)))
        .collect::<Result<_, _>>()
        .map_err(anyhow::Error::from)?;
    let d = &cfg.dataset;
    let samples: Vec<Sample> = rollouts
        .iter()
        .flat_map(|r| build_samples(r, d.history, horizon, d.stride, d.max_detections))
        .collect();
    let agents = rollouts[0].steps.first().map_or(0, |s| s.blue.len());
    Ok(PartSamples {
        shape: SampleShape {
            window: d.history + 1,
            agents,
            max_detections: d.max_detections,
        },
        rollouts,
        samples,
    })
}

/// Maps `--ablation` entries to one of the reported model rows.
pub fn variant_from_ablation(list: Option<&[String]>) -> CliResult<ModelVariant> {
    let Some(list) = list else {
        return Ok(ModelVariant::Ours);
    };
    let (mut gnn, mut mi, mut omega) = (false, false, false);
    for item in list {
        match item.trim() {
            "gnn" => gnn = true,
            "mi" => mi = true,
            "omega" => omega = true,
            "none" | "" => {}
            other => return Err(CliError::Usage(format!("unknown ablation component `{other}` (expected gnn, mi, omega)"))),
        }
    }
    ModelVariant::from_flags(gnn, omega, mi).ok_or_else(|| {
        let valid: Vec<&str> = ModelVariant::ALL.iter().map(|v| v.id()).collect();
        CliError::Usage(format!(
            "ablation gnn={gnn} mi={mi} omega={omega} is not a reported model row ({})",
            valid.join(", ")
        ))
    })
}

fn model_config(cfg: &RunConfig, variant: ModelVariant, horizon: u32, seed: u64, epochs: Option<usize>) -> ModelConfig {
    let mut m = variant.apply(&cfg.model);
    m.horizon = horizon;
    m.seed = seed;
    if let Some(e) = epochs {
        m.epochs = e;
    }
    m
}

fn train_one(cfg: &RunConfig, data: &Path, model: &ModelConfig, out: &Path) -> CliResult<PathBuf> {
    let split = load_split(data)?;
    let tr = part_samples(data, &split.train, cfg, model.horizon)?;
    let va = part_samples(data, &split.val, cfg, model.horizon)?;
    if tr.samples.is_empty() || va.samples.is_empty() {
        return Err(CliError::Runtime(anyhow!("no samples at horizon {}; episodes are too short", model.horizon)));
    }
    let mut echoed = cfg.clone();
    echoed.model = model.clone();
    echo_config(&echoed, out)?;
    let outcome = train::<f64>(
        model,
        tr.shape,
        &tr.samples,
        &va.samples,
        &TrainOptions {
            metrics_path: Some(out.join(METRICS_FILE)),
        },
    )
    .map_err(anyhow::Error::from)?;
    let path = out.join(CHECKPOINT_FILE);
    outcome
        .network
        .to_checkpoint(&tr.rollouts[0].header.config_hash)
        .save(&path)
        .map_err(anyhow::Error::from)?;
    if let Some(ll) = outcome.best_val_ll {
        println!("{}: best val LL {ll:.4} at epoch {}", path.display(), outcome.best_epoch.unwrap_or(0));
    } else {
        println!("{}: saved initialization (0 epochs)", path.display());
    }
    Ok(path)
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<PathBuf> {
    let cfg = RunConfig::load(&a.config)?;
    if !a.data.is_dir() {
        return Err(CliError::Usage(format!("dataset directory {} does not exist", a.data.display())));
    }
    let variant = variant_from_ablation(a.ablation.as_deref())?;
    let model = model_config(&cfg, variant, a.horizon.unwrap_or(cfg.model.horizon), a.seed.unwrap_or(cfg.model.seed), a.epochs);
    model.validate().map_err(CliError::Usage)?;
    let out = a.out.clone().unwrap_or_else(|| {
        let mut c = cfg.clone();
        c.model = model.clone();
        PathBuf::from("runs/models").join(format!(
            "{}-{}-t{}-s{}-{}",
            cfg.name,
            variant.id(),
            model.horizon,
            model.seed,
            c.hash()
        ))
    });
    train_one(&cfg, &a.data, &model, &out)
}

fn find_checkpoints(root: &Path) -> CliResult<Vec<PathBuf>> {
    if root.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    if !root.is_dir() {
        return Err(CliError::Usage(format!("{} does not exist", root.display())));
    }
    let mut found = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.with_context(|| format!("listing {}", root.display()))?;
        if entry.file_type().is_file() && entry.file_name() == CHECKPOINT_FILE {
            found.push(entry.into_path());
        }
    }
    found.sort();
    Ok(found)
}

fn valid_detections(s: &Sample) -> Vec<(f64, f64)> {
    s.detections
        .chunks(DETECTION_FEATURES)
        .filter(|r| r[0] > 0.0)
        .map(|r| (r[2], r[3]))
        .collect()
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<Vec<ReportRow>> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => load_data_config(&a.data)?,
    };
    if let Some(d) = a.delta {
        cfg.eval.delta = d;
    }
    if let Some(p) = a.p_threshold {
        cfg.eval.p_threshold = p;
    }
    if let Some(n) = a.mc_samples {
        cfg.eval.mc_samples = n;
    }
    if !(cfg.eval.delta > 0.0) || cfg.eval.mc_samples == 0 {
        return Err(CliError::Usage("--delta must be positive and --mc-samples at least 1".into()));
    }
    let checkpoints = find_checkpoints(&a.checkpoints)?;
    if checkpoints.is_empty() {
        return Err(CliError::Usage(format!("no {CHECKPOINT_FILE} under {}", a.checkpoints.display())));
    }
    let split = load_split(&a.data)?;
    let mut rows = Vec::new();
    for path in &checkpoints {
        let ck = ModelCheckpoint::load(path).map_err(anyhow::Error::from)?;
        let net = Network::from_checkpoint(&ck).map_err(anyhow::Error::from)?;
        let variant = ModelVariant::from_flags(ck.config.use_gnn, ck.config.use_omega_mm, ck.config.use_mi)
            .ok_or_else(|| anyhow!("{}: flags match no reported model row", path.display()))?;
        let test = part_samples(&a.data, &split.test, &cfg, ck.config.horizon)?;
        if test.samples.is_empty() {
            return Err(CliError::Runtime(anyhow!("test split has no samples at horizon {}", ck.config.horizon)));
        }
        if test.shape != ck.shape {
            return Err(CliError::Runtime(anyhow!(
                "{}: checkpoint expects {:?}, data gives {:?}",
                path.display(),
                ck.shape,
                test.shape
            )));
        }
        let metrics = evaluate(&net, &test.samples, &cfg.eval).map_err(anyhow::Error::from)?;
        if let Some(i) = a.heatmap {
            let s = test
                .samples
                .get(i)
                .ok_or_else(|| CliError::Usage(format!("--heatmap {i} exceeds {} test samples", test.samples.len())))?;
            let mix = net.predict_samples(std::slice::from_ref(s)).map_err(anyhow::Error::from)?;
            let h = &test.rollouts[0].header;
            let svg = heatmap_svg(&mix[0], (h.width, h.height), 120, Some(s.target), &valid_detections(s));
            let dir = a.heatmap_dir.clone().unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
            fs::create_dir_all(&dir).context("creating heatmap directory")?;
            let file = dir.join(format!("heatmap_{}_t{}_s{}_{i}.svg", variant.id(), ck.config.horizon, ck.config.seed));
            fs::write(&file, svg).with_context(|| format!("writing {}", file.display()))?;
            println!("wrote {}", file.display());
        }
        rows.push(ReportRow {
            dataset: cfg.name.clone(),
            variant,
            horizon: ck.config.horizon,
            seed: Some(ck.config.seed),
            metrics: Some(metrics),
        });
    }
    let csv = report_csv(&rows);
    match &a.report {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(rows)
}

pub fn cmd_report(a: &ReportArgs) -> CliResult<PathBuf> {
    let cfg = RunConfig::load(&a.config)?;
    if !a.data.is_dir() {
        return Err(CliError::Usage(format!("dataset directory {} does not exist", a.data.display())));
    }
    let variants: Vec<ModelVariant> = match &a.variants {
        None => ModelVariant::ALL.to_vec(),
        Some(ids) => ids
            .iter()
            .map(|id| ModelVariant::from_id(id).ok_or_else(|| CliError::Usage(format!("unknown model id `{id}`"))))
            .collect::<CliResult<_>>()?,
    };
    let horizons = a.horizons.clone().unwrap_or_else(|| cfg.dataset.horizons.clone());
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs/report").join(format!("{}-{}", cfg.name, cfg.hash())));
    echo_config(&cfg, &out)?;
    let split = load_split(&a.data)?;
    let rows = run_benchmark(&cfg.name, &variants, &horizons, &a.seeds, |variant, horizon, seed| {
        let model = model_config(&cfg, variant, horizon, seed, a.epochs);
        let dir = out.join("models").join(format!("{}-t{horizon}-s{seed}", variant.id()));
        let path = dir.join(CHECKPOINT_FILE);
        let net = match ModelCheckpoint::load(&path) {
            Ok(ck) if ck.config == model => Network::from_checkpoint(&ck).map_err(|e| e.to_string())?,
            _ => {
                train_one(&cfg, &a.data, &model, &dir).map_err(|e| e.to_string())?;
                let ck = ModelCheckpoint::load(&path).map_err(|e| e.to_string())?;
                Network::from_checkpoint(&ck).map_err(|e| e.to_string())?
            }
        };
        let test = part_samples(&a.data, &split.test, &cfg, horizon).map_err(|e| e.to_string())?;
        evaluate(&net, &test.samples, &cfg.eval).map_err(|e| e.to_string())
    });
    let path = out.join("report.csv");
    fs::write(&path, report_csv(&rows)).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(path)
}
