//! Implementations of the `mgtraj` subcommands.
//!
//! Exit codes: 0 success, 2 input error, 3 numeric failure, 4 incompatible
//! artifact.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;
use serde::Deserialize;

use crate::datamodel::ModelConfig;
use crate::ingest::{self, Dataset, SynthSpec};
use crate::metrics::{self, MetricReport};
use crate::model::{MultiGenModel, PreparedSample};
use crate::training::{self, TrainConfig, TrainReport};
use crate::{viz, Error};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_ARTIFACT: i32 = 4;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_CSV: &str = "train_report.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SAMPLES_CSV: &str = "samples.csv";

/// Default out-of-distribution radius when the dataset records none.
pub const DEFAULT_EPS: f64 = 0.5;

#[derive(Parser, Debug)]
#[command(name = "mgtraj", version, about = "Multi-generator trajectory forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic intersection dataset.
    Synth {
        /// TOML synthesis spec.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write the checkpoint and training report.
    Train {
        /// TOML file with `[model]` and `[train]` tables.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint and write per-episode metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional run configuration that must agree with the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated episode ids; all episodes by default.
        #[arg(long)]
        episodes: Option<String>,
        /// Out-of-distribution radius in meters; defaults to the dataset's.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Sample futures for selected episodes and draw figures.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        episodes: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Samples behind each heatmap.
        #[arg(long, default_value_t = 3000)]
        heatmap_samples: usize,
    },
}

/// Failure of a command, with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite { .. } | Error::NoSupport => EXIT_NUMERIC,
            Error::Checkpoint(_) | Error::Dimension { .. } | Error::GeneratorIndex { .. } => EXIT_ARTIFACT,
            Error::Invalid { .. } | Error::Parse { .. } | Error::Io { .. } => EXIT_INPUT,
        };
        CliError { code, message: e.to_string() }
    }
}

fn input(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_INPUT, message: message.into() }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth { config, out, seed } => cmd_synth(&config, &out, seed),
        Command::Train { config, data, out, seed } => cmd_train(&config, &data, &out, seed),
        Command::Eval { checkpoint, data, out, config, k, seed, episodes, eps } => {
            cmd_eval(&checkpoint, &data, &out, config.as_deref(), k, seed, episodes.as_deref(), eps)
        }
        Command::Predict { checkpoint, data, out, episodes, k, seed, heatmap_samples } => {
            cmd_predict(&checkpoint, &data, &out, episodes.as_deref(), k, seed, heatmap_samples)
        }
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn mkdir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> CliResult<T> {
    toml::from_str(text).map_err(|e| input(format!("{}: {}", path.display(), e.message())))
}

pub fn cmd_synth(config: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut spec: SynthSpec = parse_toml(&read(config)?, config)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (episodes, scene) = ingest::synthesize(&spec)?;
    ingest::write_synthetic(out, &spec, &episodes, &scene)?;
    info!("wrote {} episodes to {}", episodes.len(), out.display());
    Ok(())
}

/// Model and training configuration read from one TOML file. Training fields
/// that are absent inherit the learning rate, loss weights and seed of the
/// model table.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: Option<toml::Table>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let raw: RawRunConfig = toml::from_str(text).map_err(|e| Error::invalid("config", e.message().to_string()))?;
        let mut table = toml::Table::new();
        let base = TrainConfig::from_model(&raw.model);
        if let toml::Value::Table(t) = toml::Value::try_from(&base).map_err(|e| Error::invalid("config", e.to_string()))? {
            table = t;
        }
        for (k, v) in raw.train.unwrap_or_default() {
            table.insert(k, v);
        }
        let train: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::invalid("train", e.message().to_string()))?;
        raw.model.validate()?;
        train.validate()?;
        Ok(Self { model: raw.model, train })
    }
}

fn load_data(dir: &Path) -> CliResult<Dataset> {
    if !dir.is_dir() {
        return Err(input(format!("data directory {} does not exist", dir.display())));
    }
    Ok(ingest::load_dataset(dir)?)
}

fn prepare_all(model: &MultiGenModel, ds: &Dataset) -> CliResult<Vec<PreparedSample>> {
    let mut out = Vec::new();
    for ep in &ds.episodes {
        out.extend(model.prepare(ep, &ds.scene)?);
    }
    Ok(out)
}

pub fn cmd_train(config: &Path, data: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut run = RunConfig::parse(&read(config)?).map_err(|e| input(format!("{}: {e}", config.display())))?;
    if let Some(s) = seed {
        run.model.seed = s;
        run.train.seed = s;
    }
    let ds = load_data(data)?;
    let mut model = MultiGenModel::new(run.model.clone())?;
    let samples = prepare_all(&model, &ds)?;
    mkdir(out)?;
    let csv_path = out.join(TRAIN_CSV);
    let mut csv = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    writeln!(csv, "{}", TrainReport::csv_header(run.model.n_g)).map_err(|e| Error::io(&csv_path, e))?;
    let every = run.train.checkpoint_every;
    let result = training::train_with(&mut model, &samples, &run.train, |r, m| {
        writeln!(csv, "{}", TrainReport::csv_row(r)).map_err(|e| Error::io(&csv_path, e))?;
        if every > 0 && (r.iteration + 1) % every == 0 {
            m.save(out.join(format!("model_{:06}.ckpt", r.iteration + 1)))?;
        }
        if (r.iteration + 1) % 100 == 0 {
            info!("iteration {} variety {:.4} selector {:.4}", r.iteration + 1, r.variety, r.selector_ce);
        }
        Ok(())
    });
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    result?;
    model.save(out.join(CHECKPOINT_FILE))?;
    Ok(())
}

fn load_model(path: &Path) -> CliResult<MultiGenModel> {
    if !path.exists() {
        return Err(input(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(MultiGenModel::load(path)?)
}

fn select_episodes<'a>(ds: &'a Dataset, ids: Option<&str>) -> CliResult<Vec<&'a crate::TrajectoryEpisode>> {
    match ids {
        None => Ok(ds.episodes.iter().collect()),
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|id| ds.find(id).ok_or_else(|| input(format!("unknown episode {id}"))))
            .collect(),
    }
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64) << 32)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    k: Option<usize>,
    seed: u64,
    episodes: Option<&str>,
    eps: Option<f64>,
) -> CliResult<()> {
    let model = load_model(checkpoint)?;
    if let Some(c) = config {
        let run = RunConfig::parse(&read(c)?).map_err(|e| input(format!("{}: {e}", c.display())))?;
        if run.model.n_g != model.cfg.n_g {
            return Err(CliError {
                code: EXIT_ARTIFACT,
                message: format!("config has n_G = {} but checkpoint has n_G = {}", run.model.n_g, model.cfg.n_g),
            });
        }
    }
    let ds = load_data(data)?;
    let eps = eps.or(ds.ood_eps()).unwrap_or(DEFAULT_EPS);
    let k = k.unwrap_or(model.cfg.k);
    let mut rows = Vec::new();
    let mut index = 0;
    for ep in select_episodes(&ds, episodes)? {
        for s in model.prepare(ep, &ds.scene)? {
            let (priors, preds) = model.predict(&s, k, sample_seed(seed, index))?;
            index += 1;
            rows.push(MetricReport::evaluate(&ep.id, &preds, &s.futures, eps, priors.active_count(), model.cfg.n_g)?);
        }
    }
    if rows.is_empty() {
        log::warn!("dataset has no evaluable targets; writing the aggregate row only");
    }
    mkdir(out)?;
    write(&out.join(METRICS_CSV), &metrics::to_csv(&rows))
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn cmd_predict(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    episodes: Option<&str>,
    k: Option<usize>,
    seed: u64,
    heatmap_samples: usize,
) -> CliResult<()> {
    let model = load_model(checkpoint)?;
    let ds = load_data(data)?;
    let k = k.unwrap_or(model.cfg.k);
    if k == 0 {
        return Err(input("--k must be at least 1"));
    }
    let selected = select_episodes(&ds, episodes)?;
    mkdir(out)?;
    let mut csv = String::from("episode_id,sample_idx,generator_index,t,x,y\n");
    let mut index = 0;
    for ep in selected {
        let stem = file_stem(&ep.id);
        let mut sample_idx = 0;
        for (ti, s) in model.prepare(ep, &ds.scene)?.iter().enumerate() {
            let (priors, preds) = model.predict(s, k, sample_seed(seed, index))?;
            index += 1;
            for p in &preds.samples {
                for (t, pt) in p.trajectory.iter().enumerate() {
                    let _ = writeln!(csv, "{},{},{},{},{},{}", ep.id, sample_idx, p.generator_index, t, pt.x, pt.y);
                }
                sample_idx += 1;
            }
            let tag = if ti == 0 { stem.clone() } else { format!("{stem}_{}", file_stem(&s.agent_id)) };
            let observed = &ep.agents[ep.agent_index(&s.agent_id).unwrap()].observed;
            viz::save_png(&viz::overlay(&ds.scene, observed, &s.futures, &preds), out.join(format!("overlay_{tag}.png")))?;
            viz::save_png(
                &viz::prior_bars(&priors.priors, model.cfg.activation_threshold),
                out.join(format!("priors_{tag}.png")),
            )?;
            if heatmap_samples > 0 {
                let (_, dense) = model.predict(s, heatmap_samples, sample_seed(seed, index).wrapping_add(1 << 31))?;
                let img = viz::heatmap(&ds.scene, dense.samples.iter().flat_map(|p| p.trajectory.iter()));
                viz::save_png(&img, out.join(format!("heatmap_{tag}.png")))?;
            }
        }
    }
    write(&out.join(SAMPLES_CSV), &csv)
}
