//! `person-search` command line: `gen-data`, `train`, `eval` and `render`.
//!
//! Every subcommand takes an optional `--config` file of `key = value`
//! lines; flags given on the command line override it.

pub mod config;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use person_search::encoder::{encode_query, PrecomputedFeatures, RegionEncoder};
use person_search::env::Environment;
use person_search::qnet::{load_checkpoint, save_checkpoint};
use person_search::scenegen::{draw_box, load_dataset, save_dataset, write_ppm};
use person_search::{agent, evaluate, generate_dataset, PooledPixels, Scene, StateEncoder};

pub use config::RunConfig;

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const EPOCH_TABLE_FILE: &str = "epochs.tsv";
pub const METRICS_LOG_FILE: &str = "metrics.log";
pub const TRACE_FILE: &str = "trace.log";
pub const RESOLVED_CONFIG_FILE: &str = "run.cfg";

const BOX_COLOR: [u8; 3] = [255, 0, 255];

#[derive(Debug, Parser)]
#[command(name = "person-search", version, about = "Train and inspect a box-search agent on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(Flags),
    /// Train a Q-network on a dataset.
    Train(Flags),
    /// Evaluate a checkpoint greedily on a dataset.
    Eval(Flags),
    /// Play one greedy episode and write one frame per step.
    Render(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Description mode: regular, random or none.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
}

impl Flags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let here = Path::new("");
        let mut set = |key: &str, value: Option<String>| match value {
            Some(v) => cfg.set(key, &v, here),
            None => Ok(()),
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("dataset", path(&self.dataset))?;
        set("checkpoint", path(&self.checkpoint))?;
        set("out", path(&self.out))?;
        set("mode", self.mode.clone())?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("count", self.count.map(|v| v.to_string()))?;
        Ok(cfg)
    }
}

/// Runs one command line (program name first) and returns its exit status,
/// printing any error to stderr.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Like [`run_command`] but returns the error instead of printing it.
pub fn run<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    dispatch(Cli::try_parse_from(argv)?.command)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(f) => gen_data(&f.resolve()?),
        Command::Train(f) => train(&f.resolve()?),
        Command::Eval(f) => eval(&f.resolve()?),
        Command::Render(f) => render(&f.resolve()?),
    }
}

fn required<'a, T>(value: &'a Option<T>, what: &str, command: &str) -> Result<&'a T> {
    value
        .as_ref()
        .with_context(|| format!("`{command}` needs --{what} (or `{what}` in the config file)"))
}

fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    load_dataset(path).with_context(|| format!("cannot load dataset `{}`", path.display()))
}

fn region_encoder(cfg: &mut RunConfig) -> Result<Box<dyn RegionEncoder>> {
    match &cfg.features {
        Some(path) => {
            let features = PrecomputedFeatures::load(path)
                .with_context(|| format!("cannot load features `{}`", path.display()))?;
            cfg.train.encoder.d_img = features.dim();
            Ok(Box::new(features))
        }
        None => Ok(Box::new(PooledPixels {
            grid: cfg.train.encoder.region_grid,
        })),
    }
}

fn append_log(out: Option<&PathBuf>, line: &str) -> Result<()> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create `{}`", dir.display()))?;
        let path = dir.join(METRICS_LOG_FILE);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("cannot open `{}`", path.display()))?;
        writeln!(file, "{line}").with_context(|| format!("cannot write `{}`", path.display()))?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write `{}`", path.display()))
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    let seed = *required(&cfg.seed, "seed", "gen-data")?;
    let out = required(&cfg.out, "out", "gen-data")?;
    let scenes = generate_dataset(seed, cfg.count, &cfg.scene)?;
    let manifest = save_dataset(&scenes, out)?;
    println!("wrote {} scenes to {}", scenes.len(), manifest.display());
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    required(&cfg.seed, "seed", "train")?;
    let dataset = load_scenes(required(&cfg.dataset, "dataset", "train")?)?;
    let eval_set = cfg.eval_dataset.as_deref().map(load_scenes).transpose()?;
    let out = required(&cfg.out, "out", "train")?.clone();
    let region = region_encoder(&mut cfg)?;
    fs::create_dir_all(&out).with_context(|| format!("cannot create `{}`", out.display()))?;
    write_file(&out.join(RESOLVED_CONFIG_FILE), &cfg.to_text())?;

    let mut log_lines = Vec::new();
    let outcome = agent::train(&dataset, eval_set.as_deref(), region.as_ref(), &cfg.train, |r| {
        let (label, m) = match &r.eval {
            Some(m) => ("eval", m),
            None => ("train", &r.train),
        };
        let line = format!(
            "train epoch={} episodes_per_image={} epsilon_start={:.4} {label} {}",
            r.epoch,
            r.episodes_per_image,
            r.epsilon_start,
            m.record()
        );
        println!("{line}");
        log_lines.push(line);
    })?;
    for line in &log_lines {
        append_log(Some(&out), line)?;
    }
    write_file(&out.join(EPOCH_TABLE_FILE), &agent::epoch_table(&outcome.epochs))?;
    let checkpoint = cfg.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    save_checkpoint(&outcome.net, &outcome.opt, &checkpoint)?;
    println!("checkpoint written to {}", checkpoint.display());
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    let checkpoint = required(&cfg.checkpoint, "checkpoint", "eval")?.clone();
    let dataset = load_scenes(required(&cfg.dataset, "dataset", "eval")?)?;
    let (net, _) = load_checkpoint(&checkpoint)
        .with_context(|| format!("cannot load checkpoint `{}`", checkpoint.display()))?;
    let region = region_encoder(&mut cfg)?;
    let (metrics, _) = evaluate(&dataset, &net, region.as_ref(), &cfg.train, cfg.mode)?;
    let line = format!("eval mode={} {}", cfg.mode, metrics.record());
    println!("{line}");
    append_log(cfg.out.as_ref(), &line)
}

fn render(cfg: &RunConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    let checkpoint = required(&cfg.checkpoint, "checkpoint", "render")?.clone();
    let dataset = load_scenes(required(&cfg.dataset, "dataset", "render")?)?;
    let out = required(&cfg.out, "out", "render")?.clone();
    let scene = dataset.get(cfg.render_scene).with_context(|| {
        format!(
            "render_scene {} is out of range for a dataset of {} scenes",
            cfg.render_scene,
            dataset.len()
        )
    })?;
    let (net, _) = load_checkpoint(&checkpoint)
        .with_context(|| format!("cannot load checkpoint `{}`", checkpoint.display()))?;
    let region = region_encoder(&mut cfg)?;
    let mut enc_cfg = cfg.train.encoder.clone();
    enc_cfg.query_mode = cfg.mode;
    let encoder = StateEncoder::new(region.as_ref(), enc_cfg.clone())?;
    let pool: Vec<&str> = dataset.iter().map(|s| s.description.as_str()).collect();
    let mut rng = agent::stream_rng(cfg.train.seed, agent::STREAM_QUERY);
    let query = encode_query(&scene.description, &enc_cfg, &pool, &mut rng)?;
    let record = agent::run_episode(scene, &net, &encoder, &query, cfg.train.env, 0.0, &mut rng)?;

    fs::create_dir_all(&out).with_context(|| format!("cannot create `{}`", out.display()))?;
    let env = Environment::new(scene, cfg.train.env)?;
    let mut state = env.reset();
    let frame = |i: usize| out.join(format!("frame_{i:03}.ppm"));
    write_ppm(&draw_box(scene, &state.bbox, BOX_COLOR), frame(0))?;
    for (i, step) in record.trace.iter().enumerate() {
        state = env.step(&state, step.action)?.next_state;
        write_ppm(&draw_box(scene, &state.bbox, BOX_COLOR), frame(i + 1))?;
    }
    write_file(&out.join(TRACE_FILE), &record.trace_log())?;
    if state.step_count != record.action_count {
        bail!("replayed episode diverged from the recorded trace");
    }
    println!(
        "scene {}: {} actions, final IoU {:.4}, {} frames in {}",
        scene.id,
        record.action_count,
        record.final_iou,
        record.action_count + 1,
        out.display()
    );
    Ok(())
}
