//! Run configuration: `key = value` files with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use person_search::{QueryMode, SceneParams, TrainConfig};

/// Everything a subcommand may need. Unset paths are `None`.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub scene: SceneParams,
    pub seed: Option<u64>,
    pub count: usize,
    pub dataset: Option<PathBuf>,
    pub eval_dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: QueryMode,
    /// Scene index within the dataset for `render`.
    pub render_scene: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            scene: SceneParams::default(),
            seed: None,
            count: 200,
            dataset: None,
            eval_dataset: None,
            checkpoint: None,
            features: None,
            out: None,
            mode: QueryMode::Regular,
            render_scene: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

impl RunConfig {
    pub const KEYS: [&'static str; 32] = [
        "seed",
        "count",
        "dataset",
        "eval_dataset",
        "checkpoint",
        "features",
        "out",
        "mode",
        "render_scene",
        "width",
        "height",
        "min_figures",
        "max_figures",
        "gamma",
        "epsilon_start",
        "epsilon_min",
        "epsilon_decay",
        "episodes_per_image",
        "episodes_per_image_floor",
        "epoch_decay_start",
        "epochs",
        "batch_size",
        "update_every",
        "replay_capacity",
        "learning_rate",
        "momentum",
        "hidden",
        "max_steps",
        "alpha",
        "min_frac",
        "d_query",
        "region_grid",
    ];

    /// Sets one option by name. Relative paths are resolved against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || base.join(value);
        let t = &mut self.train;
        match key {
            "seed" => {
                let seed = parse(key, value)?;
                self.seed = Some(seed);
                t.seed = seed;
            }
            "count" => self.count = parse(key, value)?,
            "dataset" => self.dataset = Some(path()),
            "eval_dataset" => self.eval_dataset = Some(path()),
            "checkpoint" => self.checkpoint = Some(path()),
            "features" => self.features = Some(path()),
            "out" => self.out = Some(path()),
            "mode" => self.mode = parse(key, value)?,
            "render_scene" => self.render_scene = parse(key, value)?,
            "width" => self.scene.width = parse(key, value)?,
            "height" => self.scene.height = parse(key, value)?,
            "min_figures" => self.scene.min_figures = parse(key, value)?,
            "max_figures" => self.scene.max_figures = parse(key, value)?,
            "gamma" => t.gamma = parse(key, value)?,
            "epsilon_start" => t.epsilon_start = parse(key, value)?,
            "epsilon_min" => t.epsilon_min = parse(key, value)?,
            "epsilon_decay" => t.epsilon_decay = parse(key, value)?,
            "episodes_per_image" => t.episodes_per_image = parse(key, value)?,
            "episodes_per_image_floor" => t.episodes_per_image_floor = parse(key, value)?,
            "epoch_decay_start" => t.epoch_decay_start = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "update_every" => t.update_every = parse(key, value)?,
            "replay_capacity" => t.replay_capacity = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "hidden" => {
                t.hidden = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "max_steps" => t.env.max_steps = parse(key, value)?,
            "alpha" => t.env.actions.alpha = parse(key, value)?,
            "min_frac" => t.env.actions.min_frac = parse(key, value)?,
            "d_query" => t.encoder.d_query = parse(key, value)?,
            "region_grid" => {
                let grid: usize = parse(key, value)?;
                t.encoder.region_grid = grid;
                t.encoder.d_img = grid * grid * 3;
            }
            _ => bail!("unknown configuration key `{key}`"),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        let base = origin.parent().unwrap_or(Path::new(""));
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!("{}:{}: expected `key = value`, got `{line}`", origin.display(), i + 1)
            })?;
            self.set(key.trim(), value.trim(), base)
                .with_context(|| format!("{}:{}", origin.display(), i + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file `{}`", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)
            .with_context(|| format!("config parse failure in `{}`", path.display()))?;
        Ok(cfg)
    }

    /// `key = value` lines reproducing this configuration.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let hidden: Vec<String> = t.hidden.iter().map(|h| h.to_string()).collect();
        let entries: Vec<(&str, Option<String>)> = vec![
            ("seed", self.seed.map(|s| s.to_string())),
            ("count", Some(self.count.to_string())),
            ("dataset", opt_path(&self.dataset)),
            ("eval_dataset", opt_path(&self.eval_dataset)),
            ("checkpoint", opt_path(&self.checkpoint)),
            ("features", opt_path(&self.features)),
            ("out", opt_path(&self.out)),
            ("mode", Some(self.mode.to_string())),
            ("render_scene", Some(self.render_scene.to_string())),
            ("width", Some(self.scene.width.to_string())),
            ("height", Some(self.scene.height.to_string())),
            ("min_figures", Some(self.scene.min_figures.to_string())),
            ("max_figures", Some(self.scene.max_figures.to_string())),
            ("gamma", Some(t.gamma.to_string())),
            ("epsilon_start", Some(t.epsilon_start.to_string())),
            ("epsilon_min", Some(t.epsilon_min.to_string())),
            ("epsilon_decay", Some(t.epsilon_decay.to_string())),
            ("episodes_per_image", Some(t.episodes_per_image.to_string())),
            ("episodes_per_image_floor", Some(t.episodes_per_image_floor.to_string())),
            ("epoch_decay_start", Some(t.epoch_decay_start.to_string())),
            ("epochs", Some(t.epochs.to_string())),
            ("batch_size", Some(t.batch_size.to_string())),
            ("update_every", Some(t.update_every.to_string())),
            ("replay_capacity", Some(t.replay_capacity.to_string())),
            ("learning_rate", Some(t.learning_rate.to_string())),
            ("momentum", Some(t.momentum.to_string())),
            ("hidden", Some(hidden.join(","))),
            ("max_steps", Some(t.env.max_steps.to_string())),
            ("alpha", Some(t.env.actions.alpha.to_string())),
            ("min_frac", Some(t.env.actions.min_frac.to_string())),
            ("d_query", Some(t.encoder.d_query.to_string())),
            ("region_grid", Some(t.encoder.region_grid.to_string())),
        ];
        entries
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k} = {v}\n")))
            .collect()
    }
}
