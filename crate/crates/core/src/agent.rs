//! Epsilon-greedy control, the per-image training schedule, and evaluation.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{encode_query, EncoderConfig, QueryMode, RegionEncoder, StateEncoder};
use crate::env::{trace_line, EnvConfig, Environment, SUCCESS_IOU};
use crate::error::{Error, Result};
use crate::geometry::{Action, NUM_ACTIONS};
use crate::qnet::{bellman_targets, update, OptimState, QNetwork};
use crate::replay::{ReplayBuffer, Transition};
use crate::scenegen::Scene;

/// Evaluation-time description variant.
pub type AblationMode = QueryMode;

// Independent random streams derived from the run seed.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_EXPLORE: u64 = 2;
pub const STREAM_REPLAY: u64 = 3;
pub const STREAM_ORDER: u64 = 4;
pub const STREAM_QUERY: u64 = 5;

/// The generator for one named stream of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    /// Linear decrement applied per episode within an image's block.
    pub epsilon_decay: f64,
    pub episodes_per_image: usize,
    pub episodes_per_image_floor: usize,
    /// Last epoch run at the full episode count and starting epsilon.
    pub epoch_decay_start: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Environment steps between minibatch updates.
    pub update_every: usize,
    pub replay_capacity: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub env: EnvConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_min: 0.1,
            epsilon_decay: (1.0 - 0.1) / 15.0,
            episodes_per_image: 20,
            episodes_per_image_floor: 5,
            epoch_decay_start: 10,
            epochs: 25,
            batch_size: 64,
            update_every: 8,
            replay_capacity: ReplayBuffer::DEFAULT_CAPACITY,
            learning_rate: 1e-3,
            momentum: 0.9,
            hidden: vec![256, 128],
            seed: 0,
            env: EnvConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0 <= self.epsilon_min
            && self.epsilon_min <= self.epsilon_start
            && self.epsilon_start <= 1.0)
        {
            return bad(format!(
                "need 0 <= epsilon_min ({}) <= epsilon_start ({}) <= 1",
                self.epsilon_min, self.epsilon_start
            ));
        }
        if self.epsilon_decay < 0.0 {
            return bad("epsilon_decay must be non-negative".into());
        }
        if self.episodes_per_image == 0 || self.episodes_per_image_floor == 0 {
            return bad("episode counts must be positive".into());
        }
        if self.episodes_per_image_floor > self.episodes_per_image {
            return bad("episodes_per_image_floor exceeds episodes_per_image".into());
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.update_every == 0 {
            return bad("batch_size, update_every and replay_capacity must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning_rate must be positive and momentum in [0, 1)".into());
        }
        self.env.actions.validate()?;
        self.encoder.validate()
    }

    pub fn network_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.encoder.state_dim()];
        dims.extend(&self.hidden);
        dims.push(NUM_ACTIONS);
        dims
    }

    /// Episode count and starting epsilon for `epoch` (1-based). Both shrink
    /// linearly toward their floors once `epoch_decay_start` has passed,
    /// reaching them at the final epoch.
    pub fn epoch_schedule(&self, epoch: usize) -> (usize, f64) {
        if epoch <= self.epoch_decay_start || self.epochs <= self.epoch_decay_start {
            return (self.episodes_per_image, self.epsilon_start);
        }
        let span = (self.epochs - self.epoch_decay_start) as f64;
        let p = ((epoch - self.epoch_decay_start) as f64 / span).min(1.0);
        let hi = self.episodes_per_image as f64;
        let lo = self.episodes_per_image_floor as f64;
        let episodes = (hi - p * (hi - lo)).round() as usize;
        let eps = (1.0 - p) * self.epsilon_start + p * self.epsilon_min;
        (episodes, eps)
    }

    /// Epsilon for the `k`-th (0-based) episode of an image block.
    pub fn episode_epsilon(&self, block_start: f64, k: usize) -> f64 {
        (block_start - self.epsilon_decay * k as f64).max(self.epsilon_min)
    }
}

/// With probability `epsilon` a uniform action, otherwise the arg-max with
/// ties going to the lowest index.
pub fn select_action<R: Rng + ?Sized>(q: &[f64; NUM_ACTIONS], epsilon: f64, rng: &mut R) -> Action {
    if rng.random::<f64>() < epsilon {
        return Action::ALL[rng.random_range(0..NUM_ACTIONS)];
    }
    greedy_action(q)
}

pub fn greedy_action(q: &[f64; NUM_ACTIONS]) -> Action {
    let mut best = 0;
    for i in 1..NUM_ACTIONS {
        if q[i] > q[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub action: Action,
    pub iou: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub scene_id: String,
    pub terminated: bool,
    pub final_iou: f64,
    pub action_count: usize,
    pub trace: Vec<TraceStep>,
}

impl EpisodeRecord {
    /// One `step action_name iou reward` line per action.
    pub fn trace_log(&self) -> String {
        self.trace
            .iter()
            .enumerate()
            .map(|(i, s)| trace_line(i + 1, s.action, s.iou, s.reward) + "\n")
            .collect()
    }
}

/// Owns the network, optimizer and replay memory during training.
pub struct Agent {
    pub net: QNetwork,
    pub opt: OptimState,
    pub replay: ReplayBuffer,
    cfg: TrainConfig,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    losses: Vec<f64>,
    steps: u64,
}

impl Agent {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = QNetwork::new(&cfg.network_dims(), &mut stream_rng(cfg.seed, STREAM_INIT))?;
        let opt = OptimState::new(&net, cfg.learning_rate, cfg.momentum);
        Ok(Self {
            net,
            opt,
            replay: ReplayBuffer::new(cfg.replay_capacity)?,
            explore_rng: stream_rng(cfg.seed, STREAM_EXPLORE),
            replay_rng: stream_rng(cfg.seed, STREAM_REPLAY),
            cfg,
            losses: Vec::new(),
            steps: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Drains the losses recorded since the last call.
    pub fn take_losses(&mut self) -> Vec<f64> {
        std::mem::take(&mut self.losses)
    }

    /// Plays one episode; with `learn`, every step is stored and every
    /// `update_every`-th step is followed by one minibatch update once the
    /// replay holds a full batch.
    pub fn run_episode(
        &mut self,
        scene: &Scene,
        encoder: &StateEncoder<'_>,
        query: &[f64],
        epsilon: f64,
        learn: bool,
    ) -> Result<EpisodeRecord> {
        let env = Environment::new(scene, self.cfg.env)?;
        let mut state = env.reset();
        let mut enc = encoder.encode(scene, &state, query)?;
        let mut trace = Vec::new();
        loop {
            let q = self.net.forward(enc.as_slice())?;
            let action = select_action(&q, epsilon, &mut self.explore_rng);
            let out = env.step(&state, action)?;
            trace.push(TraceStep {
                action,
                iou: out.iou_after,
                reward: out.reward,
            });
            let next_enc = encoder.encode(scene, &out.next_state, query)?;
            if learn {
                self.replay.push(Transition {
                    state: enc,
                    action,
                    reward: out.reward,
                    next_state: next_enc.clone(),
                    done: out.terminal,
                });
                self.learn_step()?;
            }
            enc = next_enc;
            state = out.next_state;
            if out.terminal {
                break;
            }
        }
        Ok(finish_record(scene, trace))
    }

    fn learn_step(&mut self) -> Result<()> {
        self.steps += 1;
        if self.replay.len() < self.cfg.batch_size || self.steps % self.cfg.update_every as u64 != 0 {
            return Ok(());
        }
        let batch = self.replay.sample(self.cfg.batch_size, &mut self.replay_rng)?;
        let targets = bellman_targets(&batch, &self.net, self.cfg.gamma)?;
        let loss = update(&mut self.net, &mut self.opt, &batch, &targets)?;
        self.losses.push(loss);
        Ok(())
    }
}

fn finish_record(scene: &Scene, trace: Vec<TraceStep>) -> EpisodeRecord {
    let last = trace.last().expect("episodes take at least one action");
    EpisodeRecord {
        scene_id: scene.id.clone(),
        terminated: last.action.is_terminate(),
        final_iou: last.iou,
        action_count: trace.len(),
        trace,
    }
}

/// Plays one episode with a fixed network and no learning.
pub fn run_episode<R: Rng + ?Sized>(
    scene: &Scene,
    net: &QNetwork,
    encoder: &StateEncoder<'_>,
    query: &[f64],
    env_cfg: EnvConfig,
    epsilon: f64,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let env = Environment::new(scene, env_cfg)?;
    let mut state = env.reset();
    let mut trace = Vec::new();
    loop {
        let enc = encoder.encode(scene, &state, query)?;
        let q = net.forward(enc.as_slice())?;
        let action = select_action(&q, epsilon, rng);
        let out = env.step(&state, action)?;
        trace.push(TraceStep {
            action,
            iou: out.iou_after,
            reward: out.reward,
        });
        state = out.next_state;
        if out.terminal {
            break;
        }
    }
    Ok(finish_record(scene, trace))
}

/// Table-style summary of a set of episodes. Fields over an empty subset
/// are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub episodes: usize,
    pub total_terminated: Option<f64>,
    pub correctly_terminated: Option<f64>,
    pub avg_iou: Option<f64>,
    pub avg_iou_terminate: Option<f64>,
    pub avg_iou_no_terminate: Option<f64>,
    pub avg_num_actions: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl Metrics {
    pub const FIELDS: [&'static str; 6] = [
        "total_terminated",
        "correctly_terminated",
        "avg_iou",
        "avg_iou_terminate",
        "avg_iou_no_terminate",
        "avg_num_actions",
    ];

    pub fn from_records(records: &[EpisodeRecord]) -> Self {
        let term: Vec<&EpisodeRecord> = records.iter().filter(|r| r.terminated).collect();
        let open: Vec<&EpisodeRecord> = records.iter().filter(|r| !r.terminated).collect();
        let n = records.len();
        Metrics {
            episodes: n,
            total_terminated: (n > 0).then(|| term.len() as f64 / n as f64),
            correctly_terminated: mean(
                term.iter()
                    .map(|r| if r.final_iou >= SUCCESS_IOU { 1.0 } else { 0.0 }),
            ),
            avg_iou: mean(records.iter().map(|r| r.final_iou)),
            avg_iou_terminate: mean(term.iter().map(|r| r.final_iou)),
            avg_iou_no_terminate: mean(open.iter().map(|r| r.final_iou)),
            avg_num_actions: mean(term.iter().map(|r| r.action_count as f64)),
        }
    }

    pub fn values(&self) -> [Option<f64>; 6] {
        [
            self.total_terminated,
            self.correctly_terminated,
            self.avg_iou,
            self.avg_iou_terminate,
            self.avg_iou_no_terminate,
            self.avg_num_actions,
        ]
    }

    /// `name=value` pairs separated by single spaces; absent values print
    /// as `N/A`.
    pub fn record(&self) -> String {
        let mut parts = vec![format!("episodes={}", self.episodes)];
        for (name, v) in Self::FIELDS.iter().zip(self.values()) {
            parts.push(format!("{name}={}", fmt_opt(v)));
        }
        parts.join(" ")
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.record())
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "N/A".to_string(),
    }
}

/// Greedy play on every scene under `mode`. Read-only with respect to `net`.
pub fn evaluate(
    dataset: &[Scene],
    net: &QNetwork,
    region: &dyn RegionEncoder,
    cfg: &TrainConfig,
    mode: AblationMode,
) -> Result<(Metrics, Vec<EpisodeRecord>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let enc_cfg = EncoderConfig {
        query_mode: mode,
        ..cfg.encoder.clone()
    };
    let encoder = StateEncoder::new(region, enc_cfg.clone())?;
    let pool: Vec<&str> = dataset.iter().map(|s| s.description.as_str()).collect();
    let mut query_rng = stream_rng(cfg.seed, STREAM_QUERY);
    // Greedy play never consumes this stream.
    let mut explore_rng = stream_rng(cfg.seed, STREAM_EXPLORE);
    let mut records = Vec::with_capacity(dataset.len());
    for scene in dataset {
        let query = encode_query(&scene.description, &enc_cfg, &pool, &mut query_rng)?;
        records.push(run_episode(
            scene,
            net,
            &encoder,
            &query,
            cfg.env,
            0.0,
            &mut explore_rng,
        )?);
    }
    Ok((Metrics::from_records(&records), records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub episodes_per_image: usize,
    pub epsilon_start: f64,
    /// Over the exploratory training episodes of this epoch.
    pub train: Metrics,
    pub mean_loss: Option<f64>,
    /// Greedy evaluation after the epoch, when an evaluation set is given.
    pub eval: Option<Metrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: QNetwork,
    pub opt: OptimState,
    pub epochs: Vec<EpochReport>,
}

/// Runs the full schedule: every epoch visits each image (in a seeded
/// shuffled order) for a block of episodes with epsilon decaying across the
/// block, with a minibatch update every `update_every` steps.
pub fn train(
    dataset: &[Scene],
    eval_set: Option<&[Scene]>,
    region: &dyn RegionEncoder,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut agent = Agent::new(cfg.clone())?;
    let enc_cfg = EncoderConfig {
        query_mode: QueryMode::Regular,
        ..cfg.encoder.clone()
    };
    let encoder = StateEncoder::new(region, enc_cfg.clone())?;
    let queries: Vec<Vec<f64>> = dataset
        .iter()
        .map(|s| encode_query(&s.description, &enc_cfg, &[], &mut stream_rng(cfg.seed, STREAM_QUERY)))
        .collect::<Result<_>>()?;
    let mut order_rng = stream_rng(cfg.seed, STREAM_ORDER);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let (episodes, eps_start) = cfg.epoch_schedule(epoch);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut order_rng);
        let mut records = Vec::with_capacity(dataset.len() * episodes);
        for &i in &order {
            for k in 0..episodes {
                let eps = cfg.episode_epsilon(eps_start, k);
                records.push(agent.run_episode(&dataset[i], &encoder, &queries[i], eps, true)?);
            }
        }
        let losses = agent.take_losses();
        let eval = match eval_set {
            Some(set) => Some(evaluate(set, &agent.net, region, cfg, QueryMode::Regular)?.0),
            None => None,
        };
        let report = EpochReport {
            epoch,
            episodes_per_image: episodes,
            epsilon_start: eps_start,
            train: Metrics::from_records(&records),
            mean_loss: mean(losses.into_iter()),
            eval,
        };
        on_epoch(&report);
        reports.push(report);
    }
    Ok(TrainOutcome {
        net: agent.net,
        opt: agent.opt,
        epochs: reports,
    })
}

/// Tab-separated per-epoch table of the evaluation metrics (training-episode
/// metrics when no evaluation set was used).
pub fn epoch_table(reports: &[EpochReport]) -> String {
    let mut out = String::from("epoch\tepisodes_per_image\tepsilon_start");
    for f in Metrics::FIELDS {
        out.push('\t');
        out.push_str(f);
    }
    out.push_str("\tmean_loss\n");
    for r in reports {
        let m = r.eval.as_ref().unwrap_or(&r.train);
        out.push_str(&format!("{}\t{}\t{:.4}", r.epoch, r.episodes_per_image, r.epsilon_start));
        for v in m.values() {
            out.push('\t');
            out.push_str(&fmt_opt(v));
        }
        out.push('\t');
        out.push_str(&fmt_opt(r.mean_loss));
        out.push('\n');
    }
    out
}
