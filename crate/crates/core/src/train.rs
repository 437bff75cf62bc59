//! One-step supervised training: pair sampling, noisy targets, Adam with an
//! exponentially decaying learning rate, validation rollouts and checkpoints.
//!
//! A run directory holds `train_log.csv`, `last/` (resumable, with optimizer
//! state and `train_state.json`) and `best/` (lowest validation rollout MSE).
//! Parameters and optimizer moments are kept on the `f32` grid after every
//! step, so resuming from `last/` replays an uninterrupted run exactly.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Trajectory;
use crate::error::{GnsError, Result};
use crate::features::{assemble, finite_diff_accel, BoxBounds, FeaturizedSample, NormStats, ParticleState};
use crate::graph::connectivity;
use crate::json::{read_json, write_json};
use crate::model::{GnsConfig, GnsModel};
use crate::noise::{adjust_target, corrupt, NoiseConfig};
use crate::rollout::{rollout_lenient, BlowupGuard, Simulator};
use crate::tensor::{read_checkpoint, write_checkpoint, AdamConfig, AdamState, Tape, Tensor};

pub const LOG_HEADER: &str = "step,loss,lr,val_rollout_mse";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: u64,
    pub lr_start: f64,
    pub lr_final: f64,
    pub lr_decay_steps: f64,
    pub shuffle_buffer: usize,
    pub noise: NoiseConfig,
    pub adam: AdamConfig,
    /// Validation interval in steps; 0 validates only at the end.
    pub eval_every: u64,
    pub eval_trajectories: usize,
    /// Rollout length for validation; `None` rolls out each trajectory fully.
    pub eval_steps: Option<usize>,
    /// Write a log row every this many steps (validation rows are always written).
    pub log_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 2,
            max_steps: 50_000,
            lr_start: 1e-4,
            lr_final: 1e-6,
            lr_decay_steps: 25_000.0,
            shuffle_buffer: 10_000,
            noise: NoiseConfig::default(),
            adam: AdamConfig::default(),
            eval_every: 5_000,
            eval_trajectories: 5,
            eval_steps: None,
            log_every: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(GnsError::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr_final > 0.0 && self.lr_start >= self.lr_final && self.lr_start.is_finite()) {
            return Err(GnsError::Config(format!(
                "need lr_start >= lr_final > 0, got {} and {}",
                self.lr_start, self.lr_final
            )));
        }
        if !(self.lr_decay_steps > 0.0) {
            return Err(GnsError::Config("lr_decay_steps must be positive".into()));
        }
        if self.shuffle_buffer < self.batch_size {
            return Err(GnsError::Config(format!(
                "shuffle_buffer ({}) must be at least batch_size ({})",
                self.shuffle_buffer, self.batch_size
            )));
        }
        if self.log_every < 1 {
            return Err(GnsError::Config("log_every must be >= 1".into()));
        }
        self.noise.validate()
    }
}

/// `lr_final + (lr_start - lr_final) · 0.1^(step / decay_steps)`.
pub fn lr_schedule(cfg: &TrainConfig, step: u64) -> f64 {
    cfg.lr_final + (cfg.lr_start - cfg.lr_final) * 0.1f64.powf(step as f64 / cfg.lr_decay_steps)
}

/// Uniform-ish sampling of `(trajectory, time)` pairs through a shuffle
/// buffer fed by a sequential, endlessly repeating pass over the data.
#[derive(Debug, Clone)]
pub struct PairSampler {
    pairs_per_trajectory: Vec<usize>,
    context: usize,
    buffer: Vec<(usize, usize)>,
    capacity: usize,
    cursor: (usize, usize),
    rng: ChaCha8Rng,
    drawn: u64,
}

impl PairSampler {
    /// `frames[i]` is the length of trajectory `i`.
    pub fn new(frames: &[usize], context: usize, capacity: usize, seed: u64) -> Result<Self> {
        if let Some((i, &k)) = frames.iter().enumerate().find(|(_, &k)| k < context + 2) {
            return Err(GnsError::Data(format!(
                "trajectory {i} has {k} frames; at least {} are needed for context {context}",
                context + 2
            )));
        }
        if frames.is_empty() {
            return Err(GnsError::Data("no training trajectories".into()));
        }
        Ok(PairSampler {
            pairs_per_trajectory: frames.iter().map(|k| k - context - 1).collect(),
            context,
            buffer: Vec::with_capacity(capacity),
            capacity: capacity.max(1),
            cursor: (0, 0),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5A4D_504C_4552),
            drawn: 0,
        })
    }

    /// Pairs in one pass over the data.
    pub fn epoch_len(&self) -> usize {
        self.pairs_per_trajectory.iter().sum()
    }

    pub fn drawn(&self) -> u64 {
        self.drawn
    }

    fn next_in_stream(&mut self) -> (usize, usize) {
        let (traj, k) = self.cursor;
        self.cursor = if k + 1 < self.pairs_per_trajectory[traj] {
            (traj, k + 1)
        } else {
            ((traj + 1) % self.pairs_per_trajectory.len(), 0)
        };
        (traj, k + self.context)
    }

    /// Next `(trajectory index, current frame t)`: the window is frames
    /// `t - C ..= t` and the target frame is `t + 1`.
    pub fn next_pair(&mut self) -> (usize, usize) {
        while self.buffer.len() < self.capacity {
            let item = self.next_in_stream();
            self.buffer.push(item);
        }
        let i = self.rng.random_range(0..self.buffer.len());
        self.drawn += 1;
        self.buffer.swap_remove(i)
    }
}

/// One supervised example: an input window and the frame that follows it.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub state: ParticleState,
    pub next: Vec<f64>,
}

impl TrainingPair {
    pub fn from_trajectory(traj: &Trajectory, t: usize, context: usize) -> Result<Self> {
        let next = traj
            .frames
            .get(t + 1)
            .ok_or_else(|| GnsError::Index {
                op: "training pair target",
                index: t + 1,
                len: traj.num_frames(),
            })?
            .clone();
        Ok(TrainingPair {
            state: traj.window(t, context)?,
            next,
        })
    }
}

struct RawSample {
    state: ParticleState,
    edges: crate::graph::EdgeList,
    node: Tensor,
    edge: Option<Tensor>,
    target: Tensor,
}

/// Corrupts a pair and computes its unnormalized features and corrected target.
fn raw_sample<R: Rng>(model: &GnsConfig, noise: &NoiseConfig, pair: &TrainingPair, rng: &mut R) -> Result<RawSample> {
    let layout = model.layout();
    let clean = &pair.state;
    let c = corrupt(clean, noise, rng);
    let accel = finite_diff_accel(clean.previous(), clean.current(), &pair.next);
    let target = adjust_target(&accel, &c.velocity_noise, &c.position_noise, noise.position_correction_fraction);
    let graph_positions = if noise.reconnect { c.state.current() } else { clean.current() };
    let edges = connectivity(graph_positions, model.dim, model.connectivity_radius, model.self_edges)?;
    let node = layout.raw_node_features(&c.state)?;
    let edge = layout
        .uses_edge_features()
        .then(|| layout.raw_edge_features(c.state.current(), &edges));
    let n = clean.num_particles();
    Ok(RawSample {
        state: c.state,
        edges,
        node,
        edge,
        target: Tensor::new(vec![n, model.dim], target)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub lr: f64,
}

/// Builds the normalized batch graph, observing statistics first when `observe` is set.
fn prepare_batch<R: Rng>(
    model: &GnsModel,
    stats: &mut NormStats,
    batch: &[TrainingPair],
    noise: &NoiseConfig,
    rng: &mut R,
    observe: bool,
) -> Result<FeaturizedSample> {
    if batch.is_empty() {
        return Err(GnsError::Training("empty batch".into()));
    }
    let raws = batch
        .iter()
        .map(|p| raw_sample(model.config(), noise, p, rng))
        .collect::<Result<Vec<_>>>()?;
    if observe {
        for r in &raws {
            let mask: Vec<bool> = r.state.materials().iter().map(|m| !m.is_boundary()).collect();
            stats.observe(&r.node, r.edge.as_ref(), Some((&r.target, &mask)));
        }
    }
    let samples: Vec<FeaturizedSample> = raws
        .iter()
        .map(|r| assemble(&r.state, &r.edges, stats, &r.node, r.edge.as_ref(), Some(&r.target)))
        .collect();
    FeaturizedSample::batch(&samples)
}

/// Loss of `batch` under the current parameters and statistics, without noise
/// and without updating anything.
pub fn batch_loss(model: &GnsModel, stats: &NormStats, batch: &[TrainingPair]) -> Result<f64> {
    let mut stats = stats.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let sample = prepare_batch(model, &mut stats, batch, &NoiseConfig::none(), &mut rng, false)?;
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let loss = model.loss(&mut tape, &p, &sample)?;
    Ok(tape.value(loss).data()[0])
}

/// One optimization step: corrupt inputs, update statistics from the
/// corrupted features, compute the masked loss on normalized targets and
/// apply Adam at the scheduled learning rate for `step`.
pub fn train_step<R: Rng>(
    model: &mut GnsModel,
    stats: &mut NormStats,
    adam: &mut AdamState,
    batch: &[TrainingPair],
    cfg: &TrainConfig,
    step: u64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let lr = lr_schedule(cfg, step);
    let sample = prepare_batch(model, stats, batch, &cfg.noise, rng, true)?;
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let loss_var = model.loss(&mut tape, &p, &sample)?;
    let loss = tape.value(loss_var).data()[0];
    let grads = tape.backward(loss_var);
    let grads = p.collect_grads(&grads, model.params());
    if !loss.is_finite() {
        let mut norms = String::new();
        for ((_, name, _), g) in model.params().iter().zip(&grads) {
            let n = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            let _ = write!(norms, " {name}={n:.3e}");
        }
        return Err(GnsError::Training(format!(
            "non-finite loss {loss} at step {step} (lr {lr:.3e}); gradient norms:{norms}"
        )));
    }
    adam.step(model.params_mut(), &grads, lr)?;
    model.params_mut().round_to_f32();
    adam.round_to_f32();
    Ok(StepOutcome { loss, lr })
}

/// Mean rollout MSE over the first `count` trajectories, starting from each
/// one's first window. Diverged rollouts are padded with their last frame.
pub fn validation_mse(sim: &Simulator, trajectories: &[Trajectory], count: usize, steps: Option<usize>) -> Result<f64> {
    let c = sim.model.config().context;
    let guard = BlowupGuard::for_box(sim.model.config().walls.as_ref().unwrap_or(&BoxBounds::unit(sim.model.config().dim)));
    let mut total = 0.0;
    let mut used = 0;
    for traj in trajectories.iter().take(count) {
        let available = traj.num_frames().saturating_sub(c + 1);
        let k = steps.map_or(available, |s| s.min(available));
        if k == 0 {
            continue;
        }
        let init = traj.window(c, c)?;
        let (r, _) = rollout_lenient(sim, &init, k, Some(&traj.globals[c..]), &guard)?;
        let keep: Vec<bool> = traj.materials.iter().map(|m| !m.is_boundary()).collect();
        let truth = &traj.frames[c + 1..c + 1 + k];
        let curve: Vec<f64> = r
            .predicted()
            .iter()
            .zip(truth)
            .map(|(p, t)| crate::metrics::frame_mse(p, t, traj.dim, &keep))
            .collect();
        total += curve.iter().sum::<f64>() / k as f64;
        used += 1;
    }
    if used == 0 {
        return Err(GnsError::Data("no validation trajectories long enough to roll out".into()));
    }
    Ok(total / used as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub step: u64,
    pub samples_drawn: u64,
    pub best_step: Option<u64>,
    pub best_val_rollout_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub final_step: u64,
    pub best_step: Option<u64>,
    pub best_val_rollout_mse: Option<f64>,
    pub last_loss: Option<f64>,
}

fn save_run_dir(dir: &Path, model: &GnsModel, stats: &NormStats, adam: Option<&AdamState>, state: Option<&TrainState>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GnsError::io(dir, e))?;
    write_checkpoint(&dir.join("params.ckpt"), model.params(), adam)?;
    write_json(&dir.join("model.json"), model.config())?;
    write_json(&dir.join("stats.json"), stats)?;
    if let Some(s) = state {
        write_json(&dir.join("train_state.json"), s)?;
    }
    Ok(())
}

fn format_row(step: u64, loss: f64, lr: f64, val: Option<f64>) -> String {
    let val = val.map(|v| format!("{v:e}")).unwrap_or_default();
    format!("{step},{loss:e},{lr:e},{val}\n")
}

/// Trains on `train`, validating on `valid`, writing into `out`. With
/// `resume`, continues from `out/last` if present.
pub fn fit(
    train: &[Trajectory],
    valid: &[Trajectory],
    model_cfg: &GnsConfig,
    cfg: &TrainConfig,
    out: &Path,
    resume: bool,
) -> Result<FitOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| GnsError::io(out, e))?;
    let c = model_cfg.context;
    let frames: Vec<usize> = train.iter().map(|t| t.num_frames()).collect();
    let mut sampler = PairSampler::new(&frames, c, cfg.shuffle_buffer, cfg.seed)?;
    let log_path = out.join("train_log.csv");
    let last_dir = out.join("last");
    let best_dir = out.join("best");

    let mut model = GnsModel::new(model_cfg.clone(), cfg.seed)?;
    let mut stats = NormStats::new(&model_cfg.layout());
    let mut adam = AdamState::new(model.params(), cfg.adam);
    model.params_mut().round_to_f32();
    let mut state = TrainState {
        step: 0,
        samples_drawn: 0,
        best_step: None,
        best_val_rollout_mse: None,
    };
    let mut log = String::from(LOG_HEADER);
    log.push('\n');

    if resume && last_dir.join("train_state.json").exists() {
        let saved: GnsConfig = read_json(&last_dir.join("model.json"))?;
        if &saved != model_cfg {
            return Err(GnsError::Config(format!(
                "model configuration differs from the checkpoint in {}",
                last_dir.display()
            )));
        }
        let ckpt = read_checkpoint(&last_dir.join("params.ckpt"), cfg.adam)?;
        model.params_mut().load_from(&ckpt.params)?;
        adam = ckpt
            .adam
            .ok_or_else(|| GnsError::Data("resume checkpoint has no optimizer state".into()))?;
        stats = read_json(&last_dir.join("stats.json"))?;
        state = read_json(&last_dir.join("train_state.json"))?;
        for _ in 0..state.samples_drawn {
            sampler.next_pair();
        }
        if let Ok(text) = std::fs::read_to_string(&log_path) {
            log.clear();
            for (i, line) in text.lines().enumerate() {
                let keep = i == 0
                    || line
                        .split(',')
                        .next()
                        .and_then(|s| s.parse::<u64>().ok())
                        .is_some_and(|s| s <= state.step);
                if keep {
                    log.push_str(line);
                    log.push('\n');
                }
            }
        }
    }
    std::fs::write(&log_path, &log).map_err(|e| GnsError::io(&log_path, e))?;

    if cfg.max_steps == 0 {
        save_run_dir(&last_dir, &model, &stats, Some(&adam), Some(&state))?;
        save_run_dir(&best_dir, &model, &stats, None, None)?;
        return Ok(FitOutcome {
            final_step: 0,
            best_step: None,
            best_val_rollout_mse: None,
            last_loss: None,
        });
    }

    let mut last_loss = None;
    let mut pending = String::new();
    let flush = |pending: &mut String| -> Result<()> {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| GnsError::io(&log_path, e))?;
        f.write_all(pending.as_bytes()).map_err(|e| GnsError::io(&log_path, e))?;
        pending.clear();
        Ok(())
    };
    while state.step < cfg.max_steps {
        let step = state.step;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(step);
        let batch = (0..cfg.batch_size)
            .map(|_| {
                let (i, t) = sampler.next_pair();
                TrainingPair::from_trajectory(&train[i], t, c)
            })
            .collect::<Result<Vec<_>>>()?;
        let outcome = train_step(&mut model, &mut stats, &mut adam, &batch, cfg, step, &mut rng)?;
        state.step += 1;
        state.samples_drawn = sampler.drawn();
        last_loss = Some(outcome.loss);

        let done = state.step == cfg.max_steps;
        let evaluate = done || (cfg.eval_every > 0 && state.step % cfg.eval_every == 0);
        let mut val = None;
        if evaluate && !valid.is_empty() {
            let sim = Simulator::new(model.clone(), stats.clone());
            let mse = validation_mse(&sim, valid, cfg.eval_trajectories, cfg.eval_steps)?;
            val = Some(mse);
            if state.best_val_rollout_mse.is_none_or(|b| mse < b) {
                state.best_val_rollout_mse = Some(mse);
                state.best_step = Some(state.step);
                save_run_dir(&best_dir, &model, &stats, None, None)?;
            }
        }
        if evaluate || state.step % cfg.log_every == 0 {
            pending.push_str(&format_row(state.step, outcome.loss, outcome.lr, val));
        }
        if evaluate {
            flush(&mut pending)?;
            save_run_dir(&last_dir, &model, &stats, Some(&adam), Some(&state))?;
        }
    }
    if !best_dir.join("params.ckpt").exists() {
        save_run_dir(&best_dir, &model, &stats, None, None)?;
    }
    Ok(FitOutcome {
        final_step: state.step,
        best_step: state.best_step,
        best_val_rollout_mse: state.best_val_rollout_mse,
        last_loss,
    })
}
