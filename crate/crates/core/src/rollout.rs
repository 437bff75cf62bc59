//! Semi-implicit Euler update and autoregressive rollouts.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{GnsError, Result};
use crate::features::{featurize, BoxBounds, Material, NormStats, ParticleState};
use crate::graph::connectivity;
use crate::model::GnsModel;

/// `v' = v + a`, `p' = p + v'` with a unit step.
pub fn euler_update(p: &[f64], v: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let v_next: Vec<f64> = v.iter().zip(a).map(|(v, a)| v + a).collect();
    let p_next = p.iter().zip(&v_next).map(|(p, v)| p + v).collect();
    (p_next, v_next)
}

/// Anything that maps a particle state to per-particle accelerations (`N × dim`, length per step²).
pub trait AccelPredictor {
    fn context(&self) -> usize;
    fn predict_accel(&self, state: &ParticleState) -> Result<Vec<f64>>;
}

/// Constant-velocity persistence: always predicts zero acceleration.
#[derive(Debug, Clone, Copy)]
pub struct ZeroAccel {
    pub context: usize,
}

impl AccelPredictor for ZeroAccel {
    fn context(&self) -> usize {
        self.context
    }

    fn predict_accel(&self, state: &ParticleState) -> Result<Vec<f64>> {
        Ok(vec![0.0; state.current().len()])
    }
}

/// A trained network together with its normalization statistics.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub model: GnsModel,
    pub stats: NormStats,
}

impl Simulator {
    pub fn new(model: GnsModel, stats: NormStats) -> Self {
        Simulator { model, stats }
    }

    /// Loads `params.ckpt`, `model.json` and `stats.json` from a checkpoint directory.
    pub fn load(dir: &std::path::Path) -> Result<Self> {
        let model = GnsModel::load(dir)?;
        let stats: NormStats = crate::json::read_json(&dir.join("stats.json"))?;
        let layout = model.config().layout();
        if stats.node.width() != layout.node_width() || stats.target.width() != layout.dim {
            return Err(GnsError::Config(format!(
                "statistics in {} do not match the model configuration",
                dir.display()
            )));
        }
        Ok(Simulator { model, stats })
    }
}

impl AccelPredictor for Simulator {
    fn context(&self) -> usize {
        self.model.config().context
    }

    fn predict_accel(&self, state: &ParticleState) -> Result<Vec<f64>> {
        let cfg = self.model.config();
        let edges = connectivity(state.current(), cfg.dim, cfg.connectivity_radius, cfg.self_edges)?;
        let sample = featurize(state, &edges, &cfg.layout(), &self.stats, None)?;
        let out = self.model.predict_normalized(&sample)?;
        let mut accel = self.stats.target.denormalize(&out).into_data();
        for (i, m) in state.materials().iter().enumerate() {
            if m.is_boundary() {
                accel[i * cfg.dim..(i + 1) * cfg.dim].fill(0.0);
            }
        }
        Ok(accel)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutMeta {
    pub checkpoint: Option<String>,
    pub dataset: Option<String>,
    pub split: Option<String>,
    pub trajectory_index: Option<usize>,
    pub seed: Option<u64>,
}

/// Positions of a simulated trajectory: the initial window followed by the
/// predicted frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub dim: usize,
    pub context: usize,
    pub materials: Vec<Material>,
    /// `C + 1 + K` frames of `N × dim` positions.
    pub frames: Vec<Vec<f64>>,
    /// Wall-clock seconds per predicted step.
    pub step_times: Vec<f64>,
    pub meta: RolloutMeta,
}

impl Rollout {
    pub fn num_particles(&self) -> usize {
        self.materials.len()
    }

    /// Frames produced by the simulator, excluding the initial window.
    pub fn predicted(&self) -> &[Vec<f64>] {
        &self.frames[self.context + 1..]
    }
}

/// Guard against runaway predictions.
#[derive(Debug, Clone)]
pub struct BlowupGuard {
    pub limit: f64,
}

impl BlowupGuard {
    /// Any coordinate further than ten box diagonals from the origin counts as divergence.
    pub fn for_box(bounds: &BoxBounds) -> Self {
        BlowupGuard {
            limit: 10.0 * bounds.diagonal(),
        }
    }

    fn check(&self, frame: &[f64], dim: usize) -> Option<String> {
        frame.iter().position(|v| !v.is_finite() || v.abs() > self.limit).map(|k| {
            format!(
                "particle {} coordinate {} = {} exceeds {}",
                k / dim,
                k % dim,
                frame[k],
                self.limit
            )
        })
    }
}

/// Runs `steps` autoregressive steps from `initial`.
///
/// `globals`, when given, supplies the global features used at each step
/// (index `k` for the `k`-th prediction); otherwise the initial globals are
/// kept. Boundary particles are held at their positions. On divergence the
/// error carries the rollout up to the last good frame.
pub fn rollout<P: AccelPredictor + ?Sized>(
    predictor: &P,
    initial: &ParticleState,
    steps: usize,
    globals: Option<&[Vec<f64>]>,
    guard: Option<&BlowupGuard>,
) -> Result<Rollout> {
    if initial.context() != predictor.context() {
        return Err(GnsError::Dimension {
            op: "rollout window",
            lhs: vec![initial.context() + 1],
            rhs: vec![predictor.context() + 1],
        });
    }
    let dim = initial.dim();
    let mut state = initial.clone();
    let mut out = Rollout {
        dim,
        context: initial.context(),
        materials: initial.materials().to_vec(),
        frames: initial.history().to_vec(),
        step_times: Vec::with_capacity(steps),
        meta: RolloutMeta::default(),
    };
    for k in 0..steps {
        if let Some(g) = globals {
            if let Some(gk) = g.get(k) {
                state.set_globals(gk.clone());
            }
        }
        let start = Instant::now();
        let accel = predictor.predict_accel(&state)?;
        let (mut next, _) = euler_update(state.current(), &state.current_velocity(), &accel);
        for (i, m) in state.materials().iter().enumerate() {
            if m.is_boundary() {
                next[i * dim..(i + 1) * dim].copy_from_slice(&state.current()[i * dim..(i + 1) * dim]);
            }
        }
        out.step_times.push(start.elapsed().as_secs_f64());
        let bad = match guard {
            Some(g) => g.check(&next, dim),
            None => next
                .iter()
                .position(|v| !v.is_finite())
                .map(|i| format!("non-finite position for particle {}", i / dim)),
        };
        if let Some(reason) = bad {
            return Err(GnsError::Blowup {
                step: k + 1,
                reason,
                partial: Box::new(out),
            });
        }
        out.frames.push(next.clone());
        state.push_frame(next);
    }
    Ok(out)
}

/// Like [`rollout`], but a divergence is absorbed: the remaining frames repeat
/// the last good frame and the failing step is returned alongside.
pub fn rollout_lenient<P: AccelPredictor + ?Sized>(
    predictor: &P,
    initial: &ParticleState,
    steps: usize,
    globals: Option<&[Vec<f64>]>,
    guard: &BlowupGuard,
) -> Result<(Rollout, Option<usize>)> {
    match rollout(predictor, initial, steps, globals, Some(guard)) {
        Ok(r) => Ok((r, None)),
        Err(GnsError::Blowup { step, partial, .. }) => {
            let mut r = *partial;
            let last = r.frames.last().unwrap().clone();
            while r.frames.len() < initial.history().len() + steps {
                r.frames.push(last.clone());
            }
            Ok((r, Some(step)))
        }
        Err(e) => Err(e),
    }
}
