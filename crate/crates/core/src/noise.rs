//! Training-time corruption of the input velocity history and the matching
//! correction of the supervised acceleration target.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GnsError, Result};
use crate::features::ParticleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseType {
    /// Independent increments accumulated over the history.
    #[default]
    RandomWalk,
    /// Only the most recent velocity is perturbed.
    OnlyLast,
    /// One draw shared by every velocity in the history.
    Correlated,
    /// Independent draws per velocity.
    Uncorrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub noise_type: NoiseType,
    /// Standard deviation of the noise on the most recent input velocity.
    pub sigma_v: f64,
    /// Fraction γ of the accumulated position noise removed from the target.
    pub position_correction_fraction: f64,
    /// Rebuild the training graph from the corrupted positions.
    pub reconnect: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            noise_type: NoiseType::RandomWalk,
            sigma_v: 3e-4,
            position_correction_fraction: 0.0,
            reconnect: false,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            sigma_v: 0.0,
            ..NoiseConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_v >= 0.0) || !self.sigma_v.is_finite() {
            return Err(GnsError::Config(format!("sigma_v must be >= 0, got {}", self.sigma_v)));
        }
        if !(0.0..=1.0).contains(&self.position_correction_fraction) {
            return Err(GnsError::Config(format!(
                "position_correction_fraction must lie in [0, 1], got {}",
                self.position_correction_fraction
            )));
        }
        Ok(())
    }
}

/// A corrupted state together with the noise on its last velocity and position.
#[derive(Debug, Clone)]
pub struct Corruption {
    pub state: ParticleState,
    /// Noise on the most recent velocity, `N × dim`.
    pub velocity_noise: Vec<f64>,
    /// Noise on the most recent position, `N × dim`.
    pub position_noise: Vec<f64>,
}

/// Per-velocity noise for one scalar coordinate, `C` values oldest first.
fn draw_sequence<R: Rng>(cfg: &NoiseConfig, c: usize, rng: &mut R, out: &mut [f64]) {
    let sigma = cfg.sigma_v;
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    match cfg.noise_type {
        NoiseType::RandomWalk => {
            let step = sigma / (c as f64).sqrt();
            let mut acc = 0.0;
            for v in out.iter_mut() {
                acc += step * normal();
                *v = acc;
            }
        }
        NoiseType::OnlyLast => {
            out.fill(0.0);
            out[c - 1] = sigma * normal();
        }
        NoiseType::Correlated => out.fill(sigma * normal()),
        NoiseType::Uncorrelated => out.iter_mut().for_each(|v| *v = sigma * normal()),
    }
}

/// Perturbs the velocity history of every non-boundary particle and rebuilds
/// positions so each noisy velocity is still the difference of consecutive
/// noisy positions. The oldest position stays clean; later positions carry
/// the running sum of the velocity noise.
pub fn corrupt<R: Rng>(state: &ParticleState, cfg: &NoiseConfig, rng: &mut R) -> Corruption {
    let d = state.dim();
    let n = state.num_particles();
    let c = state.context();
    let mut noisy = state.clone();
    let mut velocity_noise = vec![0.0; n * d];
    let mut position_noise = vec![0.0; n * d];
    if cfg.sigma_v == 0.0 {
        return Corruption {
            state: noisy,
            velocity_noise,
            position_noise,
        };
    }
    let mut seq = vec![0.0; c];
    let materials = state.materials().to_vec();
    let history = noisy.history_mut();
    for i in 0..n {
        if materials[i].is_boundary() {
            continue;
        }
        for a in 0..d {
            let k = i * d + a;
            draw_sequence(cfg, c, rng, &mut seq);
            let mut pos_noise = 0.0;
            for (step, nv) in seq.iter().enumerate() {
                pos_noise += nv;
                history[step + 1][k] += pos_noise;
            }
            velocity_noise[k] = seq[c - 1];
            position_noise[k] = pos_noise;
        }
    }
    Corruption {
        state: noisy,
        velocity_noise,
        position_noise,
    }
}

/// Target that undoes the input noise: `a - n_v - γ·n_p`.
///
/// With γ = 0 integrating the noisy state with this acceleration recovers the
/// clean next velocity; with γ = 1 it recovers the clean next position.
pub fn adjust_target(true_accel: &[f64], velocity_noise: &[f64], position_noise: &[f64], gamma: f64) -> Vec<f64> {
    true_accel
        .iter()
        .zip(velocity_noise)
        .zip(position_noise)
        .map(|((a, nv), np)| a - nv - gamma * np)
        .collect()
}
