//! Trajectory error metrics: particle-wise MSE, entropic optimal transport
//! (log-domain Sinkhorn) and Gaussian-kernel MMD.
//!
//! Point sets are flat `N × dim` slices. The distributional metrics sort both
//! sets into a canonical order first, so their values do not depend on
//! particle order at all.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GnsError, Result};
use crate::graph::squared_distance;

/// Mean squared difference over every frame, particle and axis.
pub fn mse(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(GnsError::Dimension {
            op: "mse (frames)",
            lhs: vec![pred.len()],
            rhs: vec![truth.len()],
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(GnsError::Dimension {
                op: "mse (frame size)",
                lhs: vec![p.len()],
                rhs: vec![t.len()],
            });
        }
        sum += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += p.len();
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Squared error of one frame, averaged over the selected particles and axes.
pub fn frame_mse(pred: &[f64], truth: &[f64], dim: usize, keep: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (p, t)) in pred.chunks_exact(dim).zip(truth.chunks_exact(dim)).enumerate() {
        if !keep[i] {
            continue;
        }
        sum += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += dim;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Points reordered lexicographically by coordinates.
pub fn canonical_order(points: &[f64], dim: usize) -> Vec<f64> {
    let mut rows: Vec<&[f64]> = points.chunks_exact(dim).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows.concat()
}

/// At most `max` points, drawn without replacement from a seeded generator.
/// The result is canonically ordered.
pub fn subsample(points: &[f64], dim: usize, max: usize, seed: u64) -> Vec<f64> {
    let sorted = canonical_order(points, dim);
    let n = sorted.len() / dim;
    if n <= max {
        return sorted;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n, max).into_vec();
    picked.sort_unstable();
    picked.iter().flat_map(|&i| sorted[i * dim..(i + 1) * dim].iter().copied()).collect()
}

/// Iterations spent lowering epsilon to its target (at most half the budget).
const ANNEAL_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornConfig {
    /// Regularization as a multiple of a lower bound on the transport cost.
    pub relative_epsilon: f64,
    pub iterations: usize,
    /// Largest tolerated L1 marginal violation for the result to count as converged.
    pub tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            relative_epsilon: 1e-2,
            iterations: 1000,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornResult {
    /// Transport cost `<P, C>` of the entropic plan (entropy term excluded).
    pub cost: f64,
    pub epsilon: f64,
    pub converged: bool,
    pub marginal_error: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic optimal transport between uniform measures on two point sets with
/// squared-Euclidean ground cost.
///
/// Runs log-domain Sinkhorn iterations with the regularization annealed
/// geometrically from the mean cost down to the target, which converges far
/// more reliably than starting at a tiny epsilon, then iterates at the target
/// until the marginals are within tolerance or the budget runs out.
pub fn sinkhorn_ot(a: &[f64], b: &[f64], dim: usize, cfg: &SinkhornConfig) -> Result<SinkhornResult> {
    let (a, b) = (canonical_order(a, dim), canonical_order(b, dim));
    let (n, m) = (a.len() / dim, b.len() / dim);
    if n == 0 || m == 0 {
        return Err(GnsError::Data("optimal transport needs non-empty point sets".into()));
    }
    let cost: Vec<f64> = a
        .chunks_exact(dim)
        .flat_map(|p| b.chunks_exact(dim).map(move |q| squared_distance(p, q)))
        .collect();
    let mean_cost = cost.iter().sum::<f64>() / cost.len() as f64;
    // identical sets: the identity plan is optimal and costs nothing
    if mean_cost == 0.0 || a == b {
        return Ok(SinkhornResult {
            cost: 0.0,
            epsilon: 0.0,
            converged: true,
            marginal_error: 0.0,
        });
    }
    // the blur has to stay small against the transport cost itself, which
    // the mean row and column minima bound from below
    let row_min = cost.chunks_exact(m).map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).sum::<f64>() / n as f64;
    let col_min = (0..m)
        .map(|j| (0..n).map(|i| cost[i * m + j]).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / m as f64;
    let target = cfg.relative_epsilon * row_min.max(col_min).max(1e-6 * mean_cost);
    let (log_a, log_b) = (-(n as f64).ln(), -(m as f64).ln());
    // transport cost and L1 row-marginal violation of the current plan
    let plan = |f: &[f64], g: &[f64], eps: f64| {
        let mut total = 0.0;
        let mut marginal_error = 0.0;
        for i in 0..n {
            let mut row_mass = 0.0;
            for j in 0..m {
                let p = ((f[i] + g[j] - cost[i * m + j]) / eps + log_a + log_b).exp();
                row_mass += p;
                total += p * cost[i * m + j];
            }
            marginal_error += (row_mass - 1.0 / n as f64).abs();
        }
        (total, marginal_error)
    };
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let anneal = (cfg.iterations / 2).clamp(1, ANNEAL_ITERATIONS);
    let start = mean_cost.max(target);
    let mut eps = start;
    for it in 0..cfg.iterations {
        eps = if it < anneal {
            start * (target / start).powf(it as f64 / anneal as f64)
        } else {
            target
        };
        for i in 0..n {
            let row = &cost[i * m..(i + 1) * m];
            f[i] = -eps * log_sum_exp(row.iter().zip(&g).map(|(c, gj)| (gj - c) / eps + log_b));
        }
        for j in 0..m {
            g[j] = -eps * log_sum_exp((0..n).map(|i| (f[i] - cost[i * m + j]) / eps + log_a));
        }
        if it >= anneal && (it - anneal) % 10 == 9 && plan(&f, &g, eps).1 <= cfg.tolerance {
            break;
        }
    }
    let (total, marginal_error) = plan(&f, &g, eps);
    Ok(SinkhornResult {
        cost: total,
        epsilon: eps,
        converged: marginal_error.is_finite() && marginal_error <= cfg.tolerance,
        marginal_error,
    })
}

/// Biased (V-statistic) squared MMD with kernel `exp(-|x - y|² / (2σ²))`,
/// clamped at zero.
pub fn mmd(a: &[f64], b: &[f64], dim: usize, sigma: f64) -> Result<f64> {
    let (a, b) = (canonical_order(a, dim), canonical_order(b, dim));
    if a.is_empty() || b.is_empty() {
        return Err(GnsError::Data("MMD needs non-empty point sets".into()));
    }
    let scale = 1.0 / (2.0 * sigma * sigma);
    let mean_kernel = |x: &[f64], y: &[f64]| {
        let mut s = 0.0;
        for p in x.chunks_exact(dim) {
            for q in y.chunks_exact(dim) {
                s += (-squared_distance(p, q) * scale).exp();
            }
        }
        s / ((x.len() / dim) * (y.len() / dim)) as f64
    };
    let value = mean_kernel(&a, &a) + mean_kernel(&b, &b) - 2.0 * mean_kernel(&a, &b);
    Ok(value.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    Ot,
    Mmd,
}

impl std::str::FromStr for Metric {
    type Err = GnsError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mse" => Ok(Metric::Mse),
            "ot" => Ok(Metric::Ot),
            "mmd" => Ok(Metric::Mmd),
            other => Err(GnsError::Config(format!("unknown metric {other:?} (expected mse, ot or mmd)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    pub metrics: Vec<Metric>,
    pub mmd_sigma: f64,
    pub sinkhorn: SinkhornConfig,
    pub max_points: usize,
    /// Seed for subsampling large frames.
    pub seed: u64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            metrics: vec![Metric::Mse, Metric::Ot, Metric::Mmd],
            mmd_sigma: 0.1,
            sinkhorn: SinkhornConfig::default(),
            max_points: 1000,
            seed: 0,
        }
    }
}

/// Metrics for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub name: String,
    pub one_step_mse: Option<f64>,
    pub rollout_mse: f64,
    pub ot: Option<f64>,
    pub mmd: Option<f64>,
    /// Rollout MSE of each predicted frame.
    pub mse_curve: Vec<f64>,
    pub ot_curve: Vec<f64>,
    pub mmd_curve: Vec<f64>,
    pub diverged_at: Option<usize>,
    pub sinkhorn_converged: bool,
}

/// Aggregate over trajectories (plain means).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub one_step_mse: Option<f64>,
    pub rollout_mse: f64,
    pub ot: Option<f64>,
    pub mmd: Option<f64>,
    pub subsampled_to: Option<usize>,
    pub trajectories: Vec<TrajectoryMetrics>,
}

fn keep_particles(points: &[f64], dim: usize, keep: &[bool]) -> Vec<f64> {
    points
        .chunks_exact(dim)
        .zip(keep)
        .filter(|(_, &k)| k)
        .flat_map(|(p, _)| p.iter().copied())
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Compares predicted and ground-truth frames (both excluding the initial
/// window). `one_step` holds teacher-forced next-frame predictions aligned
/// with `truth`. Particles with `keep[i] == false` are ignored.
pub fn evaluate_frames(
    name: &str,
    predicted: &[Vec<f64>],
    truth: &[Vec<f64>],
    one_step: Option<&[Vec<f64>]>,
    dim: usize,
    keep: &[bool],
    opts: &MetricOptions,
) -> Result<TrajectoryMetrics> {
    if predicted.len() != truth.len() {
        return Err(GnsError::Dimension {
            op: "evaluate (frames)",
            lhs: vec![predicted.len()],
            rhs: vec![truth.len()],
        });
    }
    let mse_curve: Vec<f64> = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| frame_mse(p, t, dim, keep))
        .collect();
    let one_step_mse = match one_step {
        Some(os) => {
            if os.len() != truth.len() {
                return Err(GnsError::Dimension {
                    op: "evaluate (one-step frames)",
                    lhs: vec![os.len()],
                    rhs: vec![truth.len()],
                });
            }
            let v: Vec<f64> = os.iter().zip(truth).map(|(p, t)| frame_mse(p, t, dim, keep)).collect();
            Some(mean(&v))
        }
        None => None,
    };
    let mut ot_curve = Vec::new();
    let mut mmd_curve = Vec::new();
    let mut converged = true;
    for (k, (p, t)) in predicted.iter().zip(truth).enumerate() {
        let want_ot = opts.metrics.contains(&Metric::Ot);
        let want_mmd = opts.metrics.contains(&Metric::Mmd);
        if !want_ot && !want_mmd {
            break;
        }
        let seed = opts.seed.wrapping_add(k as u64);
        let p = subsample(&keep_particles(p, dim, keep), dim, opts.max_points, seed);
        let t = subsample(&keep_particles(t, dim, keep), dim, opts.max_points, seed);
        if p.is_empty() {
            continue;
        }
        if want_ot {
            let r = sinkhorn_ot(&p, &t, dim, &opts.sinkhorn)?;
            converged &= r.converged;
            ot_curve.push(r.cost);
        }
        if want_mmd {
            mmd_curve.push(mmd(&p, &t, dim, opts.mmd_sigma)?);
        }
    }
    Ok(TrajectoryMetrics {
        name: name.to_string(),
        one_step_mse,
        rollout_mse: mean(&mse_curve),
        ot: opts.metrics.contains(&Metric::Ot).then(|| mean(&ot_curve)),
        mmd: opts.metrics.contains(&Metric::Mmd).then(|| mean(&mmd_curve)),
        mse_curve,
        ot_curve,
        mmd_curve,
        diverged_at: None,
        sinkhorn_converged: converged,
    })
}

impl MetricReport {
    pub fn aggregate(trajectories: Vec<TrajectoryMetrics>, subsampled_to: Option<usize>) -> Self {
        let collect = |f: &dyn Fn(&TrajectoryMetrics) -> Option<f64>| -> Option<f64> {
            let v: Option<Vec<f64>> = trajectories.iter().map(f).collect();
            v.filter(|v| !v.is_empty()).map(|v| mean(&v))
        };
        MetricReport {
            one_step_mse: collect(&|t| t.one_step_mse),
            rollout_mse: mean(&trajectories.iter().map(|t| t.rollout_mse).collect::<Vec<_>>()),
            ot: collect(&|t| t.ot),
            mmd: collect(&|t| t.mmd),
            subsampled_to,
            trajectories,
        }
    }

    /// Per-timestep curves as CSV: `step,trajectory,mse,ot,mmd`.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("step,trajectory,mse,ot,mmd\n");
        for t in &self.trajectories {
            for (k, m) in t.mse_curve.iter().enumerate() {
                let ot = t.ot_curve.get(k).map(|v| format!("{v:e}")).unwrap_or_default();
                let mmd = t.mmd_curve.get(k).map(|v| format!("{v:e}")).unwrap_or_default();
                out.push_str(&format!("{},{},{m:e},{ot},{mmd}\n", k + 1, t.name));
            }
        }
        out
    }
}
