//! Train-and-evaluate helpers shared by the command line and the test suites.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::Trajectory;
use crate::error::{GnsError, Result};
use crate::features::BoxBounds;
use crate::metrics::{evaluate_frames, MetricOptions, MetricReport, TrajectoryMetrics};
use crate::model::GnsConfig;
use crate::rollout::{euler_update, rollout_lenient, AccelPredictor, BlowupGuard, Rollout, Simulator, ZeroAccel};
use crate::train::{fit, FitOutcome, TrainConfig};

/// Next-frame predictions from ground-truth windows for frames `C+1 ..= C+steps`.
pub fn one_step_frames<P: AccelPredictor + ?Sized>(predictor: &P, traj: &Trajectory, steps: usize) -> Result<Vec<Vec<f64>>> {
    let c = predictor.context();
    (c..c + steps)
        .map(|t| {
            let state = traj.window(t, c)?;
            let accel = predictor.predict_accel(&state)?;
            let (mut next, _) = euler_update(state.current(), &state.current_velocity(), &accel);
            for (i, m) in state.materials().iter().enumerate() {
                if m.is_boundary() {
                    next[i * traj.dim..(i + 1) * traj.dim].copy_from_slice(&state.current()[i * traj.dim..(i + 1) * traj.dim]);
                }
            }
            Ok(next)
        })
        .collect()
}

/// Number of predicted steps available after the first window, capped by `steps`.
pub fn rollout_length(traj: &Trajectory, context: usize, steps: Option<usize>) -> usize {
    let available = traj.num_frames().saturating_sub(context + 1);
    steps.map_or(available, |s| s.min(available))
}

/// Rolls out `traj` from its first window and scores the result, together
/// with the one-step predictions over the same frames.
pub fn evaluate_trajectory<P: AccelPredictor + ?Sized>(
    predictor: &P,
    traj: &Trajectory,
    steps: Option<usize>,
    bounds: &BoxBounds,
    opts: &MetricOptions,
) -> Result<(Rollout, TrajectoryMetrics)> {
    let c = predictor.context();
    let k = rollout_length(traj, c, steps);
    if k == 0 {
        return Err(GnsError::Data(format!(
            "trajectory {} has {} frames, too few for context {c}",
            traj.name,
            traj.num_frames()
        )));
    }
    let init = traj.window(c, c)?;
    let guard = BlowupGuard::for_box(bounds);
    let (rollout, diverged) = rollout_lenient(predictor, &init, k, Some(&traj.globals[c..]), &guard)?;
    let one_step = one_step_frames(predictor, traj, k)?;
    let keep: Vec<bool> = traj.materials.iter().map(|m| !m.is_boundary()).collect();
    let truth = &traj.frames[c + 1..c + 1 + k];
    let mut m = evaluate_frames(&traj.name, rollout.predicted(), truth, Some(&one_step), traj.dim, &keep, opts)?;
    m.diverged_at = diverged;
    Ok((rollout, m))
}

/// Scores every trajectory in `trajectories` and aggregates the results.
pub fn evaluate_split<P: AccelPredictor + ?Sized>(
    predictor: &P,
    trajectories: &[Trajectory],
    steps: Option<usize>,
    bounds: &BoxBounds,
    opts: &MetricOptions,
) -> Result<MetricReport> {
    let per = trajectories
        .iter()
        .map(|t| evaluate_trajectory(predictor, t, steps, bounds, opts).map(|(_, m)| m))
        .collect::<Result<Vec<_>>>()?;
    let max_points = trajectories.iter().any(|t| t.num_particles() > opts.max_points);
    Ok(MetricReport::aggregate(per, max_points.then_some(opts.max_points)))
}

/// A model and training configuration evaluated over a fixed horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub model: GnsConfig,
    pub train: TrainConfig,
    /// Rollout horizon for test evaluation; `None` uses whole trajectories.
    pub rollout_steps: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub fit: FitOutcome,
    pub model: MetricReport,
    /// Zero-acceleration predictor: one-step baseline and, rolled out,
    /// constant-velocity persistence.
    pub baseline: MetricReport,
}

/// Trains into `out`, then evaluates the best checkpoint and the
/// zero-acceleration baseline on `test`.
pub fn run_experiment(
    train: &[Trajectory],
    valid: &[Trajectory],
    test: &[Trajectory],
    exp: &Experiment,
    out: &Path,
    opts: &MetricOptions,
) -> Result<ExperimentResult> {
    let fit = fit(train, valid, &exp.model, &exp.train, out, false)?;
    let sim = Simulator::load(&out.join("best"))?;
    let bounds = exp.model.walls.clone().unwrap_or_else(|| BoxBounds::unit(exp.model.dim));
    let model = evaluate_split(&sim, test, exp.rollout_steps, &bounds, opts)?;
    let zero = ZeroAccel {
        context: exp.model.context,
    };
    let baseline = evaluate_split(&zero, test, exp.rollout_steps, &bounds, opts)?;
    Ok(ExperimentResult { fit, model, baseline })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{simulate_scenario, Scenario};
    use crate::metrics::Metric;

    #[test]
    fn zero_accel_one_step_error_is_true_acceleration() {
        let sc = Scenario {
            particles: [6, 6],
            frames: 30,
            ..Scenario::gravity_bounce()
        };
        let traj = simulate_scenario(&sc, 2).unwrap();
        let opts = MetricOptions {
            metrics: vec![Metric::Mse],
            ..MetricOptions::default()
        };
        let zero = ZeroAccel { context: 5 };
        let (_, m) = evaluate_trajectory(&zero, &traj, Some(10), &sc.bounds, &opts).unwrap();
        let mut want = 0.0;
        for t in 5..15 {
            let a = crate::features::finite_diff_accel(&traj.frames[t - 1], &traj.frames[t], &traj.frames[t + 1]);
            want += a.iter().map(|x| x * x).sum::<f64>() / a.len() as f64;
        }
        want /= 10.0;
        assert!((m.one_step_mse.unwrap() - want).abs() <= 1e-12 * want.max(1e-30) + 1e-24);
        assert_eq!(m.mse_curve.len(), 10);
    }
}
