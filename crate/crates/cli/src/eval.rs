use std::path::PathBuf;

use gns_core::datagen::{Dataset, Split};
use gns_core::experiment::evaluate_split;
use gns_core::json::write_json;
use gns_core::metrics::{evaluate_frames, Metric, MetricReport};
use gns_core::{BoxBounds, GnsError, Result, Trajectory};

use crate::config::{echo, Loaded};
use crate::rollout::{load_checked, Sidecar, ROLLOUT_FILE};
use crate::ConfigArg;

#[derive(clap::Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["checkpoint", "rollout"])))]
pub struct Args {
    /// Checkpoint directory to roll out on every trajectory of the split.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory written by `gns rollout`, scored against its source trajectory.
    #[arg(long)]
    rollout: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Comma-separated subset of mse, ot, mmd.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<Metric>>,
    /// Rollout horizon; defaults to whole trajectories.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

pub fn run(args: Args) -> Result<()> {
    let ds = Dataset::open(&args.dataset)?;
    let mut cfg = Loaded::from_file(args.config.config.as_deref())?.adapt_to(&ds.manifest)?;
    if let Some(m) = args.metrics {
        cfg.metrics.metrics = m;
    }
    if args.steps.is_some() {
        cfg.rollout_steps = args.steps;
    }
    let report = if let Some(ckpt) = &args.checkpoint {
        let sim = load_checked(ckpt, args.config.config.as_deref(), &ds)?;
        cfg.model = sim.model.config().clone();
        let bounds = cfg.model.walls.clone().unwrap_or_else(|| BoxBounds::unit(cfg.model.dim));
        let trajectories = ds.load_split(args.split)?;
        evaluate_split(&sim, &trajectories, cfg.rollout_steps, &bounds, &cfg.metrics)?
    } else {
        let dir = args.rollout.as_ref().unwrap();
        score_saved_rollout(dir, &ds, &cfg.metrics, cfg.rollout_steps)?
    };
    echo(&args.out, &cfg)?;
    write_json(&args.out.join("report.json"), &report)?;
    let csv = args.out.join("curves.csv");
    std::fs::write(&csv, report.curves_csv()).map_err(|e| GnsError::io(&csv, e))?;
    eprintln!(
        "one-step MSE {}  rollout MSE {:.4e}  OT {}  MMD {}",
        fmt(report.one_step_mse),
        report.rollout_mse,
        fmt(report.ot),
        fmt(report.mmd)
    );
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.4e}"))
}

fn score_saved_rollout(
    dir: &std::path::Path,
    ds: &Dataset,
    opts: &gns_core::metrics::MetricOptions,
    steps: Option<usize>,
) -> Result<MetricReport> {
    let sidecar = Sidecar::read(dir)?;
    let predicted = Trajectory::read(&dir.join(ROLLOUT_FILE))?;
    let split: Split = sidecar
        .meta
        .split
        .as_deref()
        .ok_or_else(|| GnsError::Data("rollout metadata has no split".into()))?
        .parse()?;
    let index = sidecar
        .meta
        .trajectory_index
        .ok_or_else(|| GnsError::Data("rollout metadata has no trajectory index".into()))?;
    let truth = ds.load(split, index)?;
    if truth.materials != predicted.materials {
        return Err(GnsError::Data("rollout particles do not match the source trajectory".into()));
    }
    let first = sidecar.start_frame + sidecar.context + 1;
    let available = predicted.num_frames().saturating_sub(sidecar.context + 1);
    let k = steps.map_or(available, |s| s.min(available));
    if first + k > truth.num_frames() {
        return Err(GnsError::Data(format!(
            "rollout runs to frame {} but the source has {} frames",
            first + k,
            truth.num_frames()
        )));
    }
    let keep: Vec<bool> = truth.materials.iter().map(|m| !m.is_boundary()).collect();
    let pred = &predicted.frames[sidecar.context + 1..sidecar.context + 1 + k];
    let mut m = evaluate_frames(&truth.name, pred, &truth.frames[first..first + k], None, truth.dim, &keep, opts)?;
    m.diverged_at = sidecar.diverged_at;
    let large = truth.num_particles() > opts.max_points;
    Ok(MetricReport::aggregate(vec![m], large.then_some(opts.max_points)))
}
