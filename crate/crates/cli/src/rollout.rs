use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gns_core::datagen::{Dataset, Split};
use gns_core::experiment::rollout_length;
use gns_core::json::{read_json, write_json};
use gns_core::rollout::{rollout, BlowupGuard, RolloutMeta};
use gns_core::{BoxBounds, GnsError, Result, Rollout, Simulator, Trajectory};
use serde::{Deserialize, Serialize};

use crate::config::{echo, Loaded};
use crate::ConfigArg;

pub const ROLLOUT_FILE: &str = "rollout.traj";
pub const SIDECAR_FILE: &str = "rollout.json";

#[derive(clap::Args)]
pub struct Args {
    /// Checkpoint directory (for example `RUN/best`).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 0)]
    traj_index: usize,
    /// Number of predicted steps; defaults to the rest of the trajectory.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write every frame as `frames.csv`.
    #[arg(long)]
    export_csv: bool,
    #[command(flatten)]
    config: ConfigArg,
}

/// Metadata written next to a rollout trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub meta: RolloutMeta,
    pub context: usize,
    /// Index in the source trajectory of the first frame of the file.
    pub start_frame: usize,
    pub steps: usize,
    pub diverged_at: Option<usize>,
}

impl Sidecar {
    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join(SIDECAR_FILE))
    }
}

/// Checks a checkpoint against an explicitly given model configuration.
pub fn load_checked(checkpoint: &Path, config: Option<&Path>, ds: &Dataset) -> Result<Simulator> {
    let sim = Simulator::load(checkpoint)?;
    if config.is_some() {
        let cfg = Loaded::from_file(config)?.adapt_to(&ds.manifest)?;
        let have = sim.model.config();
        if &cfg.model != have {
            return Err(GnsError::Config(format!(
                "checkpoint {} does not match the config model (latent {} vs {}, message passing {} vs {})",
                checkpoint.display(),
                have.latent_size,
                cfg.model.latent_size,
                have.message_passing_steps,
                cfg.model.message_passing_steps
            )));
        }
    }
    let cfg = sim.model.config();
    if cfg.dim != ds.manifest.dim || cfg.num_globals != ds.manifest.num_globals {
        return Err(GnsError::Config(format!(
            "checkpoint expects dim {} with {} globals; dataset has dim {} with {}",
            cfg.dim, cfg.num_globals, ds.manifest.dim, ds.manifest.num_globals
        )));
    }
    Ok(sim)
}

fn to_trajectory(r: &Rollout, source: &Trajectory) -> Trajectory {
    let mut t = Trajectory {
        name: format!("{}-rollout", source.name),
        dim: r.dim,
        dt: source.dt,
        materials: r.materials.clone(),
        globals: source.globals[..r.frames.len()].to_vec(),
        frames: r.frames.clone(),
    };
    t.round_to_f32();
    t
}

fn frames_csv(t: &Trajectory) -> String {
    let mut out = String::from("frame,particle,material");
    for d in 0..t.dim {
        let _ = write!(out, ",x{d}");
    }
    out.push('\n');
    for (k, f) in t.frames.iter().enumerate() {
        for (i, p) in f.chunks_exact(t.dim).enumerate() {
            let _ = write!(out, "{k},{i},{}", t.materials[i].id());
            for v in p {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn run(args: Args) -> Result<()> {
    let ds = Dataset::open(&args.dataset)?;
    let sim = load_checked(&args.checkpoint, args.config.config.as_deref(), &ds)?;
    let traj = ds.load(args.split, args.traj_index)?;
    let c = sim.model.config().context;
    let steps = rollout_length(&traj, c, args.steps);
    if steps == 0 {
        return Err(GnsError::Data(format!("trajectory has {} frames; nothing to roll out", traj.num_frames())));
    }
    let mut cfg = Loaded::from_file(args.config.config.as_deref())?.adapt_to(&ds.manifest)?;
    cfg.model = sim.model.config().clone();
    cfg.rollout_steps = Some(steps);
    echo(&args.out, &cfg)?;

    let bounds = sim.model.config().walls.clone().unwrap_or_else(|| BoxBounds::unit(traj.dim));
    let init = traj.window(c, c)?;
    let (mut result, failure) = match rollout(&sim, &init, steps, Some(&traj.globals[c..]), Some(&BlowupGuard::for_box(&bounds))) {
        Ok(r) => (r, None),
        Err(GnsError::Blowup { step, reason, partial }) => (*partial, Some((step, reason))),
        Err(e) => return Err(e),
    };
    result.meta = RolloutMeta {
        checkpoint: Some(args.checkpoint.display().to_string()),
        dataset: Some(args.dataset.display().to_string()),
        split: Some(args.split.name().to_string()),
        trajectory_index: Some(args.traj_index),
        seed: Some(ds.manifest.seed),
    };
    let out_traj = to_trajectory(&result, &traj);
    out_traj.write(&args.out.join(ROLLOUT_FILE))?;
    let sidecar = Sidecar {
        meta: result.meta.clone(),
        context: c,
        start_frame: 0,
        steps: result.predicted().len(),
        diverged_at: failure.as_ref().map(|f| f.0),
    };
    write_json(&args.out.join(SIDECAR_FILE), &sidecar)?;
    if args.export_csv {
        let path = args.out.join("frames.csv");
        std::fs::write(&path, frames_csv(&out_traj)).map_err(|e| GnsError::io(&path, e))?;
    }
    let total: f64 = result.step_times.iter().sum();
    eprintln!(
        "rolled out {} steps in {:.3}s ({:.2} ms/step)",
        result.step_times.len(),
        total,
        1e3 * total / result.step_times.len().max(1) as f64
    );
    match failure {
        Some((step, reason)) => Err(GnsError::Blowup {
            step,
            reason,
            partial: Box::new(result),
        }),
        None => Ok(()),
    }
}
