use std::path::PathBuf;

use gns_core::datagen::{Dataset, Split};
use gns_core::train::fit;
use gns_core::Result;

use crate::config::{echo, Loaded};
use crate::ConfigArg;

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    dataset: PathBuf,
    /// Run directory for checkpoints, the training log and the resolved config.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from `OUT/last` when it exists.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    config: ConfigArg,
}

pub fn run(args: Args) -> Result<()> {
    let ds = Dataset::open(&args.dataset)?;
    let mut cfg = Loaded::from_file(args.config.config.as_deref())?.adapt_to(&ds.manifest)?;
    if let Some(steps) = args.max_steps {
        cfg.train.max_steps = steps;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    echo(&args.out, &cfg)?;
    let train = ds.load_split(Split::Train)?;
    let valid = ds.load_split(Split::Valid)?;
    let start = std::time::Instant::now();
    let outcome = fit(&train, &valid, &cfg.model, &cfg.train, &args.out, args.resume)?;
    eprintln!(
        "trained {} steps in {:.1}s; best validation rollout MSE {} at step {}",
        outcome.final_step,
        start.elapsed().as_secs_f64(),
        outcome.best_val_rollout_mse.map_or("n/a".into(), |v| format!("{v:.4e}")),
        outcome.best_step.map_or("n/a".into(), |s| s.to_string()),
    );
    Ok(())
}
