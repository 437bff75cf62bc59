use std::path::PathBuf;

use gns_core::datagen::{make_dataset, SplitCounts};
use gns_core::{GnsError, Result, Scenario, ScenarioKind};

use crate::config::{echo, Loaded};
use crate::ConfigArg;

#[derive(clap::Args)]
pub struct Args {
    /// Scenario preset (gravity-bounce or springs); ignored when the config has a scenario.
    #[arg(long, value_parser = parse_kind)]
    scenario: Option<ScenarioKind>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Trajectory counts as TRAIN,VALID,TEST.
    #[arg(long, value_parser = parse_splits)]
    splits: Option<SplitCounts>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArg,
}

fn parse_kind(s: &str) -> std::result::Result<ScenarioKind, String> {
    s.parse().map_err(|e: GnsError| e.to_string())
}

pub fn parse_splits(s: &str) -> std::result::Result<SplitCounts, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [train, valid, test] => Ok(SplitCounts { train, valid, test }),
        _ => Err(format!("expected TRAIN,VALID,TEST, got {s:?}")),
    }
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = Loaded::from_file(args.config.config.as_deref())?.config;
    match (args.scenario, &cfg.scenario) {
        (Some(kind), Some(s)) if s.kind != kind => {
            return Err(GnsError::Config(format!(
                "--scenario {} conflicts with the {} scenario in the config",
                kind.name(),
                s.kind.name()
            )))
        }
        (kind, None) => cfg.scenario = Some(Scenario::for_kind(kind.unwrap_or(ScenarioKind::GravityBounce))),
        _ => {}
    }
    if let Some(s) = args.splits {
        cfg.splits = s;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let scenario = cfg.scenario.clone().unwrap();
    let manifest = make_dataset(&scenario, cfg.splits, cfg.seed, &args.out)?;
    echo(&args.out, &cfg)?;
    eprintln!(
        "wrote {} / {} / {} trajectories of {} to {}",
        manifest.train.len(),
        manifest.valid.len(),
        manifest.test.len(),
        scenario.name(),
        args.out.display()
    );
    Ok(())
}
