use std::fmt::Write as _;
use std::path::PathBuf;

use gns_core::datagen::{Dataset, Split};
use gns_core::experiment::{run_experiment, Experiment};
use gns_core::json::write_json;
use gns_core::metrics::Metric;
use gns_core::{EncoderVariant, GnsConfig, GnsError, Result};
use serde::{Deserialize, Serialize};

use crate::config::{echo, Loaded, RunConfig};
use crate::ConfigArg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Message-passing steps.
    #[value(name = "M")]
    M,
    Radius,
    /// Velocity noise scale.
    Noise,
    Shared,
    Encoder,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::M => "M",
            Axis::Radius => "radius",
            Axis::Noise => "noise",
            Axis::Shared => "shared",
            Axis::Encoder => "encoder",
        }
    }

    /// Applies one value of the axis to a copy of `cfg`.
    pub fn apply(self, cfg: &RunConfig, value: &str) -> Result<RunConfig> {
        let bad = |what: &str| GnsError::Config(format!("{what} value {value:?} for axis {}", self.name()));
        let mut out = cfg.clone();
        let m: &mut GnsConfig = &mut out.model;
        match self {
            Axis::M => m.message_passing_steps = value.parse().map_err(|_| bad("integer"))?,
            Axis::Radius => m.connectivity_radius = value.parse().map_err(|_| bad("real"))?,
            Axis::Noise => out.train.noise.sigma_v = value.parse().map_err(|_| bad("real"))?,
            Axis::Shared => m.shared_processor_params = value.parse().map_err(|_| bad("boolean"))?,
            Axis::Encoder => {
                m.encoder_variant = match value {
                    "relative" => EncoderVariant::Relative,
                    "absolute" => EncoderVariant::Absolute,
                    _ => return Err(bad("relative or absolute")),
                }
            }
        }
        out.model.validate()?;
        out.train.validate()?;
        Ok(out)
    }
}

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    axis: Axis,
    /// Comma-separated values of the axis.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Training steps per cell.
    #[arg(long)]
    steps: Option<u64>,
    /// Comma-separated training seeds; the median over seeds is reported.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cell {
    pub value: String,
    pub seed: u64,
    pub one_step_mse: f64,
    pub rollout_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Row {
    pub value: String,
    pub median_one_step_mse: f64,
    pub median_rollout_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: Axis,
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub rows: Vec<Row>,
    pub cells: Vec<Cell>,
    pub baseline_one_step_mse: f64,
    pub baseline_rollout_mse: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn run(args: Args) -> Result<()> {
    let ds = Dataset::open(&args.dataset)?;
    let mut cfg = Loaded::from_file(args.config.config.as_deref())?.adapt_to(&ds.manifest)?;
    if let Some(s) = args.steps {
        cfg.ablation.steps = s;
    }
    if let Some(s) = args.seeds {
        cfg.ablation.seeds = s;
    }
    if cfg.ablation.seeds.is_empty() {
        return Err(GnsError::Config("at least one seed is needed".into()));
    }
    cfg.metrics.metrics = vec![Metric::Mse];
    let cells_cfg = args
        .values
        .iter()
        .map(|v| args.axis.apply(&cfg, v))
        .collect::<Result<Vec<_>>>()?;
    echo(&args.out, &cfg)?;
    let train = ds.load_split(Split::Train)?;
    let valid = ds.load_split(Split::Valid)?;
    let test = ds.load_split(Split::Test)?;

    let mut cells = Vec::new();
    let mut rows = Vec::new();
    let mut baseline = None;
    for (value, vcfg) in args.values.iter().zip(&cells_cfg) {
        let mut one = Vec::new();
        let mut roll = Vec::new();
        for &seed in &cfg.ablation.seeds {
            let mut train_cfg = vcfg.train.clone();
            train_cfg.max_steps = cfg.ablation.steps;
            train_cfg.seed = seed;
            let exp = Experiment {
                model: vcfg.model.clone(),
                train: train_cfg,
                rollout_steps: vcfg.rollout_steps,
            };
            let dir = args.out.join(format!("{}={value}", args.axis.name())).join(format!("seed{seed}"));
            let r = run_experiment(&train, &valid, &test, &exp, &dir, &vcfg.metrics)?;
            let cell = Cell {
                value: value.clone(),
                seed,
                one_step_mse: r.model.one_step_mse.unwrap_or(f64::NAN),
                rollout_mse: r.model.rollout_mse,
            };
            eprintln!(
                "{}={value} seed {seed}: one-step {:.4e} rollout {:.4e}",
                args.axis.name(),
                cell.one_step_mse,
                cell.rollout_mse
            );
            one.push(cell.one_step_mse);
            roll.push(cell.rollout_mse);
            cells.push(cell);
            baseline.get_or_insert((r.baseline.one_step_mse.unwrap_or(f64::NAN), r.baseline.rollout_mse));
        }
        rows.push(Row {
            value: value.clone(),
            median_one_step_mse: median(&one),
            median_rollout_mse: median(&roll),
        });
    }
    let (b1, br) = baseline.unwrap();
    let report = AblationReport {
        axis: args.axis,
        steps: cfg.ablation.steps,
        seeds: cfg.ablation.seeds.clone(),
        rows,
        cells,
        baseline_one_step_mse: b1,
        baseline_rollout_mse: br,
    };
    write_json(&args.out.join("ablation.json"), &report)?;
    let path = args.out.join("ablation.csv");
    std::fs::write(&path, table_csv(&report)).map_err(|e| GnsError::io(&path, e))?;
    let path = args.out.join("cells.csv");
    std::fs::write(&path, cells_csv(&report)).map_err(|e| GnsError::io(&path, e))?;
    Ok(())
}

/// One row per axis value: `axis,value,one_step_mse,rollout_mse` (medians over seeds).
pub fn table_csv(r: &AblationReport) -> String {
    let mut out = String::from("axis,value,one_step_mse,rollout_mse\n");
    for row in &r.rows {
        let _ = writeln!(
            out,
            "{},{},{:e},{:e}",
            r.axis.name(),
            row.value,
            row.median_one_step_mse,
            row.median_rollout_mse
        );
    }
    out
}

fn cells_csv(r: &AblationReport) -> String {
    let mut out = String::from("axis,value,seed,one_step_mse,rollout_mse\n");
    for c in &r.cells {
        let _ = writeln!(out, "{},{},{},{:e},{:e}", r.axis.name(), c.value, c.seed, c.one_step_mse, c.rollout_mse);
    }
    out
}
