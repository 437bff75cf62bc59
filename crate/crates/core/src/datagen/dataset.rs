use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{simulate_scenario, Scenario, Trajectory};
use crate::error::{GnsError, Result};
use crate::json::{read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn offset(self) -> u64 {
        self as u64
    }
}

impl std::str::FromStr for Split {
    type Err = GnsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(GnsError::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train: 50,
            valid: 5,
            test: 5,
        }
    }
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Valid => self.valid,
            Split::Test => self.test,
        }
    }
}

/// One trajectory file of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
    pub particles: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub scenario: Scenario,
    pub seed: u64,
    pub dim: usize,
    pub num_globals: usize,
    pub connectivity_radius: f64,
    pub train: Vec<ManifestEntry>,
    pub valid: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
    /// Reserved for precomputed normalization statistics; training computes them online.
    pub stats: Option<serde_json::Value>,
}

impl Manifest {
    pub fn entries(&self, split: Split) -> &[ManifestEntry] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Seed of trajectory `index` in `split`; distinct for every
/// `(base, split, index)` with `index < 1_000_000`.
pub fn trajectory_seed(base: u64, split: Split, index: usize) -> u64 {
    base * 3_000_000 + split.offset() * 1_000_000 + index as u64
}

/// Generates every split into `dir` and writes the manifest.
pub fn make_dataset(scenario: &Scenario, counts: SplitCounts, seed: u64, dir: &Path) -> Result<Manifest> {
    scenario.validate()?;
    if Split::ALL.iter().any(|&s| counts.get(s) >= 1_000_000) {
        return Err(GnsError::Config("at most 999999 trajectories per split".into()));
    }
    let mut lists: Vec<Vec<ManifestEntry>> = Vec::new();
    for split in Split::ALL {
        let sub = dir.join(split.name());
        std::fs::create_dir_all(&sub).map_err(|e| GnsError::io(&sub, e))?;
        let mut entries = Vec::new();
        for i in 0..counts.get(split) {
            let s = trajectory_seed(seed, split, i);
            let traj = simulate_scenario(scenario, s)?;
            let file = format!("{}/{i:05}.traj", split.name());
            traj.write(&dir.join(&file))?;
            entries.push(ManifestEntry {
                file,
                seed: s,
                particles: traj.num_particles(),
                frames: traj.num_frames(),
            });
        }
        lists.push(entries);
    }
    let test = lists.pop().unwrap();
    let valid = lists.pop().unwrap();
    let train = lists.pop().unwrap();
    let manifest = Manifest {
        format_version: super::TRAJECTORY_VERSION,
        scenario: scenario.clone(),
        seed,
        dim: 2,
        num_globals: 1,
        connectivity_radius: scenario.connectivity_radius,
        train,
        valid,
        test,
        stats: None,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// A dataset directory opened through its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(GnsError::Data(format!("no {MANIFEST_FILE} in {}", root.display())));
        }
        let manifest: Manifest = read_json(&path)?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn len(&self, split: Split) -> usize {
        self.manifest.entries(split).len()
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.len(split) == 0
    }

    pub fn load(&self, split: Split, index: usize) -> Result<Trajectory> {
        let entry = self.manifest.entries(split).get(index).ok_or_else(|| GnsError::Index {
            op: "dataset split",
            index,
            len: self.len(split),
        })?;
        Trajectory::read(&self.root.join(&entry.file))
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Trajectory>> {
        (0..self.len(split)).map(|i| self.load(split, i)).collect()
    }
}
