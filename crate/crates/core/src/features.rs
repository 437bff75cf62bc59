//! Input features, supervised targets and streaming normalization.
//!
//! Time is measured in steps (Δt = 1): a velocity is the difference of two
//! consecutive positions and an acceleration the difference of two
//! consecutive velocities.

use serde::{Deserialize, Serialize};

use crate::error::{GnsError, Result};
use crate::graph::EdgeList;
use crate::tensor::Tensor;

/// Standard deviations below this are clamped before dividing.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Water = 0,
    Sand = 1,
    Goop = 2,
    Rigid = 3,
    Boundary = 4,
}

impl Material {
    pub const COUNT: usize = 5;

    pub fn from_id(id: u8) -> Result<Self> {
        Ok(match id {
            0 => Material::Water,
            1 => Material::Sand,
            2 => Material::Goop,
            3 => Material::Rigid,
            4 => Material::Boundary,
            other => return Err(GnsError::Data(format!("unknown material id {other}"))),
        })
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn is_boundary(self) -> bool {
        self == Material::Boundary
    }
}

/// Axis-aligned container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBounds {
    pub fn unit(dim: usize) -> Self {
        BoxBounds {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.iter().zip(&self.hi).any(|(l, h)| !(l < h)) {
            return Err(GnsError::Config(format!("malformed box {:?} .. {:?}", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }
}

/// One particle system at one step, with its recent position history.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    dim: usize,
    /// `C + 1` frames of `N × dim` positions, oldest first.
    history: Vec<Vec<f64>>,
    materials: Vec<Material>,
    globals: Vec<f64>,
}

impl ParticleState {
    pub fn new(dim: usize, history: Vec<Vec<f64>>, materials: Vec<Material>, globals: Vec<f64>) -> Result<Self> {
        if history.len() < 2 {
            return Err(GnsError::Data(format!(
                "position history needs at least 2 frames, got {}",
                history.len()
            )));
        }
        let n = materials.len();
        for (k, frame) in history.iter().enumerate() {
            if frame.len() != n * dim {
                return Err(GnsError::Dimension {
                    op: "particle state frame",
                    lhs: vec![frame.len()],
                    rhs: vec![n, dim],
                });
            }
            if let Some(i) = frame.iter().position(|v| !v.is_finite()) {
                return Err(GnsError::Data(format!(
                    "non-finite position for particle {} in history frame {k}",
                    i / dim
                )));
            }
        }
        Ok(ParticleState {
            dim,
            history,
            materials,
            globals,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_particles(&self) -> usize {
        self.materials.len()
    }

    /// Number of input velocities `C`.
    pub fn context(&self) -> usize {
        self.history.len() - 1
    }

    pub fn history(&self) -> &[Vec<f64>] {
        &self.history
    }

    pub(crate) fn history_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.history
    }

    pub fn current(&self) -> &[f64] {
        self.history.last().unwrap()
    }

    pub fn previous(&self) -> &[f64] {
        &self.history[self.history.len() - 2]
    }

    /// Most recent velocity `p_t - p_{t-1}`.
    pub fn current_velocity(&self) -> Vec<f64> {
        self.current()
            .iter()
            .zip(self.previous())
            .map(|(c, p)| c - p)
            .collect()
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }

    pub fn globals(&self) -> &[f64] {
        &self.globals
    }

    pub fn set_globals(&mut self, globals: Vec<f64>) {
        self.globals = globals;
    }

    /// Drops the oldest frame and appends `next`.
    pub fn push_frame(&mut self, next: Vec<f64>) {
        self.history.remove(0);
        self.history.push(next);
    }

    /// Particles reordered so that new particle `k` is old particle `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> ParticleState {
        let d = self.dim;
        let history = self
            .history
            .iter()
            .map(|f| perm.iter().flat_map(|&i| f[i * d..(i + 1) * d].iter().copied()).collect())
            .collect();
        ParticleState {
            dim: d,
            history,
            materials: perm.iter().map(|&i| self.materials[i]).collect(),
            globals: self.globals.clone(),
        }
    }

    /// Every position shifted by `delta`.
    pub fn translated(&self, delta: &[f64]) -> ParticleState {
        let mut out = self.clone();
        for frame in &mut out.history {
            for (k, v) in frame.iter_mut().enumerate() {
                *v += delta[k % self.dim];
            }
        }
        out
    }
}

/// Velocities `p_k - p_{k-1}` for each consecutive pair of frames.
pub fn finite_diff_velocity(history: &[Vec<f64>]) -> Vec<Vec<f64>> {
    history
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
        .collect()
}

/// Acceleration `p_next - 2 p_curr + p_prev`.
pub fn finite_diff_accel(prev: &[f64], curr: &[f64], next: &[f64]) -> Vec<f64> {
    prev.iter()
        .zip(curr)
        .zip(next)
        .map(|((p, c), n)| n - 2.0 * c + p)
        .collect()
}

/// Distance from each particle to each of the `2·dim` walls (lower then
/// upper per axis), each clipped from above at `radius`.
pub fn wall_distances(positions: &[f64], bounds: &BoxBounds, radius: f64) -> Vec<f64> {
    let dim = bounds.dim();
    let n = positions.len() / dim;
    let mut out = Vec::with_capacity(n * 2 * dim);
    for p in positions.chunks_exact(dim) {
        for a in 0..dim {
            out.push((p[a] - bounds.lo[a]).min(radius));
            out.push((bounds.hi[a] - p[a]).min(radius));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    /// Displacement edge features; absolute positions masked out of nodes.
    #[default]
    Relative,
    /// Raw positions on nodes; edges start from a learned constant.
    Absolute,
}

/// Widths and options of the continuous input features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayout {
    pub dim: usize,
    pub context: usize,
    pub num_globals: usize,
    pub walls: Option<BoxBounds>,
    pub radius: f64,
    pub variant: EncoderVariant,
}

impl FeatureLayout {
    pub fn num_wall_features(&self) -> usize {
        if self.walls.is_some() {
            2 * self.dim
        } else {
            0
        }
    }

    /// Continuous node features: velocities, wall distances, globals and,
    /// for the absolute variant, the current position.
    pub fn node_width(&self) -> usize {
        let pos = match self.variant {
            EncoderVariant::Relative => 0,
            EncoderVariant::Absolute => self.dim,
        };
        self.context * self.dim + self.num_wall_features() + self.num_globals + pos
    }

    /// `[displacement, distance]`.
    pub fn edge_width(&self) -> usize {
        self.dim + 1
    }

    pub fn uses_edge_features(&self) -> bool {
        self.variant == EncoderVariant::Relative
    }

    /// Unnormalized node features, `N × node_width`.
    pub fn raw_node_features(&self, state: &ParticleState) -> Result<Tensor> {
        if state.dim() != self.dim || state.context() != self.context {
            return Err(GnsError::Dimension {
                op: "node features",
                lhs: vec![state.dim(), state.context()],
                rhs: vec![self.dim, self.context],
            });
        }
        if state.globals().len() != self.num_globals {
            return Err(GnsError::Dimension {
                op: "node features (globals)",
                lhs: vec![state.globals().len()],
                rhs: vec![self.num_globals],
            });
        }
        let n = state.num_particles();
        let d = self.dim;
        let velocities = finite_diff_velocity(state.history());
        let walls = self
            .walls
            .as_ref()
            .map(|b| wall_distances(state.current(), b, self.radius));
        let width = self.node_width();
        let nw = self.num_wall_features();
        let mut data = Vec::with_capacity(n * width);
        for i in 0..n {
            for v in &velocities {
                data.extend_from_slice(&v[i * d..(i + 1) * d]);
            }
            if let Some(w) = &walls {
                data.extend_from_slice(&w[i * nw..(i + 1) * nw]);
            }
            data.extend_from_slice(state.globals());
            if self.variant == EncoderVariant::Absolute {
                data.extend_from_slice(&state.current()[i * d..(i + 1) * d]);
            }
        }
        Ok(Tensor::matrix(n, width, data))
    }

    /// Unnormalized edge features `[p_receiver - p_sender, |p_receiver - p_sender|]`.
    pub fn raw_edge_features(&self, positions: &[f64], edges: &EdgeList) -> Tensor {
        let d = self.dim;
        let mut data = Vec::with_capacity(edges.len() * (d + 1));
        for (s, r) in edges.pairs() {
            let mut sq = 0.0;
            for a in 0..d {
                let disp = positions[r * d + a] - positions[s * d + a];
                sq += disp * disp;
                data.push(disp);
            }
            data.push(sq.sqrt());
        }
        Tensor::matrix(edges.len(), d + 1, data)
    }
}

/// Exact running moments of a feature vector, accumulated as sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub count: u64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl FeatureStats {
    pub fn new(width: usize) -> Self {
        FeatureStats {
            count: 0,
            sum: vec![0.0; width],
            sum_sq: vec![0.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.sum.len()
    }

    /// Adds every row of `rows` (a `k × width` matrix) for which `keep` holds.
    pub fn observe_rows(&mut self, rows: &Tensor, keep: Option<&[bool]>) {
        let w = self.width();
        if rows.is_empty() {
            return;
        }
        debug_assert_eq!(rows.cols(), w);
        for (r, row) in rows.data().chunks_exact(w).enumerate() {
            if keep.is_some_and(|k| !k[r]) {
                continue;
            }
            self.count += 1;
            for j in 0..w {
                self.sum[j] += row[j];
                self.sum_sq[j] += row[j] * row[j];
            }
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.width()];
        }
        self.sum.iter().map(|s| s / self.count as f64).collect()
    }

    /// Raw variance estimate `E[x²] - E[x]²`; may be slightly negative.
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![1.0; self.width()];
        }
        let c = self.count as f64;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, sq)| sq / c - (s / c) * (s / c))
            .collect()
    }

    /// Standard deviation used for scaling, floored at [`STD_FLOOR`].
    /// Without observations the identity transform is used.
    pub fn std(&self) -> Vec<f64> {
        self.variance().iter().map(|v| v.max(0.0).sqrt().max(STD_FLOOR)).collect()
    }

    pub fn normalize(&self, x: &Tensor) -> Tensor {
        let (mean, std) = (self.mean(), self.std());
        let w = self.width();
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(w) {
            for j in 0..w {
                row[j] = (row[j] - mean[j]) / std[j];
            }
        }
        out
    }

    pub fn denormalize(&self, x: &Tensor) -> Tensor {
        let (mean, std) = (self.mean(), self.std());
        let w = self.width();
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(w) {
            for j in 0..w {
                row[j] = row[j] * std[j] + mean[j];
            }
        }
        out
    }
}

/// Statistics for node inputs, edge inputs and acceleration targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub node: FeatureStats,
    pub edge: FeatureStats,
    pub target: FeatureStats,
}

impl NormStats {
    pub fn new(layout: &FeatureLayout) -> Self {
        NormStats {
            node: FeatureStats::new(layout.node_width()),
            edge: FeatureStats::new(layout.edge_width()),
            target: FeatureStats::new(layout.dim),
        }
    }

    /// True once every accumulator has seen data the model depends on.
    pub fn is_usable(&self) -> bool {
        self.node.count > 0 && self.target.count > 0
    }

    /// Accumulates one batch of (already corrupted) raw features and targets.
    /// Targets of masked-out particles are skipped.
    pub fn observe(&mut self, node: &Tensor, edge: Option<&Tensor>, target: Option<(&Tensor, &[bool])>) {
        self.node.observe_rows(node, None);
        if let Some(e) = edge {
            self.edge.observe_rows(e, None);
        }
        if let Some((t, mask)) = target {
            self.target.observe_rows(t, Some(mask));
        }
    }
}

/// Normalized network inputs for one graph.
#[derive(Debug, Clone)]
pub struct FeaturizedSample {
    /// `N × node_width` continuous features (material embedding is added by the encoder).
    pub node_features: Tensor,
    pub materials: Vec<usize>,
    /// `E × edge_width`; `None` for the absolute encoder.
    pub edge_features: Option<Tensor>,
    pub edges: EdgeList,
    /// Normalized targets when training.
    pub target: Option<Tensor>,
    pub loss_mask: Vec<bool>,
}

impl FeaturizedSample {
    pub fn num_nodes(&self) -> usize {
        self.materials.len()
    }

    /// Disjoint union of several graphs.
    pub fn batch(samples: &[FeaturizedSample]) -> Result<FeaturizedSample> {
        let first = samples
            .first()
            .ok_or_else(|| GnsError::Training("empty batch".into()))?;
        let nw = first.node_features.cols();
        let mut node = Vec::new();
        let mut materials = Vec::new();
        let mut edge_data: Option<Vec<f64>> = first.edge_features.as_ref().map(|_| Vec::new());
        let edge_width = first.edge_features.as_ref().map_or(0, |e| e.cols());
        let mut edges = EdgeList::empty();
        let mut target: Option<Vec<f64>> = first.target.as_ref().map(|_| Vec::new());
        let mut target_width = 0;
        let mut mask = Vec::new();
        for s in samples {
            let offset = materials.len();
            node.extend_from_slice(s.node_features.data());
            materials.extend_from_slice(&s.materials);
            if let (Some(acc), Some(e)) = (edge_data.as_mut(), &s.edge_features) {
                acc.extend_from_slice(e.data());
            }
            edges = edges.append(&s.edges, offset);
            if let (Some(acc), Some(t)) = (target.as_mut(), &s.target) {
                acc.extend_from_slice(t.data());
                target_width = t.cols();
            }
            mask.extend_from_slice(&s.loss_mask);
        }
        let n = materials.len();
        Ok(FeaturizedSample {
            node_features: Tensor::matrix(n, nw, node),
            materials,
            edge_features: edge_data.map(|d| Tensor::matrix(edges.len(), edge_width, d)),
            edges,
            target: target.map(|d| Tensor::matrix(n, target_width, d)),
            loss_mask: mask,
        })
    }
}

/// Normalizes raw features with `stats` and assembles a sample. `raw_target`
/// (physical accelerations) is normalized with the target statistics.
pub fn featurize(
    state: &ParticleState,
    edges: &EdgeList,
    layout: &FeatureLayout,
    stats: &NormStats,
    raw_target: Option<&Tensor>,
) -> Result<FeaturizedSample> {
    let raw_node = layout.raw_node_features(state)?;
    let raw_edge = layout
        .uses_edge_features()
        .then(|| layout.raw_edge_features(state.current(), edges));
    Ok(assemble(state, edges, stats, &raw_node, raw_edge.as_ref(), raw_target))
}

pub(crate) fn assemble(
    state: &ParticleState,
    edges: &EdgeList,
    stats: &NormStats,
    raw_node: &Tensor,
    raw_edge: Option<&Tensor>,
    raw_target: Option<&Tensor>,
) -> FeaturizedSample {
    FeaturizedSample {
        node_features: stats.node.normalize(raw_node),
        materials: state.materials().iter().map(|m| m.id() as usize).collect(),
        edge_features: raw_edge.map(|e| stats.edge.normalize(e)),
        edges: edges.clone(),
        target: raw_target.map(|t| stats.target.normalize(t)),
        loss_mask: state.materials().iter().map(|m| !m.is_boundary()).collect(),
    }
}
