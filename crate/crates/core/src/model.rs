//! The learnable dynamics network: encoder, processor of message-passing
//! blocks, decoder.
//!
//! Latent edges carry `(sender j → receiver i)`; the edge update sees
//! `[e_ij, v_i, v_j]` and every node sums its incoming edge latents.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GnsError, Result};
use crate::json::{read_json, write_json};
use crate::features::{BoxBounds, FeatureLayout, FeaturizedSample, Material};
use crate::tensor::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};

pub use crate::features::EncoderVariant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnsConfig {
    pub dim: usize,
    /// Number of input velocities `C`.
    pub context: usize,
    pub num_globals: usize,
    pub material_embedding_size: usize,
    pub latent_size: usize,
    pub mlp_hidden_size: usize,
    pub mlp_hidden_layers: usize,
    pub message_passing_steps: usize,
    pub shared_processor_params: bool,
    pub encoder_variant: EncoderVariant,
    pub use_layer_norm: bool,
    pub connectivity_radius: f64,
    pub self_edges: bool,
    pub update_edge_latents: bool,
    /// Container used for wall-distance features; `None` disables them.
    pub walls: Option<BoxBounds>,
}

impl Default for GnsConfig {
    fn default() -> Self {
        GnsConfig {
            dim: 2,
            context: 5,
            num_globals: 1,
            material_embedding_size: 16,
            latent_size: 128,
            mlp_hidden_size: 128,
            mlp_hidden_layers: 2,
            message_passing_steps: 10,
            shared_processor_params: false,
            encoder_variant: EncoderVariant::Relative,
            use_layer_norm: true,
            connectivity_radius: 0.015,
            self_edges: false,
            update_edge_latents: true,
            walls: Some(BoxBounds::unit(2)),
        }
    }
}

impl GnsConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.dim, 2 | 3) {
            return Err(GnsError::Config(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.context < 1 {
            return Err(GnsError::Config("context must be >= 1".into()));
        }
        if self.message_passing_steps < 1 {
            return Err(GnsError::Config("message_passing_steps must be >= 1".into()));
        }
        if self.latent_size < 1 || self.mlp_hidden_size < 1 || self.material_embedding_size < 1 {
            return Err(GnsError::Config("layer sizes must be >= 1".into()));
        }
        if !(self.connectivity_radius > 0.0) || !self.connectivity_radius.is_finite() {
            return Err(GnsError::Config(format!(
                "connectivity_radius must be positive, got {}",
                self.connectivity_radius
            )));
        }
        if let Some(w) = &self.walls {
            w.validate()?;
            if w.dim() != self.dim {
                return Err(GnsError::Config("wall box dimension differs from dim".into()));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            dim: self.dim,
            context: self.context,
            num_globals: self.num_globals,
            walls: self.walls.clone(),
            radius: self.connectivity_radius,
            variant: self.encoder_variant,
        }
    }
}

/// Node and edge latents of one graph, as tape handles.
#[derive(Debug, Clone)]
pub struct LatentGraph {
    pub nodes: Var,
    pub edges: Var,
    pub senders: Arc<[usize]>,
    pub receivers: Arc<[usize]>,
}

#[derive(Debug, Clone)]
struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    norm: Option<(ParamId, ParamId)>,
}

impl Mlp {
    fn create(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, widths: &[usize], norm: bool) -> Mlp {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let wid = store.insert_weight(format!("{prefix}.l{i}.w"), w[0], w[1], rng);
                let bid = store.insert(format!("{prefix}.l{i}.b"), Tensor::zeros(vec![w[1]]));
                (wid, bid)
            })
            .collect();
        let out = *widths.last().unwrap();
        let norm = norm.then(|| {
            let g = store.insert(format!("{prefix}.ln.g"), Tensor::new(vec![out], vec![1.0; out]).unwrap());
            let b = store.insert(format!("{prefix}.ln.b"), Tensor::zeros(vec![out]));
            (g, b)
        });
        Mlp { layers, norm }
    }

    fn finish(&self, tape: &mut Tape, p: &BoundParams, mut h: Var, from_layer: usize) -> Result<Var> {
        for (i, &(w, b)) in self.layers.iter().enumerate().skip(from_layer) {
            h = tape.linear(h, p.var(w), p.var(b))?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        if let Some((g, b)) = self.norm {
            h = tape.layer_norm(h, p.var(g), p.var(b))?;
        }
        Ok(h)
    }

    /// `relu(first-layer pre-activation)` followed by the remaining layers.
    fn after_first(&self, tape: &mut Tape, p: &BoundParams, pre: Var) -> Result<Var> {
        let mut h = pre;
        if self.layers.len() > 1 {
            h = tape.relu(h);
        }
        if self.layers.len() == 1 {
            if let Some((g, b)) = self.norm {
                h = tape.layer_norm(h, p.var(g), p.var(b))?;
            }
            return Ok(h);
        }
        self.finish(tape, p, h, 1)
    }

    fn forward(&self, tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var> {
        self.finish(tape, p, x, 0)
    }
}

#[derive(Debug, Clone)]
struct Block {
    edge: Mlp,
    node: Mlp,
}

#[derive(Debug, Clone)]
enum EdgeEncoder {
    Mlp(Mlp),
    Bias(ParamId),
}

#[derive(Debug, Clone)]
pub struct GnsModel {
    config: GnsConfig,
    params: ParamStore,
    embedding: ParamId,
    node_encoder: Mlp,
    edge_encoder: EdgeEncoder,
    blocks: Vec<Block>,
    decoder: Mlp,
}

impl GnsModel {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(config: GnsConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layout = config.layout();
        let l = config.latent_size;
        let h = config.mlp_hidden_size;
        let ln = config.use_layer_norm;
        let widths = |input: usize, output: usize| {
            let mut w = vec![input];
            w.extend(std::iter::repeat_n(h, config.mlp_hidden_layers));
            w.push(output);
            w
        };

        let emb = config.material_embedding_size;
        let table = (0..Material::COUNT * emb)
            .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
            .collect();
        let embedding = store.insert("embedding.material", Tensor::matrix(Material::COUNT, emb, table));
        let node_encoder = Mlp::create(&mut store, &mut rng, "encoder.node", &widths(layout.node_width() + emb, l), ln);
        let edge_encoder = match config.encoder_variant {
            EncoderVariant::Relative => {
                EdgeEncoder::Mlp(Mlp::create(&mut store, &mut rng, "encoder.edge", &widths(layout.edge_width(), l), ln))
            }
            EncoderVariant::Absolute => EdgeEncoder::Bias(store.insert("encoder.edge_bias", Tensor::zeros(vec![1, l]))),
        };
        let mut blocks: Vec<Block> = Vec::with_capacity(config.message_passing_steps);
        for m in 0..config.message_passing_steps {
            if config.shared_processor_params && m > 0 {
                blocks.push(blocks[0].clone());
                continue;
            }
            let tag = if config.shared_processor_params {
                "shared".to_string()
            } else {
                m.to_string()
            };
            let edge = Mlp::create(&mut store, &mut rng, &format!("processor.{tag}.edge"), &widths(3 * l, l), ln);
            let node = Mlp::create(&mut store, &mut rng, &format!("processor.{tag}.node"), &widths(2 * l, l), ln);
            blocks.push(Block { edge, node });
        }
        let decoder = Mlp::create(&mut store, &mut rng, "decoder", &widths(l, config.dim), false);
        Ok(GnsModel {
            config,
            params: store,
            embedding,
            node_encoder,
            edge_encoder,
            blocks,
            decoder,
        })
    }

    pub fn config(&self) -> &GnsConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Zeroes the final decoder layer so the network predicts zero.
    pub fn zero_decoder_output(&mut self) {
        let &(w, b) = self.decoder.layers.last().unwrap();
        for id in [w, b] {
            self.params.get_mut(id).data_mut().fill(0.0);
        }
    }

    /// Zeroes the last layer of every processor MLP, turning each block into the identity.
    pub fn zero_processor_outputs(&mut self) {
        for block in &self.blocks {
            for mlp in [&block.edge, &block.node] {
                let &(w, b) = mlp.layers.last().unwrap();
                self.params.get_mut(w).data_mut().fill(0.0);
                self.params.get_mut(b).data_mut().fill(0.0);
                if let Some((g, bb)) = mlp.norm {
                    self.params.get_mut(g).data_mut().fill(0.0);
                    self.params.get_mut(bb).data_mut().fill(0.0);
                }
            }
        }
    }

    fn check_sample(&self, sample: &FeaturizedSample) -> Result<()> {
        let layout = self.config.layout();
        let n = sample.num_nodes();
        if n > 0 && sample.node_features.cols() != layout.node_width() {
            return Err(GnsError::Dimension {
                op: "encode (node features)",
                lhs: sample.node_features.shape().to_vec(),
                rhs: vec![n, layout.node_width()],
            });
        }
        if let Some(e) = &sample.edge_features {
            if !sample.edges.is_empty() && e.cols() != layout.edge_width() {
                return Err(GnsError::Dimension {
                    op: "encode (edge features)",
                    lhs: e.shape().to_vec(),
                    rhs: vec![sample.edges.len(), layout.edge_width()],
                });
            }
        } else if layout.uses_edge_features() {
            return Err(GnsError::Data("relative encoder needs edge features".into()));
        }
        if let Some(&m) = sample.materials.iter().find(|&&m| m >= Material::COUNT) {
            return Err(GnsError::Data(format!("unknown material id {m}")));
        }
        Ok(())
    }

    pub fn encode(&self, tape: &mut Tape, p: &BoundParams, sample: &FeaturizedSample) -> Result<LatentGraph> {
        self.check_sample(sample)?;
        let n = sample.num_nodes();
        let l = self.config.latent_size;
        let feats = tape.leaf(reshape_rows(&sample.node_features, n, self.config.layout().node_width()));
        let emb = tape.gather_rows(p.var(self.embedding), sample.materials.iter().copied().collect())?;
        let x = tape.concat(&[feats, emb])?;
        let nodes = self.node_encoder.forward(tape, p, x)?;
        let e = sample.edges.len();
        let edges = match &self.edge_encoder {
            EdgeEncoder::Mlp(mlp) => {
                let width = self.config.layout().edge_width();
                let ef = sample.edge_features.as_ref().unwrap();
                let x = tape.leaf(reshape_rows(ef, e, width));
                if e == 0 {
                    tape.leaf(Tensor::zeros(vec![0, l]))
                } else {
                    mlp.forward(tape, p, x)?
                }
            }
            EdgeEncoder::Bias(id) => tape.gather_rows(p.var(*id), vec![0; e].into())?,
        };
        Ok(LatentGraph {
            nodes,
            edges,
            senders: sample.edges.senders().clone(),
            receivers: sample.edges.receivers().clone(),
        })
    }

    /// One residual message-passing step with the parameters of block `m`.
    pub fn gn_block(&self, tape: &mut Tape, p: &BoundParams, g: &LatentGraph, m: usize) -> Result<LatentGraph> {
        let block = &self.blocks[m];
        let l = self.config.latent_size;
        let n = tape.value(g.nodes).rows();
        let e = g.senders.len();
        let (message, edges) = if e == 0 {
            let empty = tape.leaf(Tensor::zeros(vec![0, l]));
            (empty, g.edges)
        } else {
            // First edge layer on [e, v_recv, v_send] split into three products so
            // the node terms are computed once per node instead of once per edge.
            let (w0, b0) = block.edge.layers[0];
            let w = p.var(w0);
            let we = tape.slice_rows(w, 0, l)?;
            let wr = tape.slice_rows(w, l, l)?;
            let ws = tape.slice_rows(w, 2 * l, l)?;
            let he = tape.matmul(g.edges, we)?;
            let hr = tape.matmul(g.nodes, wr)?;
            let hs = tape.matmul(g.nodes, ws)?;
            let hr = tape.gather_rows(hr, g.receivers.clone())?;
            let hs = tape.gather_rows(hs, g.senders.clone())?;
            let pre = tape.add(he, hr)?;
            let pre = tape.add(pre, hs)?;
            let pre = tape.add_bias(pre, p.var(b0))?;
            let delta = block.edge.after_first(tape, p, pre)?;
            let updated = tape.add(g.edges, delta)?;
            let edges = if self.config.update_edge_latents { updated } else { g.edges };
            (updated, edges)
        };
        let agg = tape.scatter_sum(message, g.receivers.clone(), n)?;
        let x = tape.concat(&[g.nodes, agg])?;
        let delta = block.node.forward(tape, p, x)?;
        let nodes = tape.add(g.nodes, delta)?;
        Ok(LatentGraph {
            nodes,
            edges,
            senders: g.senders.clone(),
            receivers: g.receivers.clone(),
        })
    }

    pub fn process(&self, tape: &mut Tape, p: &BoundParams, g0: LatentGraph) -> Result<LatentGraph> {
        let mut g = g0;
        for m in 0..self.blocks.len() {
            g = self.gn_block(tape, p, &g, m)?;
        }
        Ok(g)
    }

    /// Per-node normalized accelerations, `N × dim`.
    pub fn decode(&self, tape: &mut Tape, p: &BoundParams, g: &LatentGraph) -> Result<Var> {
        self.decoder.forward(tape, p, g.nodes)
    }

    /// Full forward pass recorded on `tape`.
    pub fn forward(&self, tape: &mut Tape, p: &BoundParams, sample: &FeaturizedSample) -> Result<Var> {
        let g0 = self.encode(tape, p, sample)?;
        let g = self.process(tape, p, g0)?;
        self.decode(tape, p, &g)
    }

    /// Forward pass without keeping the tape; returns normalized accelerations.
    pub fn predict_normalized(&self, sample: &FeaturizedSample) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &p, sample)?;
        Ok(tape.value(out).clone())
    }

    /// Masked MSE between the network output and `sample.target`, recorded on `tape`.
    pub fn loss(&self, tape: &mut Tape, p: &BoundParams, sample: &FeaturizedSample) -> Result<Var> {
        let target = sample
            .target
            .clone()
            .ok_or_else(|| GnsError::Training("sample has no target".into()))?;
        let pred = self.forward(tape, p, sample)?;
        let target = reshape_rows(&target, sample.num_nodes(), self.config.dim);
        tape.mse_loss(pred, target, Some(sample.loss_mask.clone()))
    }

    /// Writes `params.ckpt` and `model.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| GnsError::io(dir, e))?;
        crate::tensor::write_checkpoint(&dir.join("params.ckpt"), &self.params, None)?;
        write_json(&dir.join("model.json"), &self.config)
    }

    /// Loads a model written by [`GnsModel::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let config: GnsConfig = read_json(&dir.join("model.json"))?;
        let mut model = GnsModel::new(config, 0)?;
        let ckpt = crate::tensor::read_checkpoint(&dir.join("params.ckpt"), Default::default())?;
        model.params.load_from(&ckpt.params)?;
        Ok(model)
    }
}

/// Views a possibly empty feature matrix as `[rows, cols]`.
fn reshape_rows(t: &Tensor, rows: usize, cols: usize) -> Tensor {
    if rows == 0 {
        Tensor::zeros(vec![0, cols])
    } else {
        t.clone()
    }
}
