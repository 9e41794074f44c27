//! GIN graph encoder and local/global discriminator.
//!
//! Layer `k` computes `h_v = MLP_k((1 + ε)·h_v + Σ_{u ∈ N(v)} h_u)` with a
//! two-layer MLP (ReLU between the affine maps). A node's patch
//! representation concatenates its outputs from all `K` layers, and the graph
//! representation is the sum of patch rows. The discriminator projects a
//! patch row and a graph vector through separate three-layer heads and scores
//! the pair by the dot product of the projections.
//!
//! Batches are encoded as one disjoint union of graphs, so message passing
//! never crosses graph boundaries and only the readout needs graph membership.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphs::LearningGraph;
use crate::numerics::ops::{self, Dense};
use crate::numerics::{Matrix, NumericsError, ParamTape};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("checkpoint is missing parameter `{0}`")]
    MissingParam(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    /// GIN self-weight ε; fixed, not learned.
    #[serde(default)]
    pub epsilon: f64,
    /// Aggregate over in-neighbours only instead of the symmetrized neighbourhood.
    #[serde(default)]
    pub directed_aggregation: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            num_layers: 3,
            hidden_dim: 32,
            input_dim: 3,
            epsilon: 0.0,
            directed_aggregation: false,
        }
    }
}

impl EncoderConfig {
    /// Width of patch and graph representations: `num_layers × hidden_dim`.
    pub fn embed_dim(&self) -> usize {
        self.num_layers * self.hidden_dim
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.input_dim == 0 {
            return Err(EncoderError::InvalidConfig(format!(
                "layers, hidden_dim and input_dim must be >= 1 (got {}, {}, {})",
                self.num_layers, self.hidden_dim, self.input_dim
            )));
        }
        if !self.epsilon.is_finite() {
            return Err(EncoderError::InvalidConfig("epsilon must be finite".into()));
        }
        Ok(())
    }
}

/// Node features plus directed edges (indices into the feature rows).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTensor {
    features: Matrix,
    edges: Vec<(usize, usize)>,
}

impl GraphTensor {
    pub fn new(features: Matrix, edges: Vec<(usize, usize)>) -> Result<Self, EncoderError> {
        let n = features.rows();
        if n == 0 {
            return Err(EncoderError::InvalidGraph("graph has no nodes".into()));
        }
        if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= n || b >= n) {
            return Err(EncoderError::InvalidGraph(format!("edge ({a}, {b}) outside {n} nodes")));
        }
        if !features.is_finite() {
            return Err(EncoderError::InvalidGraph("non-finite node attribute".into()));
        }
        Ok(GraphTensor { features, edges })
    }

    pub fn from_learning_graph(graph: &LearningGraph) -> Result<Self, EncoderError> {
        GraphTensor::new(graph.feature_matrix(), graph.edges.clone())
    }

    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Relabels nodes so old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> GraphTensor {
        assert_eq!(perm.len(), self.node_count(), "permutation length");
        let mut features = Matrix::zeros(self.features.rows(), self.features.cols());
        for (old, &new) in perm.iter().enumerate() {
            features.row_mut(new).copy_from_slice(self.features.row(old));
        }
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        GraphTensor { features, edges }
    }
}

/// Patch rows (`N×d`) and the summed graph representation (`d`).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEncoding {
    pub patch: Matrix,
    pub global: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GinLayer {
    pub hidden: Dense,
    pub output: Dense,
}

/// Encoder parameters ψ.
#[derive(Debug, Clone, PartialEq)]
pub struct GinParams {
    pub layers: Vec<GinLayer>,
}

/// Three affine maps with ReLU after the first two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionHead {
    pub layers: [Dense; 3],
}

/// Discriminator parameters β.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub local: ProjectionHead,
    pub global: ProjectionHead,
}

/// Encoder and discriminator sharing one parameter tape.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub params: ParamTape,
    pub gin: GinParams,
    pub discriminator: DiscriminatorParams,
}

fn gin_name(layer: usize, part: &str) -> String {
    format!("gin.{layer}.{part}")
}

fn head_name(head: &str, layer: usize) -> String {
    format!("disc.{head}.{layer}")
}

/// Glorot-initialised encoder and discriminator, reproducible from `seed`.
pub fn init_params(config: EncoderConfig, seed: u64) -> Result<EncoderModel, EncoderError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = ParamTape::new();
    let h = config.hidden_dim;
    let d = config.embed_dim();
    let layers = (0..config.num_layers)
        .map(|k| {
            let input = if k == 0 { config.input_dim } else { h };
            GinLayer {
                hidden: Dense::register(&mut tape, &gin_name(k, "hidden"), input, h, &mut rng),
                output: Dense::register(&mut tape, &gin_name(k, "output"), h, h, &mut rng),
            }
        })
        .collect();
    let mut head = |name: &str| ProjectionHead {
        layers: [0, 1, 2].map(|i| Dense::register(&mut tape, &head_name(name, i), d, d, &mut rng)),
    };
    let local = head("local");
    let global = head("global");
    Ok(EncoderModel {
        config,
        params: tape,
        gin: GinParams { layers },
        discriminator: DiscriminatorParams { local, global },
    })
}

impl EncoderModel {
    /// Rebuilds a model around an existing tape (e.g. from a checkpoint),
    /// checking that every expected parameter is present with the right shape.
    pub fn from_params(config: EncoderConfig, params: ParamTape) -> Result<Self, EncoderError> {
        config.validate()?;
        let h = config.hidden_dim;
        let d = config.embed_dim();
        let find = |name: String, inputs: usize, outputs: usize| -> Result<Dense, EncoderError> {
            let dense = Dense::find(&params, &name).ok_or_else(|| EncoderError::MissingParam(name.clone()))?;
            let w = params.value(dense.weight).shape();
            let b = params.value(dense.bias).shape();
            if w != (inputs, outputs) || b != (1, outputs) {
                return Err(EncoderError::InvalidConfig(format!(
                    "parameter `{name}` has shape {w:?}/{b:?}, expected ({inputs}, {outputs})"
                )));
            }
            Ok(dense)
        };
        let layers = (0..config.num_layers)
            .map(|k| {
                let input = if k == 0 { config.input_dim } else { h };
                Ok(GinLayer {
                    hidden: find(gin_name(k, "hidden"), input, h)?,
                    output: find(gin_name(k, "output"), h, h)?,
                })
            })
            .collect::<Result<Vec<_>, EncoderError>>()?;
        let head = |name: &str| -> Result<ProjectionHead, EncoderError> {
            Ok(ProjectionHead {
                layers: [
                    find(head_name(name, 0), d, d)?,
                    find(head_name(name, 1), d, d)?,
                    find(head_name(name, 2), d, d)?,
                ],
            })
        };
        let discriminator = DiscriminatorParams {
            local: head("local")?,
            global: head("global")?,
        };
        Ok(EncoderModel {
            config,
            params,
            gin: GinParams { layers },
            discriminator,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim()
    }
}

/// A disjoint union of graphs laid out as consecutive node blocks.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub features: Matrix,
    /// Aggregation sources for every node (batch-level indices).
    pub neighbors: Vec<Vec<usize>>,
    pub offsets: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&GraphTensor], config: &EncoderConfig) -> Result<Self, EncoderError> {
        let total: usize = graphs.iter().map(|g| g.node_count()).sum();
        let mut features = Matrix::zeros(total, config.input_dim);
        let mut neighbors = vec![Vec::new(); total];
        let mut offsets = Vec::with_capacity(graphs.len());
        let mut sizes = Vec::with_capacity(graphs.len());
        let mut offset = 0;
        for g in graphs {
            if g.features.cols() != config.input_dim {
                return Err(EncoderError::Dimension {
                    expected: config.input_dim,
                    got: g.features.cols(),
                });
            }
            for r in 0..g.node_count() {
                features.row_mut(offset + r).copy_from_slice(g.features.row(r));
            }
            for &(a, b) in &g.edges {
                neighbors[offset + b].push(offset + a);
                if !config.directed_aggregation {
                    neighbors[offset + a].push(offset + b);
                }
            }
            offsets.push(offset);
            sizes.push(g.node_count());
            offset += g.node_count();
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(GraphBatch {
            features,
            neighbors,
            offsets,
            sizes,
        })
    }

    pub fn graph_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    /// Graph index of every node.
    pub fn node_graphs(&self) -> Vec<usize> {
        self.sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
            .collect()
    }

    /// `(1 + ε)·h_v + Σ_{u ∈ N(v)} h_u` for every node.
    fn combine(&self, h: &Matrix, epsilon: f64) -> Matrix {
        let mut out = h.clone();
        out.scale(1.0 + epsilon);
        for (v, sources) in self.neighbors.iter().enumerate() {
            for &u in sources {
                let src = h.row(u).to_vec();
                for (o, s) in out.row_mut(v).iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
        out
    }

    fn combine_backward(&self, dz: &Matrix, epsilon: f64) -> Matrix {
        let mut dh = dz.clone();
        dh.scale(1.0 + epsilon);
        for (v, sources) in self.neighbors.iter().enumerate() {
            for &u in sources {
                let g = dz.row(v).to_vec();
                for (o, s) in dh.row_mut(u).iter_mut().zip(g) {
                    *o += s;
                }
            }
        }
        dh
    }

    /// `B×d` per-graph sums of patch rows.
    fn readout(&self, patch: &Matrix) -> Matrix {
        let mut globals = Matrix::zeros(self.graph_count(), patch.cols());
        for (g, (&start, &n)) in self.offsets.iter().zip(&self.sizes).enumerate() {
            let pooled = ops::sum_pool(&patch.row_block(start, n));
            globals.row_mut(g).copy_from_slice(pooled.as_slice());
        }
        globals
    }

    fn readout_backward(&self, dglobals: &Matrix) -> Matrix {
        let mut dpatch = Matrix::zeros(self.node_count(), dglobals.cols());
        for (g, (&start, &n)) in self.offsets.iter().zip(&self.sizes).enumerate() {
            let spread = ops::sum_pool_backward(n, &dglobals.row_block(g, 1));
            for r in 0..n {
                dpatch.row_mut(start + r).copy_from_slice(spread.row(r));
            }
        }
        dpatch
    }
}

#[derive(Debug, Clone)]
struct GinLayerCache {
    combined: Matrix,
    pre: Matrix,
    act: Matrix,
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    layers: Vec<GinLayerCache>,
}

/// Batch-level patch rows (`N×d`) and graph vectors (`B×d`).
#[derive(Debug, Clone)]
pub struct BatchEncoding {
    pub patch: Matrix,
    pub globals: Matrix,
}

fn gin_forward_cached(model: &EncoderModel, batch: &GraphBatch) -> (BatchEncoding, EncodeCache) {
    let tape = &model.params;
    let mut h = batch.features.clone();
    let mut outputs = Vec::with_capacity(model.gin.layers.len());
    let mut caches = Vec::with_capacity(model.gin.layers.len());
    for layer in &model.gin.layers {
        let combined = batch.combine(&h, model.config.epsilon);
        let pre = layer.hidden.forward(tape, &combined);
        let act = ops::relu(&pre);
        h = layer.output.forward(tape, &act);
        outputs.push(h.clone());
        caches.push(GinLayerCache { combined, pre, act });
    }
    let blocks: Vec<&Matrix> = outputs.iter().collect();
    let patch = ops::concat_cols(&blocks);
    let globals = batch.readout(&patch);
    (BatchEncoding { patch, globals }, EncodeCache { layers: caches })
}

/// Encodes every graph of the batch.
pub fn encode_batch(model: &EncoderModel, batch: &GraphBatch) -> BatchEncoding {
    gin_forward_cached(model, batch).0
}

/// Encodes and keeps activations for [`encode_backward`].
pub fn encode_batch_cached(model: &EncoderModel, batch: &GraphBatch) -> (BatchEncoding, EncodeCache) {
    gin_forward_cached(model, batch)
}

/// Backpropagates gradients w.r.t. patch rows and graph vectors into ψ.
pub fn encode_backward(
    gin: &GinParams,
    config: &EncoderConfig,
    tape: &mut ParamTape,
    batch: &GraphBatch,
    cache: &EncodeCache,
    dpatch: &Matrix,
    dglobals: &Matrix,
) {
    let mut dpatch_total = batch.readout_backward(dglobals);
    dpatch_total.add_assign(dpatch);
    let widths = vec![config.hidden_dim; gin.layers.len()];
    let per_layer = ops::concat_cols_backward(&widths, &dpatch_total);
    let mut carry: Option<Matrix> = None;
    for (k, layer) in gin.layers.iter().enumerate().rev() {
        let c = &cache.layers[k];
        let mut dout = per_layer[k].clone();
        if let Some(carried) = carry.take() {
            dout.add_assign(&carried);
        }
        let dact = layer.output.backward(tape, &c.act, &dout);
        let dpre = ops::relu_backward(&c.pre, &dact);
        let dcombined = layer.hidden.backward(tape, &c.combined, &dpre);
        if k > 0 {
            carry = Some(batch.combine_backward(&dcombined, config.epsilon));
        }
    }
}

/// Encodes one graph.
pub fn gin_forward(model: &EncoderModel, graph: &GraphTensor) -> Result<GraphEncoding, EncoderError> {
    let batch = GraphBatch::new(&[graph], &model.config)?;
    let enc = encode_batch(model, &batch);
    Ok(GraphEncoding {
        global: enc.globals.row(0).to_vec(),
        patch: enc.patch,
    })
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    inputs: [Matrix; 3],
    pre: [Matrix; 2],
}

impl ProjectionHead {
    pub fn forward(&self, tape: &ParamTape, x: &Matrix) -> Matrix {
        self.forward_cached(tape, x).0
    }

    pub fn forward_cached(&self, tape: &ParamTape, x: &Matrix) -> (Matrix, HeadCache) {
        let pre0 = self.layers[0].forward(tape, x);
        let a0 = ops::relu(&pre0);
        let pre1 = self.layers[1].forward(tape, &a0);
        let a1 = ops::relu(&pre1);
        let out = self.layers[2].forward(tape, &a1);
        (
            out,
            HeadCache {
                inputs: [x.clone(), a0, a1],
                pre: [pre0, pre1],
            },
        )
    }

    pub fn backward(&self, tape: &mut ParamTape, cache: &HeadCache, dout: &Matrix) -> Matrix {
        let da1 = self.layers[2].backward(tape, &cache.inputs[2], dout);
        let dpre1 = ops::relu_backward(&cache.pre[1], &da1);
        let da0 = self.layers[1].backward(tape, &cache.inputs[1], &dpre1);
        let dpre0 = ops::relu_backward(&cache.pre[0], &da0);
        self.layers[0].backward(tape, &cache.inputs[0], &dpre0)
    }
}

/// Discriminator score `⟨local(patch_row), global(graph)⟩`.
pub fn discriminate(model: &EncoderModel, patch_row: &[f64], global: &[f64]) -> Result<f64, EncoderError> {
    let d = model.embed_dim();
    for len in [patch_row.len(), global.len()] {
        if len != d {
            return Err(EncoderError::Dimension { expected: d, got: len });
        }
    }
    let tape = &model.params;
    let l = model.discriminator.local.forward(tape, &Matrix::row_vector(patch_row));
    let g = model.discriminator.global.forward(tape, &Matrix::row_vector(global));
    Ok(ops::pairwise_dot(&l, &g).get(0, 0))
}
