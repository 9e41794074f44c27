//! Contrastive training of the encoder by local/global mutual-information
//! maximisation.
//!
//! Within a batch of `B` graphs every (node, own graph) pair is a positive and
//! every (node, other graph) pair is a negative. With `T` the discriminator
//! score and `n_g` the size of a node's source graph, the minimised loss is
//!
//! ```text
//! 1/B Σ_g 1/n_g Σ_{i∈g} [ softplus(-T(h_i, H_g)) + 1/(B-1) Σ_{g'≠g} softplus(T(h_i, H_g')) ]
//! ```
//!
//! i.e. the negated Jensen-Shannon lower bound, with positives and negatives
//! both weighted by the source graph's size.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisError, EmbeddingStore};
use crate::encoder::{self, EncoderConfig, EncoderError, EncoderModel, GraphBatch, GraphTensor};
use crate::graphs::LearningGraph;
use crate::numerics::ops::{self, softplus};
use crate::numerics::{AdamConfig, AdamState, Matrix, NumericsError, ParamTape};
use crate::traces::FeatureScaler;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 graphs to form negatives, got {0}")]
    CorpusTooSmall(usize),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (graphs {graphs:?})")]
    NonFiniteLoss { epoch: usize, batch: usize, graphs: Vec<usize> },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 0.01,
            epochs: 20,
            seed: 0,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::InvalidConfig(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.epochs < 1 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TrainError::InvalidConfig(format!("learning rate {} is invalid", self.learning_rate)));
        }
        self.encoder.validate()?;
        Ok(())
    }
}

/// Positive and negative (node, graph) pairs of one batch.
#[derive(Debug, Clone)]
pub struct BatchPairs {
    sizes: Vec<usize>,
    node_graph: Vec<usize>,
}

impl BatchPairs {
    pub fn new(sizes: &[usize]) -> Self {
        let node_graph = sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
            .collect();
        BatchPairs {
            sizes: sizes.to_vec(),
            node_graph,
        }
    }

    pub fn graph_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Source graph of every batch node.
    pub fn node_graph(&self) -> &[usize] {
        &self.node_graph
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.node_graph.iter().copied().enumerate()
    }

    pub fn negatives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let b = self.graph_count();
        self.node_graph
            .iter()
            .enumerate()
            .flat_map(move |(i, &own)| (0..b).filter(move |&g| g != own).map(move |g| (i, g)))
    }

    pub fn positive_count(&self) -> usize {
        self.node_graph.len()
    }

    pub fn negative_count(&self) -> usize {
        self.node_graph.len() * self.graph_count().saturating_sub(1)
    }
}

/// Loss and `dLoss/dScores` from an `N×B` score matrix.
pub fn jsd_objective(scores: &Matrix, pairs: &BatchPairs) -> (f64, Matrix) {
    let b = pairs.graph_count() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(scores.rows(), scores.cols());
    for (i, g) in pairs.positives() {
        let w = 1.0 / (b * pairs.sizes[g] as f64);
        let t = scores.get(i, g);
        loss += w * softplus(-t);
        grad.set(i, g, -w * ops::sigmoid(-t));
    }
    for (i, g) in pairs.negatives() {
        let w = 1.0 / (b * pairs.sizes[pairs.node_graph[i]] as f64 * (b - 1.0));
        let t = scores.get(i, g);
        loss += w * softplus(t);
        grad.set(i, g, w * ops::sigmoid(t));
    }
    (loss, grad)
}

fn check_batch(graphs: &[&GraphTensor]) -> Result<(), TrainError> {
    if graphs.len() < 2 {
        return Err(TrainError::CorpusTooSmall(graphs.len()));
    }
    Ok(())
}

fn batch_scores(model: &EncoderModel, batch: &GraphBatch) -> Matrix {
    let enc = encoder::encode_batch(model, batch);
    let local = model.discriminator.local.forward(&model.params, &enc.patch);
    let global = model.discriminator.global.forward(&model.params, &enc.globals);
    ops::pairwise_dot(&local, &global)
}

/// Contrastive loss of one batch (forward only).
pub fn infograph_loss(model: &EncoderModel, graphs: &[&GraphTensor]) -> Result<f64, TrainError> {
    check_batch(graphs)?;
    let batch = GraphBatch::new(graphs, &model.config)?;
    let scores = batch_scores(model, &batch);
    Ok(jsd_objective(&scores, &BatchPairs::new(&batch.sizes)).0)
}

/// Contrastive loss of one batch; adds its gradient to the model's accumulators.
pub fn infograph_loss_and_grad(model: &mut EncoderModel, graphs: &[&GraphTensor]) -> Result<f64, TrainError> {
    check_batch(graphs)?;
    let batch = GraphBatch::new(graphs, &model.config)?;
    let (enc, cache) = encoder::encode_batch_cached(model, &batch);
    let heads = model.discriminator.clone();
    let (local, local_cache) = heads.local.forward_cached(&model.params, &enc.patch);
    let (global, global_cache) = heads.global.forward_cached(&model.params, &enc.globals);
    let scores = ops::pairwise_dot(&local, &global);
    let (loss, dscores) = jsd_objective(&scores, &BatchPairs::new(&batch.sizes));
    let (dlocal, dglobal) = ops::pairwise_dot_backward(&local, &global, &dscores);
    let params = &mut model.params;
    let dpatch = heads.local.backward(params, &local_cache, &dlocal);
    let dglobals = heads.global.backward(params, &global_cache, &dglobal);
    encoder::encode_backward(&model.gin, &model.config, params, &batch, &cache, &dpatch, &dglobals);
    Ok(loss)
}

/// Mean discriminator score over positive and over negative pairs, with the
/// corpus split into consecutive batches of `batch_size`.
pub fn pair_score_means(model: &EncoderModel, graphs: &[GraphTensor], batch_size: usize) -> Result<(f64, f64), TrainError> {
    let order: Vec<usize> = (0..graphs.len()).collect();
    let (mut pos, mut npos, mut neg, mut nneg) = (0.0, 0usize, 0.0, 0usize);
    for idx in make_batches(&order, batch_size)? {
        let members: Vec<&GraphTensor> = idx.iter().map(|&i| &graphs[i]).collect();
        let batch = GraphBatch::new(&members, &model.config)?;
        let scores = batch_scores(model, &batch);
        let pairs = BatchPairs::new(&batch.sizes);
        for (i, g) in pairs.positives() {
            pos += scores.get(i, g);
            npos += 1;
        }
        for (i, g) in pairs.negatives() {
            neg += scores.get(i, g);
            nneg += 1;
        }
    }
    Ok((pos / npos as f64, neg / nneg as f64))
}

/// Splits `order` into batches; a trailing batch with fewer than 2 graphs is
/// merged into the previous one. Indices inside a batch are sorted.
fn make_batches(order: &[usize], batch_size: usize) -> Result<Vec<Vec<usize>>, TrainError> {
    if order.len() < 2 {
        return Err(TrainError::CorpusTooSmall(order.len()));
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(2)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("previous batch").extend(tail);
    }
    for b in &mut batches {
        b.sort_unstable();
    }
    Ok(batches)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: EncoderModel,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a freshly initialised model on `graphs`.
pub fn train(graphs: &[GraphTensor], config: &TrainConfig) -> Result<TrainReport, TrainError> {
    config.validate()?;
    let model = encoder::init_params(config.encoder, config.seed)?;
    train_from(model, graphs, config)
}

/// Continues training `model`; shuffling is seeded from `config.seed`.
pub fn train_from(mut model: EncoderModel, graphs: &[GraphTensor], config: &TrainConfig) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if graphs.len() < 2 {
        return Err(TrainError::CorpusTooSmall(graphs.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(config.learning_rate));
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let batches = make_batches(&order, config.batch_size)?;
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let members: Vec<&GraphTensor> = idx.iter().map(|&i| &graphs[i]).collect();
            model.params.zero_grads();
            let loss = infograph_loss_and_grad(&mut model, &members)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    graphs: idx.clone(),
                });
            }
            adam.step(&mut model.params)?;
            total += loss;
        }
        let mean = total / batches.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainReport { model, epoch_losses })
}

/// Tensors for every learning graph, in order.
pub fn tensors(graphs: &[LearningGraph]) -> Result<Vec<GraphTensor>, TrainError> {
    Ok(graphs
        .iter()
        .map(GraphTensor::from_learning_graph)
        .collect::<Result<_, _>>()?)
}

const EMBED_CHUNK: usize = 256;

/// Graph-level embeddings of every student, in corpus order.
pub fn embed_all(model: &EncoderModel, topic: &str, graphs: &[LearningGraph]) -> Result<EmbeddingStore, TrainError> {
    let d = model.embed_dim();
    let tensors = tensors(graphs)?;
    let mut data = Vec::with_capacity(graphs.len() * d);
    for chunk in tensors.chunks(EMBED_CHUNK) {
        let members: Vec<&GraphTensor> = chunk.iter().collect();
        let batch = GraphBatch::new(&members, &model.config)?;
        data.extend_from_slice(encoder::encode_batch(model, &batch).globals.as_slice());
    }
    let ids = graphs.iter().map(|g| g.student.clone()).collect();
    Ok(EmbeddingStore::new(topic, ids, Matrix::from_vec(graphs.len(), d, data))?)
}

pub const CHECKPOINT_FORMAT: &str = "learngraph-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMatrix {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Serialized model: config, feature scaler and every parameter matrix in
/// registration order. JSON floats round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub topic: String,
    pub train: TrainConfig,
    pub scaler: FeatureScaler,
    pub params: Vec<NamedMatrix>,
}

impl Checkpoint {
    pub fn new(model: &EncoderModel, train: TrainConfig, scaler: FeatureScaler, topic: impl Into<String>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            topic: topic.into(),
            train: TrainConfig {
                encoder: model.config,
                ..train
            },
            scaler,
            params: model
                .params
                .named_values()
                .map(|(name, m)| NamedMatrix {
                    name: name.to_owned(),
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<EncoderModel, TrainError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported format {} v{}",
                self.format, self.version
            )));
        }
        let mut tape = ParamTape::new();
        for p in &self.params {
            if p.data.len() != p.rows * p.cols {
                return Err(TrainError::Checkpoint(format!("parameter `{}` has wrong length", p.name)));
            }
            tape.register(p.name.clone(), Matrix::from_vec(p.rows, p.cols, p.data.clone()));
        }
        Ok(EncoderModel::from_params(self.train.encoder, tape)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Record of one training run, written next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub topic: String,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub directed_aggregation: bool,
    pub coverage_threshold: f64,
    pub graphs: usize,
    pub epoch_losses: Vec<f64>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn new(config: &TrainConfig, topic: &str, threshold: f64, graphs: usize, report: &TrainReport, started: Instant) -> Self {
        RunManifest {
            topic: topic.to_owned(),
            seed: config.seed,
            learning_rate: config.learning_rate,
            batch_size: config.batch_size,
            epochs: config.epochs,
            num_layers: config.encoder.num_layers,
            hidden_dim: config.encoder.hidden_dim,
            input_dim: config.encoder.input_dim,
            embed_dim: config.encoder.embed_dim(),
            directed_aggregation: config.encoder.directed_aggregation,
            coverage_threshold: threshold,
            graphs,
            epoch_losses: report.epoch_losses.clone(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        }
    }
}
