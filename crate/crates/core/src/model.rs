//! Embedding table plus a stack of attentive graph convolution layers.
//!
//! Layer `l` maps `R^{l−1}` to `R^l`. For every entity `e` the layer scores
//! each member `j` of `N(e) ∪ {e}` with a two-layer MLP on `v_e ‖ v_j`,
//! softmax-normalizes the scores within the neighborhood, and then
//!
//! ```text
//! v^l_e = σ( Σ_j a_ej · v^{l−1}_j · W^l )
//! ```
//!
//! The first MLP layer is evaluated as `v_e·W_top + v_j·W_bottom`, where
//! `W_top` and `W_bottom` are the two row halves of the `2d × d_att` weight.
//! This equals `(v_e ‖ v_j)·W` but costs `O(entities)` matrix products
//! instead of `O(edges)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compute::{
    dropout_mask, xavier_uniform, Activation, ComputeError, Matrix, PairMlp, ParamId, ParamStore, Tape, Var,
};
use crate::graph::{BipartiteGraph, Segments};
use crate::{Error, Result};

pub const EMBEDDING: &str = "embedding";

/// How neighbor vectors are weighted inside a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    /// Learned softmax weights from the attention MLP.
    Attentive,
    /// Uniform `1 / (|N(e)| + 1)` weights; the attention MLP is unused.
    Mean,
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attentive" => Ok(Aggregator::Attentive),
            "mean" => Ok(Aggregator::Mean),
            _ => Err(Error::Invalid(format!("unknown aggregator '{s}'"))),
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Attentive => "attentive",
            Aggregator::Mean => "mean",
        })
    }
}

/// Which parameters L2 regularization applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L2Scope {
    All,
    Embeddings,
}

impl FromStr for L2Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(L2Scope::All),
            "embeddings" => Ok(L2Scope::Embeddings),
            _ => Err(Error::Invalid(format!("unknown l2 scope '{s}'"))),
        }
    }
}

impl fmt::Display for L2Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            L2Scope::All => "all",
            L2Scope::Embeddings => "embeddings",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Width of each representation set; its length is the task count `K`.
    pub layer_dims: Vec<usize>,
    /// Hidden width of the attention MLP; `None` uses the layer's input width.
    pub attention_dim: Option<usize>,
    pub activation: Activation,
    /// Applied to the attention MLP's scalar output before the softmax.
    pub logit_activation: Activation,
    pub aggregator: Aggregator,
    pub dropout: f64,
    pub l2_scope: L2Scope,
}

impl ModelConfig {
    /// `K` sets whose widths add up to `total_dim`, as evenly as possible
    /// with the remainder going to the lower layers.
    pub fn with_total_dim(num_tasks: usize, total_dim: usize) -> Result<Self> {
        if num_tasks == 0 || total_dim < num_tasks {
            return Err(Error::Invalid(format!(
                "cannot split {total_dim} dimensions over {num_tasks} tasks"
            )));
        }
        let base = total_dim / num_tasks;
        let extra = total_dim % num_tasks;
        let layer_dims = (0..num_tasks).map(|l| base + usize::from(l < extra)).collect();
        Ok(Self {
            layer_dims,
            attention_dim: None,
            activation: Activation::default(),
            logit_activation: Activation::default(),
            aggregator: Aggregator::Attentive,
            dropout: 0.0,
            l2_scope: L2Scope::All,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn total_eval_dim(&self) -> usize {
        self.layer_dims.iter().sum()
    }

    pub fn attention_width(&self, layer: usize) -> usize {
        self.attention_dim.unwrap_or(self.layer_dims[layer - 1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() {
            return Err(Error::Invalid("at least one task is required".into()));
        }
        if self.layer_dims.contains(&0) || self.attention_dim == Some(0) {
            return Err(Error::Invalid("all dimensions must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerIds {
    weight: ParamId,
    att1_weight: ParamId,
    att1_bias: ParamId,
    att2_weight: ParamId,
    att2_bias: ParamId,
}

/// Current values of one convolution layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerValues {
    pub weight: Matrix,
    pub att1_weight: Matrix,
    pub att1_bias: Matrix,
    pub att2_weight: Matrix,
    pub att2_bias: Matrix,
}

/// Parameter layout of a model over a fixed set of users and items.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    num_users: usize,
    num_items: usize,
    embedding: ParamId,
    layers: Vec<LayerIds>,
}

fn layer_name(l: usize, part: &str) -> String {
    format!("layer{l}.{part}")
}

impl Model {
    /// Allocates and initializes parameters. Weights use Xavier uniform
    /// init, biases start at zero.
    pub fn init(config: ModelConfig, num_users: usize, num_items: usize, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let entities = num_users + num_items;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let decay_all = config.l2_scope == L2Scope::All;
        let dims = &config.layer_dims;
        let embedding = store.add(EMBEDDING, xavier_uniform(entities, dims[0], &mut rng)?, true)?;
        let mut layers = Vec::new();
        for l in 1..config.num_tasks() {
            let (d_in, d_out, d_att) = (dims[l - 1], dims[l], config.attention_width(l));
            layers.push(LayerIds {
                weight: store.add(
                    layer_name(l, "weight"),
                    xavier_uniform(d_in, d_out, &mut rng)?,
                    decay_all,
                )?,
                att1_weight: store.add(
                    layer_name(l, "att1.weight"),
                    xavier_uniform(2 * d_in, d_att, &mut rng)?,
                    decay_all,
                )?,
                att1_bias: store.add(layer_name(l, "att1.bias"), Matrix::zeros((1, d_att)), decay_all)?,
                att2_weight: store.add(
                    layer_name(l, "att2.weight"),
                    xavier_uniform(d_att, 1, &mut rng)?,
                    decay_all,
                )?,
                att2_bias: store.add(layer_name(l, "att2.bias"), Matrix::zeros((1, 1)), decay_all)?,
            });
        }
        let model = Self {
            config,
            num_users,
            num_items,
            embedding,
            layers,
        };
        Ok((model, store))
    }

    /// Re-attaches a configuration to an existing store, checking that every
    /// parameter is present with the expected shape.
    pub fn bind(config: ModelConfig, num_users: usize, num_items: usize, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let lookup = |name: String, rows: usize, cols: usize| -> Result<ParamId> {
            let id = store
                .id(&name)
                .ok_or_else(|| Error::Invalid(format!("missing parameter '{name}'")))?;
            let shape = store.value(id).dim();
            if shape != (rows, cols) {
                return Err(Error::Invalid(format!(
                    "parameter '{name}' has shape {shape:?}, expected ({rows}, {cols})"
                )));
            }
            Ok(id)
        };
        let dims = &config.layer_dims;
        let embedding = lookup(EMBEDDING.into(), num_users + num_items, dims[0])?;
        let mut layers = Vec::new();
        for l in 1..config.num_tasks() {
            let (d_in, d_out, d_att) = (dims[l - 1], dims[l], config.attention_width(l));
            layers.push(LayerIds {
                weight: lookup(layer_name(l, "weight"), d_in, d_out)?,
                att1_weight: lookup(layer_name(l, "att1.weight"), 2 * d_in, d_att)?,
                att1_bias: lookup(layer_name(l, "att1.bias"), 1, d_att)?,
                att2_weight: lookup(layer_name(l, "att2.weight"), d_att, 1)?,
                att2_bias: lookup(layer_name(l, "att2.bias"), 1, 1)?,
            });
        }
        let expected = 1 + 5 * layers.len();
        if store.len() != expected {
            return Err(Error::Invalid(format!(
                "store has {} parameters, model expects {expected}",
                store.len()
            )));
        }
        Ok(Self {
            config,
            num_users,
            num_items,
            embedding,
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn embedding_id(&self) -> ParamId {
        self.embedding
    }

    /// Ids of every convolution and attention parameter.
    pub fn layer_param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight, l.att1_weight, l.att1_bias, l.att2_weight, l.att2_bias])
            .collect()
    }

    /// Ids of the attention MLP parameters only.
    pub fn attention_param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.att1_weight, l.att1_bias, l.att2_weight, l.att2_bias])
            .collect()
    }

    /// Parameter values of convolution layer `layer` (1-based, like `R^l`).
    pub fn layer_values(&self, store: &ParamStore, layer: usize) -> Result<LayerValues> {
        let ids = self
            .layers
            .get(layer.wrapping_sub(1))
            .ok_or_else(|| Error::Invalid(format!("no convolution layer {layer}")))?;
        Ok(LayerValues {
            weight: store.value(ids.weight).clone(),
            att1_weight: store.value(ids.att1_weight).clone(),
            att1_bias: store.value(ids.att1_bias).clone(),
            att2_weight: store.value(ids.att2_weight).clone(),
            att2_bias: store.value(ids.att2_bias).clone(),
        })
    }

    /// Records `R⁰ … R^{K−1}` on `tape`. In train mode every set gets its
    /// own dropout mask drawn from `rng`; eval mode never touches `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        segments: &Arc<Segments>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        let entities = self.num_users + self.num_items;
        if segments.num_segments() != entities {
            return Err(Error::Invalid(format!(
                "graph has {} entities, model has {entities}",
                segments.num_segments()
            )));
        }
        let dropout = match mode {
            Mode::Train if self.config.dropout > 0.0 => Some(self.config.dropout),
            _ => None,
        };
        let mut apply_dropout = |tape: &mut Tape, v: Var| -> Result<Var, ComputeError> {
            match dropout {
                Some(p) => {
                    let (r, c) = tape.value(v).dim();
                    let mask = dropout_mask(r, c, p, rng)?;
                    tape.mul_const(v, mask)
                }
                None => Ok(v),
            }
        };

        let table = tape.param(store, self.embedding)?;
        let mut reps = vec![apply_dropout(tape, table)?];
        for ids in &self.layers {
            let prev = *reps.last().expect("R0 present");
            let weights = match self.config.aggregator {
                Aggregator::Attentive => {
                    let att = AttentionVars {
                        att1_weight: tape.param(store, ids.att1_weight)?,
                        att1_bias: tape.param(store, ids.att1_bias)?,
                        att2_weight: tape.param(store, ids.att2_weight)?,
                        att2_bias: tape.param(store, ids.att2_bias)?,
                    };
                    attention_on_tape(
                        tape,
                        prev,
                        &att,
                        segments,
                        self.config.activation,
                        self.config.logit_activation,
                    )?
                }
                Aggregator::Mean => tape.constant(mean_weights(segments))?,
            };
            let weight = tape.param(store, ids.weight)?;
            let out = conv_on_tape(tape, prev, weights, weight, segments, self.config.activation)?;
            reps.push(apply_dropout(tape, out)?);
        }
        Ok(reps)
    }

    /// Eval-mode representation sets as plain matrices.
    pub fn representations(&self, store: &ParamStore, graph: &BipartiteGraph) -> Result<RepresentationSets> {
        let segments = graph.conv_segments();
        let mut tape = Tape::new();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let reps = self.forward(&mut tape, store, &segments, Mode::Eval, &mut rng)?;
        Ok(RepresentationSets {
            num_users: self.num_users,
            num_items: self.num_items,
            layers: reps.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }
}

/// Tape handles of one layer's attention MLP.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub att1_weight: Var,
    pub att1_bias: Var,
    pub att2_weight: Var,
    pub att2_bias: Var,
}

/// Records the softmax-normalized attention weights (a `p × 1` column
/// aligned with `segments`) for input representations `x`.
pub fn attention_on_tape(
    tape: &mut Tape,
    x: Var,
    att: &AttentionVars,
    segments: &Arc<Segments>,
    activation: Activation,
    logit_activation: Activation,
) -> Result<Var, ComputeError> {
    let d = tape.value(x).ncols();
    let rows = tape.value(att.att1_weight).nrows();
    if rows != 2 * d {
        return Err(ComputeError::ShapeMismatch {
            op: "attention",
            left: vec![rows, tape.value(att.att1_weight).ncols()],
            right: vec![2 * d],
        });
    }
    let top = tape.slice_rows(att.att1_weight, 0, d)?;
    let bottom = tape.slice_rows(att.att1_weight, d, 2 * d)?;
    let self_part = tape.matmul(x, top)?;
    let nbr_part = tape.matmul(x, bottom)?;
    let mlp = PairMlp {
        bias1: att.att1_bias,
        weight2: att.att2_weight,
        bias2: att.att2_bias,
        hidden: activation,
        output: logit_activation,
    };
    let logits = tape.pair_mlp(self_part, nbr_part, &mlp, segments.clone())?;
    tape.segment_softmax(logits, segments.clone())
}

/// Records `σ((Σ_j a_ej · x_j) · W)` for every segment.
pub fn conv_on_tape(
    tape: &mut Tape,
    x: Var,
    weights: Var,
    weight: Var,
    segments: &Arc<Segments>,
    activation: Activation,
) -> Result<Var, ComputeError> {
    let mixed = tape.segment_weighted_sum(weights, x, segments.clone())?;
    let projected = tape.matmul(mixed, weight)?;
    tape.activate(projected, activation)
}

/// Uniform weights `1 / |segment|`.
pub fn mean_weights(segments: &Segments) -> Matrix {
    let mut w = Matrix::zeros((segments.len(), 1));
    for s in 0..segments.num_segments() {
        let range = segments.range(s);
        let share = 1.0 / range.len() as f64;
        for p in range {
            w[[p, 0]] = share;
        }
    }
    w
}

/// Attention weights of one layer for representations `prev`, aligned with
/// `segments` (for each entity, its members in ascending id order).
pub fn attention_weights(
    layer: &LayerValues,
    prev: &Matrix,
    segments: &Arc<Segments>,
    activation: Activation,
    logit_activation: Activation,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(prev.clone())?;
    let att = AttentionVars {
        att1_weight: tape.constant(layer.att1_weight.clone())?,
        att1_bias: tape.constant(layer.att1_bias.clone())?,
        att2_weight: tape.constant(layer.att2_weight.clone())?,
        att2_bias: tape.constant(layer.att2_bias.clone())?,
    };
    let w = attention_on_tape(&mut tape, x, &att, segments, activation, logit_activation)?;
    Ok(tape.value(w).column(0).to_vec())
}

/// One convolution with explicit per-member weights.
pub fn conv_forward(
    weight: &Matrix,
    prev: &Matrix,
    segments: &Arc<Segments>,
    member_weights: &[f64],
    activation: Activation,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let x = tape.constant(prev.clone())?;
    let w = tape.constant(
        Matrix::from_shape_vec((member_weights.len(), 1), member_weights.to_vec())
            .map_err(|_| Error::Invalid("member weights do not form a column".into()))?,
    )?;
    let proj = tape.constant(weight.clone())?;
    let out = conv_on_tape(&mut tape, x, w, proj, segments, activation)?;
    Ok(tape.value(out).clone())
}

/// `R⁰ … R^{K−1}` as plain matrices, rows indexed by entity.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSets {
    pub num_users: usize,
    pub num_items: usize,
    pub layers: Vec<Matrix>,
}

impl RepresentationSets {
    /// Row-wise concatenation `v⁰ ‖ … ‖ v^{K−1}` in layer order.
    pub fn eval_embeddings(&self) -> EvalEmbeddings {
        let views: Vec<_> = self.layers.iter().map(|m| m.view()).collect();
        let matrix = ndarray::concatenate(ndarray::Axis(1), &views).expect("layers share row count");
        // concatenate along columns yields column-major storage; rows are
        // scored, so store them contiguously.
        let matrix = matrix.as_standard_layout().into_owned();
        EvalEmbeddings {
            matrix,
            num_users: self.num_users,
            num_items: self.num_items,
        }
    }
}

/// Concatenated user and item vectors used for ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalEmbeddings {
    pub matrix: Matrix,
    pub num_users: usize,
    pub num_items: usize,
}

impl EvalEmbeddings {
    pub fn from_matrix(matrix: Matrix, num_users: usize, num_items: usize) -> Result<Self> {
        if matrix.nrows() != num_users + num_items {
            return Err(Error::Invalid(format!(
                "embedding matrix has {} rows for {} entities",
                matrix.nrows(),
                num_users + num_items
            )));
        }
        Ok(Self {
            matrix,
            num_users,
            num_items,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Inner product of user `user` and item `item`.
    pub fn score(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.num_users || item >= self.num_items {
            return Err(Error::Invalid(format!(
                "score({user}, {item}) out of range for {} users and {} items",
                self.num_users, self.num_items
            )));
        }
        Ok(self.matrix.row(user).dot(&self.matrix.row(self.num_users + item)))
    }

    pub fn users(&self) -> ndarray::ArrayView2<'_, f64> {
        self.matrix.slice(ndarray::s![..self.num_users, ..])
    }

    pub fn items(&self) -> ndarray::ArrayView2<'_, f64> {
        self.matrix.slice(ndarray::s![self.num_users.., ..])
    }
}
