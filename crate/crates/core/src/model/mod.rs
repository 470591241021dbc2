//! Two-layer graph attention network with jumping-knowledge concatenation
//! and a softmax classification head.
//!
//! Layer `l` projects node features with `W_l`, scores every edge `j → i`
//! as `LeakyReLU(v_lᵀ [W_l f_i ‖ W_l f_j])`, normalizes scores over each
//! destination's incoming edges and aggregates `Σ α_ij W_l f_j` through an
//! ELU. The head sees `[H¹ ‖ H²]` per node.

mod store;
mod train;

pub use store::{load_model, load_model_str, save_model, model_to_json, FORMAT_VERSION};
pub use train::{
    class_weights, stratified_split, train, train_datasets, train_graphs, Adam, TrainConfig, TrainingGraph,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, Tape, Tensor, Var};
use crate::features::LocalityConfig;
use crate::graph::EdgeIndex;
use crate::netlist::GateKind;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training data holds a single class")]
    SingleClassDataset,
    #[error("training diverged: {0}")]
    DivergedTraining(AdError),
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u64 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Dims {
    /// Width of the jumping-knowledge embedding.
    pub fn jk(&self) -> usize {
        self.hidden1 + self.hidden2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: Dims,
    pub w1: Tensor,
    /// `2·hidden1 × 1`: destination half first, then source half.
    pub v1: Tensor,
    pub w2: Tensor,
    pub v2: Tensor,
    pub w_head: Tensor,
    pub b_head: Tensor,
    pub leaky_slope: f64,
    pub seed: u64,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect())
}

impl ModelParams {
    pub fn init(dims: Dims, leaky_slope: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams {
            dims,
            w1: glorot(&mut rng, dims.input, dims.hidden1),
            v1: glorot(&mut rng, 2 * dims.hidden1, 1),
            w2: glorot(&mut rng, dims.hidden1, dims.hidden2),
            v2: glorot(&mut rng, 2 * dims.hidden2, 1),
            w_head: glorot(&mut rng, dims.jk(), 2),
            b_head: Tensor::zeros(1, 2),
            leaky_slope,
            seed,
        }
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        [&self.w1, &self.v1, &self.w2, &self.v2, &self.w_head, &self.b_head]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [&mut self.w1, &mut self.v1, &mut self.w2, &mut self.v2, &mut self.w_head, &mut self.b_head]
    }

    /// Checks every shape against `dims` and that all values are finite.
    pub fn validate(&self) -> Result<(), ModelError> {
        let d = self.dims;
        let expected = [
            (d.input, d.hidden1),
            (2 * d.hidden1, 1),
            (d.hidden1, d.hidden2),
            (2 * d.hidden2, 1),
            (d.jk(), 2),
            (1, 2),
        ];
        for (t, e) in self.tensors().iter().zip(expected) {
            if t.shape() != e {
                return Err(ModelError::ShapeMismatch(format!("parameter {:?} expected {:?}", t.shape(), e)));
            }
            if !t.is_finite() {
                return Err(ModelError::Autodiff(AdError::NonFiniteValue { op: "parameters" }));
            }
        }
        Ok(())
    }

    pub fn on_tape(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let [w1, v1, w2, v2, w_head, b_head] = self.tensors().map(|t| tape.leaf(t.clone(), trainable));
        ParamVars { w1, v1, w2, v2, w_head, b_head }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub w1: Var,
    pub v1: Var,
    pub w2: Var,
    pub v2: Var,
    pub w_head: Var,
    pub b_head: Var,
}

impl ParamVars {
    pub fn all(&self) -> [Var; 6] {
        [self.w1, self.v1, self.w2, self.v2, self.w_head, self.b_head]
    }
}

/// Edge endpoints split into parallel arrays, `src[k] → dst[k]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeLists {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub nodes: usize,
}

impl From<&EdgeIndex> for EdgeLists {
    fn from(e: &EdgeIndex) -> Self {
        EdgeLists { src: e.sources(), dst: e.targets(), nodes: e.node_count() }
    }
}

impl EdgeLists {
    /// Keeps only edges whose destination satisfies `keep`.
    pub fn filter_dst(&self, keep: impl Fn(usize) -> bool) -> EdgeLists {
        let (src, dst) = self.src.iter().zip(&self.dst).filter(|(_, &d)| keep(d)).map(|(&s, &d)| (s, d)).unzip();
        EdgeLists { src, dst, nodes: self.nodes }
    }

    /// `copies` disjoint copies; copy `c` shifts sources by `c · src_stride`
    /// and destinations by `c · nodes`.
    pub fn tiled(&self, copies: usize, src_stride: usize) -> EdgeLists {
        EdgeLists {
            src: tile_indices(&self.src, copies, src_stride),
            dst: tile_indices(&self.dst, copies, self.nodes),
            nodes: self.nodes * copies,
        }
    }
}

/// Per-edge attention over already projected features `z = H·W`.
pub fn attention_on_tape(tape: &mut Tape, z: Var, v: Var, edges: &EdgeLists, slope: f64) -> Result<Var, AdError> {
    attention_between_on_tape(tape, z, z, v, edges, slope)
}

/// Attention where edge sources index the rows of `z_src` and destinations
/// the rows of `z_dst`.
pub fn attention_between_on_tape(
    tape: &mut Tape,
    z_src: Var,
    z_dst: Var,
    v: Var,
    edges: &EdgeLists,
    slope: f64,
) -> Result<Var, AdError> {
    let d = tape.value(z_src).cols();
    if tape.value(v).shape() != (2 * d, 1) {
        return Err(AdError::ShapeMismatch { op: "attention", lhs: tape.value(v).shape(), rhs: (2 * d, 1) });
    }
    let dst_half: Vec<usize> = (0..d).collect();
    let src_half: Vec<usize> = (d..2 * d).collect();
    let v_dst = tape.gather_rows(v, &dst_half)?;
    let v_src = tape.gather_rows(v, &src_half)?;
    let s_dst = tape.matmul(z_dst, v_dst)?;
    let s_src = tape.matmul(z_src, v_src)?;
    let e_dst = tape.gather_rows(s_dst, &edges.dst)?;
    let e_src = tape.gather_rows(s_src, &edges.src)?;
    let e = tape.add(e_dst, e_src)?;
    let e = tape.leaky_relu(e, slope)?;
    tape.segment_softmax(e, &edges.dst, edges.nodes)
}

/// Attention-weighted aggregation of projected features followed by ELU.
/// Rows of nodes that are no edge's destination come out as zero.
pub fn aggregate_on_tape(tape: &mut Tape, z: Var, v: Var, edges: &EdgeLists, slope: f64) -> Result<Var, AdError> {
    aggregate_between_on_tape(tape, z, z, v, edges, slope)
}

/// Aggregation from the rows of `z_src` into `edges.nodes` output rows,
/// the destinations' own projections being the rows of `z_dst`.
pub fn aggregate_between_on_tape(
    tape: &mut Tape,
    z_src: Var,
    z_dst: Var,
    v: Var,
    edges: &EdgeLists,
    slope: f64,
) -> Result<Var, AdError> {
    let alpha = attention_between_on_tape(tape, z_src, z_dst, v, edges, slope)?;
    let msgs = tape.gather_rows(z_src, &edges.src)?;
    let weighted = tape.mul(msgs, alpha)?;
    let agg = tape.scatter_add_rows(weighted, &edges.dst, edges.nodes)?;
    tape.elu(agg)
}

pub fn gat_layer_on_tape(
    tape: &mut Tape,
    h: Var,
    w: Var,
    v: Var,
    edges: &EdgeLists,
    slope: f64,
) -> Result<Var, AdError> {
    let z = tape.matmul(h, w)?;
    aggregate_on_tape(tape, z, v, edges, slope)
}

/// Output of a forward pass recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub h1: Var,
    pub h2: Var,
    pub logits: Var,
}

pub fn forward_on_tape(
    tape: &mut Tape,
    x: Var,
    p: &ParamVars,
    edges: &EdgeLists,
    slope: f64,
) -> Result<ForwardVars, AdError> {
    let h1 = gat_layer_on_tape(tape, x, p.w1, p.v1, edges, slope)?;
    let h2 = gat_layer_on_tape(tape, h1, p.w2, p.v2, edges, slope)?;
    let logits = head_on_tape(tape, h1, h2, p)?;
    Ok(ForwardVars { h1, h2, logits })
}

fn tile_indices(v: &[usize], copies: usize, stride: usize) -> Vec<usize> {
    (0..copies).flat_map(|c| v.iter().map(move |&i| i + c * stride)).collect()
}

/// Which rows each layer has to produce for the outputs of `targets`.
/// Layer 1 runs into the targets' neighbors, layer 2 into the targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetPlan {
    /// Nodes whose layer-1 output is needed, ascending.
    pub near: Vec<usize>,
    /// Sources index graph nodes, destinations index `near`.
    pub layer1: EdgeLists,
    /// Sources index `near`, destinations index `targets`.
    pub layer2: EdgeLists,
    /// Position of each target within `near`.
    pub target_pos: Vec<usize>,
}

impl TargetPlan {
    pub fn new(edges: &EdgeLists, targets: &[usize]) -> TargetPlan {
        let n = edges.nodes;
        let mut target_of: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, &t) in targets.iter().enumerate() {
            target_of[t].push(i);
        }
        let mut is_near = vec![false; n];
        for &t in targets {
            is_near[t] = true;
        }
        for (&s, &d) in edges.src.iter().zip(&edges.dst) {
            if !target_of[d].is_empty() {
                is_near[s] = true;
            }
        }
        let near: Vec<usize> = (0..n).filter(|&i| is_near[i]).collect();
        let mut pos = vec![usize::MAX; n];
        for (i, &v) in near.iter().enumerate() {
            pos[v] = i;
        }
        let mut layer1 = EdgeLists { src: Vec::new(), dst: Vec::new(), nodes: near.len() };
        let mut layer2 = EdgeLists { src: Vec::new(), dst: Vec::new(), nodes: targets.len() };
        for (&s, &d) in edges.src.iter().zip(&edges.dst) {
            if is_near[d] {
                layer1.src.push(s);
                layer1.dst.push(pos[d]);
            }
            for &i in &target_of[d] {
                layer2.src.push(pos[s]);
                layer2.dst.push(i);
            }
        }
        let target_pos = targets.iter().map(|&t| pos[t]).collect();
        TargetPlan { near, layer1, layer2, target_pos }
    }

    /// The plan for `copies` disjoint copies of an `n`-node graph.
    pub fn tiled(&self, copies: usize, n: usize) -> TargetPlan {
        let m = self.near.len();
        TargetPlan {
            near: tile_indices(&self.near, copies, n),
            layer1: self.layer1.tiled(copies, n),
            layer2: self.layer2.tiled(copies, m),
            target_pos: tile_indices(&self.target_pos, copies, m),
        }
    }

    /// Logits of the targets given the layer-1 projections of every node.
    pub fn logits_on_tape(&self, tape: &mut Tape, z1: Var, p: &ParamVars, slope: f64) -> Result<Var, AdError> {
        let z1_near = tape.gather_rows(z1, &self.near)?;
        let h1 = aggregate_between_on_tape(tape, z1, z1_near, p.v1, &self.layer1, slope)?;
        let z2 = tape.matmul(h1, p.w2)?;
        let z2_targets = tape.gather_rows(z2, &self.target_pos)?;
        let h2 = aggregate_between_on_tape(tape, z2, z2_targets, p.v2, &self.layer2, slope)?;
        let h1t = tape.gather_rows(h1, &self.target_pos)?;
        head_on_tape(tape, h1t, h2, p)
    }
}

/// Logits of `targets` only, in the given order.
pub fn forward_targets_on_tape(
    tape: &mut Tape,
    x: Var,
    p: &ParamVars,
    edges: &EdgeLists,
    targets: &[usize],
    slope: f64,
) -> Result<Var, AdError> {
    let z1 = tape.matmul(x, p.w1)?;
    TargetPlan::new(edges, targets).logits_on_tape(tape, z1, p, slope)
}

/// `[h1 ‖ h2]·W_head + b`.
pub fn head_on_tape(tape: &mut Tape, h1: Var, h2: Var, p: &ParamVars) -> Result<Var, AdError> {
    let jk = tape.concat_cols(h1, h2)?;
    let lin = tape.matmul(jk, p.w_head)?;
    tape.add(lin, p.b_head)
}

/// Class weights for the weighted cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub non_trojan: f64,
    pub trojan: f64,
}

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights { non_trojan: 1.0, trojan: 1.0 };

    pub fn of(&self, class: u8) -> f64 {
        if class == 1 {
            self.trojan
        } else {
            self.non_trojan
        }
    }
}

/// `−Σ w_y log p_y / Σ w_y` over the rows of `logits`.
pub fn weighted_loss_on_tape(
    tape: &mut Tape,
    logits: Var,
    targets: &[u8],
    weights: ClassWeights,
) -> Result<Var, AdError> {
    let cols: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    let w: Vec<f64> = targets.iter().map(|&t| weights.of(t)).collect();
    let total: f64 = w.iter().sum();
    let logp = tape.log_softmax_rows(logits)?;
    let picked = tape.pick_cols(logp, &cols)?;
    let wv = tape.constant(Tensor::column(w));
    let weighted = tape.mul(picked, wv)?;
    let s = tape.sum(weighted)?;
    tape.scale(s, -1.0 / total)
}

fn check_inputs(x: &Tensor, edges: &EdgeIndex, dims: &Dims) -> Result<(), ModelError> {
    if x.cols() != dims.input {
        return Err(ModelError::ShapeMismatch(format!(
            "features have {} columns, model expects {}",
            x.cols(),
            dims.input
        )));
    }
    if x.rows() != edges.node_count() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} feature rows for a {}-node graph",
            x.rows(),
            edges.node_count()
        )));
    }
    Ok(())
}

pub fn attention_coefficients(
    h: &Tensor,
    edges: &EdgeIndex,
    w: &Tensor,
    v: &Tensor,
    slope: f64,
) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    let (hv, wv, vv) = (tape.constant(h.clone()), tape.constant(w.clone()), tape.constant(v.clone()));
    let z = tape.matmul(hv, wv)?;
    let a = attention_on_tape(&mut tape, z, vv, &EdgeLists::from(edges), slope)?;
    Ok(tape.value(a).data().to_vec())
}

pub fn gat_layer(h: &Tensor, edges: &EdgeIndex, w: &Tensor, v: &Tensor, slope: f64) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let (hv, wv, vv) = (tape.constant(h.clone()), tape.constant(w.clone()), tape.constant(v.clone()));
    let out = gat_layer_on_tape(&mut tape, hv, wv, vv, &EdgeLists::from(edges), slope)?;
    Ok(tape.value(out).clone())
}

/// Per-node class probabilities, `n × 2`.
pub fn model_forward(x: &Tensor, edges: &EdgeIndex, params: &ModelParams) -> Result<Tensor, ModelError> {
    check_inputs(x, edges, &params.dims)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let p = params.on_tape(&mut tape, false);
    let out = forward_on_tape(&mut tape, xv, &p, &EdgeLists::from(edges), params.leaky_slope)?;
    let probs = tape.softmax_rows(out.logits)?;
    Ok(tape.value(probs).clone())
}

/// Weighted loss of the full-graph forward over the listed nodes.
pub fn weighted_loss(
    x: &Tensor,
    edges: &EdgeIndex,
    params: &ModelParams,
    nodes: &[usize],
    targets: &[u8],
    weights: ClassWeights,
) -> Result<f64, ModelError> {
    check_inputs(x, edges, &params.dims)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let p = params.on_tape(&mut tape, false);
    let logits = forward_targets_on_tape(&mut tape, xv, &p, &EdgeLists::from(edges), nodes, params.leaky_slope)?;
    let loss = weighted_loss_on_tape(&mut tape, logits, targets, weights)?;
    Ok(tape.value(loss).item())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    /// Per epoch: (mean training batch loss, validation loss).
    pub history: Vec<(f64, f64)>,
    pub class_weights: ClassWeights,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub locality: LocalityConfig,
    pub vocab: Vec<String>,
    pub meta: TrainingMeta,
}

impl TrainedModel {
    pub fn vocabulary() -> Vec<String> {
        GateKind::VOCAB.iter().map(|k| k.name().to_string()).collect()
    }

    pub fn probabilities(&self, x: &Tensor, edges: &EdgeIndex) -> Result<Tensor, ModelError> {
        model_forward(x, edges, &self.params)
    }
}

/// Argmax split of the nodes. Ties go to the Trojan class.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub non_trojan: Vec<usize>,
    pub trojan: Vec<usize>,
    pub probs: Tensor,
}

impl Prediction {
    pub fn from_probs(probs: Tensor) -> Self {
        let (mut non_trojan, mut trojan) = (Vec::new(), Vec::new());
        for i in 0..probs.rows() {
            if probs.get(i, 1) >= probs.get(i, 0) {
                trojan.push(i);
            } else {
                non_trojan.push(i);
            }
        }
        Prediction { non_trojan, trojan, probs }
    }

    pub fn class_of(&self, node: usize) -> u8 {
        (self.probs.get(node, 1) >= self.probs.get(node, 0)) as u8
    }
}

pub fn predict(model: &TrainedModel, x: &Tensor, edges: &EdgeIndex) -> Result<Prediction, ModelError> {
    Ok(Prediction::from_probs(model.probabilities(x, edges)?))
}
