//! Integrated-Gradients attribution over a node's structural features,
//! top-n tables, rank-averaged class profiles and rule rendering.
//!
//! The attribution target is the predicted class probability at one node
//! while every other node keeps its actual features. Only the two-hop
//! neighborhood of the node can influence that output, so each evaluation
//! runs on that neighborhood, with layer-1 projections of the untouched
//! nodes computed once per graph.

use std::fmt::Write as _;

use serde::Serialize;

use crate::autodiff::{matmul, AdError, Tape, Tensor};
use crate::features::{feature_names, slot_meaning, LocalityConfig, Slot};
use crate::graph::{receptive_subgraph_with, EdgeIndex};
use crate::model::{EdgeLists, ModelError, ParamVars, Prediction, TargetPlan, TrainedModel};
use crate::netlist::GateKind;

pub const DEFAULT_IG_STEPS: usize = 128;
pub const DEFAULT_TOP_N: usize = 10;
pub const DEFAULT_RULE_CLAUSES: usize = 5;
/// Feature name shown for padding entries of a top-n row.
pub const PAD_NAME: &str = "—";

#[derive(Debug, thiserror::Error)]
pub enum ExplainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("integration needs at least one step")]
    InvalidSteps,
    #[error("attribution table has no rows")]
    EmptyTable,
}

impl From<AdError> for ExplainError {
    fn from(e: AdError) -> Self {
        ExplainError::Model(ModelError::Autodiff(e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttributionVector {
    pub node: usize,
    pub class: u8,
    pub steps: usize,
    pub scores: Vec<f64>,
    /// `F(x)` and `F(x′)` at the target.
    pub value: f64,
    pub baseline_value: f64,
    pub completeness_gap: f64,
}

/// Midpoint-rule Integrated Gradients for any differentiable scalar
/// function. `f` returns the value and the gradient at a point.
pub fn integrated_gradients_with<F>(
    mut f: F,
    x: &[f64],
    baseline: &[f64],
    steps: usize,
) -> Result<(Vec<f64>, f64, f64), ExplainError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), ExplainError>,
{
    if steps == 0 {
        return Err(ExplainError::InvalidSteps);
    }
    if x.len() != baseline.len() {
        return Err(ExplainError::ShapeMismatch(format!("input {} vs baseline {}", x.len(), baseline.len())));
    }
    let delta: Vec<f64> = x.iter().zip(baseline).map(|(a, b)| a - b).collect();
    let mut avg = vec![0.0; x.len()];
    let mut point = vec![0.0; x.len()];
    for k in 1..=steps {
        let t = (k as f64 - 0.5) / steps as f64;
        for i in 0..x.len() {
            point[i] = baseline[i] + t * delta[i];
        }
        let (_, g) = f(&point)?;
        for (a, gi) in avg.iter_mut().zip(g) {
            *a += gi;
        }
    }
    let scores: Vec<f64> = avg.iter().zip(&delta).map(|(a, d)| d * (a / steps as f64)).collect();
    let (fx, _) = f(x)?;
    let (fb, _) = f(baseline)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(AdError::NonFiniteValue { op: "integrated_gradients" }.into());
    }
    Ok((scores, fx, fb))
}

/// Two-hop view of one target node.
struct LocalView {
    target: usize,
    /// Layer-1 projections of the neighborhood with the target row zeroed.
    z1_rest: Tensor,
    plan: TargetPlan,
}

/// Attribution engine for one model on one graph.
pub struct Explainer<'a> {
    model: &'a TrainedModel,
    x: &'a Tensor,
    edges: &'a EdgeIndex,
    neighbors: Vec<Vec<usize>>,
    z1: Tensor,
}

impl<'a> Explainer<'a> {
    pub fn new(model: &'a TrainedModel, x: &'a Tensor, edges: &'a EdgeIndex) -> Result<Self, ExplainError> {
        let dims = model.params.dims;
        if x.cols() != dims.input || x.rows() != edges.node_count() {
            return Err(ExplainError::ShapeMismatch(format!(
                "{}x{} features for a {}-node graph and a {}-wide model",
                x.rows(),
                x.cols(),
                edges.node_count(),
                dims.input
            )));
        }
        Ok(Explainer { model, x, edges, neighbors: edges.neighbors(), z1: matmul(x, &model.params.w1) })
    }

    pub fn feature_len(&self) -> usize {
        self.x.cols()
    }

    fn view(&self, node: usize) -> LocalView {
        let sub = receptive_subgraph_with(&self.neighbors, self.edges, &[node], 2);
        let target = sub.seed_positions[0];
        let mut z1_rest = self.z1.select_rows(&sub.nodes);
        z1_rest.row_mut(target).iter_mut().for_each(|v| *v = 0.0);
        let plan = TargetPlan::new(&EdgeLists::from(&sub.edges), &[target]);
        LocalView { target, z1_rest, plan }
    }

    /// Class probability at the view's target for each row of `points`,
    /// used in turn as the target's feature row, with the gradients. Each
    /// point runs on its own disjoint copy of the view within one tape.
    fn evaluate_batch(&self, view: &LocalView, points: &Tensor, class: u8) -> Result<(Vec<f64>, Tensor), ExplainError> {
        let p = &self.model.params;
        let slope = p.leaky_slope;
        let n = view.z1_rest.rows();
        let copies = points.rows();
        let targets: Vec<usize> = (0..copies).map(|c| c * n + view.target).collect();
        let mut rest = Tensor::zeros(n * copies, view.z1_rest.cols());
        for c in 0..copies {
            rest.data_mut()[c * view.z1_rest.data().len()..(c + 1) * view.z1_rest.data().len()]
                .copy_from_slice(view.z1_rest.data());
        }
        let plan = view.plan.tiled(copies, n);

        let mut tape = Tape::new();
        let xt = tape.param(points.clone());
        let vars = ParamVars {
            w1: tape.constant(p.w1.clone()),
            v1: tape.constant(p.v1.clone()),
            w2: tape.constant(p.w2.clone()),
            v2: tape.constant(p.v2.clone()),
            w_head: tape.constant(p.w_head.clone()),
            b_head: tape.constant(p.b_head.clone()),
        };
        let rest = tape.constant(rest);
        let zt = tape.matmul(xt, vars.w1)?;
        let zt = tape.scatter_add_rows(zt, &targets, n * copies)?;
        let z1 = tape.add(rest, zt)?;
        let logits = plan.logits_on_tape(&mut tape, z1, &vars, slope)?;
        let probs = tape.softmax_rows(logits)?;
        let picked = tape.pick_cols(probs, &vec![class as usize; copies])?;
        let out = tape.sum(picked)?;
        tape.backward(out)?;
        let values = tape.value(picked).data().to_vec();
        let grads = tape.grad(xt).cloned().unwrap_or_else(|| Tensor::zeros(copies, points.cols()));
        Ok((values, grads))
    }

    /// Class probability at `node` with its feature row replaced by `row`.
    pub fn probability_with_row(&self, node: usize, row: &[f64], class: u8) -> Result<f64, ExplainError> {
        let point = Tensor::from_vec(1, row.len(), row.to_vec());
        Ok(self.evaluate_batch(&self.view(node), &point, class)?.0[0])
    }

    pub fn attribute(
        &self,
        node: usize,
        baseline: &[f64],
        steps: usize,
        class: u8,
    ) -> Result<AttributionVector, ExplainError> {
        const CHUNK: usize = 32;
        if class > 1 {
            return Err(ExplainError::ShapeMismatch(format!("class {class} is not 0 or 1")));
        }
        if steps == 0 {
            return Err(ExplainError::InvalidSteps);
        }
        let x = self.x.row(node);
        if x.len() != baseline.len() {
            return Err(ExplainError::ShapeMismatch(format!("input {} vs baseline {}", x.len(), baseline.len())));
        }
        let view = self.view(node);
        let f = x.len();
        let delta: Vec<f64> = x.iter().zip(baseline).map(|(a, b)| a - b).collect();
        // the endpoints ride along as the last two points
        let total_points = steps + 2;
        let point = |k: usize| -> Vec<f64> {
            match k {
                k if k < steps => {
                    let t = (k as f64 + 0.5) / steps as f64;
                    baseline.iter().zip(&delta).map(|(b, d)| b + t * d).collect()
                }
                k if k == steps => x.to_vec(),
                _ => baseline.to_vec(),
            }
        };
        let mut avg = vec![0.0; f];
        let (mut value, mut baseline_value) = (0.0, 0.0);
        let mut k0 = 0;
        while k0 < total_points {
            let k1 = (k0 + CHUNK).min(total_points);
            let mut data = Vec::with_capacity((k1 - k0) * f);
            for k in k0..k1 {
                data.extend(point(k));
            }
            let (values, grads) = self.evaluate_batch(&view, &Tensor::from_vec(k1 - k0, f, data), class)?;
            for k in k0..k1 {
                match k {
                    k if k < steps => {
                        for (a, g) in avg.iter_mut().zip(grads.row(k - k0)) {
                            *a += g;
                        }
                    }
                    k if k == steps => value = values[k - k0],
                    _ => baseline_value = values[k - k0],
                }
            }
            k0 = k1;
        }
        let scores: Vec<f64> = avg.iter().zip(&delta).map(|(a, d)| d * (a / steps as f64)).collect();
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(AdError::NonFiniteValue { op: "integrated_gradients" }.into());
        }
        let total: f64 = scores.iter().sum();
        Ok(AttributionVector {
            node,
            class,
            steps,
            completeness_gap: (total - (value - baseline_value)).abs(),
            scores,
            value,
            baseline_value,
        })
    }
}

pub fn integrated_gradients(
    model: &TrainedModel,
    x: &Tensor,
    edges: &EdgeIndex,
    node: usize,
    baseline: &[f64],
    steps: usize,
    target_class: u8,
) -> Result<AttributionVector, ExplainError> {
    Explainer::new(model, x, edges)?.attribute(node, baseline, steps, target_class)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopNRow {
    pub node: usize,
    pub scores: Vec<f64>,
    /// Feature index per entry; `None` marks padding.
    pub features: Vec<Option<usize>>,
}

impl TopNRow {
    pub fn sum(&self) -> f64 {
        self.scores.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopNTable {
    pub n: usize,
    pub rows: Vec<TopNRow>,
}

impl TopNTable {
    pub fn new(n: usize) -> Self {
        TopNTable { n, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn names(&self, names: &[String]) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| r.features.iter().map(|f| f.map_or_else(|| PAD_NAME.to_string(), |i| names[i].clone())).collect())
            .collect()
    }
}

/// The `n` highest signed scores, descending, ties to the lower feature
/// index. Rows shorter than `n` are padded with zero scores.
pub fn top_n(node: usize, scores: &[f64], n: usize) -> TopNRow {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(n);
    let mut row = TopNRow {
        node,
        scores: idx.iter().map(|&i| scores[i]).collect(),
        features: idx.into_iter().map(Some).collect(),
    };
    row.scores.resize(n, 0.0);
    row.features.resize(n, None);
    row
}

/// Attributions of every node toward its predicted class, split into the
/// non-Trojan and Trojan top-n tables (rows in `P_0` / `P_1` order).
#[derive(Clone, Debug)]
pub struct ExplainedSets {
    pub f0: TopNTable,
    pub f1: TopNTable,
    /// Indexed by node.
    pub attributions: Vec<AttributionVector>,
}

pub fn explain_sets(
    explainer: &Explainer,
    prediction: &Prediction,
    n: usize,
    steps: usize,
) -> Result<ExplainedSets, ExplainError> {
    let baseline = vec![0.0; explainer.feature_len()];
    let nodes = prediction.probs.rows();
    let mut attributions = Vec::with_capacity(nodes);
    for node in 0..nodes {
        attributions.push(explainer.attribute(node, &baseline, steps, prediction.class_of(node))?);
    }
    let table = |set: &[usize]| TopNTable {
        n,
        rows: set.iter().map(|&i| top_n(i, &attributions[i].scores, n)).collect(),
    };
    Ok(ExplainedSets { f0: table(&prediction.non_trojan), f1: table(&prediction.trojan), attributions })
}

/// Per-rank mean over the table's rows.
pub fn rank_average(table: &TopNTable) -> Result<Vec<f64>, ExplainError> {
    if table.is_empty() {
        return Err(ExplainError::EmptyTable);
    }
    let mut avg = vec![0.0; table.n];
    for row in &table.rows {
        for (a, s) in avg.iter_mut().zip(&row.scores) {
            *a += s;
        }
    }
    let count = table.len() as f64;
    avg.iter_mut().for_each(|a| *a /= count);
    Ok(avg)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuleConfig {
    pub max_clauses: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig { max_clauses: DEFAULT_RULE_CLAUSES }
    }
}

/// Feature slots ordered by how often they appear with a positive score in
/// the Trojan table, most frequent first, ties to the lower slot.
pub fn frequent_slots(f1: &TopNTable) -> Vec<(usize, usize)> {
    let mut counts: std::collections::BTreeMap<usize, usize> = Default::default();
    for row in &f1.rows {
        for (f, s) in row.features.iter().zip(&row.scores) {
            if let Some(f) = f {
                if *s > 0.0 {
                    *counts.entry(*f).or_default() += 1;
                }
            }
        }
    }
    let mut v: Vec<(usize, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

fn kind_clause(rank: usize, kind: GateKind) -> String {
    match kind {
        GateKind::None => format!("G{rank} is NONE gate"),
        GateKind::Dff => format!("G{rank} = D Flip Flop"),
        k => format!("G{rank} = {}", k.name()),
    }
}

/// Renders the locality pattern most often behind Trojan predictions.
/// `None` when no feature carries positive evidence.
pub fn generate_rules(
    f1: &TopNTable,
    locality: &LocalityConfig,
    cfg: &RuleConfig,
) -> Result<Option<String>, ExplainError> {
    if f1.is_empty() {
        return Err(ExplainError::EmptyTable);
    }
    let chosen: Vec<usize> = frequent_slots(f1).into_iter().take(cfg.max_clauses).map(|(s, _)| s).collect();
    if chosen.is_empty() {
        return Ok(None);
    }
    let (mut kinds, mut links) = (Vec::new(), Vec::new());
    for slot in chosen {
        match slot_meaning(locality, slot) {
            Some(Slot::Kind(rank, kind)) => kinds.push(kind_clause(rank, kind)),
            Some(Slot::Adjacent(i, j)) => links.push(format!("G{i}, G{j} are connected")),
            None => {
                return Err(ExplainError::ShapeMismatch(format!("slot {slot} outside a {}-gate locality", locality.gates)))
            }
        }
    }
    let mut body = kinds.join(", ");
    for link in links {
        if !body.is_empty() {
            body.push_str(" && ");
        }
        body.push_str(&link);
    }
    let mut s = String::new();
    let _ = write!(
        s,
        "If [{body}] is the locality of a net then there is a higher possibility that it can be a Trojan."
    );
    Ok(Some(s))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NamedScore {
    pub name: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeAttributionReport {
    pub wire: String,
    pub predicted_class: u8,
    pub top_n: Vec<NamedScore>,
    pub completeness_gap: f64,
}

pub fn attribution_report(
    attributions: &[AttributionVector],
    wire_names: &[String],
    locality: &LocalityConfig,
    n: usize,
) -> Vec<NodeAttributionReport> {
    let names = feature_names(locality);
    attributions
        .iter()
        .map(|a| {
            let row = top_n(a.node, &a.scores, n);
            NodeAttributionReport {
                wire: wire_names[a.node].clone(),
                predicted_class: a.class,
                top_n: row
                    .features
                    .iter()
                    .zip(&row.scores)
                    .map(|(f, &score)| NamedScore {
                        name: f.map_or_else(|| PAD_NAME.to_string(), |i| names[i].clone()),
                        score,
                    })
                    .collect(),
                completeness_gap: a.completeness_gap,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{model_forward, predict, ClassWeights, Dims, ModelParams, TrainingMeta};

    pub(crate) fn toy_model(input: usize, seed: u64) -> TrainedModel {
        let locality = LocalityConfig::new(1);
        TrainedModel {
            params: ModelParams::init(Dims { input, hidden1: 4, hidden2: 3 }, 0.2, seed),
            locality,
            vocab: TrainedModel::vocabulary(),
            meta: TrainingMeta {
                epochs_run: 0,
                best_epoch: 0,
                best_validation_loss: 0.0,
                history: vec![],
                class_weights: ClassWeights::UNIFORM,
            },
        }
    }

    fn toy_graph() -> (Tensor, EdgeIndex) {
        let x = Tensor::from_rows(&[
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 0.0, 0.0, 1.0],
        ]);
        (x, EdgeIndex::from_pairs(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2)]))
    }

    #[test]
    fn linear_surrogate_is_exact_for_one_step() {
        let w = [0.5, -2.0, 3.0];
        let x = [1.0, 2.0, -1.5];
        for steps in [1, 7] {
            let (ig, fx, fb) = integrated_gradients_with(
                |p| Ok((p.iter().zip(&w).map(|(a, b)| a * b).sum(), w.to_vec())),
                &x,
                &[0.0; 3],
                steps,
            )
            .unwrap();
            for i in 0..3 {
                assert!((ig[i] - w[i] * x[i]).abs() < 1e-12);
            }
            assert_eq!(fb, 0.0);
            assert!((ig.iter().sum::<f64>() - fx).abs() < 1e-12);
        }
        assert!(matches!(
            integrated_gradients_with(|_| Ok((0.0, vec![])), &x, &[0.0; 3], 0),
            Err(ExplainError::InvalidSteps)
        ));
    }

    #[test]
    fn input_equal_to_baseline_has_zero_attribution() {
        let (x, e) = toy_graph();
        let m = toy_model(4, 3);
        let a = integrated_gradients(&m, &x, &e, 2, x.row(2), 16, 1).unwrap();
        assert!(a.scores.iter().all(|&s| s == 0.0));
        assert_eq!(a.completeness_gap, 0.0);
    }

    #[test]
    fn local_view_matches_full_graph_forward() {
        let (x, e) = toy_graph();
        let m = toy_model(4, 8);
        let ex = Explainer::new(&m, &x, &e).unwrap();
        let full = model_forward(&x, &e, &m.params).unwrap();
        for node in 0..5 {
            for class in 0..2u8 {
                let p = ex.probability_with_row(node, x.row(node), class).unwrap();
                assert!((p - full.get(node, class as usize)).abs() < 1e-12);
            }
            let mut zeroed = x.clone();
            zeroed.row_mut(node).iter_mut().for_each(|v| *v = 0.0);
            let base = model_forward(&zeroed, &e, &m.params).unwrap();
            let p = ex.probability_with_row(node, &[0.0; 4], 1).unwrap();
            assert!((p - base.get(node, 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn completeness_against_full_graph() {
        let (x, e) = toy_graph();
        let m = toy_model(4, 5);
        let full = model_forward(&x, &e, &m.params).unwrap();
        for node in 0..5 {
            let a = integrated_gradients(&m, &x, &e, node, &[0.0; 4], 512, 1).unwrap();
            let mut zeroed = x.clone();
            zeroed.row_mut(node).iter_mut().for_each(|v| *v = 0.0);
            let base = model_forward(&zeroed, &e, &m.params).unwrap().get(node, 1);
            let diff = full.get(node, 1) - base;
            let gap = (a.scores.iter().sum::<f64>() - diff).abs();
            assert!(gap < 1e-3 * (diff.abs() + 1e-6), "node {node}: gap {gap} vs {diff}");
        }
    }

    #[test]
    fn sensitivity_null_for_matching_features() {
        let (x, e) = toy_graph();
        let m = toy_model(4, 2);
        let mut baseline = vec![0.0; 4];
        baseline[1] = x.get(3, 1);
        let a = integrated_gradients(&m, &x, &e, 3, &baseline, 32, 0).unwrap();
        assert_eq!(a.scores[1], 0.0);
        assert_eq!(a.scores[0], 0.0);
    }

    #[test]
    fn top_n_orders_and_pads() {
        let row = top_n(4, &[0.1, 0.5, 0.5, -1.0], 6);
        assert_eq!(row.features, vec![Some(1), Some(2), Some(0), Some(3), None, None]);
        assert_eq!(row.scores, vec![0.5, 0.5, 0.1, -1.0, 0.0, 0.0]);
        let table = TopNTable { n: 6, rows: vec![row] };
        let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        assert_eq!(table.names(&names)[0], ["b", "c", "a", "d", PAD_NAME, PAD_NAME]);
    }

    #[test]
    fn rank_average_examples() {
        let t = TopNTable {
            n: 2,
            rows: vec![
                TopNRow { node: 0, scores: vec![1.0, 0.0], features: vec![Some(0), Some(1)] },
                TopNRow { node: 1, scores: vec![3.0, 2.0], features: vec![Some(1), Some(0)] },
            ],
        };
        assert_eq!(rank_average(&t).unwrap(), vec![2.0, 1.0]);
        let single = TopNTable { n: 2, rows: vec![t.rows[1].clone()] };
        assert_eq!(rank_average(&single).unwrap(), vec![3.0, 2.0]);
        assert!(matches!(rank_average(&TopNTable::new(2)), Err(ExplainError::EmptyTable)));
    }

    #[test]
    fn explain_sets_follow_prediction() {
        let (x, e) = toy_graph();
        let m = toy_model(4, 6);
        let pred = predict(&m, &x, &e).unwrap();
        let ex = Explainer::new(&m, &x, &e).unwrap();
        let sets = explain_sets(&ex, &pred, 3, 16).unwrap();
        assert_eq!(sets.f0.len(), pred.non_trojan.len());
        assert_eq!(sets.f1.len(), pred.trojan.len());
        for (row, &node) in sets.f1.rows.iter().zip(&pred.trojan) {
            let direct = integrated_gradients(&m, &x, &e, node, &[0.0; 4], 16, 1).unwrap();
            assert_eq!(row, &top_n(node, &direct.scores, 3));
            assert!(row.scores.windows(2).all(|w| w[0] >= w[1]));
        }
        for (row, &node) in sets.f0.rows.iter().zip(&pred.non_trojan) {
            let direct = integrated_gradients(&m, &x, &e, node, &[0.0; 4], 16, 0).unwrap();
            assert_eq!(row, &top_n(node, &direct.scores, 3));
        }
    }

    fn table_of(rows: &[&[(usize, f64)]]) -> TopNTable {
        let n = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        TopNTable {
            n,
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, r)| TopNRow {
                    node: i,
                    scores: r.iter().map(|e| e.1).collect(),
                    features: r.iter().map(|e| Some(e.0)).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn rule_names_dominant_slots() {
        let l = LocalityConfig::new(7);
        let g2_and = l.kind_slot(1, GateKind::And);
        let g3_and = l.kind_slot(2, GateKind::And);
        let adj23 = l.adjacency_slot(1, 2);
        let f1 = table_of(&[
            &[(g2_and, 0.4), (g3_and, 0.3), (adj23, 0.2)],
            &[(g3_and, 0.5), (g2_and, 0.2), (adj23, 0.1)],
        ]);
        let rule = generate_rules(&f1, &l, &RuleConfig::default()).unwrap().unwrap();
        assert_eq!(
            rule,
            "If [G2 = AND, G3 = AND && G2, G3 are connected] is the locality of a net then there is a higher \
             possibility that it can be a Trojan."
        );
    }

    #[test]
    fn rule_single_clause_and_tie_break() {
        let l = LocalityConfig::new(7);
        let g7_none = l.kind_slot(6, GateKind::None);
        let f1 = table_of(&[&[(g7_none, 0.4), (0, 0.0), (1, -0.1)]]);
        let rule = generate_rules(&f1, &l, &RuleConfig::default()).unwrap().unwrap();
        assert!(rule.starts_with("If [G7 is NONE gate] is"));

        let g5_dff = l.kind_slot(4, GateKind::Dff);
        let f1 = table_of(&[&[(g5_dff, 0.9), (g7_none, 0.1)]]);
        let rule = generate_rules(&f1, &l, &RuleConfig { max_clauses: 2 }).unwrap().unwrap();
        assert!(rule.starts_with("If [G5 = D Flip Flop, G7 is NONE gate] is"));
        assert_eq!(frequent_slots(&f1), vec![(g5_dff, 1), (g7_none, 1)]);

        let negative = table_of(&[&[(3, -0.2)]]);
        assert_eq!(generate_rules(&negative, &l, &RuleConfig::default()).unwrap(), None);
        assert!(matches!(
            generate_rules(&TopNTable::new(3), &l, &RuleConfig::default()),
            Err(ExplainError::EmptyTable)
        ));
    }
}
