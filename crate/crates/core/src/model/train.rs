use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    forward_targets_on_tape, weighted_loss, weighted_loss_on_tape, ClassWeights, Dims, EdgeLists, ModelError, ModelParams,
    TrainedModel, TrainingMeta, DEFAULT_HIDDEN, DEFAULT_LEAKY_SLOPE,
};
use crate::autodiff::{AdError, Tape, Tensor};
use crate::features::{Dataset, LocalityConfig};
use crate::graph::{receptive_subgraph_with, EdgeIndex};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub hidden1: usize,
    pub hidden2: usize,
    pub leaky_slope: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Weight classes by inverse frequency; uniform weights otherwise.
    pub balanced: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            batch_size: 64,
            max_epochs: 500,
            patience: 20,
            validation_fraction: 0.2,
            hidden1: DEFAULT_HIDDEN,
            hidden2: DEFAULT_HIDDEN,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            balanced: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation fraction {} must lie in (0, 1)", self.validation_fraction));
        }
        if self.patience == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return bad("patience, max_epochs and batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and non-negative", self.learning_rate));
        }
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return bad("hidden widths must be at least 1".into());
        }
        Ok(())
    }
}

/// `w_c = N / (2·N_c)`.
pub fn class_weights(labels: &[u8]) -> Result<ClassWeights, ModelError> {
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(ModelError::SingleClassDataset);
    }
    let n = labels.len() as f64;
    Ok(ClassWeights { non_trojan: n / (2.0 * n0 as f64), trojan: n / (2.0 * n1 as f64) })
}

/// Per-class shuffled split. Each class with at least two members puts
/// `max(1, round(fraction · n_c))` of them (never all) into validation.
pub fn stratified_split(y: &[u8], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        members.shuffle(rng);
        let take = if members.len() >= 2 && fraction > 0.0 {
            ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1)
        } else {
            0
        };
        val.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)], cfg: &TrainConfig) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_epsilon,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.iter_mut().enumerate() {
            let Some(g) = grads[k] else { continue };
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (i, (pi, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                *pi -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// One graph's contribution to training.
pub struct TrainingGraph<'a> {
    pub x: &'a Tensor,
    pub y: &'a [u8],
    pub edges: &'a EdgeIndex,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

pub fn train(dataset: &Dataset, edges: &EdgeIndex, cfg: &TrainConfig) -> Result<TrainedModel, ModelError> {
    train_datasets(&[(dataset, edges)], cfg)
}

/// Splits every dataset into training and validation nodes, in order, from
/// one seeded stream, then trains on all of them.
pub fn train_datasets(datasets: &[(&Dataset, &EdgeIndex)], cfg: &TrainConfig) -> Result<TrainedModel, ModelError> {
    let Some((first, _)) = datasets.first() else {
        return Err(ModelError::InvalidConfig("no training data".into()));
    };
    if let Some((d, _)) = datasets.iter().find(|(d, _)| d.locality != first.locality) {
        return Err(ModelError::ShapeMismatch(format!(
            "datasets built with localities {} and {}",
            first.locality.gates, d.locality.gates
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let graphs: Vec<TrainingGraph> = datasets
        .iter()
        .map(|(d, edges)| {
            let (train, validation) = stratified_split(&d.y, cfg.validation_fraction, &mut rng);
            TrainingGraph { x: &d.x, y: &d.y, edges, train, validation }
        })
        .collect();
    train_graphs(&graphs, &first.locality, cfg)
}

fn diverged(e: AdError) -> ModelError {
    match e {
        AdError::NonFiniteValue { .. } => ModelError::DivergedTraining(e),
        other => ModelError::Autodiff(other),
    }
}

/// Trains on several graphs at once. Mini-batches of each graph are
/// interleaved round-robin; every batch runs on the 2-hop receptive field
/// of its seed nodes. Returns the parameters of the best validation epoch.
pub fn train_graphs(
    graphs: &[TrainingGraph],
    locality: &LocalityConfig,
    cfg: &TrainConfig,
) -> Result<TrainedModel, ModelError> {
    cfg.validate()?;
    let input = locality.feature_len();
    for g in graphs {
        if g.x.cols() != input || g.x.rows() != g.edges.node_count() || g.y.len() != g.x.rows() {
            return Err(ModelError::ShapeMismatch(format!(
                "graph with {}x{} features, {} labels, {} nodes; expected {input} columns",
                g.x.rows(),
                g.x.cols(),
                g.y.len(),
                g.edges.node_count()
            )));
        }
    }
    let train_labels: Vec<u8> = graphs.iter().flat_map(|g| g.train.iter().map(|&i| g.y[i])).collect();
    let weights = if cfg.balanced {
        class_weights(&train_labels)?
    } else {
        class_weights(&train_labels)?;
        ClassWeights::UNIFORM
    };
    let has_validation = graphs.iter().any(|g| !g.validation.is_empty());

    let dims = Dims { input, hidden1: cfg.hidden1, hidden2: cfg.hidden2 };
    let mut params = ModelParams::init(dims, cfg.leaky_slope, cfg.seed);
    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|t| t.shape()).collect();
    let mut adam = Adam::new(&shapes, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let neighbors: Vec<Vec<Vec<usize>>> = graphs.iter().map(|g| g.edges.neighbors()).collect();

    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut per_graph: Vec<Vec<Vec<usize>>> = graphs
            .iter()
            .map(|g| {
                let mut order = g.train.clone();
                order.shuffle(&mut rng);
                order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
            })
            .collect();
        per_graph.iter_mut().for_each(|b| b.reverse());
        let mut batches = Vec::new();
        while per_graph.iter().any(|b| !b.is_empty()) {
            for (gi, b) in per_graph.iter_mut().enumerate() {
                if let Some(batch) = b.pop() {
                    batches.push((gi, batch));
                }
            }
        }

        let mut loss_sum = 0.0;
        for (gi, seeds) in &batches {
            let g = &graphs[*gi];
            let sub = receptive_subgraph_with(&neighbors[*gi], g.edges, seeds, 2);
            let mut tape = Tape::new();
            let x = tape.constant(g.x.select_rows(&sub.nodes));
            let pv = params.on_tape(&mut tape, true);
            let targets: Vec<u8> = seeds.iter().map(|&s| g.y[s]).collect();
            let loss = (|| {
                let lists = EdgeLists::from(&sub.edges);
                let logits =
                    forward_targets_on_tape(&mut tape, x, &pv, &lists, &sub.seed_positions, params.leaky_slope)?;
                let loss = weighted_loss_on_tape(&mut tape, logits, &targets, weights)?;
                tape.backward(loss)?;
                Ok(loss)
            })()
            .map_err(diverged)?;
            loss_sum += tape.value(loss).item();
            let grads: Vec<Option<&Tensor>> = pv.all().iter().map(|&v| tape.grad(v)).collect();
            adam.step(&mut params.tensors_mut(), &grads);
        }
        if params.tensors().iter().any(|t| !t.is_finite()) {
            return Err(ModelError::DivergedTraining(AdError::NonFiniteValue { op: "adam" }));
        }
        let train_loss = if batches.is_empty() { 0.0 } else { loss_sum / batches.len() as f64 };
        let monitored = if has_validation { validation_loss(graphs, &params, weights)? } else { train_loss };
        if !monitored.is_finite() {
            return Err(ModelError::DivergedTraining(AdError::NonFiniteValue { op: "validation" }));
        }
        history.push((train_loss, monitored));
        if monitored < best.0 {
            best = (monitored, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (best_validation_loss, best_epoch, params) = best;
    Ok(TrainedModel {
        params,
        locality: locality.clone(),
        vocab: TrainedModel::vocabulary(),
        meta: TrainingMeta { epochs_run: history.len(), best_epoch, best_validation_loss, history, class_weights: weights },
    })
}

/// Weighted loss pooled over every graph's validation nodes.
fn validation_loss(graphs: &[TrainingGraph], params: &ModelParams, weights: ClassWeights) -> Result<f64, ModelError> {
    let (mut num, mut den) = (0.0, 0.0);
    for g in graphs.iter().filter(|g| !g.validation.is_empty()) {
        let targets: Vec<u8> = g.validation.iter().map(|&i| g.y[i]).collect();
        let total: f64 = targets.iter().map(|&t| weights.of(t)).sum();
        let loss = weighted_loss(g.x, g.edges, params, &g.validation, &targets, weights).map_err(|e| match e {
            ModelError::Autodiff(a) => diverged(a),
            other => other,
        })?;
        num += loss * total;
        den += total;
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{model_forward, predict};

    /// Path of `n` nodes whose first third is Trojan. Each node carries a
    /// two-column feature encoding its label.
    fn separable(n: usize) -> (Dataset, EdgeIndex) {
        let y: Vec<u8> = (0..n).map(|i| (i < n / 3) as u8).collect();
        let rows: Vec<Vec<f64>> = y.iter().map(|&c| if c == 1 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect();
        let edges = EdgeIndex::from_pairs(n, (1..n).map(|i| (i - 1, i)));
        let ds = Dataset { x: Tensor::from_rows(&rows), y, locality: LocalityConfig::new(1) };
        (ds, edges)
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig { hidden1: 8, hidden2: 8, batch_size: 8, ..TrainConfig::default() }
    }

    /// The locality's feature width must match the toy features.
    fn pad(ds: Dataset) -> Dataset {
        let width = ds.locality.feature_len();
        let mut x = Tensor::zeros(ds.x.rows(), width);
        for r in 0..ds.x.rows() {
            x.row_mut(r)[..2].copy_from_slice(ds.x.row(r));
        }
        Dataset { x, ..ds }
    }

    #[test]
    fn class_weight_formula() {
        let w = class_weights(&[0, 0, 0, 1]).unwrap();
        assert_eq!(w.non_trojan, 4.0 / 6.0);
        assert_eq!(w.trojan, 2.0);
        assert!(matches!(class_weights(&[0, 0]), Err(ModelError::SingleClassDataset)));
        assert!(matches!(class_weights(&[]), Err(ModelError::SingleClassDataset)));
    }

    #[test]
    fn class_weight_examples() {
        let mut y = vec![0u8; 90];
        y.extend([1u8; 10]);
        let w = class_weights(&y).unwrap();
        assert!((w.non_trojan - 100.0 / 180.0).abs() < 1e-15);
        assert_eq!(w.trojan, 5.0);
        assert_eq!(class_weights(&[0, 1, 1, 0]).unwrap(), ClassWeights::UNIFORM);
    }

    #[test]
    fn config_bounds() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { validation_fraction: 0.0, ..TrainConfig::default() },
            TrainConfig { validation_fraction: 1.0, ..TrainConfig::default() },
            TrainConfig { patience: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(ModelError::InvalidConfig(_))));
        }
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let y: Vec<u8> = (0..50).map(|i| (i < 10) as u8).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (train, val) = stratified_split(&y, 0.2, &mut rng);
        assert_eq!(train.len() + val.len(), 50);
        assert_eq!(val.iter().filter(|&&i| y[i] == 1).count(), 2);
        assert_eq!(val.iter().filter(|&&i| y[i] == 0).count(), 8);
        assert!(train.iter().all(|i| !val.contains(i)));

        let (train, val) = stratified_split(&[0, 0, 0, 1, 1], 0.2, &mut rng);
        assert_eq!(val.len(), 2);
        assert_eq!(train.len(), 3);
        let (_, val) = stratified_split(&[0, 0, 1], 0.2, &mut rng);
        assert_eq!(val.iter().filter(|&&i| i == 2).count(), 0);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = TrainConfig { learning_rate: 0.1, ..TrainConfig::default() };
        let mut adam = Adam::new(&[(1, 2)], &cfg);
        let mut p = Tensor::from_vec(1, 2, vec![1.0, 1.0]);
        let g = Tensor::from_vec(1, 2, vec![3.0, -0.5]);
        adam.step(&mut [&mut p], &[Some(&g)]);
        assert!((p.get(0, 0) - 0.9).abs() < 1e-7);
        assert!((p.get(0, 1) - 1.1).abs() < 1e-7);
    }

    #[test]
    fn overfits_separable_graph() {
        let (ds, edges) = separable(30);
        let ds = pad(ds);
        let cfg = TrainConfig { max_epochs: 200, patience: 200, ..tiny_cfg() };
        let model = train(&ds, &edges, &cfg).unwrap();
        let pred = predict(&model, &ds.x, &edges).unwrap();
        for i in 0..30 {
            assert_eq!(pred.class_of(i), ds.y[i], "node {i}");
        }
    }

    #[test]
    fn zero_learning_rate_stops_after_patience() {
        let (ds, edges) = separable(30);
        let ds = pad(ds);
        let cfg = TrainConfig { learning_rate: 0.0, patience: 1, ..tiny_cfg() };
        let model = train(&ds, &edges, &cfg).unwrap();
        assert_eq!(model.meta.epochs_run, 2);
        assert_eq!(model.meta.best_epoch, 1);
        let init = ModelParams::init(model.params.dims, 0.2, cfg.seed);
        assert_eq!(model.params, init);
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, edges) = separable(24);
        let ds = pad(ds);
        let cfg = TrainConfig { max_epochs: 5, seed: 11, ..tiny_cfg() };
        let a = train(&ds, &edges, &cfg).unwrap();
        let b = train(&ds, &edges, &cfg).unwrap();
        assert_eq!(a.meta.history, b.meta.history);
        assert_eq!(a.params, b.params);
        let c = train(&ds, &edges, &TrainConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn single_class_training_set_is_rejected() {
        let (mut ds, edges) = separable(6);
        ds.y = vec![0; 6];
        let ds = pad(ds);
        assert!(matches!(train(&ds, &edges, &tiny_cfg()), Err(ModelError::SingleClassDataset)));
    }

    #[test]
    fn receptive_field_forward_equals_full_graph() {
        let (ds, _) = separable(40);
        let ds = pad(ds);
        let pairs: Vec<(usize, usize)> = (0..40).flat_map(|i| [(i, (i * 7 + 3) % 40), (i, (i + 1) % 40)]).collect();
        let edges = EdgeIndex::from_pairs(40, pairs);
        let params = ModelParams::init(Dims { input: ds.x.cols(), hidden1: 5, hidden2: 4 }, 0.2, 2);
        let full = model_forward(&ds.x, &edges, &params).unwrap();
        let seeds = [3, 17, 29];
        let sub = receptive_subgraph_with(&edges.neighbors(), &edges, &seeds, 2);
        let local = model_forward(&ds.x.select_rows(&sub.nodes), &sub.edges, &params).unwrap();
        for (&s, &p) in seeds.iter().zip(&sub.seed_positions) {
            for c in 0..2 {
                assert!((full.get(s, c) - local.get(p, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exploding_parameters_report_divergence() {
        let (ds, edges) = separable(12);
        let mut ds = pad(ds);
        ds.x.data_mut().iter_mut().for_each(|v| *v *= 1e200);
        let cfg = TrainConfig { learning_rate: 1e150, max_epochs: 3, ..tiny_cfg() };
        assert!(matches!(train(&ds, &edges, &cfg), Err(ModelError::DivergedTraining(_))));
    }
}
