//! Metrics, family-exclusion splits, the detection pipeline, experiments
//! and synthetic benchmarks.

mod experiment;
mod synth;

pub use experiment::{
    load_benchmark, run_experiment, run_on_benchmarks, synthetic_corpus, Benchmark, BenchmarkEntry, CorpusSpec,
    ExperimentConfig, ExperimentReport, ResultRow, Summary,
};
pub use synth::{generate_synthetic, Fabric, PayloadStyle, SynthSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::autodiff::Tensor;
use crate::explain::{explain_sets, AttributionVector, ExplainError, Explainer};
use crate::graph::EdgeIndex;
use crate::model::{predict, stratified_split, ModelError, Prediction, TrainedModel};
use crate::netlist::{LabelError, LabelMap, ParseError};
use crate::postprocess::{reclassify, PostProcessConfig, PostProcessError, Profiles, SwitchEntry};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("predictions do not partition the nodes: {0}")]
    PartitionError(String),
    #[error("insufficient families: {0}")]
    InsufficientFamilies(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error("{path}: {source}")]
    Labels { path: String, source: LabelError },
    #[error("experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    PostProcess(#[from] PostProcessError),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

fn ratio_or_na<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("n/a"),
    }
}

/// Renders an optional ratio, `n/a` when undefined.
pub fn ratio_text(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    #[serde(serialize_with = "ratio_or_na")]
    pub tpr: Option<f64>,
    #[serde(serialize_with = "ratio_or_na")]
    pub tnr: Option<f64>,
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
        MetricsReport { tp, fp, tn, fn_, tpr: ratio(tp, fn_), tnr: ratio(tn, fp) }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn compute_metrics(p0: &[usize], p1: &[usize], labels: &LabelMap) -> Result<MetricsReport, EvalError> {
    let n = labels.len();
    let mut seen = vec![false; n];
    for &node in p0.iter().chain(p1) {
        if node >= n {
            return Err(EvalError::PartitionError(format!("node {node} outside a {n}-node graph")));
        }
        if std::mem::replace(&mut seen[node], true) {
            return Err(EvalError::PartitionError(format!("node {node} predicted twice")));
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(EvalError::PartitionError(format!("node {missing} has no prediction")));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for &node in p1 {
        if labels.get(node).class() == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    for &node in p0 {
        if labels.get(node).class() == 1 {
            fn_ += 1;
        } else {
            tn += 1;
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, tn, fn_))
}

/// Mean of the defined ratios, `None` when none is defined.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// What the split needs to know about one benchmark.
#[derive(Clone, Copy, Debug)]
pub struct BenchmarkInfo<'a> {
    pub name: &'a str,
    pub family: &'a str,
    pub labels: &'a [u8],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FamilySplit {
    pub test_family: String,
    /// Benchmark indices.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Per training benchmark, parallel to `train`: (training nodes, validation nodes).
    pub nodes: Vec<(Vec<usize>, Vec<usize>)>,
}

/// Holds every benchmark of `test_family` out of training and validation.
/// Validation takes a stratified share of each training benchmark's nodes.
pub fn family_split(
    benchmarks: &[BenchmarkInfo],
    test_family: &str,
    seed: u64,
    validation_fraction: f64,
) -> Result<FamilySplit, EvalError> {
    let mut families: Vec<&str> = benchmarks.iter().map(|b| b.family).collect();
    families.sort_unstable();
    families.dedup();
    if families.len() < 2 {
        return Err(EvalError::InsufficientFamilies(format!("{} family(ies) given, need at least 2", families.len())));
    }
    if !families.contains(&test_family) {
        return Err(EvalError::InsufficientFamilies(format!("test family `{test_family}` has no benchmarks")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test, mut nodes) = (Vec::new(), Vec::new(), Vec::new());
    for (i, b) in benchmarks.iter().enumerate() {
        if b.family == test_family {
            test.push(i);
        } else {
            train.push(i);
            nodes.push(stratified_split(b.labels, validation_fraction, &mut rng));
        }
    }
    Ok(FamilySplit { test_family: test_family.to_string(), train, test, nodes })
}

/// Outcome of running a trained model over one netlist.
#[derive(Clone, Debug)]
pub struct Detection {
    pub initial: Prediction,
    pub final_non_trojan: Vec<usize>,
    pub final_trojan: Vec<usize>,
    pub switched: Vec<SwitchEntry>,
    pub profiles: Option<Profiles>,
    /// Indexed by node; empty without the attribution pass.
    pub attributions: Vec<AttributionVector>,
}

/// Predicts every node, then, when `xai` is set, explains each prediction
/// and reclassifies the non-Trojan set.
pub fn detect(
    model: &TrainedModel,
    x: &Tensor,
    edges: &EdgeIndex,
    pp: &PostProcessConfig,
    ig_steps: usize,
    xai: bool,
) -> Result<Detection, EvalError> {
    let initial = predict(model, x, edges)?;
    if !xai {
        return Ok(Detection {
            final_non_trojan: initial.non_trojan.clone(),
            final_trojan: initial.trojan.clone(),
            initial,
            switched: Vec::new(),
            profiles: None,
            attributions: Vec::new(),
        });
    }
    let explainer = Explainer::new(model, x, edges)?;
    let sets = explain_sets(&explainer, &initial, pp.top_n, ig_steps)?;
    let profiles = Profiles::from_tables(&sets.f0, &sets.f1);
    let r = reclassify(&initial.non_trojan, &initial.trojan, &sets.f0, &profiles, pp)?;
    Ok(Detection {
        initial,
        final_non_trojan: r.non_trojan,
        final_trojan: r.trojan,
        switched: r.switched,
        profiles: Some(profiles),
        attributions: sets.attributions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let labels = LabelMap::from_trojan_wires(4, [1, 3]);
        let m = compute_metrics(&[0, 2], &[1, 3], &labels).unwrap();
        assert_eq!((m.tpr, m.tnr), (Some(1.0), Some(1.0)));

        let m = MetricsReport::from_counts(3, 10, 90, 1);
        assert_eq!(m.tpr, Some(0.75));
        assert_eq!(m.tnr, Some(0.9));
        assert_eq!(m.total(), 104);
    }

    #[test]
    fn undefined_ratios_are_na() {
        let labels = LabelMap::all_clean(3);
        let m = compute_metrics(&[0, 1], &[2], &labels).unwrap();
        assert_eq!(m.tpr, None);
        assert_eq!(m.tnr, Some(2.0 / 3.0));
        let json = serde_json::to_value(m).unwrap();
        assert_eq!(json["tpr"], "n/a");
        assert_eq!(json["fn"], 0);
        assert_eq!(ratio_text(None), "n/a");
        assert_eq!(ratio_text(Some(0.5)), "0.5000");
        assert_eq!(mean_defined([None, Some(1.0), Some(0.5)]), Some(0.75));
        assert_eq!(mean_defined([None]), None);
    }

    #[test]
    fn partition_is_checked() {
        let labels = LabelMap::all_clean(3);
        assert!(matches!(compute_metrics(&[0, 1], &[1, 2], &labels), Err(EvalError::PartitionError(_))));
        assert!(matches!(compute_metrics(&[0], &[2], &labels), Err(EvalError::PartitionError(_))));
        assert!(matches!(compute_metrics(&[0, 1], &[2, 5], &labels), Err(EvalError::PartitionError(_))));
    }

    fn infos<'a>(fams: &'a [(&'a str, &'a str)], labels: &'a [u8]) -> Vec<BenchmarkInfo<'a>> {
        fams.iter().map(|(n, f)| BenchmarkInfo { name: n, family: f, labels }).collect()
    }

    #[test]
    fn family_split_excludes_test_family() {
        let labels = [0, 0, 0, 0, 1, 1, 0, 0, 0, 0];
        let mut fams: Vec<(&str, &str)> = (0..8).map(|_| ("rs", "rs232")).collect();
        fams.extend([("a", "s38417"), ("b", "s38417"), ("c", "s38417")]);
        let b = infos(&fams, &labels);
        let s = family_split(&b, "s38417", 3, 0.2).unwrap();
        assert_eq!(s.test, vec![8, 9, 10]);
        assert_eq!(s.train, (0..8).collect::<Vec<_>>());
        assert!(s.train.iter().all(|&i| b[i].family == "rs232"));
        for (tr, va) in &s.nodes {
            assert_eq!(tr.len() + va.len(), 10);
            assert_eq!(va.len(), 3);
        }
        assert_eq!(s, family_split(&b, "s38417", 3, 0.2).unwrap());
    }

    #[test]
    fn family_split_errors() {
        let labels = [0, 1];
        let one = infos(&[("a", "x"), ("b", "x")], &labels);
        assert!(matches!(family_split(&one, "x", 0, 0.2), Err(EvalError::InsufficientFamilies(_))));
        let two = infos(&[("a", "x"), ("b", "y")], &labels);
        assert!(matches!(family_split(&two, "z", 0, 0.2), Err(EvalError::InsufficientFamilies(_))));
    }
}
