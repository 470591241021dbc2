use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{generate_synthetic, Fabric, PayloadStyle, SynthSpec};
use super::{compute_metrics, detect, family_split, mean_defined, ratio_text, BenchmarkInfo, EvalError, MetricsReport};
use crate::autodiff::Tensor;
use crate::explain::DEFAULT_IG_STEPS;
use crate::features::{feature_matrix, LocalityConfig, DEFAULT_LOCALITY};
use crate::graph::{edging, graphify, EdgeIndex};
use crate::model::{train_graphs, TrainConfig, TrainingGraph};
use crate::netlist::{parse_labels, parse_netlist, LabelMap, Netlist};
use crate::postprocess::PostProcessConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub name: String,
    pub family: String,
    pub netlist: PathBuf,
    pub labels: PathBuf,
}

/// Synthetic corpus: `per_family` benchmarks for every fabric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub per_family: usize,
    pub inputs: usize,
    pub gates: usize,
    pub trigger_depth: u32,
    pub insertions: usize,
    pub payload: PayloadStyle,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        let s = SynthSpec::default();
        CorpusSpec {
            per_family: 2,
            inputs: s.inputs,
            gates: s.gates,
            trigger_depth: s.trigger_depth,
            insertions: s.insertions,
            payload: s.payload,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmarks: Vec<BenchmarkEntry>,
    pub synthetic: Option<CorpusSpec>,
    /// Leave-one-family-out over every family when absent.
    pub test_family: Option<String>,
    pub localities: Vec<usize>,
    pub seed: u64,
    pub ig_steps: usize,
    pub train: TrainConfig,
    pub postprocess: PostProcessConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            benchmarks: Vec::new(),
            synthetic: None,
            test_family: None,
            localities: vec![DEFAULT_LOCALITY],
            seed: 0,
            ig_steps: DEFAULT_IG_STEPS,
            train: TrainConfig::default(),
            postprocess: PostProcessConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, EvalError> {
        toml::from_str(text).map_err(|e| EvalError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.localities.is_empty() || self.localities.contains(&0) {
            return Err(EvalError::Config("localities must be a non-empty list of positive sizes".into()));
        }
        if self.ig_steps == 0 {
            return Err(EvalError::Config("ig_steps must be at least 1".into()));
        }
        self.train.validate()?;
        self.postprocess.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub name: String,
    pub family: String,
    pub netlist: Netlist,
    pub labels: LabelMap,
}

pub fn load_benchmark(entry: &BenchmarkEntry, base_dir: &Path) -> Result<Benchmark, EvalError> {
    let read = |p: &Path| {
        let full = base_dir.join(p);
        std::fs::read_to_string(&full)
            .map(|t| (t, full.display().to_string()))
            .map_err(|source| EvalError::Io { path: full.display().to_string(), source })
    };
    let (text, path) = read(&entry.netlist)?;
    let netlist = parse_netlist(&text).map_err(|source| EvalError::Parse { path, source })?;
    let (text, path) = read(&entry.labels)?;
    let labels = parse_labels(&text, &netlist).map_err(|source| EvalError::Labels { path, source })?;
    Ok(Benchmark { name: entry.name.clone(), family: entry.family.clone(), netlist, labels })
}

pub fn synthetic_corpus(spec: &CorpusSpec) -> Vec<Benchmark> {
    let mut out = Vec::new();
    for (f, fabric) in Fabric::ALL.into_iter().enumerate() {
        for k in 0..spec.per_family {
            let name = format!("{}_{k}", fabric.name());
            let synth = SynthSpec {
                module_name: name.clone(),
                fabric,
                inputs: spec.inputs,
                gates: spec.gates,
                trigger_depth: spec.trigger_depth,
                payload: spec.payload,
                insertions: spec.insertions,
                seed: spec.seed.wrapping_mul(1000).wrapping_add((f * 100 + k) as u64),
            };
            let (netlist, labels) = generate_synthetic(&synth);
            out.push(Benchmark { name, family: fabric.name().to_string(), netlist, labels });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub locality: usize,
    pub test_family: String,
    pub benchmark: String,
    pub nodes: usize,
    pub trojans: usize,
    pub pre: MetricsReport,
    pub post: MetricsReport,
    pub switched: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub localities: Vec<usize>,
    pub test_families: Vec<String>,
    pub ig_steps: usize,
    pub train: TrainConfig,
    pub postprocess: PostProcessConfig,
    pub rows: Vec<ResultRow>,
}

/// Means of the defined per-benchmark ratios at one locality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub pre_tpr: Option<f64>,
    pub pre_tnr: Option<f64>,
    pub post_tpr: Option<f64>,
    pub post_tnr: Option<f64>,
}

impl ExperimentReport {
    pub fn summary(&self, locality: usize) -> Summary {
        let rows: Vec<&ResultRow> = self.rows.iter().filter(|r| r.locality == locality).collect();
        Summary {
            pre_tpr: mean_defined(rows.iter().map(|r| r.pre.tpr)),
            pre_tnr: mean_defined(rows.iter().map(|r| r.pre.tnr)),
            post_tpr: mean_defined(rows.iter().map(|r| r.post.tpr)),
            post_tnr: mean_defined(rows.iter().map(|r| r.post.tnr)),
        }
    }

    /// One row per (benchmark, locality).
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "locality,test_family,benchmark,nodes,trojans,pre_tp,pre_fp,pre_tn,pre_fn,pre_tpr,pre_tnr,\
             post_tp,post_fp,post_tn,post_fn,post_tpr,post_tnr,switched\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.locality,
                r.test_family,
                r.benchmark,
                r.nodes,
                r.trojans,
                r.pre.tp,
                r.pre.fp,
                r.pre.tn,
                r.pre.fn_,
                ratio_text(r.pre.tpr),
                ratio_text(r.pre.tnr),
                r.post.tp,
                r.post.fp,
                r.post.tn,
                r.post.fn_,
                ratio_text(r.post.tpr),
                ratio_text(r.post.tnr),
                r.switched
            );
        }
        s
    }

    /// Benchmarks down, localities across, final TPR/TNR per cell, with an
    /// average row.
    pub fn grid_csv(&self) -> String {
        let mut s = String::from("benchmark");
        for l in &self.localities {
            let _ = write!(s, ",L{l}_TPR,L{l}_TNR");
        }
        s.push('\n');
        let mut names: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.benchmark.as_str()) {
                names.push(&r.benchmark);
            }
        }
        for name in names {
            s.push_str(name);
            for &l in &self.localities {
                let cell = self.rows.iter().find(|r| r.benchmark == name && r.locality == l);
                let (tpr, tnr) = cell.map_or((None, None), |r| (r.post.tpr, r.post.tnr));
                let _ = write!(s, ",{},{}", ratio_text(tpr), ratio_text(tnr));
            }
            s.push('\n');
        }
        s.push_str("Average");
        for &l in &self.localities {
            let m = self.summary(l);
            let _ = write!(s, ",{},{}", ratio_text(m.post_tpr), ratio_text(m.post_tnr));
        }
        s.push('\n');
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let summaries: Vec<serde_json::Value> = self
            .localities
            .iter()
            .map(|&l| {
                let m = self.summary(l);
                serde_json::json!({
                    "locality": l,
                    "pre_tpr": ratio_text(m.pre_tpr),
                    "pre_tnr": ratio_text(m.pre_tnr),
                    "post_tpr": ratio_text(m.post_tpr),
                    "post_tnr": ratio_text(m.post_tnr),
                })
            })
            .collect();
        let mut v = serde_json::to_value(self).expect("report serializes");
        v["summary"] = serde_json::Value::Array(summaries);
        v
    }
}

/// Loads the configured benchmarks (paths relative to `base_dir`), adds the
/// synthetic corpus if requested, and runs the experiment.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    let mut benchmarks = cfg.benchmarks.iter().map(|e| load_benchmark(e, base_dir)).collect::<Result<Vec<_>, _>>()?;
    if let Some(spec) = &cfg.synthetic {
        benchmarks.extend(synthetic_corpus(spec));
    }
    run_on_benchmarks(&benchmarks, cfg)
}

fn violation(msg: String) -> EvalError {
    EvalError::InvariantViolation(msg)
}

pub fn run_on_benchmarks(benchmarks: &[Benchmark], cfg: &ExperimentConfig) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    let families: BTreeSet<&str> = benchmarks.iter().map(|b| b.family.as_str()).collect();
    let test_families: Vec<String> = match &cfg.test_family {
        Some(f) => vec![f.clone()],
        None => families.iter().map(|f| f.to_string()).collect(),
    };
    let classes: Vec<Vec<u8>> = benchmarks.iter().map(|b| b.labels.classes()).collect();
    let infos: Vec<BenchmarkInfo> = benchmarks
        .iter()
        .zip(&classes)
        .map(|(b, y)| BenchmarkInfo { name: &b.name, family: &b.family, labels: y })
        .collect();
    let graphs: Vec<_> = benchmarks.iter().map(|b| graphify(&b.netlist)).collect();
    let edges: Vec<EdgeIndex> = graphs.iter().map(edging).collect();
    let train_cfg = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };

    let mut rows = Vec::new();
    for &l in &cfg.localities {
        let locality = LocalityConfig::new(l);
        let features: Vec<Tensor> = graphs.iter().map(|g| feature_matrix(g, &locality)).collect();
        for family in &test_families {
            let split = family_split(&infos, family, cfg.seed, cfg.train.validation_fraction)?;
            if split.train.iter().any(|&i| benchmarks[i].family == *family) {
                return Err(violation(format!("family `{family}` leaked into training")));
            }
            let training: Vec<TrainingGraph> = split
                .train
                .iter()
                .zip(&split.nodes)
                .map(|(&i, (tr, va))| TrainingGraph {
                    x: &features[i],
                    y: &classes[i],
                    edges: &edges[i],
                    train: tr.clone(),
                    validation: va.clone(),
                })
                .collect();
            let model = train_graphs(&training, &locality, &train_cfg)?;
            for &i in &split.test {
                let b = &benchmarks[i];
                let d = detect(&model, &features[i], &edges[i], &cfg.postprocess, cfg.ig_steps, true)?;
                let pre = compute_metrics(&d.initial.non_trojan, &d.initial.trojan, &b.labels)?;
                let post = compute_metrics(&d.final_non_trojan, &d.final_trojan, &b.labels)?;
                check_monotone(&b.name, &pre, &post, d.switched.len(), b.labels.len())?;
                rows.push(ResultRow {
                    locality: l,
                    test_family: family.clone(),
                    benchmark: b.name.clone(),
                    nodes: b.labels.len(),
                    trojans: b.labels.trojan_count(),
                    pre,
                    post,
                    switched: d.switched.len(),
                    epochs_run: model.meta.epochs_run,
                    best_epoch: model.meta.best_epoch,
                });
            }
        }
    }
    Ok(ExperimentReport {
        seed: cfg.seed,
        localities: cfg.localities.clone(),
        test_families,
        ig_steps: cfg.ig_steps,
        train: train_cfg,
        postprocess: cfg.postprocess.clone(),
        rows,
    })
}

fn check_monotone(
    name: &str,
    pre: &MetricsReport,
    post: &MetricsReport,
    switched: usize,
    nodes: usize,
) -> Result<(), EvalError> {
    if pre.total() != nodes || post.total() != nodes {
        return Err(violation(format!("{name}: confusion counts do not cover {nodes} wires")));
    }
    if post.tp < pre.tp || post.fn_ > pre.fn_ || post.tn > pre.tn || post.fp < pre.fp {
        return Err(violation(format!("{name}: reclassification moved a node out of the Trojan set")));
    }
    if post.tp + post.fp != pre.tp + pre.fp + switched {
        return Err(violation(format!("{name}: switch log does not match the Trojan set growth")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            seed = 4
            test_family = "rs232"
            localities = [5, 7]

            [[benchmarks]]
            name = "rs232_t1000"
            family = "rs232"
            netlist = "rs232_t1000.v"
            labels = "rs232_t1000.txt"

            [train]
            max_epochs = 40

            [postprocess]
            c2_mode = "at-most"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.localities, vec![5, 7]);
        assert_eq!(cfg.train.max_epochs, 40);
        assert_eq!(cfg.train.learning_rate, 0.005);
        assert_eq!(cfg.postprocess.c2_mode, crate::postprocess::C2Mode::AtMost);
        assert_eq!(cfg.postprocess.multiplier, 2.0);
        assert_eq!(cfg.benchmarks[0].family, "rs232");
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig { localities: vec![], ..ExperimentConfig::default() }.validate().is_err());
    }

    #[test]
    fn corpus_names_and_families() {
        let c = synthetic_corpus(&CorpusSpec { per_family: 2, gates: 60, insertions: 1, ..CorpusSpec::default() });
        assert_eq!(c.len(), 6);
        assert_eq!(c[0].name, "arithmetic_0");
        assert_eq!(c[5].family, "mixed");
        assert!(c.iter().all(|b| b.labels.trojan_count() == 8));
    }

    #[test]
    fn tiny_experiment_reports_every_test_benchmark() {
        let corpus = synthetic_corpus(&CorpusSpec { per_family: 1, gates: 60, insertions: 1, ..CorpusSpec::default() });
        let cfg = ExperimentConfig {
            localities: vec![3],
            ig_steps: 4,
            train: TrainConfig { max_epochs: 3, hidden1: 8, hidden2: 8, ..TrainConfig::default() },
            ..ExperimentConfig::default()
        };
        let report = run_on_benchmarks(&corpus, &cfg).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.test_families, vec!["arithmetic", "control", "mixed"]);
        for r in &report.rows {
            assert_eq!(r.pre.total(), r.nodes);
            assert!(r.post.tp >= r.pre.tp && r.post.tn <= r.pre.tn);
        }
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 4);
        let grid = report.grid_csv();
        assert!(grid.starts_with("benchmark,L3_TPR,L3_TNR\n"));
        assert!(grid.lines().last().unwrap().starts_with("Average,"));
        assert_eq!(report.to_json()["summary"][0]["locality"], 3);

        let missing = ExperimentConfig { test_family: Some("nope".into()), ..cfg };
        assert!(matches!(run_on_benchmarks(&corpus, &missing), Err(EvalError::InsufficientFamilies(_))));
    }
}
