use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use htdetect::autodiff::Tensor;
use htdetect::eval::{
    compute_metrics, detect as run_detect, generate_synthetic, load_benchmark, run_on_benchmarks, synthetic_corpus,
    Benchmark, BenchmarkEntry, CorpusSpec, ExperimentConfig, Fabric, PayloadStyle, SynthSpec,
};
use htdetect::explain::{attribution_report, generate_rules, top_n, Explainer, RuleConfig, TopNTable};
use htdetect::features::{build_dataset, feature_matrix, Dataset};
use htdetect::graph::{edging, graphify, CircuitGraph, EdgeIndex};
use htdetect::model::{load_model_str, model_to_json, predict, train_datasets, ModelError, TrainedModel};
use htdetect::netlist::{parse_labels, parse_netlist, LabelMap, Netlist};
use htdetect::postprocess::postprocess_report;

use crate::error::CliError;
use crate::settings::{read_text, Settings, TuningFlags};
use crate::{DetectArgs, EvalArgs, ExplainArgs, FabricFlag, PayloadFlag, RulesArgs, SynthArgs, TrainArgs};

pub const NO_TROJAN_RULES: &str = "no rules (no Trojan predictions)";
pub const NO_EVIDENCE_RULES: &str = "no rules (no positive attributions)";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::input(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write_file(path, &text)
}

struct LoadedNetlist {
    netlist: Netlist,
    graph: CircuitGraph,
    edges: EdgeIndex,
    sha256: String,
}

fn load_netlist(path: &Path) -> Result<LoadedNetlist, CliError> {
    let text = read_text(path)?;
    let netlist = parse_netlist(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let graph = graphify(&netlist);
    let edges = edging(&graph);
    Ok(LoadedNetlist { netlist, graph, edges, sha256: sha256_hex(text.as_bytes()) })
}

fn load_labels(path: &Path, netlist: &Netlist) -> Result<(LabelMap, String), CliError> {
    let text = read_text(path)?;
    let labels = parse_labels(&text, netlist).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok((labels, sha256_hex(text.as_bytes())))
}

struct LoadedModel {
    model: TrainedModel,
    sha256: String,
}

/// Loads the model and checks it against a locality pinned on the command
/// line or in the settings file.
fn load_checked_model(path: &Path, tuning: &TuningFlags) -> Result<(LoadedModel, Settings), CliError> {
    let text = read_text(path)?;
    let model = load_model_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    if let Some(l) = tuning.explicit_locality()? {
        if l != model.locality.gates {
            return Err(ModelError::ShapeMismatch(format!(
                "model was trained with locality {}, locality {l} requested",
                model.locality.gates
            ))
            .into());
        }
    }
    let mut settings = tuning.resolve()?;
    settings.locality = model.locality.gates;
    Ok((LoadedModel { model, sha256: sha256_hex(text.as_bytes()) }, settings))
}

pub fn train(args: &TrainArgs, out_dir: &Path) -> Result<(), CliError> {
    if args.netlists.len() != args.labels.len() {
        return Err(CliError::input(format!(
            "{} netlists but {} label files",
            args.netlists.len(),
            args.labels.len()
        )));
    }
    let settings = args.tuning.resolve()?;
    let locality = settings.locality_config();
    let mut loaded = Vec::new();
    let mut inputs = Vec::new();
    for (np, lp) in args.netlists.iter().zip(&args.labels) {
        let n = load_netlist(np)?;
        let (labels, labels_sha) = load_labels(lp, &n.netlist)?;
        let dataset = build_dataset(&n.graph, &labels, &locality);
        inputs.push(json!({
            "netlist": np.display().to_string(),
            "netlist_sha256": n.sha256,
            "labels": lp.display().to_string(),
            "labels_sha256": labels_sha,
            "wires": labels.len(),
            "trojan_wires": labels.trojan_count(),
        }));
        loaded.push((dataset, n.edges));
    }
    let pairs: Vec<(&Dataset, &EdgeIndex)> = loaded.iter().map(|(d, e)| (d, e)).collect();
    let model = train_datasets(&pairs, &settings.train)?;

    let model_path = args.model.clone().unwrap_or_else(|| out_dir.join("model.json"));
    let log_path = args.log.clone().unwrap_or_else(|| out_dir.join("train_log.json"));
    let model_text = model_to_json(&model);
    write_file(&model_path, &model_text)?;
    let meta = &model.meta;
    write_json(
        &log_path,
        &json!({
            "command": "train",
            "inputs": inputs,
            "settings": settings,
            "model": model_path.display().to_string(),
            "model_sha256": sha256_hex(model_text.as_bytes()),
            "seed": settings.seed,
            "epochs_run": meta.epochs_run,
            "best_epoch": meta.best_epoch,
            "best_validation_loss": meta.best_validation_loss,
            "class_weights": { "non_trojan": meta.class_weights.non_trojan, "trojan": meta.class_weights.trojan },
            "history": meta.history.iter().map(|(t, v)| json!({ "train_loss": t, "validation_loss": v })).collect::<Vec<_>>(),
        }),
    )?;
    println!(
        "trained {} epoch(s), best epoch {} (validation loss {:.6})",
        meta.epochs_run, meta.best_epoch, meta.best_validation_loss
    );
    println!("model: {}", model_path.display());
    println!("log: {}", log_path.display());
    Ok(())
}

pub fn detect(args: &DetectArgs, out_dir: &Path) -> Result<(), CliError> {
    let (lm, settings) = load_checked_model(&args.model, &args.tuning)?;
    let n = load_netlist(&args.netlist)?;
    let x = feature_matrix(&n.graph, &lm.model.locality);
    let labels = args.labels.as_ref().map(|p| load_labels(p, &n.netlist)).transpose()?;
    let xai = !args.no_xai;
    let d = run_detect(&lm.model, &x, &n.edges, &settings.postprocess, settings.ig_steps, xai)?;

    let names: Vec<String> = (0..n.graph.node_count()).map(|i| n.graph.node_name(i).to_string()).collect();
    let mut final_class = vec![0u8; names.len()];
    for &i in &d.final_trojan {
        final_class[i] = 1;
    }
    let mut switched = vec![false; names.len()];
    let mut log = d.switched.clone();
    for e in &mut log {
        switched[e.node] = true;
        e.wire = Some(names[e.node].clone());
    }
    let attributions = attribution_report(&d.attributions, &names, &lm.model.locality, settings.postprocess.top_n);
    let wires: Vec<Value> = (0..names.len())
        .map(|i| {
            let mut w = json!({
                "wire": names[i],
                "p_trojan": d.initial.probs.get(i, 1),
                "initial_class": d.initial.class_of(i),
                "final_class": final_class[i],
                "switched": switched[i],
            });
            if let Some(a) = attributions.get(i) {
                w["top_n"] = json!(a.top_n);
            }
            w
        })
        .collect();

    let mut report = json!({
        "command": "detect",
        "netlist": args.netlist.display().to_string(),
        "netlist_sha256": n.sha256,
        "model": args.model.display().to_string(),
        "model_sha256": lm.sha256,
        "settings": settings,
        "xai": xai,
        "summary": {
            "wires": names.len(),
            "initial_trojan": d.initial.trojan.len(),
            "final_trojan": d.final_trojan.len(),
            "switched": log.len(),
        },
        "initial_trojan_wires": d.initial.trojan.iter().map(|&i| &names[i]).collect::<Vec<_>>(),
        "final_trojan_wires": d.final_trojan.iter().map(|&i| &names[i]).collect::<Vec<_>>(),
        "profiles": d.profiles,
        "wires": wires,
    });
    report["switched"] = postprocess_report(&log)["switched"].clone();
    if let Some((labels, labels_sha)) = &labels {
        let pre = compute_metrics(&d.initial.non_trojan, &d.initial.trojan, labels)?;
        let post = compute_metrics(&d.final_non_trojan, &d.final_trojan, labels)?;
        report["labels_sha256"] = json!(labels_sha);
        report["metrics"] = json!({ "pre": pre, "post": post });
    }
    let path = args.report.clone().unwrap_or_else(|| out_dir.join("detect_report.json"));
    write_json(&path, &report)?;
    println!(
        "{} wires: {} Trojan before reclassification, {} after ({} switched)",
        names.len(),
        d.initial.trojan.len(),
        d.final_trojan.len(),
        log.len()
    );
    println!("report: {}", path.display());
    Ok(())
}

pub fn explain(args: &ExplainArgs, out_dir: &Path) -> Result<(), CliError> {
    let (lm, settings) = load_checked_model(&args.model, &args.tuning)?;
    let n = load_netlist(&args.netlist)?;
    let x = feature_matrix(&n.graph, &lm.model.locality);
    let nodes: Vec<usize> = if args.wires.is_empty() {
        (0..n.graph.node_count()).collect()
    } else {
        args.wires
            .iter()
            .map(|w| n.netlist.wire_id(w).ok_or_else(|| CliError::input(format!("unknown wire name `{w}`"))))
            .collect::<Result<_, _>>()?
    };
    let prediction = predict(&lm.model, &x, &n.edges)?;
    let explainer = Explainer::new(&lm.model, &x, &n.edges)?;
    let baseline = vec![0.0; explainer.feature_len()];
    let attributions = nodes
        .iter()
        .map(|&i| explainer.attribute(i, &baseline, settings.ig_steps, prediction.class_of(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> = (0..n.graph.node_count()).map(|i| n.graph.node_name(i).to_string()).collect();
    let report = attribution_report(&attributions, &names, &lm.model.locality, settings.postprocess.top_n);
    let path = args.report.clone().unwrap_or_else(|| out_dir.join("explain_report.json"));
    write_json(
        &path,
        &json!({
            "command": "explain",
            "netlist": args.netlist.display().to_string(),
            "netlist_sha256": n.sha256,
            "model": args.model.display().to_string(),
            "model_sha256": lm.sha256,
            "settings": settings,
            "attributions": report,
        }),
    )?;
    for r in &report {
        let top = r.top_n.first().map_or_else(String::new, |s| format!("{} ({:+.4})", s.name, s.score));
        println!("{}\tclass {}\t{}", r.wire, r.predicted_class, top);
    }
    println!("report: {}", path.display());
    Ok(())
}

/// Rule text for the model's Trojan predictions on one netlist.
fn rule_text(model: &TrainedModel, x: &Tensor, edges: &EdgeIndex, settings: &Settings) -> Result<String, CliError> {
    let prediction = predict(model, x, edges)?;
    if prediction.trojan.is_empty() {
        return Ok(NO_TROJAN_RULES.to_string());
    }
    let explainer = Explainer::new(model, x, edges)?;
    let baseline = vec![0.0; explainer.feature_len()];
    let n = settings.postprocess.top_n;
    let mut f1 = TopNTable::new(n);
    for &i in &prediction.trojan {
        let a = explainer.attribute(i, &baseline, settings.ig_steps, 1)?;
        f1.rows.push(top_n(i, &a.scores, n));
    }
    let rule = generate_rules(&f1, &model.locality, &RuleConfig { max_clauses: settings.max_clauses })?;
    Ok(rule.unwrap_or_else(|| NO_EVIDENCE_RULES.to_string()))
}

pub fn rules(args: &RulesArgs) -> Result<(), CliError> {
    let (lm, settings) = load_checked_model(&args.model, &args.tuning)?;
    let n = load_netlist(&args.netlist)?;
    let x = feature_matrix(&n.graph, &lm.model.locality);
    let text = rule_text(&lm.model, &x, &n.edges, &settings)?;
    println!("{text}");
    if let Some(path) = &args.output {
        write_file(path, &format!("{text}\n"))?;
    }
    Ok(())
}

fn apply_eval_overrides(cfg: &mut ExperimentConfig, args: &EvalArgs) {
    if !args.locality.is_empty() {
        cfg.localities = args.locality.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(f) = &args.test_family {
        cfg.test_family = Some(f.clone());
    }
    if let Some(v) = args.ig_steps {
        cfg.ig_steps = v;
    }
    if let Some(v) = args.max_epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = args.patience {
        cfg.train.patience = v;
    }
    if let Some(v) = args.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.multiplier {
        cfg.postprocess.multiplier = v;
    }
    if let Some(v) = args.threshold {
        cfg.postprocess.threshold = v;
    }
    if let Some(v) = args.top_n {
        cfg.postprocess.top_n = v;
    }
    if let Some(v) = args.c2_mode {
        cfg.postprocess.c2_mode = v.into();
    }
}

pub fn eval(args: &EvalArgs, out_dir: &Path) -> Result<(), CliError> {
    let config_text = read_text(&args.config)?;
    let mut cfg = ExperimentConfig::from_toml_str(&config_text)
        .map_err(|e| CliError::input(format!("{}: {e}", args.config.display())))?;
    apply_eval_overrides(&mut cfg, args);
    cfg.validate()?;
    let base_dir = args.config.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);

    let mut benchmarks: Vec<Benchmark> = Vec::new();
    let mut hashes = Vec::new();
    for entry in &cfg.benchmarks {
        benchmarks.push(load_benchmark(entry, &base_dir)?);
        let bytes = std::fs::read(base_dir.join(&entry.netlist))
            .map_err(|e| CliError::input(format!("{}: {e}", entry.netlist.display())))?;
        hashes.push(sha256_hex(&bytes));
    }
    if let Some(spec) = &cfg.synthetic {
        for b in synthetic_corpus(spec) {
            hashes.push(sha256_hex(b.netlist.to_string().as_bytes()));
            benchmarks.push(b);
        }
    }
    let report = run_on_benchmarks(&benchmarks, &cfg)?;

    let mut json = report.to_json();
    json["command"] = json!("eval");
    json["config"] = json!(args.config.display().to_string());
    json["config_sha256"] = json!(sha256_hex(config_text.as_bytes()));
    json["benchmarks"] = benchmarks
        .iter()
        .zip(&hashes)
        .map(|(b, h)| json!({ "name": b.name, "family": b.family, "netlist_sha256": h }))
        .collect();
    let csv_path = out_dir.join(format!("{}_results.csv", args.prefix));
    let grid_path = out_dir.join(format!("{}_grid.csv", args.prefix));
    let json_path = out_dir.join(format!("{}_results.json", args.prefix));
    write_file(&csv_path, &report.to_csv())?;
    let grid = report.grid_csv();
    write_file(&grid_path, &grid)?;
    write_json(&json_path, &json)?;
    print!("{grid}");
    println!("results: {}", csv_path.display());
    Ok(())
}

fn fabric_of(f: FabricFlag) -> Fabric {
    match f {
        FabricFlag::Arithmetic => Fabric::Arithmetic,
        FabricFlag::Control => Fabric::Control,
        FabricFlag::Mixed => Fabric::Mixed,
    }
}

fn payload_of(p: PayloadFlag) -> PayloadStyle {
    match p {
        PayloadFlag::Xor => PayloadStyle::Xor,
        PayloadFlag::Or => PayloadStyle::Or,
    }
}

fn write_benchmark(out_dir: &Path, name: &str, netlist: &Netlist, labels: &LabelMap) -> Result<(), CliError> {
    write_file(&out_dir.join(format!("{name}.v")), &netlist.to_string())?;
    write_file(&out_dir.join(format!("{name}.labels")), &labels.to_text(netlist))?;
    println!("{name}: {} wires, {} Trojan", labels.len(), labels.trojan_count());
    Ok(())
}

pub fn synth_bench(args: &SynthArgs, out_dir: &Path) -> Result<(), CliError> {
    if args.inputs < 3 {
        return Err(CliError::input("synthetic fabric needs at least three inputs"));
    }
    let payload = payload_of(args.payload);
    if let Some(per_family) = args.per_family {
        if per_family == 0 {
            return Err(CliError::input("per-family must be at least 1"));
        }
        let spec = CorpusSpec {
            per_family,
            inputs: args.inputs,
            gates: args.gates,
            trigger_depth: args.trigger_depth,
            insertions: args.insertions,
            payload,
            seed: args.seed,
        };
        let mut entries = Vec::new();
        for b in synthetic_corpus(&spec) {
            write_benchmark(out_dir, &b.name, &b.netlist, &b.labels)?;
            entries.push(BenchmarkEntry {
                netlist: format!("{}.v", b.name).into(),
                labels: format!("{}.labels", b.name).into(),
                name: b.name,
                family: b.family,
            });
        }
        let cfg = ExperimentConfig { benchmarks: entries, seed: args.seed, ..ExperimentConfig::default() };
        let text = toml::to_string(&cfg).map_err(|e| CliError::invariant(format!("experiment config: {e}")))?;
        let path = out_dir.join("experiment.toml");
        write_file(&path, &text)?;
        println!("config: {}", path.display());
        return Ok(());
    }
    let fabric = fabric_of(args.fabric);
    let name = args.name.clone().unwrap_or_else(|| format!("synth_{}_{}", fabric.name(), args.seed));
    let spec = SynthSpec {
        module_name: name.clone(),
        fabric,
        inputs: args.inputs,
        gates: args.gates,
        trigger_depth: args.trigger_depth,
        payload,
        insertions: args.insertions,
        seed: args.seed,
    };
    let (netlist, labels) = generate_synthetic(&spec);
    write_benchmark(out_dir, &name, &netlist, &labels)
}
