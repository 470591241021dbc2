use proptest::prelude::*;

use htdetect::autodiff::{grad_check, Tensor};
use htdetect::explain::{TopNRow, TopNTable};
use htdetect::features::{structural_features, LocalityConfig};
use htdetect::graph::{edging, graphify, EdgeIndex};
use htdetect::model::{
    attention_coefficients, forward_on_tape, weighted_loss_on_tape, ClassWeights, Dims, EdgeLists, ModelParams,
    ParamVars,
};
use htdetect::netlist::{parse_netlist, Gate, GateKind, Netlist};
use htdetect::postprocess::{reclassify, C2Mode, PostProcessConfig, Profiles};

const KINDS: [GateKind; 10] = [
    GateKind::And,
    GateKind::Nand,
    GateKind::Or,
    GateKind::Nor,
    GateKind::Xor,
    GateKind::Xnor,
    GateKind::Inv,
    GateKind::Buf,
    GateKind::Dff,
    GateKind::Mux,
];

fn arity(kind: GateKind, extra: bool) -> usize {
    match kind {
        GateKind::Inv | GateKind::Buf | GateKind::Dff => 1,
        GateKind::Mux => 3,
        _ if extra => 3,
        _ => 2,
    }
}

/// Random feed-forward netlist, reparsed into canonical wire order.
fn netlist_strategy(max_gates: usize) -> impl Strategy<Value = Netlist> {
    (2usize..5, prop::collection::vec((0usize..10, any::<bool>(), prop::collection::vec(any::<u32>(), 3)), 1..=max_gates))
        .prop_map(|(inputs, specs)| {
            let mut names: Vec<String> = (0..inputs).map(|i| format!("i{i}")).collect();
            let mut gates = Vec::new();
            for (id, (k, extra, picks)) in specs.into_iter().enumerate() {
                let kind = KINDS[k];
                let mut ins: Vec<usize> = Vec::new();
                for p in picks.iter().take(arity(kind, extra)) {
                    let w = *p as usize % names.len();
                    if !ins.contains(&w) {
                        ins.push(w);
                    }
                }
                while ins.len() < arity(kind, extra) {
                    let w = (0..names.len()).find(|w| !ins.contains(w)).unwrap_or(0);
                    ins.push(w);
                }
                let out = names.len();
                names.push(format!("w{out}"));
                gates.push(Gate { id, kind, inputs: ins, output: out, instance_name: format!("u{id}") });
            }
            let mut loaded = vec![false; names.len()];
            for g in &gates {
                for &w in &g.inputs {
                    loaded[w] = true;
                }
            }
            let outputs = (inputs..names.len()).filter(|&w| !loaded[w]).collect();
            let built = Netlist::from_parts("top", names, gates, (0..inputs).collect(), outputs).unwrap();
            parse_netlist(&built.to_string()).unwrap()
        })
}

fn edge_strategy(nodes: usize, max_edges: usize) -> impl Strategy<Value = EdgeIndex> {
    prop::collection::vec((0..nodes, 0..nodes), 0..max_edges).prop_map(move |pairs| EdgeIndex::from_pairs(nodes, pairs))
}

fn tensor(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::from_vec(rows, cols, data[..rows * cols].to_vec())
}

proptest! {
    #[test]
    fn netlist_text_round_trips(n in netlist_strategy(20)) {
        let text = n.to_string();
        let again = parse_netlist(&text).unwrap();
        prop_assert_eq!(&again, &n);
        prop_assert_eq!(again.to_string(), text);
    }

    #[test]
    fn edge_index_is_symmetric_looped_and_sorted(n in netlist_strategy(20)) {
        let g = graphify(&n);
        let e = edging(&g);
        let pairs = e.pairs();
        prop_assert!(pairs.windows(2).all(|w| w[0] < w[1]));
        for &(s, d) in pairs {
            prop_assert!(s < e.node_count() && d < e.node_count());
            prop_assert!(pairs.binary_search(&(d, s)).is_ok());
        }
        for v in 0..e.node_count() {
            prop_assert!(pairs.binary_search(&(v, v)).is_ok());
        }
        for gate in &n.gates {
            for &w in &gate.inputs {
                prop_assert!(pairs.binary_search(&(w, gate.output)).is_ok());
            }
        }
    }

    #[test]
    fn every_rank_block_is_one_hot(n in netlist_strategy(14), l in 1usize..12) {
        let g = graphify(&n);
        let cfg = LocalityConfig::new(l);
        for wire in 0..n.wire_count() {
            let f = structural_features(&g, &cfg, wire);
            prop_assert_eq!(f.len(), 11 * l + l * (l - 1) / 2);
            prop_assert!(f.iter().all(|&v| v == 0.0 || v == 1.0));
            for rank in 0..l {
                let block = &f[rank * 11..(rank + 1) * 11];
                prop_assert_eq!(block.iter().sum::<f64>(), 1.0);
            }
            for i in 0..l {
                for j in i + 1..l {
                    if f[cfg.adjacency_slot(i, j)] == 1.0 {
                        prop_assert_eq!(f[cfg.kind_slot(i, GateKind::None)], 0.0);
                        prop_assert_eq!(f[cfg.kind_slot(j, GateKind::None)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn attention_sums_to_one_per_destination(
        e in edge_strategy(9, 30),
        data in prop::collection::vec(-3.0f64..3.0, 9 * 4 + 4 * 3 + 6),
    ) {
        let h = tensor(9, 4, &data);
        let w = tensor(4, 3, &data[36..]);
        let v = tensor(6, 1, &data[48..]);
        let alpha = attention_coefficients(&h, &e, &w, &v, 0.2).unwrap();
        let mut sums = vec![0.0; 9];
        for (&(_, d), a) in e.pairs().iter().zip(&alpha) {
            prop_assert!(*a >= 0.0);
            sums[d] += a;
        }
        for s in sums {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn switching_only_moves_nodes_into_the_trojan_set(
        rows in prop::collection::vec(prop::collection::vec(-0.5f64..1.0, 4), 0..12),
        trojan_rows in prop::collection::vec(prop::collection::vec(-0.5f64..1.0, 4), 0..5),
        multiplier in 0.1f64..5.0,
        threshold in 0.0f64..1.0,
        at_most in any::<bool>(),
    ) {
        let table = |rs: &[Vec<f64>], offset: usize| TopNTable {
            n: 4,
            rows: rs.iter().enumerate().map(|(i, s)| {
                let mut s = s.clone();
                s.sort_by(|a, b| b.total_cmp(a));
                TopNRow { node: offset + i, scores: s, features: (0..4).map(Some).collect() }
            }).collect(),
        };
        let f0 = table(&rows, 0);
        let f1 = table(&trojan_rows, 100);
        let p0: Vec<usize> = (0..rows.len()).collect();
        let p1: Vec<usize> = (100..100 + trojan_rows.len()).collect();
        let profiles = Profiles::from_tables(&f0, &f1);
        let cfg = PostProcessConfig {
            multiplier,
            threshold,
            c2_mode: if at_most { C2Mode::AtMost } else { C2Mode::AtLeast },
            ..PostProcessConfig::default()
        };
        let r = reclassify(&p0, &p1, &f0, &profiles, &cfg).unwrap();
        prop_assert!(p1.iter().all(|n| r.trojan.contains(n)));
        prop_assert!(r.non_trojan.iter().all(|n| p0.contains(n)));
        prop_assert_eq!(r.non_trojan.len() + r.trojan.len(), p0.len() + p1.len());
        prop_assert_eq!(r.trojan.len(), p1.len() + r.switched.len());
        for e in &r.switched {
            prop_assert!(p0.contains(&e.node));
            prop_assert!(!r.non_trojan.contains(&e.node));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn loss_gradients_match_finite_differences(
        e in edge_strategy(8, 16),
        data in prop::collection::vec(-1.0f64..1.0, 8 * 5),
        labels in prop::collection::vec(0u8..2, 8),
        seed in any::<u64>(),
    ) {
        let x = tensor(8, 5, &data);
        let p = ModelParams::init(Dims { input: 5, hidden1: 8, hidden2: 8 }, 0.2, seed);
        let lists = EdgeLists::from(&e);
        let weights = ClassWeights { non_trojan: 0.8, trojan: 1.4 };
        let tensors: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        let report = grad_check(
            |t, ps| {
                let xv = t.constant(x.clone());
                let pv = ParamVars { w1: ps[0], v1: ps[1], w2: ps[2], v2: ps[3], w_head: ps[4], b_head: ps[5] };
                let out = forward_on_tape(t, xv, &pv, &lists, 0.2)?;
                weighted_loss_on_tape(t, out.logits, &labels, weights)
            },
            &tensors,
            1e-5,
            1e-4,
        )
        .unwrap();
        prop_assert!(report.within_tolerance, "{:?}", report);
    }
}
