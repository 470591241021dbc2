//! Synthetic benchmarks: a random gate fabric per family with inserted
//! AND-tree triggers and XOR/OR payloads.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netlist::{parse_netlist, Gate, GateKind, LabelMap, Netlist};

/// Gate-mix generators standing in for circuit families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fabric {
    Arithmetic,
    Control,
    Mixed,
}

impl Fabric {
    pub const ALL: [Fabric; 3] = [Fabric::Arithmetic, Fabric::Control, Fabric::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Fabric::Arithmetic => "arithmetic",
            Fabric::Control => "control",
            Fabric::Mixed => "mixed",
        }
    }

    fn mix(self) -> &'static [(GateKind, u32)] {
        use GateKind::*;
        match self {
            Fabric::Arithmetic => {
                &[(Xor, 24), (Xnor, 10), (And, 8), (Or, 14), (Inv, 12), (Buf, 5), (Nand, 12), (Mux, 10), (Dff, 5)]
            }
            Fabric::Control => &[(Nand, 24), (Nor, 20), (Inv, 15), (Dff, 15), (Mux, 10), (Or, 6), (And, 5), (Buf, 5)],
            Fabric::Mixed => &[
                (And, 8),
                (Or, 14),
                (Nand, 14),
                (Nor, 10),
                (Xor, 10),
                (Xnor, 4),
                (Inv, 12),
                (Buf, 10),
                (Dff, 10),
                (Mux, 8),
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadStyle {
    /// Flips the victim when the trigger fires.
    Xor,
    /// Forces the victim high when the trigger fires.
    Or,
}

impl PayloadStyle {
    fn kind(self) -> GateKind {
        match self {
            PayloadStyle::Xor => GateKind::Xor,
            PayloadStyle::Or => GateKind::Or,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub module_name: String,
    pub fabric: Fabric,
    pub inputs: usize,
    pub gates: usize,
    /// Levels of the binary AND tree; `2^depth` leaves, `2^depth − 1` gates.
    pub trigger_depth: u32,
    pub payload: PayloadStyle,
    pub insertions: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            module_name: "synth".into(),
            fabric: Fabric::Mixed,
            inputs: 24,
            gates: 200,
            trigger_depth: 3,
            payload: PayloadStyle::Xor,
            insertions: 3,
            seed: 0,
        }
    }
}

/// Picks `count` distinct wires for a new gate, favoring recent ones.
fn pick_inputs(rng: &mut ChaCha8Rng, available: usize, count: usize) -> Vec<usize> {
    const WINDOW: usize = 32;
    let mut chosen = Vec::with_capacity(count);
    while chosen.len() < count.min(available) {
        let w = if available > WINDOW && rng.gen_bool(0.7) {
            rng.gen_range(available - WINDOW..available)
        } else {
            rng.gen_range(0..available)
        };
        if !chosen.contains(&w) {
            chosen.push(w);
        }
    }
    chosen
}

fn arity(rng: &mut ChaCha8Rng, kind: GateKind) -> usize {
    match kind {
        GateKind::Inv | GateKind::Buf | GateKind::Dff => 1,
        GateKind::Mux => 3,
        _ if rng.gen_bool(0.2) => 3,
        _ => 2,
    }
}

/// Generates a netlist and its ground truth. The labeled wires are exactly
/// the trigger-tree outputs and payload outputs of every insertion.
pub fn generate_synthetic(spec: &SynthSpec) -> (Netlist, LabelMap) {
    assert!(spec.inputs >= 3, "synthetic fabric needs at least three inputs");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mix = spec.fabric.mix();
    let total: u32 = mix.iter().map(|m| m.1).sum();

    let mut names: Vec<String> = (0..spec.inputs).map(|i| format!("pi{i}")).collect();
    let mut gates: Vec<(GateKind, Vec<usize>, usize)> = Vec::new();
    for _ in 0..spec.gates {
        let mut ticket = rng.gen_range(0..total);
        let kind = mix
            .iter()
            .find(|(_, w)| {
                if ticket < *w {
                    true
                } else {
                    ticket -= w;
                    false
                }
            })
            .map(|m| m.0)
            .expect("weighted pick");
        let k = arity(&mut rng, kind);
        let inputs = pick_inputs(&mut rng, names.len(), k);
        let out = names.len();
        names.push(format!("n{out}"));
        gates.push((kind, inputs, out));
    }
    let fabric_gates = gates.len();
    let fabric_wires = names.len();

    let mut trojan = Vec::new();
    let mut used = vec![false; fabric_wires];
    let leaves_needed = 1usize << spec.trigger_depth;
    let cutoff = spec.inputs + spec.gates * 3 / 5;
    for _ in 0..spec.insertions {
        let mut loads = vec![0usize; names.len()];
        for (_, ins, _) in &gates[..fabric_gates] {
            for &w in ins {
                loads[w] += 1;
            }
        }
        let mut pool: Vec<usize> = (0..cutoff.min(fabric_wires)).filter(|&w| !used[w]).collect();
        pool.shuffle(&mut rng);
        if pool.len() < leaves_needed {
            break;
        }
        let leaves: Vec<usize> = pool[..leaves_needed].to_vec();
        let newest_leaf = *leaves.iter().max().expect("leaves");
        let victims: Vec<usize> = (newest_leaf + 1..fabric_wires)
            .filter(|&w| w >= spec.inputs && !used[w] && loads[w] > 0)
            .collect();
        let Some(&victim) = victims.choose(&mut rng) else { break };
        for &w in leaves.iter().chain([&victim]) {
            used[w] = true;
        }

        let mut level = leaves;
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len() / 2);
            for pair in level.chunks(2) {
                let out = names.len();
                names.push(format!("n{out}"));
                gates.push((GateKind::And, pair.to_vec(), out));
                trojan.push(out);
                next.push(out);
            }
            level = next;
        }
        let trigger = level[0];
        let payload = names.len();
        names.push(format!("n{payload}"));
        for (_, ins, _) in gates[..fabric_gates].iter_mut() {
            for w in ins.iter_mut() {
                if *w == victim {
                    *w = payload;
                }
            }
        }
        gates.push((spec.payload.kind(), vec![victim, trigger], payload));
        trojan.push(payload);
    }

    let mut has_load = vec![false; names.len()];
    for (_, ins, _) in &gates {
        for &w in ins {
            has_load[w] = true;
        }
    }
    let outputs: Vec<usize> = (spec.inputs..names.len()).filter(|&w| !has_load[w]).collect();
    let built = Netlist::from_parts(
        spec.module_name.clone(),
        names,
        gates
            .into_iter()
            .enumerate()
            .map(|(id, (kind, inputs, output))| Gate { id, kind, inputs, output, instance_name: format!("g{id}") })
            .collect(),
        (0..spec.inputs).collect(),
        outputs,
    )
    .expect("generator builds a valid netlist");
    let trojan_names: Vec<String> = trojan.iter().map(|&w| built.wire_name(w).to_string()).collect();
    // reparse so wire ids follow the parser's canonical order
    let netlist = parse_netlist(&built.to_string()).expect("generated text parses");
    let labels = LabelMap::from_trojan_wires(
        netlist.wire_count(),
        trojan_names.iter().map(|n| netlist.wire_id(n).expect("labeled wire exists")),
    );
    (netlist, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_insertions_means_clean() {
        let (n, l) = generate_synthetic(&SynthSpec { insertions: 0, gates: 50, ..SynthSpec::default() });
        assert_eq!(l.trojan_count(), 0);
        assert_eq!(n.gate_count(), 50);
    }

    #[test]
    fn depth_three_tree_has_eight_labeled_gates() {
        let spec = SynthSpec { insertions: 1, gates: 120, ..SynthSpec::default() };
        let (n, l) = generate_synthetic(&spec);
        assert_eq!(n.gate_count(), 128);
        assert_eq!(l.trojan_count(), 8);
        let drivers = n.drivers();
        let kinds: Vec<GateKind> =
            l.trojan_wires().map(|w| n.gates[drivers[w].expect("driven")].kind).collect();
        assert_eq!(kinds.iter().filter(|k| **k == GateKind::And).count(), 7);
        assert_eq!(kinds.iter().filter(|k| **k == GateKind::Xor).count(), 1);
        let or = generate_synthetic(&SynthSpec { payload: PayloadStyle::Or, ..spec });
        assert_eq!(or.1.trojan_count(), 8);
    }

    #[test]
    fn payload_takes_over_victim_loads() {
        let (n, l) = generate_synthetic(&SynthSpec { insertions: 1, gates: 120, seed: 4, ..SynthSpec::default() });
        let drivers = n.drivers();
        let payload = l
            .trojan_wires()
            .find(|&w| n.gates[drivers[w].unwrap()].kind == GateKind::Xor)
            .unwrap();
        let pg = &n.gates[drivers[payload].unwrap()];
        let victim = pg.inputs[0];
        let victim_loads: Vec<usize> =
            n.gates.iter().filter(|g| g.inputs.contains(&victim)).map(|g| g.id).collect();
        assert_eq!(victim_loads, vec![pg.id]);
        assert!(n.gates.iter().any(|g| g.inputs.contains(&payload)));
    }

    #[test]
    fn same_seed_same_bytes() {
        for fabric in Fabric::ALL {
            let spec = SynthSpec { fabric, seed: 9, ..SynthSpec::default() };
            let (a, la) = generate_synthetic(&spec);
            let (b, lb) = generate_synthetic(&spec);
            assert_eq!(a.to_string(), b.to_string());
            assert_eq!(la.to_text(&a), lb.to_text(&b));
            assert_eq!(la.trojan_count(), 24);
        }
        let (a, _) = generate_synthetic(&SynthSpec { seed: 1, ..SynthSpec::default() });
        let (b, _) = generate_synthetic(&SynthSpec { seed: 2, ..SynthSpec::default() });
        assert_ne!(a.to_string(), b.to_string());
    }
}
