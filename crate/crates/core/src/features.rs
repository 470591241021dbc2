//! Per-wire structural features over an L-gate BFS locality.
//!
//! A feature vector holds L one-hot gate-kind blocks (`G1_AND` ...
//! `GL_NONE`) followed by the strict upper triangle of the gate adjacency
//! matrix (`Adj-12`, `Adj-13`, ..., `Adj-(L-1)L`). Padding slots carry the
//! NONE kind and zero adjacency.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::graph::CircuitGraph;
use crate::netlist::{GateId, GateKind, LabelMap};

pub const DEFAULT_LOCALITY: usize = 7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalityConfig {
    /// Gates per locality.
    pub gates: usize,
}

impl Default for LocalityConfig {
    fn default() -> Self {
        LocalityConfig { gates: DEFAULT_LOCALITY }
    }
}

impl LocalityConfig {
    pub fn new(gates: usize) -> Self {
        assert!(gates >= 1, "locality must contain at least one gate");
        LocalityConfig { gates }
    }

    pub fn feature_len(&self) -> usize {
        let l = self.gates;
        l * GateKind::VOCAB_SIZE + l * (l - 1) / 2
    }

    /// Index of the adjacency slot for BFS ranks `i < j` (0-based).
    pub fn adjacency_slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.gates);
        let l = self.gates;
        // rows 0..i of the strict upper triangle hold (l-1) + ... + (l-i) entries
        let before = i * (2 * l - i - 1) / 2;
        l * GateKind::VOCAB_SIZE + before + (j - i - 1)
    }

    pub fn kind_slot(&self, rank: usize, kind: GateKind) -> usize {
        rank * GateKind::VOCAB_SIZE + kind.index()
    }
}

/// What a feature slot means; used by rule rendering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    /// 1-based rank and the kind at that rank.
    Kind(usize, GateKind),
    /// 1-based ranks `i < j`.
    Adjacent(usize, usize),
}

pub fn slot_meaning(cfg: &LocalityConfig, index: usize) -> Option<Slot> {
    let kinds = cfg.gates * GateKind::VOCAB_SIZE;
    if index < kinds {
        let rank = index / GateKind::VOCAB_SIZE;
        return Some(Slot::Kind(rank + 1, GateKind::VOCAB[index % GateKind::VOCAB_SIZE]));
    }
    let mut k = index - kinds;
    for i in 0..cfg.gates {
        let row = cfg.gates - i - 1;
        if k < row {
            return Some(Slot::Adjacent(i + 1, i + k + 2));
        }
        k -= row;
    }
    None
}

pub fn feature_names(cfg: &LocalityConfig) -> Vec<String> {
    let l = cfg.gates;
    let mut names = Vec::with_capacity(cfg.feature_len());
    for rank in 1..=l {
        for kind in GateKind::VOCAB {
            names.push(format!("G{rank}_{}", kind.name()));
        }
    }
    for i in 1..=l {
        for j in i + 1..=l {
            // two-digit ranks need a separator to stay unambiguous
            if l < 10 {
                names.push(format!("Adj-{i}{j}"));
            } else {
                names.push(format!("Adj-{i}-{j}"));
            }
        }
    }
    names
}

/// Gates in BFS order around `wire`, exactly `gates` long. `None` entries
/// are padding.
///
/// The search starts from the wire's driver, then its loads by ascending
/// gate id. Two gates are neighbors when they share a wire; each frontier
/// is expanded in ascending gate-id order.
pub fn bfs_locality(graph: &CircuitGraph, wire: usize, gates: usize) -> Vec<Option<GateId>> {
    let mut visited = vec![false; graph.gate_count()];
    let mut queue = VecDeque::new();
    for &(g, _) in graph.gate_refs(wire) {
        if !visited[g] {
            visited[g] = true;
            queue.push_back(g);
        }
    }
    let mut order = Vec::with_capacity(gates);
    let mut nbrs = Vec::new();
    while order.len() < gates {
        let Some(g) = queue.pop_front() else { break };
        order.push(Some(g));
        nbrs.clear();
        for &w in graph.gate_wires(g) {
            for &(h, _) in graph.gate_refs(w) {
                if !visited[h] {
                    nbrs.push(h);
                }
            }
        }
        nbrs.sort_unstable();
        nbrs.dedup();
        for &h in &nbrs {
            visited[h] = true;
            queue.push_back(h);
        }
    }
    order.resize(gates, None);
    order
}

fn share_wire(graph: &CircuitGraph, a: GateId, b: GateId) -> bool {
    let wb = graph.gate_wires(b);
    graph.gate_wires(a).iter().any(|w| wb.contains(w))
}

pub fn structural_features(graph: &CircuitGraph, cfg: &LocalityConfig, wire: usize) -> Vec<f64> {
    let order = bfs_locality(graph, wire, cfg.gates);
    let mut f = vec![0.0; cfg.feature_len()];
    for (rank, g) in order.iter().enumerate() {
        let kind = g.map_or(GateKind::None, |g| graph.gate_kind(g));
        f[cfg.kind_slot(rank, kind)] = 1.0;
    }
    for i in 0..cfg.gates {
        let Some(a) = order[i] else { continue };
        for j in i + 1..cfg.gates {
            let Some(b) = order[j] else { continue };
            if share_wire(graph, a, b) {
                f[cfg.adjacency_slot(i, j)] = 1.0;
            }
        }
    }
    f
}

/// Feature matrix and labels in node order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<u8>,
    pub locality: LocalityConfig,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = feature_names(&self.locality).join(",");
        s.push_str(",label\n");
        for (i, label) in self.y.iter().enumerate() {
            for v in self.x.row(i) {
                let _ = write!(s, "{},", *v as u8);
            }
            let _ = writeln!(s, "{label}");
        }
        s
    }
}

pub fn feature_matrix(graph: &CircuitGraph, cfg: &LocalityConfig) -> Tensor {
    let dim = cfg.feature_len();
    let mut data = Vec::with_capacity(graph.node_count() * dim);
    for node in 0..graph.node_count() {
        data.extend(structural_features(graph, cfg, node));
    }
    Tensor::from_vec(graph.node_count(), dim, data)
}

pub fn build_dataset(graph: &CircuitGraph, labels: &LabelMap, cfg: &LocalityConfig) -> Dataset {
    assert_eq!(labels.len(), graph.node_count(), "label map must cover every wire");
    Dataset { x: feature_matrix(graph, cfg), y: labels.classes(), locality: cfg.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::graphify;
    use crate::netlist::{parse_labels, parse_netlist};

    const CHAIN: &str = "module m(a,b,y); wire w; and g1(w,a,b); or g2(y,w,a); endmodule";

    #[test]
    fn isolated_wire_is_all_padding() {
        let n = parse_netlist("module m(a,b,y); wire w; and g1(y,a,b); endmodule").unwrap();
        let g = graphify(&n);
        let w = n.wire_id("w").unwrap();
        assert_eq!(bfs_locality(&g, w, 4), vec![None; 4]);
        let cfg = LocalityConfig::new(4);
        let f = structural_features(&g, &cfg, w);
        for rank in 0..4 {
            assert_eq!(f[cfg.kind_slot(rank, GateKind::None)], 1.0);
        }
        assert_eq!(f.iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn chain_locality_and_encoding() {
        let n = parse_netlist(CHAIN).unwrap();
        let g = graphify(&n);
        let w = n.wire_id("w").unwrap();
        assert_eq!(bfs_locality(&g, w, 3), vec![Some(0), Some(1), None]);
        assert_eq!(bfs_locality(&g, w, 1), vec![Some(0)]);

        let cfg = LocalityConfig::new(3);
        let f = structural_features(&g, &cfg, w);
        let names = feature_names(&cfg);
        let on: Vec<&str> = f.iter().zip(&names).filter(|(v, _)| **v == 1.0).map(|(_, n)| n.as_str()).collect();
        assert_eq!(on, ["G1_AND", "G2_OR", "G3_NONE", "Adj-12"]);
    }

    #[test]
    fn names_line_up_with_vector() {
        let two = feature_names(&LocalityConfig::new(2));
        assert_eq!(two.len(), 23);
        assert_eq!(&two[22], "Adj-12");
        assert_eq!(&two[0], "G1_AND");
        let seven = LocalityConfig::new(7);
        let names = feature_names(&seven);
        assert_eq!(names.len(), 98);
        assert_eq!(seven.feature_len(), 98);
        assert!(names.contains(&"G2_AND".to_string()));
        assert_eq!(names[seven.adjacency_slot(1, 2)], "Adj-23");
        assert_eq!(names[seven.kind_slot(1, GateKind::And)], "G2_AND");
        for (i, name) in names.iter().enumerate() {
            let rendered = match slot_meaning(&seven, i).unwrap() {
                Slot::Kind(r, k) => format!("G{r}_{}", k.name()),
                Slot::Adjacent(a, b) => format!("Adj-{a}{b}"),
            };
            assert_eq!(&rendered, name);
        }
        assert_eq!(slot_meaning(&seven, 98), None);
        assert_eq!(feature_names(&LocalityConfig::new(10))[110], "Adj-1-2");
    }

    #[test]
    fn dataset_follows_node_order() {
        let n = parse_netlist(CHAIN).unwrap();
        let g = graphify(&n);
        let labels = parse_labels("w", &n).unwrap();
        let d = build_dataset(&g, &labels, &LocalityConfig::default());
        assert_eq!(d.len(), 4);
        assert_eq!(d.y, vec![0, 0, 1, 0]);
        assert_eq!(d.x.cols(), 98);

        let clean = build_dataset(&g, &LabelMap::all_clean(n.wire_count()), &LocalityConfig::default());
        assert!(clean.y.iter().all(|&y| y == 0));

        let e = parse_netlist("module m(); endmodule").unwrap();
        let ge = graphify(&e);
        let d = build_dataset(&ge, &LabelMap::all_clean(0), &LocalityConfig::default());
        assert!(d.is_empty());
    }

    #[test]
    fn csv_header_and_rows() {
        let n = parse_netlist(CHAIN).unwrap();
        let g = graphify(&n);
        let cfg = LocalityConfig::new(2);
        let d = build_dataset(&g, &parse_labels("w", &n).unwrap(), &cfg);
        let csv = d.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("G1_AND,") && header.ends_with(",Adj-12,label"));
        assert_eq!(lines.count(), 4);
    }
}
