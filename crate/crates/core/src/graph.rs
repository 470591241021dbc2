//! Wire-vertex circuit graph and its edge index.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::netlist::{GateId, GateKind, Netlist, WireId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateRole {
    Driver,
    Load,
}

/// One node per wire. Node ids coincide with wire ids of the source netlist.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CircuitGraph {
    node_names: Vec<String>,
    /// Per node: its driver (if any) first, then load gates by ascending id.
    gate_refs: Vec<Vec<(GateId, GateRole)>>,
    kind_of_gate: Vec<GateKind>,
    /// Per gate: every wire it touches, output first then inputs (deduplicated).
    gate_wires: Vec<Vec<usize>>,
}

impl CircuitGraph {
    pub fn node_count(&self) -> usize {
        self.node_names.len()
    }

    pub fn gate_count(&self) -> usize {
        self.kind_of_gate.len()
    }

    pub fn node_name(&self, node: usize) -> &str {
        &self.node_names[node]
    }

    pub fn node_of_wire(&self, wire: WireId) -> usize {
        wire
    }

    pub fn wire_of_node(&self, node: usize) -> WireId {
        node
    }

    pub fn gate_refs(&self, node: usize) -> &[(GateId, GateRole)] {
        &self.gate_refs[node]
    }

    pub fn gate_kind(&self, gate: GateId) -> GateKind {
        self.kind_of_gate[gate]
    }

    pub fn gate_wires(&self, gate: GateId) -> &[usize] {
        &self.gate_wires[gate]
    }
}

pub fn graphify(netlist: &Netlist) -> CircuitGraph {
    let n = netlist.wire_count();
    let mut gate_refs: Vec<Vec<(GateId, GateRole)>> = vec![Vec::new(); n];
    for g in &netlist.gates {
        gate_refs[g.output].push((g.id, GateRole::Driver));
    }
    let mut gate_wires = Vec::with_capacity(netlist.gate_count());
    for g in &netlist.gates {
        let mut wires = vec![g.output];
        for &w in &g.inputs {
            if !wires.contains(&w) {
                wires.push(w);
            }
            if w != g.output && gate_refs[w].last() != Some(&(g.id, GateRole::Load)) {
                gate_refs[w].push((g.id, GateRole::Load));
            }
        }
        gate_wires.push(wires);
    }
    CircuitGraph {
        node_names: netlist.wire_names().to_vec(),
        gate_refs,
        kind_of_gate: netlist.gates.iter().map(|g| g.kind).collect(),
        gate_wires,
    }
}

/// Directed edges, symmetric, with a self-loop on every node, sorted and
/// duplicate-free.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeIndex {
    node_count: usize,
    edges: Vec<(usize, usize)>,
}

impl EdgeIndex {
    /// Canonicalizes an arbitrary pair list: adds reverses and self-loops,
    /// sorts, deduplicates.
    pub fn from_pairs(node_count: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for (u, v) in pairs {
            assert!(u < node_count && v < node_count, "edge ({u},{v}) out of range");
            edges.push((u, v));
            edges.push((v, u));
        }
        edges.extend((0..node_count).map(|u| (u, u)));
        edges.sort_unstable();
        edges.dedup();
        EdgeIndex { node_count, edges }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.0).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.1).collect()
    }

    /// Undirected neighbor lists (self included), ascending.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        // sorted by (src, dst) so each list comes out ascending
        for &(u, v) in &self.edges {
            adj[u].push(v);
        }
        adj
    }

    /// `u v` per line using node names.
    pub fn dump(&self, graph: &CircuitGraph) -> String {
        let mut s = String::new();
        for &(u, v) in &self.edges {
            let _ = writeln!(s, "{} {}", graph.node_name(u), graph.node_name(v));
        }
        s
    }
}

pub fn edging(graph: &CircuitGraph) -> EdgeIndex {
    let mut pairs = Vec::new();
    for wires in &graph.gate_wires {
        let out = wires[0];
        for &w in &wires[1..] {
            pairs.push((w, out));
        }
    }
    EdgeIndex::from_pairs(graph.node_count(), pairs)
}

/// Seeds plus everything within `hops` undirected steps, with the induced
/// and remapped edge index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subgraph {
    /// Original node ids, ascending. Local id = position.
    pub nodes: Vec<usize>,
    pub edges: EdgeIndex,
    /// Local ids of the seeds, in the order the seeds were given.
    pub seed_positions: Vec<usize>,
}

impl Subgraph {
    pub fn local_of(&self, node: usize) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }
}

pub fn receptive_subgraph(edge_index: &EdgeIndex, seeds: &[usize], hops: usize) -> Subgraph {
    receptive_subgraph_with(&edge_index.neighbors(), edge_index, seeds, hops)
}

/// Variant reusing precomputed neighbor lists, for callers extracting many
/// subgraphs from one graph.
pub fn receptive_subgraph_with(
    neighbors: &[Vec<usize>],
    edge_index: &EdgeIndex,
    seeds: &[usize],
    hops: usize,
) -> Subgraph {
    let n = edge_index.node_count();
    let mut depth = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for &s in seeds {
        if depth[s] == usize::MAX {
            depth[s] = 0;
            queue.push_back(s);
        }
    }
    let mut nodes = Vec::new();
    while let Some(u) = queue.pop_front() {
        nodes.push(u);
        if depth[u] == hops {
            continue;
        }
        for &v in &neighbors[u] {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
    }
    nodes.sort_unstable();
    let mut local = vec![usize::MAX; n];
    for (i, &u) in nodes.iter().enumerate() {
        local[u] = i;
    }
    let mut edges = Vec::new();
    for &u in &nodes {
        for &v in &neighbors[u] {
            if local[v] != usize::MAX {
                edges.push((local[u], local[v]));
            }
        }
    }
    // already symmetric, sorted and self-looped: neighbors are ascending
    let edges = EdgeIndex { node_count: nodes.len(), edges };
    let seed_positions = seeds.iter().map(|&s| local[s]).collect();
    Subgraph { nodes, edges, seed_positions }
}
