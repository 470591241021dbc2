//! Golden-free hardware Trojan detection on gate-level netlists.
//!
//! The pipeline turns a netlist into a wire graph ([`graph`]), encodes each
//! wire's BFS gate locality ([`features`]), classifies wires with a two-layer
//! graph attention network whose layer outputs are concatenated
//! (jumping knowledge) ([`model`]), and then revisits non-Trojan predictions
//! using Integrated-Gradients attribution profiles ([`explain`],
//! [`postprocess`]). [`eval`] holds metrics, family-exclusion experiments
//! and a synthetic benchmark generator.

pub mod autodiff;
pub mod eval;
pub mod explain;
pub mod features;
pub mod graph;
pub mod model;
pub mod netlist;
pub mod postprocess;
