//! Simulation and counterfactual inference for quantum causal reference
//! experiments.
//!
//! A *reference experiment* is a network of symmetric informationally
//! complete (SIC) instruments arranged on a layered DAG, wired together by
//! unbiased quantum channels, with maximally mixed inputs on the exogenous
//! nodes. This crate provides:
//!
//! - causal-structure representation and graph surgery ([`graph`]),
//! - the dense complex linear algebra behind SIC-POVMs and channels
//!   ([`quantum`]),
//! - exact network simulation and a brute-force counterfactual oracle
//!   ([`network`]),
//! - classical stochastic causal models for comparison ([`classical`]),
//! - counterfactual inference rules that operate purely on reference
//!   probability tables plus causal structure ([`inference`]),
//! - an evidence engine that validates every rule against the oracle
//!   ([`verify`]),
//! - a text model format shared with the CLI ([`model`]).

pub mod classical;
pub mod error;
pub mod graph;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod network;
pub mod quantum;
pub mod table;
pub mod tol;
pub mod verify;

pub use classical::{ClassicalModel, DoTarget};
pub use error::{Error, Result};
pub use graph::{Control, ControlAssignment, Dag, Kind, Layering, Node, NodeId, Ruleset};
pub use network::QuantumNetwork;
pub use quantum::{Channel, InterventionInstrument, SicPovm};
pub use table::ProbTable;
pub use tol::Tolerances;
