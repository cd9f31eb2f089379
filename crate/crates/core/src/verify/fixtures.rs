//! Canonical networks used across the verification suites.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Dag, Kind, Layering, Node, NodeId};
use crate::linalg::{c, haar_unitary};
use crate::network::{QuantumNetwork, SubChannel};
use crate::quantum::Channel;
use crate::tol::Tolerances;

/// Weyl-Heisenberg fiducial for dimension 4, found numerically by
/// least-squares on the overlap residuals; max deviation from the SIC
/// overlap condition is at floating-point precision.
pub const D4_FIDUCIAL: [(f64, f64); 4] = [
    (0.29802920318270115, -0.26806347546354792),
    (-0.068909968959496928, 0.48079909639623819),
    (0.75028485585320681, 0.0),
    (-0.19915350650405095, -0.02854344372573266),
];

pub fn d4_fiducial_vec() -> Vec<Complex64> {
    D4_FIDUCIAL.iter().map(|&(re, im)| c(re, im)).collect()
}

pub fn node(i: u32, name: &str, dim: usize, kind: Kind) -> Node {
    Node {
        id: NodeId(i),
        name: name.into(),
        dim,
        kind,
    }
}

fn id(x: u32) -> NodeId {
    NodeId(x)
}

/// The fixed 4-node diamond LDAG used for no-fine-tuning statistics:
/// A -> B, A -> C, B -> D, C -> D with layers [{A},{B,C},{D}], all qubits.
pub fn diamond_dag() -> (Dag, Layering) {
    let dag = Dag::new(
        vec![
            node(0, "A", 2, Kind::Exogenous),
            node(1, "B", 2, Kind::Internal),
            node(2, "C", 2, Kind::Internal),
            node(3, "D", 2, Kind::Terminal),
        ],
        vec![(id(0), id(1)), (id(0), id(2)), (id(1), id(3)), (id(2), id(3))],
    )
    .unwrap();
    let lay = Layering::from_slices(&[&[id(0)], &[id(1), id(2)], &[id(3)]]);
    (dag, lay)
}

pub fn diamond_network(seed: u64) -> Result<QuantumNetwork> {
    let (dag, lay) = diamond_dag();
    QuantumNetwork::seeded(dag, lay, seed, &BTreeMap::new())
}

/// Three-node qubit chain X -> Y -> Z with seeded unbiased gaps.
pub fn chain_network(seed: u64) -> Result<QuantumNetwork> {
    let dag = Dag::new(
        vec![
            node(0, "X", 2, Kind::Exogenous),
            node(1, "Y", 2, Kind::Internal),
            node(2, "Z", 2, Kind::Terminal),
        ],
        vec![(id(0), id(1)), (id(1), id(2))],
    )
    .unwrap();
    let lay = Layering::from_slices(&[&[id(0)], &[id(1)], &[id(2)]]);
    QuantumNetwork::seeded(dag, lay, seed, &BTreeMap::new())
}

/// A d=4 hub prepared maximally mixed, measured, then routed through a
/// gap channel to two qubit children measured separately. With a Haar
/// unitary gap this is the common-cause factorization counterexample; with
/// the identity gap the children read out the two halves of the hub's
/// post-measurement state directly.
pub fn entangling_fork_network(seed: u64, identity_gap: bool) -> Result<QuantumNetwork> {
    let dag = Dag::new(
        vec![
            node(0, "C", 4, Kind::Exogenous),
            node(1, "X1", 2, Kind::Terminal),
            node(2, "X2", 2, Kind::Terminal),
        ],
        vec![(id(0), id(1)), (id(0), id(2))],
    )
    .unwrap();
    let lay = Layering::from_slices(&[&[id(0)], &[id(1), id(2)]]);
    let channel = if identity_gap {
        Channel::identity(4)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Channel::from_unitary(&haar_unitary(4, &mut rng))?
    };
    let gap = vec![SubChannel {
        sources: vec![id(0)],
        targets: vec![id(1), id(2)],
        channel,
    }];
    let fiducials: BTreeMap<usize, Vec<Complex64>> = [(4usize, d4_fiducial_vec())].into();
    QuantumNetwork::new(dag, lay, vec![gap], &fiducials, Tolerances::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::sic_povm;

    #[test]
    fn d4_fiducial_generates_a_sic() {
        let povm = sic_povm(4, Some(&d4_fiducial_vec())).unwrap();
        assert_eq!(povm.outcomes(), 16);
    }

    #[test]
    fn fixtures_build() {
        diamond_network(0).unwrap();
        chain_network(0).unwrap();
        entangling_fork_network(0, false).unwrap();
        entangling_fork_network(0, true).unwrap();
    }
}
