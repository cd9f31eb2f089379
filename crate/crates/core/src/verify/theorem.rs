//! Preservation of conditional independences under un-measurement: the six
//! case families, each instantiated as a canonical minimal qubit network
//! (one node per labelled set, channels per connected component) and run
//! over seeded channel draws.
//!
//! For every case the tested independence is first confirmed on the
//! reference table, then re-checked on the un-measured table produced by
//! the inference rule.

use std::collections::BTreeMap;

use crate::classical::ci_deviation;
use crate::error::Result;
use crate::graph::{Dag, Kind, Layering, NodeId};
use crate::inference::undo_subset;
use crate::network::{reference_distribution, QuantumNetwork};
use crate::table::ProbTable;
use crate::verify::fixtures::node;
use crate::verify::{CaseResult, SuiteResult};

fn id(x: u32) -> NodeId {
    NodeId(x)
}

const TOL: f64 = 1e-9;

pub fn theorem_case_suite(seeds: &[u64]) -> Result<SuiteResult> {
    let mut suite = SuiteResult::new("theorem-cases", seeds.to_vec());
    for &seed in seeds {
        case_1_and_2(&mut suite, seed)?;
        case_3_class_a(&mut suite, seed)?;
        case_3_class_b(&mut suite, seed)?;
        case_4(&mut suite, seed)?;
        case_5(&mut suite, seed)?;
        case_6(&mut suite, seed)?;
    }
    Ok(suite)
}

fn push_ci(
    suite: &mut SuiteResult,
    name: String,
    table: &ProbTable,
    u: &[NodeId],
    v: &[NodeId],
    w: &[NodeId],
) -> Result<()> {
    let dev = ci_deviation(table, u, v, w)?;
    suite.push(CaseResult::new(name, dev < TOL, dev));
    Ok(())
}

/// Cases 1 and 2 on one network: M -> {U, W} -> L, un-measuring U.
/// Case 1: the joint over the un-measured node's layer-mates and
/// descendants is unchanged. Case 2: the joint over its non-descendants is
/// unchanged.
fn case_1_and_2(suite: &mut SuiteResult, seed: u64) -> Result<()> {
    let dag = Dag::new(
        vec![
            node(0, "M", 2, Kind::Exogenous),
            node(1, "U", 2, Kind::Internal),
            node(2, "W", 2, Kind::Internal),
            node(3, "L", 2, Kind::Terminal),
        ],
        vec![(id(0), id(1)), (id(0), id(2)), (id(1), id(3)), (id(2), id(3))],
    )?;
    let lay = Layering::from_slices(&[&[id(0)], &[id(1), id(2)], &[id(3)]]);
    let net = QuantumNetwork::seeded(dag, lay, seed, &BTreeMap::new())?;
    let table = reference_distribution(&net)?;
    let und = undo_subset(&table, net.dag(), net.layering(), 1, &[id(1)])?;

    let lw_ref = table.marginal(&[id(2), id(3)])?;
    let lw_und = und.joint.marginal(&[id(2), id(3)])?;
    let dev = lw_ref.max_norm_diff(&lw_und)?;
    suite.push(CaseResult::new(
        format!("case 1: P(L,W | un U) = P(L,W) (seed {seed})"),
        dev < TOL,
        dev,
    ));

    let mw_ref = table.marginal(&[id(0), id(2)])?;
    let mw_und = und.joint.marginal(&[id(0), id(2)])?;
    let dev = mw_ref.max_norm_diff(&mw_und)?;
    suite.push(CaseResult::new(
        format!("case 2: non-descendants unchanged (seed {seed})"),
        dev < TOL,
        dev,
    ));
    Ok(())
}

/// Case 3 class A: M1,M3 feed UR which feeds L1,L3; M2 feeds U2 which
/// feeds L2. Un-measuring the full middle layer must preserve
/// (L1 M1 _||_ L2 M2 | L3 M3) and factorize into the two blocks.
fn case_3_class_a(suite: &mut SuiteResult, seed: u64) -> Result<()> {
    let dag = Dag::new(
        vec![
            node(0, "M1", 2, Kind::Exogenous),
            node(1, "M2", 2, Kind::Exogenous),
            node(2, "M3", 2, Kind::Exogenous),
            node(3, "U2", 2, Kind::Internal),
            node(4, "UR", 2, Kind::Internal),
            node(5, "L1", 2, Kind::Terminal),
            node(6, "L2", 2, Kind::Terminal),
            node(7, "L3", 2, Kind::Terminal),
        ],
        vec![
            (id(1), id(3)),
            (id(0), id(4)),
            (id(2), id(4)),
            (id(3), id(6)),
            (id(4), id(5)),
            (id(4), id(7)),
        ],
    )?;
    let lay = Layering::from_slices(&[
        &[id(0), id(1), id(2)],
        &[id(3), id(4)],
        &[id(5), id(6), id(7)],
    ]);
    let net = QuantumNetwork::seeded(dag, lay, seed, &BTreeMap::new())?;
    let table = reference_distribution(&net)?;

    push_ci(
        suite,
        format!("case 3A reference sanity (seed {seed})"),
        &table,
        &[id(5), id(0)],
        &[id(6), id(1)],
        &[id(7), id(2)],
    )?;

    let und = undo_subset(&table, net.dag(), net.layering(), 1, &[id(3), id(4)])?;
    push_ci(
        suite,
        format!("case 3A independence survives un-measurement (seed {seed})"),
        &und.joint,
        &[id(5), id(0)],
        &[id(6), id(1)],
        &[id(7), id(2)],
    )?;

    // Block factorization: P(. | un) = P(L2 M2 | un) P(L1 L3 M1 M3 | un).
    let block_a = und.joint.marginal(&[id(1), id(6)])?;
    let block_b = und.joint.marginal(&[id(0), id(2), id(5), id(7)])?;
    let mut max_dev: f64 = 0.0;
    for (idx, p) in und.joint.iter() {
        let vars = und.joint.variables();
        let assign: Vec<(NodeId, usize)> = vars
            .iter()
            .zip(&idx)
            .map(|(v, &k)| (v.id, k))
            .collect();
        let pa: f64 = block_a.prob_of(
            &assign
                .iter()
                .copied()
                .filter(|(n, _)| *n == id(1) || *n == id(6))
                .collect::<Vec<_>>(),
        )?;
        let pb: f64 = block_b.prob_of(
            &assign
                .iter()
                .copied()
                .filter(|(n, _)| [id(0), id(2), id(5), id(7)].contains(n))
                .collect::<Vec<_>>(),
        )?;
        max_dev = max_dev.max((p - pa * pb).abs());
    }
    suite.push(CaseResult::new(
        format!("case 3A block factorization (seed {seed})"),
        max_dev < TOL,
        max_dev,
    ));
    Ok(())
}

/// Case 3 class B: M1 feeds U1 which feeds L1 and L3; M2,M3 feed UR which
/// feeds L2. The same independence must survive.
fn case_3_class_b(suite: &mut SuiteResult, seed: u64) -> Result<()> {
    let dag = Dag::new(
        vec![
            node(0, "M1", 2, Kind::Exogenous),
            node(1, "M2", 2, Kind::Exogenous),
            node(2, "M3", 2, Kind::Exogenous),
            node(3, "U1", 2, Kind::Internal),
            node(4, "UR", 2, Kind::Internal),
            node(5, "L1", 2, Kind::Terminal),
            node(6, "L2", 2, Kind::Terminal),
            node(7, "L3", 2, Kind::Terminal),
        ],
        vec![
            (id(0), id(3)),
            (id(1), id(4)),
            (id(2), id(4)),
            (id(3), id(5)),
            (id(3), id(7)),
            (id(4), id(6)),
        ],
    )?;
    let lay = Layering::from_slices(&[
        &[id(0), id(1), id(2)],
        &[id(3), id(4)],
        &[id(5), id(6), id(7)],
    ]);
    let net = QuantumNetwork::seeded(dag, lay, seed, &BTreeMap::new())?;
    let table = reference_distribution(&net)?;

    push_ci(
        suite,
        format!("case 3B reference sanity (seed {seed})"),
        &table,
        &[id(5), id(0)],
        &[id(6), id(1)],
        &[id(7), id(2)],
    )?;
    let und = undo_subset(&table, net.dag(), net.layering(), 1, &[id(3), id(4)])?;
    push_ci(
        suite,
        format!("case 3B independence survives un-measurement (seed {seed})"),
        &und.joint,
        &[id(5), id(0)],
        &[id(6), id(1)],
        &[id(7), id(2)],
    )?;
    Ok(())
}

/// Case 4: (L1 _||_ W2 | M3). W2 shares its parent with the un-measured
/// U1, so the independence is blocked quantum-mechanically by the
/// unconditioned fork, not by disconnection.
fn case_4(suite: &mut SuiteResult, seed: u64) -> Result<()> {
    let dag = Dag::new(
        vec![
            node(0, "M0", 2, Kind::Exogenous),
            node(1, "M3", 2, Kind::Exogenous),
            node(2, "U1", 2, Kind::Internal),
            node(3, "W2", 2, Kind::Terminal),
            node(4, "L1", 2, Kind::Terminal),
        ],
        vec![(id(0), id(2)), (id(0), id(3)), (id(2), id(4))],
    )?;
    let lay = Layering::from_slices(&[&[id(0), id(1)], &[id(2), id(3)], &[id(4)]]);
    let net = QuantumNetwork::seeded(dag, lay, seed, &BTreeMap::new())?;
    let table = reference_distribution(&net)?;

    push_ci(
        suite,
        format!("case 4 reference sanity (seed {seed})"),
        &table,
        &[id(4)],
        &[id(3)],
        &[id(1)],
    )?;
    let und = undo_subset(&table, net.dag(), net.layering(), 1, &[id(2)])?;
    push_ci(
        suite,
        format!("case 4 independence survives un-measurement (seed {seed})"),
        &und.joint,
        &[id(4)],
        &[id(3)],
        &[id(1)],
    )?;
    Ok(())
}

/// Case 5: (M3 _||_ L1 | W2), where M3's child in the un-measured set is
/// not a parent of L1.
fn case_5(suite: &mut SuiteResult, seed: u64) -> Result<()> {
    let dag = Dag::new(
        vec![
            node(0, "M1", 2, Kind::Exogenous),
            node(1, "M3", 2, Kind::Exogenous),
            node(2, "U3", 2, Kind::Internal),
            node(3, "UR", 2, Kind::Internal),
            node(4, "W2", 2, Kind::Terminal),
            node(5, "L1", 2, Kind::Terminal),
            node(6, "L2", 2, Kind::Terminal),
        ],
        vec![
            (id(1), id(2)),
            (id(0), id(3)),
            (id(0), id(4)),
            (id(3), id(5)),
            (id(2), id(6)),
        ],
    )?;
    let lay = Layering::from_slices(&[
        &[id(0), id(1)],
        &[id(2), id(3), id(4)],
        &[id(5), id(6)],
    ]);
    let net = QuantumNetwork::seeded(dag, lay, seed, &BTreeMap::new())?;
    let table = reference_distribution(&net)?;

    push_ci(
        suite,
        format!("case 5 reference sanity (seed {seed})"),
        &table,
        &[id(1)],
        &[id(5)],
        &[id(4)],
    )?;
    let und = undo_subset(&table, net.dag(), net.layering(), 1, &[id(2), id(3)])?;
    push_ci(
        suite,
        format!("case 5 independence survives un-measurement (seed {seed})"),
        &und.joint,
        &[id(1)],
        &[id(5)],
        &[id(4)],
    )?;
    Ok(())
}

/// Case 6: (W2 _||_ M3 | L1), both sub-cases: first with no W2 -> L1 path,
/// then with W2 -> L1 present but no M3 -> L1 path.
fn case_6(suite: &mut SuiteResult, seed: u64) -> Result<()> {
    // Sub-case (i): W2 -> L1 absent.
    let dag = Dag::new(
        vec![
            node(0, "M1", 2, Kind::Exogenous),
            node(1, "M3", 2, Kind::Exogenous),
            node(2, "U", 2, Kind::Internal),
            node(3, "W2", 2, Kind::Internal),
            node(4, "L1", 2, Kind::Terminal),
            node(5, "L2", 2, Kind::Terminal),
        ],
        vec![(id(1), id(2)), (id(0), id(3)), (id(2), id(4)), (id(3), id(5))],
    )?;
    let lay = Layering::from_slices(&[&[id(0), id(1)], &[id(2), id(3)], &[id(4), id(5)]]);
    let net = QuantumNetwork::seeded(dag, lay, seed, &BTreeMap::new())?;
    let table = reference_distribution(&net)?;
    push_ci(
        suite,
        format!("case 6(i) reference sanity (seed {seed})"),
        &table,
        &[id(3)],
        &[id(1)],
        &[id(4)],
    )?;
    let und = undo_subset(&table, net.dag(), net.layering(), 1, &[id(2)])?;
    push_ci(
        suite,
        format!("case 6(i) independence survives un-measurement (seed {seed})"),
        &und.joint,
        &[id(3)],
        &[id(1)],
        &[id(4)],
    )?;

    // Sub-case (ii): W2 -> L1 present, M3 childless, U and W2 share both
    // their parent and their child.
    let dag = Dag::new(
        vec![
            node(0, "M1", 2, Kind::Exogenous),
            node(1, "M3", 2, Kind::Exogenous),
            node(2, "U", 2, Kind::Internal),
            node(3, "W2", 2, Kind::Internal),
            node(4, "L1", 2, Kind::Terminal),
        ],
        vec![(id(0), id(2)), (id(0), id(3)), (id(2), id(4)), (id(3), id(4))],
    )?;
    let lay = Layering::from_slices(&[&[id(0), id(1)], &[id(2), id(3)], &[id(4)]]);
    let net = QuantumNetwork::seeded(dag, lay, seed.wrapping_add(1000), &BTreeMap::new())?;
    let table = reference_distribution(&net)?;
    push_ci(
        suite,
        format!("case 6(ii) reference sanity (seed {seed})"),
        &table,
        &[id(3)],
        &[id(1)],
        &[id(4)],
    )?;
    let und = undo_subset(&table, net.dag(), net.layering(), 1, &[id(2)])?;
    push_ci(
        suite,
        format!("case 6(ii) independence survives un-measurement (seed {seed})"),
        &und.joint,
        &[id(3)],
        &[id(1)],
        &[id(4)],
    )?;
    Ok(())
}
