//! Markov-condition suites: implied independences on simulated tables,
//! reversal symmetry, and no-fine-tuning typicality statistics.

use crate::classical::{ci_deviation, ClassicalModel};
use crate::error::Result;
use crate::graph::{implied_independences, NodeId, Ruleset};
use crate::network::{reference_distribution, QuantumNetwork};
use crate::verify::fixtures::diamond_network;
use crate::verify::{CaseResult, SuiteResult};

/// Check every independence implied by the ruleset on the network's
/// simulated reference table; for the quantum ruleset the reversed DAG is
/// checked as well (its implied set must coincide and must also hold).
pub fn markov_suite(net: &QuantumNetwork, rules: Ruleset) -> Result<SuiteResult> {
    let mut suite = SuiteResult::new(format!("markov-{rules}"), vec![]);
    let table = reference_distribution(net)?;
    let tol = net.tolerances().probability;

    for ind in implied_independences(net.dag(), rules)? {
        let w: Vec<NodeId> = ind.w.iter().copied().collect();
        let dev = ci_deviation(&table, &[ind.u], &[ind.v], &w)?;
        suite.push(CaseResult::new(format!("{ind}"), dev <= tol, dev));
    }

    if rules == Ruleset::Quantum {
        let reversed = net.dag().reverse();
        let a = implied_independences(net.dag(), rules)?;
        let b = implied_independences(&reversed, rules)?;
        suite.push(
            CaseResult::new("reversed DAG implies the same separations", a == b, 0.0)
                .with_details(format!("{} vs {} triples", a.len(), b.len())),
        );
        for ind in b {
            let w: Vec<NodeId> = ind.w.iter().copied().collect();
            let dev = ci_deviation(&table, &[ind.u], &[ind.v], &w)?;
            suite.push(CaseResult::new(format!("reversed {ind}"), dev <= tol, dev));
        }
    }
    Ok(suite)
}

/// The classical counterpart: implied independences of the model's DAG
/// checked against its factorized joint.
pub fn markov_suite_classical(model: &ClassicalModel) -> Result<SuiteResult> {
    let mut suite = SuiteResult::new("markov-classical-model", vec![]);
    let table = model.joint()?;
    for ind in implied_independences(model.dag(), Ruleset::Classical)? {
        let w: Vec<NodeId> = ind.w.iter().copied().collect();
        let dev = ci_deviation(&table, &[ind.u], &[ind.v], &w)?;
        suite.push(CaseResult::new(format!("{ind}"), dev <= 1e-9, dev));
    }
    Ok(suite)
}

/// No-fine-tuning typicality on the fixed 4-node diamond LDAG: every
/// independence NOT implied by the quantum ruleset must be violated by at
/// least `violation_floor` in at least `min_violating` of the seeded
/// networks, while the implied ones must hold in all of them.
pub fn nft_suite(seeds: &[u64], violation_floor: f64, min_violating: usize) -> Result<SuiteResult> {
    let mut suite = SuiteResult::new("nft-typicality", seeds.to_vec());
    let first = diamond_network(seeds.first().copied().unwrap_or(0))?;
    let implied = implied_independences(first.dag(), Ruleset::Quantum)?;

    // All candidate triples over singleton pairs.
    let ids: Vec<NodeId> = first.dag().node_ids().collect();
    let mut candidates = Vec::new();
    for (i, &u) in ids.iter().enumerate() {
        for &v in &ids[i + 1..] {
            let rest: Vec<NodeId> = ids.iter().copied().filter(|&n| n != u && n != v).collect();
            for mask in 0..(1usize << rest.len()) {
                let w: Vec<NodeId> = rest
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mask >> k & 1 == 1)
                    .map(|(_, &n)| n)
                    .collect();
                candidates.push((u, v, w));
            }
        }
    }

    let tables: Vec<_> = seeds
        .iter()
        .map(|&s| reference_distribution(&diamond_network(s)?))
        .collect::<Result<_>>()?;

    for (u, v, w) in candidates {
        let is_implied = implied
            .iter()
            .any(|ind| ind.u == u && ind.v == v && ind.w == w.iter().copied().collect());
        let devs: Vec<f64> = tables
            .iter()
            .map(|t| ci_deviation(t, &[u], &[v], &w))
            .collect::<Result<_>>()?;
        let wstr: Vec<String> = w.iter().map(|n| n.to_string()).collect();
        let name = format!("({u} _||_ {v} | {{{}}})", wstr.join(","));
        if is_implied {
            let max_dev = devs.iter().copied().fold(0.0, f64::max);
            suite.push(
                CaseResult::new(format!("implied {name}"), max_dev <= 1e-9, max_dev)
                    .with_details(format!("max over {} seeds", seeds.len())),
            );
        } else {
            let violating = devs.iter().filter(|&&d| d >= violation_floor).count();
            let min_dev = devs.iter().copied().fold(f64::INFINITY, f64::min);
            suite.push(
                CaseResult::new(
                    format!("not implied {name}"),
                    violating >= min_violating,
                    min_dev,
                )
                .with_details(format!(
                    "violated >= {violation_floor:.0e} in {violating}/{} seeds",
                    seeds.len()
                )),
            );
        }
    }
    Ok(suite)
}
