//! Classical stochastic causal models: conditional probability tables on a
//! DAG, the joint by factorization, truncated-factorization interventions,
//! and un-measurement by marginalization.
//!
//! Interventions are implemented in the perfect do-conditional regime; a
//! noisy intervention is represented by a target distribution over the
//! intervened node.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{implied_independences, Dag, NodeId, Ruleset};
use crate::linalg::{for_each_index, ravel};
use crate::table::{ProbTable, Variable};

const DEFAULT_JOINT_CAP: usize = 1 << 20;
const ROW_NORMALIZATION_TOL: f64 = 1e-12;

/// Conditional probability table for one node: rows indexed by the parent
/// configuration (parents ascending by id, row-major), each row a
/// distribution over the node's outcomes.
#[derive(Clone, Debug)]
pub struct Cpt {
    pub node: NodeId,
    /// Row-major over parent configurations x node outcomes.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ClassicalModel {
    dag: Dag,
    cpts: BTreeMap<NodeId, Cpt>,
}

impl ClassicalModel {
    pub fn new(dag: Dag, cpts: Vec<Cpt>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for cpt in cpts {
            dag.node(cpt.node)?;
            map.insert(cpt.node, cpt);
        }
        for node in dag.node_ids() {
            let cpt = map
                .get(&node)
                .ok_or_else(|| Error::BadCpt(format!("missing table for node {node}")))?;
            let card = dag.dim(node)?;
            let parent_configs: usize = dag
                .parents(node)
                .iter()
                .map(|&p| dag.dim(p).unwrap())
                .product();
            let expected = parent_configs * card;
            if cpt.values.len() != expected {
                return Err(Error::BadCpt(format!(
                    "node {node}: {} entries, expected {expected}",
                    cpt.values.len()
                )));
            }
            for row in 0..parent_configs {
                let row_vals = &cpt.values[row * card..(row + 1) * card];
                if row_vals.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(Error::BadCpt(format!(
                        "node {node}: probabilities outside [0,1]"
                    )));
                }
                let total: f64 = row_vals.iter().sum();
                if (total - 1.0).abs() > ROW_NORMALIZATION_TOL {
                    return Err(Error::BadCpt(format!(
                        "node {node}: row {row} sums to {total}"
                    )));
                }
            }
        }
        Ok(ClassicalModel { dag, cpts: map })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn cpt(&self, node: NodeId) -> &Cpt {
        &self.cpts[&node]
    }

    /// P(node = k | parent assignment). Parents are read ascending by id.
    fn local_prob(&self, node: NodeId, k: usize, assignment: &BTreeMap<NodeId, usize>) -> f64 {
        let parents: Vec<NodeId> = self.dag.parents(node).into_iter().collect();
        let parent_cards: Vec<usize> =
            parents.iter().map(|&p| self.dag.dim(p).unwrap()).collect();
        let parent_idx: Vec<usize> = parents.iter().map(|p| assignment[p]).collect();
        let row = ravel(&parent_idx, &parent_cards);
        let card = self.dag.dim(node).unwrap();
        self.cpts[&node].values[row * card + k]
    }

    fn table_variables(&self) -> Vec<Variable> {
        self.dag
            .nodes()
            .iter()
            .map(|n| Variable {
                id: n.id,
                name: n.name.clone(),
                card: n.dim,
            })
            .collect()
    }

    /// Joint distribution by the factorization `P(x) = prod_i P(x_i | pa_i)`.
    /// Factors are multiplied in ascending node-id order.
    pub fn joint(&self) -> Result<ProbTable> {
        let variables = self.table_variables();
        let cards: Vec<usize> = variables.iter().map(|v| v.card).collect();
        let size: usize = cards.iter().product();
        if size > DEFAULT_JOINT_CAP {
            return Err(Error::EnumerationCap(size, DEFAULT_JOINT_CAP));
        }
        let ids: Vec<NodeId> = variables.iter().map(|v| v.id).collect();
        let mut values = Vec::with_capacity(size);
        for_each_index(&cards, |idx| {
            let assignment: BTreeMap<NodeId, usize> =
                ids.iter().copied().zip(idx.iter().copied()).collect();
            let mut p = 1.0;
            for (pos, &node) in ids.iter().enumerate() {
                p *= self.local_prob(node, idx[pos], &assignment);
            }
            values.push(p);
        });
        ProbTable::new(variables, values)
    }
}

/// The post-intervention model: incoming edges of `w` deleted and its table
/// replaced by the intervention target, a valid causal model in its own
/// right.
pub fn intervened_model(
    model: &ClassicalModel,
    w: NodeId,
    target: &DoTarget,
) -> Result<ClassicalModel> {
    let card = model.dag.dim(w)?;
    let dist = target.as_dist(card, w)?;
    let cut = model.dag.surgery_do(w)?;
    let cpts = cut
        .node_ids()
        .map(|n| {
            if n == w {
                Cpt {
                    node: n,
                    values: dist.clone(),
                }
            } else {
                model.cpts[&n].clone()
            }
        })
        .collect();
    ClassicalModel::new(cut, cpts)
}

/// Intervention target for [`classical_do`].
#[derive(Clone, Debug)]
pub enum DoTarget {
    /// Perfect do: pin the named outcome.
    Value(usize),
    /// Noisy do: re-draw from this distribution.
    Dist(Vec<f64>),
}

impl DoTarget {
    fn as_dist(&self, card: usize, w: NodeId) -> Result<Vec<f64>> {
        match self {
            DoTarget::Value(k) => {
                if *k >= card {
                    return Err(Error::BadTarget(format!(
                        "outcome {k} out of range for node {w} with {card} outcomes"
                    )));
                }
                let mut d = vec![0.0; card];
                d[*k] = 1.0;
                Ok(d)
            }
            DoTarget::Dist(d) => {
                if d.len() != card {
                    return Err(Error::BadTarget(format!(
                        "target has {} entries, expected {card}",
                        d.len()
                    )));
                }
                let total: f64 = d.iter().sum();
                if (total - 1.0).abs() > 1e-9 || d.iter().any(|&p| p < 0.0) {
                    return Err(Error::BadTarget(format!("target sums to {total}")));
                }
                Ok(d.clone())
            }
        }
    }
}

/// Truncated factorization:
/// `P(x | do) = P'(w) * prod_{i != W} P(x_i | pa_i)`.
pub fn classical_do(model: &ClassicalModel, w: NodeId, target: &DoTarget) -> Result<ProbTable> {
    intervened_model(model, w, target)?.joint()
}

/// Un-measurement of a classical variable: not performing the measurement is
/// equivalent to performing it and summing over its outcomes.
pub fn classical_undo(table: &ProbTable, z: NodeId) -> Result<ProbTable> {
    table.sum_out(z)
}

/// One conditional-independence violation found by [`cmc_check`].
#[derive(Clone, Debug)]
pub struct CmcViolation {
    pub u: NodeId,
    pub v: NodeId,
    pub w: Vec<NodeId>,
    pub deviation: f64,
}

#[derive(Clone, Debug)]
pub struct CmcReport {
    pub checked: usize,
    pub violations: Vec<CmcViolation>,
    pub max_deviation: f64,
}

impl CmcReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Verify every independence implied by the classical ruleset on the DAG
/// against the table, at the given tolerance.
pub fn cmc_check(table: &ProbTable, dag: &Dag, tol: f64) -> Result<CmcReport> {
    let mut report = CmcReport {
        checked: 0,
        violations: Vec::new(),
        max_deviation: 0.0,
    };
    for ind in implied_independences(dag, Ruleset::Classical)? {
        let w: Vec<NodeId> = ind.w.iter().copied().collect();
        let dev = ci_deviation(table, &[ind.u], &[ind.v], &w)?;
        report.checked += 1;
        report.max_deviation = report.max_deviation.max(dev);
        if dev > tol {
            report.violations.push(CmcViolation {
                u: ind.u,
                v: ind.v,
                w,
                deviation: dev,
            });
        }
    }
    Ok(report)
}

/// Max over cells with P(w) > 1e-12 of |P(u,v|w) - P(u|w) P(v|w)|.
pub fn ci_deviation(
    table: &ProbTable,
    u: &[NodeId],
    v: &[NodeId],
    w: &[NodeId],
) -> Result<f64> {
    let mut seen: Vec<NodeId> = Vec::new();
    for &n in u.iter().chain(v).chain(w) {
        if seen.contains(&n) {
            return Err(Error::OverlappingSets(n));
        }
        seen.push(n);
    }
    let all: Vec<NodeId> = seen.clone();
    let joint = table.marginal(&all)?;
    let uw: Vec<NodeId> = u.iter().chain(w).copied().collect();
    let vw: Vec<NodeId> = v.iter().chain(w).copied().collect();
    let m_uw = table.marginal(&uw)?;
    let m_vw = table.marginal(&vw)?;
    let m_w = table.marginal(w)?;

    let u_cards: Vec<usize> = u
        .iter()
        .map(|&n| table.variables()[table.var_position(n).unwrap()].card)
        .collect();
    let v_cards: Vec<usize> = v
        .iter()
        .map(|&n| table.variables()[table.var_position(n).unwrap()].card)
        .collect();
    let w_cards: Vec<usize> = w
        .iter()
        .map(|&n| table.variables()[table.var_position(n).unwrap()].card)
        .collect();

    let mut max_dev: f64 = 0.0;
    for_each_index(&w_cards, |w_idx| {
        let w_assign: Vec<(NodeId, usize)> =
            w.iter().copied().zip(w_idx.iter().copied()).collect();
        let pw = m_w.prob_of(&w_assign).unwrap_or(1.0);
        if pw <= 1e-12 {
            return;
        }
        for_each_index(&u_cards, |u_idx| {
            let u_assign: Vec<(NodeId, usize)> =
                u.iter().copied().zip(u_idx.iter().copied()).collect();
            for_each_index(&v_cards, |v_idx| {
                let v_assign: Vec<(NodeId, usize)> =
                    v.iter().copied().zip(v_idx.iter().copied()).collect();
                let mut uvw = u_assign.clone();
                uvw.extend_from_slice(&v_assign);
                uvw.extend_from_slice(&w_assign);
                let p_uvw = joint.prob_of(&uvw).unwrap();
                let mut uw_assign = u_assign.clone();
                uw_assign.extend_from_slice(&w_assign);
                let p_uw = m_uw.prob_of(&uw_assign).unwrap();
                let mut vw_assign = v_assign.clone();
                vw_assign.extend_from_slice(&w_assign);
                let p_vw = m_vw.prob_of(&vw_assign).unwrap();
                let dev = (p_uvw / pw - (p_uw / pw) * (p_vw / pw)).abs();
                max_dev = max_dev.max(dev);
            });
        });
    });
    Ok(max_dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Kind, Node};

    fn id(x: u32) -> NodeId {
        NodeId(x)
    }

    fn node(i: u32, name: &str, dim: usize, kind: Kind) -> Node {
        Node {
            id: id(i),
            name: name.into(),
            dim,
            kind,
        }
    }

    /// A -> B with P(A) = (.5, .5) and B copying A.
    fn copy_chain() -> ClassicalModel {
        let dag = Dag::new(
            vec![
                node(0, "A", 2, Kind::Exogenous),
                node(1, "B", 2, Kind::Terminal),
            ],
            vec![(id(0), id(1))],
        )
        .unwrap();
        ClassicalModel::new(
            dag,
            vec![
                Cpt {
                    node: id(0),
                    values: vec![0.5, 0.5],
                },
                Cpt {
                    node: id(1),
                    values: vec![1.0, 0.0, 0.0, 1.0],
                },
            ],
        )
        .unwrap()
    }

    /// M, K -> C with C = M xor K, all uniform inputs.
    fn one_time_pad() -> ClassicalModel {
        let dag = Dag::new(
            vec![
                node(0, "M", 2, Kind::Exogenous),
                node(1, "K", 2, Kind::Exogenous),
                node(2, "C", 2, Kind::Terminal),
            ],
            vec![(id(0), id(2)), (id(1), id(2))],
        )
        .unwrap();
        ClassicalModel::new(
            dag,
            vec![
                Cpt {
                    node: id(0),
                    values: vec![0.5, 0.5],
                },
                Cpt {
                    node: id(1),
                    values: vec![0.5, 0.5],
                },
                Cpt {
                    node: id(2),
                    // rows: (m,k) = (0,0),(0,1),(1,0),(1,1)
                    values: vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
                },
            ],
        )
        .unwrap()
    }

    /// A -> B -> C, all binary, noisy copies.
    fn abc_chain() -> ClassicalModel {
        let dag = Dag::new(
            vec![
                node(0, "A", 2, Kind::Exogenous),
                node(1, "B", 2, Kind::Internal),
                node(2, "C", 2, Kind::Terminal),
            ],
            vec![(id(0), id(1)), (id(1), id(2))],
        )
        .unwrap();
        ClassicalModel::new(
            dag,
            vec![
                Cpt {
                    node: id(0),
                    values: vec![0.25, 0.75],
                },
                Cpt {
                    node: id(1),
                    values: vec![0.875, 0.125, 0.125, 0.875],
                },
                Cpt {
                    node: id(2),
                    values: vec![0.75, 0.25, 0.5, 0.5],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn copy_chain_joint_is_diagonal() {
        let joint = copy_chain().joint().unwrap();
        assert_eq!(joint.values(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn disconnected_nodes_give_product() {
        let dag = Dag::new(
            vec![
                node(0, "A", 2, Kind::Exogenous),
                node(1, "B", 3, Kind::Exogenous),
            ],
            vec![],
        )
        .unwrap();
        let m = ClassicalModel::new(
            dag,
            vec![
                Cpt {
                    node: id(0),
                    values: vec![0.25, 0.75],
                },
                Cpt {
                    node: id(1),
                    values: vec![0.5, 0.25, 0.25],
                },
            ],
        )
        .unwrap();
        let joint = m.joint().unwrap();
        assert_eq!(
            joint.values(),
            &[0.125, 0.0625, 0.0625, 0.375, 0.1875, 0.1875]
        );
        assert!((joint.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cpt_rows_must_normalize() {
        let dag = Dag::new(vec![node(0, "A", 2, Kind::Exogenous)], vec![]).unwrap();
        let bad = ClassicalModel::new(
            dag,
            vec![Cpt {
                node: id(0),
                values: vec![0.6, 0.6],
            }],
        );
        assert!(matches!(bad, Err(Error::BadCpt(_))));
    }

    #[test]
    fn do_fine_grained_matches_truncated_factorization_bitwise() {
        let m = abc_chain();
        let got = classical_do(&m, id(1), &DoTarget::Value(1)).unwrap();
        // Independent oracle: delta(b,1) * P(a) * P(c|b), multiplied in
        // ascending node order, exactly as the factorization states.
        let pa = [0.25, 0.75];
        let pcb = [[0.75, 0.25], [0.5, 0.5]];
        let mut want = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let delta = if b == 1 { 1.0 } else { 0.0 };
                    want.push(pa[a] * delta * pcb[b][c]);
                }
            }
        }
        assert_eq!(got.values(), want.as_slice());
        // Pinned-outcome marginal is exactly 1.
        assert_eq!(got.prob_of(&[(id(1), 1)]).unwrap(), 1.0);
    }

    #[test]
    fn do_on_exogenous_with_reference_marginal_is_identity() {
        let m = abc_chain();
        let before = m.joint().unwrap();
        let after = classical_do(&m, id(0), &DoTarget::Dist(vec![0.25, 0.75])).unwrap();
        assert_eq!(before.values(), after.values());
    }

    #[test]
    fn sequential_dos_commute() {
        let m = abc_chain();
        let ta = DoTarget::Value(1);
        let tb = DoTarget::Dist(vec![0.25, 0.75]);
        let ab = intervened_model(&intervened_model(&m, id(0), &ta).unwrap(), id(1), &tb)
            .unwrap()
            .joint()
            .unwrap();
        let ba = intervened_model(&intervened_model(&m, id(1), &tb).unwrap(), id(0), &ta)
            .unwrap()
            .joint()
            .unwrap();
        assert_eq!(ab.values(), ba.values());
    }

    #[test]
    fn undo_uniform_joint() {
        let t = ProbTable::new(
            vec![
                Variable {
                    id: id(0),
                    name: "A".into(),
                    card: 2,
                },
                Variable {
                    id: id(1),
                    name: "Z".into(),
                    card: 2,
                },
            ],
            vec![0.25; 4],
        )
        .unwrap();
        let und = classical_undo(&t, id(1)).unwrap();
        assert_eq!(und.values(), &[0.5, 0.5]);
    }

    #[test]
    fn undo_chain_matches_summation() {
        let joint = abc_chain().joint().unwrap();
        let und = classical_undo(&joint, id(1)).unwrap();
        for a in 0..2 {
            for c in 0..2 {
                let want: f64 = (0..2)
                    .map(|b| joint.prob_of(&[(id(0), a), (id(1), b), (id(2), c)]).unwrap())
                    .sum();
                let got = und.prob_of(&[(id(0), a), (id(2), c)]).unwrap();
                assert!((got - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn undo_is_order_independent() {
        let joint = one_time_pad().joint().unwrap();
        let a = classical_undo(&classical_undo(&joint, id(0)).unwrap(), id(1)).unwrap();
        let b = classical_undo(&classical_undo(&joint, id(1)).unwrap(), id(0)).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn cmc_check_passes_for_own_dag() {
        for m in [copy_chain(), one_time_pad(), abc_chain()] {
            let joint = m.joint().unwrap();
            let report = cmc_check(&joint, m.dag(), 1e-9).unwrap();
            assert!(report.passed(), "violations: {:?}", report.violations);
        }
    }

    #[test]
    fn one_time_pad_collider_independences_hold() {
        let joint = one_time_pad().joint().unwrap();
        // (M _||_ K | {}) and even (M _||_ C | {}) hold; conditioning on
        // the cipher couples message and key (Berkson).
        assert!(ci_deviation(&joint, &[id(0)], &[id(1)], &[]).unwrap() < 1e-15);
        assert!(ci_deviation(&joint, &[id(0)], &[id(2)], &[]).unwrap() < 1e-15);
        assert!(ci_deviation(&joint, &[id(0)], &[id(1)], &[id(2)]).unwrap() > 0.2);
    }

    #[test]
    fn injected_correlation_is_reported() {
        let dag = Dag::new(
            vec![
                node(0, "A", 2, Kind::Exogenous),
                node(1, "B", 2, Kind::Exogenous),
            ],
            vec![],
        )
        .unwrap();
        let correlated = ProbTable::new(
            vec![
                Variable {
                    id: id(0),
                    name: "A".into(),
                    card: 2,
                },
                Variable {
                    id: id(1),
                    name: "B".into(),
                    card: 2,
                },
            ],
            vec![0.5, 0.0, 0.0, 0.5],
        )
        .unwrap();
        let report = cmc_check(&correlated, &dag, 1e-9).unwrap();
        assert!(!report.passed());
        assert!((report.violations[0].deviation - 0.25).abs() < 1e-12);
    }

    #[test]
    fn classical_do_satisfies_cmc_of_surgered_dag() {
        let m = abc_chain();
        let done = classical_do(&m, id(1), &DoTarget::Dist(vec![0.3, 0.7])).unwrap();
        let cut = m.dag().surgery_do(id(1)).unwrap();
        let report = cmc_check(&done, &cut, 1e-9).unwrap();
        assert!(report.passed(), "violations: {:?}", report.violations);
    }

    #[test]
    fn undo_all_non_exogenous_leaves_product_of_exogenous_marginals() {
        let m = one_time_pad();
        let joint = m.joint().unwrap();
        let und = classical_undo(&joint, id(2)).unwrap();
        let pa = und.marginal(&[id(0)]).unwrap();
        let pb = und.marginal(&[id(1)]).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let got = und.prob_of(&[(id(0), a), (id(1), b)]).unwrap();
                assert!((got - pa.values()[a] * pb.values()[b]).abs() < 1e-15);
            }
        }
    }
}
