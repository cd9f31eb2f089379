//! Counterfactual inference rules that operate purely on reference
//! probability tables plus causal structure: interventions on layered DAGs
//! and un-measurements via the delta-kernel contraction, including the
//! subset rule and multi-layer iteration.
//!
//! These rules re-express the Born rule, so they are exact for genuinely
//! quantum reference tables. Inferred entries in `[-1e-9, 0)` are clamped
//! with the clamp count reported; anything lower raises a hard
//! "non-quantum reference distribution" error rather than silently hiding
//! a non-realizable input.

use std::collections::{BTreeMap, BTreeSet};

use crate::classical::DoTarget;
use crate::error::{Error, Result};
use crate::graph::{validate_layering, Dag, Layering, NodeId};
use crate::linalg::{for_each_index, ravel};
use crate::table::{clamp_inferred, ClampStats, ProbTable, Variable};

/// Per-node SIC Gram matrix and its exact inverse:
/// `M[v,v'] = (d delta + 1) / (d^2 (d+1))`, `Minv[v,v'] = d(d+1) delta - 1`.
#[derive(Clone, Debug)]
pub struct SicGram {
    pub dim: usize,
}

impl SicGram {
    pub fn new(dim: usize) -> Self {
        SicGram { dim }
    }

    pub fn outcomes(&self) -> usize {
        self.dim * self.dim
    }

    pub fn m(&self, v: usize, vp: usize) -> f64 {
        let d = self.dim as f64;
        (d * delta(v, vp) + 1.0) / (d * d * (d + 1.0))
    }

    pub fn minv(&self, v: usize, vp: usize) -> f64 {
        let d = self.dim as f64;
        d * (d + 1.0) * delta(v, vp) - 1.0
    }
}

fn delta(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// Product kernel for un-measuring a block of nodes:
/// `Delta[u,u'] = prod_n [(d_n + 1) delta(v_n, v'_n) - 1/d_n]`.
/// Symmetric, and every row sums to one.
#[derive(Clone, Debug)]
pub struct DeltaKernel {
    pub dims: Vec<usize>,
}

impl DeltaKernel {
    pub fn new(dims: Vec<usize>) -> Self {
        DeltaKernel { dims }
    }

    pub fn cards(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d * d).collect()
    }

    pub fn entry(&self, u: &[usize], up: &[usize]) -> f64 {
        self.dims
            .iter()
            .zip(u.iter().zip(up))
            .map(|(&d, (&v, &vp))| (d as f64 + 1.0) * delta(v, vp) - 1.0 / d as f64)
            .product()
    }

    /// Dense matrix form, for small blocks.
    pub fn to_matrix(&self) -> Vec<Vec<f64>> {
        let cards = self.cards();
        let n: usize = cards.iter().product();
        let mut out = vec![vec![0.0; n]; n];
        let mut rows = Vec::with_capacity(n);
        for_each_index(&cards, |idx| rows.push(idx.to_vec()));
        for (i, u) in rows.iter().enumerate() {
            for (j, up) in rows.iter().enumerate() {
                out[i][j] = self.entry(u, up);
            }
        }
        out
    }
}

/// The kernel and per-node Gram matrices for a block of node dimensions,
/// with the Gram inversion identity verified.
pub fn delta_and_gram(dims: &[usize]) -> Result<(DeltaKernel, Vec<SicGram>)> {
    if dims.is_empty() || dims.iter().any(|&d| d < 2) {
        return Err(Error::BadSicDimension(
            dims.iter().copied().min().unwrap_or(0),
        ));
    }
    let grams: Vec<SicGram> = dims.iter().map(|&d| SicGram::new(d)).collect();
    for g in &grams {
        let n = g.outcomes();
        for v in 0..n {
            for vpp in 0..n {
                let mut acc = 0.0;
                for vp in 0..n {
                    acc += g.m(v, vp) * g.minv(vp, vpp);
                }
                let want = delta(v, vpp);
                if (acc - want).abs() > 1e-12 {
                    return Err(Error::BadSicDimension(g.dim));
                }
            }
        }
    }
    Ok((DeltaKernel::new(dims.to_vec()), grams))
}

/// An inferred table together with its negativity-clamping statistics.
#[derive(Clone, Debug)]
pub struct Inferred {
    pub table: ProbTable,
    pub clamp: ClampStats,
}

/// A conditional probability table P(targets | givens): rows indexed by the
/// given-configuration, columns by the target-configuration.
#[derive(Clone, Debug)]
pub struct CondTable {
    pub targets: Vec<Variable>,
    pub givens: Vec<Variable>,
    values: Vec<f64>,
}

impl CondTable {
    fn target_cards(&self) -> Vec<usize> {
        self.targets.iter().map(|v| v.card).collect()
    }

    fn given_cards(&self) -> Vec<usize> {
        self.givens.iter().map(|v| v.card).collect()
    }

    pub fn get(&self, given: &[usize], target: &[usize]) -> f64 {
        let nt: usize = self.target_cards().iter().product::<usize>().max(1);
        let g = ravel(given, &self.given_cards());
        let t = ravel(target, &self.target_cards());
        self.values[g * nt + t]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

// ---------------------------------------------------------------------
// Urgleichung for a three-node chain
// ---------------------------------------------------------------------

/// Un-measure the middle node of a three-node chain. The DAG supplies the
/// orientation: with structure X -> Y -> Z the rule reads
/// `P(X,Z | un Y) = sum_y P(Z|y) [ (1+d) P(y|X) - 1/d ] P(X)`,
/// and the reversed chain swaps the conditioned roles.
pub fn urgleichung_chain(table: &ProbTable, dag: &Dag, y: NodeId) -> Result<Inferred> {
    let parents = dag.parents(y);
    let children = dag.children(y);
    if dag.node_count() != 3 || parents.len() != 1 || children.len() != 1 {
        return Err(Error::NotLayered(format!(
            "node {y} is not the middle of a three-node chain"
        )));
    }
    let x = *parents.iter().next().unwrap();
    let z = *children.iter().next().unwrap();
    if dag.edges().count() != 2 {
        return Err(Error::NotLayered(
            "expected exactly the two chain edges".into(),
        ));
    }
    let d = dag.dim(y)? as f64;
    let card_y = table.variables()[table.var_position(y)?].card;

    let m_xy = table.marginal(&[x, y])?;
    let m_yz = table.marginal(&[y, z])?;
    let m_x = table.marginal(&[x])?;
    let m_y = table.marginal(&[y])?;

    // Output variable order follows the input table.
    let keep: Vec<NodeId> = table
        .variables()
        .iter()
        .map(|v| v.id)
        .filter(|&n| n != y)
        .collect();
    let out_vars: Vec<Variable> = table
        .variables()
        .iter()
        .filter(|v| v.id != y)
        .cloned()
        .collect();
    let out_cards: Vec<usize> = out_vars.iter().map(|v| v.card).collect();
    let mut values = vec![0.0; out_cards.iter().product()];
    let pos_x = keep.iter().position(|&n| n == x).unwrap();
    let pos_z = keep.iter().position(|&n| n == z).unwrap();

    for_each_index(&out_cards, |idx| {
        let (xv, zv) = (idx[pos_x], idx[pos_z]);
        let px = m_x.values()[xv];
        let mut acc = 0.0;
        for yv in 0..card_y {
            let py = m_y.values()[yv];
            let p_y_given_x = if px > 1e-12 {
                m_xy.prob_of(&[(x, xv), (y, yv)]).unwrap() / px
            } else {
                0.0
            };
            let p_z_given_y = if py > 1e-12 {
                m_yz.prob_of(&[(y, yv), (z, zv)]).unwrap() / py
            } else {
                0.0
            };
            acc += p_z_given_y * ((1.0 + d) * p_y_given_x - 1.0 / d);
        }
        values[ravel(idx, &out_cards)] = acc * px;
    });

    let clamp = clamp_inferred(&mut values)?;
    Ok(Inferred {
        table: ProbTable::new(out_vars, values)?,
        clamp,
    })
}

// ---------------------------------------------------------------------
// Quantum intervention rule on layered DAGs
// ---------------------------------------------------------------------

fn require_layered(dag: &Dag, layering: &Layering) -> Result<()> {
    let report = validate_layering(dag, layering)?;
    if !report.is_valid() {
        return Err(Error::NotLayered(format!(
            "causal sufficiency fails without a layered structure: {report:?}"
        )));
    }
    Ok(())
}

/// Behaviour under an intervention on `w`, computed from the reference
/// table alone:
/// `P(X | do) = P'(W) * P(after | W, layer-mates) * P(layer-mates, before)`,
/// with `after`/`before` the layers following/preceding `w`'s layer.
/// Interventions on exogenous nodes reduce to re-weighting the reference
/// table by `P'(W) / P(W)`.
pub fn quantum_do(
    table: &ProbTable,
    dag: &Dag,
    layering: &Layering,
    w: NodeId,
    target: &DoTarget,
) -> Result<Inferred> {
    require_layered(dag, layering)?;
    let card = table.variables()[table.var_position(w)?].card;
    let dist = target_dist(target, card, w)?;

    let vars = table.variables().to_vec();
    let cards: Vec<usize> = vars.iter().map(|v| v.card).collect();
    let pos_w = table.var_position(w)?;

    if dag.is_exogenous(w)? {
        // Externality: manipulating an exogenous node leaves the system's
        // response unchanged; only the node's own distribution is replaced.
        let m_w = table.marginal(&[w])?;
        let mut values = vec![0.0; table.len()];
        for (idx, p) in table.iter() {
            let pw = m_w.values()[idx[pos_w]];
            let cond = if pw > 1e-12 { p / pw } else { 0.0 };
            values[ravel(&idx, &cards)] = dist[idx[pos_w]] * cond;
        }
        let clamp = clamp_inferred(&mut values)?;
        return Ok(Inferred {
            table: ProbTable::new(vars, values)?,
            clamp,
        });
    }

    let j = layering
        .layer_of(w)
        .ok_or_else(|| Error::NotLayered(format!("node {w} missing from the layering")))?;
    let mut after: Vec<NodeId> = Vec::new();
    let mut mates: Vec<NodeId> = Vec::new();
    let mut before: Vec<NodeId> = Vec::new();
    for v in &vars {
        let Some(lv) = layering.layer_of(v.id) else {
            continue;
        };
        if v.id == w {
            continue;
        }
        if lv > j {
            after.push(v.id);
        } else if lv == j {
            mates.push(v.id);
        } else {
            before.push(v.id);
        }
    }

    let mut awl: Vec<NodeId> = after.clone();
    awl.push(w);
    awl.extend(&mates);
    let m_awl = table.marginal(&awl)?;
    let mut wl = vec![w];
    wl.extend(&mates);
    let m_wl = table.marginal(&wl)?;
    let mut lb = mates.clone();
    lb.extend(&before);
    let m_lb = table.marginal(&lb)?;

    let ex_awl = Extractor::new(table, &awl)?;
    let ex_wl = Extractor::new(table, &wl)?;
    let ex_lb = Extractor::new(table, &lb)?;

    let mut values = vec![0.0; table.len()];
    for_each_index(&cards, |idx| {
        let p_wl = m_wl.values()[ex_wl.extract(idx)];
        let cond_after = if p_wl > 1e-12 {
            m_awl.values()[ex_awl.extract(idx)] / p_wl
        } else {
            0.0
        };
        let p_lb = if lb.is_empty() {
            1.0
        } else {
            m_lb.values()[ex_lb.extract(idx)]
        };
        values[ravel(idx, &cards)] = dist[idx[pos_w]] * cond_after * p_lb;
    });
    let clamp = clamp_inferred(&mut values)?;
    Ok(Inferred {
        table: ProbTable::new(vars, values)?,
        clamp,
    })
}

/// Iterated interventions in the given order; the result is asserted (in
/// tests) to be order-independent rather than assumed.
pub fn quantum_do_all(
    table: &ProbTable,
    dag: &Dag,
    layering: &Layering,
    interventions: &[(NodeId, DoTarget)],
) -> Result<Inferred> {
    let mut current = table.clone();
    let mut dag = dag.clone();
    let mut clamp = ClampStats::default();
    for (w, target) in interventions {
        let step = quantum_do(&current, &dag, layering, *w, target)?;
        current = step.table;
        clamp.merge(step.clamp);
        dag = dag.surgery_do(*w)?;
    }
    Ok(Inferred {
        table: current,
        clamp,
    })
}

fn target_dist(target: &DoTarget, card: usize, w: NodeId) -> Result<Vec<f64>> {
    match target {
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

/// Extracts the sub-configuration of a marginal from a full-table
/// configuration.
struct Extractor {
    positions: Vec<usize>,
    cards: Vec<usize>,
}

impl Extractor {
    /// Positions follow the parent table's variable order, matching
    /// `ProbTable::marginal`.
    fn new(table: &ProbTable, ids: &[NodeId]) -> Result<Self> {
        let idset: BTreeSet<NodeId> = ids.iter().copied().collect();
        let mut positions = Vec::new();
        let mut cards = Vec::new();
        for (i, v) in table.variables().iter().enumerate() {
            if idset.contains(&v.id) {
                positions.push(i);
                cards.push(v.card);
            }
        }
        if positions.len() != idset.len() {
            return Err(Error::UnknownVariable(format!("{ids:?}")));
        }
        Ok(Extractor { positions, cards })
    }

    fn extract(&self, idx: &[usize]) -> usize {
        let sub: Vec<usize> = self.positions.iter().map(|&p| idx[p]).collect();
        ravel(&sub, &self.cards)
    }
}

// ---------------------------------------------------------------------
// Un-measurement of (subsets of) a layer
// ---------------------------------------------------------------------

/// Result of un-measuring a subset of one layer: the conditional
/// `P(next layer | kept mates, previous layer)`, the marginal over the kept
/// mates, and the full joint assembled from the sandwich ansatz.
#[derive(Clone, Debug)]
pub struct SubsetUndo {
    pub conditional: CondTable,
    pub marginal: CondTable,
    pub joint: ProbTable,
    pub clamp: ClampStats,
}

/// Un-measure every node of layer `j`.
pub fn undo_layer(
    table: &ProbTable,
    dag: &Dag,
    layering: &Layering,
    j: usize,
) -> Result<SubsetUndo> {
    let u: Vec<NodeId> = layering.layer(j).iter().copied().collect();
    undo_subset(table, dag, layering, j, &u)
}

/// Un-measure the subset `u` of layer `j`, keeping its layer-mates in
/// place. The conditional follows the delta-kernel contraction
/// `P(L+ | L-, w, un U) = sum_{u,u'} P(L+ | u w) Delta[u,u'] P(u' | L-)`,
/// the marginal averages it against `P(w | L-)` (unchanged by the
/// un-measurement), and the joint multiplies the untouched outer factors
/// back on.
pub fn undo_subset(
    table: &ProbTable,
    dag: &Dag,
    layering: &Layering,
    j: usize,
    u: &[NodeId],
) -> Result<SubsetUndo> {
    require_layered(dag, layering)?;
    undo_subset_unchecked(table, dag, layering, j, u)
}

/// The subset rule without re-validating the layering; used when iterating
/// over already-undone tables, whose structure is no longer a full LDAG.
fn undo_subset_unchecked(
    table: &ProbTable,
    dag: &Dag,
    layering: &Layering,
    j: usize,
    u: &[NodeId],
) -> Result<SubsetUndo> {
    if j >= layering.len() {
        return Err(Error::NotLayered(format!("layer {j} out of range")));
    }
    let u: Vec<NodeId> = {
        let mut u = u.to_vec();
        u.sort();
        u.dedup();
        u
    };
    if u.is_empty() {
        return Err(Error::BadIntervention("empty un-measurement set".into()));
    }
    for &n in &u {
        if !layering.layer(j).contains(&n) {
            return Err(Error::NotLayered(format!("node {n} is not in layer {j}")));
        }
        if dag.is_exogenous(n)? {
            return Err(Error::UndoExogenous(n));
        }
        table.var_position(n)?;
    }

    // Node groups, all in table variable order.
    let in_group = |ids: &BTreeSet<NodeId>| -> Vec<NodeId> {
        table
            .variables()
            .iter()
            .map(|v| v.id)
            .filter(|n| ids.contains(n))
            .collect()
    };
    let u_set: BTreeSet<NodeId> = u.iter().copied().collect();
    let kept_set: BTreeSet<NodeId> = layering
        .layer(j)
        .iter()
        .copied()
        .filter(|n| !u_set.contains(n) && table.has_var(*n))
        .collect();
    let prev_set: BTreeSet<NodeId> = if j > 0 {
        layering
            .layer(j - 1)
            .iter()
            .copied()
            .filter(|n| table.has_var(*n))
            .collect()
    } else {
        BTreeSet::new()
    };
    let next_set: BTreeSet<NodeId> = if j + 1 < layering.len() {
        layering
            .layer(j + 1)
            .iter()
            .copied()
            .filter(|n| table.has_var(*n))
            .collect()
    } else {
        BTreeSet::new()
    };
    let u_vec = in_group(&u_set);
    let w_vec = in_group(&kept_set);
    let prev_vec = in_group(&prev_set);
    let next_vec = in_group(&next_set);

    let var_of =
        |n: NodeId| -> Variable { table.variables()[table.var_position(n).unwrap()].clone() };
    let u_cards: Vec<usize> = u_vec.iter().map(|&n| var_of(n).card).collect();
    let w_cards: Vec<usize> = w_vec.iter().map(|&n| var_of(n).card).collect();
    let prev_cards: Vec<usize> = prev_vec.iter().map(|&n| var_of(n).card).collect();
    let next_cards: Vec<usize> = next_vec.iter().map(|&n| var_of(n).card).collect();
    let dims: Vec<usize> = u_vec.iter().map(|&n| dag.dim(n).unwrap()).collect();
    let kernel = DeltaKernel::new(dims);

    let nu: usize = u_cards.iter().product::<usize>().max(1);
    let nw: usize = w_cards.iter().product::<usize>().max(1);
    let nprev: usize = prev_cards.iter().product::<usize>().max(1);
    let nnext: usize = next_cards.iter().product::<usize>().max(1);

    // Reference marginals. Marginal variable order is the table order of
    // the listed ids, so build the id lists in exactly the layout the flat
    // indexing below assumes: [next, u, w], [u, w], [u, w, prev], [w, prev].
    let mut uw = u_vec.clone();
    uw.extend(&w_vec);
    let mut nuw = next_vec.clone();
    nuw.extend(&uw);
    let m_nuw = marginal_in_order(table, &nuw)?;
    let m_uw = marginal_in_order(table, &uw)?;
    let mut uwprev = uw.clone();
    uwprev.extend(&prev_vec);
    let m_uwprev = marginal_in_order(table, &uwprev)?;
    let m_prev = marginal_in_order(table, &prev_vec)?;
    let mut wprev = w_vec.clone();
    wprev.extend(&prev_vec);
    let m_wprev = marginal_in_order(table, &wprev)?;

    // Enumerate u-configurations once.
    let mut u_configs: Vec<Vec<usize>> = Vec::with_capacity(nu);
    for_each_index(&u_cards, |idx| u_configs.push(idx.to_vec()));

    // The kernel contraction reconstructs the state entering the
    // un-measured wires. The kept mates' outcomes are already known at
    // that point, so the reconstruction probabilities condition on them
    // as well: T[u | w, prev] = sum_{u'} Delta[u,u'] P(u' | w, prev).
    // When the un-measured wires factorize from the kept wires this
    // reduces to the plain P(u' | prev) contraction.
    let mut t = vec![0.0; nu * nw * nprev];
    for widx in 0..nw {
        for pidx in 0..nprev {
            let p_wprev = m_wprev[widx * nprev + pidx];
            for (a, ua) in u_configs.iter().enumerate() {
                let mut acc = 0.0;
                if p_wprev > 1e-12 {
                    for (b, ub) in u_configs.iter().enumerate() {
                        let p_u_wprev =
                            m_uwprev[(b * nw + widx) * nprev + pidx] / p_wprev;
                        acc += kernel.entry(ua, ub) * p_u_wprev;
                    }
                }
                t[(a * nw + widx) * nprev + pidx] = acc;
            }
        }
    }

    // conditional[next | w, prev] = sum_u P(next | u w) T[u | w, prev].
    let mut cond_values = vec![0.0; nw * nprev * nnext];
    for widx in 0..nw {
        for pidx in 0..nprev {
            for nidx in 0..nnext {
                let mut acc = 0.0;
                for a in 0..nu {
                    let p_uw = m_uw[a * nw + widx];
                    if p_uw <= 1e-12 {
                        continue;
                    }
                    let p_next_uw = m_nuw[(nidx * nu + a) * nw + widx] / p_uw;
                    acc += p_next_uw * t[(a * nw + widx) * nprev + pidx];
                }
                cond_values[(widx * nprev + pidx) * nnext + nidx] = acc;
            }
        }
    }
    let mut clamp = clamp_inferred(&mut cond_values)?;

    let mut given_vars: Vec<Variable> = w_vec.iter().map(|&n| var_of(n)).collect();
    given_vars.extend(prev_vec.iter().map(|&n| var_of(n)));
    let conditional = CondTable {
        targets: next_vec.iter().map(|&n| var_of(n)).collect(),
        givens: given_vars,
        values: cond_values.clone(),
    };

    // qLTP marginal: average over w with P(w | prev) from the reference.
    let mut marg_values = vec![0.0; nprev * nnext];
    for pidx in 0..nprev {
        let p_prev = if prev_vec.is_empty() {
            1.0
        } else {
            m_prev[pidx]
        };
        for nidx in 0..nnext {
            let mut acc = 0.0;
            for widx in 0..nw {
                let p_w_prev = if p_prev > 1e-12 {
                    m_wprev[widx * nprev + pidx] / p_prev
                } else {
                    0.0
                };
                acc += cond_values[(widx * nprev + pidx) * nnext + nidx] * p_w_prev;
            }
            marg_values[pidx * nnext + nidx] = acc;
        }
    }
    clamp.merge(clamp_inferred(&mut marg_values)?);
    let marginal = CondTable {
        targets: next_vec.iter().map(|&n| var_of(n)).collect(),
        givens: prev_vec.iter().map(|&n| var_of(n)).collect(),
        values: marg_values,
    };

    // Joint over the remaining variables by the sandwich ansatz:
    // P(remaining) = P(upper | next) * conditional * P(w, lower).
    let remaining: Vec<Variable> = table
        .variables()
        .iter()
        .filter(|v| !u_set.contains(&v.id))
        .cloned()
        .collect();
    let upper_and_next: Vec<NodeId> = remaining
        .iter()
        .map(|v| v.id)
        .filter(|n| layering.layer_of(*n).map_or(false, |l| l > j))
        .collect();
    let lower_and_w: Vec<NodeId> = remaining
        .iter()
        .map(|v| v.id)
        .filter(|n| layering.layer_of(*n).map_or(false, |l| l <= j))
        .collect();
    let m_upper = table.marginal(&upper_and_next)?;
    let m_next = table.marginal(&next_vec)?;
    let m_lower = table.marginal(&lower_and_w)?;

    let rem_cards: Vec<usize> = remaining.iter().map(|v| v.card).collect();
    let rem_ids: Vec<NodeId> = remaining.iter().map(|v| v.id).collect();
    let pos_of = |ids: &[NodeId]| -> Vec<usize> {
        ids.iter()
            .map(|n| rem_ids.iter().position(|r| r == n).unwrap())
            .collect()
    };
    let upper_pos = pos_of(&upper_and_next);
    let upper_cards: Vec<usize> = upper_and_next.iter().map(|&n| var_of(n).card).collect();
    let next_pos = pos_of(&next_vec);
    let lower_pos = pos_of(&lower_and_w);
    let lower_cards: Vec<usize> = lower_and_w.iter().map(|&n| var_of(n).card).collect();
    let w_pos = pos_of(&w_vec);
    let prev_pos = pos_of(&prev_vec);

    let mut joint_values = vec![0.0; rem_cards.iter().product::<usize>().max(1)];
    for_each_index(&rem_cards, |idx| {
        let sub = |positions: &[usize], cards: &[usize]| -> usize {
            let s: Vec<usize> = positions.iter().map(|&p| idx[p]).collect();
            ravel(&s, cards)
        };
        let next_idx = sub(&next_pos, &next_cards);
        let p_next = if next_vec.is_empty() {
            1.0
        } else {
            m_next.values()[next_idx]
        };
        let upper_factor = if upper_and_next.is_empty() {
            1.0
        } else if p_next > 1e-12 {
            m_upper.values()[sub(&upper_pos, &upper_cards)] / p_next
        } else {
            0.0
        };
        let mid = cond_values
            [(sub(&w_pos, &w_cards) * nprev + sub(&prev_pos, &prev_cards)) * nnext + next_idx];
        let lower_factor = if lower_and_w.is_empty() {
            1.0
        } else {
            m_lower.values()[sub(&lower_pos, &lower_cards)]
        };
        joint_values[ravel(idx, &rem_cards)] = upper_factor * mid * lower_factor;
    });
    clamp.merge(clamp_inferred(&mut joint_values)?);

    Ok(SubsetUndo {
        conditional,
        marginal,
        joint: ProbTable::new(remaining, joint_values)?,
        clamp,
    })
}

/// Marginal values laid out in the exact id order given (not the parent
/// table's order).
fn marginal_in_order(table: &ProbTable, ids: &[NodeId]) -> Result<Vec<f64>> {
    let m = table.marginal(ids)?;
    if ids.is_empty() {
        return Ok(vec![m.values().iter().sum()]);
    }
    let m_order: Vec<NodeId> = m.variables().iter().map(|v| v.id).collect();
    if m_order == ids {
        return Ok(m.values().to_vec());
    }
    // Permute the marginal into the requested order.
    let cards_out: Vec<usize> = ids
        .iter()
        .map(|n| m.variables()[m.var_position(*n).unwrap()].card)
        .collect();
    let mut out = vec![0.0; m.values().len()];
    for (idx, p) in m.iter() {
        let reordered: Vec<usize> = ids
            .iter()
            .map(|n| idx[m.var_position(*n).unwrap()])
            .collect();
        out[ravel(&reordered, &cards_out)] = p;
    }
    Ok(out)
}

/// Un-measure subsets in several layers. Each affected layer must be
/// sandwiched between layers untouched by un-measurements, so affected
/// layers may not be adjacent.
pub fn multi_undo(
    table: &ProbTable,
    dag: &Dag,
    layering: &Layering,
    targets: &BTreeMap<usize, Vec<NodeId>>,
) -> Result<Inferred> {
    require_layered(dag, layering)?;
    let affected: Vec<usize> = targets.keys().copied().collect();
    for pair in affected.windows(2) {
        if pair[1] == pair[0] + 1 {
            return Err(Error::AdjacentUndoLayers(pair[0], pair[1]));
        }
    }
    let mut current = table.clone();
    let mut lay = layering.clone();
    let mut clamp = ClampStats::default();
    for (&j, nodes) in targets {
        let step = undo_subset_unchecked(&current, dag, &lay, j, nodes)?;
        current = step.joint;
        clamp.merge(step.clamp);
        for &n in nodes {
            lay = lay.without(n);
        }
    }
    Ok(Inferred {
        table: current,
        clamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Control, ControlAssignment, Kind, Node};
    use crate::network::tests::{interceptor_network, qubit_chain};
    use crate::network::{counterfactual_oracle, reference_distribution};

    fn id(x: u32) -> NodeId {
        NodeId(x)
    }

    #[test]
    fn gram_values_at_d2() {
        let (kernel, grams) = delta_and_gram(&[2]).unwrap();
        let g = &grams[0];
        assert!((g.minv(0, 0) - 5.0).abs() < 1e-15);
        assert!((g.minv(0, 1) + 1.0).abs() < 1e-15);
        assert!((g.m(0, 0) - 0.25).abs() < 1e-15);
        assert!((g.m(0, 1) - 1.0 / 12.0).abs() < 1e-15);
        assert!((kernel.entry(&[0], &[0]) - 2.5).abs() < 1e-15);
        assert!((kernel.entry(&[0], &[1]) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn delta_rows_sum_to_one_and_symmetric() {
        let (kernel, _) = delta_and_gram(&[2, 3]).unwrap();
        let mat = kernel.to_matrix();
        for (i, row) in mat.iter().enumerate() {
            let total: f64 = row.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "row {i} sums to {total}");
            for (j, &v) in row.iter().enumerate() {
                assert!((v - mat[j][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_preserves_uniform() {
        // sum_{u'} Delta[u,u'] * uniform = uniform: the eternal-noise fixed
        // point.
        let (kernel, _) = delta_and_gram(&[2, 2]).unwrap();
        let cards = kernel.cards();
        let n: usize = cards.iter().product();
        let uniform = 1.0 / n as f64;
        let mut configs = Vec::new();
        for_each_index(&cards, |idx| configs.push(idx.to_vec()));
        for u in &configs {
            let acc: f64 = configs.iter().map(|up| kernel.entry(u, up) * uniform).sum();
            assert!((acc - uniform).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_and_gram_rejects_bad_dims() {
        assert!(delta_and_gram(&[]).is_err());
        assert!(delta_and_gram(&[1]).is_err());
    }

    #[test]
    fn urgleichung_matches_oracle_on_seeded_chains() {
        for seed in [1u64, 2, 3] {
            let net = qubit_chain(seed);
            let table = reference_distribution(&net).unwrap();
            let inferred = urgleichung_chain(&table, net.dag(), id(1)).unwrap();
            let controls = ControlAssignment::new().set(id(1), Control::Undo);
            let oracle = counterfactual_oracle(&net, &controls).unwrap();
            let diff = inferred.table.max_norm_diff(&oracle).unwrap();
            assert!(diff < 1e-9, "seed {seed}: diff {diff}");
        }
    }

    #[test]
    fn urgleichung_output_sums_to_one() {
        let net = qubit_chain(9);
        let table = reference_distribution(&net).unwrap();
        let inferred = urgleichung_chain(&table, net.dag(), id(1)).unwrap();
        assert!((inferred.table.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn urgleichung_uniform_bracket_collapses() {
        // With P(y|x) uniform the bracket is identically 1/d^2, so
        // P(Z|X, un Y) = sum_y P(Z|y) / d^2. A fully depolarizing first
        // gap (which is unbiased) realizes the uniform premise.
        use crate::graph::{Kind, Node};
        use crate::network::{QuantumNetwork, SubChannel};
        use crate::quantum::{random_unbiased_channel, Channel};
        use crate::tol::Tolerances;
        let dag = Dag::new(
            vec![
                Node {
                    id: id(0),
                    name: "X".into(),
                    dim: 2,
                    kind: Kind::Exogenous,
                },
                Node {
                    id: id(1),
                    name: "Y".into(),
                    dim: 2,
                    kind: Kind::Internal,
                },
                Node {
                    id: id(2),
                    name: "Z".into(),
                    dim: 2,
                    kind: Kind::Terminal,
                },
            ],
            vec![(id(0), id(1)), (id(1), id(2))],
        )
        .unwrap();
        let lay = Layering::from_slices(&[&[id(0)], &[id(1)], &[id(2)]]);
        let depolarize = Channel::from_fn(2, 2, |rho| {
            crate::linalg::identity(2).map(|z| z * rho.trace() / 2.0)
        })
        .unwrap();
        let net = QuantumNetwork::new(
            dag,
            lay,
            vec![
                vec![SubChannel {
                    sources: vec![id(0)],
                    targets: vec![id(1)],
                    channel: depolarize,
                }],
                vec![SubChannel {
                    sources: vec![id(1)],
                    targets: vec![id(2)],
                    channel: random_unbiased_channel(2, 2, 40).unwrap(),
                }],
            ],
            &BTreeMap::new(),
            Tolerances::default(),
        )
        .unwrap();
        let table = reference_distribution(&net).unwrap();
        let m_xy = table.marginal(&[id(0), id(1)]).unwrap();
        let m_x = table.marginal(&[id(0)]).unwrap();
        // Premise: P(y|x) = 1/4.
        for x in 0..4 {
            for y in 0..4 {
                let p = m_xy.prob_of(&[(id(0), x), (id(1), y)]).unwrap() / m_x.values()[x];
                assert!((p - 0.25).abs() < 1e-10);
            }
        }
        let inferred = urgleichung_chain(&table, net.dag(), id(1)).unwrap();
        let m_yz = table.marginal(&[id(1), id(2)]).unwrap();
        let m_y = table.marginal(&[id(1)]).unwrap();
        for x in 0..4 {
            for z in 0..4 {
                let want: f64 = (0..4)
                    .map(|y| {
                        let pzy =
                            m_yz.prob_of(&[(id(1), y), (id(2), z)]).unwrap() / m_y.values()[y];
                        pzy / 4.0
                    })
                    .sum::<f64>()
                    * m_x.values()[x];
                let got = inferred.table.prob_of(&[(id(0), x), (id(2), z)]).unwrap();
                assert!((got - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn urgleichung_backwards_agrees_on_reversible_networks() {
        // The reversed-chain variant conditions on the other endpoint. For
        // causally reversible networks the marginals are uniform, which
        // makes the two variants agree; both must match the oracle.
        let net = qubit_chain(6);
        let table = reference_distribution(&net).unwrap();
        let forward = urgleichung_chain(&table, net.dag(), id(1)).unwrap();
        let backward = urgleichung_chain(&table, &net.dag().reverse(), id(1)).unwrap();
        let diff = forward.table.max_norm_diff(&backward.table).unwrap();
        assert!(diff < 1e-9, "causal symmetry violated: {diff}");
        let controls = ControlAssignment::new().set(id(1), Control::Undo);
        let oracle = counterfactual_oracle(&net, &controls).unwrap();
        assert!(backward.table.max_norm_diff(&oracle).unwrap() < 1e-9);
    }

    #[test]
    fn quantum_do_matches_oracle_on_interceptor() {
        for seed in [1u64, 5] {
            let net = interceptor_network(seed);
            let table = reference_distribution(&net).unwrap();
            // SIC intervention on W (node 1).
            let inferred = quantum_do(
                &table,
                net.dag(),
                net.layering(),
                id(1),
                &DoTarget::Dist(vec![0.25; 4]),
            )
            .unwrap();
            let controls = ControlAssignment::new().set(id(1), Control::Do(vec![0.25; 4]));
            let oracle = counterfactual_oracle(&net, &controls).unwrap();
            assert!(inferred.table.max_norm_diff(&oracle).unwrap() < 1e-9);
            // Fine-grained do(W = 3).
            let inferred =
                quantum_do(&table, net.dag(), net.layering(), id(1), &DoTarget::Value(3))
                    .unwrap();
            let controls = ControlAssignment::new().set(id(1), Control::DoFine(3));
            let oracle = counterfactual_oracle(&net, &controls).unwrap();
            assert!(inferred.table.max_norm_diff(&oracle).unwrap() < 1e-9);
            assert!((inferred.table.prob_of(&[(id(1), 3)]).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quantum_do_on_exogenous_is_reference() {
        let net = interceptor_network(2);
        let table = reference_distribution(&net).unwrap();
        let inferred = quantum_do(
            &table,
            net.dag(),
            net.layering(),
            id(0),
            &DoTarget::Dist(vec![0.25; 4]),
        )
        .unwrap();
        assert!(inferred.table.max_norm_diff(&table).unwrap() < 1e-12);
    }

    #[test]
    fn quantum_do_refuses_unlayered_dag() {
        // A -> W, A -> D, W -> D admits no layering; inference must refuse.
        let dag = Dag::new(
            vec![
                Node {
                    id: id(0),
                    name: "A".into(),
                    dim: 2,
                    kind: Kind::Exogenous,
                },
                Node {
                    id: id(1),
                    name: "W".into(),
                    dim: 2,
                    kind: Kind::Internal,
                },
                Node {
                    id: id(2),
                    name: "D".into(),
                    dim: 2,
                    kind: Kind::Terminal,
                },
            ],
            vec![(id(0), id(1)), (id(0), id(2)), (id(1), id(2))],
        )
        .unwrap();
        let lay = Layering::from_slices(&[&[id(0)], &[id(1)], &[id(2)]]);
        let net = qubit_chain(1);
        let table = reference_distribution(&net).unwrap();
        let err = quantum_do(&table, &dag, &lay, id(1), &DoTarget::Value(0));
        assert!(matches!(err, Err(Error::NotLayered(_))));
    }

    #[test]
    fn undo_layer_singleton_matches_urgleichung() {
        let net = qubit_chain(7);
        let table = reference_distribution(&net).unwrap();
        let via_layer = undo_layer(&table, net.dag(), net.layering(), 1).unwrap();
        let via_urg = urgleichung_chain(&table, net.dag(), id(1)).unwrap();
        assert!(via_layer.joint.max_norm_diff(&via_urg.table).unwrap() < 1e-12);
    }

    #[test]
    fn undo_subset_full_layer_equals_undo_layer() {
        let net = interceptor_network(4);
        let table = reference_distribution(&net).unwrap();
        let a = undo_layer(&table, net.dag(), net.layering(), 1).unwrap();
        let b = undo_subset(&table, net.dag(), net.layering(), 1, &[id(1), id(2)]).unwrap();
        assert!(a.joint.max_norm_diff(&b.joint).unwrap() < 1e-15);
    }

    #[test]
    fn undo_subset_matches_oracle() {
        for seed in [3u64, 8] {
            let net = interceptor_network(seed);
            let table = reference_distribution(&net).unwrap();
            let sub = undo_subset(&table, net.dag(), net.layering(), 1, &[id(1)]).unwrap();
            let controls = ControlAssignment::new().set(id(1), Control::Undo);
            let oracle = counterfactual_oracle(&net, &controls).unwrap();
            let diff = sub.joint.max_norm_diff(&oracle).unwrap();
            assert!(diff < 1e-9, "seed {seed}: diff {diff}");
        }
    }

    #[test]
    fn undo_full_layer_matches_oracle() {
        let net = interceptor_network(12);
        let table = reference_distribution(&net).unwrap();
        let und = undo_layer(&table, net.dag(), net.layering(), 1).unwrap();
        let controls = ControlAssignment::new()
            .set(id(1), Control::Undo)
            .set(id(2), Control::Undo);
        let oracle = counterfactual_oracle(&net, &controls).unwrap();
        assert!(und.joint.max_norm_diff(&oracle).unwrap() < 1e-9);
    }

    #[test]
    fn undo_rejects_exogenous_member() {
        let net = interceptor_network(1);
        let table = reference_distribution(&net).unwrap();
        let err = undo_subset(&table, net.dag(), net.layering(), 0, &[id(0)]);
        assert!(matches!(err, Err(Error::UndoExogenous(_))));
    }

    fn five_chain(seed: u64) -> crate::network::QuantumNetwork {
        let nodes: Vec<Node> = (0..5u32)
            .map(|i| Node {
                id: id(i),
                name: format!("N{i}"),
                dim: 2,
                kind: if i == 0 {
                    Kind::Exogenous
                } else if i == 4 {
                    Kind::Terminal
                } else {
                    Kind::Internal
                },
            })
            .collect();
        let edges: Vec<(NodeId, NodeId)> = (0..4u32).map(|i| (id(i), id(i + 1))).collect();
        let dag = Dag::new(nodes, edges).unwrap();
        let lay = Layering::from_slices(&[&[id(0)], &[id(1)], &[id(2)], &[id(3)], &[id(4)]]);
        crate::network::QuantumNetwork::seeded(dag, lay, seed, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn multi_undo_rejects_adjacent_layers() {
        let net = five_chain(1);
        let table = reference_distribution(&net).unwrap();
        let targets: BTreeMap<usize, Vec<NodeId>> =
            [(1usize, vec![id(1)]), (2usize, vec![id(2)])].into();
        let err = multi_undo(&table, net.dag(), net.layering(), &targets);
        assert!(matches!(err, Err(Error::AdjacentUndoLayers(1, 2))));
    }

    #[test]
    fn multi_undo_matches_oracle_and_single_subset() {
        let net = five_chain(21);
        let table = reference_distribution(&net).unwrap();
        let targets: BTreeMap<usize, Vec<NodeId>> =
            [(1usize, vec![id(1)]), (3usize, vec![id(3)])].into();
        let inferred = multi_undo(&table, net.dag(), net.layering(), &targets).unwrap();
        let controls = ControlAssignment::new()
            .set(id(1), Control::Undo)
            .set(id(3), Control::Undo);
        let oracle = counterfactual_oracle(&net, &controls).unwrap();
        assert!(inferred.table.max_norm_diff(&oracle).unwrap() < 1e-9);

        let single: BTreeMap<usize, Vec<NodeId>> = [(1usize, vec![id(1)])].into();
        let a = multi_undo(&table, net.dag(), net.layering(), &single).unwrap();
        let b = undo_subset(&table, net.dag(), net.layering(), 1, &[id(1)]).unwrap();
        assert!(a.table.max_norm_diff(&b.joint).unwrap() < 1e-15);
    }
}
