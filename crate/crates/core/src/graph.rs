//! Causal-structure representation: DAGs with node kinds and dimensions,
//! ordered layerings, graph surgery for interventions and un-measurements,
//! and path blocking under the classical and quantum rulesets.
//!
//! Path blocking is implemented by explicit enumeration of undirected simple
//! paths. The quantum fork rule differs from classical d-separation, so none
//! of the usual Bayes-ball shortcuts are assumed valid; a node cap guards
//! runaway inputs (exponential worst case, fine at desk scale).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default node cap for path-enumeration queries.
pub const SEPARATION_NODE_CAP: usize = 12;
/// Default node cap for exhaustive independence enumeration.
pub const ENUMERATION_NODE_CAP: usize = 8;

#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Exogenous,
    Internal,
    Terminal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    /// Hilbert-space dimension for quantum nodes; outcome count for
    /// classical nodes.
    pub dim: usize,
    pub kind: Kind,
}

/// Directed acyclic graph over named, dimensioned nodes.
#[derive(Clone, Debug)]
pub struct Dag {
    nodes: Vec<Node>,
    edges: BTreeSet<(NodeId, NodeId)>,
    index: BTreeMap<NodeId, usize>,
}

/// Parents, children, ancestors and descendants of a node.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Kin {
    pub parents: BTreeSet<NodeId>,
    pub children: BTreeSet<NodeId>,
    pub ancestors: BTreeSet<NodeId>,
    pub descendants: BTreeSet<NodeId>,
}

impl Dag {
    pub fn new(nodes: Vec<Node>, edges: Vec<(NodeId, NodeId)>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if n.dim < 2 {
                return Err(Error::BadDimension {
                    node: n.id,
                    dim: n.dim,
                });
            }
            if index.insert(n.id, i).is_some() {
                return Err(Error::DuplicateNode(n.id));
            }
        }
        let mut edge_set = BTreeSet::new();
        for &(u, v) in &edges {
            if !index.contains_key(&u) {
                return Err(Error::UnknownNode(u));
            }
            if !index.contains_key(&v) {
                return Err(Error::UnknownNode(v));
            }
            if u == v {
                return Err(Error::SelfLoop(u));
            }
            if !edge_set.insert((u, v)) {
                return Err(Error::DuplicateEdge(u, v));
            }
        }
        let dag = Dag {
            nodes,
            edges: edge_set,
            index,
        };
        dag.check_acyclic()?;
        dag.check_kinds()?;
        Ok(dag)
    }

    fn check_acyclic(&self) -> Result<()> {
        if self.topological_order().is_none() {
            return Err(Error::Cyclic);
        }
        Ok(())
    }

    fn check_kinds(&self) -> Result<()> {
        for n in &self.nodes {
            match n.kind {
                Kind::Exogenous => {
                    if self.edges.iter().any(|&(_, v)| v == n.id) {
                        return Err(Error::ExogenousWithParent(n.id));
                    }
                }
                Kind::Terminal => {
                    if self.edges.iter().any(|&(u, _)| u == n.id) {
                        return Err(Error::TerminalWithChild(n.id));
                    }
                }
                Kind::Internal => {}
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, x: NodeId) -> bool {
        self.index.contains_key(&x)
    }

    pub fn node(&self, x: NodeId) -> Result<&Node> {
        self.index
            .get(&x)
            .map(|&i| &self.nodes[i])
            .ok_or(Error::UnknownNode(x))
    }

    pub fn dim(&self, x: NodeId) -> Result<usize> {
        Ok(self.node(x)?.dim)
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.edges.contains(&(u, v))
    }

    pub fn parents(&self, x: NodeId) -> BTreeSet<NodeId> {
        self.edges
            .iter()
            .filter(|&&(_, v)| v == x)
            .map(|&(u, _)| u)
            .collect()
    }

    pub fn children(&self, x: NodeId) -> BTreeSet<NodeId> {
        self.edges
            .iter()
            .filter(|&&(u, _)| u == x)
            .map(|&(_, v)| v)
            .collect()
    }

    pub fn is_exogenous(&self, x: NodeId) -> Result<bool> {
        self.node(x)?;
        Ok(self.parents(x).is_empty())
    }

    /// Parents, children, ancestors and descendants of `x`, computed by
    /// reachability along edge directions. `x` is excluded from its own
    /// ancestor and descendant sets.
    pub fn kin(&self, x: NodeId) -> Result<Kin> {
        self.node(x)?;
        let mut kin = Kin {
            parents: self.parents(x),
            children: self.children(x),
            ..Kin::default()
        };
        kin.ancestors = self.reach(x, Direction::Backward);
        kin.descendants = self.reach(x, Direction::Forward);
        Ok(kin)
    }

    fn reach(&self, x: NodeId, dir: Direction) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![x];
        while let Some(n) = stack.pop() {
            let next = match dir {
                Direction::Forward => self.children(n),
                Direction::Backward => self.parents(n),
            };
            for m in next {
                if seen.insert(m) {
                    stack.push(m);
                }
            }
        }
        seen
    }

    pub fn ancestors(&self, x: NodeId) -> BTreeSet<NodeId> {
        self.reach(x, Direction::Backward)
    }

    pub fn descendants(&self, x: NodeId) -> BTreeSet<NodeId> {
        self.reach(x, Direction::Forward)
    }

    pub fn topological_order(&self) -> Option<Vec<NodeId>> {
        let mut in_deg: BTreeMap<NodeId, usize> =
            self.nodes.iter().map(|n| (n.id, 0)).collect();
        for &(_, v) in &self.edges {
            *in_deg.get_mut(&v).unwrap() += 1;
        }
        let mut ready: Vec<NodeId> = in_deg
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop() {
            order.push(n);
            for c in self.children(n) {
                let d = in_deg.get_mut(&c).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(c);
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }

    /// Intervention surgery: delete all incoming edges of `w`; `w` becomes
    /// exogenous.
    pub fn surgery_do(&self, w: NodeId) -> Result<Dag> {
        self.node(w)?;
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let mut n = n.clone();
                if n.id == w {
                    n.kind = Kind::Exogenous;
                }
                n
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|&&(_, v)| v != w)
            .copied()
            .collect();
        Dag::new(nodes, edges)
    }

    /// Un-measurement surgery: connect every parent of `z` directly to every
    /// child of `z` (deduplicated), then delete `z` and its incident edges.
    /// Refused for exogenous nodes, where the operation is ambiguous.
    pub fn surgery_undo(&self, z: NodeId) -> Result<Dag> {
        self.node(z)?;
        let parents = self.parents(z);
        if parents.is_empty() {
            return Err(Error::UndoExogenous(z));
        }
        let children = self.children(z);
        let nodes = self.nodes.iter().filter(|n| n.id != z).cloned().collect();
        let mut edges: BTreeSet<(NodeId, NodeId)> = self
            .edges
            .iter()
            .filter(|&&(u, v)| u != z && v != z)
            .copied()
            .collect();
        for &p in &parents {
            for &c in &children {
                edges.insert((p, c));
            }
        }
        Dag::new(nodes, edges.into_iter().collect())
    }

    /// Flip every edge; exogenous and terminal kinds swap.
    pub fn reverse(&self) -> Dag {
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let mut n = n.clone();
                n.kind = match n.kind {
                    Kind::Exogenous => Kind::Terminal,
                    Kind::Terminal => Kind::Exogenous,
                    Kind::Internal => Kind::Internal,
                };
                n
            })
            .collect();
        let edges = self.edges.iter().map(|&(u, v)| (v, u)).collect();
        Dag::new(nodes, edges).expect("reversing a valid DAG cannot fail")
    }
}

#[derive(Copy, Clone)]
enum Direction {
    Forward,
    Backward,
}

/// Ordered partition of a DAG's nodes into layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Layering {
    layers: Vec<BTreeSet<NodeId>>,
}

/// Outcome of layering validation: either valid or a named violation.
#[derive(Clone, Debug, PartialEq)]
pub enum LayeringReport {
    Valid,
    /// Two members of the same layer are causally related.
    IntraLayerAncestry {
        layer: usize,
        ancestor: NodeId,
        descendant: NodeId,
    },
    /// A directed path between non-adjacent layers avoids the layer between
    /// them.
    SkippedLayer {
        from_layer: usize,
        skipped_layer: usize,
        to_layer: usize,
        path: Vec<NodeId>,
    },
    /// The layering does not partition the DAG's node set.
    BadCover(String),
}

impl LayeringReport {
    pub fn is_valid(&self) -> bool {
        matches!(self, LayeringReport::Valid)
    }
}

impl Layering {
    pub fn new(layers: Vec<BTreeSet<NodeId>>) -> Self {
        Layering { layers }
    }

    pub fn from_slices(layers: &[&[NodeId]]) -> Self {
        Layering {
            layers: layers.iter().map(|l| l.iter().copied().collect()).collect(),
        }
    }

    pub fn layers(&self) -> &[BTreeSet<NodeId>] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, j: usize) -> &BTreeSet<NodeId> {
        &self.layers[j]
    }

    pub fn layer_of(&self, x: NodeId) -> Option<usize> {
        self.layers.iter().position(|l| l.contains(&x))
    }

    /// Drop a node (after un-measurement surgery); empty layers are kept so
    /// indices remain stable.
    pub fn without(&self, z: NodeId) -> Layering {
        Layering {
            layers: self
                .layers
                .iter()
                .map(|l| l.iter().copied().filter(|&n| n != z).collect())
                .collect(),
        }
    }
}

/// Check the two layered-DAG invariants: no intra-layer ancestry, and every
/// directed path between layers `i` and `k` (either orientation) intercepted
/// by each layer strictly between them.
pub fn validate_layering(dag: &Dag, layering: &Layering) -> Result<LayeringReport> {
    let mut seen = BTreeSet::new();
    for layer in layering.layers() {
        for &n in layer {
            dag.node(n)?;
            if !seen.insert(n) {
                return Ok(LayeringReport::BadCover(format!(
                    "node {n} appears in more than one layer"
                )));
            }
        }
    }
    for n in dag.node_ids() {
        if !seen.contains(&n) {
            return Ok(LayeringReport::BadCover(format!(
                "node {n} is missing from the layering"
            )));
        }
    }

    for (j, layer) in layering.layers().iter().enumerate() {
        for &a in layer {
            let desc = dag.descendants(a);
            for &b in layer {
                if a != b && desc.contains(&b) {
                    return Ok(LayeringReport::IntraLayerAncestry {
                        layer: j,
                        ancestor: a,
                        descendant: b,
                    });
                }
            }
        }
    }

    let m = layering.len();
    for i in 0..m {
        for k in i + 2..m {
            for j in i + 1..k {
                // A path from layer i to layer k that avoids layer j, in
                // either direction, breaks interception.
                for (src, dst) in [(i, k), (k, i)] {
                    if let Some(path) =
                        path_avoiding(dag, layering.layer(src), layering.layer(dst), layering.layer(j))
                    {
                        return Ok(LayeringReport::SkippedLayer {
                            from_layer: src,
                            skipped_layer: j,
                            to_layer: dst,
                            path,
                        });
                    }
                }
            }
        }
    }
    Ok(LayeringReport::Valid)
}

/// Directed path from `src` to `dst` avoiding interior nodes in `avoid`,
/// found by BFS. Returns the witness path if one exists.
fn path_avoiding(
    dag: &Dag,
    src: &BTreeSet<NodeId>,
    dst: &BTreeSet<NodeId>,
    avoid: &BTreeSet<NodeId>,
) -> Option<Vec<NodeId>> {
    let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut queue: Vec<NodeId> = src.iter().copied().collect();
    let mut seen: BTreeSet<NodeId> = src.clone();
    while let Some(n) = queue.pop() {
        for c in dag.children(n) {
            if dst.contains(&c) {
                let mut path = vec![c, n];
                let mut cur = n;
                while let Some(&p) = prev.get(&cur) {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            if avoid.contains(&c) || !seen.insert(c) {
                continue;
            }
            prev.insert(c, n);
            queue.push(c);
        }
    }
    None
}

/// Which blocking rows apply: classical uses {g-FCC, g-SSO, g-BK}; quantum
/// swaps the fork row for g-BK* (fork blocked only when its middle node is
/// unconditioned with no conditioned ancestor).
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ruleset {
    Classical,
    Quantum,
}

impl fmt::Display for Ruleset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ruleset::Classical => write!(f, "classical"),
            Ruleset::Quantum => write!(f, "quantum"),
        }
    }
}

/// How each node is measured in a counterfactual experiment.
#[derive(Clone, Debug, PartialEq)]
pub enum Control {
    Reference,
    /// Intervention re-preparing per a target distribution over the node's
    /// d^2 outcomes.
    Do(Vec<f64>),
    /// Fine-grained intervention pinning the named outcome.
    DoFine(usize),
    Undo,
}

/// Map from node to control value; nodes not mentioned default to Reference.
#[derive(Clone, Debug, Default)]
pub struct ControlAssignment {
    controls: BTreeMap<NodeId, Control>,
}

impl ControlAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reference() -> Self {
        Self::default()
    }

    pub fn set(mut self, node: NodeId, control: Control) -> Self {
        self.controls.insert(node, control);
        self
    }

    pub fn get(&self, node: NodeId) -> &Control {
        self.controls.get(&node).unwrap_or(&Control::Reference)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Control)> {
        self.controls.iter()
    }

    /// Check the assignment against a DAG: Do targets must normalize over
    /// d^2 outcomes, Undo must not hit exogenous nodes.
    pub fn validate(&self, dag: &Dag) -> Result<()> {
        for (&node, control) in &self.controls {
            let n = dag.node(node)?;
            match control {
                Control::Reference => {}
                Control::Do(target) => {
                    let card = n.dim * n.dim;
                    if target.len() != card {
                        return Err(Error::BadTarget(format!(
                            "target for node {node} has {} entries, expected {card}",
                            target.len()
                        )));
                    }
                    if target.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) {
                        return Err(Error::BadTarget(format!(
                            "target for node {node} has entries outside [0,1]"
                        )));
                    }
                    let total: f64 = target.iter().sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return Err(Error::BadTarget(format!(
                            "target for node {node} sums to {total}, expected 1"
                        )));
                    }
                }
                Control::DoFine(k) => {
                    let card = n.dim * n.dim;
                    if *k >= card {
                        return Err(Error::BadTarget(format!(
                            "outcome {k} out of range for node {node} with {card} outcomes"
                        )));
                    }
                }
                Control::Undo => {
                    if dag.parents(node).is_empty() {
                        return Err(Error::UndoExogenous(node));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_disjoint(sets: &[&BTreeSet<NodeId>]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for set in sets {
        for &n in *set {
            if !seen.insert(n) {
                return Err(Error::OverlappingSets(n));
            }
        }
    }
    Ok(())
}

/// True iff every undirected path between `u_set` and `v_set` is blocked by
/// `w_set` under the given ruleset.
pub fn separated(
    dag: &Dag,
    u_set: &BTreeSet<NodeId>,
    v_set: &BTreeSet<NodeId>,
    w_set: &BTreeSet<NodeId>,
    rules: Ruleset,
) -> Result<bool> {
    separated_with_cap(dag, u_set, v_set, w_set, rules, SEPARATION_NODE_CAP)
}

pub fn separated_with_cap(
    dag: &Dag,
    u_set: &BTreeSet<NodeId>,
    v_set: &BTreeSet<NodeId>,
    w_set: &BTreeSet<NodeId>,
    rules: Ruleset,
    cap: usize,
) -> Result<bool> {
    check_disjoint(&[u_set, v_set, w_set])?;
    if dag.node_count() > cap {
        return Err(Error::NodeCapExceeded {
            nodes: dag.node_count(),
            cap,
        });
    }
    for set in [u_set, v_set, w_set] {
        for &n in set {
            dag.node(n)?;
        }
    }
    for &u in u_set {
        for &v in v_set {
            if !all_paths_blocked(dag, u, v, w_set, rules) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// DFS over undirected simple paths from `u` to `v`; each complete path is
/// tested against the blocking rules.
fn all_paths_blocked(
    dag: &Dag,
    u: NodeId,
    v: NodeId,
    w_set: &BTreeSet<NodeId>,
    rules: Ruleset,
) -> bool {
    let mut path = vec![u];
    let mut on_path: BTreeSet<NodeId> = [u].into();
    paths_blocked_rec(dag, v, w_set, rules, &mut path, &mut on_path)
}

fn paths_blocked_rec(
    dag: &Dag,
    target: NodeId,
    w_set: &BTreeSet<NodeId>,
    rules: Ruleset,
    path: &mut Vec<NodeId>,
    on_path: &mut BTreeSet<NodeId>,
) -> bool {
    let last = *path.last().unwrap();
    let mut neighbors: Vec<NodeId> = dag.children(last).into_iter().collect();
    neighbors.extend(dag.parents(last));
    neighbors.sort();
    neighbors.dedup();
    for n in neighbors {
        if on_path.contains(&n) {
            continue;
        }
        path.push(n);
        let done = n == target;
        let ok = if done {
            path_blocked(dag, path, w_set, rules)
        } else {
            on_path.insert(n);
            let r = paths_blocked_rec(dag, target, w_set, rules, path, on_path);
            on_path.remove(&n);
            r
        };
        path.pop();
        if !ok {
            return false;
        }
    }
    true
}

/// A path is blocked iff at least one interior triple is blocked.
fn path_blocked(dag: &Dag, path: &[NodeId], w_set: &BTreeSet<NodeId>, rules: Ruleset) -> bool {
    for win in path.windows(3) {
        let (a, c, b) = (win[0], win[1], win[2]);
        let into = dag.has_edge(a, c);
        let out = dag.has_edge(c, b);
        let blocked = match (into, out) {
            // chain a -> c -> b or a <- c <- b
            (true, true) | (false, false) => w_set.contains(&c),
            // collider a -> c <- b
            (true, false) => {
                !w_set.contains(&c) && dag.descendants(c).is_disjoint(w_set)
            }
            // fork a <- c -> b
            (false, true) => match rules {
                Ruleset::Classical => w_set.contains(&c),
                Ruleset::Quantum => {
                    !w_set.contains(&c) && dag.ancestors(c).is_disjoint(w_set)
                }
            },
        };
        if blocked {
            return true;
        }
    }
    false
}

/// A separation statement: `u` and `v` independent given `w`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Independence {
    pub u: NodeId,
    pub v: NodeId,
    pub w: BTreeSet<NodeId>,
}

impl fmt::Display for Independence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w: Vec<String> = self.w.iter().map(|n| n.to_string()).collect();
        write!(f, "({} _||_ {} | {{{}}})", self.u, self.v, w.join(","))
    }
}

/// All separated singleton pairs with every conditioning subset of the
/// remaining nodes, deduplicated by symmetry (u < v).
pub fn implied_independences(dag: &Dag, rules: Ruleset) -> Result<Vec<Independence>> {
    implied_independences_with_cap(dag, rules, ENUMERATION_NODE_CAP)
}

pub fn implied_independences_with_cap(
    dag: &Dag,
    rules: Ruleset,
    cap: usize,
) -> Result<Vec<Independence>> {
    if dag.node_count() > cap {
        return Err(Error::NodeCapExceeded {
            nodes: dag.node_count(),
            cap,
        });
    }
    let ids: Vec<NodeId> = dag.node_ids().collect();
    let mut out = Vec::new();
    for (i, &u) in ids.iter().enumerate() {
        for &v in &ids[i + 1..] {
            let rest: Vec<NodeId> = ids.iter().copied().filter(|&n| n != u && n != v).collect();
            for mask in 0..(1usize << rest.len()) {
                let w: BTreeSet<NodeId> = rest
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mask >> k & 1 == 1)
                    .map(|(_, &n)| n)
                    .collect();
                let u_set: BTreeSet<NodeId> = [u].into();
                let v_set: BTreeSet<NodeId> = [v].into();
                if separated_with_cap(dag, &u_set, &v_set, &w, rules, cap)? {
                    out.push(Independence { u, v, w });
                }
            }
        }
    }
    Ok(out)
}
