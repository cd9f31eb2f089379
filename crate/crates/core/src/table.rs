//! Exact joint probability tables over node-outcome tuples.
//!
//! A table is a dense row-major array over ordered variables; the first
//! variable is the most significant index. Entries in `[-1e-9, 0)` are
//! treated as floating-point dust and clamped to zero; anything lower is a
//! hard error, signalling an algebra bug or a non-realizable input.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::linalg::{advance, ravel, unravel};

pub const NEGATIVITY_HARD_LIMIT: f64 = 1e-9;
const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub id: NodeId,
    pub name: String,
    /// Outcome count: d^2 for quantum nodes, the plain outcome count for
    /// classical nodes.
    pub card: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbTable {
    variables: Vec<Variable>,
    values: Vec<f64>,
}

impl ProbTable {
    /// Validate and normalize: negative dust is clamped, the total must be
    /// 1 within 1e-9, and the table is then renormalized exactly.
    pub fn new(variables: Vec<Variable>, mut values: Vec<f64>) -> Result<Self> {
        let expected: usize = variables.iter().map(|v| v.card).product();
        if values.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                got: values.len(),
            });
        }
        let mut names = BTreeSet::new();
        for v in &variables {
            if !names.insert(v.name.clone()) {
                return Err(Error::IncompatibleTables(format!(
                    "duplicate variable name {:?}",
                    v.name
                )));
            }
        }
        clamp_dust(&mut values)?;
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized(total));
        }
        for v in &mut values {
            *v /= total;
        }
        Ok(ProbTable { variables, values })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cards(&self) -> Vec<usize> {
        self.variables.iter().map(|v| v.card).collect()
    }

    pub fn var_position(&self, id: NodeId) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v.id == id)
            .ok_or_else(|| Error::UnknownVariable(format!("node {id}")))
    }

    pub fn has_var(&self, id: NodeId) -> bool {
        self.variables.iter().any(|v| v.id == id)
    }

    pub fn get(&self, outcomes: &[usize]) -> f64 {
        self.values[ravel(outcomes, &self.cards())]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Iterate `(outcome-tuple, probability)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        let cards = self.cards();
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &p)| (unravel(i, &cards), p))
    }

    /// Marginal over the given nodes, in the order they appear in this
    /// table.
    pub fn marginal(&self, keep: &[NodeId]) -> Result<ProbTable> {
        let keep_set: BTreeSet<NodeId> = keep.iter().copied().collect();
        for &id in keep {
            self.var_position(id)?;
        }
        let positions: Vec<usize> = (0..self.variables.len())
            .filter(|&i| keep_set.contains(&self.variables[i].id))
            .collect();
        let out_vars: Vec<Variable> = positions
            .iter()
            .map(|&i| self.variables[i].clone())
            .collect();
        let out_cards: Vec<usize> = out_vars.iter().map(|v| v.card).collect();
        let mut out_values = vec![0.0; out_cards.iter().product::<usize>().max(1)];
        let cards = self.cards();
        for (i, &p) in self.values.iter().enumerate() {
            let idx = unravel(i, &cards);
            let sub: Vec<usize> = positions.iter().map(|&k| idx[k]).collect();
            out_values[ravel(&sub, &out_cards)] += p;
        }
        Ok(ProbTable {
            variables: out_vars,
            values: out_values,
        })
    }

    /// Sum a variable out of the table.
    pub fn sum_out(&self, id: NodeId) -> Result<ProbTable> {
        self.var_position(id)?;
        let keep: Vec<NodeId> = self
            .variables
            .iter()
            .filter(|v| v.id != id)
            .map(|v| v.id)
            .collect();
        self.marginal(&keep)
    }

    /// Maximum absolute entry difference. Tables must agree on variable
    /// names, order and cardinalities.
    pub fn max_norm_diff(&self, other: &ProbTable) -> Result<f64> {
        if self.variables.len() != other.variables.len() {
            return Err(Error::IncompatibleTables(format!(
                "{} vs {} variables",
                self.variables.len(),
                other.variables.len()
            )));
        }
        for (a, b) in self.variables.iter().zip(&other.variables) {
            if a.name != b.name || a.card != b.card {
                return Err(Error::IncompatibleTables(format!(
                    "variable {:?}({}) vs {:?}({})",
                    a.name, a.card, b.name, b.card
                )));
            }
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Probability of a partial assignment (marginalizing all other
    /// variables), given as (node, outcome) pairs.
    pub fn prob_of(&self, assignment: &[(NodeId, usize)]) -> Result<f64> {
        let mut fixed: Vec<Option<usize>> = vec![None; self.variables.len()];
        for &(id, k) in assignment {
            let pos = self.var_position(id)?;
            if k >= self.variables[pos].card {
                return Err(Error::UnknownVariable(format!(
                    "outcome {k} out of range for {}",
                    self.variables[pos].name
                )));
            }
            fixed[pos] = Some(k);
        }
        if self.variables.is_empty() {
            return Ok(self.values[0]);
        }
        let cards = self.cards();
        let mut total = 0.0;
        let mut idx = vec![0usize; cards.len()];
        loop {
            if fixed
                .iter()
                .zip(&idx)
                .all(|(f, &i)| f.map_or(true, |k| k == i))
            {
                total += self.values[ravel(&idx, &cards)];
            }
            if !advance(&mut idx, &cards) {
                break;
            }
        }
        Ok(total)
    }

    /// CSV: header of variable names plus a final probability column; one
    /// row per outcome tuple; probabilities carry 17 significant digits so
    /// that round trips are exact.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.variables.iter().map(|v| v.name.as_str()).collect();
        out.push_str(&names.join(","));
        if !names.is_empty() {
            out.push(',');
        }
        out.push_str("probability\n");
        for (idx, p) in self.iter() {
            for k in &idx {
                out.push_str(&k.to_string());
                out.push(',');
            }
            out.push_str(&format!("{p:.16e}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<ProbTable> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::IncompatibleTables("empty csv".into()))?;
        let mut cols: Vec<&str> = header.split(',').collect();
        if cols.pop() != Some("probability") {
            return Err(Error::IncompatibleTables(
                "last csv column must be `probability`".into(),
            ));
        }
        let nvars = cols.len();
        let mut rows: Vec<(Vec<usize>, f64)> = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != nvars + 1 {
                return Err(Error::IncompatibleTables(format!(
                    "row has {} fields, expected {}",
                    fields.len(),
                    nvars + 1
                )));
            }
            let idx: Vec<usize> = fields[..nvars]
                .iter()
                .map(|f| f.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::IncompatibleTables(format!("bad outcome index: {e}")))?;
            let p: f64 = fields[nvars]
                .trim()
                .parse()
                .map_err(|e| Error::IncompatibleTables(format!("bad probability: {e}")))?;
            rows.push((idx, p));
        }
        let cards: Vec<usize> = (0..nvars)
            .map(|k| rows.iter().map(|(idx, _)| idx[k] + 1).max().unwrap_or(1))
            .collect();
        let expected: usize = cards.iter().product();
        if rows.len() != expected {
            return Err(Error::IncompatibleTables(format!(
                "{} rows cannot fill a {:?} table",
                rows.len(),
                cards
            )));
        }
        let mut values = vec![0.0; expected];
        for (idx, p) in &rows {
            values[ravel(idx, &cards)] = *p;
        }
        let variables = cols
            .iter()
            .enumerate()
            .map(|(i, name)| Variable {
                id: NodeId(i as u32),
                name: name.trim().to_string(),
                card: cards[i],
            })
            .collect();
        ProbTable::new(variables, values)
    }

    /// Structured-text format with full variable metadata (ids, names,
    /// cardinalities); exact round trip.
    pub fn to_structured_text(&self) -> String {
        let mut out = String::from("table v1\n");
        for v in &self.variables {
            out.push_str(&format!("var {} {} {}\n", v.id, v.name, v.card));
        }
        out.push_str("values\n");
        for p in &self.values {
            out.push_str(&format!("{p:.16e}\n"));
        }
        out
    }

    pub fn from_structured_text(text: &str) -> Result<ProbTable> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("table v1") {
            return Err(Error::IncompatibleTables(
                "expected `table v1` header".into(),
            ));
        }
        let mut variables = Vec::new();
        let mut in_values = false;
        let mut values = Vec::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "values" {
                in_values = true;
                continue;
            }
            if in_values {
                values.push(
                    line.parse::<f64>()
                        .map_err(|e| Error::IncompatibleTables(format!("bad value: {e}")))?,
                );
            } else {
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() != 4 || parts[0] != "var" {
                    return Err(Error::IncompatibleTables(format!(
                        "bad variable line {line:?}"
                    )));
                }
                variables.push(Variable {
                    id: NodeId(
                        parts[1]
                            .parse()
                            .map_err(|e| Error::IncompatibleTables(format!("bad id: {e}")))?,
                    ),
                    name: parts[2].to_string(),
                    card: parts[3].parse().map_err(|e| {
                        Error::IncompatibleTables(format!("bad cardinality: {e}"))
                    })?,
                });
            }
        }
        ProbTable::new(variables, values)
    }
}

/// Clamp entries in `[-hard_limit, 0)` to zero; error below.
fn clamp_dust(values: &mut [f64]) -> Result<()> {
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -NEGATIVITY_HARD_LIMIT {
                return Err(Error::NegativeProbability(*v));
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Clamping statistics from inference rules: how many entries were dust and
/// the most negative value seen.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClampStats {
    pub clamped: usize,
    pub most_negative: f64,
}

impl ClampStats {
    pub fn clamped_any(&self) -> bool {
        self.clamped > 0
    }

    pub fn merge(&mut self, other: ClampStats) {
        self.clamped += other.clamped;
        self.most_negative = self.most_negative.min(other.most_negative);
    }
}

/// Inference-rule negativity policy: dust in `[-1e-9, 0)` clamps with a
/// warning recorded in the stats; anything below signals that the reference
/// distribution was not realizable by a quantum network.
pub fn clamp_inferred(values: &mut [f64]) -> Result<ClampStats> {
    let mut stats = ClampStats::default();
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -NEGATIVITY_HARD_LIMIT {
                return Err(Error::NonQuantumReference(*v, NEGATIVITY_HARD_LIMIT));
            }
            stats.clamped += 1;
            stats.most_negative = stats.most_negative.min(*v);
            *v = 0.0;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(id: u32, name: &str, card: usize) -> Variable {
        Variable {
            id: NodeId(id),
            name: name.into(),
            card,
        }
    }

    fn xy_table() -> ProbTable {
        // P(X,Y) with X,Y binary: perfectly correlated uniform.
        ProbTable::new(
            vec![var(0, "X", 2), var(1, "Y", 2)],
            vec![0.5, 0.0, 0.0, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn construction_validates_shape_and_total() {
        assert!(matches!(
            ProbTable::new(vec![var(0, "X", 2)], vec![0.5, 0.25, 0.25]),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(
            ProbTable::new(vec![var(0, "X", 2)], vec![0.5, 0.4]),
            Err(Error::NotNormalized(_))
        ));
        assert!(matches!(
            ProbTable::new(vec![var(0, "X", 2)], vec![1.5, -0.5]),
            Err(Error::NegativeProbability(_))
        ));
    }

    #[test]
    fn dust_is_clamped_and_renormalized() {
        let t = ProbTable::new(vec![var(0, "X", 2)], vec![1.0, -1e-12]).unwrap();
        assert_eq!(t.values()[1], 0.0);
        assert!((t.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn marginal_and_prob_of() {
        let t = xy_table();
        let mx = t.marginal(&[NodeId(0)]).unwrap();
        assert_eq!(mx.values(), &[0.5, 0.5]);
        let p = t.prob_of(&[(NodeId(0), 0), (NodeId(1), 0)]).unwrap();
        assert_eq!(p, 0.5);
        let p = t.prob_of(&[(NodeId(1), 1)]).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn marginal_keeps_table_order() {
        let t = ProbTable::new(
            vec![var(0, "A", 2), var(1, "B", 2), var(2, "C", 2)],
            vec![0.125; 8],
        )
        .unwrap();
        let m = t.marginal(&[NodeId(2), NodeId(0)]).unwrap();
        let names: Vec<&str> = m.variables().iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["A", "C"]);
    }

    #[test]
    fn sum_out_matches_marginal() {
        let t = xy_table();
        let a = t.sum_out(NodeId(1)).unwrap();
        let b = t.marginal(&[NodeId(0)]).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let base = [0.1, 0.2, 1.0 / 3.0, 1.0 / 7.0, 0.1 + 1e-13];
        let last = 1.0 - base.iter().sum::<f64>();
        let mut values = base.to_vec();
        values.push(last);
        let t = ProbTable::new(vec![var(0, "X", 2), var(1, "Y", 3)], values).unwrap();
        let back = ProbTable::from_csv(&t.to_csv()).unwrap();
        assert_eq!(t.values(), back.values());
        let back2 = ProbTable::from_structured_text(&t.to_structured_text()).unwrap();
        assert_eq!(t.values(), back2.values());
        assert_eq!(t.variables(), back2.variables());
    }

    #[test]
    fn max_norm_requires_matching_shape() {
        let t = xy_table();
        let other = ProbTable::new(vec![var(0, "X", 2)], vec![0.5, 0.5]).unwrap();
        assert!(t.max_norm_diff(&other).is_err());
        assert_eq!(t.max_norm_diff(&xy_table()).unwrap(), 0.0);
    }

    #[test]
    fn clamp_inferred_policy() {
        let mut vals = vec![0.5, -1e-10, 0.5];
        let stats = clamp_inferred(&mut vals).unwrap();
        assert_eq!(stats.clamped, 1);
        assert_eq!(vals[1], 0.0);
        let mut bad = vec![0.5, -1e-6];
        assert!(matches!(
            clamp_inferred(&mut bad),
            Err(Error::NonQuantumReference(..))
        ));
    }
}
