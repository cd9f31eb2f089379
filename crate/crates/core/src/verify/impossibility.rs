//! Why interventions cannot be inferred without layer structure: the
//! reference pairing operators of the three-node circuit span only a
//! 64-dimensional slice of the 256-dimensional comb space, so two distinct
//! combs can agree on every reference probability yet disagree after an
//! intervention. This module measures the ranks and constructs such a pair
//! by a null-space perturbation kept positive semidefinite by scaling.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Dag, Kind, Layering, NodeId};
use crate::linalg::{
    c, haar_unitary, hermitian_eigenvalues, identity, kron_all, CMat,
};
use crate::network::{reference_distribution, QuantumNetwork, SubChannel};
use crate::quantum::{comb_pair_probability, sic_povm, Channel, SicPovm};
use crate::tol::Tolerances;
use crate::verify::{CaseResult, SuiteResult};

/// Relative singular-value threshold for rank decisions.
const RANK_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct ImpossibilityReport {
    pub reference_operator_count: usize,
    pub reference_rank: usize,
    pub intervention_operator_count: usize,
    pub intervention_rank: usize,
    pub comb_vs_oracle_max_diff: f64,
    pub comb_min_eigenvalue: f64,
    pub perturbed_min_eigenvalue: f64,
    pub max_reference_diff: f64,
    pub max_post_intervention_diff: f64,
    pub passed: bool,
}

impl ImpossibilityReport {
    pub fn to_suite(&self) -> SuiteResult {
        let mut suite = SuiteResult::new("impossibility", vec![]);
        suite.push(CaseResult::new(
            "reference pairing rank is 64 of 256",
            self.reference_rank == 64,
            self.reference_rank as f64,
        ));
        suite.push(CaseResult::new(
            "intervention pairing rank is 256",
            self.intervention_rank == 256,
            self.intervention_rank as f64,
        ));
        suite.push(CaseResult::new(
            "comb pairing reproduces the circuit oracle",
            self.comb_vs_oracle_max_diff < 1e-12,
            self.comb_vs_oracle_max_diff,
        ));
        suite.push(CaseResult::new(
            "perturbed comb stays positive semidefinite",
            self.perturbed_min_eigenvalue > -1e-12,
            self.perturbed_min_eigenvalue,
        ));
        suite.push(CaseResult::new(
            "comb pair agrees on reference statistics",
            self.max_reference_diff < 1e-12,
            self.max_reference_diff,
        ));
        suite.push(CaseResult::new(
            "comb pair disagrees post-intervention",
            self.max_post_intervention_diff >= 1e-3,
            self.max_post_intervention_diff,
        ));
        suite
    }
}

/// Mostly-depolarizing unitary mixture: unbiased, CPTP, with a strictly
/// positive Choi matrix so the comb admits perturbations.
fn noisy_unitary_channel(seed: u64, p_depolarize: f64) -> Result<Channel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = haar_unitary(2, &mut rng);
    let udag = u.adjoint();
    Channel::from_fn(2, 2, move |rho| {
        let coherent = &u * rho * &udag;
        let mixed = identity(2).map(|z| z * rho.trace() / 2.0);
        coherent.map(|z| z * (1.0 - p_depolarize)) + mixed.map(|z| z * p_depolarize)
    })
}

/// Real coordinates of a Hermitian matrix in an orthonormal (Frobenius)
/// basis: diagonal entries, then sqrt(2) * (re, im) of the upper triangle.
fn hermitian_coords(h: &CMat) -> Vec<f64> {
    let n = h.nrows();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        out.push(h[(i, i)].re);
    }
    let s = 2f64.sqrt();
    for i in 0..n {
        for j in i + 1..n {
            out.push(s * h[(i, j)].re);
            out.push(s * h[(i, j)].im);
        }
    }
    out
}

fn coords_to_hermitian(coords: &[f64], n: usize) -> CMat {
    let mut h = CMat::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = c(coords[i], 0.0);
    }
    let s = 2f64.sqrt();
    let mut k = n;
    for i in 0..n {
        for j in i + 1..n {
            let re = coords[k] / s;
            let im = coords[k + 1] / s;
            k += 2;
            h[(i, j)] = c(re, im);
            h[(j, i)] = c(re, -im);
        }
    }
    h
}

/// Rank of the span of a set of Hermitian operators, by the eigenvalues of
/// their Gram matrix (singular values are their square roots).
fn span_rank(ops: &[CMat]) -> usize {
    let n = ops.len();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let g = (&ops[i] * &ops[j]).trace().re;
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    let eig = gram.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    let cut = (RANK_THRESHOLD * max.sqrt()).powi(2);
    eig.eigenvalues.iter().filter(|&&l| l > cut).count()
}

fn ref_op(povm: &SicPovm, a: usize, w: usize, d: usize) -> CMat {
    kron_all(&[
        povm.projector(a),
        &povm.effect(w).transpose(),
        povm.projector(w),
        &povm.effect(d).transpose(),
    ])
}

fn int_op(povm: &SicPovm, a: usize, u: usize, w: usize, d: usize) -> CMat {
    kron_all(&[
        povm.projector(a),
        &povm.effect(u).transpose(),
        povm.projector(w),
        &povm.effect(d).transpose(),
    ])
}

pub fn impossibility_demo() -> Result<ImpossibilityReport> {
    let povm = sic_povm(2, None)?;
    let t1 = noisy_unitary_channel(101, 0.9)?;
    let t2 = noisy_unitary_channel(202, 0.9)?;

    // Comb on A (x) W_I (x) W_O (x) D, input weight 1/d_A^2 absorbed.
    let k1 = t1.choi().kronecker(t2.choi()).map(|z| z / 4.0);

    // Cross-check the pairing convention against the circuit oracle on the
    // corresponding chain network.
    let dag = Dag::new(
        vec![
            crate::verify::fixtures::node(0, "A", 2, Kind::Exogenous),
            crate::verify::fixtures::node(1, "W", 2, Kind::Internal),
            crate::verify::fixtures::node(2, "D", 2, Kind::Terminal),
        ],
        vec![(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2))],
    )?;
    let lay = Layering::from_slices(&[&[NodeId(0)], &[NodeId(1)], &[NodeId(2)]]);
    let net = QuantumNetwork::new(
        dag,
        lay,
        vec![
            vec![SubChannel {
                sources: vec![NodeId(0)],
                targets: vec![NodeId(1)],
                channel: t1.clone(),
            }],
            vec![SubChannel {
                sources: vec![NodeId(1)],
                targets: vec![NodeId(2)],
                channel: t2.clone(),
            }],
        ],
        &BTreeMap::new(),
        Tolerances::default(),
    )?;
    let oracle = reference_distribution(&net)?;
    let mut comb_vs_oracle: f64 = 0.0;
    for a in 0..4 {
        for w in 0..4 {
            for d in 0..4 {
                let op = ref_op(&povm, a, w, d);
                let via_comb = comb_pair_probability(&k1, &[&op])?;
                let via_net =
                    oracle.prob_of(&[(NodeId(0), a), (NodeId(1), w), (NodeId(2), d)])?;
                comb_vs_oracle = comb_vs_oracle.max((via_comb - via_net).abs());
            }
        }
    }

    // Rank of the two pairing families.
    let mut ref_ops = Vec::with_capacity(64);
    for a in 0..4 {
        for w in 0..4 {
            for d in 0..4 {
                ref_ops.push(ref_op(&povm, a, w, d));
            }
        }
    }
    let mut int_ops = Vec::with_capacity(256);
    for a in 0..4 {
        for u in 0..4 {
            for w in 0..4 {
                for d in 0..4 {
                    int_ops.push(int_op(&povm, a, u, w, d));
                }
            }
        }
    }
    let reference_rank = span_rank(&ref_ops);
    let intervention_rank = span_rank(&int_ops);

    // Null-space perturbation: orthogonal (in Hermitian coordinates) to
    // every reference functional, with a large component along one
    // intervention functional.
    let dim = 256;
    let r = DMatrix::<f64>::from_fn(ref_ops.len(), dim, |i, j| hermitian_coords(&ref_ops[i])[j]);
    let gram = &r * r.transpose();
    let lu = gram.clone().lu();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for (a, u, w, d) in [(0, 1, 0, 0), (1, 2, 3, 0), (2, 3, 1, 2), (0, 3, 2, 1)] {
        let t = DMatrix::<f64>::from_column_slice(
            dim,
            1,
            &hermitian_coords(&int_op(&povm, a, u, w, d)),
        );
        let rt = &r * &t;
        let x = lu
            .solve(&rt)
            .ok_or_else(|| Error::BadComb("reference Gram matrix is singular".into()))?;
        let proj = &t - r.transpose() * x;
        let norm = proj.norm();
        if best.as_ref().map_or(true, |(n, _)| norm > *n) {
            best = Some((norm, proj.column(0).iter().copied().collect()));
        }
    }
    let (_, proj) = best.ok_or_else(|| Error::BadComb("no perturbation candidate".into()))?;
    let delta = coords_to_hermitian(&proj, 16);

    let comb_min = hermitian_eigenvalues(&k1)[0];
    let delta_eigs = hermitian_eigenvalues(&delta);
    let delta_radius = delta_eigs
        .iter()
        .map(|l| l.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let eps = 0.95 * comb_min / delta_radius;
    let k2 = &k1 + delta.map(|z| z * eps);
    let perturbed_min = hermitian_eigenvalues(&k2)[0];

    let mut max_ref_diff: f64 = 0.0;
    for op in &ref_ops {
        let p1 = comb_pair_probability(&k1, &[op])?;
        let p2 = comb_pair_probability(&k2, &[op])?;
        max_ref_diff = max_ref_diff.max((p1 - p2).abs());
    }
    // Post-intervention probabilities carry the SIC re-preparation weight
    // P'(w) = 1/4.
    let mut max_do_diff: f64 = 0.0;
    for op in &int_ops {
        let p1 = 0.25 * comb_pair_probability(&k1, &[op])?;
        let p2 = 0.25 * comb_pair_probability(&k2, &[op])?;
        max_do_diff = max_do_diff.max((p1 - p2).abs());
    }

    let report = ImpossibilityReport {
        reference_operator_count: ref_ops.len(),
        reference_rank,
        intervention_operator_count: int_ops.len(),
        intervention_rank,
        comb_vs_oracle_max_diff: comb_vs_oracle,
        comb_min_eigenvalue: comb_min,
        perturbed_min_eigenvalue: perturbed_min,
        max_reference_diff: max_ref_diff,
        max_post_intervention_diff: max_do_diff,
        passed: false,
    };
    let passed = report.to_suite().passed();
    Ok(ImpossibilityReport { passed, ..report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermitian_coords_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = crate::linalg::ginibre(4, &mut rng);
        let h = (&g + g.adjoint()).map(|z| z / 2.0);
        let back = coords_to_hermitian(&hermitian_coords(&h), 4);
        assert!(crate::linalg::max_abs_diff(&h, &back) < 1e-12);
    }

    #[test]
    fn demo_measures_the_expected_ranks_and_gap() {
        let report = impossibility_demo().unwrap();
        assert_eq!(report.reference_operator_count, 64);
        assert_eq!(report.reference_rank, 64);
        assert_eq!(report.intervention_operator_count, 256);
        assert_eq!(report.intervention_rank, 256);
        assert!(report.comb_vs_oracle_max_diff < 1e-12);
        assert!(report.max_reference_diff < 1e-12);
        assert!(
            report.max_post_intervention_diff >= 1e-3,
            "post-do gap {}",
            report.max_post_intervention_diff
        );
        assert!(report.passed);
    }
}
