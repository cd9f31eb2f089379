//! SIC-POVMs, SIC-instruments, CPTP channels in Choi form, and comb-style
//! trace pairing.
//!
//! Conventions, fixed once and used everywhere:
//!
//! - Weyl-Heisenberg orbit: shift `X` and clock `Z` on dimension d, the
//!   projector for outcome `y = a*d + b` is `X^a Z^b |f><f| Z^-b X^-a` for
//!   fiducial `f`. Built-in fiducials exist for d = 2 (tetrahedron vector)
//!   and d = 3 (Hesse-configuration vector); other dimensions require a
//!   user-supplied numeric fiducial.
//! - Choi matrix of a map `M: H_in -> H_out` is
//!   `C = sum_ij |i><j| (x) M(|j><i|)^T`, an operator on `H_in (x) H_out`
//!   (input factor most significant). This is the transpose of the standard
//!   Choi matrix, so complete positivity is still equivalent to `C >= 0`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    c, dagger, haar_unitary, hermitian_eigenvalues, identity, is_hermitian, kron_all,
    max_abs_diff, ptrace, CMat, ONE, ZERO,
};
use crate::tol::Tolerances;

/// d=2 fiducial: Bloch vector (1,1,1)/sqrt(3).
const FIDUCIAL_D2: [(f64, f64); 2] = [
    (0.88807383397711526, 0.0),
    (0.3250575836718681, 0.32505758367186804),
];

/// d=3 fiducial: (0, 1, -1)/sqrt(2).
const FIDUCIAL_D3: [(f64, f64); 3] = [
    (0.0, 0.0),
    (std::f64::consts::FRAC_1_SQRT_2, 0.0),
    (-std::f64::consts::FRAC_1_SQRT_2, 0.0),
];

/// A symmetric informationally complete POVM: d^2 rank-1 projectors with
/// constant pairwise overlap `(d delta + 1)/(d + 1)`; effects are the
/// projectors divided by d.
#[derive(Clone, Debug)]
pub struct SicPovm {
    dim: usize,
    projectors: Vec<CMat>,
}

impl SicPovm {
    /// Number of outcomes, d^2.
    pub fn outcomes(&self) -> usize {
        self.dim * self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn projector(&self, y: usize) -> &CMat {
        &self.projectors[y]
    }

    pub fn projectors(&self) -> &[CMat] {
        &self.projectors
    }

    pub fn effect(&self, y: usize) -> CMat {
        self.projectors[y].map(|z| z / self.dim as f64)
    }
}

fn shift_op(d: usize) -> CMat {
    CMat::from_fn(d, d, |i, j| if i == (j + 1) % d { ONE } else { ZERO })
}

fn clock_op(d: usize) -> CMat {
    let w = 2.0 * std::f64::consts::PI / d as f64;
    CMat::from_fn(d, d, |i, j| {
        if i == j {
            Complex64::from_polar(1.0, w * i as f64)
        } else {
            ZERO
        }
    })
}

fn builtin_fiducial(d: usize) -> Option<Vec<Complex64>> {
    match d {
        2 => Some(FIDUCIAL_D2.iter().map(|&(re, im)| c(re, im)).collect()),
        3 => Some(FIDUCIAL_D3.iter().map(|&(re, im)| c(re, im)).collect()),
        _ => None,
    }
}

/// Generate a SIC-POVM as the Weyl-Heisenberg orbit of a fiducial vector.
/// The overlap property is verified before returning; a fiducial whose orbit
/// deviates beyond 1e-8 is rejected with the maximum deviation reported.
pub fn sic_povm(d: usize, fiducial: Option<&[Complex64]>) -> Result<SicPovm> {
    sic_povm_with_tol(d, fiducial, &Tolerances::default())
}

pub fn sic_povm_with_tol(
    d: usize,
    fiducial: Option<&[Complex64]>,
    tol: &Tolerances,
) -> Result<SicPovm> {
    if d < 2 {
        return Err(Error::BadSicDimension(d));
    }
    let f: Vec<Complex64> = match fiducial {
        Some(f) => {
            if f.len() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    got: f.len(),
                });
            }
            f.to_vec()
        }
        None => builtin_fiducial(d).ok_or(Error::MissingFiducial(d))?,
    };
    let norm: f64 = f.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::NotAState("zero fiducial vector".into()));
    }
    let fvec = CMat::from_fn(d, 1, |i, _| f[i] / norm);

    let x = shift_op(d);
    let z = clock_op(d);
    let mut projectors = Vec::with_capacity(d * d);
    let mut xa = identity(d);
    for _a in 0..d {
        let mut dab = xa.clone();
        for _b in 0..d {
            let v = &dab * &fvec;
            projectors.push(&v * v.adjoint());
            dab = &dab * &z;
        }
        xa = &xa * &x;
    }

    // Reject fiducials that fail the SIC overlap test.
    let mut max_dev: f64 = 0.0;
    for (y, p) in projectors.iter().enumerate() {
        for (yp, q) in projectors.iter().enumerate() {
            let target = (d as f64 * if y == yp { 1.0 } else { 0.0 } + 1.0) / (d as f64 + 1.0);
            let got = (p * q).trace().re;
            max_dev = max_dev.max((got - target).abs());
        }
    }
    if max_dev > 1e-8 {
        return Err(Error::SicRejected {
            dev: max_dev,
            tol: 1e-8,
        });
    }

    let povm = SicPovm { dim: d, projectors };
    povm.verify(tol)?;
    Ok(povm)
}

impl SicPovm {
    /// Check completeness, overlaps, idempotence and unit rank within the
    /// structural tolerance.
    pub fn verify(&self, tol: &Tolerances) -> Result<()> {
        let d = self.dim;
        let mut sum = CMat::zeros(d, d);
        for p in &self.projectors {
            sum += p.map(|z| z / d as f64);
        }
        let dev = max_abs_diff(&sum, &identity(d));
        if dev > tol.structural {
            return Err(Error::SicRejected {
                dev,
                tol: tol.structural,
            });
        }
        for (y, p) in self.projectors.iter().enumerate() {
            let idem = max_abs_diff(&(p * p), p);
            let tr = (p.trace() - ONE).norm();
            if idem > tol.structural || tr > tol.structural {
                return Err(Error::SicRejected {
                    dev: idem.max(tr),
                    tol: tol.structural,
                });
            }
            for (yp, q) in self.projectors.iter().enumerate() {
                let target =
                    (d as f64 * if y == yp { 1.0 } else { 0.0 } + 1.0) / (d as f64 + 1.0);
                let dev = ((p * q).trace().re - target).abs();
                if dev > tol.structural {
                    return Err(Error::SicRejected {
                        dev,
                        tol: tol.structural,
                    });
                }
            }
        }
        Ok(())
    }
}

fn check_state(rho: &CMat, dim: usize, tol: &Tolerances) -> Result<()> {
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            got: rho.nrows(),
        });
    }
    if !is_hermitian(rho, tol.structural) {
        return Err(Error::NotAState("not Hermitian".into()));
    }
    if (rho.trace().re - 1.0).abs() > tol.structural {
        return Err(Error::NotAState(format!("trace {}", rho.trace().re)));
    }
    let min = hermitian_eigenvalues(rho)[0];
    if min < -tol.structural {
        return Err(Error::NotAState(format!("min eigenvalue {min:.3e}")));
    }
    Ok(())
}

/// Apply a SIC-instrument to a state: outcome probabilities
/// `tr(Pi_y rho) / d` and the post-measurement projectors.
pub fn sic_instrument(povm: &SicPovm, rho: &CMat) -> Result<(Vec<f64>, Vec<CMat>)> {
    sic_instrument_with_tol(povm, rho, &Tolerances::default())
}

pub fn sic_instrument_with_tol(
    povm: &SicPovm,
    rho: &CMat,
    tol: &Tolerances,
) -> Result<(Vec<f64>, Vec<CMat>)> {
    check_state(rho, povm.dim(), tol)?;
    let probs = povm
        .projectors
        .iter()
        .map(|p| ((p * rho).trace().re / povm.dim as f64).max(0.0))
        .collect();
    Ok((probs, povm.projectors.clone()))
}

/// A completely positive trace-preserving map stored as a Choi matrix (see
/// module docs for the basis convention).
#[derive(Clone, Debug)]
pub struct Channel {
    din: usize,
    dout: usize,
    choi: CMat,
}

/// Flags from [`check_channel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelReport {
    pub cp: bool,
    pub tp: bool,
    pub unbiased: bool,
}

impl Channel {
    /// Wrap a Choi matrix, verifying CP and TP.
    pub fn from_choi(din: usize, dout: usize, choi: CMat) -> Result<Self> {
        Self::from_choi_with_tol(din, dout, choi, &Tolerances::default())
    }

    pub fn from_choi_with_tol(
        din: usize,
        dout: usize,
        choi: CMat,
        tol: &Tolerances,
    ) -> Result<Self> {
        if choi.nrows() != din * dout || choi.ncols() != din * dout {
            return Err(Error::DimMismatch {
                expected: din * dout,
                got: choi.nrows(),
            });
        }
        let ch = Channel { din, dout, choi };
        let report = ch.report(tol);
        if !report.cp {
            return Err(Error::NotCompletelyPositive(
                hermitian_eigenvalues(&ch.choi)[0],
            ));
        }
        if !report.tp {
            let reduced = ptrace(&ch.choi, &[din, dout], &[true, false]);
            return Err(Error::NotTracePreserving(max_abs_diff(
                &reduced,
                &identity(din),
            )));
        }
        Ok(ch)
    }

    /// Build the Choi matrix by applying `map` to every basis element.
    pub fn from_fn(
        din: usize,
        dout: usize,
        map: impl Fn(&CMat) -> CMat,
    ) -> Result<Self> {
        let choi = choi_of_fn(din, dout, map);
        Self::from_choi(din, dout, choi)
    }

    pub fn from_kraus(din: usize, dout: usize, kraus: &[CMat]) -> Result<Self> {
        for k in kraus {
            if k.nrows() != dout || k.ncols() != din {
                return Err(Error::DimMismatch {
                    expected: dout * din,
                    got: k.nrows() * k.ncols(),
                });
            }
        }
        Self::from_fn(din, dout, |rho| {
            let mut out = CMat::zeros(dout, dout);
            for k in kraus {
                out += k * rho * dagger(k);
            }
            out
        })
    }

    /// Unitary conjugation `rho -> U rho U^dag`.
    pub fn from_unitary(u: &CMat) -> Result<Self> {
        let d = u.nrows();
        Self::from_kraus(d, d, &[u.clone()])
    }

    pub fn identity(d: usize) -> Self {
        Self::from_fn(d, d, |rho| rho.clone()).expect("identity channel is CPTP")
    }

    pub fn din(&self) -> usize {
        self.din
    }

    pub fn dout(&self) -> usize {
        self.dout
    }

    pub fn choi(&self) -> &CMat {
        &self.choi
    }

    fn report(&self, tol: &Tolerances) -> ChannelReport {
        let cp = is_hermitian(&self.choi, tol.structural)
            && hermitian_eigenvalues(&self.choi)[0] >= -tol.structural;
        let reduced = ptrace(&self.choi, &[self.din, self.dout], &[true, false]);
        let tp = max_abs_diff(&reduced, &identity(self.din)) <= tol.structural;
        let mixed_in = identity(self.din).map(|z| z / self.din as f64);
        let mixed_out = identity(self.dout).map(|z| z / self.dout as f64);
        let unbiased = max_abs_diff(&apply_channel_unchecked(self, &mixed_in), &mixed_out)
            <= tol.structural;
        ChannelReport { cp, tp, unbiased }
    }

    /// Choi-level composition: `self` then `after`.
    pub fn compose(&self, after: &Channel) -> Result<Channel> {
        if after.din != self.dout {
            return Err(Error::DimMismatch {
                expected: self.dout,
                got: after.din,
            });
        }
        let (din, dmid, dout) = (self.din, self.dout, after.dout);
        let mut choi = CMat::zeros(din * dout, din * dout);
        for i in 0..din {
            for j in 0..din {
                // (i,j) block of self's Choi is self(|j><i|)^T on H_mid.
                let mut block = CMat::zeros(dmid, dmid);
                for a in 0..dmid {
                    for b in 0..dmid {
                        block[(a, b)] = self.choi[(i * dmid + a, j * dmid + b)];
                    }
                }
                let mapped = apply_choi(&after.choi, dmid, dout, &block.transpose());
                for a in 0..dout {
                    for b in 0..dout {
                        // store after(self(|j><i|))^T
                        choi[(i * dout + a, j * dout + b)] = mapped[(b, a)];
                    }
                }
            }
        }
        Channel::from_choi(din, dout, choi)
    }
}

fn choi_of_fn(din: usize, dout: usize, map: impl Fn(&CMat) -> CMat) -> CMat {
    let mut choi = CMat::zeros(din * dout, din * dout);
    for i in 0..din {
        for j in 0..din {
            let mut basis = CMat::zeros(din, din);
            basis[(j, i)] = ONE;
            let m = map(&basis).transpose();
            for a in 0..dout {
                for b in 0..dout {
                    choi[(i * dout + a, j * dout + b)] = m[(a, b)];
                }
            }
        }
    }
    choi
}

/// Contract a Choi matrix against an input state:
/// `M(rho)[o,o'] = sum_{i,i'} choi[(i',o'),(i,o)] rho[i,i']`.
fn apply_choi(choi: &CMat, din: usize, dout: usize, rho: &CMat) -> CMat {
    let mut out = CMat::zeros(dout, dout);
    for o in 0..dout {
        for op in 0..dout {
            let mut acc = ZERO;
            for i in 0..din {
                for ip in 0..din {
                    acc += choi[(ip * dout + op, i * dout + o)] * rho[(i, ip)];
                }
            }
            out[(o, op)] = acc;
        }
    }
    out
}

fn apply_channel_unchecked(ch: &Channel, rho: &CMat) -> CMat {
    apply_choi(&ch.choi, ch.din, ch.dout, rho)
}

/// Apply a channel to a density matrix.
pub fn apply_channel(ch: &Channel, rho: &CMat) -> Result<CMat> {
    if rho.nrows() != ch.din || rho.ncols() != ch.din {
        return Err(Error::DimMismatch {
            expected: ch.din,
            got: rho.nrows(),
        });
    }
    Ok(apply_channel_unchecked(ch, rho))
}

/// Apply a channel to the leading `din` tensor factor of a joint state,
/// leaving a trailing factor of dimension `drest` untouched.
pub fn apply_channel_leading(ch: &Channel, rho: &CMat, drest: usize) -> Result<CMat> {
    let (din, dout) = (ch.din, ch.dout);
    if rho.nrows() != din * drest {
        return Err(Error::DimMismatch {
            expected: din * drest,
            got: rho.nrows(),
        });
    }
    let mut out = CMat::zeros(dout * drest, dout * drest);
    for o in 0..dout {
        for op in 0..dout {
            for r in 0..drest {
                for rp in 0..drest {
                    let mut acc = ZERO;
                    for i in 0..din {
                        for ip in 0..din {
                            acc += ch.choi[(ip * dout + op, i * dout + o)]
                                * rho[(i * drest + r, ip * drest + rp)];
                        }
                    }
                    out[(o * drest + r, op * drest + rp)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// The channel of a summed SIC-instrument: `rho -> sum_y tr(E_y rho) Pi_y`.
/// Entanglement-breaking and unbiased by construction.
pub fn holevo_channel(povm: &SicPovm) -> Channel {
    let d = povm.dim();
    let projectors = povm.projectors().to_vec();
    Channel::from_fn(d, d, move |rho| {
        let mut out = CMat::zeros(d, d);
        for p in &projectors {
            let w = (p * rho).trace() / d as f64;
            out += p.map(|z| z * w);
        }
        out
    })
    .expect("Holevo channel is CPTP")
}

/// CP / TP / unbiasedness report for a channel.
pub fn check_channel(ch: &Channel) -> ChannelReport {
    check_channel_with_tol(ch, &Tolerances::default())
}

pub fn check_channel_with_tol(ch: &Channel, tol: &Tolerances) -> ChannelReport {
    ch.report(tol)
}

const ANCILLA_CAP: usize = 64;

/// Seeded random unbiased channel: `rho -> tr_B[ U (rho (x) I/k) U^dag ]`
/// with `U` Haar-random on dimension `din * k`, where `k` is the smallest
/// ancilla size making `dout` divide `din * k`.
pub fn random_unbiased_channel(din: usize, dout: usize, seed: u64) -> Result<Channel> {
    let k = (1..=ANCILLA_CAP)
        .find(|k| (din * k) % dout == 0)
        .ok_or(Error::NoAncilla {
            din,
            dout,
            cap: ANCILLA_CAP,
        })?;
    let n = din * k;
    let denv = n / dout;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = haar_unitary(n, &mut rng);
    let udag = dagger(&u);
    let kinv = 1.0 / k as f64;
    Channel::from_fn(din, dout, move |rho| {
        let extended = rho.kronecker(&identity(k).map(|z| z * kinv));
        let evolved = &u * extended * &udag;
        ptrace(&evolved, &[dout, denv], &[true, false])
    })
}

/// An instrument realizing an intervention: measure the input with `povm`
/// (or discard it when `simple`), then re-prepare state `reprep_states[w]`
/// with probability `target[w]`.
#[derive(Clone, Debug)]
pub struct InterventionInstrument {
    pub dim: usize,
    /// POVM on the input; `None` means the SIC effects. Ignored when
    /// `simple` is set.
    pub povm: Option<Vec<CMat>>,
    /// Re-preparation distribution P'(w) over d^2 outcomes.
    pub target: Vec<f64>,
    /// Re-prepared states; `None` means the SIC projectors.
    pub reprep_states: Option<Vec<CMat>>,
    /// Discard the input measurement outcome entirely.
    pub simple: bool,
}

impl InterventionInstrument {
    /// A simple SIC-intervention: uniform re-preparation of SIC states.
    pub fn sic(dim: usize) -> Self {
        let card = dim * dim;
        InterventionInstrument {
            dim,
            povm: None,
            target: vec![1.0 / card as f64; card],
            reprep_states: None,
            simple: true,
        }
    }

    /// A simple intervention with the given target distribution.
    pub fn with_target(dim: usize, target: Vec<f64>) -> Self {
        InterventionInstrument {
            dim,
            povm: None,
            target,
            reprep_states: None,
            simple: true,
        }
    }

    /// Fine-grained intervention pinning outcome `w`.
    pub fn fine(dim: usize, w: usize) -> Self {
        let card = dim * dim;
        let mut target = vec![0.0; card];
        target[w] = 1.0;
        Self::with_target(dim, target)
    }

    pub fn validate(&self, tol: &Tolerances) -> Result<()> {
        let card = self.dim * self.dim;
        if self.target.len() != card {
            return Err(Error::BadIntervention(format!(
                "target has {} entries, expected {card}",
                self.target.len()
            )));
        }
        let total: f64 = self.target.iter().sum();
        if (total - 1.0).abs() > tol.probability || self.target.iter().any(|&p| p < 0.0) {
            return Err(Error::BadIntervention(format!(
                "target is not a distribution (total {total})"
            )));
        }
        if let Some(povm) = &self.povm {
            let mut sum = CMat::zeros(self.dim, self.dim);
            for f in povm {
                if f.nrows() != self.dim {
                    return Err(Error::DimMismatch {
                        expected: self.dim,
                        got: f.nrows(),
                    });
                }
                if !is_hermitian(f, tol.structural)
                    || hermitian_eigenvalues(f)[0] < -tol.structural
                {
                    return Err(Error::BadIntervention("POVM element not PSD".into()));
                }
                sum += f;
            }
            if max_abs_diff(&sum, &identity(self.dim)) > tol.structural {
                return Err(Error::BadIntervention("POVM does not sum to identity".into()));
            }
        }
        if let Some(states) = &self.reprep_states {
            if states.len() != card {
                return Err(Error::BadIntervention(format!(
                    "{} re-preparation states, expected {card}",
                    states.len()
                )));
            }
            for s in states {
                check_state(s, self.dim, tol)
                    .map_err(|e| Error::BadIntervention(format!("re-preparation state: {e}")))?;
            }
        }
        Ok(())
    }
}

/// Trace pairing `tr[(op_1 (x) ... (x) op_n) K]` of local operators against
/// a comb. Values below -1e-9 flag an invalid comb.
///
/// When the comb is assembled from Choi matrices in this module's
/// convention, `tr[(X (x) Y) choi] = tr(map(X) Y^T)`: operators on channel
/// *input* slots are passed as-is while operators on *output* slots must be
/// transposed by the caller.
pub fn comb_pair_probability(k: &CMat, local_ops: &[&CMat]) -> Result<f64> {
    let total: usize = local_ops.iter().map(|op| op.nrows()).product();
    if k.nrows() != total || k.ncols() != total {
        return Err(Error::DimMismatch {
            expected: total,
            got: k.nrows(),
        });
    }
    let joint = kron_all(local_ops);
    let val = (joint * k).trace();
    if val.im.abs() > 1e-9 {
        return Err(Error::BadComb(format!(
            "pairing has imaginary part {:.3e}",
            val.im
        )));
    }
    if val.re < -1e-9 {
        return Err(Error::BadComb(format!("negative pairing {:.3e}", val.re)));
    }
    Ok(val.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::for_each_index;

    fn mixed(d: usize) -> CMat {
        identity(d).map(|z| z / d as f64)
    }

    #[test]
    fn sic_d2_overlaps_are_one_third() {
        let povm = sic_povm(2, None).unwrap();
        for y in 0..4 {
            for yp in 0..4 {
                let got = (povm.projector(y) * povm.projector(yp)).trace().re;
                let want = if y == yp { 1.0 } else { 1.0 / 3.0 };
                assert!((got - want).abs() < 1e-12, "overlap({y},{yp}) = {got}");
            }
        }
    }

    #[test]
    fn sic_d3_overlaps_are_one_quarter() {
        let povm = sic_povm(3, None).unwrap();
        for y in 0..9 {
            for yp in 0..9 {
                let got = (povm.projector(y) * povm.projector(yp)).trace().re;
                let want = if y == yp { 1.0 } else { 0.25 };
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sic_completeness() {
        for d in [2usize, 3] {
            let povm = sic_povm(d, None).unwrap();
            let mut sum = CMat::zeros(d, d);
            for y in 0..povm.outcomes() {
                sum += povm.projector(y).map(|z| z / d as f64);
            }
            assert!(max_abs_diff(&sum, &identity(d)) < 1e-12);
        }
    }

    #[test]
    fn sic_rejects_bad_fiducial() {
        let f = [ONE, ZERO];
        match sic_povm(2, Some(&f)) {
            Err(Error::SicRejected { dev, .. }) => assert!(dev > 1e-8),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn sic_requires_fiducial_beyond_builtin() {
        assert!(matches!(sic_povm(5, None), Err(Error::MissingFiducial(5))));
    }

    #[test]
    fn instrument_on_maximally_mixed_is_uniform() {
        let povm = sic_povm(2, None).unwrap();
        let (probs, posts) = sic_instrument(&povm, &mixed(2)).unwrap();
        for p in &probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert_eq!(posts.len(), 4);
    }

    #[test]
    fn instrument_on_sic_state() {
        let povm = sic_povm(2, None).unwrap();
        let rho = povm.projector(1).clone();
        let (probs, _) = sic_instrument(&povm, &rho).unwrap();
        for (y, p) in probs.iter().enumerate() {
            let want = if y == 1 { 0.5 } else { 1.0 / 6.0 };
            assert!((p - want).abs() < 1e-12);
        }
        let total: f64 = probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn instrument_rejects_non_state() {
        let povm = sic_povm(2, None).unwrap();
        let bad = identity(2);
        assert!(matches!(
            sic_instrument(&povm, &bad),
            Err(Error::NotAState(_))
        ));
        let wrong_dim = mixed(3);
        assert!(matches!(
            sic_instrument(&povm, &wrong_dim),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn identity_channel_acts_trivially() {
        let ch = Channel::identity(3);
        let povm = sic_povm(3, None).unwrap();
        let rho = povm.projector(4).clone();
        assert!(max_abs_diff(&apply_channel(&ch, &rho).unwrap(), &rho) < 1e-12);
        let rep = check_channel(&ch);
        assert!(rep.cp && rep.tp && rep.unbiased);
    }

    #[test]
    fn holevo_channel_matches_direct_arithmetic() {
        let povm = sic_povm(2, None).unwrap();
        let ch = holevo_channel(&povm);
        let rho = povm.projector(1).clone();
        // Oracle: (1/2) Pi_1 + (1/6) sum_{y != 1} Pi_y by direct arithmetic.
        let mut want = CMat::zeros(2, 2);
        for y in 0..4 {
            let w = if y == 1 { 0.5 } else { 1.0 / 6.0 };
            want += povm.projector(y).map(|z| z * w);
        }
        assert!(max_abs_diff(&apply_channel(&ch, &rho).unwrap(), &want) < 1e-12);
        let rep = check_channel(&ch);
        assert!(rep.cp && rep.tp && rep.unbiased);
    }

    #[test]
    fn holevo_channel_is_unital() {
        for d in [2usize, 3] {
            let povm = sic_povm(d, None).unwrap();
            let ch = holevo_channel(&povm);
            let out = apply_channel(&ch, &mixed(d)).unwrap();
            assert!(max_abs_diff(&out, &mixed(d)) < 1e-12);
        }
    }

    #[test]
    fn pinned_output_channel_is_biased() {
        let d = 2;
        let ch = Channel::from_fn(d, d, |rho| {
            let mut out = CMat::zeros(d, d);
            out[(0, 0)] = rho.trace();
            out
        })
        .unwrap();
        let rep = check_channel(&ch);
        assert!(rep.cp && rep.tp && !rep.unbiased);
    }

    #[test]
    fn random_unbiased_same_dims() {
        let ch = random_unbiased_channel(2, 2, 11).unwrap();
        let rep = check_channel(&ch);
        assert!(rep.cp && rep.tp && rep.unbiased);
    }

    #[test]
    fn random_unbiased_expanding() {
        let ch = random_unbiased_channel(2, 4, 11).unwrap();
        let out = apply_channel(&ch, &mixed(2)).unwrap();
        assert!(max_abs_diff(&out, &mixed(4)) < 1e-12);
    }

    #[test]
    fn random_unbiased_contracting() {
        let ch = random_unbiased_channel(4, 2, 3).unwrap();
        let rep = check_channel(&ch);
        assert!(rep.cp && rep.tp && rep.unbiased);
    }

    #[test]
    fn random_unbiased_deterministic_per_seed() {
        let a = random_unbiased_channel(2, 2, 42).unwrap();
        let b = random_unbiased_channel(2, 2, 42).unwrap();
        assert_eq!(a.choi(), b.choi());
        let c = random_unbiased_channel(2, 2, 43).unwrap();
        assert!(max_abs_diff(a.choi(), c.choi()) > 1e-6);
    }

    #[test]
    fn choi_roundtrip_from_kraus() {
        // Amplitude-damping-like Kraus pair, then rebuild from the applied
        // action; both routes must agree on a basis of states to 1e-12.
        let g: f64 = 0.3;
        let k0 = CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, c((1.0 - g).sqrt(), 0.0)]);
        let k1 = CMat::from_row_slice(2, 2, &[ZERO, c(g.sqrt(), 0.0), ZERO, ZERO]);
        let ch = Channel::from_kraus(2, 2, &[k0.clone(), k1.clone()]).unwrap();
        let rebuilt = Channel::from_fn(2, 2, |rho| {
            apply_channel(&ch, rho).unwrap()
        })
        .unwrap();
        assert!(max_abs_diff(ch.choi(), rebuilt.choi()) < 1e-12);
        let povm = sic_povm(2, None).unwrap();
        for y in 0..4 {
            let rho = povm.projector(y);
            let direct = &k0 * rho * dagger(&k0) + &k1 * rho * dagger(&k1);
            let via_choi = apply_channel(&ch, rho).unwrap();
            assert!(max_abs_diff(&direct, &via_choi) < 1e-12);
        }
    }

    #[test]
    fn composition_matches_sequential_application() {
        let a = random_unbiased_channel(2, 4, 5).unwrap();
        let b = random_unbiased_channel(4, 2, 6).unwrap();
        let ab = a.compose(&b).unwrap();
        let povm = sic_povm(2, None).unwrap();
        for y in 0..4 {
            let rho = povm.projector(y);
            let seq = apply_channel(&b, &apply_channel(&a, rho).unwrap()).unwrap();
            let one = apply_channel(&ab, rho).unwrap();
            assert!(max_abs_diff(&seq, &one) < 1e-10);
        }
    }

    #[test]
    fn apply_channel_leading_consistent_with_kron() {
        let ch = random_unbiased_channel(2, 2, 9).unwrap();
        let povm = sic_povm(2, None).unwrap();
        let rho = povm.projector(0).kronecker(povm.projector(3));
        let out = apply_channel_leading(&ch, &rho, 2).unwrap();
        let want = apply_channel(&ch, povm.projector(0))
            .unwrap()
            .kronecker(povm.projector(3));
        assert!(max_abs_diff(&out, &want) < 1e-12);
    }

    #[test]
    fn comb_pairing_matches_direct_simulation_for_identity_wiring() {
        // Two-node chain A -> W with an identity channel in between. The
        // comb is (1/d_A^2) * choi; the A slot is the channel input (passed
        // as-is), the W slot is the channel output (transposed):
        //   P(a,w) = tr[(Pi_a (x) E_w^T) K] = (1/4) tr(E_w Pi_a).
        let povm = sic_povm(2, None).unwrap();
        let k = Channel::identity(2).choi().map(|z| z / 4.0);
        let mut total = 0.0;
        for_each_index(&[4, 4], |idx| {
            let pa = povm.projector(idx[0]).clone();
            let ew = povm.effect(idx[1]).transpose();
            let got = comb_pair_probability(&k, &[&pa, &ew]).unwrap();
            let overlap = (povm.projector(idx[1]) * povm.projector(idx[0])).trace().re;
            let want = 0.25 * overlap / 2.0;
            assert!((got - want).abs() < 1e-12, "P({},{})", idx[0], idx[1]);
            total += got;
        });
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn intervention_validation() {
        let iv = InterventionInstrument::sic(2);
        assert!(iv.validate(&Tolerances::default()).is_ok());
        let bad = InterventionInstrument::with_target(2, vec![0.5, 0.5]);
        assert!(bad.validate(&Tolerances::default()).is_err());
        let fine = InterventionInstrument::fine(2, 3);
        assert!(fine.validate(&Tolerances::default()).is_ok());
        assert_eq!(fine.target[3], 1.0);
    }
}
