//! Dense complex linear algebra for small Hilbert-space dimensions.
//!
//! Everything here operates on `DMatrix<Complex64>` with the tensor-factor
//! convention that factor 0 is the most significant index (row-major
//! Kronecker order), matching `DMatrix::kronecker`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

pub type CMat = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn dagger(m: &CMat) -> CMat {
    m.adjoint()
}

pub fn trace(m: &CMat) -> Complex64 {
    m.trace()
}

/// Kronecker product of a list of matrices, factor 0 most significant.
pub fn kron_all(mats: &[&CMat]) -> CMat {
    assert!(!mats.is_empty(), "kron_all of empty list");
    let mut out = mats[0].clone();
    for m in &mats[1..] {
        out = out.kronecker(m);
    }
    out
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    (m - m.adjoint()).iter().all(|z| z.norm() <= tol)
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let eig = m.clone().symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigenvalues(m)[0]
}

/// Principal square root of a PSD Hermitian matrix. Eigenvalues in
/// `[-tol, 0)` are clamped to zero.
pub fn psd_sqrt(m: &CMat, tol: f64) -> CMat {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut out = CMat::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let lam = if lam < 0.0 {
            assert!(lam >= -tol, "psd_sqrt on matrix with eigenvalue {lam}");
            0.0
        } else {
            lam
        };
        let v = eig.eigenvectors.column(k);
        let scale = c(lam.sqrt(), 0.0);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += scale * v[i] * v[j].conj();
            }
        }
    }
    out
}

/// Partial trace: keep the factors where `keep` is true.
pub fn ptrace(m: &CMat, dims: &[usize], keep: &[bool]) -> CMat {
    assert_eq!(dims.len(), keep.len());
    let total: usize = dims.iter().product();
    assert_eq!(m.nrows(), total);
    let kept_dims: Vec<usize> = dims
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(&d, _)| d)
        .collect();
    let traced_dims: Vec<usize> = dims
        .iter()
        .zip(keep)
        .filter(|(_, &k)| !k)
        .map(|(&d, _)| d)
        .collect();
    let kept_total: usize = kept_dims.iter().product();
    let mut out = CMat::zeros(kept_total, kept_total);

    let mut kept_idx = vec![0usize; kept_dims.len()];
    loop {
        let mut kept_jdx = vec![0usize; kept_dims.len()];
        loop {
            let mut acc = ZERO;
            let mut tr_idx = vec![0usize; traced_dims.len()];
            loop {
                let row = interleave(dims, keep, &kept_idx, &tr_idx);
                let col = interleave(dims, keep, &kept_jdx, &tr_idx);
                acc += m[(row, col)];
                if !advance(&mut tr_idx, &traced_dims) {
                    break;
                }
            }
            out[(ravel(&kept_idx, &kept_dims), ravel(&kept_jdx, &kept_dims))] = acc;
            if !advance(&mut kept_jdx, &kept_dims) {
                break;
            }
        }
        if !advance(&mut kept_idx, &kept_dims) {
            break;
        }
    }
    out
}

/// Reorder tensor factors: new factor `k` is old factor `perm[k]`.
pub fn permute_factors(m: &CMat, dims: &[usize], perm: &[usize]) -> CMat {
    assert_eq!(dims.len(), perm.len());
    let total: usize = dims.iter().product();
    assert_eq!(m.nrows(), total);
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let mut out = CMat::zeros(total, total);
    let mut new_i = vec![0usize; dims.len()];
    loop {
        let old_i = unpermute(&new_i, perm, dims.len());
        let row_old = ravel(&old_i, dims);
        let row_new = ravel(&new_i, &new_dims);
        let mut new_j = vec![0usize; dims.len()];
        loop {
            let old_j = unpermute(&new_j, perm, dims.len());
            out[(row_new, ravel(&new_j, &new_dims))] = m[(row_old, ravel(&old_j, dims))];
            if !advance(&mut new_j, &new_dims) {
                break;
            }
        }
        if !advance(&mut new_i, &new_dims) {
            break;
        }
    }
    out
}

fn unpermute(new_idx: &[usize], perm: &[usize], n: usize) -> Vec<usize> {
    let mut old = vec![0usize; n];
    for (k, &p) in perm.iter().enumerate() {
        old[p] = new_idx[k];
    }
    old
}

fn interleave(dims: &[usize], keep: &[bool], kept: &[usize], traced: &[usize]) -> usize {
    let mut idx = Vec::with_capacity(dims.len());
    let (mut a, mut b) = (0, 0);
    for &k in keep {
        if k {
            idx.push(kept[a]);
            a += 1;
        } else {
            idx.push(traced[b]);
            b += 1;
        }
    }
    ravel(&idx, dims)
}

/// Row-major composite index.
pub fn ravel(idx: &[usize], dims: &[usize]) -> usize {
    let mut out = 0;
    for (&i, &d) in idx.iter().zip(dims) {
        debug_assert!(i < d);
        out = out * d + i;
    }
    out
}

pub fn unravel(mut i: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize; dims.len()];
    for k in (0..dims.len()).rev() {
        out[k] = i % dims[k];
        i /= dims[k];
    }
    out
}

/// Advance a multi-index in row-major order; false once wrapped to zero.
pub fn advance(idx: &mut [usize], dims: &[usize]) -> bool {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return true;
        }
        idx[k] = 0;
    }
    false
}

/// Visit every multi-index over `dims` in row-major order.
pub fn for_each_index(dims: &[usize], mut f: impl FnMut(&[usize])) {
    if dims.iter().any(|&d| d == 0) {
        return;
    }
    let mut idx = vec![0usize; dims.len()];
    loop {
        f(&idx);
        if !advance(&mut idx, dims) {
            break;
        }
    }
}

/// One standard-normal sample via Box-Muller.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Complex Ginibre matrix: i.i.d. standard complex normal entries.
pub fn ginibre<R: Rng>(n: usize, rng: &mut R) -> CMat {
    CMat::from_fn(n, n, |_, _| {
        c(
            gaussian(rng) / 2f64.sqrt(),
            gaussian(rng) / 2f64.sqrt(),
        )
    })
}

/// Haar-random unitary: QR of a Ginibre matrix with the R diagonal's phases
/// folded into Q.
pub fn haar_unitary<R: Rng>(n: usize, rng: &mut R) -> CMat {
    let g = ginibre(n, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..n {
        let rkk = r[(k, k)];
        let phase = if rkk.norm() > 0.0 { rkk / rkk.norm() } else { ONE };
        for i in 0..n {
            q[(i, k)] *= phase;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pauli_x() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    #[test]
    fn hermitian_eigen_of_pauli_x() {
        let vals = hermitian_eigenvalues(&pauli_x());
        assert!((vals[0] + 1.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn haar_unitary_is_unitary_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = haar_unitary(4, &mut rng);
        assert!(max_abs_diff(&(&u * u.adjoint()), &identity(4)) < 1e-12);
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let u2 = haar_unitary(4, &mut rng2);
        assert_eq!(u, u2);
    }

    #[test]
    fn ptrace_of_product_state() {
        let a = CMat::from_row_slice(2, 2, &[c(0.7, 0.0), c(0.1, 0.2), c(0.1, -0.2), c(0.3, 0.0)]);
        let b = CMat::from_row_slice(2, 2, &[c(0.4, 0.0), ZERO, ZERO, c(0.6, 0.0)]);
        let ab = a.kronecker(&b);
        let got_a = ptrace(&ab, &[2, 2], &[true, false]);
        let got_b = ptrace(&ab, &[2, 2], &[false, true]);
        assert!(max_abs_diff(&got_a, &a) < 1e-14);
        assert!(max_abs_diff(&got_b, &b) < 1e-14);
    }

    #[test]
    fn permute_factors_swaps_kron_order() {
        let a = CMat::from_row_slice(2, 2, &[c(0.2, 0.0), c(0.3, 0.1), c(0.3, -0.1), c(0.8, 0.0)]);
        let b = CMat::from_fn(3, 3, |i, j| c((i * 3 + j) as f64, 0.1 * i as f64));
        let ab = a.kronecker(&b);
        let ba = b.kronecker(&a);
        let swapped = permute_factors(&ab, &[2, 3], &[1, 0]);
        assert!(max_abs_diff(&swapped, &ba) < 1e-14);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ginibre(3, &mut rng);
        let m = &g * g.adjoint();
        let s = psd_sqrt(&m, 1e-12);
        assert!(max_abs_diff(&(&s * &s), &m) < 1e-10);
    }

    #[test]
    fn ravel_unravel_roundtrip() {
        let dims = [2, 3, 4];
        for i in 0..24 {
            assert_eq!(ravel(&unravel(i, &dims), &dims), i);
        }
    }
}
