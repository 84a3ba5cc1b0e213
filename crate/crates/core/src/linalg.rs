//! Small dense linear-algebra helpers shared across the estimators.

use nalgebra::{DMatrix, DVector};

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// Eigenvector signs are fixed so the largest-magnitude entry of each vector is
/// positive (ties go to the first such entry), making the output reproducible.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let mut best = 0;
        for r in 1..n {
            if v[r].abs() > v[best].abs() + 1e-12 {
                best = r;
            }
        }
        if v[best] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(k, &v);
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// log-determinant of a symmetric positive definite matrix; `None` if the
/// Cholesky factorization fails. The empty matrix has log-determinant 0.
pub fn logdet_spd(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    let chol = symmetrize(m).cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    symmetrize(m).cholesky().map(|c| c.inverse())
}

/// Solves `m x = b` for symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    symmetrize(m).cholesky().map(|c| c.solve(b))
}

/// Inverse symmetric square root `m^{-1/2}` of an SPD matrix.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let d = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Moore–Penrose inverse of a symmetric matrix, discarding eigenvalues below
/// `rel_cut` times the largest magnitude.
pub fn pinv_sym(m: &DMatrix<f64>, rel_cut: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = symmetrize(m).symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let v = eig.eigenvalues[i];
        if v.abs() > rel_cut * top && v.abs() > 0.0 {
            let c = eig.eigenvectors.column(i);
            out += (c * c.transpose()) / v;
        }
    }
    out
}

/// Condition number of a symmetric positive semidefinite matrix
/// (`f64::INFINITY` when singular).
pub fn sym_condition(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = symmetrize(m).symmetric_eigenvalues();
    let hi = eig.max();
    let lo = eig.min();
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Orthonormal basis of the orthogonal complement of the span of the
/// (orthonormal) columns of `gamma`.
pub fn orthonormal_completion(gamma: &DMatrix<f64>) -> DMatrix<f64> {
    let m = gamma.nrows();
    let u = gamma.ncols();
    if u == m {
        return DMatrix::zeros(m, 0);
    }
    let q = DMatrix::identity(m, m) - gamma * gamma.transpose();
    let (_, vecs) = sym_eigen_desc(&q);
    vecs.columns(0, m - u).into_owned()
}

/// Orthonormalizes the columns of `a` by thin QR, with signs chosen so the
/// diagonal of R is nonnegative.
pub fn orthonormalize_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.ncols() == 0 {
        return a.clone();
    }
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            let mut c = q.column_mut(j);
            c.neg_mut();
        }
    }
    q
}

/// Principal angles (radians, ascending) between the column spans of `a` and `b`.
///
/// Uses the sines of the angles (singular values of `(I - P_a) Q_b`), which
/// stay accurate for nearly identical subspaces.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = orthonormalize_columns(a);
    let qb = orthonormalize_columns(b);
    let resid = &qb - &qa * (qa.transpose() * &qb);
    let mut s: Vec<f64> = resid.singular_values().iter().copied().collect();
    s.sort_by(|x, y| x.total_cmp(y));
    s.into_iter().map(|v| v.clamp(0.0, 1.0).asin()).collect()
}

/// Largest principal angle between two subspaces of equal dimension.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    principal_angles(a, b).into_iter().fold(0.0, f64::max)
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

pub fn center_columns(x: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Cross-covariance `aᵀb / n` of two already-centered data matrices.
pub fn cross_cov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows() as f64;
    a.tr_mul(b) / n
}

/// Largest deviation of `gᵀg` from the identity.
pub fn semiorthogonality_error(g: &DMatrix<f64>) -> f64 {
    let gtg = g.tr_mul(g);
    let eye = DMatrix::<f64>::identity(g.ncols(), g.ncols());
    (gtg - eye).amax()
}

/// Projects a symmetric matrix onto the PSD cone by clipping negative
/// eigenvalues at zero. Returns the projection and the most negative
/// eigenvalue that was clipped (0 if none).
pub fn clip_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = m.nrows();
    if n == 0 {
        return (m.clone(), 0.0);
    }
    let eig = symmetrize(m).symmetric_eigen();
    let worst = eig.eigenvalues.min().min(0.0);
    let d = eig.eigenvalues.map(|v| v.max(0.0));
    (
        &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose(),
        worst,
    )
}

/// Selects `u` rows of the `m × u` matrix `g` by greedy row pivoting (column
/// pivoted QR on `gᵀ`), so the selected `u × u` block is well conditioned.
pub fn pivot_rows(g: &DMatrix<f64>) -> Vec<usize> {
    let m = g.nrows();
    let u = g.ncols();
    let mut rows: Vec<DVector<f64>> = (0..m).map(|i| g.row(i).transpose()).collect();
    let mut chosen = Vec::with_capacity(u);
    let mut available: Vec<bool> = vec![true; m];
    for _ in 0..u {
        let mut best = None;
        let mut best_norm = -1.0;
        for i in 0..m {
            if available[i] {
                let nrm = rows[i].norm_squared();
                if nrm > best_norm {
                    best_norm = nrm;
                    best = Some(i);
                }
            }
        }
        let p = best.expect("u <= m");
        available[p] = false;
        chosen.push(p);
        let q = if best_norm > 0.0 {
            &rows[p] / best_norm.sqrt()
        } else {
            rows[p].clone()
        };
        for i in 0..m {
            if available[i] {
                let proj = rows[i].dot(&q);
                rows[i] -= &q * proj;
            }
        }
    }
    chosen
}

/// Permutation placing `first` at the front, followed by the remaining indices
/// in increasing order.
pub fn front_permutation(first: &[usize], m: usize) -> Vec<usize> {
    let mut perm = first.to_vec();
    perm.extend((0..m).filter(|i| !first.contains(i)));
    perm
}

pub fn permute_rows(a: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(perm.len(), a.ncols(), |i, j| a[(perm[i], j)])
}

pub fn permute_sym(a: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(perm.len(), perm.len(), |i, j| a[(perm[i], perm[j])])
}

pub fn permute_cols(a: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), perm.len(), |i, j| a[(i, perm[j])])
}

/// Inverse of [`permute_rows`].
pub fn unpermute_rows(a: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, &p) in perm.iter().enumerate() {
        out.set_row(p, &a.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_is_orthogonal() {
        let g = orthonormalize_columns(&DMatrix::from_row_slice(
            4,
            2,
            &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0, 0.5, -1.0],
        ));
        let g0 = orthonormal_completion(&g);
        assert_eq!(g0.ncols(), 2);
        assert!((g.transpose() * &g0).amax() < 1e-12);
        assert!(semiorthogonality_error(&g0) < 1e-12);
    }

    #[test]
    fn logdet_matches_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let expected = m.symmetric_eigenvalues().iter().map(|v: &f64| v.ln()).sum::<f64>();
        assert!((logdet_spd(&m).unwrap() - expected).abs() < 1e-14);
        assert!(logdet_spd(&DMatrix::from_row_slice(1, 1, &[-1.0])).is_none());
    }

    #[test]
    fn pivoting_selects_well_conditioned_rows() {
        let g = DMatrix::from_row_slice(3, 1, &[1e-9, 1.0, 0.0]);
        assert_eq!(pivot_rows(&g), vec![1]);
        let perm = front_permutation(&[2, 0], 4);
        assert_eq!(perm, vec![2, 0, 1, 3]);
        let a = DMatrix::from_fn(4, 2, |i, j| (i * 2 + j) as f64);
        assert_eq!(unpermute_rows(&permute_rows(&a, &perm), &perm), a);
    }

    #[test]
    fn principal_angles_of_equal_spans_vanish() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, -1.0, 0.0, 0.0]);
        assert!(max_principal_angle(&a, &b) < 1e-7);
    }
}
