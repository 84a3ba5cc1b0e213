//! Reference estimators on coordinates (OLS, principal components regression,
//! SIMPLS partial least squares) and evaluation metrics.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{sample_moments, SampleMoments};
use crate::error::{invalid, Error, Result};
use crate::io::{matrix_serde, vector_serde};
use crate::linalg;

/// Which reference estimator produced a [`LinearFit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum LinearMethod {
    Ols,
    Pcr { k: usize },
    Pls { u: usize },
}

/// A linear predictor `α + βx` on coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearFit {
    pub method: LinearMethod,
    /// `m_y × m_x`.
    #[serde(with = "matrix_serde")]
    pub beta: DMatrix<f64>,
    #[serde(with = "vector_serde")]
    pub intercept: DVector<f64>,
    /// Retained directions (`m_x × k`); identity for OLS.
    #[serde(with = "matrix_serde")]
    pub components: DMatrix<f64>,
    /// SIMPLS stopped before the requested number of components.
    pub breakdown: bool,
}

impl LinearFit {
    pub fn predict(&self, xtil: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = xtil * self.beta.transpose();
        for mut row in out.row_iter_mut() {
            row += self.intercept.transpose();
        }
        out
    }
}

/// Regression restricted to `span(w)`: `β = (W(WᵀS_XW)⁻¹WᵀS_XY)ᵀ`.
fn reduced_fit(mo: &SampleMoments, w: &DMatrix<f64>, method: LinearMethod, breakdown: bool) -> Result<LinearFit> {
    let m_y = mo.m_y();
    let beta = if w.ncols() == 0 {
        DMatrix::zeros(m_y, mo.m_x())
    } else {
        let inner = w.transpose() * &mo.s_x * w;
        let coef = linalg::spd_solve(&inner, &(w.transpose() * &mo.s_xy))
            .ok_or_else(|| Error::Conditioning("WᵀS_XW is singular".into()))?;
        (w * coef).transpose()
    };
    let intercept = &mo.y_mean - &beta * &mo.x_mean;
    Ok(LinearFit {
        method,
        beta,
        intercept,
        components: w.clone(),
        breakdown,
    })
}

/// Ordinary least squares, `β = S_XYᵀS_X⁻¹`.
pub fn fit_ols(xtil: &DMatrix<f64>, ytil: &DMatrix<f64>) -> Result<LinearFit> {
    let mo = sample_moments(xtil, ytil)?;
    if !(linalg::sym_condition(&mo.s_x) < 1e14) {
        return Err(Error::Conditioning("S_X is singular; OLS is undefined".into()));
    }
    let m = mo.m_x();
    reduced_fit(&mo, &DMatrix::identity(m, m), LinearMethod::Ols, false)
}

/// SIMPLS weight vectors.
#[derive(Debug, Clone)]
pub struct SimplsWeights {
    /// `m_x × k` with unit-norm columns, `k ≤ u`.
    pub weights: DMatrix<f64>,
    /// Fewer than `u` components could be extracted.
    pub breakdown: bool,
}

/// SIMPLS weights from `S_X` and `S_XY`: each `w` maximizes `wᵀS_XY S_XYᵀw`
/// subject to `wᵀw = 1` and `wᵀS_X W = 0` for the earlier weights `W`,
/// computed by deflating `S_XY` against the loadings `S_X W`.
pub fn simpls_weights(s_x: &DMatrix<f64>, s_xy: &DMatrix<f64>, u: usize) -> SimplsWeights {
    let m = s_x.nrows();
    let mut s = s_xy.clone();
    let mut ws: Vec<DVector<f64>> = Vec::with_capacity(u);
    let mut vs: Vec<DVector<f64>> = Vec::with_capacity(u);
    let mut first_sv = None;
    let mut breakdown = false;
    for _ in 0..u.min(m) {
        let sst = linalg::symmetrize(&(&s * s.transpose()));
        let (vals, vecs) = linalg::sym_eigen_desc(&sst);
        let top = vals[0].max(0.0);
        let reference = *first_sv.get_or_insert(top);
        if !(top > 1e-24 * reference.max(f64::MIN_POSITIVE)) || top == 0.0 {
            breakdown = true;
            break;
        }
        let r = vecs.column(0).into_owned();
        let srr = (s_x * &r).dot(&r);
        if !(srr > 0.0) {
            breakdown = true;
            break;
        }
        let mut v = s_x * &r / srr;
        for prev in &vs {
            let c = prev.dot(&v);
            v -= prev * c;
        }
        let vn = v.norm();
        if !(vn > 0.0) {
            breakdown = true;
            break;
        }
        v /= vn;
        let vts = v.transpose() * &s;
        s -= &v * vts;
        ws.push(r);
        vs.push(v);
    }
    if ws.len() < u {
        breakdown = true;
    }
    let mut weights = DMatrix::zeros(m, ws.len());
    for (j, w) in ws.iter().enumerate() {
        weights.set_column(j, w);
    }
    SimplsWeights { weights, breakdown }
}

/// PLS regression with `u` SIMPLS components.
pub fn fit_simpls(xtil: &DMatrix<f64>, ytil: &DMatrix<f64>, u: usize) -> Result<LinearFit> {
    let mo = sample_moments(xtil, ytil)?;
    fit_simpls_moments(&mo, u)
}

pub fn fit_simpls_moments(mo: &SampleMoments, u: usize) -> Result<LinearFit> {
    if u == 0 || u > mo.m_x() {
        return Err(invalid(format!("PLS components {u} outside 1..={}", mo.m_x())));
    }
    let w = simpls_weights(&mo.s_x, &mo.s_xy, u);
    reduced_fit(mo, &w.weights, LinearMethod::Pls { u }, w.breakdown)
}

/// Principal components regression on the leading `k` eigenvectors of `S_X`
/// (sign fixed so the largest-magnitude coordinate is positive).
pub fn fit_pcr(xtil: &DMatrix<f64>, ytil: &DMatrix<f64>, k: usize) -> Result<LinearFit> {
    let mo = sample_moments(xtil, ytil)?;
    fit_pcr_moments(&mo, k)
}

pub fn fit_pcr_moments(mo: &SampleMoments, k: usize) -> Result<LinearFit> {
    if k == 0 || k > mo.m_x() {
        return Err(invalid(format!("PCR components {k} outside 1..={}", mo.m_x())));
    }
    let (_, vecs) = linalg::sym_eigen_desc(&mo.s_x);
    reduced_fit(mo, &vecs.columns(0, k).into_owned(), LinearMethod::Pcr { k }, false)
}

/// Mean squared difference over all entries.
pub fn mspe(predicted: &DMatrix<f64>, actual: &DMatrix<f64>) -> Result<f64> {
    if predicted.shape() != actual.shape() {
        return Err(Error::DimensionMismatch(format!(
            "predictions are {:?}, observations {:?}",
            predicted.shape(),
            actual.shape()
        )));
    }
    if predicted.is_empty() {
        return Err(invalid("cannot score an empty prediction"));
    }
    Ok((predicted - actual).norm_squared() / predicted.len() as f64)
}

/// Fraction of mismatched labels.
pub fn misclassification(predicted: &[u8], labels: &[u8]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(invalid("cannot score an empty prediction"));
    }
    let wrong = predicted.iter().zip(labels).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Balanced fold labels `0..folds` for `n` items, shuffled by `seed`.
pub fn fold_assignments(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(invalid("cross-validation needs at least 2 folds"));
    }
    if folds > n {
        return Err(invalid(format!("{folds} folds for only {n} subjects")));
    }
    let mut labels: Vec<usize> = (0..n).map(|i| i % folds).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(labels)
}

/// K-fold cross-validation over candidate parameters.
///
/// `eval(train, test, param)` fits on the `train` rows and returns the summed
/// loss over the `test` rows; the result is the mean loss per held-out row for
/// each candidate. Folds run in parallel.
pub fn kfold_cv<F>(n: usize, folds: usize, seed: u64, candidates: &[usize], eval: F) -> Result<Vec<f64>>
where
    F: Fn(&[usize], &[usize], usize) -> Result<f64> + Sync,
{
    let labels = fold_assignments(n, folds, seed)?;
    let per_fold = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
            candidates
                .iter()
                .map(|&c| eval(&train, &test, c))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..candidates.len())
        .map(|j| per_fold.iter().map(|v| v[j]).sum::<f64>() / n as f64)
        .collect())
}

/// Chooses a PCR or PLS component count in `1..=max_k` by K-fold CV on
/// squared prediction error. Returns the choice and the per-candidate scores.
pub fn cv_select_components(
    xtil: &DMatrix<f64>,
    ytil: &DMatrix<f64>,
    pls: bool,
    max_k: usize,
    folds: usize,
    seed: u64,
) -> Result<(usize, Vec<f64>)> {
    let candidates: Vec<usize> = (1..=max_k).collect();
    let scores = kfold_cv(xtil.nrows(), folds, seed, &candidates, |train, test, k| {
        let xt = xtil.select_rows(train);
        let yt = ytil.select_rows(train);
        let mo = sample_moments(&xt, &yt)?;
        let fit = if pls {
            fit_simpls_moments(&mo, k.min(mo.m_x()))?
        } else {
            fit_pcr_moments(&mo, k.min(mo.m_x()))?
        };
        let pred = fit.predict(&xtil.select_rows(test));
        Ok((pred - ytil.select_rows(test)).norm_squared())
    })?;
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| candidates[i])
        .expect("nonempty candidates");
    Ok((best, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simlab::synthetic::EnvelopeDesign;
    use rand::{Rng, SeedableRng};

    fn data(seed: u64, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = EnvelopeDesign::six_by_two(&mut rng);
        d.sample(&mut rng, n)
    }

    #[test]
    fn ols_with_orthonormal_design() {
        let n = 8;
        let mut x = DMatrix::zeros(n, 2);
        for i in 0..n {
            x[(i, 0)] = if i % 2 == 0 { 1.0 } else { -1.0 };
            x[(i, 1)] = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
        }
        let y = x.columns(0, 1).into_owned();
        let fit = fit_ols(&x, &y).unwrap();
        assert!((fit.beta[(0, 0)] - 1.0).abs() < 1e-12 && fit.beta[(0, 1)].abs() < 1e-12);
        assert!(fit_ols(&DMatrix::zeros(5, 2), &DMatrix::zeros(5, 1)).is_err());
    }

    #[test]
    fn simpls_constraints_and_nesting() {
        let (x, y) = data(1, 300);
        let mo = sample_moments(&x, &y).unwrap();
        let w5 = simpls_weights(&mo.s_x, &mo.s_xy, 5);
        let w4 = simpls_weights(&mo.s_x, &mo.s_xy, 4);
        assert!(!w5.breakdown);
        for k in 0..5 {
            let wk = w5.weights.column(k);
            assert!((wk.norm_squared() - 1.0).abs() < 1e-10);
            if k > 0 {
                let prev = w5.weights.columns(0, k);
                assert!((wk.transpose() * &mo.s_x * prev).amax() < 1e-8);
            }
        }
        for k in 0..4 {
            let (a, b) = (w4.weights.column(k), w5.weights.column(k));
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn full_dimension_methods_agree_with_ols() {
        let (x, y) = data(2, 120);
        let ols = fit_ols(&x, &y).unwrap();
        let pls = fit_simpls(&x, &y, 6).unwrap();
        let pcr = fit_pcr(&x, &y, 6).unwrap();
        assert!((&pls.beta - &ols.beta).amax() < 1e-8);
        assert!((&pcr.beta - &ols.beta).amax() < 1e-8);
        assert!((&pls.intercept - &ols.intercept).amax() < 1e-8);
        assert!(fit_simpls(&x, &y, 0).is_err() && fit_pcr(&x, &y, 7).is_err());
    }

    #[test]
    fn population_simpls_span_is_the_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = EnvelopeDesign::six_by_two(&mut rng);
        let w = simpls_weights(&d.sigma_x(), &d.sigma_xy(), 2);
        assert!(linalg::max_principal_angle(&w.weights, &d.gamma) < 1e-8);
    }

    #[test]
    fn simpls_breakdown_on_rank_one_cross_covariance() {
        let s_x = DMatrix::identity(3, 3);
        let s_xy = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let w = simpls_weights(&s_x, &s_xy, 3);
        assert!(w.breakdown);
        assert_eq!(w.weights.ncols(), 1);
    }

    #[test]
    fn pcr_projection_is_idempotent() {
        let (x, y) = data(4, 100);
        let fit = fit_pcr(&x, &y, 3).unwrap();
        let c = &fit.components;
        let p = c * c.transpose();
        assert!((&p * &p - &p).amax() < 1e-12);
    }

    #[test]
    fn metrics() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mspe(&a, &a).unwrap(), 0.0);
        assert_eq!(mspe(&DMatrix::zeros(2, 2), &a).unwrap(), 7.5);
        assert!(mspe(&a, &DMatrix::zeros(2, 1)).is_err());
        assert_eq!(misclassification(&[1, 0, 1], &[0, 1, 0]).unwrap(), 1.0);
        assert_eq!(misclassification(&[1, 0], &[1, 1]).unwrap(), 0.5);
    }

    #[test]
    fn folds_are_balanced_and_deterministic() {
        let a = fold_assignments(23, 5, 9).unwrap();
        assert_eq!(a, fold_assignments(23, 5, 9).unwrap());
        for f in 0..5 {
            let c = a.iter().filter(|&&v| v == f).count();
            assert!(c == 4 || c == 5);
        }
        assert!(fold_assignments(3, 5, 0).is_err());
        assert!(fold_assignments(10, 1, 0).is_err());
    }

    #[test]
    fn duplicated_halves_give_equal_fold_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let half = DMatrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0));
        let yh = DMatrix::from_fn(20, 1, |i, _| half[(i, 0)] + 0.1 * i as f64);
        let x = DMatrix::from_fn(40, 3, |i, j| half[(i % 20, j)]);
        let y = DMatrix::from_fn(40, 1, |i, _| yh[(i % 20, 0)]);
        let mut labels = vec![0usize; 40];
        labels[20..].fill(1);
        let losses: Vec<f64> = (0..2)
            .map(|f| {
                let train: Vec<usize> = (0..40).filter(|&i| labels[i] != f).collect();
                let test: Vec<usize> = (0..40).filter(|&i| labels[i] == f).collect();
                let fit = fit_ols(&x.select_rows(&train), &y.select_rows(&train)).unwrap();
                (fit.predict(&x.select_rows(&test)) - y.select_rows(&test)).norm_squared()
            })
            .collect();
        assert!((losses[0] - losses[1]).abs() < 1e-12);
    }

    #[test]
    fn cv_selection_is_reproducible() {
        let (x, y) = data(6, 200);
        let a = cv_select_components(&x, &y, true, 6, 5, 3).unwrap();
        let b = cv_select_components(&x, &y, true, 6, 5, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.len(), 6);
        assert!(a.0 >= 2);
    }
}
