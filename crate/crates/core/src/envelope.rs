//! The multivariate predictor envelope linear model on coordinates.
//!
//! For `Y = α + βX + ε` with `X ~ N(μ, Σ_X)`, the envelope model assumes
//! `Σ_X = ΓΔΓᵀ + Γ0Δ0Γ0ᵀ` and `βᵀ = Γη`. The maximum likelihood estimate of
//! the envelope basis minimizes `log|ΓᵀS_{X|Y}Γ| + log|ΓᵀS_X⁻¹Γ|` over
//! semiorthogonal `Γ`; every other parameter then has a closed form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::error::{invalid, Error, Result};
use crate::grassmann::{self, DescentOptions, EnvelopeProblem};
use crate::io::{matrix_serde, vector_serde};
use crate::linalg;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Sample moments with divisor `n`.
#[derive(Debug, Clone)]
pub struct SampleMoments {
    pub n: usize,
    pub x_mean: DVector<f64>,
    pub y_mean: DVector<f64>,
    pub s_x: DMatrix<f64>,
    pub s_y: DMatrix<f64>,
    pub s_xy: DMatrix<f64>,
    /// `S_X − S_XY S_Y⁻¹ S_XYᵀ`, the sample covariance of `X` given `Y`.
    pub s_xgy: DMatrix<f64>,
    pub s_x_inv: DMatrix<f64>,
    /// Whether `S_Y` needed a ridge before inversion.
    pub s_y_stabilized: bool,
}

/// Computes [`SampleMoments`] from `n × m_x` and `n × m_y` coordinate matrices.
pub fn sample_moments(xtil: &DMatrix<f64>, ytil: &DMatrix<f64>) -> Result<SampleMoments> {
    let n = xtil.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} subjects; at least 2 are needed")));
    }
    if ytil.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} predictor rows but {} response rows",
            ytil.nrows()
        )));
    }
    let x_mean = linalg::column_means(xtil);
    let y_mean = linalg::column_means(ytil);
    let xc = linalg::center_columns(xtil, &x_mean);
    let yc = linalg::center_columns(ytil, &y_mean);
    let s_x = linalg::symmetrize(&linalg::cross_cov(&xc, &xc));
    let mut s_y = linalg::symmetrize(&linalg::cross_cov(&yc, &yc));
    let s_xy = linalg::cross_cov(&xc, &yc);
    let m_y = s_y.nrows();
    let mut s_y_stabilized = false;
    if m_y > 0 && !(linalg::sym_condition(&s_y) <= 1e12) {
        let bump = 1e-10 * s_y.trace().max(f64::MIN_POSITIVE) / m_y as f64;
        for i in 0..m_y {
            s_y[(i, i)] += bump;
        }
        s_y_stabilized = true;
    }
    let s_y_inv = linalg::spd_inverse(&s_y).ok_or_else(|| Error::Conditioning("S_Y is singular".into()))?;
    let s_xgy = linalg::symmetrize(&(&s_x - &s_xy * s_y_inv * s_xy.transpose()));
    let s_x_inv = linalg::spd_inverse(&s_x).unwrap_or_else(|| linalg::pinv_sym(&s_x, 1e-14));
    Ok(SampleMoments {
        n,
        x_mean,
        y_mean,
        s_x,
        s_y,
        s_xy,
        s_xgy,
        s_x_inv,
        s_y_stabilized,
    })
}

impl SampleMoments {
    pub fn m_x(&self) -> usize {
        self.s_x.nrows()
    }

    pub fn m_y(&self) -> usize {
        self.s_y.nrows()
    }

    /// The objective minimized over `Γ`.
    pub fn problem(&self) -> EnvelopeProblem {
        EnvelopeProblem {
            m: self.s_xgy.clone(),
            v: self.s_x_inv.clone(),
            logistic: None,
        }
    }
}

pub(crate) fn check_semiorthogonal(g: &DMatrix<f64>) -> Result<()> {
    let err = linalg::semiorthogonality_error(g);
    if !(err <= 1e-8) {
        return Err(invalid(format!(
            "matrix is not semiorthogonal (‖GᵀG − I‖_max = {err:.3e})"
        )));
    }
    Ok(())
}

/// `log|GᵀS_{X|Y}G| + log|GᵀS_X⁻¹G|`; `+∞` if either inner matrix is singular.
pub fn envelope_objective(g: &DMatrix<f64>, moments: &SampleMoments) -> Result<f64> {
    if g.nrows() != moments.m_x() {
        return Err(Error::DimensionMismatch(format!(
            "G has {} rows, S_X is {}×{}",
            g.nrows(),
            moments.m_x(),
            moments.m_x()
        )));
    }
    check_semiorthogonal(g)?;
    Ok(moments.problem().penalty(g))
}

/// Starting values for the envelope basis: greedy `S_X` and `S_{X|Y}` eigenvectors, leading
/// left singular vectors of `S_XY`, and SIMPLS weights.
pub fn candidate_starts(moments: &SampleMoments, u: usize) -> Vec<DMatrix<f64>> {
    let problem = moments.problem();
    let mut out = vec![
        grassmann::greedy_eigen_start(&problem, &moments.s_x, u),
        grassmann::greedy_eigen_start(&problem, &moments.s_xgy, u),
    ];
    if u <= moments.m_y() {
        let svd = moments.s_xy.clone().svd(true, false);
        if let Some(lu) = svd.u {
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
            if order.len() >= u && svd.singular_values[order[u - 1]] > 0.0 {
                out.push(lu.select_columns(&order[..u]));
            }
        }
    }
    let pls = baselines::simpls_weights(&moments.s_x, &moments.s_xy, u);
    if pls.weights.ncols() == u {
        out.push(linalg::orthonormalize_columns(&pls.weights));
    }
    out
}

/// Envelope basis estimate with diagnostics.
pub type GrassmannFit = grassmann::Descent;

/// Minimizes the envelope objective over `m_x × u` semiorthogonal matrices,
/// starting from every candidate in [`candidate_starts`] plus `init`.
pub fn grassmann_minimize(moments: &SampleMoments, u: usize, init: Option<&DMatrix<f64>>) -> Result<GrassmannFit> {
    grassmann_minimize_with(moments, u, init, DescentOptions::default())
}

pub fn grassmann_minimize_with(
    moments: &SampleMoments,
    u: usize,
    init: Option<&DMatrix<f64>>,
    opts: DescentOptions,
) -> Result<GrassmannFit> {
    let m_x = moments.m_x();
    if u == 0 || u > m_x {
        return Err(invalid(format!("envelope dimension {u} outside 1..={m_x}")));
    }
    let mut starts = candidate_starts(moments, u);
    if let Some(g) = init {
        if g.shape() != (m_x, u) {
            return Err(Error::DimensionMismatch(format!(
                "initial value is {}×{}, expected {m_x}×{u}",
                g.nrows(),
                g.ncols()
            )));
        }
        starts.push(linalg::orthonormalize_columns(g));
    }
    grassmann::minimize_from_candidates(&moments.problem(), &starts, None, opts)
}

/// A fitted envelope model on coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpelmFit {
    pub u: usize,
    pub n: usize,
    #[serde(with = "matrix_serde")]
    pub gamma: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub gamma0: DMatrix<f64>,
    /// `u × m_y`.
    #[serde(with = "matrix_serde")]
    pub eta: DMatrix<f64>,
    /// Intercept for the uncentered coordinates.
    #[serde(with = "vector_serde")]
    pub alpha: DVector<f64>,
    #[serde(with = "matrix_serde")]
    pub delta: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub delta0: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub sigma_eps: DMatrix<f64>,
    /// `m_y × m_x`.
    #[serde(with = "matrix_serde")]
    pub beta: DMatrix<f64>,
    #[serde(with = "vector_serde")]
    pub x_mean: DVector<f64>,
    #[serde(with = "vector_serde")]
    pub y_mean: DVector<f64>,
    pub loglik: f64,
    pub objective: f64,
    /// Asymptotic variance of `√n·vec(β̂)`, with `vec` stacking the columns of
    /// the `m_y × m_x` matrix `β̂`.
    #[serde(with = "matrix_serde")]
    pub v_mpelm: DMatrix<f64>,
    pub converged: bool,
    pub descent_violations: usize,
}

impl MpelmFit {
    pub fn m_x(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn m_y(&self) -> usize {
        self.beta.nrows()
    }

    /// `α + β x` for each row of `xtil`.
    pub fn predict(&self, xtil: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = xtil * self.beta.transpose();
        for mut row in out.row_iter_mut() {
            row += self.alpha.transpose();
        }
        out
    }
}

/// Profile log-likelihood at envelope objective value `objective` (0 for `u = 0`).
pub fn profile_loglik(moments: &SampleMoments, objective: f64) -> f64 {
    let n = moments.n as f64;
    let dims = (moments.m_x() + moments.m_y()) as f64;
    let ld_x = linalg::logdet_spd(&moments.s_x).unwrap_or(f64::NEG_INFINITY);
    let ld_y = linalg::logdet_spd(&moments.s_y).unwrap_or(f64::NEG_INFINITY);
    -0.5 * n * (dims * (1.0 + LN_2PI) + ld_x + ld_y + objective)
}

/// Fits the envelope model of dimension `u ∈ 0..=m_x`.
pub fn fit_mpelm(xtil: &DMatrix<f64>, ytil: &DMatrix<f64>, u: usize) -> Result<MpelmFit> {
    let moments = sample_moments(xtil, ytil)?;
    fit_mpelm_moments(&moments, u, None)
}

/// Fits from precomputed moments, optionally adding `init` to the starting values.
pub fn fit_mpelm_moments(moments: &SampleMoments, u: usize, init: Option<&DMatrix<f64>>) -> Result<MpelmFit> {
    let m_x = moments.m_x();
    if moments.n <= m_x {
        return Err(Error::InsufficientData(format!(
            "n = {} must exceed m_x = {m_x}; use a smaller basis or ridge coordinates",
            moments.n
        )));
    }
    if u > m_x {
        return Err(invalid(format!("envelope dimension {u} exceeds m_x = {m_x}")));
    }
    let (gamma, objective, converged, violations) = if u == 0 {
        (DMatrix::zeros(m_x, 0), 0.0, true, 0)
    } else if u == m_x {
        let g = DMatrix::identity(m_x, m_x);
        (g.clone(), moments.problem().penalty(&g), true, 0)
    } else {
        let d = grassmann_minimize(moments, u, init)?;
        (d.gamma, d.objective, d.converged, d.violations)
    };
    assemble_mpelm(moments, gamma, objective, converged, violations)
}

/// Closed-form estimates at a given envelope basis.
pub fn assemble_mpelm(
    moments: &SampleMoments,
    gamma: DMatrix<f64>,
    objective: f64,
    converged: bool,
    descent_violations: usize,
) -> Result<MpelmFit> {
    let u = gamma.ncols();
    let m_y = moments.m_y();
    let gamma0 = linalg::orthonormal_completion(&gamma);
    let delta = linalg::symmetrize(&(gamma.transpose() * &moments.s_x * &gamma));
    let delta0 = linalg::symmetrize(&(gamma0.transpose() * &moments.s_x * &gamma0));
    let eta = if u == 0 {
        DMatrix::zeros(0, m_y)
    } else {
        linalg::spd_solve(&delta, &(gamma.transpose() * &moments.s_xy))
            .ok_or_else(|| Error::Conditioning("ΓᵀS_XΓ is singular".into()))?
    };
    let beta = (&gamma * &eta).transpose();
    let alpha = &moments.y_mean - &beta * &moments.x_mean;
    let sigma_eps = linalg::symmetrize(&(&moments.s_y - &beta * &moments.s_x * beta.transpose()));
    let loglik = profile_loglik(moments, objective);
    let mut fit = MpelmFit {
        u,
        n: moments.n,
        gamma,
        gamma0,
        eta,
        alpha,
        delta,
        delta0,
        sigma_eps,
        beta,
        x_mean: moments.x_mean.clone(),
        y_mean: moments.y_mean.clone(),
        loglik,
        objective,
        v_mpelm: DMatrix::zeros(0, 0),
        converged,
        descent_violations,
    };
    fit.v_mpelm = asymptotic_variance_mpelm(&fit);
    Ok(fit)
}

/// Plug-in asymptotic variance of `√n·vec(β̂)` (columns of `β̂` stacked):
///
/// ```text
/// ΓΔ⁻¹Γᵀ ⊗ Σ_ε + (Γ0 ⊗ ηᵀ) M† (Γ0ᵀ ⊗ η),
/// M = Δ0 ⊗ ηΣ_ε⁻¹ηᵀ + Δ0⁻¹ ⊗ Δ + Δ0 ⊗ Δ⁻¹ − 2I.
/// ```
pub fn asymptotic_variance_mpelm(fit: &MpelmFit) -> DMatrix<f64> {
    let m_x = fit.m_x();
    let m_y = fit.m_y();
    let u = fit.u;
    if u == 0 {
        return DMatrix::zeros(m_x * m_y, m_x * m_y);
    }
    let delta_inv = linalg::spd_inverse(&fit.delta).unwrap_or_else(|| linalg::pinv_sym(&fit.delta, 1e-12));
    let material = &fit.gamma * &delta_inv * fit.gamma.transpose();
    let mut v = material.kronecker(&fit.sigma_eps);
    if u < m_x {
        let sigma_inv = linalg::spd_inverse(&fit.sigma_eps).unwrap_or_else(|| linalg::pinv_sym(&fit.sigma_eps, 1e-12));
        let delta0_inv = linalg::spd_inverse(&fit.delta0).unwrap_or_else(|| linalg::pinv_sym(&fit.delta0, 1e-12));
        let k = (m_x - u) * u;
        let mm = fit.delta0.kronecker(&(&fit.eta * sigma_inv * fit.eta.transpose()))
            + delta0_inv.kronecker(&fit.delta)
            + fit.delta0.kronecker(&delta_inv)
            - DMatrix::identity(k, k) * 2.0;
        let m_pinv = linalg::pinv_sym(&mm, 1e-10);
        let left = fit.gamma0.kronecker(&fit.eta.transpose());
        v += &left * m_pinv * left.transpose();
    }
    linalg::symmetrize(&v)
}

/// Parameter count used by BIC for the envelope model of dimension `u`.
pub fn bic_params(m_x: usize, m_y: usize, u: usize) -> usize {
    m_y + u * m_y + m_x * (m_x + 1) / 2 + m_y * (m_y + 1) / 2
}

/// One row of a dimension-selection table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BicRow {
    pub u: usize,
    pub loglik: f64,
    pub params: usize,
    pub bic: f64,
    /// `false` if the fit at this `u` failed and was skipped.
    pub ok: bool,
}

/// Result of BIC dimension selection.
#[derive(Debug, Clone)]
pub struct BicSelection<F> {
    pub u_hat: usize,
    pub table: Vec<BicRow>,
    pub best: F,
}

/// Selects `u ∈ 0..=u_max` by BIC; ties go to the smaller `u`. Each fit is
/// warm-started from the previous dimension's basis extended by one direction.
pub fn select_dim_bic(xtil: &DMatrix<f64>, ytil: &DMatrix<f64>, u_max: usize) -> Result<BicSelection<MpelmFit>> {
    let moments = sample_moments(xtil, ytil)?;
    select_dim_bic_moments(&moments, u_max)
}

pub fn select_dim_bic_moments(moments: &SampleMoments, u_max: usize) -> Result<BicSelection<MpelmFit>> {
    let m_x = moments.m_x();
    let m_y = moments.m_y();
    if u_max > m_x {
        return Err(invalid(format!("u_max = {u_max} exceeds m_x = {m_x}")));
    }
    let ln_n = (moments.n as f64).ln();
    let mut table = Vec::with_capacity(u_max + 1);
    let mut best: Option<(f64, MpelmFit)> = None;
    let mut prev: Option<DMatrix<f64>> = None;
    let mut first_err = None;
    for u in 0..=u_max {
        let init = prev.as_ref().map(|g| extend_basis(&moments.problem(), &moments.s_x, g));
        let params = bic_params(m_x, m_y, u);
        match fit_mpelm_moments(moments, u, init.as_ref()) {
            Ok(fit) => {
                let bic = -2.0 * fit.loglik + ln_n * params as f64;
                table.push(BicRow {
                    u,
                    loglik: fit.loglik,
                    params,
                    bic,
                    ok: true,
                });
                prev = Some(fit.gamma.clone());
                if best.as_ref().is_none_or(|(b, _)| bic < *b) {
                    best = Some((bic, fit));
                }
            }
            Err(e) => {
                table.push(BicRow {
                    u,
                    loglik: f64::NAN,
                    params,
                    bic: f64::NAN,
                    ok: false,
                });
                first_err.get_or_insert(e);
            }
        }
    }
    let (_, best) = best.ok_or_else(|| first_err.expect("some fit was attempted"))?;
    Ok(BicSelection {
        u_hat: best.u,
        table,
        best,
    })
}

/// `[g, e]` with `e` the eigenvector of `s_x`, projected off `span(g)`, that
/// gives the lowest penalty.
pub(crate) fn extend_basis(problem: &EnvelopeProblem, s_x: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let m = g.nrows();
    let u = g.ncols();
    let (_, vecs) = linalg::sym_eigen_desc(s_x);
    let proj = DMatrix::identity(m, m) - g * g.transpose();
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for j in 0..m {
        let e = &proj * vecs.column(j);
        let nrm = e.norm();
        if nrm < 1e-6 {
            continue;
        }
        let mut cand = DMatrix::zeros(m, u + 1);
        cand.view_mut((0, 0), (m, u)).copy_from(g);
        cand.set_column(u, &(e / nrm));
        let f = problem.penalty(&cand);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, cand));
        }
    }
    best.map(|b| b.1).unwrap_or_else(|| {
        let mut cand = DMatrix::zeros(m, u + 1);
        cand.view_mut((0, 0), (m, u)).copy_from(g);
        cand
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::tests::{random_semiorthogonal, random_spd};
    use crate::simlab::synthetic::EnvelopeDesign;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn moments_from(s_x: DMatrix<f64>, s_xgy: DMatrix<f64>) -> SampleMoments {
        let m = s_x.nrows();
        SampleMoments {
            n: 100,
            x_mean: DVector::zeros(m),
            y_mean: DVector::zeros(1),
            s_x_inv: linalg::spd_inverse(&s_x).unwrap(),
            s_x,
            s_y: DMatrix::identity(1, 1),
            s_xy: DMatrix::zeros(m, 1),
            s_xgy,
            s_y_stabilized: false,
        }
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn moments_of_perfectly_dependent_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(50, 3, |_, _| rng.random_range(-1.0..1.0));
        let mo = sample_moments(&x, &x).unwrap();
        assert!(mo.s_xgy.amax() < 1e-10);
        let (vals, _) = linalg::sym_eigen_desc(&(&mo.s_x - &mo.s_xgy));
        assert!(vals.min() > -1e-10);
    }

    #[test]
    fn constant_response_column_is_stabilized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-1.0..1.0));
        let mut y = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-1.0..1.0));
        y.column_mut(1).fill(3.0);
        let mo = sample_moments(&x, &y).unwrap();
        assert!(mo.s_y_stabilized);
        assert!(mo.s_xgy.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn too_few_subjects() {
        let x = DMatrix::zeros(1, 2);
        assert!(matches!(
            sample_moments(&x, &DMatrix::zeros(1, 1)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn full_dimension_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s_x = random_spd(&mut rng, 4);
        let s_xgy = &s_x * 0.5;
        let mo = moments_from(s_x.clone(), s_xgy.clone());
        let f = envelope_objective(&DMatrix::identity(4, 4), &mo).unwrap();
        let expected = linalg::logdet_spd(&s_xgy).unwrap() - linalg::logdet_spd(&s_x).unwrap();
        assert!((f - expected).abs() < 1e-10);
        assert!(envelope_objective(&(DMatrix::identity(4, 1) * 2.0), &mo).is_err());
    }

    proptest! {
        #[test]
        fn objective_rotation_invariance(seed in any::<u64>(), u in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s_x = random_spd(&mut rng, 6);
            let s_xgy = random_spd(&mut rng, 6);
            let mo = moments_from(s_x, s_xgy);
            let g = random_semiorthogonal(&mut rng, 6, u);
            let o = random_semiorthogonal(&mut rng, u, u);
            let a = envelope_objective(&g, &mo).unwrap();
            let b = envelope_objective(&(&g * o), &mo).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn diagonal_problem_minimizer_is_first_axis() {
        let mo = moments_from(diag(&[4.0, 3.0, 2.0, 1.0]), diag(&[1.0, 3.0, 2.0, 1.0]));
        let values: Vec<f64> = (0..4)
            .map(|j| {
                let mut g = DMatrix::zeros(4, 1);
                g[(j, 0)] = 1.0;
                envelope_objective(&g, &mo).unwrap()
            })
            .collect();
        assert!(values[0] < values[1] && values[0] < values[2] && values[0] < values[3]);
        let fit = grassmann_minimize(&mo, 1, None).unwrap();
        let axis = DMatrix::identity(4, 1);
        assert!(linalg::max_principal_angle(&fit.gamma, &axis) < 1e-6);
    }

    #[test]
    fn full_dimension_fit_is_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = EnvelopeDesign::six_by_two(&mut rng);
        let (x, y) = d.sample(&mut rng, 200);
        let fit = fit_mpelm(&x, &y, 6).unwrap();
        let ols = baselines::fit_ols(&x, &y).unwrap();
        assert!((&fit.beta - &ols.beta).amax() < 1e-8);
        assert!((&fit.alpha - &ols.intercept).amax() < 1e-8);
        let mo = sample_moments(&x, &y).unwrap();
        let dinv = linalg::spd_inverse(&mo.s_x).unwrap();
        assert!((&fit.v_mpelm - dinv.kronecker(&fit.sigma_eps)).amax() < 1e-8);
    }

    #[test]
    fn recovers_known_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = EnvelopeDesign::six_by_two(&mut rng);
        let (x, y) = d.sample(&mut rng, 5000);
        let fit = fit_mpelm(&x, &y, 2).unwrap();
        assert!(linalg::max_principal_angle(&fit.gamma, &d.gamma) < 0.05);
        assert_eq!(fit.descent_violations, 0);
        // Fitted pieces satisfy the structural identities.
        assert!(linalg::semiorthogonality_error(&fit.gamma) < 1e-8);
        assert!((fit.gamma0.transpose() * &fit.gamma).amax() < 1e-8);
        let mo = sample_moments(&x, &y).unwrap();
        let p = &fit.gamma * fit.gamma.transpose();
        let b = (&p * &mo.s_x * &p).pseudo_inverse(1e-12).unwrap() * &mo.s_xy;
        assert!((&fit.beta - b.transpose()).amax() < 1e-10);
    }

    #[test]
    fn envelope_beats_ols_in_most_replications() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = EnvelopeDesign::six_by_two(&mut rng);
        let truth = d.beta();
        let wins = (0..100)
            .filter(|&r| {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + r);
                let (x, y) = d.sample(&mut rng, 5000);
                let env = fit_mpelm(&x, &y, 2).unwrap();
                let ols = baselines::fit_ols(&x, &y).unwrap();
                (&env.beta - &truth).norm() < (&ols.beta - &truth).norm()
            })
            .count();
        assert!(wins >= 80, "{wins}");
    }

    #[test]
    fn noise_response_gives_small_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(2000, 5, |_, j| rng.random_range(-1.0..1.0) * (j + 1) as f64);
        let y = DMatrix::from_fn(2000, 2, |_, _| rng.random_range(-1.0..1.0));
        let fit = fit_mpelm(&x, &y, 1).unwrap();
        assert!(fit.beta.norm() < 0.1);
    }

    #[test]
    fn fitted_covariance_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = EnvelopeDesign::six_by_two(&mut rng);
        let (x, y) = d.sample(&mut rng, 300);
        let mo = sample_moments(&x, &y).unwrap();
        for u in [2, 6] {
            let f = fit_mpelm(&x, &y, u).unwrap();
            let sig = &f.gamma * &f.delta * f.gamma.transpose() + &f.gamma0 * &f.delta0 * f.gamma0.transpose();
            let p = &f.gamma * f.gamma.transpose();
            let q = DMatrix::identity(6, 6) - &p;
            assert!((&sig - (&p * &mo.s_x * &p + &q * &mo.s_x * &q)).amax() < 1e-8);
            assert!(linalg::sym_eigen_desc(&sig).0.min() > 0.0);
            if u == 6 {
                assert!((&sig - &mo.s_x).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn response_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = EnvelopeDesign::six_by_two(&mut rng);
        let (x, y) = d.sample(&mut rng, 400);
        let a = fit_mpelm(&x, &y, 2).unwrap();
        let b = fit_mpelm(&x, &(&y * -3.0), 2).unwrap();
        assert!(linalg::max_principal_angle(&a.gamma, &b.gamma) < 1e-6);
        assert!((&a.beta * -3.0 - &b.beta).amax() < 1e-6);
    }

    #[test]
    fn variance_depends_on_span_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = EnvelopeDesign::six_by_two(&mut rng);
        let (x, y) = d.sample(&mut rng, 500);
        let mo = sample_moments(&x, &y).unwrap();
        let f = fit_mpelm_moments(&mo, 2, None).unwrap();
        let o = random_semiorthogonal(&mut rng, 2, 2);
        let g = assemble_mpelm(&mo, &f.gamma * o, f.objective, true, 0).unwrap();
        assert!((&f.v_mpelm - &g.v_mpelm).amax() < 1e-8);
        assert!((&f.beta - &g.beta).amax() < 1e-10);
        let (vals, _) = linalg::sym_eigen_desc(&f.v_mpelm);
        assert!(vals.min() >= -1e-8 * vals.max());
    }

    #[test]
    fn bic_table_and_nested_loglik() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = EnvelopeDesign::six_by_two(&mut rng);
        let (x, y) = d.sample(&mut rng, 800);
        let sel = select_dim_bic(&x, &y, 6).unwrap();
        assert_eq!(sel.table.len(), 7);
        assert_eq!(sel.table[0].u, 0);
        for w in sel.table.windows(2) {
            assert!(w[1].loglik >= w[0].loglik - 1e-6);
        }
        assert_eq!(sel.u_hat, 2);
        // u = 0 is the independence model.
        let mo = sample_moments(&x, &y).unwrap();
        assert_eq!(sel.table[0].loglik, profile_loglik(&mo, 0.0));
        assert_eq!(bic_params(6, 2, 0), 2 + 21 + 3);
    }

    #[test]
    fn insufficient_subjects_for_basis() {
        let x = DMatrix::from_fn(5, 6, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let y = DMatrix::from_fn(5, 1, |i, _| i as f64);
        assert!(matches!(fit_mpelm(&x, &y, 2), Err(Error::InsufficientData(_))));
    }
}
