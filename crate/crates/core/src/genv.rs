//! The generalized (logistic) predictor envelope model on coordinates.
//!
//! With `P(Y = 1 | X) = logistic(α + ηᵀΓᵀX)` and `Σ_X = ΓΔΓᵀ + Γ0Δ0Γ0ᵀ`,
//! the estimate minimizes
//!
//! ```text
//! −(2/n) Σ [yᵢμᵢ − log(1 + e^{μᵢ})] + log|ΓᵀS_XΓ| + log|ΓᵀS_X⁻¹Γ|,   μᵢ = α + ηᵀΓᵀXᵢ,
//! ```
//!
//! alternating a logistic fit of `Y` on `ΓᵀX` with one row-wise sweep over `Γ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::envelope::{check_semiorthogonal, extend_basis, BicRow, BicSelection};
use crate::error::{invalid, Error, Result};
use crate::grassmann::{self, logistic, softplus, DescentOptions, EnvelopeProblem, LogisticTerm};
use crate::io::{matrix_serde, vector_serde};
use crate::linalg;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Bound on `|α|` and on the Euclidean norm of the slope vector of a logistic
/// fit. The norm bound does not depend on the basis of the design.
pub const COEF_CAP: f64 = 30.0;

/// Clamps the intercept and shrinks the slopes onto the norm ball.
fn cap_coefficients(theta: &mut DVector<f64>) {
    theta[0] = theta[0].clamp(-COEF_CAP, COEF_CAP);
    let k = theta.len() - 1;
    let norm = theta.rows(1, k).norm();
    if norm > COEF_CAP {
        theta.rows_mut(1, k).scale_mut(COEF_CAP / norm);
    }
}

/// Logistic regression of `y` on an intercept and the columns of a design.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub alpha: f64,
    pub coef: DVector<f64>,
    /// Bernoulli log-likelihood at the estimate.
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Labels are fitted exactly or some coefficient reached the ±30 cap
    /// (separated or all-equal labels).
    pub separation: bool,
}

fn bernoulli_loglik(x: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, coef: &DVector<f64>) -> f64 {
    let eta = x * coef;
    eta.iter()
        .zip(y.iter())
        .map(|(&e, &yi)| {
            let z = e + alpha;
            yi * z - softplus(z)
        })
        .sum()
}

/// Logistic maximum likelihood by Newton–Raphson (IRLS) with step halving.
///
/// Stops when the largest averaged score component is below `1e-9` or after
/// 100 iterations. The log-likelihood never decreases from the start value.
pub fn fit_logistic(x: &DMatrix<f64>, y: &DVector<f64>, start: Option<(f64, &DVector<f64>)>) -> GlmFit {
    let (n, k) = x.shape();
    let mut theta = DVector::zeros(k + 1);
    if let Some((a, c)) = start {
        theta[0] = a;
        theta.rows_mut(1, k).copy_from(c);
        cap_coefficients(&mut theta);
    }
    let split = |t: &DVector<f64>| (t[0], t.rows(1, k).into_owned());
    let ll = |t: &DVector<f64>| {
        let (a, c) = split(t);
        bernoulli_loglik(x, y, a, &c)
    };
    let mut cur = ll(&theta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 100 {
        let (a, c) = split(&theta);
        let eta = x * &c;
        let mut score = DVector::zeros(k + 1);
        let mut info = DMatrix::zeros(k + 1, k + 1);
        let mut row = DVector::zeros(k + 1);
        for i in 0..n {
            let p = logistic(eta[i] + a);
            let r = y[i] - p;
            let w = p * (1.0 - p);
            row[0] = 1.0;
            for j in 0..k {
                row[j + 1] = x[(i, j)];
            }
            score.axpy(r, &row, 1.0);
            info.ger(w, &row, &row, 1.0);
        }
        if score.amax() / n as f64 <= 1e-9 {
            converged = true;
            break;
        }
        iterations += 1;
        let ridge = 1e-10 * info.trace().max(1e-300) / (k + 1) as f64;
        for j in 0..=k {
            info[(j, j)] += ridge;
        }
        let step = match linalg::spd_solve(&info, &DMatrix::from_column_slice(k + 1, 1, score.as_slice())) {
            Some(s) => s.column(0).into_owned(),
            None => score.clone() / n as f64,
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = &theta + &step * t;
            cap_coefficients(&mut trial);
            let v = ll(&trial);
            if v.is_finite() && v >= cur {
                let gain = v - cur;
                let moved = (&trial - &theta).amax();
                theta = trial;
                cur = v;
                accepted = moved > 0.0 && gain >= 0.0;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (alpha, coef) = split(&theta);
    let fitted_exactly = (x * &coef)
        .iter()
        .zip(y.iter())
        .all(|(&e, &yi)| (yi - logistic(e + alpha)).abs() < 1e-6);
    let at_cap = theta[0].abs() >= COEF_CAP * (1.0 - 1e-12) || coef.norm() >= COEF_CAP * (1.0 - 1e-12);
    let separation = fitted_exactly || at_cap;
    GlmFit {
        alpha,
        coef,
        loglik: cur,
        iterations,
        converged,
        separation,
    }
}

fn labels_vector(y: &[u8]) -> Result<DVector<f64>> {
    if y.iter().any(|&v| v > 1) {
        return Err(invalid("labels must be 0 or 1"));
    }
    Ok(DVector::from_iterator(y.len(), y.iter().map(|&v| v as f64)))
}

/// Logistic fit of `y` on `ΓᵀX`; returns `(α, η)` and fit diagnostics.
pub fn glm_step(gamma: &DMatrix<f64>, xtil: &DMatrix<f64>, y: &[u8]) -> Result<(f64, DVector<f64>, GlmFit)> {
    let yv = labels_vector(y)?;
    if xtil.nrows() != y.len() || gamma.nrows() != xtil.ncols() {
        return Err(Error::DimensionMismatch("Γ, X and y do not conform".into()));
    }
    let fit = fit_logistic(&(xtil * gamma), &yv, None);
    Ok((fit.alpha, fit.coef.clone(), fit))
}

/// The penalized deviance objective at `(α, η, Γ)`.
pub fn gmelm_objective(
    alpha: f64,
    eta: &DVector<f64>,
    gamma: &DMatrix<f64>,
    xtil: &DMatrix<f64>,
    y: &[u8],
) -> Result<f64> {
    check_semiorthogonal(gamma)?;
    let yv = labels_vector(y)?;
    if xtil.nrows() != y.len() || gamma.nrows() != xtil.ncols() || eta.len() != gamma.ncols() {
        return Err(Error::DimensionMismatch("α, η, Γ, X and y do not conform".into()));
    }
    let (problem, _) = problem_for(xtil, &yv, alpha, false)?;
    Ok(problem.objective(gamma, Some(eta)))
}

/// The envelope problem `M = S_X`, `V = S_X⁻¹` with the logistic data term on
/// `xtil` (centered if `center` is set; the intercept then refers to centered data).
fn problem_for(
    xtil: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    center: bool,
) -> Result<(EnvelopeProblem, DVector<f64>)> {
    let n = xtil.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} subjects; at least 2 are needed")));
    }
    let means = linalg::column_means(xtil);
    let xc = linalg::center_columns(xtil, &means);
    let s_x = linalg::symmetrize(&linalg::cross_cov(&xc, &xc));
    let s_x_inv = linalg::spd_inverse(&s_x).unwrap_or_else(|| linalg::pinv_sym(&s_x, 1e-14));
    let x = if center { xc } else { xtil.clone() };
    Ok((
        EnvelopeProblem {
            m: s_x,
            v: s_x_inv,
            logistic: Some(LogisticTerm { x, y: y.clone(), alpha }),
        },
        means,
    ))
}

/// A fitted logistic envelope model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmelmFit {
    pub family: String,
    pub link: String,
    pub u: usize,
    pub n: usize,
    #[serde(with = "matrix_serde")]
    pub gamma: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub gamma0: DMatrix<f64>,
    #[serde(with = "vector_serde")]
    pub eta: DVector<f64>,
    /// Intercept for uncentered coordinates.
    pub alpha: f64,
    #[serde(with = "matrix_serde")]
    pub delta: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub delta0: DMatrix<f64>,
    /// `Γη`.
    #[serde(with = "vector_serde")]
    pub beta: DVector<f64>,
    #[serde(with = "vector_serde")]
    pub x_mean: DVector<f64>,
    /// Bernoulli log-likelihood at `(α, β)`.
    pub loglik: f64,
    pub objective: f64,
    /// Asymptotic variance of `√n·β̂`.
    #[serde(with = "matrix_serde")]
    pub v_gmelm: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub separation: bool,
    pub descent_violations: usize,
}

impl GmelmFit {
    pub fn m_x(&self) -> usize {
        self.beta.len()
    }

    /// `P(Y = 1)` for each row of `xtil`.
    pub fn predict_prob(&self, xtil: &DMatrix<f64>) -> DVector<f64> {
        (xtil * &self.beta).map(|v| logistic(v + self.alpha))
    }

    /// Joint log-likelihood of `(X, Y)` used for BIC.
    pub fn joint_loglik(&self, s_x_logdet: f64) -> f64 {
        let n = self.n as f64;
        -0.5 * n * (self.objective + self.m_x() as f64 * (1.0 + LN_2PI) + s_x_logdet)
    }
}

/// Options for [`fit_gmelm_with`].
#[derive(Debug, Clone, Default)]
pub struct GmelmOptions {
    /// Extra starting value for `Γ`.
    pub init: Option<DMatrix<f64>>,
    pub descent: DescentOptions,
}

/// Fits the logistic envelope model of dimension `u ∈ 0..=m_x`.
pub fn fit_gmelm(xtil: &DMatrix<f64>, y: &[u8], u: usize) -> Result<GmelmFit> {
    fit_gmelm_with(xtil, y, u, &GmelmOptions::default())
}

pub fn fit_gmelm_with(xtil: &DMatrix<f64>, y: &[u8], u: usize, opts: &GmelmOptions) -> Result<GmelmFit> {
    let yv = labels_vector(y)?;
    let (n, m_x) = xtil.shape();
    if yv.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} labels", yv.len())));
    }
    if n <= m_x {
        return Err(Error::InsufficientData(format!(
            "n = {n} must exceed m_x = {m_x}; use a smaller basis or ridge coordinates"
        )));
    }
    if u > m_x {
        return Err(invalid(format!("envelope dimension {u} exceeds m_x = {m_x}")));
    }
    let (mut problem, means) = problem_for(xtil, &yv, 0.0, true)?;
    let xc = problem.logistic.as_ref().expect("logistic term").x.clone();

    let best = if u == 0 || u == m_x {
        let gamma = if u == 0 {
            DMatrix::zeros(m_x, 0)
        } else {
            DMatrix::identity(m_x, m_x)
        };
        let glm = fit_logistic(&(&xc * &gamma), &yv, None);
        problem.logistic.as_mut().expect("logistic term").alpha = glm.alpha;
        let objective = problem.objective(&gamma, Some(&glm.coef));
        Alternation {
            gamma,
            eta: glm.coef.clone(),
            alpha: glm.alpha,
            objective,
            converged: glm.converged,
            iterations: glm.iterations,
            separation: glm.separation,
            violations: 0,
        }
    } else {
        let starts = gmelm_starts(&problem, &xc, &yv, u, opts.init.as_ref());
        let mut best: Option<Alternation> = None;
        for s in &starts {
            let run = alternate(&mut problem, &xc, &yv, s, opts.descent)?;
            if best.as_ref().is_none_or(|b| run.objective < b.objective) {
                best = Some(run);
            }
        }
        best.ok_or_else(|| invalid("no usable starting value"))?
    };
    assemble(&problem.m, &xc, &yv, &means, best)
}

struct Alternation {
    gamma: DMatrix<f64>,
    eta: DVector<f64>,
    alpha: f64,
    objective: f64,
    converged: bool,
    iterations: usize,
    separation: bool,
    violations: usize,
}

fn gmelm_starts(
    problem: &EnvelopeProblem,
    xc: &DMatrix<f64>,
    y: &DVector<f64>,
    u: usize,
    init: Option<&DMatrix<f64>>,
) -> Vec<DMatrix<f64>> {
    let m_x = xc.ncols();
    let n = xc.nrows() as f64;
    let mut out = Vec::new();
    // Logistic direction on the full coordinates, extended greedily.
    let full = fit_logistic(xc, y, None);
    let nrm = full.coef.norm();
    if nrm > 0.0 {
        let mut g = DMatrix::from_column_slice(m_x, 1, (full.coef.clone() / nrm).as_slice());
        let penalty_only = EnvelopeProblem {
            m: problem.m.clone(),
            v: problem.v.clone(),
            logistic: None,
        };
        while g.ncols() < u {
            g = extend_by_fit(&penalty_only, problem, xc, y, &g);
        }
        out.push(g);
    }
    // Eigenvectors of S_X chosen greedily by the full objective.
    let (_, vecs) = linalg::sym_eigen_desc(&problem.m);
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..u {
        let mut best = (f64::INFINITY, 0);
        for j in (0..m_x).filter(|j| !chosen.contains(j)) {
            let mut cols = chosen.clone();
            cols.push(j);
            let g = vecs.select_columns(&cols);
            let f = objective_after_glm(problem, xc, y, &g);
            if f < best.0 {
                best = (f, j);
            }
        }
        chosen.push(best.1);
    }
    out.push(vecs.select_columns(&chosen));
    // PLS weights of the labels.
    let yc = y.add_scalar(-y.sum() / n);
    let s_xy = xc.tr_mul(&yc) / n;
    let pls = baselines::simpls_weights(&problem.m, &DMatrix::from_column_slice(m_x, 1, s_xy.as_slice()), u);
    if pls.weights.ncols() == u {
        out.push(linalg::orthonormalize_columns(&pls.weights));
    }
    if let Some(g) = init {
        if g.shape() == (m_x, u) {
            out.push(linalg::orthonormalize_columns(g));
        }
    }
    out
}

fn objective_after_glm(problem: &EnvelopeProblem, xc: &DMatrix<f64>, y: &DVector<f64>, g: &DMatrix<f64>) -> f64 {
    let glm = fit_logistic(&(xc * g), y, None);
    problem.penalty(g) - 2.0 * glm.loglik / xc.nrows() as f64
}

fn extend_by_fit(
    penalty_only: &EnvelopeProblem,
    problem: &EnvelopeProblem,
    xc: &DMatrix<f64>,
    y: &DVector<f64>,
    g: &DMatrix<f64>,
) -> DMatrix<f64> {
    let m = g.nrows();
    let u = g.ncols();
    let (_, vecs) = linalg::sym_eigen_desc(&problem.m);
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
        let f = objective_after_glm(problem, xc, y, &cand);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, cand));
        }
    }
    best.map(|b| b.1)
        .unwrap_or_else(|| extend_basis(penalty_only, &problem.m, g))
}

fn alternate(
    problem: &mut EnvelopeProblem,
    xc: &DMatrix<f64>,
    y: &DVector<f64>,
    start: &DMatrix<f64>,
    opts: DescentOptions,
) -> Result<Alternation> {
    let mut gamma = linalg::orthonormalize_columns(start);
    let glm = fit_logistic(&(xc * &gamma), y, None);
    let mut eta = glm.coef;
    let mut alpha = glm.alpha;
    let mut separation = glm.separation;
    problem.logistic.as_mut().expect("logistic term").alpha = alpha;
    let mut f = problem.objective(&gamma, Some(&eta));
    let mut violations = 0;
    let mut converged = false;
    let mut iterations = 0;
    let sweep = DescentOptions { max_sweeps: 1, ..opts };
    while iterations < opts.max_sweeps {
        iterations += 1;
        let start_f = f;
        let d = grassmann::descend(problem, &gamma, Some(&eta), sweep)?;
        violations += d.violations;
        if !grassmann::check_descent(f, d.objective) {
            violations += 1;
        }
        if d.objective <= f {
            gamma = d.gamma;
            eta = d.eta.expect("η carried through descent");
            f = d.objective;
        }
        let glm = fit_logistic(&(xc * &gamma), y, Some((alpha, &eta)));
        problem.logistic.as_mut().expect("logistic term").alpha = glm.alpha;
        let f_new = problem.objective(&gamma, Some(&glm.coef));
        if !grassmann::check_descent(f, f_new) {
            violations += 1;
        }
        if f_new <= f {
            alpha = glm.alpha;
            eta = glm.coef;
            separation = glm.separation;
            f = f_new;
        } else {
            problem.logistic.as_mut().expect("logistic term").alpha = alpha;
        }
        if (start_f - f).abs() <= opts.rel_tol * f.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(Alternation {
        gamma,
        eta,
        alpha,
        objective: f,
        converged,
        iterations,
        separation,
        violations,
    })
}

fn assemble(
    s_x: &DMatrix<f64>,
    xc: &DMatrix<f64>,
    y: &DVector<f64>,
    means: &DVector<f64>,
    a: Alternation,
) -> Result<GmelmFit> {
    let n = xc.nrows();
    let gamma0 = linalg::orthonormal_completion(&a.gamma);
    let delta = linalg::symmetrize(&(a.gamma.transpose() * s_x * &a.gamma));
    let delta0 = linalg::symmetrize(&(gamma0.transpose() * s_x * &gamma0));
    let beta = &a.gamma * &a.eta;
    let loglik = bernoulli_loglik(xc, y, a.alpha, &beta);
    let alpha = a.alpha - beta.dot(means);
    let mut fit = GmelmFit {
        family: "binomial".into(),
        link: "logit".into(),
        u: a.gamma.ncols(),
        n,
        gamma: a.gamma,
        gamma0,
        eta: a.eta,
        alpha,
        delta,
        delta0,
        beta,
        x_mean: means.clone(),
        loglik,
        objective: a.objective,
        v_gmelm: DMatrix::zeros(0, 0),
        converged: a.converged,
        iterations: a.iterations,
        separation: a.separation,
        descent_violations: a.violations,
    };
    let xraw = {
        let mut x = xc.clone();
        for mut row in x.row_iter_mut() {
            row += means.transpose();
        }
        x
    };
    fit.v_gmelm = asymptotic_variance_gmelm(&fit, &xraw)?;
    Ok(fit)
}

/// Plug-in inverse Fisher information of the full-coordinate logistic slope,
/// with the intercept profiled out, evaluated at the fitted probabilities.
pub fn fisher_inverse(fit: &GmelmFit, xtil: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, m) = xtil.shape();
    let p = fit.predict_prob(xtil);
    let mut info = DMatrix::zeros(m + 1, m + 1);
    let mut z = DVector::zeros(m + 1);
    for i in 0..n {
        let w = p[i] * (1.0 - p[i]);
        z[0] = 1.0;
        for j in 0..m {
            z[j + 1] = xtil[(i, j)] - fit.x_mean[j];
        }
        info.ger(w / n as f64, &z, &z, 1.0);
    }
    let inv = linalg::spd_inverse(&info)
        .ok_or_else(|| Error::Conditioning("logistic Fisher information is singular".into()))?;
    Ok(inv.view((1, 1), (m, m)).into_owned())
}

/// Plug-in asymptotic variance of `√n·β̂`:
///
/// ```text
/// P_Γ Ṽ P_Γ + (ηᵀ ⊗ Γ0) M⁻¹ (η ⊗ Γ0ᵀ),
/// M = ηηᵀ ⊗ Γ0ᵀṼ⁻¹Γ0 + Δ ⊗ Δ0⁻¹ + Δ⁻¹ ⊗ Δ0 − 2I,
/// ```
///
/// where `Ṽ` is the inverse Fisher information of the unrestricted slope.
pub fn asymptotic_variance_gmelm(fit: &GmelmFit, xtil: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = fit.m_x();
    let u = fit.u;
    if u == 0 {
        return Ok(DMatrix::zeros(m, m));
    }
    let vt = fisher_inverse(fit, xtil)?;
    let proj = &fit.gamma * fit.gamma.transpose();
    let mut v = &proj * &vt * &proj;
    if u < m {
        let vt_inv = linalg::spd_inverse(&vt).unwrap_or_else(|| linalg::pinv_sym(&vt, 1e-12));
        let delta_inv = linalg::spd_inverse(&fit.delta).unwrap_or_else(|| linalg::pinv_sym(&fit.delta, 1e-12));
        let delta0_inv = linalg::spd_inverse(&fit.delta0).unwrap_or_else(|| linalg::pinv_sym(&fit.delta0, 1e-12));
        let k = u * (m - u);
        let eta = DMatrix::from_column_slice(u, 1, fit.eta.as_slice());
        let mm = (&eta * eta.transpose()).kronecker(&(fit.gamma0.transpose() * vt_inv * &fit.gamma0))
            + fit.delta.kronecker(&delta0_inv)
            + delta_inv.kronecker(&fit.delta0)
            - DMatrix::identity(k, k) * 2.0;
        let m_inv = linalg::pinv_sym(&mm, 1e-12);
        let left = eta.transpose().kronecker(&fit.gamma0);
        v += &left * m_inv * left.transpose();
    }
    Ok(linalg::symmetrize(&v))
}

/// BIC parameter count for the logistic envelope of dimension `u`.
pub fn bic_params(m_x: usize, u: usize) -> usize {
    1 + u + m_x * (m_x + 1) / 2
}

/// Selects `u ∈ 0..=u_max` by BIC on the joint likelihood of `(X, Y)`.
pub fn select_dim_bic(xtil: &DMatrix<f64>, y: &[u8], u_max: usize) -> Result<BicSelection<GmelmFit>> {
    let m_x = xtil.ncols();
    if u_max > m_x {
        return Err(invalid(format!("u_max = {u_max} exceeds m_x = {m_x}")));
    }
    let n = xtil.nrows();
    let means = linalg::column_means(xtil);
    let xc = linalg::center_columns(xtil, &means);
    let s_x = linalg::cross_cov(&xc, &xc);
    let ld = linalg::logdet_spd(&s_x).ok_or_else(|| Error::Conditioning("S_X is singular".into()))?;
    let ln_n = (n as f64).ln();
    let mut table = Vec::new();
    let mut best: Option<(f64, GmelmFit)> = None;
    let mut prev: Option<DMatrix<f64>> = None;
    let mut first_err = None;
    let penalty_only = EnvelopeProblem {
        m: linalg::symmetrize(&s_x),
        v: linalg::spd_inverse(&s_x).unwrap_or_else(|| linalg::pinv_sym(&s_x, 1e-14)),
        logistic: None,
    };
    for u in 0..=u_max {
        let opts = GmelmOptions {
            init: prev.as_ref().map(|g| extend_basis(&penalty_only, &penalty_only.m, g)),
            ..Default::default()
        };
        let params = bic_params(m_x, u);
        match fit_gmelm_with(xtil, y, u, &opts) {
            Ok(fit) => {
                let ll = fit.joint_loglik(ld);
                let bic = -2.0 * ll + ln_n * params as f64;
                table.push(BicRow {
                    u,
                    loglik: ll,
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
