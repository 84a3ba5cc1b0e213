//! Minimization of envelope objectives over `u`-dimensional subspaces of
//! `R^m` by row-wise coordinate descent in the `G = C_A G1` parameterization.
//!
//! The objective has the form
//!
//! ```text
//! f(Γ) = log|ΓᵀMΓ| + log|ΓᵀVΓ| + F1(Γη)
//! ```
//!
//! for symmetric positive definite `M`, `V` and an optional logistic deviance
//! term `F1`. Writing `Γ = C_A (C_AᵀC_A)^{-1/2}` with `C_A = (I_u; A)` after a
//! row permutation turns the problem into an unconstrained one over the rows
//! of `A`, each of which is updated by BFGS with a closed-form gradient.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::{self, BfgsOptions};

static DESCENT_VIOLATIONS: AtomicUsize = AtomicUsize::new(0);

/// Total number of descent violations (an objective increase beyond
/// `1e-10·max(1, |f|)` between consecutive sweeps or updates) observed by any
/// fit in this process.
pub fn descent_violation_count() -> usize {
    DESCENT_VIOLATIONS.load(Ordering::Relaxed)
}

pub(crate) fn check_descent(before: f64, after: f64) -> bool {
    let ok = !(after > before + 1e-10 * before.abs().max(1.0));
    if !ok {
        DESCENT_VIOLATIONS.fetch_add(1, Ordering::Relaxed);
    }
    ok
}

/// Numerically stable `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli deviance data term `−(2/n) Σ [yᵢμᵢ − log(1 + e^{μᵢ})]` with
/// `μ = α + X w`.
#[derive(Debug, Clone)]
pub struct LogisticTerm {
    /// `n × m` design (coordinates, typically centered).
    pub x: DMatrix<f64>,
    /// Labels in `{0, 1}`.
    pub y: DVector<f64>,
    pub alpha: f64,
}

impl LogisticTerm {
    pub fn value(&self, w: &DVector<f64>) -> f64 {
        let mu = &self.x * w;
        let n = self.y.len() as f64;
        let s: f64 = mu
            .iter()
            .zip(self.y.iter())
            .map(|(&m, &y)| y * (m + self.alpha) - softplus(m + self.alpha))
            .sum();
        -2.0 * s / n
    }

    /// Value and `Xᵀ(y − p)` at `w`.
    fn value_and_score(&self, w: &DVector<f64>) -> (f64, DVector<f64>) {
        let mu = &self.x * w;
        let n = self.y.len() as f64;
        let mut s = 0.0;
        let mut res = DVector::zeros(mu.len());
        for i in 0..mu.len() {
            let z = mu[i] + self.alpha;
            s += self.y[i] * z - softplus(z);
            res[i] = self.y[i] - logistic(z);
        }
        (-2.0 * s / n, self.x.tr_mul(&res))
    }
}

/// An envelope objective `log|ΓᵀMΓ| + log|ΓᵀVΓ| [+ F1(Γη)]`.
#[derive(Debug, Clone)]
pub struct EnvelopeProblem {
    pub m: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub logistic: Option<LogisticTerm>,
}

impl EnvelopeProblem {
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// The two log-determinant terms; `+∞` when either inner matrix is singular.
    pub fn penalty(&self, gamma: &DMatrix<f64>) -> f64 {
        let a = linalg::logdet_spd(&(gamma.transpose() * &self.m * gamma));
        let b = linalg::logdet_spd(&(gamma.transpose() * &self.v * gamma));
        match (a, b) {
            (Some(a), Some(b)) => a + b,
            _ => f64::INFINITY,
        }
    }

    /// Full objective at semiorthogonal `gamma` (and `eta` for the logistic term).
    pub fn objective(&self, gamma: &DMatrix<f64>, eta: Option<&DVector<f64>>) -> f64 {
        let mut f = self.penalty(gamma);
        if let (Some(term), Some(eta)) = (&self.logistic, eta) {
            f += term.value(&(gamma * eta));
        }
        f
    }
}

/// `Γ` expressed as `P·C_A·G1` with `C_A = (I_u; A)`.
#[derive(Debug, Clone)]
pub struct Reparam {
    /// `perm[i]` is the original row placed at position `i`.
    pub perm: Vec<usize>,
    /// `(m − u) × u`.
    pub a: DMatrix<f64>,
}

impl Reparam {
    /// Chooses the identity rows of `gamma` by greedy row pivoting and solves
    /// for `A`. Also returns the orthogonal `O` with `Γ(A) = Γ·O`.
    pub fn from_gamma(gamma: &DMatrix<f64>) -> Result<(Self, DMatrix<f64>)> {
        let (m, u) = gamma.shape();
        let perm = linalg::front_permutation(&linalg::pivot_rows(gamma), m);
        let gp = linalg::permute_rows(gamma, &perm);
        let top = gp.rows(0, u).into_owned();
        let top_inv = top
            .try_inverse()
            .ok_or_else(|| Error::Conditioning("pivot block of Γ is singular".into()))?;
        let c = &gp * &top_inv;
        let a = c.rows(u, m - u).into_owned();
        let g1 = linalg::inv_sqrt_spd(&c.tr_mul(&c))
            .ok_or_else(|| Error::Conditioning("C_AᵀC_A is not positive definite".into()))?;
        let rotation = top_inv * g1;
        Ok((Self { perm, a }, rotation))
    }

    pub fn c_matrix(&self) -> DMatrix<f64> {
        let u = self.a.ncols();
        let mut c = DMatrix::zeros(u + self.a.nrows(), u);
        c.view_mut((0, 0), (u, u)).fill_with_identity();
        c.view_mut((u, 0), self.a.shape()).copy_from(&self.a);
        c
    }

    /// Semiorthogonal `Γ = P·C_A·(C_AᵀC_A)^{-1/2}` in the original row order.
    pub fn gamma(&self) -> DMatrix<f64> {
        let c = self.c_matrix();
        let g1 = linalg::inv_sqrt_spd(&c.tr_mul(&c)).expect("C_AᵀC_A ⪰ I");
        linalg::unpermute_rows(&(c * g1), &self.perm)
    }
}

/// The objective as a function of one row `a` of `A`, other rows fixed.
///
/// Writing `C1` for `C_A` without the row, `CᵀMC = W1 + m22 (a + s1)(a + s1)ᵀ`
/// with `W1 = C1ᵀ(M11 − m12 m12ᵀ/m22)C1` and `s1 = C1ᵀm12/m22`, and likewise
/// for `V`; `CᵀC = S1 + aaᵀ`. Hence
///
/// ```text
/// F(a) = F1(a) + log(1 + m22 q1) + log(1 + v22 q2) − 2 log(1 + aᵀS1⁻¹a) + const
/// ```
///
/// where `q1 = (a + s1)ᵀW1⁻¹(a + s1)`, `q2` analogous. [`RowContext::objective`]
/// includes the constant, so it equals the full objective at `Γ(A)`.
pub struct RowContext<'a> {
    problem: &'a EnvelopeProblem,
    perm: Vec<usize>,
    /// Full `C_A` in permuted coordinates; the row at `row` is replaced by the candidate.
    c: DMatrix<f64>,
    row: usize,
    eta: Option<DVector<f64>>,
    w1_inv: DMatrix<f64>,
    s1: DVector<f64>,
    m22: f64,
    w2_inv: DMatrix<f64>,
    s2: DVector<f64>,
    v22: f64,
    s1_inv: DMatrix<f64>,
    constant: f64,
}

struct RowBlocks {
    w_inv: DMatrix<f64>,
    s: DVector<f64>,
    d22: f64,
    logdet_w: f64,
}

fn row_blocks(mat_p: &DMatrix<f64>, c: &DMatrix<f64>, others: &[usize], idx: usize) -> Result<RowBlocks> {
    let d22 = mat_p[(idx, idx)];
    if !(d22 > 0.0) {
        return Err(Error::Conditioning(format!("diagonal entry {d22:e} is not positive")));
    }
    let c1 = c.select_rows(others);
    let m12 = DVector::from_iterator(others.len(), others.iter().map(|&i| mat_p[(i, idx)]));
    let m11 = DMatrix::from_fn(others.len(), others.len(), |i, j| mat_p[(others[i], others[j])]);
    let schur = m11 - (&m12 * m12.transpose()) / d22;
    let w = linalg::symmetrize(&(c1.transpose() * schur * &c1));
    let logdet_w =
        linalg::logdet_spd(&w).ok_or_else(|| Error::Conditioning("row block W is not positive definite".into()))?;
    let w_inv =
        linalg::spd_inverse(&w).ok_or_else(|| Error::Conditioning("row block W is not positive definite".into()))?;
    let s = c1.tr_mul(&m12) / d22;
    Ok(RowBlocks {
        w_inv,
        s,
        d22,
        logdet_w,
    })
}

impl<'a> RowContext<'a> {
    /// Context for row `row` (0-based within `A`) of `reparam`.
    pub fn new(
        problem: &'a EnvelopeProblem,
        reparam: &Reparam,
        row: usize,
        eta: Option<&DVector<f64>>,
    ) -> Result<Self> {
        let u = reparam.a.ncols();
        let m = u + reparam.a.nrows();
        let idx = u + row;
        let c = reparam.c_matrix();
        let others: Vec<usize> = (0..m).filter(|&i| i != idx).collect();
        let mp = linalg::permute_sym(&problem.m, &reparam.perm);
        let vp = linalg::permute_sym(&problem.v, &reparam.perm);
        let bm = row_blocks(&mp, &c, &others, idx)?;
        let bv = row_blocks(&vp, &c, &others, idx)?;
        let c1 = c.select_rows(&others);
        let s1 = linalg::symmetrize(&c1.tr_mul(&c1));
        let logdet_s1 = linalg::logdet_spd(&s1).ok_or_else(|| Error::Conditioning("C1ᵀC1 is singular".into()))?;
        let s1_inv = linalg::spd_inverse(&s1).ok_or_else(|| Error::Conditioning("C1ᵀC1 is singular".into()))?;
        Ok(Self {
            problem,
            perm: reparam.perm.clone(),
            c,
            row: idx,
            eta: eta.cloned(),
            constant: bm.logdet_w + bv.logdet_w - 2.0 * logdet_s1,
            w1_inv: bm.w_inv,
            s1: bm.s,
            m22: bm.d22,
            w2_inv: bv.w_inv,
            s2: bv.s,
            v22: bv.d22,
            s1_inv,
        })
    }

    /// The current value of the row being optimized.
    pub fn current(&self) -> DVector<f64> {
        self.c.row(self.row).transpose()
    }

    /// Objective at row value `a` (the full objective at the implied `Γ`).
    pub fn objective(&self, a: &DVector<f64>) -> f64 {
        self.evaluate(a, false).0
    }

    /// Gradient of [`objective`](Self::objective) with respect to `a`.
    pub fn gradient(&self, a: &DVector<f64>) -> DVector<f64> {
        self.evaluate(a, true).1
    }

    pub fn objective_and_gradient(&self, a: &DVector<f64>) -> (f64, DVector<f64>) {
        self.evaluate(a, true)
    }

    fn evaluate(&self, a: &DVector<f64>, want_grad: bool) -> (f64, DVector<f64>) {
        let u = a.len();
        let r1 = a + &self.s1;
        let t1 = &self.w1_inv * &r1;
        let q1 = r1.dot(&t1);
        let r2 = a + &self.s2;
        let t2 = &self.w2_inv * &r2;
        let q2 = r2.dot(&t2);
        let t3 = &self.s1_inv * a;
        let q3 = a.dot(&t3);
        let mut value = self.constant + (self.m22 * q1).ln_1p() + (self.v22 * q2).ln_1p() - 2.0 * q3.ln_1p();
        let mut grad = if want_grad {
            t1 * (2.0 * self.m22 / (1.0 + self.m22 * q1)) + t2 * (2.0 * self.v22 / (1.0 + self.v22 * q2))
                - t3 * (4.0 / (1.0 + q3))
        } else {
            DVector::zeros(u)
        };
        if let (Some(term), Some(eta)) = (&self.problem.logistic, &self.eta) {
            let (f1, g1) = self.logistic_part(term, eta, a, want_grad);
            value += f1;
            grad += g1;
        }
        (value, grad)
    }

    fn logistic_part(
        &self,
        term: &LogisticTerm,
        eta: &DVector<f64>,
        a: &DVector<f64>,
        want_grad: bool,
    ) -> (f64, DVector<f64>) {
        let u = a.len();
        let mut c = self.c.clone();
        c.set_row(self.row, &a.transpose());
        let s = linalg::symmetrize(&c.tr_mul(&c));
        let eig = s.symmetric_eigen();
        let lam = &eig.eigenvalues;
        let q = &eig.eigenvectors;
        let isq = lam.map(|l| 1.0 / l.sqrt());
        let g1 = q * DMatrix::from_diagonal(&isq) * q.transpose();
        let h = &g1 * eta;
        let wp = &c * &h;
        let w = unpermute_vec(&wp, &self.perm);
        if !want_grad {
            return (term.value(&w), DVector::zeros(u));
        }
        let (f1, z) = term.value_and_score(&w);
        let zp = DVector::from_fn(z.len(), |i, _| z[self.perm[i]]);
        let t = c.tr_mul(&zp);
        let n = term.y.len() as f64;
        let a_hat = q.tr_mul(a);
        let qt_t = q.tr_mul(&t);
        let qt_eta = q.tr_mul(eta);
        let mut grad = DVector::zeros(u);
        for k in 0..u {
            let qk = q.row(k).transpose();
            // Qᵀ(−S⁻¹ dS S⁻¹)Q with dS = e_k aᵀ + a e_kᵀ, then solve the Sylvester
            // equation G1·D + D·G1 = that in the eigenbasis.
            let mut d = DMatrix::zeros(u, u);
            for i in 0..u {
                for j in 0..u {
                    let ds = qk[i] * a_hat[j] + a_hat[i] * qk[j];
                    let r = -ds / (lam[i] * lam[j]);
                    d[(i, j)] = r / (isq[i] + isq[j]);
                }
            }
            let dmu = zp[self.row] * h[k] + qt_t.dot(&(&d * &qt_eta));
            grad[k] = -2.0 / n * dmu;
        }
        (f1, grad)
    }
}

fn unpermute_vec(v: &DVector<f64>, perm: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for (i, &p) in perm.iter().enumerate() {
        out[p] = v[i];
    }
    out
}

/// Controls for [`descend`].
#[derive(Debug, Clone, Copy)]
pub struct DescentOptions {
    pub max_sweeps: usize,
    pub rel_tol: f64,
    pub row: BfgsOptions,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 200,
            rel_tol: 1e-8,
            row: BfgsOptions::default(),
        }
    }
}

/// Outcome of a coordinate-descent run.
#[derive(Debug, Clone)]
pub struct Descent {
    pub gamma: DMatrix<f64>,
    /// `η` re-expressed in the basis of the returned `gamma` (logistic term only).
    pub eta: Option<DVector<f64>>,
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub violations: usize,
}

/// Row-wise coordinate descent from `gamma0`.
///
/// The objective never increases between sweeps; each sweep re-selects the
/// identity rows so `C_AᵀC_A` stays well conditioned.
pub fn descend(
    problem: &EnvelopeProblem,
    gamma0: &DMatrix<f64>,
    eta0: Option<&DVector<f64>>,
    opts: DescentOptions,
) -> Result<Descent> {
    let (m, u) = gamma0.shape();
    let mut gamma = linalg::orthonormalize_columns(gamma0);
    let mut eta = eta0.map(|e| {
        // Γ₀η₀ must be preserved when Γ₀ is re-orthonormalized.
        let w = gamma0 * e;
        gamma.tr_mul(&w)
    });
    let mut f = problem.objective(&gamma, eta.as_ref());
    let mut violations = 0;
    if u == 0 || u == m {
        return Ok(Descent {
            gamma,
            eta,
            objective: f,
            sweeps: 0,
            converged: true,
            violations,
        });
    }
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let (mut rep, rotation) = Reparam::from_gamma(&gamma)?;
        let eta_rot = eta.as_ref().map(|e| rotation.tr_mul(e));
        let start = f;
        let mut current = problem.objective(&rep.gamma(), eta_rot.as_ref());
        if !check_descent(start, current) {
            violations += 1;
        }
        for r in 0..m - u {
            let ctx = RowContext::new(problem, &rep, r, eta_rot.as_ref())?;
            let res = optim::minimize(|a| ctx.objective_and_gradient(a), ctx.current(), opts.row);
            if res.value < current {
                if !check_descent(current, res.value) {
                    violations += 1;
                }
                current = res.value;
                rep.a.set_row(r, &res.x.transpose());
            }
        }
        let new_gamma = rep.gamma();
        let new_f = problem.objective(&new_gamma, eta_rot.as_ref());
        if !check_descent(start, new_f) {
            violations += 1;
        }
        if new_f <= start {
            gamma = new_gamma;
            eta = eta_rot;
            f = new_f;
        }
        if (start - new_f).abs() <= opts.rel_tol * new_f.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(Descent {
        gamma,
        eta,
        objective: f,
        sweeps,
        converged,
        violations,
    })
}

/// Greedily picks `u` eigenvectors of `sx` minimizing the penalty part of
/// `problem`, one at a time.
pub fn greedy_eigen_start(problem: &EnvelopeProblem, sx: &DMatrix<f64>, u: usize) -> DMatrix<f64> {
    let (_, vecs) = linalg::sym_eigen_desc(sx);
    let m = sx.nrows();
    let mut chosen: Vec<usize> = Vec::with_capacity(u);
    for _ in 0..u {
        let mut best = None;
        let mut best_f = f64::INFINITY;
        for j in (0..m).filter(|j| !chosen.contains(j)) {
            let mut cols = chosen.clone();
            cols.push(j);
            let g = vecs.select_columns(&cols);
            let f = problem.penalty(&g);
            if best.is_none() || f < best_f {
                best = Some(j);
                best_f = f;
            }
        }
        chosen.push(best.expect("u ≤ m"));
    }
    vecs.select_columns(&chosen)
}

/// Runs [`descend`] from each candidate start and keeps the lowest objective.
pub fn minimize_from_candidates(
    problem: &EnvelopeProblem,
    candidates: &[DMatrix<f64>],
    eta0: Option<&DVector<f64>>,
    opts: DescentOptions,
) -> Result<Descent> {
    let mut best: Option<Descent> = None;
    let mut first_err = None;
    for c in candidates {
        if c.ncols() == 0 || c.ncols() > c.nrows() {
            continue;
        }
        match descend(problem, c, eta0, opts) {
            Ok(d) => {
                if best.as_ref().is_none_or(|b| d.objective < b.objective) {
                    best = Some(d);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap_or_else(|| Error::InvalidArgument("no usable starting value".into())))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_spd(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(m, m) * 0.5
    }

    pub(crate) fn random_semiorthogonal(rng: &mut ChaCha8Rng, m: usize, u: usize) -> DMatrix<f64> {
        linalg::orthonormalize_columns(&DMatrix::from_fn(m, u, |_, _| rng.random_range(-1.0..1.0)))
    }

    fn random_problem(rng: &mut ChaCha8Rng, m: usize, logistic_term: bool) -> EnvelopeProblem {
        let logistic = logistic_term.then(|| {
            let n = 40;
            LogisticTerm {
                x: DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.5..1.5)),
                y: DVector::from_fn(n, |_, _| f64::from(rng.random_bool(0.5))),
                alpha: rng.random_range(-0.5..0.5),
            }
        });
        EnvelopeProblem {
            m: random_spd(rng, m),
            v: random_spd(rng, m),
            logistic,
        }
    }

    #[test]
    fn row_objective_equals_full_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let (m, u) = (5, 1 + trial % 3);
            let p = random_problem(&mut rng, m, trial % 2 == 0);
            let g = random_semiorthogonal(&mut rng, m, u);
            let eta = DVector::from_fn(u, |_, _| rng.random_range(-1.0..1.0));
            let (mut rep, rot) = Reparam::from_gamma(&g).unwrap();
            let eta_rot = rot.tr_mul(&eta);
            assert!((rep.gamma() * &eta_rot - &g * &eta).amax() < 1e-10);
            let f0 = p.objective(&g, Some(&eta));
            let ctx = RowContext::new(&p, &rep, 1, Some(&eta_rot)).unwrap();
            assert!((ctx.objective(&ctx.current()) - f0).abs() < 1e-8);
            let a = DVector::from_fn(u, |_, _| rng.random_range(-2.0..2.0));
            rep.a.set_row(1, &a.transpose());
            let direct = p.objective(&rep.gamma(), Some(&eta_rot));
            assert!((ctx.objective(&a) - direct).abs() < 1e-8, "trial {trial}");
        }
    }

    pub(crate) fn max_rel_gradient_error(ctx: &RowContext, a: &DVector<f64>) -> f64 {
        let g = ctx.gradient(a);
        let fd = |h: f64| {
            DVector::from_fn(a.len(), |k, _| {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[k] += h;
                am[k] -= h;
                (ctx.objective(&ap) - ctx.objective(&am)) / (2.0 * h)
            })
        };
        // Richardson extrapolation of two central differences.
        let (d1, d2) = (fd(1e-3), fd(5e-4));
        let num = (&d2 * 4.0 - d1) / 3.0;
        let scale = g.amax().max(1e-8);
        (0..a.len())
            .map(|k| (g[k] - num[k]).abs() / num[k].abs().max(1e-3 * scale))
            .fold(0.0, f64::max)
    }

    #[test]
    fn row_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..100 {
            let m = 4 + trial % 4;
            let u = 1 + trial % 3;
            let p = random_problem(&mut rng, m, trial % 2 == 1);
            let g = random_semiorthogonal(&mut rng, m, u);
            let eta = DVector::from_fn(u, |_, _| rng.random_range(-1.5..1.5));
            let (rep, rot) = Reparam::from_gamma(&g).unwrap();
            let eta_rot = rot.tr_mul(&eta);
            let ctx = RowContext::new(&p, &rep, trial % (m - u), Some(&eta_rot)).unwrap();
            let a = DVector::from_fn(u, |_, _| rng.random_range(-1.0..1.0));
            let err = max_rel_gradient_error(&ctx, &a);
            assert!(err < 1e-6, "trial {trial}: {err}");
        }
    }

    #[test]
    fn zero_eta_gives_zero_data_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = random_problem(&mut rng, 5, true);
        let penalty = EnvelopeProblem {
            logistic: None,
            ..p.clone()
        };
        let g = random_semiorthogonal(&mut rng, 5, 2);
        let (rep, _) = Reparam::from_gamma(&g).unwrap();
        let zero = DVector::zeros(2);
        let with = RowContext::new(&p, &rep, 0, Some(&zero)).unwrap();
        let without = RowContext::new(&penalty, &rep, 0, None).unwrap();
        let a = DVector::from_vec(vec![0.3, -0.7]);
        assert_eq!(with.gradient(&a), without.gradient(&a));
    }

    #[test]
    fn one_free_row_grid_search_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = random_problem(&mut rng, 2, false);
        let rep = Reparam {
            perm: vec![0, 1],
            a: DMatrix::zeros(1, 1),
        };
        let ctx = RowContext::new(&p, &rep, 0, None).unwrap();
        let grid: Vec<f64> = (0..=4000).map(|i| -20.0 + i as f64 * 0.01).collect();
        let (mut best_row, mut best_full) = ((f64::INFINITY, 0.0), (f64::INFINITY, 0.0));
        for &a in &grid {
            let fr = ctx.objective(&DVector::from_element(1, a));
            let g = linalg::orthonormalize_columns(&DMatrix::from_column_slice(2, 1, &[1.0, a]));
            let ff = p.penalty(&g);
            assert!((fr - ff).abs() < 1e-8);
            if fr < best_row.0 {
                best_row = (fr, a);
            }
            if ff < best_full.0 {
                best_full = (ff, a);
            }
        }
        assert_eq!(best_row.1, best_full.1);
    }

    #[test]
    fn descent_finds_best_axis_of_diagonal_problem() {
        let p = EnvelopeProblem {
            m: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0, 1.0])),
            v: DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 1.0 / 3.0, 0.5, 1.0])),
            logistic: None,
        };
        let axes: Vec<f64> = (0..4)
            .map(|j| {
                let mut g = DMatrix::zeros(4, 1);
                g[(j, 0)] = 1.0;
                p.penalty(&g)
            })
            .collect();
        let best = axes.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(best, 0);
        let start = linalg::orthonormalize_columns(&DMatrix::from_column_slice(4, 1, &[0.5, 0.6, 0.4, 0.3]));
        let d = descend(&p, &start, None, DescentOptions::default()).unwrap();
        let mut axis = DMatrix::zeros(4, 1);
        axis[(0, 0)] = 1.0;
        assert!(linalg::max_principal_angle(&d.gamma, &axis) < 1e-6);
        assert_eq!(d.violations, 0);
    }

    #[test]
    fn descent_never_increases_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..10 {
            let p = random_problem(&mut rng, 6, false);
            let g = random_semiorthogonal(&mut rng, 6, 2);
            let d = descend(&p, &g, None, DescentOptions::default()).unwrap();
            assert!(d.objective <= p.penalty(&g) + 1e-12);
            assert_eq!(d.violations, 0);
            assert!(linalg::semiorthogonality_error(&d.gamma) < 1e-10);
        }
    }
}
