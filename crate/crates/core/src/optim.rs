//! A compact BFGS minimizer with a backtracking Armijo line search, used for
//! the low-dimensional row subproblems of the Grassmann coordinate descent.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            grad_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Minimizes `f` starting at `x0`. `f` returns the value and gradient; a
/// non-finite value marks an infeasible point and triggers backtracking.
///
/// The returned value never exceeds `f(x0)`.
pub fn minimize<F>(mut f: F, x0: DVector<f64>, opts: BfgsOptions) -> BfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let d = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut h = DMatrix::<f64>::identity(d, d);
    let mut iterations = 0;
    if !fx.is_finite() {
        return BfgsResult {
            grad_norm: f64::INFINITY,
            x,
            value: fx,
            iterations,
        };
    }
    while iterations < opts.max_iter {
        let gnorm = g.amax();
        if gnorm < opts.grad_tol {
            break;
        }
        iterations += 1;
        let mut p = -(&h * &g);
        let mut slope = g.dot(&p);
        if !(slope < 0.0) {
            // Lost positive definiteness; restart from steepest descent.
            h = DMatrix::identity(d, d);
            p = -g.clone();
            slope = g.dot(&p);
        }
        // Keep the first trial step bounded so the quadratic model is not
        // trusted far from the current point.
        let pnorm = p.norm();
        let mut step = if pnorm > 10.0 { 10.0 / pnorm } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &p * step;
            let (fnew, gnew) = f(&xn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            break;
        };
        let s = &xn - &x;
        let yv = &gnew - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(d, d);
            let left = &eye - (&s * yv.transpose()) * rho;
            let right = &eye - (&yv * s.transpose()) * rho;
            h = &left * &h * &right + (&s * s.transpose()) * rho;
        }
        let decrease = fx - fnew;
        x = xn;
        fx = fnew;
        g = gnew;
        if decrease.abs() <= 1e-15 * fx.abs().max(1.0) && g.amax() < 1e3 * opts.grad_tol {
            break;
        }
    }
    BfgsResult {
        grad_norm: g.amax(),
        x,
        value: fx,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            (v, g)
        };
        let res = minimize(
            rosen,
            DVector::from_vec(vec![-1.2, 1.0]),
            BfgsOptions {
                max_iter: 500,
                grad_tol: 1e-10,
            },
        );
        assert!((res.x[0] - 1.0).abs() < 1e-6, "{:?}", res);
        assert!((res.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn never_increases_value() {
        let f = |x: &DVector<f64>| (x[0].powi(4) - x[0], DVector::from_vec(vec![4.0 * x[0].powi(3) - 1.0]));
        let x0 = DVector::from_vec(vec![3.0]);
        let f0 = f(&x0).0;
        let res = minimize(f, x0, BfgsOptions::default());
        assert!(res.value <= f0);
        assert!((res.x[0] - 0.25f64.powf(1.0 / 3.0)).abs() < 1e-7);
    }
}
