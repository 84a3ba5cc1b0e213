//! Small envelope designs with known parameters, used to check estimators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::grassmann::logistic;
use crate::linalg;

/// Gaussian predictor-envelope model `Y = βX + ε`, `Σ_X = ΓΔΓᵀ + Γ0Δ0Γ0ᵀ`,
/// `βᵀ = Γη`.
#[derive(Debug, Clone)]
pub struct EnvelopeDesign {
    pub gamma: DMatrix<f64>,
    pub gamma0: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub delta0: DMatrix<f64>,
    /// `u × m_y`.
    pub eta: DMatrix<f64>,
    pub sigma_eps: DMatrix<f64>,
}

fn random_orthogonal<R: Rng>(rng: &mut R, m: usize) -> DMatrix<f64> {
    let z = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    linalg::orthonormalize_columns(&z)
}

fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(values))
}

impl EnvelopeDesign {
    /// Random rotation of a design with material variances `delta`,
    /// immaterial variances `delta0`, and the given `η` and `Σ_ε`.
    pub fn rotated<R: Rng>(
        rng: &mut R,
        delta: &[f64],
        delta0: &[f64],
        eta: DMatrix<f64>,
        sigma_eps: DMatrix<f64>,
    ) -> Self {
        let u = delta.len();
        let m = u + delta0.len();
        let q = random_orthogonal(rng, m);
        Self {
            gamma: q.columns(0, u).into_owned(),
            gamma0: q.columns(u, m - u).into_owned(),
            delta: diag(delta),
            delta0: diag(delta0),
            eta,
            sigma_eps,
        }
    }

    /// `m_x = 6`, `u = 2`, `m_y = 2` design with a strongly varying immaterial part.
    pub fn six_by_two<R: Rng>(rng: &mut R) -> Self {
        let eta = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        Self::rotated(rng, &[1.0, 0.5], &[10.0, 5.0, 2.0, 0.2], eta, diag(&[1.0, 0.5]))
    }

    /// `m_x = 3`, `u = 1`, `m_y = 1`.
    pub fn three_by_one<R: Rng>(rng: &mut R) -> Self {
        Self::rotated(rng, &[1.0], &[4.0, 0.5], DMatrix::from_element(1, 1, 1.0), diag(&[1.0]))
    }

    pub fn m_x(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn m_y(&self) -> usize {
        self.eta.ncols()
    }

    pub fn sigma_x(&self) -> DMatrix<f64> {
        linalg::symmetrize(
            &(&self.gamma * &self.delta * self.gamma.transpose()
                + &self.gamma0 * &self.delta0 * self.gamma0.transpose()),
        )
    }

    /// `m_y × m_x`.
    pub fn beta(&self) -> DMatrix<f64> {
        (&self.gamma * &self.eta).transpose()
    }

    /// Population covariance between `X` and `Y`.
    pub fn sigma_xy(&self) -> DMatrix<f64> {
        self.sigma_x() * self.beta().transpose()
    }

    /// Draws `n` rows `(X, Y)`.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let lx = self.sigma_x().cholesky().expect("Σ_X is SPD").l();
        let le = self.sigma_eps.clone().cholesky().expect("Σ_ε is SPD").l();
        let zx = DMatrix::from_fn(n, self.m_x(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let ze = DMatrix::from_fn(n, self.m_y(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = zx * lx.transpose();
        let y = &x * self.beta().transpose() + ze * le.transpose();
        (x, y)
    }
}

/// Logistic predictor-envelope model: `X ~ N(0, ΓΔΓᵀ + Γ0Δ0Γ0ᵀ)`,
/// `P(Y = 1 | X) = logistic(α + ηᵀΓᵀX)`.
#[derive(Debug, Clone)]
pub struct LogisticDesign {
    pub gamma: DMatrix<f64>,
    pub gamma0: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub delta0: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub alpha: f64,
}

impl LogisticDesign {
    /// `m_x = 4`, `u = 1`.
    pub fn four_by_one<R: Rng>(rng: &mut R) -> Self {
        let q = random_orthogonal(rng, 4);
        Self {
            gamma: q.columns(0, 1).into_owned(),
            gamma0: q.columns(1, 3).into_owned(),
            delta: diag(&[1.0]),
            delta0: diag(&[4.0, 2.0, 0.5]),
            eta: DVector::from_element(1, 1.0),
            alpha: 0.2,
        }
    }

    pub fn m_x(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn sigma_x(&self) -> DMatrix<f64> {
        linalg::symmetrize(
            &(&self.gamma * &self.delta * self.gamma.transpose()
                + &self.gamma0 * &self.delta0 * self.gamma0.transpose()),
        )
    }

    pub fn beta(&self) -> DVector<f64> {
        &self.gamma * &self.eta
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> (DMatrix<f64>, Vec<u8>) {
        let lx = self.sigma_x().cholesky().expect("Σ_X is SPD").l();
        let x = DMatrix::from_fn(n, self.m_x(), |_, _| rng.sample::<f64, _>(StandardNormal)) * lx.transpose();
        let lin = &x * self.beta();
        let y = lin
            .iter()
            .map(|&z| u8::from(rng.random::<f64>() < logistic(self.alpha + z)))
            .collect();
        (x, y)
    }
}
