//! The three generative designs: a functional response, a binary response,
//! and a four-dimensional vector response, all driven by Gaussian Fourier
//! coordinates of the predictors.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{self, equispaced_grid, BasisSet, QuadratureRule};
use crate::coords::{FunctionalDataset, FunctionalVariable, Response};
use crate::error::{invalid, Error, Result};
use crate::grassmann::logistic;
use crate::io::matrix_serde;
use crate::linalg;

use super::stream_rng;

/// Number of Fourier functions carrying the predictor process.
pub const FOURIER_SIZE: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    FunctionalResponse,
    Categorical,
    VectorResponse,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [
        ScenarioKind::FunctionalResponse,
        ScenarioKind::Categorical,
        ScenarioKind::VectorResponse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::FunctionalResponse => "functional_response",
            ScenarioKind::Categorical => "categorical",
            ScenarioKind::VectorResponse => "vector_response",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            invalid(format!(
                "unknown scenario `{s}` (functional_response, categorical, vector_response)"
            ))
        })
    }
}

/// A generative design.
///
/// Predictor `k` is `X_k(t) = Σ_j x_{jk} e_j(t)` over the first 13 Fourier
/// functions with independent `x_{jk} ~ N(0, variances[(j, k)])`. Stacking the
/// Fourier coordinates predictor by predictor (index `k·13 + j`) gives `z`,
/// and the response coordinates are `coeffs · z` plus noise: on the Fourier
/// functions for the functional response, in `ℝ⁴` for the vector response,
/// and as the log-odds of a Bernoulli label for the binary response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub predictors: usize,
    /// `13 × p` coordinate variances.
    #[serde(with = "matrix_serde")]
    pub variances: DMatrix<f64>,
    /// `d × 13p` response coefficients.
    #[serde(with = "matrix_serde")]
    pub coeffs: DMatrix<f64>,
    /// Standard deviation of each response noise coordinate.
    pub noise_scale: f64,
    /// Number of equally spaced observation points (endpoints included).
    pub obs_points: usize,
    pub knots_x: Vec<f64>,
    /// Knots of the response basis (functional response only).
    pub knots_y: Option<Vec<f64>>,
    pub seed: u64,
}

/// One draw from a scenario with its noiseless targets.
#[derive(Debug, Clone)]
pub struct ScenarioDraw {
    pub data: FunctionalDataset,
    /// Stacked Fourier coordinates `z` (`n × 13p`).
    pub coords: DMatrix<f64>,
    /// Conditional mean of the response given the predictors: curve values at
    /// the observation points, response vectors, or log-odds.
    pub mean: DMatrix<f64>,
    /// Response coordinates including noise (`n × d`); log-odds for labels.
    pub response_coords: DMatrix<f64>,
}

fn uniform_tail<R: Rng>(rng: &mut R, head: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut v = head.to_vec();
    while v.len() < FOURIER_SIZE {
        v.push(rng.random_range(lo..hi));
    }
    v
}

impl ScenarioSpec {
    /// Functional response: three predictors, 16 observation points, spline
    /// bases with knots `{0, 1/4, …, 1}` (predictors) and `{0, 1/5, …, 1}`
    /// (response), noise scale 0.2.
    pub fn functional_response(seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let head = [
            [8.0, 8.0, 8.0],
            [4.0, 2.0, 2.0],
            [1.6, 1.0, 0.5],
            [7.3, 7.3, 3.0],
            [5.5, 5.5, 5.5],
        ];
        let mut variances = DMatrix::zeros(FOURIER_SIZE, 3);
        for j in 0..FOURIER_SIZE {
            for k in 0..3 {
                variances[(j, k)] = if j < head.len() {
                    head[j][k]
                } else {
                    rng.random_range(0.2..0.3)
                };
            }
        }
        let mut coeffs = DMatrix::zeros(FOURIER_SIZE, 3 * FOURIER_SIZE);
        // (response function i, predictor Fourier j, predictor k, value), 1-based i, j.
        let entries = [
            (2, 2, 0, -1.2),
            (2, 3, 1, -0.04),
            (1, 3, 1, -0.05),
            (3, 3, 2, 0.03),
            (4, 3, 0, 2.4),
            (4, 3, 2, -0.01),
        ];
        for (i, j, k, v) in entries {
            coeffs[(i - 1, k * FOURIER_SIZE + j - 1)] = v;
        }
        Self {
            kind: ScenarioKind::FunctionalResponse,
            predictors: 3,
            variances,
            coeffs,
            noise_scale: 0.2,
            obs_points: 16,
            knots_x: equispaced_grid(5),
            knots_y: Some(equispaced_grid(6)),
            seed,
        }
    }

    /// Binary response: one predictor, 15 observation points, coordinate
    /// standard deviations `(8, 5, 0.9, 7.3, 2)` then `Unif(0.1, 0.2)`,
    /// log-odds `−0.8·x_2 + 4.4·x_4`.
    pub fn categorical(seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let sd = uniform_tail(&mut rng, &[8.0, 5.0, 0.9, 7.3, 2.0], 0.1, 0.2);
        let variances = DMatrix::from_iterator(FOURIER_SIZE, 1, sd.iter().map(|s| s * s));
        let mut coeffs = DMatrix::zeros(1, FOURIER_SIZE);
        coeffs[(0, 1)] = -0.8;
        coeffs[(0, 3)] = 4.4;
        Self {
            kind: ScenarioKind::Categorical,
            predictors: 1,
            variances,
            coeffs,
            noise_scale: 0.0,
            obs_points: 15,
            knots_x: equispaced_grid(5),
            knots_y: None,
            seed,
        }
    }

    /// Four-dimensional vector response: one predictor, 13 observation
    /// points, coordinate variances `(8, 2, 0.08, 12, 5.5)` then `Unif(2, 3)`,
    /// noise scale 2, spline knots `{0, 1/5, …, 1}`.
    pub fn vector_response(seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0);
        let var = uniform_tail(&mut rng, &[8.0, 2.0, 0.08, 12.0, 5.5], 2.0, 3.0);
        let variances = DMatrix::from_column_slice(FOURIER_SIZE, 1, &var);
        let mut coeffs = DMatrix::zeros(4, FOURIER_SIZE);
        let entries = [
            (1, 2, -1.2),
            (1, 3, -0.4),
            (2, 2, 0.4),
            (2, 3, 0.6),
            (3, 2, 0.3),
            (3, 3, -0.4),
            (4, 2, -1.2),
            (4, 3, 0.3),
        ];
        for (i, j, v) in entries {
            coeffs[(i - 1, j - 1)] = v;
        }
        Self {
            kind: ScenarioKind::VectorResponse,
            predictors: 1,
            variances,
            coeffs,
            noise_scale: 2.0,
            obs_points: 13,
            knots_x: equispaced_grid(6),
            knots_y: None,
            seed,
        }
    }

    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        match kind {
            ScenarioKind::FunctionalResponse => Self::functional_response(seed),
            ScenarioKind::Categorical => Self::categorical(seed),
            ScenarioKind::VectorResponse => Self::vector_response(seed),
        }
    }

    /// The same design with every regression coefficient set to zero.
    pub fn without_signal(mut self) -> Self {
        self.coeffs.fill(0.0);
        self
    }

    pub fn grid(&self) -> Vec<f64> {
        equispaced_grid(self.obs_points)
    }

    /// Dimension of the response coordinates (`13`, `1`, or `4`).
    pub fn response_dim(&self) -> usize {
        self.coeffs.nrows()
    }

    /// Orthonormalized spline bases used for estimation: one per predictor,
    /// plus the response basis for a functional response.
    pub fn bases(&self) -> Result<(Vec<BasisSet>, Option<BasisSet>)> {
        let quad = QuadratureRule::default();
        let bx = basis::orthonormalize(&basis::natural_spline_basis(&self.knots_x)?, &quad)?;
        let by = match &self.knots_y {
            Some(k) => Some(basis::orthonormalize(&basis::natural_spline_basis(k)?, &quad)?),
            None => None,
        };
        Ok((vec![bx; self.predictors], by))
    }

    /// Population covariance of the stacked Fourier coordinates `z`.
    pub fn coord_covariance(&self) -> DMatrix<f64> {
        let v: Vec<f64> = (0..self.predictors)
            .flat_map(|k| self.variances.column(k).iter().copied().collect::<Vec<_>>())
            .collect();
        DMatrix::from_diagonal(&DVector::from_vec(v))
    }

    /// Orthonormal basis (in Fourier coordinates `z`) of the predictor
    /// envelope: the smallest reducing subspace of the coordinate covariance
    /// that contains the row space of the coefficients.
    pub fn true_envelope(&self) -> DMatrix<f64> {
        let sigma = self.coord_covariance();
        let dim = sigma.nrows();
        let mut levels: Vec<f64> = sigma.diagonal().iter().copied().collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let bt = self.coeffs.transpose();
        let mut cols: Vec<DVector<f64>> = Vec::new();
        for lam in levels {
            let idx: Vec<usize> = (0..dim).filter(|&i| sigma[(i, i)] == lam).collect();
            let block = bt.select_rows(&idx);
            if block.amax() == 0.0 {
                continue;
            }
            let svd = block.clone().svd(true, false);
            let u = svd.u.expect("left singular vectors");
            let top = svd.singular_values.max();
            for (c, &s) in svd.singular_values.iter().enumerate() {
                if s > 1e-12 * top {
                    let mut full = DVector::zeros(dim);
                    for (r, &i) in idx.iter().enumerate() {
                        full[i] = u[(r, c)];
                    }
                    cols.push(full);
                }
            }
        }
        let mut g = DMatrix::zeros(dim, cols.len());
        for (j, c) in cols.iter().enumerate() {
            g.set_column(j, c);
        }
        g
    }

    /// Draws `n` subjects.
    pub fn generate<R: Rng>(&self, rng: &mut R, n: usize) -> Result<ScenarioDraw> {
        let grid = self.grid();
        let p = self.predictors;
        let d = self.response_dim();
        let sd = self.variances.map(f64::sqrt);
        let mut z = DMatrix::zeros(n, p * FOURIER_SIZE);
        for i in 0..n {
            for k in 0..p {
                for j in 0..FOURIER_SIZE {
                    z[(i, k * FOURIER_SIZE + j)] = sd[(j, k)] * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        let noise = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fourier = DMatrix::from_fn(grid.len(), FOURIER_SIZE, |r, j| basis::fourier_value(j, grid[r]));
        let predictors = (0..p)
            .map(|k| {
                let block = z.columns(k * FOURIER_SIZE, FOURIER_SIZE);
                FunctionalVariable::common(grid.clone(), block * fourier.transpose())
            })
            .collect::<Result<Vec<_>>>()?;
        let lin = &z * self.coeffs.transpose();
        let noisy = if self.kind == ScenarioKind::Categorical {
            lin.clone()
        } else {
            &lin + &noise * self.noise_scale
        };
        let (response, mean) = match self.kind {
            ScenarioKind::FunctionalResponse => (
                Response::Functional(FunctionalVariable::common(grid.clone(), &noisy * fourier.transpose())?),
                &lin * fourier.transpose(),
            ),
            ScenarioKind::VectorResponse => (Response::Vector { values: noisy.clone() }, lin.clone()),
            ScenarioKind::Categorical => {
                let labels = lin
                    .iter()
                    .map(|&m| u8::from(rng.random::<f64>() < logistic(m)))
                    .collect();
                (Response::Binary { labels }, lin.clone())
            }
        };
        Ok(ScenarioDraw {
            data: FunctionalDataset::new(predictors, response)?,
            coords: z,
            mean,
            response_coords: noisy,
        })
    }
}

fn generate(kind: ScenarioKind, n: usize, seed: u64) -> FunctionalDataset {
    ScenarioSpec::new(kind, seed)
        .generate(&mut stream_rng(seed, 1), n)
        .expect("built-in scenarios are valid")
        .data
}

/// `n` subjects from the functional-response design.
pub fn gen_functional_scenario(n: usize, seed: u64) -> FunctionalDataset {
    generate(ScenarioKind::FunctionalResponse, n, seed)
}

/// `n` subjects from the binary-response design.
pub fn gen_categorical_scenario(n: usize, seed: u64) -> FunctionalDataset {
    generate(ScenarioKind::Categorical, n, seed)
}

/// `n` subjects from the vector-response design.
pub fn gen_vector_scenario(n: usize, seed: u64) -> FunctionalDataset {
    generate(ScenarioKind::VectorResponse, n, seed)
}

/// Largest principal angle between the true envelope (mapped through the
/// projection of Fourier coordinates onto `bases`) and `gamma`.
pub fn envelope_angle_in_basis(spec: &ScenarioSpec, bases: &[BasisSet], gamma: &DMatrix<f64>) -> Result<f64> {
    // Spline coordinates of a Fourier function are its inner products with the basis.
    let quad = bases.first().ok_or_else(|| invalid("no bases"))?.quadrature().clone();
    let nodes = quad.nodes();
    let m_x: usize = bases.iter().map(BasisSet::size).sum();
    let mut map = DMatrix::zeros(m_x, spec.predictors * FOURIER_SIZE);
    let mut off = 0;
    for (k, b) in bases.iter().enumerate() {
        for j in 0..FOURIER_SIZE {
            let f: Vec<f64> = nodes.iter().map(|&t| basis::fourier_value(j, t)).collect();
            let ip = b.inner_products(&f);
            for (r, v) in ip.into_iter().enumerate() {
                map[(off + r, k * FOURIER_SIZE + j)] = v;
            }
        }
        off += b.size();
    }
    let env = linalg::orthonormalize_columns(&(map * spec.true_envelope()));
    Ok(linalg::max_principal_angle(&env, gamma))
}
