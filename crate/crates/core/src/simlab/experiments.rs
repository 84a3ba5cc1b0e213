//! Interval coverage and growing-basis consistency experiments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{self, BasisSet};
use crate::coords::{self, CoordMethod};
use crate::envelope;
use crate::error::{invalid, Result};
use crate::pipeline::{self, Dimension, IntervalKind};

use super::harness::mean_and_se;
use super::scenarios::{ScenarioKind, ScenarioSpec, FOURIER_SIZE};
use super::stream_rng;

/// Settings for [`coverage_experiment`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub n: usize,
    pub replications: usize,
    pub level: f64,
    /// Evaluation points in `[0, 1]`.
    pub t0s: Vec<f64>,
    pub seed: u64,
    /// Envelope dimension; `None` uses the true dimension of the design.
    pub u: Option<usize>,
}

impl CoverageConfig {
    pub fn new(n: usize, replications: usize, level: f64, seed: u64) -> Self {
        Self {
            n,
            replications,
            level,
            t0s: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            seed,
            u: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub t0: f64,
    /// Fraction of confidence intervals containing the conditional mean.
    pub confidence: f64,
    pub confidence_se: f64,
    /// Fraction of prediction intervals containing the new response.
    pub prediction: f64,
    pub prediction_se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n: usize,
    pub replications: usize,
    pub level: f64,
    pub u: usize,
    pub points: Vec<CoveragePoint>,
}

/// Empirical coverage of pointwise confidence and prediction intervals on the
/// functional-response design.
///
/// Coordinates are taken on the 13 Fourier functions that carry the process,
/// so the fitted coordinate model is correctly specified and coverage measures
/// the interval construction alone. Each replication fits on `n` fresh
/// subjects and checks the intervals of one new subject at every `t0`.
pub fn coverage_experiment(scenario: ScenarioKind, cfg: &CoverageConfig) -> Result<CoverageReport> {
    if scenario != ScenarioKind::FunctionalResponse {
        return Err(invalid("coverage is evaluated on the functional_response scenario"));
    }
    if cfg.replications == 0 || cfg.t0s.is_empty() {
        return Err(invalid("need at least one replication and one evaluation point"));
    }
    if cfg.t0s.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(invalid("evaluation points must lie in [0, 1]"));
    }
    pipeline::normal_quantile(cfg.level)?;
    let spec = ScenarioSpec::new(scenario, cfg.seed);
    let fourier = basis::fourier_basis(FOURIER_SIZE)?;
    let bases_x: Vec<BasisSet> = vec![fourier.clone(); spec.predictors];
    let u = cfg.u.unwrap_or_else(|| spec.true_envelope().ncols());
    let c_at: Vec<DVector<f64>> = cfg
        .t0s
        .iter()
        .map(|&t| fourier.evaluate(&[t]).row(0).transpose())
        .collect();
    let hits: Vec<Vec<(f64, f64)>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<(f64, f64)>> {
            let mut rng = stream_rng(cfg.seed, r as u64 + 1);
            let train = spec.generate(&mut rng, cfg.n)?;
            let block = coords::project_dataset(&train.data, &bases_x, Some(&fourier), CoordMethod::Ols)?;
            let model = pipeline::fit_fepls_coords(&block, Dimension::Fixed(u), CoordMethod::Ols)?;
            let new = spec.generate(&mut rng, 1)?;
            let x = model.coordinates(new.data.predictors())?.row(0).transpose();
            let mean_coef = (&new.coords * spec.coeffs.transpose()).row(0).transpose();
            let y_coef = new.response_coords.row(0).transpose();
            c_at.iter()
                .map(|c| {
                    let (_, lo, hi) =
                        pipeline::interval_for_contrast(&model, &x, c, cfg.level, IntervalKind::Confidence)?;
                    let (_, plo, phi) =
                        pipeline::interval_for_contrast(&model, &x, c, cfg.level, IntervalKind::Prediction)?;
                    let mean = c.dot(&mean_coef);
                    let y = c.dot(&y_coef);
                    Ok((
                        f64::from(u8::from(lo <= mean && mean <= hi)),
                        f64::from(u8::from(plo <= y && y <= phi)),
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let points = cfg
        .t0s
        .iter()
        .enumerate()
        .map(|(i, &t0)| {
            let ci: Vec<f64> = hits.iter().map(|h| h[i].0).collect();
            let pi: Vec<f64> = hits.iter().map(|h| h[i].1).collect();
            let (confidence, confidence_se, _) = mean_and_se(&ci);
            let (prediction, prediction_se, _) = mean_and_se(&pi);
            CoveragePoint {
                t0,
                confidence,
                confidence_se,
                prediction,
                prediction_se,
            }
        })
        .collect();
    Ok(CoverageReport {
        n: cfg.n,
        replications: cfg.replications,
        level: cfg.level,
        u,
        points,
    })
}

/// Settings for [`convergence_experiment`].
///
/// The predictor has independent coordinates `ψ_j ~ N(0, 4/j)` on `total_dim`
/// orthonormal functions and the two-dimensional response loads on the odd
/// coordinates with weights `±j^{-decay}`. With `tail` the loadings never stop,
/// so no finite basis contains the envelope; without it only coordinates 1
/// and 3 load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub m_x_schedule: Vec<usize>,
    pub n_schedule: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub tail: bool,
    pub total_dim: usize,
    pub decay: f64,
    pub noise_sd: f64,
}

impl ConvergenceConfig {
    pub fn new(m_x_schedule: Vec<usize>, n_schedule: Vec<usize>, tail: bool, seed: u64) -> Self {
        Self {
            m_x_schedule,
            n_schedule,
            replications: 20,
            seed,
            tail,
            total_dim: 40,
            decay: 1.2,
            noise_sd: 0.5,
        }
    }

    /// `2 × total_dim` loadings.
    pub fn coefficients(&self) -> DMatrix<f64> {
        DMatrix::from_fn(2, self.total_dim, |i, j| {
            let idx = j + 1;
            let loads = idx % 2 == 1 && (self.tail || idx <= 3);
            if !loads {
                return 0.0;
            }
            let w = (idx as f64).powf(-self.decay);
            if i == 1 && (idx / 2) % 2 == 1 {
                -w
            } else {
                w
            }
        })
    }

    pub fn variances(&self) -> DVector<f64> {
        DVector::from_fn(self.total_dim, |j, _| 4.0 / (j + 1) as f64)
    }

    /// Operator norm of the loadings beyond the first `m_x` coordinates.
    pub fn truncation_bias(&self, m_x: usize) -> f64 {
        let b = self.coefficients();
        if m_x >= self.total_dim {
            return 0.0;
        }
        b.columns(m_x, self.total_dim - m_x)
            .into_owned()
            .svd(false, false)
            .singular_values
            .max()
    }

    /// Envelope dimension of the model truncated to the first `m_x` coordinates.
    pub fn true_dimension(&self, m_x: usize) -> usize {
        let b = self.coefficients();
        (0..m_x.min(self.total_dim))
            .filter(|&j| b.column(j).amax() > 0.0)
            .count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub m_x: usize,
    pub n: usize,
    pub u: usize,
    /// Mean over replications of the operator norm `‖B̂ − B‖` on all coordinates.
    pub error: f64,
    pub error_se: f64,
    pub truncation_bias: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub tail: bool,
    pub points: Vec<ConvergencePoint>,
}

/// Fits the envelope model on the first `m_x` coordinates for each aligned
/// `(m_x, n)` pair and reports the estimation error of the full coefficient
/// operator (estimated coefficients padded with zeros).
pub fn convergence_experiment(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if cfg.m_x_schedule.len() != cfg.n_schedule.len() || cfg.m_x_schedule.is_empty() {
        return Err(invalid("m_x and n schedules must be nonempty and of equal length"));
    }
    if cfg.m_x_schedule.iter().any(|&m| m == 0 || m > cfg.total_dim) {
        return Err(invalid(format!("m_x must lie in 1..={}", cfg.total_dim)));
    }
    if cfg.replications == 0 {
        return Err(invalid("need at least one replication"));
    }
    let b = cfg.coefficients();
    let sd = cfg.variances().map(f64::sqrt);
    let k = cfg.total_dim;
    let points = cfg
        .m_x_schedule
        .iter()
        .zip(&cfg.n_schedule)
        .enumerate()
        .map(|(step, (&m_x, &n))| -> Result<ConvergencePoint> {
            let u = cfg.true_dimension(m_x).max(1);
            let errors: Vec<f64> = (0..cfg.replications)
                .into_par_iter()
                .map(|r| -> Result<f64> {
                    let mut rng = stream_rng(cfg.seed, ((step as u64) << 32) | r as u64);
                    let x = DMatrix::from_fn(n, k, |_, j| sd[j] * rng.sample::<f64, _>(StandardNormal));
                    let noise = DMatrix::from_fn(n, 2, |_, _| cfg.noise_sd * rng.sample::<f64, _>(StandardNormal));
                    let y = &x * b.transpose() + noise;
                    let xm = x.columns(0, m_x).into_owned();
                    let fit = envelope::fit_mpelm(&xm, &y, u.min(m_x))?;
                    let mut diff = -b.clone();
                    let mut head = diff.columns_mut(0, m_x);
                    head += &fit.beta;
                    Ok(diff.svd(false, false).singular_values.max())
                })
                .collect::<Result<_>>()?;
            let (error, error_se, _) = mean_and_se(&errors);
            Ok(ConvergencePoint {
                m_x,
                n,
                u,
                error,
                error_se,
                truncation_bias: cfg.truncation_bias(m_x),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport { tail: cfg.tail, points })
}

/// Least-squares slope of `log(error)` against `log(n)`.
pub fn loglog_slope(points: &[ConvergencePoint]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.error.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(n: usize, error: f64) -> ConvergencePoint {
        ConvergencePoint {
            m_x: 1,
            n,
            u: 1,
            error,
            error_se: 0.0,
            truncation_bias: 0.0,
        }
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<_> = [100, 400, 1600, 6400]
            .iter()
            .map(|&n| point(n, 3.0 / (n as f64).sqrt()))
            .collect();
        assert!((loglog_slope(&pts) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn truncation_bias_shrinks() {
        let tail = ConvergenceConfig::new(vec![4], vec![100], true, 0);
        let bias: Vec<f64> = [2, 4, 8, 16, 32].iter().map(|&m| tail.truncation_bias(m)).collect();
        assert!(bias.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(tail.truncation_bias(40), 0.0);
        let finite = ConvergenceConfig::new(vec![4], vec![100], false, 0);
        assert_eq!(finite.truncation_bias(3), 0.0);
        assert!(finite.truncation_bias(2) > 0.0);
        assert_eq!(finite.true_dimension(10), 2);
        assert_eq!(tail.true_dimension(10), 5);
    }

    #[test]
    fn finite_rank_error_decreases() {
        let mut cfg = ConvergenceConfig::new(vec![6, 6, 6], vec![200, 800, 3200], false, 1);
        cfg.replications = 6;
        let r = convergence_experiment(&cfg).unwrap();
        assert!(r.points.windows(2).all(|w| w[1].error < w[0].error));
        let slope = loglog_slope(&r.points);
        assert!((-0.7..-0.3).contains(&slope), "{slope}");
    }

    #[test]
    fn infinite_rank_error_tracks_truncation() {
        let mut cfg = ConvergenceConfig::new(vec![4, 8, 12], vec![200, 800, 3200], true, 2);
        cfg.replications = 4;
        let r = convergence_experiment(&cfg).unwrap();
        assert!(r.points.windows(2).all(|w| w[1].error < w[0].error));
        for p in &r.points {
            assert!(p.error >= 0.9 * p.truncation_bias);
        }
    }

    #[test]
    fn coverage_is_reproducible_and_in_range() {
        let mut cfg = CoverageConfig::new(300, 12, 0.9, 4);
        cfg.t0s = vec![0.25, 0.75];
        cfg.u = Some(4);
        let a = coverage_experiment(ScenarioKind::FunctionalResponse, &cfg).unwrap();
        let b = coverage_experiment(ScenarioKind::FunctionalResponse, &cfg).unwrap();
        assert_eq!(a.points.len(), 2);
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!(p.confidence, q.confidence);
            assert!((0.0..=1.0).contains(&p.confidence));
            assert!((0.0..=1.0).contains(&p.prediction));
        }
    }

    #[test]
    fn coverage_rejects_bad_input() {
        let cfg = CoverageConfig::new(100, 5, 0.95, 0);
        assert!(coverage_experiment(ScenarioKind::Categorical, &cfg).is_err());
        let mut bad = cfg.clone();
        bad.level = 1.0;
        assert!(coverage_experiment(ScenarioKind::FunctionalResponse, &bad).is_err());
        let mut bad = cfg;
        bad.t0s = vec![1.5];
        assert!(coverage_experiment(ScenarioKind::FunctionalResponse, &bad).is_err());
        assert!(convergence_experiment(&ConvergenceConfig::new(vec![4], vec![], true, 0)).is_err());
        assert!(convergence_experiment(&ConvergenceConfig::new(vec![41], vec![100], true, 0)).is_err());
    }
}
