//! Replication harness: fit every method on fresh training draws and score it
//! on a held-out draw, then summarize by Monte Carlo mean and standard error.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, LinearFit};
use crate::basis::BasisSet;
use crate::coords::{self, CoordMethod, CoordinateBlock, Response};
use crate::error::{invalid, Error, Result};
use crate::genv;
use crate::io::{fmt_f64, matrix_serde};
use crate::pipeline::{self, Dimension};

use super::scenarios::{ScenarioDraw, ScenarioKind, ScenarioSpec};
use super::stream_rng;

/// Estimators compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Envelope fit on coordinates, dimension by BIC.
    Fepls,
    /// Logistic envelope fit on coordinates, dimension by BIC.
    Gfepls,
    /// Logistic regression on all coordinates.
    Glm,
    Ols,
    /// Principal components regression, component count by 5-fold CV.
    Pcr,
    /// SIMPLS, component count by 5-fold CV.
    Pls,
    /// The true conditional mean (Bayes rule for labels).
    Oracle,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Fepls,
        Method::Gfepls,
        Method::Glm,
        Method::Ols,
        Method::Pcr,
        Method::Pls,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fepls => "fepls",
            Method::Gfepls => "gfepls",
            Method::Glm => "glm",
            Method::Ols => "ols",
            Method::Pcr => "pcr",
            Method::Pls => "pls",
            Method::Oracle => "oracle",
        }
    }

    fn supports(self, kind: ScenarioKind) -> bool {
        let binary = kind == ScenarioKind::Categorical;
        match self {
            Method::Gfepls | Method::Glm => binary,
            Method::Oracle => true,
            _ => !binary,
        }
    }

    /// Methods reported by default for each scenario.
    pub fn defaults(kind: ScenarioKind) -> Vec<Method> {
        match kind {
            ScenarioKind::FunctionalResponse => vec![Method::Fepls, Method::Pcr, Method::Pls],
            ScenarioKind::Categorical => vec![Method::Gfepls, Method::Glm],
            ScenarioKind::VectorResponse => vec![Method::Fepls, Method::Ols, Method::Pcr, Method::Pls],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method `{s}`")))
    }
}

/// What to run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableConfig {
    pub scenario: ScenarioKind,
    pub methods: Vec<Method>,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub test_size: usize,
    pub seed: u64,
    /// Folds for PCR/PLS component selection.
    pub folds: usize,
}

impl TableConfig {
    pub fn new(scenario: ScenarioKind, sample_sizes: Vec<usize>, replications: usize, seed: u64) -> Self {
        Self {
            scenario,
            methods: Method::defaults(scenario),
            sample_sizes,
            replications,
            test_size: 5000,
            seed,
            folds: 5,
        }
    }
}

/// Summary of one `(method, n)` cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub n: usize,
    pub mean: f64,
    /// Standard error of the mean over successful replications.
    pub mc_se: f64,
    /// Successful replications.
    pub reps: usize,
    pub failures: usize,
    /// Per-replication metric values (`NaN` marks a failure).
    pub values: Vec<f64>,
}

impl Cell {
    pub fn complete(&self) -> bool {
        self.failures == 0
    }
}

/// Result of [`run_table`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub scenario: ScenarioKind,
    pub replications: usize,
    pub test_size: usize,
    pub seed: u64,
    /// Metric name: `mspe` or `misclassification`.
    pub metric: String,
    /// Coordinate variances in force, including the uniform draws.
    #[serde(with = "matrix_serde")]
    pub variances: DMatrix<f64>,
    pub cells: Vec<Cell>,
}

impl ReplicationReport {
    pub fn cell(&self, method: Method, n: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.method == method && c.n == n)
    }

    /// CSV with columns `scenario, method, n, mean, mc_se, reps`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "scenario,method,n,mean,mc_se,reps")?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.scenario,
                c.method,
                c.n,
                fmt_f64(c.mean),
                fmt_f64(c.mc_se),
                c.reps
            )?;
        }
        Ok(())
    }
}

/// Mean and standard error of the finite values.
pub fn mean_and_se(values: &[f64]) -> (f64, f64, usize) {
    let ok: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let k = ok.len();
    if k == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = ok.iter().sum::<f64>() / k as f64;
    let se = if k > 1 {
        (ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64 / k as f64).sqrt()
    } else {
        0.0
    };
    (mean, se, k)
}

/// Everything an estimator sees in one replication.
struct Split<'a> {
    spec: &'a ScenarioSpec,
    basis_y: Option<&'a BasisSet>,
    train: &'a CoordinateBlock,
    test_x: &'a DMatrix<f64>,
    test: &'a ScenarioDraw,
    grid: &'a [f64],
    cv_seed: u64,
    folds: usize,
}

fn observed_response(draw: &ScenarioDraw) -> DMatrix<f64> {
    match draw.data.response() {
        Response::Functional(v) => match v {
            coords::FunctionalVariable::Common { values, .. } => values.clone(),
            coords::FunctionalVariable::PerSubject { .. } => unreachable!("scenarios use a common grid"),
        },
        Response::Vector { values } => values.clone(),
        Response::Binary { labels } => DMatrix::from_iterator(labels.len(), 1, labels.iter().map(|&l| l as f64)),
    }
}

impl Split<'_> {
    /// Response coordinates predicted for the test subjects, mapped to the
    /// scale on which the metric is taken (curve values at the grid or vectors).
    fn to_observed_scale(&self, coords: DMatrix<f64>) -> DMatrix<f64> {
        match self.basis_y {
            Some(b) => coords * b.evaluate(self.grid).transpose(),
            None => coords,
        }
    }

    fn score_linear(&self, fit: &LinearFit) -> Result<f64> {
        let pred = self.to_observed_scale(fit.predict(self.test_x));
        baselines::mspe(&pred, &observed_response(self.test))
    }

    fn score_labels(&self, prob: impl Iterator<Item = f64>) -> Result<f64> {
        let pred: Vec<u8> = prob.map(|p| u8::from(p > 0.5)).collect();
        let Response::Binary { labels } = self.test.data.response() else {
            return Err(invalid("labels expected"));
        };
        baselines::misclassification(&pred, labels)
    }

    fn evaluate(&self, method: Method) -> Result<f64> {
        let m_x = self.train.m_x();
        let max_k = m_x
            .min(self.train.xtil.nrows() * (self.folds - 1) / self.folds - 1)
            .max(1);
        match method {
            Method::Fepls => {
                let model = pipeline::fit_fepls_coords(self.train, Dimension::auto(), CoordMethod::Ols)?;
                let pred = self.to_observed_scale(pipeline::predict_coords(&model, self.test_x)?);
                baselines::mspe(&pred, &observed_response(self.test))
            }
            Method::Gfepls => {
                let model = pipeline::fit_gfepls_coords(self.train, Dimension::auto(), CoordMethod::Ols)?;
                let fit = model.logistic()?;
                self.score_labels(fit.predict_prob(self.test_x).iter().copied())
            }
            Method::Glm => {
                let labels: Vec<u8> = self.train.ytil.iter().map(|&v| v as u8).collect();
                let fit = genv::fit_gmelm(&self.train.xtil, &labels, m_x)?;
                self.score_labels(fit.predict_prob(self.test_x).iter().copied())
            }
            Method::Ols => self.score_linear(&baselines::fit_ols(&self.train.xtil, &self.train.ytil)?),
            Method::Pcr | Method::Pls => {
                let pls = method == Method::Pls;
                let (k, _) = baselines::cv_select_components(
                    &self.train.xtil,
                    &self.train.ytil,
                    pls,
                    max_k,
                    self.folds,
                    self.cv_seed,
                )?;
                let fit = if pls {
                    baselines::fit_simpls(&self.train.xtil, &self.train.ytil, k)?
                } else {
                    baselines::fit_pcr(&self.train.xtil, &self.train.ytil, k)?
                };
                self.score_linear(&fit)
            }
            Method::Oracle => match self.spec.kind {
                ScenarioKind::Categorical => {
                    self.score_labels(self.test.mean.iter().map(|&m| if m > 0.0 { 1.0 } else { 0.0 }))
                }
                _ => baselines::mspe(&self.test.mean, &observed_response(self.test)),
            },
        }
    }
}

/// Runs `replications` independent replications. Replication `r` draws its
/// test set and then one training set per sample size from the stream
/// `(seed, r + 1)`, so results do not depend on thread scheduling.
pub fn run_table(cfg: &TableConfig) -> Result<ReplicationReport> {
    if cfg.replications == 0 || cfg.sample_sizes.is_empty() || cfg.methods.is_empty() {
        return Err(invalid("need at least one replication, sample size, and method"));
    }
    if cfg.folds < 2 {
        return Err(invalid("cross-validation needs at least 2 folds"));
    }
    for m in &cfg.methods {
        if !m.supports(cfg.scenario) {
            return Err(invalid(format!(
                "method {m} does not apply to scenario {}",
                cfg.scenario
            )));
        }
    }
    if let Some(&n) = cfg.sample_sizes.iter().find(|&&n| n < 2 * cfg.folds) {
        return Err(invalid(format!(
            "sample size {n} is too small for {}-fold CV",
            cfg.folds
        )));
    }
    let spec = ScenarioSpec::new(cfg.scenario, cfg.seed);
    let (bases_x, basis_y) = spec.bases()?;
    let grid = spec.grid();
    let per_rep: Vec<Vec<f64>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut rng = stream_rng(cfg.seed, r as u64 + 1);
            let test = spec.generate(&mut rng, cfg.test_size)?;
            let test_x = coords::project_predictors(test.data.predictors(), &bases_x, CoordMethod::Ols)?;
            let mut out = Vec::with_capacity(cfg.sample_sizes.len() * cfg.methods.len());
            for (si, &n) in cfg.sample_sizes.iter().enumerate() {
                let train_draw = spec.generate(&mut rng, n)?;
                let train = coords::project_dataset(&train_draw.data, &bases_x, basis_y.as_ref(), CoordMethod::Ols)?;
                let split = Split {
                    spec: &spec,
                    basis_y: basis_y.as_ref(),
                    train: &train,
                    test_x: &test_x,
                    test: &test,
                    grid: &grid,
                    cv_seed: cfg.seed ^ ((r as u64) << 20) ^ si as u64,
                    folds: cfg.folds,
                };
                for &m in &cfg.methods {
                    out.push(split.evaluate(m).unwrap_or(f64::NAN));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (si, &n) in cfg.sample_sizes.iter().enumerate() {
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let values: Vec<f64> = per_rep.iter().map(|v| v[si * cfg.methods.len() + mi]).collect();
            let (mean, mc_se, reps) = mean_and_se(&values);
            cells.push(Cell {
                method,
                n,
                mean,
                mc_se,
                reps,
                failures: cfg.replications - reps,
                values,
            });
        }
    }
    Ok(ReplicationReport {
        scenario: cfg.scenario,
        replications: cfg.replications,
        test_size: cfg.test_size,
        seed: cfg.seed,
        metric: if cfg.scenario == ScenarioKind::Categorical {
            "misclassification".into()
        } else {
            "mspe".into()
        },
        variances: spec.variances.clone(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::logistic;

    fn small(scenario: ScenarioKind, methods: Vec<Method>) -> TableConfig {
        let mut cfg = TableConfig::new(scenario, vec![60], 4, 3);
        cfg.methods = methods;
        cfg.test_size = 2000;
        cfg
    }

    #[test]
    fn vector_table_runs_and_reproduces() {
        let cfg = small(
            ScenarioKind::VectorResponse,
            vec![Method::Fepls, Method::Ols, Method::Pls, Method::Oracle],
        );
        let a = run_table(&cfg).unwrap();
        let b = run_table(&cfg).unwrap();
        assert_eq!(a.cells.len(), 4);
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert!(x.complete(), "{:?}", x.method);
            assert_eq!(
                x.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        let oracle = a.cell(Method::Oracle, 60).unwrap().mean;
        assert!(a.cell(Method::Ols, 60).unwrap().mean > oracle);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("scenario,method,n,mean,mc_se,reps\nvector_response,fepls,60,"));
        assert_eq!(text.lines().count(), 5);
    }

    // Every curve value carries noise with variance 0.04 times the sum of the
    // 13 squared Fourier functions, which is 13 at every point.
    #[test]
    fn oracle_error_is_the_noise_level() {
        let cfg = small(ScenarioKind::FunctionalResponse, vec![Method::Oracle]);
        let r = run_table(&cfg).unwrap();
        let c = r.cell(Method::Oracle, 60).unwrap();
        assert!((c.mean - 0.52).abs() < 0.02, "{}", c.mean);
        let v = run_table(&small(ScenarioKind::VectorResponse, vec![Method::Oracle])).unwrap();
        assert!((v.cells[0].mean - 4.0).abs() < 0.15, "{}", v.cells[0].mean);
    }

    // Log-odds are N(0, s²) with s² = 0.64·25 + 19.36·53.29; the Bayes rule
    // errs with probability E[logistic(−|L|)].
    #[test]
    fn oracle_labels_attain_bayes_rate() {
        let s = (0.64f64 * 25.0 + 19.36 * 53.29).sqrt();
        let steps = 200_000;
        let h = 12.0 / steps as f64;
        let bayes: f64 = (0..steps)
            .map(|i| {
                let z = (i as f64 + 0.5) * h;
                let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                2.0 * phi * logistic(-s * z) * h
            })
            .sum();
        let mut cfg = small(ScenarioKind::Categorical, vec![Method::Oracle]);
        cfg.replications = 8;
        cfg.test_size = 5000;
        let r = run_table(&cfg).unwrap();
        let c = &r.cells[0];
        assert!(
            (c.mean - bayes).abs() < 4.0 * c.mc_se.max(0.001),
            "{} vs {bayes}",
            c.mean
        );
    }

    #[test]
    fn categorical_methods_run() {
        let cfg = small(ScenarioKind::Categorical, vec![Method::Gfepls, Method::Glm]);
        let r = run_table(&cfg).unwrap();
        for c in &r.cells {
            assert!(c.complete());
            assert!((0.0..0.5).contains(&c.mean), "{:?} {}", c.method, c.mean);
        }
        assert_eq!(r.metric, "misclassification");
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(run_table(&small(ScenarioKind::Categorical, vec![Method::Ols])).is_err());
        assert!(run_table(&small(ScenarioKind::VectorResponse, vec![Method::Glm])).is_err());
        let mut cfg = small(ScenarioKind::VectorResponse, vec![Method::Ols]);
        cfg.sample_sizes = vec![6];
        assert!(run_table(&cfg).is_err());
        cfg.sample_sizes = vec![];
        assert!(run_table(&cfg).is_err());
    }

    #[test]
    fn methods_parse_and_print() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!(Method::defaults(ScenarioKind::FunctionalResponse)
            .iter()
            .all(|m| m.supports(ScenarioKind::FunctionalResponse)));
    }

    #[test]
    fn mean_and_se_skips_failures() {
        let (m, se, k) = mean_and_se(&[1.0, f64::NAN, 3.0]);
        assert_eq!((m, k), (2.0, 2));
        assert!((se - 1.0).abs() < 1e-12);
        assert!(mean_and_se(&[f64::NAN]).0.is_nan());
    }
}
