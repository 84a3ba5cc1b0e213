//! Two-step functional estimators: project onto bases, then fit an envelope
//! model to the coordinates. Prediction, pointwise intervals, and
//! classification operate on new functional observations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::BasisSet;
use crate::coords::{self, CoordMethod, CoordinateBlock, FunctionalDataset, FunctionalVariable};
use crate::envelope::{self, BicRow, MpelmFit};
use crate::error::{invalid, Error, Result};
use crate::genv::{self, GmelmFit};
use crate::io::{matrix_serde, vector_serde};
use crate::linalg;

/// Envelope dimension: fixed, or chosen by BIC up to `u_max`
/// (default `min(m_x, n − 2, 20)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dimension {
    Fixed(usize),
    Auto { u_max: Option<usize> },
}

impl Dimension {
    pub fn auto() -> Self {
        Dimension::Auto { u_max: None }
    }
}

pub fn default_u_max(m_x: usize, n: usize) -> usize {
    m_x.min(n.saturating_sub(2)).min(20)
}

/// The envelope fit inside a [`FeplsModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum EnvelopeFit {
    Linear(MpelmFit),
    Logistic(GmelmFit),
}

/// A fitted two-step model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeplsModel {
    pub bases_x: Vec<BasisSet>,
    pub basis_y: Option<BasisSet>,
    pub coord_method: CoordMethod,
    pub fit: EnvelopeFit,
    /// Mean of the response coordinates (linear models).
    #[serde(with = "vector_serde")]
    pub y_mean: DVector<f64>,
    /// Sample covariance of the response coordinates.
    #[serde(with = "matrix_serde")]
    pub sigma_ytil: DMatrix<f64>,
    /// Residual covariance `S_Ỹ − β̂S_X̃β̂ᵀ` projected onto the PSD cone.
    #[serde(with = "matrix_serde")]
    pub sigma_epstil: DMatrix<f64>,
    /// Per-dimension BIC table when the dimension was selected automatically.
    pub bic_table: Option<Vec<BicRow>>,
    /// Numerical adjustments made while fitting.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FeplsModel {
    pub fn n(&self) -> usize {
        match &self.fit {
            EnvelopeFit::Linear(f) => f.n,
            EnvelopeFit::Logistic(f) => f.n,
        }
    }

    pub fn u(&self) -> usize {
        match &self.fit {
            EnvelopeFit::Linear(f) => f.u,
            EnvelopeFit::Logistic(f) => f.u,
        }
    }

    pub fn linear(&self) -> Result<&MpelmFit> {
        match &self.fit {
            EnvelopeFit::Linear(f) => Ok(f),
            EnvelopeFit::Logistic(_) => Err(invalid("operation needs a linear (FEPLS) model")),
        }
    }

    pub fn logistic(&self) -> Result<&GmelmFit> {
        match &self.fit {
            EnvelopeFit::Logistic(f) => Ok(f),
            EnvelopeFit::Linear(_) => Err(invalid("operation needs a logistic (GFEPLS) model")),
        }
    }

    /// Predictor coordinates of new observations.
    pub fn coordinates(&self, predictors: &[FunctionalVariable]) -> Result<DMatrix<f64>> {
        coords::project_predictors(predictors, &self.bases_x, self.coord_method)
    }
}

/// Fits FEPLS (functional or vector response).
pub fn fit_fepls(
    data: &FunctionalDataset,
    bases_x: &[BasisSet],
    basis_y: Option<&BasisSet>,
    dim: Dimension,
    method: CoordMethod,
) -> Result<FeplsModel> {
    if data.response().is_binary() {
        return Err(invalid("binary responses are fitted with fit_gfepls"));
    }
    let block = coords::project_dataset(data, bases_x, basis_y, method)?;
    fit_fepls_coords(&block, dim, method)
}

/// Fits FEPLS from already projected coordinates.
pub fn fit_fepls_coords(block: &CoordinateBlock, dim: Dimension, method: CoordMethod) -> Result<FeplsModel> {
    let moments = envelope::sample_moments(&block.xtil, &block.ytil)?;
    let (fit, table) = match dim {
        Dimension::Fixed(u) => (envelope::fit_mpelm_moments(&moments, u, None)?, None),
        Dimension::Auto { u_max } => {
            let u_max = u_max.unwrap_or_else(|| default_u_max(moments.m_x(), moments.n));
            let sel = envelope::select_dim_bic_moments(&moments, u_max)?;
            (sel.best, Some(sel.table))
        }
    };
    let (sigma_epstil, worst) = linalg::clip_psd(&fit.sigma_eps);
    let mut warnings = Vec::new();
    if worst < -1e-10 * fit.sigma_eps.amax().max(f64::MIN_POSITIVE) {
        warnings.push(format!(
            "residual covariance had eigenvalue {worst:.3e}; clipped to zero"
        ));
    }
    Ok(FeplsModel {
        bases_x: block.bases_x.clone(),
        basis_y: block.basis_y.clone(),
        coord_method: method,
        y_mean: moments.y_mean.clone(),
        sigma_ytil: moments.s_y.clone(),
        sigma_epstil,
        fit: EnvelopeFit::Linear(fit),
        bic_table: table,
        warnings,
    })
}

/// Fits GFEPLS (binary response).
pub fn fit_gfepls(
    data: &FunctionalDataset,
    bases_x: &[BasisSet],
    dim: Dimension,
    method: CoordMethod,
) -> Result<FeplsModel> {
    if !data.response().is_binary() {
        return Err(invalid("fit_gfepls needs a binary response"));
    }
    let block = coords::project_dataset(data, bases_x, None, method)?;
    fit_gfepls_coords(&block, dim, method)
}

pub fn fit_gfepls_coords(block: &CoordinateBlock, dim: Dimension, method: CoordMethod) -> Result<FeplsModel> {
    let labels: Vec<u8> = block.ytil.iter().map(|&v| v as u8).collect();
    let (fit, table) = match dim {
        Dimension::Fixed(u) => (genv::fit_gmelm(&block.xtil, &labels, u)?, None),
        Dimension::Auto { u_max } => {
            let u_max = u_max.unwrap_or_else(|| default_u_max(block.m_x(), block.xtil.nrows()));
            let sel = genv::select_dim_bic(&block.xtil, &labels, u_max)?;
            (sel.best, Some(sel.table))
        }
    };
    let p = labels.iter().map(|&l| l as f64).sum::<f64>() / labels.len().max(1) as f64;
    Ok(FeplsModel {
        bases_x: block.bases_x.clone(),
        basis_y: None,
        coord_method: method,
        y_mean: DVector::from_element(1, p),
        sigma_ytil: DMatrix::from_element(1, 1, p * (1.0 - p)),
        sigma_epstil: DMatrix::zeros(0, 0),
        fit: EnvelopeFit::Logistic(fit),
        bic_table: table,
        warnings: Vec::new(),
    })
}

/// Predicted response coordinates `Ȳ + β̂(x̃ − X̄)` (rows are subjects).
pub fn predict_coords(model: &FeplsModel, xtil: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let fit = model.linear()?;
    check_width(xtil, fit.m_x())?;
    Ok(fit.predict(xtil))
}

fn check_width(xtil: &DMatrix<f64>, m_x: usize) -> Result<()> {
    if xtil.ncols() != m_x {
        return Err(Error::DimensionMismatch(format!(
            "{} predictor coordinates, model expects {m_x}",
            xtil.ncols()
        )));
    }
    Ok(())
}

/// Predicted response curves on `grid` for each new subject.
pub fn predict_function(model: &FeplsModel, predictors: &[FunctionalVariable], grid: &[f64]) -> Result<DMatrix<f64>> {
    let basis = model
        .basis_y
        .as_ref()
        .ok_or_else(|| invalid("model has no response basis (vector response)"))?;
    let coords = predict_coords(model, &model.coordinates(predictors)?)?;
    Ok(coords * basis.evaluate(grid).transpose())
}

/// Predicted responses: curves on `grid` for functional responses, the
/// response vector otherwise.
pub fn predict_response(model: &FeplsModel, predictors: &[FunctionalVariable], grid: &[f64]) -> Result<DMatrix<f64>> {
    match model.basis_y {
        Some(_) => predict_function(model, predictors, grid),
        None => predict_coords(model, &model.coordinates(predictors)?),
    }
}

/// `P(Y = 1)` for each new subject.
pub fn predict_prob(model: &FeplsModel, predictors: &[FunctionalVariable]) -> Result<DVector<f64>> {
    let fit = model.logistic()?;
    let x = model.coordinates(predictors)?;
    check_width(&x, fit.m_x())?;
    Ok(fit.predict_prob(&x))
}

/// Labels from thresholding [`predict_prob`].
pub fn classify(model: &FeplsModel, predictors: &[FunctionalVariable], threshold: f64) -> Result<Vec<u8>> {
    Ok(predict_prob(model, predictors)?
        .iter()
        .map(|&p| u8::from(p > threshold))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalKind {
    Confidence,
    Prediction,
}

/// A pointwise interval at `t0` (or at response component `t0` for vector responses).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub t0: f64,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub kind: IntervalKind,
}

/// Standard normal quantile `z_{(1+level)/2}`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid(format!("level {level} must lie in (0, 1)")));
    }
    Ok(Normal::standard().inverse_cdf(0.5 * (1.0 + level)))
}

/// Interval for `cᵀŶ` at predictor coordinates `x`.
///
/// The estimated variance of `cᵀ(Ȳ + β̂(x − X̄))` is
/// `n⁻¹ cᵀ(Σ̂_ε̃ + (x − X̄)ᵀ ⊗ I · V̂ · (x − X̄) ⊗ I)c`; prediction intervals add
/// `cᵀΣ̂_ε̃c`. The half-width is `z·sqrt(variance)`.
pub fn interval_for_contrast(
    model: &FeplsModel,
    x: &DVector<f64>,
    c: &DVector<f64>,
    level: f64,
    kind: IntervalKind,
) -> Result<(f64, f64, f64)> {
    let fit = model.linear()?;
    let z = normal_quantile(level)?;
    if x.len() != fit.m_x() || c.len() != fit.m_y() {
        return Err(Error::DimensionMismatch(
            "contrast or coordinates do not match the model".into(),
        ));
    }
    let n = fit.n as f64;
    let xc = x - &fit.x_mean;
    let point = c.dot(&(&fit.alpha + &fit.beta * x));
    let k = xc.kronecker(c);
    let resid = c.dot(&(&model.sigma_epstil * c));
    let mut var = (resid + k.dot(&(&fit.v_mpelm * &k))) / n;
    if kind == IntervalKind::Prediction {
        var += resid;
    }
    let half = z * var.max(0.0).sqrt();
    Ok((point, point - half, point + half))
}

/// Confidence interval for the mean response of one new subject at `t0`.
pub fn confidence_interval(
    model: &FeplsModel,
    predictors: &[FunctionalVariable],
    t0: f64,
    level: f64,
) -> Result<IntervalEstimate> {
    interval(model, predictors, t0, level, IntervalKind::Confidence)
}

/// Prediction interval for the response of one new subject at `t0`.
pub fn prediction_interval(
    model: &FeplsModel,
    predictors: &[FunctionalVariable],
    t0: f64,
    level: f64,
) -> Result<IntervalEstimate> {
    interval(model, predictors, t0, level, IntervalKind::Prediction)
}

/// Interval of either kind. `predictors` must hold one subject. For a vector
/// response `t0` is the (integer) response component.
pub fn interval(
    model: &FeplsModel,
    predictors: &[FunctionalVariable],
    t0: f64,
    level: f64,
    kind: IntervalKind,
) -> Result<IntervalEstimate> {
    let x = model.coordinates(predictors)?;
    if x.nrows() != 1 {
        return Err(invalid(format!("intervals take one subject, got {}", x.nrows())));
    }
    let x = x.row(0).transpose();
    let c = contrast(model, t0)?;
    let (point, lower, upper) = interval_for_contrast(model, &x, &c, level, kind)?;
    Ok(IntervalEstimate {
        t0,
        point,
        lower,
        upper,
        level,
        kind,
    })
}

/// `c(t0)`: the response basis at `t0`, or a unit vector for vector responses.
pub fn contrast(model: &FeplsModel, t0: f64) -> Result<DVector<f64>> {
    let m_y = model.linear()?.m_y();
    match &model.basis_y {
        Some(b) => {
            if !(0.0..=1.0).contains(&t0) {
                return Err(invalid(format!("t0 = {t0} lies outside [0, 1]")));
            }
            Ok(b.evaluate(&[t0]).row(0).transpose())
        }
        None => {
            let j = t0 as usize;
            if t0 < 0.0 || t0.fract() != 0.0 || j >= m_y {
                return Err(invalid(format!("component {t0} is not an index below {m_y}")));
            }
            let mut c = DVector::zeros(m_y);
            c[j] = 1.0;
            Ok(c)
        }
    }
}
