//! Functional datasets and their finite-dimensional basis coordinates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{invalid, Error, Result};
use crate::io::matrix_serde;
use crate::linalg;

/// Condition number above which least-squares coordinates are refused.
pub const OLS_CONDITION_LIMIT: f64 = 1e10;

/// One subject's curve observed on its own grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

/// A functional variable observed for `n` subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "kebab-case")]
pub enum FunctionalVariable {
    /// Every subject observed on the same grid; `values` is `n × len(grid)`.
    Common {
        grid: Vec<f64>,
        #[serde(with = "matrix_serde")]
        values: DMatrix<f64>,
    },
    /// Each subject carries its own grid.
    PerSubject { curves: Vec<Curve> },
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("observation grid must be strictly increasing"));
    }
    if grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(invalid("observation grid must lie in [0, 1]"));
    }
    Ok(())
}

impl FunctionalVariable {
    pub fn common(grid: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        check_grid(&grid)?;
        if values.ncols() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "values have {} columns but the grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        Ok(Self::Common { grid, values })
    }

    pub fn per_subject(curves: Vec<Curve>) -> Result<Self> {
        for (i, c) in curves.iter().enumerate() {
            check_grid(&c.grid)?;
            if c.grid.len() != c.values.len() {
                return Err(Error::DimensionMismatch(format!(
                    "subject {i}: {} grid points but {} values",
                    c.grid.len(),
                    c.values.len()
                )));
            }
        }
        Ok(Self::PerSubject { curves })
    }

    pub fn n(&self) -> usize {
        match self {
            Self::Common { values, .. } => values.nrows(),
            Self::PerSubject { curves } => curves.len(),
        }
    }

    /// The `i`-th subject as a curve.
    pub fn curve(&self, i: usize) -> Curve {
        match self {
            Self::Common { grid, values } => Curve {
                grid: grid.clone(),
                values: values.row(i).iter().copied().collect(),
            },
            Self::PerSubject { curves } => curves[i].clone(),
        }
    }

    /// The subjects at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            Self::Common { grid, values } => Self::Common {
                grid: grid.clone(),
                values: values.select_rows(idx),
            },
            Self::PerSubject { curves } => Self::PerSubject {
                curves: idx.iter().map(|&i| curves[i].clone()).collect(),
            },
        }
    }
}

/// The response attached to a functional dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Response {
    Functional(FunctionalVariable),
    Vector {
        #[serde(with = "matrix_serde")]
        values: DMatrix<f64>,
    },
    Binary {
        labels: Vec<u8>,
    },
}

impl Response {
    pub fn n(&self) -> usize {
        match self {
            Response::Functional(v) => v.n(),
            Response::Vector { values } => values.nrows(),
            Response::Binary { labels } => labels.len(),
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Response::Binary { .. })
    }

    fn select(&self, idx: &[usize]) -> Self {
        match self {
            Response::Functional(v) => Response::Functional(v.select(idx)),
            Response::Vector { values } => Response::Vector {
                values: values.select_rows(idx),
            },
            Response::Binary { labels } => Response::Binary {
                labels: idx.iter().map(|&i| labels[i]).collect(),
            },
        }
    }
}

/// `n` subjects, `p` functional predictors, and a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset {
    predictors: Vec<FunctionalVariable>,
    response: Response,
}

impl FunctionalDataset {
    pub fn new(predictors: Vec<FunctionalVariable>, response: Response) -> Result<Self> {
        if predictors.is_empty() {
            return Err(invalid("at least one functional predictor is required"));
        }
        let n = response.n();
        for (j, p) in predictors.iter().enumerate() {
            if p.n() != n {
                return Err(Error::DimensionMismatch(format!(
                    "predictor {j} has {} subjects, response has {n}",
                    p.n()
                )));
            }
        }
        if let Response::Binary { labels } = &response {
            if labels.iter().any(|&l| l > 1) {
                return Err(invalid("binary labels must be 0 or 1"));
            }
        }
        Ok(Self { predictors, response })
    }

    pub fn n(&self) -> usize {
        self.response.n()
    }

    pub fn predictors(&self) -> &[FunctionalVariable] {
        &self.predictors
    }

    pub fn response(&self) -> &Response {
        &self.response
    }

    /// The subjects at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            predictors: self.predictors.iter().map(|p| p.select(idx)).collect(),
            response: self.response.select(idx),
        }
    }
}

/// How coordinates are estimated from discrete observations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum CoordMethod {
    #[default]
    Ols,
    Ridge {
        lambda: f64,
    },
}

/// Coordinates of a projected dataset.
///
/// `ytil` holds the response coordinates (functional), the raw response
/// vectors (vector), or the labels as a single 0/1 column (binary). The means
/// are column means of `xtil` and `ytil`; fits center internally and re-add
/// them through the intercept.
#[derive(Debug, Clone)]
pub struct CoordinateBlock {
    pub xtil: DMatrix<f64>,
    pub ytil: DMatrix<f64>,
    pub bases_x: Vec<BasisSet>,
    pub basis_y: Option<BasisSet>,
    pub x_means: DVector<f64>,
    pub y_means: DVector<f64>,
    pub binary: bool,
}

impl CoordinateBlock {
    pub fn m_x(&self) -> usize {
        self.xtil.ncols()
    }

    pub fn m_y(&self) -> usize {
        self.ytil.ncols()
    }

    pub fn labels(&self) -> DVector<f64> {
        self.ytil.column(0).into_owned()
    }
}

/// Linear map `m × k` taking observed values to coordinates.
fn coordinate_operator(basis_eval: &DMatrix<f64>, method: CoordMethod) -> Result<DMatrix<f64>> {
    let (k, m) = basis_eval.shape();
    if m == 0 {
        return Err(invalid("basis has no functions"));
    }
    let svd = basis_eval.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let s = &svd.singular_values;
    let smax = s.max();
    let filter: Vec<f64> = match method {
        CoordMethod::Ols => {
            let smin = if k < m { 0.0 } else { s.min() };
            let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            if !(condition < OLS_CONDITION_LIMIT) {
                return Err(Error::CoordinateRank {
                    condition,
                    location: None,
                });
            }
            s.iter().map(|&v| 1.0 / v).collect()
        }
        CoordMethod::Ridge { lambda } => {
            if !(lambda >= 0.0) {
                return Err(invalid("ridge penalty must be nonnegative"));
            }
            s.iter()
                .map(|&v| {
                    let d = v * v + lambda;
                    if d > 0.0 && v > smax * 1e-15 {
                        v / d
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    };
    let mut scaled_ut = u.transpose();
    for (i, mut row) in scaled_ut.row_iter_mut().enumerate() {
        row *= filter[i];
    }
    Ok(vt.transpose() * scaled_ut)
}

/// Least-squares coordinates `c` minimizing `‖values − basis_eval·c‖`.
pub fn coordinate_ols(values: &DVector<f64>, basis_eval: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_len(values, basis_eval)?;
    Ok(coordinate_operator(basis_eval, CoordMethod::Ols)? * values)
}

/// Ridge coordinates minimizing `‖values − basis_eval·c‖² + λ‖c‖²`.
pub fn coordinate_ridge(values: &DVector<f64>, basis_eval: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_len(values, basis_eval)?;
    Ok(coordinate_operator(basis_eval, CoordMethod::Ridge { lambda })? * values)
}

fn check_len(values: &DVector<f64>, basis_eval: &DMatrix<f64>) -> Result<()> {
    if values.len() != basis_eval.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a {}-row basis evaluation",
            values.len(),
            basis_eval.nrows()
        )));
    }
    Ok(())
}

/// Coordinates (`n × m`) of every subject of one variable in `basis`.
pub fn project_variable(var: &FunctionalVariable, basis: &BasisSet, method: CoordMethod) -> Result<DMatrix<f64>> {
    match var {
        FunctionalVariable::Common { grid, values } => {
            let op = coordinate_operator(&basis.evaluate(grid), method)?;
            Ok(values * op.transpose())
        }
        FunctionalVariable::PerSubject { curves } => {
            let rows = curves
                .par_iter()
                .enumerate()
                .map(|(i, c)| {
                    let op = coordinate_operator(&basis.evaluate(&c.grid), method)
                        .map_err(|e| locate(e, format!("subject {i}")))?;
                    Ok(op * DVector::from_column_slice(&c.values))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut out = DMatrix::zeros(curves.len(), basis.size());
            for (i, r) in rows.iter().enumerate() {
                out.set_row(i, &r.transpose());
            }
            Ok(out)
        }
    }
}

fn locate(e: Error, loc: String) -> Error {
    match e {
        Error::CoordinateRank { condition, location } => Error::CoordinateRank {
            condition,
            location: Some(match location {
                Some(inner) => format!("{loc}, {inner}"),
                None => loc,
            }),
        },
        other => other,
    }
}

/// Stacked predictor coordinates (`n × m_x`), predictor blocks in input order.
pub fn project_predictors(
    predictors: &[FunctionalVariable],
    bases_x: &[BasisSet],
    method: CoordMethod,
) -> Result<DMatrix<f64>> {
    if predictors.len() != bases_x.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictors but {} bases",
            predictors.len(),
            bases_x.len()
        )));
    }
    let n = predictors.first().map_or(0, |p| p.n());
    let m_x: usize = bases_x.iter().map(|b| b.size()).sum();
    let mut xtil = DMatrix::zeros(n, m_x);
    let mut offset = 0;
    for (j, (var, basis)) in predictors.iter().zip(bases_x).enumerate() {
        let block = project_variable(var, basis, method).map_err(|e| locate(e, format!("predictor {j}")))?;
        xtil.view_mut((0, offset), (n, basis.size())).copy_from(&block);
        offset += basis.size();
    }
    Ok(xtil)
}

/// Projects a dataset onto the given bases.
pub fn project_dataset(
    data: &FunctionalDataset,
    bases_x: &[BasisSet],
    basis_y: Option<&BasisSet>,
    method: CoordMethod,
) -> Result<CoordinateBlock> {
    let xtil = project_predictors(data.predictors(), bases_x, method)?;
    let (ytil, binary) = match data.response() {
        Response::Functional(v) => {
            let by = basis_y.ok_or_else(|| invalid("a functional response requires a response basis"))?;
            (
                project_variable(v, by, method).map_err(|e| locate(e, "response".into()))?,
                false,
            )
        }
        Response::Vector { values } => (values.clone(), false),
        Response::Binary { labels } => (
            DMatrix::from_iterator(labels.len(), 1, labels.iter().map(|&l| l as f64)),
            true,
        ),
    };
    let basis_y = match data.response() {
        Response::Functional(_) => basis_y.cloned(),
        _ => None,
    };
    Ok(CoordinateBlock {
        x_means: linalg::column_means(&xtil),
        y_means: linalg::column_means(&ytil),
        xtil,
        ytil,
        bases_x: bases_x.to_vec(),
        basis_y,
        binary,
    })
}

/// Function values `evaluate(basis, grid) · coords`.
pub fn reconstruct(coords: &DVector<f64>, basis: &BasisSet, grid: &[f64]) -> Result<DVector<f64>> {
    if coords.len() != basis.size() {
        return Err(invalid(format!(
            "{} coordinates for a basis of size {}",
            coords.len(),
            basis.size()
        )));
    }
    Ok(basis.evaluate(grid) * coords)
}
