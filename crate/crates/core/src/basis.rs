//! Basis systems on `[0, 1]`: Fourier, natural cubic splines, and tabulated
//! functions, with numerical `L²` orthonormalization under a quadrature rule.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
#[cfg(test)]
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::matrix_serde;
use crate::linalg;

/// Number of trapezoid nodes used when no quadrature is specified.
pub const DEFAULT_QUADRATURE_NODES: usize = 2001;

/// A quadrature rule on `[0, 1]`: `∫ f ≈ Σ wᵢ f(tᵢ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuadratureRepr", into = "QuadratureRepr")]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    trapezoid: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum QuadratureRepr {
    Trapezoid { nodes: usize },
    Custom { nodes: Vec<f64>, weights: Vec<f64> },
}

impl TryFrom<QuadratureRepr> for QuadratureRule {
    type Error = Error;
    fn try_from(r: QuadratureRepr) -> Result<Self> {
        match r {
            QuadratureRepr::Trapezoid { nodes } => QuadratureRule::trapezoid(nodes),
            QuadratureRepr::Custom { nodes, weights } => QuadratureRule::new(nodes, weights),
        }
    }
}

impl From<QuadratureRule> for QuadratureRepr {
    fn from(q: QuadratureRule) -> Self {
        if q.trapezoid {
            QuadratureRepr::Trapezoid { nodes: q.nodes.len() }
        } else {
            QuadratureRepr::Custom {
                nodes: q.nodes,
                weights: q.weights,
            }
        }
    }
}

impl QuadratureRule {
    /// Composite trapezoid rule on `k ≥ 2` equally spaced nodes, endpoints included.
    pub fn trapezoid(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(invalid("trapezoid rule needs at least 2 nodes"));
        }
        let h = 1.0 / (k - 1) as f64;
        let nodes = equispaced_grid(k);
        let mut weights = vec![h; k];
        weights[0] = h / 2.0;
        weights[k - 1] = h / 2.0;
        Ok(Self {
            nodes,
            weights,
            trapezoid: true,
        })
    }

    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(invalid(
                "quadrature nodes and weights must be nonempty and equal length",
            ));
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) || nodes[0] < 0.0 || nodes[nodes.len() - 1] > 1.0 {
            return Err(invalid("quadrature nodes must be strictly increasing within [0, 1]"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(invalid("quadrature weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("quadrature weights sum to {total}, expected 1")));
        }
        Ok(Self {
            nodes,
            weights,
            trapezoid: false,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::trapezoid(DEFAULT_QUADRATURE_NODES).expect("default node count is valid")
    }
}

/// `k` equally spaced points on `[0, 1]` including both endpoints.
pub fn equispaced_grid(k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..k).map(|i| i as f64 / (k - 1) as f64).collect(),
    }
}

/// The family a basis is drawn from, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisKind {
    /// `{1, √2 sin 2πt, √2 cos 2πt, √2 sin 4πt, …}`.
    Fourier,
    /// Natural cubic splines with the given knots; dimension equals the knot count.
    NaturalSpline { knots: Vec<f64> },
    /// Functions tabulated on a grid, linearly interpolated between grid points.
    Tabulated {
        grid: Vec<f64>,
        #[serde(with = "matrix_serde")]
        values: DMatrix<f64>,
    },
}

/// An ordered set of `m` real functions on `[0, 1]`.
///
/// The functions are `raw(t) · transform`, where `raw` is the family's
/// canonical basis and `transform` is an `m × m` change of coordinates set by
/// [`orthonormalize`]. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    kind: BasisKind,
    size: usize,
    quadrature: QuadratureRule,
    orthonormalized: bool,
    #[serde(with = "matrix_serde::option")]
    transform: Option<DMatrix<f64>>,
}

/// The first `m` Fourier functions, constant first, then sine/cosine pairs of
/// increasing frequency. Orthonormal in exact `L²[0, 1]`.
pub fn fourier_basis(m: usize) -> Result<BasisSet> {
    if m == 0 {
        return Err(invalid("Fourier basis size must be at least 1"));
    }
    Ok(BasisSet {
        kind: BasisKind::Fourier,
        size: m,
        quadrature: QuadratureRule::default(),
        orthonormalized: true,
        transform: None,
    })
}

/// Natural cubic spline basis (linear beyond the boundary knots) with one
/// function per knot. Not orthonormal.
pub fn natural_spline_basis(knots: &[f64]) -> Result<BasisSet> {
    if knots.len() < 2 {
        return Err(invalid("natural spline basis needs at least 2 knots"));
    }
    if knots.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("spline knots must be strictly increasing (no duplicates)"));
    }
    if knots[0] < 0.0 || knots[knots.len() - 1] > 1.0 {
        return Err(invalid("spline knots must lie in [0, 1]"));
    }
    Ok(BasisSet {
        kind: BasisKind::NaturalSpline { knots: knots.to_vec() },
        size: knots.len(),
        quadrature: QuadratureRule::default(),
        orthonormalized: false,
        transform: None,
    })
}

/// Natural spline basis with `k` equally spaced knots `{0, 1/(k-1), …, 1}`.
pub fn natural_spline_equispaced(k: usize) -> Result<BasisSet> {
    natural_spline_basis(&equispaced_grid(k))
}

/// A basis given by its values on a grid (columns are functions).
pub fn tabulated_basis(grid: Vec<f64>, values: DMatrix<f64>) -> Result<BasisSet> {
    if grid.len() < 2 || values.nrows() != grid.len() || values.ncols() == 0 {
        return Err(invalid("tabulated basis needs ≥ 2 grid points and one row per point"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) || grid[0] < 0.0 || grid[grid.len() - 1] > 1.0 {
        return Err(invalid("tabulation grid must be strictly increasing within [0, 1]"));
    }
    let size = values.ncols();
    Ok(BasisSet {
        kind: BasisKind::Tabulated { grid, values },
        size,
        quadrature: QuadratureRule::default(),
        orthonormalized: false,
        transform: None,
    })
}

impl BasisSet {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn is_orthonormalized(&self) -> bool {
        self.orthonormalized
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    /// Replaces the quadrature rule used for inner products.
    pub fn with_quadrature(mut self, quad: QuadratureRule) -> Self {
        self.quadrature = quad;
        self
    }

    /// Returns the basis after an extra right-multiplication of the function
    /// row vector by `rotation` (`m × m`), e.g. an orthogonal change of basis.
    pub fn transformed(&self, rotation: &DMatrix<f64>) -> Result<BasisSet> {
        if rotation.nrows() != self.size || rotation.ncols() != self.size {
            return Err(invalid("rotation must be m × m"));
        }
        let t = match &self.transform {
            Some(t) => t * rotation,
            None => rotation.clone(),
        };
        Ok(BasisSet {
            transform: Some(t),
            ..self.clone()
        })
    }

    /// Evaluates all functions on `grid`: entry `(i, j)` is `b_j(t_i)`.
    pub fn evaluate(&self, grid: &[f64]) -> DMatrix<f64> {
        let raw = self.evaluate_raw(grid);
        match &self.transform {
            Some(t) => raw * t,
            None => raw,
        }
    }

    fn evaluate_raw(&self, grid: &[f64]) -> DMatrix<f64> {
        let m = self.size;
        match &self.kind {
            BasisKind::Fourier => DMatrix::from_fn(grid.len(), m, |i, j| fourier_value(j, grid[i])),
            BasisKind::NaturalSpline { knots } => {
                let mut out = DMatrix::zeros(grid.len(), m);
                let mut row = vec![0.0; m];
                for (i, &t) in grid.iter().enumerate() {
                    natural_spline_row(knots, t, &mut row);
                    for (j, v) in row.iter().enumerate() {
                        out[(i, j)] = *v;
                    }
                }
                out
            }
            BasisKind::Tabulated { grid: tab, values } => {
                DMatrix::from_fn(grid.len(), m, |i, j| interpolate(tab, values, j, grid[i]))
            }
        }
    }

    /// Gram matrix `∫ b_i b_j` under the basis' quadrature rule.
    pub fn gram(&self) -> DMatrix<f64> {
        let q = &self.quadrature;
        let b = self.evaluate(q.nodes());
        let mut wb = b.clone();
        for (i, mut row) in wb.row_iter_mut().enumerate() {
            row *= q.weights()[i];
        }
        linalg::symmetrize(&(b.transpose() * wb))
    }

    /// Quadrature inner products `⟨f, b_j⟩` for a function sampled at the
    /// quadrature nodes.
    pub fn inner_products(&self, f_at_nodes: &[f64]) -> Vec<f64> {
        let q = &self.quadrature;
        let b = self.evaluate(q.nodes());
        (0..self.size)
            .map(|j| {
                q.weights()
                    .iter()
                    .zip(f_at_nodes)
                    .enumerate()
                    .map(|(i, (w, f))| w * f * b[(i, j)])
                    .sum()
            })
            .collect()
    }
}

/// Orthonormalizes `basis` under `quad` (Gram–Schmidt order, realized as the
/// Cholesky change of coordinates `L⁻ᵀ` of the Gram matrix). Each output
/// function has a positive coefficient on the input function at the same
/// position.
pub fn orthonormalize(basis: &BasisSet, quad: &QuadratureRule) -> Result<BasisSet> {
    let staged = basis.clone().with_quadrature(quad.clone());
    let gram = staged.gram();
    let condition = linalg::sym_condition(&gram);
    if !(condition < 1e12) {
        return Err(Error::DegenerateBasis { condition });
    }
    let chol = gram.cholesky().ok_or(Error::DegenerateBasis { condition })?;
    let l = chol.l();
    let m = basis.size;
    let linv_t = l
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .ok_or(Error::DegenerateBasis { condition })?
        .transpose();
    let transform = match &basis.transform {
        Some(t) => t * linv_t,
        None => linv_t,
    };
    Ok(BasisSet {
        kind: basis.kind.clone(),
        size: m,
        quadrature: quad.clone(),
        orthonormalized: true,
        transform: Some(transform),
    })
}

/// Evaluates a basis at a grid; a thin wrapper over [`BasisSet::evaluate`].
pub fn evaluate(basis: &BasisSet, grid: &[f64]) -> DMatrix<f64> {
    basis.evaluate(grid)
}

/// Value of the `j`-th (0-based) Fourier function at `t`.
pub fn fourier_value(j: usize, t: f64) -> f64 {
    if j == 0 {
        1.0
    } else {
        let k = j.div_ceil(2) as f64;
        if j % 2 == 1 {
            SQRT_2 * (2.0 * PI * k * t).sin()
        } else {
            SQRT_2 * (2.0 * PI * k * t).cos()
        }
    }
}

// Truncated-power natural spline basis: 1, t, and d_k − d_{K−1} with
// d_k(t) = ((t − ξ_k)³₊ − (t − ξ_K)³₊) / (ξ_K − ξ_k).
fn natural_spline_row(knots: &[f64], t: f64, out: &mut [f64]) {
    let k = knots.len();
    out[0] = 1.0;
    out[1] = t;
    if k == 2 {
        return;
    }
    let last = knots[k - 1];
    let cube = |x: f64| if x > 0.0 { x * x * x } else { 0.0 };
    let d = |i: usize| (cube(t - knots[i]) - cube(t - last)) / (last - knots[i]);
    let d_pen = d(k - 2);
    for i in 0..k - 2 {
        out[i + 2] = d(i) - d_pen;
    }
}

fn interpolate(grid: &[f64], values: &DMatrix<f64>, col: usize, t: f64) -> f64 {
    let n = grid.len();
    if t <= grid[0] {
        return values[(0, col)];
    }
    if t >= grid[n - 1] {
        return values[(n - 1, col)];
    }
    let hi = grid.partition_point(|&g| g <= t).min(n - 1);
    let lo = hi - 1;
    let w = (t - grid[lo]) / (grid[hi] - grid[lo]);
    values[(lo, col)] * (1.0 - w) + values[(hi, col)] * w
}

/// Basis configuration as used by the CLI and model files:
/// `fourier:m=13`, `spline:knots=0,0.25,0.5,0.75,1`, or `spline:k=5`,
/// optionally followed by `:q=2001` for the quadrature node count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisSpec {
    Fourier {
        m: usize,
        #[serde(default = "default_nodes")]
        quadrature_nodes: usize,
    },
    NaturalSpline {
        knots: Vec<f64>,
        #[serde(default = "default_nodes")]
        quadrature_nodes: usize,
    },
}

fn default_nodes() -> usize {
    DEFAULT_QUADRATURE_NODES
}

impl BasisSpec {
    /// Builds the orthonormalized basis described by this spec.
    pub fn build(&self) -> Result<BasisSet> {
        match self {
            BasisSpec::Fourier { m, quadrature_nodes } => {
                Ok(fourier_basis(*m)?.with_quadrature(QuadratureRule::trapezoid(*quadrature_nodes)?))
            }
            BasisSpec::NaturalSpline {
                knots,
                quadrature_nodes,
            } => orthonormalize(
                &natural_spline_basis(knots)?,
                &QuadratureRule::trapezoid(*quadrature_nodes)?,
            ),
        }
    }
}

impl FromStr for BasisSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default().trim();
        let mut m = None;
        let mut knots = None;
        let mut nodes = DEFAULT_QUADRATURE_NODES;
        for p in parts {
            let (key, value) = p
                .split_once('=')
                .ok_or_else(|| invalid(format!("basis parameter `{p}` is not key=value")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| invalid(format!("`{v}` is not a positive integer")))
            };
            match key.trim() {
                "m" => m = Some(num(value)?),
                "k" => knots = Some(equispaced_grid(num(value)?)),
                "knots" => {
                    let ks = value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>().map_err(|_| invalid(format!("bad knot `{v}`"))))
                        .collect::<Result<Vec<_>>>()?;
                    knots = Some(ks);
                }
                "q" => nodes = num(value)?,
                other => return Err(invalid(format!("unknown basis parameter `{other}`"))),
            }
        }
        match kind {
            "fourier" => Ok(BasisSpec::Fourier {
                m: m.ok_or_else(|| invalid("fourier basis needs m=<size>"))?,
                quadrature_nodes: nodes,
            }),
            "spline" | "natural-spline" | "ns" => Ok(BasisSpec::NaturalSpline {
                knots: knots.ok_or_else(|| invalid("spline basis needs knots=… or k=<count>"))?,
                quadrature_nodes: nodes,
            }),
            other => Err(invalid(format!("unknown basis kind `{other}`"))),
        }
    }
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisSpec::Fourier { m, quadrature_nodes } => write!(f, "fourier:m={m}:q={quadrature_nodes}"),
            BasisSpec::NaturalSpline {
                knots,
                quadrature_nodes,
            } => {
                let ks: Vec<String> = knots.iter().map(|k| k.to_string()).collect();
                write!(f, "spline:knots={}:q={quadrature_nodes}", ks.join(","))
            }
        }
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn orthonormalization_preserves_span(coef in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let quad = QuadratureRule::trapezoid(801).unwrap();
            let raw = natural_spline_equispaced(6).unwrap();
            let o = orthonormalize(&raw, &quad).unwrap();
            let f = raw.evaluate(quad.nodes()) * DVector::from_vec(coef);
            let c = DVector::from_vec(o.inner_products(f.as_slice()));
            let back = o.evaluate(quad.nodes()) * c;
            let err: Vec<f64> = f.iter().zip(back.iter()).map(|(a, b)| (a - b).powi(2)).collect();
            prop_assert!(quad.integrate(&err).sqrt() < 1e-8);
            let g = o.gram();
            prop_assert!((g - DMatrix::identity(6, 6)).amax() < 1e-8);
        }
    }
}
