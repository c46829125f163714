//! Grid-sampled functions and bivariate kernels on a compact interval.
//!
//! Every curve lives on a [`Grid`] carrying quadrature weights, so inner
//! products, operator applications and Hilbert–Schmidt norms all reduce to
//! weighted sums over grid points.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ordered sample locations on `[a, b]` with positive quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Uniform grid of `size` points on `[a, b]` with trapezoid weights.
    pub fn uniform(a: f64, b: f64, size: usize) -> Result<Arc<Grid>> {
        if size < 2 {
            return Err(Error::Domain(format!("grid needs at least 2 points, got {size}")));
        }
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(Error::Domain(format!("invalid interval [{a}, {b}]")));
        }
        let h = (b - a) / (size - 1) as f64;
        let points: Vec<f64> = (0..size)
            .map(|k| {
                if k == size - 1 {
                    b
                } else {
                    a + (b - a) * (k as f64) / ((size - 1) as f64)
                }
            })
            .collect();
        let mut weights = vec![h; size];
        weights[0] = h / 2.0;
        weights[size - 1] = h / 2.0;
        Ok(Arc::new(Grid { points, weights }))
    }

    /// Grid with caller-supplied quadrature weights.
    pub fn with_weights(points: Vec<f64>, weights: Vec<f64>) -> Result<Arc<Grid>> {
        if points.len() < 2 || points.len() != weights.len() {
            return Err(Error::Structural(format!(
                "grid has {} points and {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().chain(weights.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("grid contains non-finite values".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("grid points must be strictly increasing".into()));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Data("quadrature weights must be positive".into()));
        }
        let len = points[points.len() - 1] - points[0];
        let total: f64 = weights.iter().sum();
        if (total - len).abs() > 1e-12 * len.max(1.0) {
            return Err(Error::Data(format!(
                "quadrature weights sum to {total}, interval length is {len}"
            )));
        }
        Ok(Arc::new(Grid { points, weights }))
    }

    /// Trapezoid weights for arbitrary increasing points.
    pub fn trapezoid(points: Vec<f64>) -> Result<Arc<Grid>> {
        let g = points.len();
        if g < 2 {
            return Err(Error::Domain("grid needs at least 2 points".into()));
        }
        let mut weights = vec![0.0; g];
        for k in 0..g - 1 {
            let h = points[k + 1] - points[k];
            weights[k] += h / 2.0;
            weights[k + 1] += h / 2.0;
        }
        Grid::with_weights(points, weights)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// True when this grid is bit-identical to `Grid::uniform(a, b, G)`.
    pub fn is_uniform(&self) -> bool {
        match Grid::uniform(self.start(), self.end(), self.len()) {
            Ok(u) => *u == *self,
            Err(_) => false,
        }
    }
}

pub(crate) fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

pub(crate) fn check_grid(a: &Arc<Grid>, b: &Arc<Grid>, what: &str) -> Result<()> {
    if same_grid(a, b) {
        Ok(())
    } else {
        Err(Error::Structural(format!("grid mismatch in {what}")))
    }
}

/// A univariate function sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Curve> {
        if values.len() != grid.len() {
            return Err(Error::Structural(format!(
                "curve has {} values on a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("curve contains non-finite values".into()));
        }
        Ok(Curve { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Curve> {
        let values = grid.points().iter().map(|&u| f(u)).collect();
        Curve::new(grid, values)
    }

    pub fn zeros(grid: Arc<Grid>) -> Curve {
        let values = vec![0.0; grid.len()];
        Curve { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        weighted_dot(self.grid.weights(), &self.values, &self.values).sqrt()
    }

    pub fn scaled(&self, c: f64) -> Curve {
        Curve {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn sub(&self, other: &Curve) -> Result<Curve> {
        check_grid(&self.grid, &other.grid, "curve subtraction")?;
        Ok(Curve {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }
}

pub(crate) fn weighted_dot(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    w.iter().zip(f).zip(g).map(|((w, f), g)| w * f * g).sum()
}

/// Quadrature approximation of `∫ f g`.
pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    check_grid(&f.grid, &g.grid, "inner_product")?;
    Ok(weighted_dot(f.grid.weights(), &f.values, &g.values))
}

/// A bivariate function sampled on `grid_u × grid_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    grid_u: Arc<Grid>,
    grid_v: Arc<Grid>,
    values: DMatrix<f64>,
}

impl Kernel {
    pub fn new(grid_u: Arc<Grid>, grid_v: Arc<Grid>, values: DMatrix<f64>) -> Result<Kernel> {
        if values.nrows() != grid_u.len() || values.ncols() != grid_v.len() {
            return Err(Error::Structural(format!(
                "kernel is {}x{} on grids of {} and {} points",
                values.nrows(),
                values.ncols(),
                grid_u.len(),
                grid_v.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("kernel contains non-finite values".into()));
        }
        Ok(Kernel {
            grid_u,
            grid_v,
            values,
        })
    }

    pub fn from_fn(grid_u: Arc<Grid>, grid_v: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Result<Kernel> {
        let values = DMatrix::from_fn(grid_u.len(), grid_v.len(), |i, k| {
            f(grid_u.points()[i], grid_v.points()[k])
        });
        Kernel::new(grid_u, grid_v, values)
    }

    pub fn zeros(grid_u: Arc<Grid>, grid_v: Arc<Grid>) -> Kernel {
        let values = DMatrix::zeros(grid_u.len(), grid_v.len());
        Kernel {
            grid_u,
            grid_v,
            values,
        }
    }

    /// `f(u) g(v)`.
    pub fn outer(f: &Curve, g: &Curve) -> Kernel {
        let values = DMatrix::from_fn(f.values.len(), g.values.len(), |i, k| f.values[i] * g.values[k]);
        Kernel {
            grid_u: f.grid.clone(),
            grid_v: g.grid.clone(),
            values,
        }
    }

    pub fn grid_u(&self) -> &Arc<Grid> {
        &self.grid_u
    }

    pub fn grid_v(&self) -> &Arc<Grid> {
        &self.grid_v
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn transpose(&self) -> Kernel {
        Kernel {
            grid_u: self.grid_v.clone(),
            grid_v: self.grid_u.clone(),
            values: self.values.transpose(),
        }
    }

    pub fn sub(&self, other: &Kernel) -> Result<Kernel> {
        check_grid(&self.grid_u, &other.grid_u, "kernel subtraction")?;
        check_grid(&self.grid_v, &other.grid_v, "kernel subtraction")?;
        Ok(Kernel {
            grid_u: self.grid_u.clone(),
            grid_v: self.grid_v.clone(),
            values: &self.values - &other.values,
        })
    }

    pub fn add_scaled(&mut self, other: &Kernel, c: f64) -> Result<()> {
        check_grid(&self.grid_u, &other.grid_u, "kernel addition")?;
        check_grid(&self.grid_v, &other.grid_v, "kernel addition")?;
        self.values.zip_apply(&other.values, |a, b| *a += c * b);
        Ok(())
    }
}

/// `u ↦ ∫ K(u, v) f(v) dv`.
pub fn kernel_apply(k: &Kernel, f: &Curve) -> Result<Curve> {
    check_grid(&k.grid_v, &f.grid, "kernel_apply")?;
    let wf = DVector::from_iterator(
        f.values.len(),
        f.grid.weights().iter().zip(&f.values).map(|(w, v)| w * v),
    );
    let out = &k.values * wf;
    Ok(Curve {
        grid: k.grid_u.clone(),
        values: out.as_slice().to_vec(),
    })
}

/// Hilbert–Schmidt norm `(∫∫ K(u,v)² du dv)^{1/2}`.
pub fn hs_norm(k: &Kernel) -> f64 {
    let wu = k.grid_u.weights();
    let wv = k.grid_v.weights();
    let mut total = 0.0;
    for (c, &w_col) in wv.iter().enumerate() {
        let col = k.values.column(c);
        let s: f64 = col.iter().zip(wu).map(|(x, w)| w * x * x).sum();
        total += w_col * s;
    }
    total.sqrt()
}

/// A kernel of the form `K(u, v) = Σ_ab L_a(u) C_ab R_b(v)`.
///
/// The columns of `left` and `right` are curves sampled on `grid_u` and
/// `grid_v`. Recovered coefficient kernels are kept in this form so that
/// norms and distances cost `O(G·rank)` instead of `O(G²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankKernel {
    grid_u: Arc<Grid>,
    grid_v: Arc<Grid>,
    left: DMatrix<f64>,
    coef: DMatrix<f64>,
    right: DMatrix<f64>,
}

impl LowRankKernel {
    pub fn new(
        grid_u: Arc<Grid>,
        grid_v: Arc<Grid>,
        left: DMatrix<f64>,
        coef: DMatrix<f64>,
        right: DMatrix<f64>,
    ) -> Result<LowRankKernel> {
        if left.nrows() != grid_u.len()
            || right.nrows() != grid_v.len()
            || coef.nrows() != left.ncols()
            || coef.ncols() != right.ncols()
        {
            return Err(Error::Structural("low-rank kernel factor shapes disagree".into()));
        }
        Ok(LowRankKernel {
            grid_u,
            grid_v,
            left,
            coef,
            right,
        })
    }

    pub fn zero(grid_u: Arc<Grid>, grid_v: Arc<Grid>) -> LowRankKernel {
        let (gu, gv) = (grid_u.len(), grid_v.len());
        LowRankKernel {
            grid_u,
            grid_v,
            left: DMatrix::zeros(gu, 0),
            coef: DMatrix::zeros(0, 0),
            right: DMatrix::zeros(gv, 0),
        }
    }

    pub fn grid_u(&self) -> &Arc<Grid> {
        &self.grid_u
    }

    pub fn grid_v(&self) -> &Arc<Grid> {
        &self.grid_v
    }

    pub fn coef(&self) -> &DMatrix<f64> {
        &self.coef
    }

    pub fn left(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn right(&self) -> &DMatrix<f64> {
        &self.right
    }

    pub fn to_kernel(&self) -> Kernel {
        let values = &self.left * &self.coef * self.right.transpose();
        Kernel {
            grid_u: self.grid_u.clone(),
            grid_v: self.grid_v.clone(),
            values,
        }
    }

    /// `∫∫ self(u,v) other(u,v) du dv`.
    pub fn hs_inner(&self, other: &LowRankKernel) -> Result<f64> {
        check_grid(&self.grid_u, &other.grid_u, "kernel inner product")?;
        check_grid(&self.grid_v, &other.grid_v, "kernel inner product")?;
        if self.coef.is_empty() || other.coef.is_empty() {
            return Ok(0.0);
        }
        let gu = weighted_gram(self.grid_u.weights(), &self.left, &other.left);
        let gv = weighted_gram(self.grid_v.weights(), &self.right, &other.right);
        // tr(C1ᵀ Gu C2 Gvᵀ)
        let m = &gu * &other.coef * gv.transpose();
        Ok(self.coef.component_mul(&m).sum())
    }

    pub fn hs_norm(&self) -> f64 {
        self.hs_inner(self).map(|v| v.max(0.0).sqrt()).unwrap_or(0.0)
    }

    /// `‖self − other‖_HS`.
    pub fn hs_distance(&self, other: &LowRankKernel) -> Result<f64> {
        if self.left == other.left && self.right == other.right && self.grid_u == other.grid_u && self.grid_v == other.grid_v {
            // shared factors: difference the coefficients, no cancellation
            let diff = LowRankKernel {
                coef: &self.coef - &other.coef,
                ..self.clone()
            };
            return Ok(diff.hs_norm());
        }
        let a = self.hs_inner(self)?;
        let b = other.hs_inner(other)?;
        let c = self.hs_inner(other)?;
        Ok((a + b - 2.0 * c).max(0.0).sqrt())
    }
}

/// `Aᵀ diag(w) B`.
pub(crate) fn weighted_gram(w: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut wb = b.clone();
    for (r, &wr) in w.iter().enumerate() {
        wb.row_mut(r).scale_mut(wr);
    }
    a.transpose() * wb
}

/// An `n × p` panel of curves sharing one grid: `W_tj(u_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalPanel {
    grid: Arc<Grid>,
    n: usize,
    p: usize,
    // (t, j, k) -> (t * p + j) * G + k
    data: Vec<f64>,
}

impl FunctionalPanel {
    pub fn new(grid: Arc<Grid>, n: usize, p: usize, data: Vec<f64>) -> Result<FunctionalPanel> {
        if data.len() != n * p * grid.len() {
            return Err(Error::Structural(format!(
                "panel data has {} values, expected {}x{}x{}",
                data.len(),
                n,
                p,
                grid.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let g = grid.len();
            return Err(Error::Data(format!(
                "non-finite panel value at t={}, j={}, k={}",
                pos / (p * g),
                (pos / g) % p,
                pos % g
            )));
        }
        Ok(FunctionalPanel { grid, n, p, data })
    }

    pub fn zeros(grid: Arc<Grid>, n: usize, p: usize) -> FunctionalPanel {
        let data = vec![0.0; n * p * grid.len()];
        FunctionalPanel { grid, n, p, data }
    }

    /// Builds a panel from one `n × G` matrix per series.
    pub fn from_series(grid: Arc<Grid>, series: &[DMatrix<f64>]) -> Result<FunctionalPanel> {
        let p = series.len();
        let n = series.first().map_or(0, |m| m.nrows());
        let g = grid.len();
        let mut data = vec![0.0; n * p * g];
        for (j, m) in series.iter().enumerate() {
            if m.nrows() != n || m.ncols() != g {
                return Err(Error::Structural(format!("series {j} has shape {:?}", m.shape())));
            }
            for t in 0..n {
                for k in 0..g {
                    data[(t * p + j) * g + k] = m[(t, k)];
                }
            }
        }
        FunctionalPanel::new(grid, n, p, data)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn curve_values(&self, t: usize, j: usize) -> &[f64] {
        let g = self.grid.len();
        let start = (t * self.p + j) * g;
        &self.data[start..start + g]
    }

    pub fn curve(&self, t: usize, j: usize) -> Curve {
        Curve {
            grid: self.grid.clone(),
            values: self.curve_values(t, j).to_vec(),
        }
    }

    /// Series `j` as an `n × G` matrix (row `t` holds `W_tj` on the grid).
    pub fn series_matrix(&self, j: usize) -> DMatrix<f64> {
        let g = self.grid.len();
        DMatrix::from_fn(self.n, g, |t, k| self.data[(t * self.p + j) * g + k])
    }

    /// Rows `range` of the panel, as a new panel.
    pub fn slice_time(&self, range: std::ops::Range<usize>) -> Result<FunctionalPanel> {
        if range.end > self.n || range.start > range.end {
            return Err(Error::Domain(format!("time range {range:?} outside 0..{}", self.n)));
        }
        let row = self.p * self.grid.len();
        let data = self.data[range.start * row..range.end * row].to_vec();
        Ok(FunctionalPanel {
            grid: self.grid.clone(),
            n: range.end - range.start,
            p: self.p,
            data,
        })
    }

    /// Keeps only the listed series, in the given order.
    pub fn select_series(&self, series: &[usize]) -> Result<FunctionalPanel> {
        if let Some(&bad) = series.iter().find(|&&j| j >= self.p) {
            return Err(Error::Domain(format!("series {bad} outside 0..{}", self.p)));
        }
        let g = self.grid.len();
        let mut data = Vec::with_capacity(self.n * series.len() * g);
        for t in 0..self.n {
            for &j in series {
                data.extend_from_slice(self.curve_values(t, j));
            }
        }
        Ok(FunctionalPanel {
            grid: self.grid.clone(),
            n: self.n,
            p: series.len(),
            data,
        })
    }

    /// Elementwise `self − other`.
    pub fn sub(&self, other: &FunctionalPanel) -> Result<FunctionalPanel> {
        check_grid(&self.grid, &other.grid, "panel subtraction")?;
        if self.n != other.n || self.p != other.p {
            return Err(Error::Structural("panel shapes differ".into()));
        }
        Ok(FunctionalPanel {
            grid: self.grid.clone(),
            n: self.n,
            p: self.p,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }
}
