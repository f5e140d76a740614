//! Function bases on an interval, quadrature inner products and projection
//! of discretely observed curves onto truncated coefficient vectors.
//!
//! Every [`Basis`] built here is orthonormal with respect to the discrete
//! quadrature inner product of its [`Grid`], so coefficient algebra
//! (Parseval, `A'ZA`) holds exactly on the grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FsarError, Result};

const CUBIC: usize = 3;

/// Evaluation grid on an interval with composite trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Grid on the given abscissae with trapezoid weights.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        check_points(&points)?;
        let n = points.len();
        let mut weights = vec![0.0; n];
        for i in 0..n - 1 {
            let h = 0.5 * (points[i + 1] - points[i]);
            weights[i] += h;
            weights[i + 1] += h;
        }
        Ok(Grid { points, weights })
    }

    /// `n` equally spaced points covering `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(FsarError::invalid(format!("grid interval [{lo}, {hi}] is empty")));
        }
        if n < 4 {
            return Err(FsarError::invalid("a grid needs at least 4 points"));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
        points[n - 1] = hi;
        Grid::new(points)
    }

    /// Grid with caller-supplied quadrature weights.
    pub fn with_weights(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_points(&points)?;
        if weights.len() != points.len() {
            return Err(FsarError::invalid("grid weights and points differ in length"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(FsarError::invalid("grid weights must be positive"));
        }
        let length = points[points.len() - 1] - points[0];
        let total: f64 = weights.iter().sum();
        if ((total - length) / length).abs() > 1e-9 {
            return Err(FsarError::invalid(format!(
                "grid weights sum to {total}, interval length is {length}"
            )));
        }
        Ok(Grid { points, weights })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Length of the interval `T`.
    pub fn length(&self) -> f64 {
        self.hi() - self.lo()
    }
}

fn check_points(points: &[f64]) -> Result<()> {
    if points.len() < 4 {
        return Err(FsarError::invalid("a grid needs at least 4 points"));
    }
    if points.iter().any(|t| !t.is_finite()) {
        return Err(FsarError::invalid("grid points must be finite"));
    }
    if points.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FsarError::invalid("grid points must be strictly increasing"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Fourier,
    #[serde(rename = "bspline")]
    OrthonormalizedBSpline,
}

impl std::str::FromStr for BasisKind {
    type Err = FsarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fourier" => Ok(BasisKind::Fourier),
            "bspline" | "b-spline" | "spline" => Ok(BasisKind::OrthonormalizedBSpline),
            other => Err(FsarError::invalid(format!("unknown basis kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for BasisKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisKind::Fourier => f.write_str("fourier"),
            BasisKind::OrthonormalizedBSpline => f.write_str("bspline"),
        }
    }
}

/// `k` basis functions tabulated on a grid.
///
/// `values` is `k x N`; row `j` holds `phi_j(t_1..t_N)`.
#[derive(Debug, Clone)]
pub struct Basis {
    kind: BasisKind,
    values: DMatrix<f64>,
    gram: DMatrix<f64>,
    grid: Grid,
}

impl Basis {
    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `Phi_k(t_i)` as a column vector.
    pub fn column_at(&self, i: usize) -> DVector<f64> {
        self.values.column(i).into_owned()
    }
}

/// Build an orthonormal basis of size `k` on `grid`.
///
/// Raw Fourier or cubic B-spline functions are orthonormalized against the
/// quadrature inner product through the inverse Cholesky factor of their
/// Gram matrix. For Fourier functions on a uniform grid that factor is the
/// identity up to rounding.
pub fn make_basis(kind: BasisKind, k: usize, grid: &Grid) -> Result<Basis> {
    if k == 0 {
        return Err(FsarError::invalid("basis size k must be at least 1"));
    }
    if k > grid.len() {
        return Err(FsarError::invalid(format!(
            "basis size k = {k} exceeds the number of grid points {}",
            grid.len()
        )));
    }
    let raw = match kind {
        BasisKind::Fourier => fourier_values(k, grid),
        BasisKind::OrthonormalizedBSpline => {
            if k < CUBIC + 1 {
                return Err(FsarError::invalid("cubic B-spline bases need k >= 4"));
            }
            bspline_values(k, grid)
        }
    };
    let raw_gram = gram_matrix(&raw, grid);
    let chol = raw_gram
        .clone()
        .cholesky()
        .ok_or_else(|| FsarError::DegenerateBasis("Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let diag_max = l.diagonal().max();
    let diag_min = l.diagonal().min();
    if diag_min <= 1e-8 * diag_max {
        return Err(FsarError::DegenerateBasis(format!(
            "Gram matrix is numerically singular (Cholesky pivot ratio {:.2e})",
            diag_min / diag_max
        )));
    }
    let values = l
        .solve_lower_triangular(&raw)
        .ok_or_else(|| FsarError::DegenerateBasis("triangular solve failed".into()))?;
    let gram = gram_matrix(&values, grid);
    Ok(Basis {
        kind,
        values,
        gram,
        grid: grid.clone(),
    })
}

/// Quadrature Gram matrix `G_jl = sum_i w_i phi_j(t_i) phi_l(t_i)`.
pub fn gram_matrix(values: &DMatrix<f64>, grid: &Grid) -> DMatrix<f64> {
    let w = DVector::from_column_slice(grid.weights());
    let mut weighted = values.clone();
    for mut row in weighted.row_iter_mut() {
        row.component_mul_assign(&w.transpose());
    }
    let g = &weighted * values.transpose();
    0.5 * (&g + g.transpose())
}

fn fourier_values(k: usize, grid: &Grid) -> DMatrix<f64> {
    let len = grid.length();
    let lo = grid.lo();
    let c0 = 1.0 / len.sqrt();
    let c = (2.0 / len).sqrt();
    DMatrix::from_fn(k, grid.len(), |j, i| {
        let t = grid.points()[i] - lo;
        if j == 0 {
            return c0;
        }
        let m = j.div_ceil(2) as f64;
        let arg = 2.0 * std::f64::consts::PI * m * t / len;
        if j % 2 == 1 {
            c * arg.cos()
        } else {
            c * arg.sin()
        }
    })
}

/// Clamped cubic B-spline knot vector with `k - 4` equally spaced interior knots.
pub fn cubic_knots(k: usize, lo: f64, hi: f64) -> Vec<f64> {
    let intervals = k - CUBIC;
    let mut knots = Vec::with_capacity(k + CUBIC + 1);
    knots.extend(std::iter::repeat_n(lo, CUBIC));
    for i in 0..=intervals {
        knots.push(lo + (hi - lo) * i as f64 / intervals as f64);
    }
    knots[CUBIC + intervals] = hi;
    knots.extend(std::iter::repeat_n(hi, CUBIC));
    knots
}

/// Raw (non-orthonormal) cubic B-spline values, `k x N`.
pub fn bspline_values(k: usize, grid: &Grid) -> DMatrix<f64> {
    let knots = cubic_knots(k, grid.lo(), grid.hi());
    let mut out = DMatrix::zeros(k, grid.len());
    let mut local = [0.0; CUBIC + 1];
    for (i, &t) in grid.points().iter().enumerate() {
        let span = find_span(&knots, k, t);
        basis_funs(&knots, span, t, &mut local);
        for (r, v) in local.iter().enumerate() {
            out[(span - CUBIC + r, i)] = *v;
        }
    }
    out
}

fn find_span(knots: &[f64], k: usize, t: f64) -> usize {
    if t >= knots[k] {
        return k - 1;
    }
    if t <= knots[CUBIC] {
        return CUBIC;
    }
    let (mut low, mut high) = (CUBIC, k);
    let mut mid = (low + high) / 2;
    while t < knots[mid] || t >= knots[mid + 1] {
        if t < knots[mid] {
            high = mid;
        } else {
            low = mid;
        }
        mid = (low + high) / 2;
    }
    mid
}

// Nonzero cubic basis functions N_{span-3..span} at t (de Boor / Cox recursion).
fn basis_funs(knots: &[f64], span: usize, t: f64, out: &mut [f64; CUBIC + 1]) {
    let mut left = [0.0; CUBIC + 1];
    let mut right = [0.0; CUBIC + 1];
    out[0] = 1.0;
    for j in 1..=CUBIC {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

/// `n` curves observed on a shared grid.
#[derive(Debug, Clone)]
pub struct FunctionalSample {
    curves: DMatrix<f64>,
    grid: Grid,
}

impl FunctionalSample {
    /// `curves` is `n x N`, one curve per row.
    pub fn new(curves: DMatrix<f64>, grid: Grid) -> Result<Self> {
        if curves.ncols() != grid.len() {
            return Err(FsarError::invalid(format!(
                "curves have {} columns, grid has {} points",
                curves.ncols(),
                grid.len()
            )));
        }
        if curves.nrows() < 2 {
            return Err(FsarError::invalid("a functional sample needs at least 2 curves"));
        }
        if curves.iter().any(|v| !v.is_finite()) {
            return Err(FsarError::invalid("curves contain non-finite values"));
        }
        Ok(FunctionalSample { curves, grid })
    }

    pub fn curves(&self) -> &DMatrix<f64> {
        &self.curves
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.curves.nrows()
    }
}

/// Basis coefficients `a_ij` of a sample; the design matrix `A` (`n x k`).
#[derive(Debug, Clone)]
pub struct CoefficientMatrix {
    coeffs: DMatrix<f64>,
}

impl CoefficientMatrix {
    pub fn new(coeffs: DMatrix<f64>) -> Self {
        CoefficientMatrix { coeffs }
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn basis_size(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn n(&self) -> usize {
        self.coeffs.nrows()
    }
}

/// Quadrature projection `a_ij = <X_i, phi_j>`.
pub fn project(sample: &FunctionalSample, basis: &Basis) -> Result<CoefficientMatrix> {
    if sample.grid() != basis.grid() {
        return Err(FsarError::invalid(
            "sample grid differs from the grid the basis was built on",
        ));
    }
    Ok(CoefficientMatrix::new(project_rows(sample.curves(), basis)))
}

/// Projection of each row of `curves` (any row count, including one).
pub fn project_rows(curves: &DMatrix<f64>, basis: &Basis) -> DMatrix<f64> {
    let mut weighted = curves.clone();
    let w = DVector::from_column_slice(basis.grid().weights()).transpose();
    for mut row in weighted.row_iter_mut() {
        row.component_mul_assign(&w);
    }
    weighted * basis.values().transpose()
}

/// Projection of a single function tabulated on the basis grid.
pub fn project_function(f: &[f64], basis: &Basis) -> Result<DVector<f64>> {
    check_len(f.len(), basis.grid().len())?;
    let w = basis.grid().weights();
    Ok(DVector::from_fn(basis.size(), |j, _| {
        f.iter()
            .zip(w)
            .enumerate()
            .map(|(i, (fi, wi))| fi * wi * basis.values()[(j, i)])
            .sum()
    }))
}

/// `<f, g> = sum_i w_i f(t_i) g(t_i)`.
pub fn inner_product(f: &[f64], g: &[f64], grid: &Grid) -> Result<f64> {
    check_len(f.len(), grid.len())?;
    check_len(g.len(), grid.len())?;
    Ok(f.iter().zip(g).zip(grid.weights()).map(|((a, b), w)| w * a * b).sum())
}

/// `Phi_k(t)' b` on every grid point.
pub fn evaluate_function(coeffs: &[f64], basis: &Basis) -> Result<Vec<f64>> {
    if coeffs.len() != basis.size() {
        return Err(FsarError::invalid(format!(
            "{} coefficients for a basis of size {}",
            coeffs.len(),
            basis.size()
        )));
    }
    let b = DVector::from_column_slice(coeffs);
    Ok((basis.values().transpose() * b).as_slice().to_vec())
}

/// Bound `4 (sum_{j>k} b_j^2)(sum_{j>k} sigma_j^2)` on the squared error of
/// the truncated regression.
pub fn truncation_tail_bound(b_tail_sq: f64, sigma_tail_sq: f64) -> Result<f64> {
    if !(b_tail_sq >= 0.0 && sigma_tail_sq >= 0.0) {
        return Err(FsarError::invalid("tail sums must be non-negative"));
    }
    Ok(4.0 * b_tail_sq * sigma_tail_sq)
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(FsarError::invalid(format!(
            "vector of length {got} does not match grid of {want} points"
        )));
    }
    Ok(())
}
