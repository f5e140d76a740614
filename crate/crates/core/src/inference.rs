//! Pointwise confidence bands for `beta(t)` and the `T_n` test of
//! `H0: beta = beta0`.
//!
//! The test works on transformed data `(Z, Q)` obtained from `(X, Y)` by a
//! SAR transform, projects `Z` on a basis and normalizes the empirical cross
//! operator `Delta_n` by the leading eigenpairs of the covariance operator
//! `Gamma_n`:
//!
//! `T_n = (n sum_{j <= k_n} <Delta_n, V_j>^2 / lambda_j / sigma2 - k_n) / sqrt(k_n)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen, LU};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::{project, Basis, CoefficientMatrix, FunctionalSample, Grid};
use crate::error::{FsarError, Result};
use crate::estimate::SarFit;
use crate::spatial::{rho_interval, SpatialWeights};

/// Largest condition number of `I - rho W` accepted by the transforms.
pub const MAX_CONDITION: f64 = 1e12;

const DEGENERATE_EIGEN: f64 = 1e-12;
const RANK_EIGEN: f64 = 1e-10;
const DEFAULT_KN_RATIO: f64 = 1e-6;

/// Upper standard-normal quantile `z_{1 - alpha/2}`.
pub fn normal_upper_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FsarError::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - 0.5 * alpha))
}

/// Pointwise normal band `beta_hat(t) +- z sqrt(Phi(t)' C Phi(t))`.
#[derive(Debug, Clone, Serialize)]
pub struct ConfidenceBand {
    #[serde(skip)]
    pub grid: Grid,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

impl ConfidenceBand {
    pub fn half_width(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.center).map(|(u, c)| u - c).collect()
    }
}

/// Band at confidence `level` from the fitted coefficients and their
/// covariance `sigma2_hat * Sigma^{-1}`.
pub fn confidence_band(fit: &SarFit, basis: &Basis, level: f64) -> Result<ConfidenceBand> {
    if !(level > 0.0 && level < 1.0) {
        return Err(FsarError::invalid(format!(
            "band level must lie in (0, 1), got {level}"
        )));
    }
    let k = basis.size();
    if fit.b_hat.len() != k || fit.coef_cov.nrows() != k || fit.coef_cov.ncols() != k {
        return Err(FsarError::invalid(format!(
            "fit has {} coefficients, basis has {k} functions",
            fit.b_hat.len()
        )));
    }
    let cov = &fit.coef_cov;
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(FsarError::InvalidFit("coefficient covariance is not finite".into()));
    }
    let sym = 0.5 * (cov + cov.transpose());
    let eig = SymmetricEigen::new(sym.clone()).eigenvalues;
    let scale = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if eig.min() < -1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(FsarError::InvalidFit(format!(
            "coefficient covariance is not positive semi-definite (eigenvalue {:.3e})",
            eig.min()
        )));
    }
    // 1 - (1 - level) / 2 = (1 + level) / 2.
    let z = normal_upper_quantile(1.0 - level)?;
    let phi = basis.values();
    let center = phi.transpose() * &fit.b_hat;
    let cphi = &sym * phi;
    let mut lower = Vec::with_capacity(phi.ncols());
    let mut upper = Vec::with_capacity(phi.ncols());
    for i in 0..phi.ncols() {
        let var = phi.column(i).dot(&cphi.column(i)).max(0.0);
        let h = z * var.sqrt();
        lower.push(center[i] - h);
        upper.push(center[i] + h);
    }
    Ok(ConfidenceBand {
        grid: basis.grid().clone(),
        center: center.as_slice().to_vec(),
        lower,
        upper,
        level,
    })
}

/// LU factorization of `I - rho W` after the admissibility and
/// conditioning checks.
fn sar_solver(rho: f64, w: &SpatialWeights) -> Result<LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    rho_interval(w)?.check(rho)?;
    let n = w.n();
    let m = DMatrix::identity(n, n) - rho * w.matrix();
    let condition = if w.is_symmetric() {
        let (lo, hi) = w
            .eigenvalues()
            .iter()
            .map(|l| (1.0 - rho * l).abs())
            .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
        hi / lo
    } else {
        let sv = m.clone().svd(false, false).singular_values;
        sv.max() / sv.min()
    };
    if !(condition <= MAX_CONDITION) {
        return Err(FsarError::IllConditioned { condition });
    }
    Ok(m.lu())
}

/// `(I - rho W) Q = Y`, solved without forming the inverse.
pub fn transform_response(y: &DVector<f64>, rho: f64, w: &SpatialWeights) -> Result<DVector<f64>> {
    if y.len() != w.n() {
        return Err(FsarError::invalid(format!("{} responses for {} areas", y.len(), w.n())));
    }
    sar_solver(rho, w)?.solve(y).ok_or(FsarError::IllConditioned {
        condition: f64::INFINITY,
    })
}

/// `Z_i(t) = sum_j c_ij X_j(t)` with `c = (I - rho W)^{-1}`, one solve for
/// the whole curve matrix.
pub fn transform_curves(sample: &FunctionalSample, rho: f64, w: &SpatialWeights) -> Result<FunctionalSample> {
    if sample.n() != w.n() {
        return Err(FsarError::invalid(format!("{} curves for {} areas", sample.n(), w.n())));
    }
    let z = sar_solver(rho, w)?
        .solve(sample.curves())
        .ok_or(FsarError::IllConditioned {
            condition: f64::INFINITY,
        })?;
    FunctionalSample::new(z, sample.grid().clone())
}

/// Eigen-structure of `Gamma_n = C'C / n` and the coordinates of
/// `Delta_n = C'Q / n`.
#[derive(Debug, Clone)]
pub struct EmpiricalOperators {
    /// Descending.
    pub eigenvalues: DVector<f64>,
    /// Column `j` holds the coordinates of `V_j`.
    pub eigenvectors: DMatrix<f64>,
    pub delta: DVector<f64>,
    pub n: usize,
}

impl EmpiricalOperators {
    /// Coordinates of `A_n = sum_{j <= k_n} lambda_j^{-1/2} <V_j, .> V_j`.
    pub fn normalizer(&self, k_n: usize) -> DMatrix<f64> {
        let k = self.eigenvectors.nrows();
        let mut a = DMatrix::zeros(k, k);
        for j in 0..k_n.min(self.eigenvalues.len()) {
            let v = self.eigenvectors.column(j);
            a += (v * v.transpose()) / self.eigenvalues[j].sqrt();
        }
        a
    }

    /// `|| sqrt(n) Delta_n A_n ||^2 = n sum_{j <= k_n} <Delta_n, V_j>^2 / lambda_j`.
    pub fn normalized_norm(&self, k_n: usize) -> f64 {
        let ad = self.normalizer(k_n) * &self.delta;
        self.n as f64 * ad.norm_squared()
    }

    /// Number of eigenvalues above `ratio * lambda_1`.
    pub fn default_k_n(&self) -> usize {
        let l1 = self.eigenvalues[0];
        self.eigenvalues.iter().filter(|l| **l > DEFAULT_KN_RATIO * l1).count()
    }
}

/// Operators from basis coefficients of the transformed curves.
pub fn operators_from_coefficients(c: &CoefficientMatrix, q: &DVector<f64>) -> Result<EmpiricalOperators> {
    let n = c.n();
    if q.len() != n {
        return Err(FsarError::invalid(format!("{} responses for {n} curves", q.len())));
    }
    if n == 0 {
        return Err(FsarError::invalid("no curves"));
    }
    let cm = c.coeffs();
    let nf = n as f64;
    let gamma = cm.transpose() * cm / nf;
    let gamma = 0.5 * (&gamma + gamma.transpose());
    let delta = cm.transpose() * q / nf;
    let eig = SymmetricEigen::new(gamma);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    if eigenvalues[0] < DEGENERATE_EIGEN {
        return Err(FsarError::DegenerateCovariance);
    }
    let eigenvectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    Ok(EmpiricalOperators {
        eigenvalues,
        eigenvectors,
        delta,
        n,
    })
}

/// Operators of transformed curves `z` and responses `q` in `basis`.
pub fn empirical_operators(z: &FunctionalSample, q: &DVector<f64>, basis: &Basis) -> Result<EmpiricalOperators> {
    operators_from_coefficients(&project(z, basis)?, q)
}

/// How `(X, Y)` are mapped before the test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestTransform {
    /// `Q = (I - rho W) Y`, `Z = (I - rho W) X`: errors become iid.
    #[default]
    Decorrelate,
    /// `Q = (I - rho W)^{-1} Y`, `Z = (I - rho W)^{-1} X`.
    Inverse,
}

impl std::str::FromStr for TestTransform {
    type Err = FsarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decorrelate" => Ok(TestTransform::Decorrelate),
            "inverse" => Ok(TestTransform::Inverse),
            other => Err(FsarError::invalid(format!(
                "unknown test transform '{other}' (expected decorrelate or inverse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TestOptions {
    /// `None` picks the count of eigenvalues above `1e-6 * lambda_1`.
    pub k_n: Option<usize>,
    pub alpha: f64,
    pub sigma2_hat: f64,
    pub transform: TestTransform,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    pub t_n: f64,
    pub k_n: usize,
    pub alpha: f64,
    pub reject: bool,
    pub critical_value: f64,
    pub eigenvalues_used: Vec<f64>,
    pub transform: TestTransform,
}

/// `T_n` for `H0: beta = beta0` (`None` means `beta0 = 0`).
pub fn test_beta(
    sample: &FunctionalSample,
    y: &DVector<f64>,
    w: &SpatialWeights,
    rho: f64,
    beta0: Option<&[f64]>,
    basis: &Basis,
    opts: &TestOptions,
) -> Result<TestResult> {
    if !(opts.sigma2_hat > 0.0 && opts.sigma2_hat.is_finite()) {
        return Err(FsarError::invalid(format!(
            "sigma2_hat must be positive, got {}",
            opts.sigma2_hat
        )));
    }
    let critical = std::f64::consts::SQRT_2 * normal_upper_quantile(opts.alpha)?;
    if sample.grid() != basis.grid() {
        return Err(FsarError::invalid("sample grid differs from the basis grid"));
    }
    let (z, mut q) = match opts.transform {
        TestTransform::Inverse => (transform_curves(sample, rho, w)?, transform_response(y, rho, w)?),
        TestTransform::Decorrelate => {
            if y.len() != w.n() || sample.n() != w.n() {
                return Err(FsarError::invalid(format!(
                    "{} responses and {} curves for {} areas",
                    y.len(),
                    sample.n(),
                    w.n()
                )));
            }
            rho_interval(w)?.check(rho)?;
            let n = w.n();
            let m = DMatrix::identity(n, n) - rho * w.matrix();
            let z = FunctionalSample::new(&m * sample.curves(), sample.grid().clone())?;
            (z, &m * y)
        }
    };
    if let Some(b0) = beta0 {
        if b0.len() != sample.grid().len() {
            return Err(FsarError::invalid(format!(
                "beta0 has {} values for a grid of {}",
                b0.len(),
                sample.grid().len()
            )));
        }
        if b0.iter().any(|v| *v != 0.0) {
            q -= integrals(&z, b0)?;
        }
    }
    let ops = empirical_operators(&z, &q, basis)?;
    let k_n = match opts.k_n {
        Some(k) if k == 0 || k > ops.eigenvalues.len() => {
            return Err(FsarError::invalid(format!(
                "k_n = {k} must lie in 1..={}",
                ops.eigenvalues.len()
            )))
        }
        Some(k) => k,
        None => ops.default_k_n(),
    };
    let lambda = ops.eigenvalues[k_n - 1];
    if lambda < RANK_EIGEN {
        return Err(FsarError::RankDeficient {
            k_n,
            eigenvalue: lambda,
        });
    }
    let kf = k_n as f64;
    let t_n = (ops.normalized_norm(k_n) / opts.sigma2_hat - kf) / kf.sqrt();
    Ok(TestResult {
        t_n,
        k_n,
        alpha: opts.alpha,
        reject: t_n.abs() > critical,
        critical_value: critical,
        eigenvalues_used: ops.eigenvalues.rows(0, k_n).iter().copied().collect(),
        transform: opts.transform,
    })
}

fn check_delta_dims(x: &FunctionalSample, y: &DVector<f64>, c: &DMatrix<f64>, probe: &[f64]) -> Result<()> {
    let n = x.n();
    if y.len() != n || c.nrows() != n || c.ncols() != n || probe.len() != x.grid().len() {
        return Err(FsarError::invalid(format!(
            "dimension mismatch: {n} curves, {} responses, {}x{} transform, probe of {} on a grid of {}",
            y.len(),
            c.nrows(),
            c.ncols(),
            probe.len(),
            x.grid().len()
        )));
    }
    Ok(())
}

fn probe_products(x: &FunctionalSample, probe: &[f64]) -> DVector<f64> {
    // <X_k, x> for every k; dimensions are checked by the caller.
    integrals(x, probe).expect("probe length checked")
}

/// `Delta_n x = (1/n) sum_i <Z_i, x> Q_i` with `Z = c X`, `Q = c Y`.
pub fn delta_n_direct(x: &FunctionalSample, y: &DVector<f64>, c: &DMatrix<f64>, probe: &[f64]) -> Result<f64> {
    check_delta_dims(x, y, c, probe)?;
    let zx = c * probe_products(x, probe);
    let q = c * y;
    Ok(zx.dot(&q) / x.n() as f64)
}

/// `(1/n) sum_j sum_k (sum_i c_ji c_ik) <X_k, x> Y_j`.
///
/// Equal to [`delta_n_direct`] when `c` is symmetric, as it is for
/// `(I - rho W)^{-1}` with symmetric `W`.
pub fn delta_n_expanded(x: &FunctionalSample, y: &DVector<f64>, c: &DMatrix<f64>, probe: &[f64]) -> Result<f64> {
    check_delta_dims(x, y, c, probe)?;
    let n = x.n();
    let xp = probe_products(x, probe);
    let mut total = 0.0;
    for j in 0..n {
        for k in 0..n {
            let cc: f64 = (0..n).map(|i| c[(j, i)] * c[(i, k)]).sum();
            total += cc * xp[k] * y[j];
        }
    }
    Ok(total / n as f64)
}

/// `<X_i, beta>` for each curve, by quadrature.
pub fn integrals(sample: &FunctionalSample, beta: &[f64]) -> Result<DVector<f64>> {
    if beta.len() != sample.grid().len() {
        return Err(FsarError::invalid(format!(
            "function has {} values for a grid of {}",
            beta.len(),
            sample.grid().len()
        )));
    }
    let wb = DVector::from_iterator(beta.len(), beta.iter().zip(sample.grid().weights()).map(|(b, w)| b * w));
    Ok(sample.curves() * wb)
}
