//! The truncated functional SAR model: least-squares objective, Gaussian
//! log-likelihood and their analytic derivatives.
//!
//! With `r = Y - A b` and `M = I - rho W` (W symmetric):
//!
//! * `ls(b, rho) = r' M^2 r`
//! * `l(b, rho, s2) = -(n/2) ln s2 + ln|M| - ls(b, rho) / (2 s2)`
//!
//! The constant `-(n/2) ln 2pi` is omitted.

use nalgebra::{DMatrix, DVector};

use crate::basis::CoefficientMatrix;
use crate::error::{FsarError, Result};
use crate::spatial::{rho_interval, RhoInterval, SpatialWeights};

/// Responses, design matrix and symmetric weights of a truncated model.
#[derive(Debug, Clone)]
pub struct TruncatedModel {
    y: DVector<f64>,
    a: DMatrix<f64>,
    w: SpatialWeights,
    interval: RhoInterval,
    cross: CrossProducts,
}

/// Cross products of `A` and `Y` with `I`, `W`, `W^2`, so that
/// `A'ZA = A'A - 2 rho A'WA + rho^2 A'W^2A` costs `O(k^2)` per `rho`.
#[derive(Debug, Clone)]
struct CrossProducts {
    ata: DMatrix<f64>,
    awa: DMatrix<f64>,
    aw2a: DMatrix<f64>,
    aty: DVector<f64>,
    awy: DVector<f64>,
    aw2y: DVector<f64>,
}

impl TruncatedModel {
    pub fn new(y: DVector<f64>, a: &CoefficientMatrix, w: SpatialWeights) -> Result<Self> {
        let n = y.len();
        if a.n() != n || w.n() != n {
            return Err(FsarError::invalid(format!(
                "dimension mismatch: {} responses, {} coefficient rows, {}x{} weights",
                n,
                a.n(),
                w.n(),
                w.n()
            )));
        }
        if !w.is_symmetric() {
            return Err(FsarError::invalid(
                "the truncated model requires a symmetric weights matrix; symmetrize W first",
            ));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(FsarError::invalid("responses contain non-finite values"));
        }
        let interval = rho_interval(&w)?;
        let a = a.coeffs().clone();
        let wm = w.matrix();
        let wa = wm * &a;
        let wy = wm * &y;
        let cross = CrossProducts {
            ata: a.transpose() * &a,
            awa: a.transpose() * &wa,
            aw2a: wa.transpose() * &wa,
            aty: a.transpose() * &y,
            awy: a.transpose() * &wy,
            aw2y: wa.transpose() * &wy,
        };
        Ok(TruncatedModel {
            y,
            a,
            w,
            interval,
            cross,
        })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn weights(&self) -> &SpatialWeights {
        &self.w
    }

    pub fn interval(&self) -> RhoInterval {
        self.interval
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Truncation level `k`.
    pub fn k(&self) -> usize {
        self.a.ncols()
    }

    pub fn residual(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.k() {
            return Err(FsarError::invalid(format!(
                "coefficient vector has length {}, model has k = {}",
                b.len(),
                self.k()
            )));
        }
        Ok(&self.y - &self.a * b)
    }

    /// `Sigma(rho) = A'(I - rho W)^2 A`.
    pub fn information(&self, rho: f64) -> DMatrix<f64> {
        let c = &self.cross;
        let m = &c.ata - 2.0 * rho * &c.awa + rho * rho * &c.aw2a;
        0.5 * (&m + m.transpose())
    }

    /// `A'(I - rho W)^2 Y`.
    pub fn score_rhs(&self, rho: f64) -> DVector<f64> {
        let c = &self.cross;
        &c.aty - 2.0 * rho * &c.awy + rho * rho * &c.aw2y
    }

    /// Generalized least-squares coefficients at fixed `rho`.
    pub fn gls_coefficients(&self, rho: f64) -> Result<DVector<f64>> {
        let info = self.information(rho);
        let chol = info.cholesky().ok_or_else(|| {
            FsarError::SingularDesign(format!("A'(I - rho W)^2 A is not positive definite at rho = {rho}"))
        })?;
        let l = chol.l();
        let d = l.diagonal();
        if d.min() <= 1e-7 * d.max() {
            return Err(FsarError::SingularDesign(format!(
                "information matrix condition exceeds 1e14 at rho = {rho}"
            )));
        }
        Ok(chol.solve(&self.score_rhs(rho)))
    }

    /// `(r'r, r'Wr, r'W^2 r)` for a residual vector.
    pub fn residual_forms(&self, r: &DVector<f64>) -> (f64, f64, f64) {
        let wr = self.w.matrix() * r;
        (r.dot(r), r.dot(&wr), wr.dot(&wr))
    }
}

/// Slopes, autoregression parameter and noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint {
    pub b: DVector<f64>,
    pub rho: f64,
    pub sigma2: f64,
}

impl ParamPoint {
    pub fn new(b: DVector<f64>, rho: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(FsarError::invalid(format!("sigma2 must be positive, got {sigma2}")));
        }
        Ok(ParamPoint { b, rho, sigma2 })
    }
}

/// `eps' eps = (Y - A b)'(I - rho W)^2 (Y - A b)`.
pub fn ls_objective(m: &TruncatedModel, b: &DVector<f64>, rho: f64) -> Result<f64> {
    m.interval().check(rho)?;
    let r = m.residual(b)?;
    let eps = &r - rho * (m.weights().matrix() * &r);
    Ok(eps.norm_squared())
}

/// `-2 A'ZY + 2 A'ZA b`, evaluated as `-2 A' Z r`.
pub fn ls_grad_b(m: &TruncatedModel, b: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    m.interval().check(rho)?;
    let r = m.residual(b)?;
    let w = m.weights().matrix();
    let u = &r - rho * (w * &r);
    let zr = &u - rho * (w * &u);
    Ok(-2.0 * (m.design().transpose() * zr))
}

/// `2 rho r'W^2 r - 2 r'W r`.
pub fn ls_grad_rho(m: &TruncatedModel, b: &DVector<f64>, rho: f64) -> Result<f64> {
    m.interval().check(rho)?;
    let r = m.residual(b)?;
    let (_, rwr, rw2r) = m.residual_forms(&r);
    Ok(2.0 * rho * rw2r - 2.0 * rwr)
}

/// Gaussian log-likelihood of the truncated model, without `-(n/2) ln 2pi`.
pub fn log_likelihood(m: &TruncatedModel, p: &ParamPoint) -> Result<f64> {
    let logdet = m.weights().log_det(p.rho)?;
    let r = m.residual(&p.b)?;
    let eps = &r - p.rho * (m.weights().matrix() * &r);
    let n = m.n() as f64;
    Ok(-0.5 * n * p.sigma2.ln() + logdet - eps.norm_squared() / (2.0 * p.sigma2))
}

/// Partial derivatives of [`log_likelihood`].
#[derive(Debug, Clone, PartialEq)]
pub struct LlGradients {
    pub b: DVector<f64>,
    pub rho: f64,
    pub sigma2: f64,
}

/// `dl/db = -ls_b / (2 s2)`, `dl/drho = -tr((I - rho W)^{-1} W) - ls_rho / (2 s2)`,
/// `dl/ds2 = -n / (2 s2) + ls / (2 s2^2)`.
///
/// The `1/(2 s2)` factor on the `rho` quadratic term follows from
/// differentiating the log-likelihood directly.
pub fn ll_gradients(m: &TruncatedModel, p: &ParamPoint) -> Result<LlGradients> {
    m.weights().log_det(p.rho)?;
    let r = m.residual(&p.b)?;
    let w = m.weights().matrix();
    let u = &r - p.rho * (w * &r);
    let zr = &u - p.rho * (w * &u);
    let quad = u.norm_squared();
    let (_, rwr, rw2r) = m.residual_forms(&r);
    let s2 = p.sigma2;
    let grad_b = (m.design().transpose() * zr) / s2;
    let ls_rho = 2.0 * p.rho * rw2r - 2.0 * rwr;
    let grad_rho = -m.weights().trace_inverse_w(p.rho) - ls_rho / (2.0 * s2);
    let grad_s2 = -0.5 * m.n() as f64 / s2 + quad / (2.0 * s2 * s2);
    Ok(LlGradients {
        b: grad_b,
        rho: grad_rho,
        sigma2: grad_s2,
    })
}
