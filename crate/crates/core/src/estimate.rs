//! Estimators for the truncated functional SAR model.
//!
//! * [`fit_ls`]: alternating least squares starting from `rho = 0`. The `b`
//!   step is the GLS solve at the current `rho`; the `rho` step is either
//!   the closed-form root of `d(eps'eps)/drho` ([`RhoUpdate::LeastSquares`])
//!   or the maximizer of the log-likelihood concentrated over `sigma2` at
//!   the current `b` ([`RhoUpdate::ConcentratedLikelihood`]).
//! * [`fit_ml`]: profile maximum likelihood over `rho`.
//! * [`fit_fixed_rho`]: GLS with `rho` known.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FsarError, Result};
use crate::model::{ls_objective, TruncatedModel};
use crate::optim;
use crate::spatial::RhoInterval;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;

const PROFILE_SCAN: usize = 201;
const RHO_STEP_SCAN: usize = 65;
const MAX_RESTARTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    IterativeLs,
    ProfileMl,
    FixedRho,
}

/// How the `rho` half-step of the iterative procedure is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoUpdate {
    /// `rho = r'Wr / r'W^2 r`, the exact minimizer of `eps'eps` in `rho`.
    #[default]
    LeastSquares,
    /// Maximizer of `-(n/2) ln(r'(I - rho W)^2 r) + ln|I - rho W|` at fixed `b`.
    ConcentratedLikelihood,
}

impl std::str::FromStr for RhoUpdate {
    type Err = FsarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ls" | "least_squares" | "least-squares" => Ok(RhoUpdate::LeastSquares),
            "likelihood" | "concentrated_likelihood" | "ml" => Ok(RhoUpdate::ConcentratedLikelihood),
            other => Err(FsarError::invalid(format!("unknown rho update '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub rho_update: RhoUpdate,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            rho_update: RhoUpdate::LeastSquares,
        }
    }
}

/// Estimates and diagnostics of one fit.
#[derive(Debug, Clone)]
pub struct SarFit {
    pub b_hat: DVector<f64>,
    pub rho_hat: f64,
    pub sigma2_hat: f64,
    /// `sigma2_hat * Sigma^{-1}`.
    pub coef_cov: DMatrix<f64>,
    pub method: Method,
    pub rho_update: Option<RhoUpdate>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialization and after every iteration: `eps'eps`
    /// for least-squares updates, the negative profile log-likelihood otherwise.
    pub objective_trace: Vec<f64>,
    /// Effective number of parameters `tr(A Sigma^{-1} A'(I - rho W)^2)`.
    pub effective_params: f64,
    pub interval: RhoInterval,
    pub warnings: Vec<String>,
}

/// Alternating least squares with the closed-form `rho` update.
pub fn fit_ls(m: &TruncatedModel, tol: f64, max_iter: usize) -> Result<SarFit> {
    fit_ls_with(
        m,
        &FitOptions {
            tol,
            max_iter,
            rho_update: RhoUpdate::LeastSquares,
        },
    )
}

/// The four-step iterative procedure: `b` at `rho = 0`, then alternate
/// `rho` and `b` updates until the parameter change drops below `tol`.
pub fn fit_ls_with(m: &TruncatedModel, opts: &FitOptions) -> Result<SarFit> {
    if !(opts.tol > 0.0) {
        return Err(FsarError::invalid("tolerance must be positive"));
    }
    let iv = m.interval();
    let yy = m.y().norm_squared().max(f64::MIN_POSITIVE);
    let objective = |b: &DVector<f64>, rho: f64| objective_value(m, opts.rho_update, b, rho);

    let mut st = Alternation {
        rho: 0.0,
        b: ols(m)?,
        trace: Vec::new(),
        clamps: 0,
        converged: false,
        iterations: 0,
    };
    st.trace.push(objective(&st.b, st.rho)?);
    alternate(m, opts, &mut st, yy)?;

    // The alternation is monotone but can settle in a local basin; a scan of
    // the profile objective detects a better basin and restarts from it.
    let mut restarts = 0usize;
    let (lo, hi) = iv.inner();
    while restarts < MAX_RESTARTS {
        let profile = |rho: f64| {
            m.gls_coefficients(rho)
                .and_then(|b| objective(&b, rho))
                .map(|v| -v)
                .unwrap_or(f64::NEG_INFINITY)
        };
        let (cand, neg) = optim::maximize(profile, lo, hi, PROFILE_SCAN, 1e-13)?;
        let current = *st.trace.last().expect("trace is non-empty");
        if -neg >= current - 1e-12 * current.abs().max(1.0) {
            break;
        }
        restarts += 1;
        st.rho = cand;
        st.b = m.gls_coefficients(cand)?;
        st.trace.push(-neg);
        st.converged = false;
        alternate(m, opts, &mut st, yy)?;
    }
    let Alternation {
        rho,
        b,
        trace,
        clamps,
        converged,
        iterations,
    } = st;

    let mut warnings = Vec::new();
    if clamps > 0 {
        warnings.push(format!(
            "rho update left the admissible interval ({:.6}, {:.6}) and was clamped in {clamps} iteration(s)",
            iv.lo, iv.hi
        ));
    }
    if !converged {
        warnings.push(format!(
            "iterative procedure did not converge within {} iterations",
            opts.max_iter
        ));
    }
    if restarts > 0 {
        warnings.push(format!(
            "alternation restarted {restarts} time(s) from a lower point of the profile objective"
        ));
    }
    let (sigma2, r_eff) = estimate_sigma2_with_dof(m, &b, rho)?;
    let coef_cov = coef_covariance(m, rho, sigma2)?;
    Ok(SarFit {
        b_hat: b,
        rho_hat: rho,
        sigma2_hat: sigma2,
        coef_cov,
        method: Method::IterativeLs,
        rho_update: Some(opts.rho_update),
        iterations,
        converged,
        objective_trace: trace,
        effective_params: r_eff,
        interval: iv,
        warnings,
    })
}

struct Alternation {
    rho: f64,
    b: DVector<f64>,
    trace: Vec<f64>,
    clamps: usize,
    converged: bool,
    iterations: usize,
}

// Runs rho/b half-steps from the current state until the parameter change
// drops below the tolerance or the iteration budget is spent.
fn alternate(m: &TruncatedModel, opts: &FitOptions, st: &mut Alternation, yy: f64) -> Result<()> {
    let iv = m.interval();
    let n = m.n() as f64;
    while st.iterations < opts.max_iter {
        st.iterations += 1;
        let r = m.residual(&st.b)?;
        let (rr, rwr, rw2r) = m.residual_forms(&r);
        if rw2r <= 1e-24 * yy {
            return Err(FsarError::DegenerateResidual);
        }
        let proposal = match opts.rho_update {
            RhoUpdate::LeastSquares => rwr / rw2r,
            RhoUpdate::ConcentratedLikelihood => {
                let (lo, hi) = iv.inner();
                let f = |p: f64| {
                    let q = rr - 2.0 * p * rwr + p * p * rw2r;
                    match m.weights().log_det(p) {
                        Ok(ld) if q > 0.0 => -0.5 * n * q.ln() + ld,
                        _ => f64::NEG_INFINITY,
                    }
                };
                optim::maximize(f, lo, hi, RHO_STEP_SCAN, 1e-13)?.0
            }
        };
        let (new_rho, clamped) = iv.clamp(proposal);
        if clamped {
            st.clamps += 1;
        }
        let new_b = m.gls_coefficients(new_rho)?;
        let delta = (&new_b - &st.b).amax().max((new_rho - st.rho).abs());
        st.b = new_b;
        st.rho = new_rho;
        st.trace.push(objective_value(m, opts.rho_update, &st.b, st.rho)?);
        if delta < opts.tol {
            st.converged = true;
            break;
        }
    }
    Ok(())
}

fn objective_value(m: &TruncatedModel, update: RhoUpdate, b: &DVector<f64>, rho: f64) -> Result<f64> {
    let q = ls_objective(m, b, rho)?;
    let n = m.n() as f64;
    Ok(match update {
        RhoUpdate::LeastSquares => q,
        RhoUpdate::ConcentratedLikelihood => 0.5 * n * (q / n).ln() - m.weights().log_det(rho)? + 0.5 * n,
    })
}

fn ols(m: &TruncatedModel) -> Result<DVector<f64>> {
    m.gls_coefficients(0.0)
        .map_err(|_| FsarError::SingularDesign(format!("A'A is singular for k = {}; reduce the basis size", m.k())))
}

/// Profile log-likelihood at `rho` with `b` and `sigma2` at their
/// closed-form maximizers.
#[derive(Debug, Clone)]
pub struct ProfilePoint {
    pub log_likelihood: f64,
    pub b: DVector<f64>,
    pub sigma2: f64,
}

pub fn profile_log_likelihood(m: &TruncatedModel, rho: f64) -> Result<ProfilePoint> {
    let b = m.gls_coefficients(rho)?;
    let q = ls_objective(m, &b, rho)?;
    let n = m.n() as f64;
    let sigma2 = q / n;
    if !(sigma2 > 0.0) {
        return Err(FsarError::DegenerateResidual);
    }
    let ll = -0.5 * n * sigma2.ln() + m.weights().log_det(rho)? - 0.5 * n;
    Ok(ProfilePoint {
        log_likelihood: ll,
        b,
        sigma2,
    })
}

// d/drho of the profile, equal to dl/drho at (b(rho), sigma2(rho)).
fn profile_slope(m: &TruncatedModel, rho: f64) -> f64 {
    let Ok(p) = profile_log_likelihood(m, rho) else {
        return f64::NAN;
    };
    let Ok(r) = m.residual(&p.b) else {
        return f64::NAN;
    };
    let (_, rwr, rw2r) = m.residual_forms(&r);
    -m.weights().trace_inverse_w(rho) - (2.0 * rho * rw2r - 2.0 * rwr) / (2.0 * p.sigma2)
}

/// Profile maximum likelihood.
///
/// The profile in `rho` is scanned over the admissible interval, refined by
/// Brent's method to `tol` and polished by bisection on its analytic slope.
pub fn fit_ml(m: &TruncatedModel, tol: f64) -> Result<SarFit> {
    if !(tol > 0.0) {
        return Err(FsarError::invalid("tolerance must be positive"));
    }
    ols(m)?;
    let iv = m.interval();
    let (lo, hi) = iv.inner();
    let f = |rho: f64| {
        profile_log_likelihood(m, rho)
            .map(|p| p.log_likelihood)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let (mut rho, _) = optim::maximize(f, lo, hi, PROFILE_SCAN, tol.min(1e-10))?;
    let width = 1e-6 * (hi - lo);
    let (a, b) = ((rho - width).max(lo), (rho + width).min(hi));
    if let Some(root) = optim::bisect_root(|x| profile_slope(m, x), a, b) {
        if f(root) >= f(rho) {
            rho = root;
        }
    }
    let mut warnings = Vec::new();
    if rho <= lo + width || rho >= hi - width {
        warnings.push(format!(
            "profile likelihood maximum lies at the edge of the admissible interval ({:.6}, {:.6})",
            iv.lo, iv.hi
        ));
    }
    let p = profile_log_likelihood(m, rho)?;
    let (_, r_eff) = estimate_sigma2_with_dof(m, &p.b, rho)?;
    let coef_cov = coef_covariance(m, rho, p.sigma2)?;
    Ok(SarFit {
        b_hat: p.b,
        rho_hat: rho,
        sigma2_hat: p.sigma2,
        coef_cov,
        method: Method::ProfileMl,
        rho_update: None,
        iterations: 0,
        converged: true,
        objective_trace: vec![-p.log_likelihood],
        effective_params: r_eff,
        interval: iv,
        warnings,
    })
}

/// GLS fit with `rho` treated as known.
pub fn fit_fixed_rho(m: &TruncatedModel, rho: f64) -> Result<SarFit> {
    let iv = m.interval();
    iv.check(rho)?;
    let b = m.gls_coefficients(rho)?;
    let (sigma2, r_eff) = estimate_sigma2_with_dof(m, &b, rho)?;
    let coef_cov = coef_covariance(m, rho, sigma2)?;
    let q = ls_objective(m, &b, rho)?;
    Ok(SarFit {
        b_hat: b,
        rho_hat: rho,
        sigma2_hat: sigma2,
        coef_cov,
        method: Method::FixedRho,
        rho_update: None,
        iterations: 0,
        converged: true,
        objective_trace: vec![q],
        effective_params: r_eff,
        interval: iv,
        warnings: Vec::new(),
    })
}

/// `r = tr(A Sigma^{-1} A'(I - rho W)^2)`.
pub fn effective_params(m: &TruncatedModel, rho: f64) -> Result<f64> {
    let info_inv = invert_information(m, rho)?;
    let a = m.design();
    let w = m.weights().matrix();
    let ma = a - rho * (w * a);
    let za = &ma - rho * (w * &ma);
    let left = a * info_inv;
    Ok(left.component_mul(&za).sum())
}

fn estimate_sigma2_with_dof(m: &TruncatedModel, b_hat: &DVector<f64>, rho: f64) -> Result<(f64, f64)> {
    let r_eff = effective_params(m, rho)?;
    let n = m.n();
    if (n as f64) <= r_eff {
        return Err(FsarError::InsufficientDof { n, r: r_eff });
    }
    let q = ls_objective(m, b_hat, rho)?;
    Ok((q / (n as f64 - r_eff), r_eff))
}

/// `(Y - A b)'(I - rho W)^2 (Y - A b) / (n - r)` with trace-based `r`.
pub fn estimate_sigma2(m: &TruncatedModel, b_hat: &DVector<f64>, rho: f64) -> Result<f64> {
    estimate_sigma2_with_dof(m, b_hat, rho).map(|(s, _)| s)
}

fn invert_information(m: &TruncatedModel, rho: f64) -> Result<DMatrix<f64>> {
    let info = m.information(rho);
    let chol = info.cholesky().ok_or(FsarError::SingularInformation)?;
    let inv = chol.inverse();
    Ok(0.5 * (&inv + inv.transpose()))
}

/// `sigma2 * (A'(I - rho W)^2 A)^{-1}`.
pub fn coef_covariance(m: &TruncatedModel, rho: f64, sigma2: f64) -> Result<DMatrix<f64>> {
    Ok(invert_information(m, rho)? * sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::CoefficientMatrix;
    use crate::model::tests::random_model;
    use crate::model::{ll_gradients, ls_grad_b, ls_grad_rho, ParamPoint};

    fn rho_grid(iv: RhoInterval, step: f64) -> Vec<f64> {
        let (lo, hi) = iv.inner();
        let count = ((hi - lo) / step).floor() as usize;
        (0..=count).map(|i| lo + step * i as f64).collect()
    }

    #[test]
    fn ls_fit_satisfies_normal_equations() {
        let (m, _, _) = random_model(40, 3, 21);
        let fit = fit_ls(&m, 1e-10, 500).unwrap();
        assert!(fit.converged);
        assert!(m.interval().contains(fit.rho_hat));
        if fit.warnings.is_empty() {
            assert!(ls_grad_b(&m, &fit.b_hat, fit.rho_hat).unwrap().amax() < 1e-6);
            assert!(ls_grad_rho(&m, &fit.b_hat, fit.rho_hat).unwrap().abs() < 1e-6);
        }
        for pair in fit.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs());
        }
    }

    #[test]
    fn ls_fit_matches_grid_search_on_toy_instance() {
        let (m, _, _) = random_model(5, 1, 8);
        let fit = fit_ls(&m, 1e-12, 500).unwrap();
        let fit_obj = ls_objective(&m, &fit.b_hat, fit.rho_hat).unwrap();
        let best = rho_grid(m.interval(), 1e-4)
            .into_iter()
            .map(|r| ls_objective(&m, &m.gls_coefficients(r).unwrap(), r).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(fit_obj - best < 1e-8, "{fit_obj} vs {best}");
    }

    #[test]
    fn ml_fit_is_stationary_and_matches_grid() {
        let (m, _, _) = random_model(30, 3, 33);
        let fit = fit_ml(&m, 1e-10).unwrap();
        let p = ParamPoint::new(fit.b_hat.clone(), fit.rho_hat, fit.sigma2_hat).unwrap();
        let g = ll_gradients(&m, &p).unwrap();
        assert!(g.b.amax() < 1e-6, "{}", g.b.amax());
        assert!(g.rho.abs() < 1e-6, "{}", g.rho);
        assert!(g.sigma2.abs() < 1e-6, "{}", g.sigma2);
        let (lo, hi) = m.interval().inner();
        let best = (0..5000)
            .map(|i| lo + (hi - lo) * i as f64 / 4999.0)
            .filter_map(|r| profile_log_likelihood(&m, r).ok())
            .map(|p| p.log_likelihood)
            .fold(f64::NEG_INFINITY, f64::max);
        let ll = profile_log_likelihood(&m, fit.rho_hat).unwrap().log_likelihood;
        assert!(best - ll < 1e-8);
    }

    #[test]
    fn rho_zero_reduces_to_ols() {
        let (m, _, _) = random_model(25, 4, 5);
        let fit = fit_fixed_rho(&m, 0.0).unwrap();
        let a = m.design().clone();
        let ols = a.clone().svd(true, true).solve(m.y(), 1e-14).unwrap();
        assert!((&fit.b_hat - &ols).amax() < 1e-10);
        assert!((fit.effective_params - 4.0).abs() < 1e-10);
        let rss = (m.y() - &a * &ols).norm_squared();
        assert!((fit.sigma2_hat - rss / 21.0).abs() < 1e-10);
    }

    #[test]
    fn effective_params_trace_matches_dense_product() {
        let (m, _, rho) = random_model(18, 3, 9);
        let n = m.n();
        let a = m.design();
        let mm = DMatrix::identity(n, n) - rho * m.weights().matrix();
        let z = &mm * &mm;
        let sigma = a.transpose() * &z * a;
        let dense = a * sigma.try_inverse().unwrap() * a.transpose() * z;
        assert!((effective_params(&m, rho).unwrap() - dense.trace()).abs() < 1e-10);
    }

    #[test]
    fn insufficient_dof_and_singular_design() {
        let (m, _, _) = random_model(4, 4, 1);
        assert!(matches!(fit_fixed_rho(&m, 0.0), Err(FsarError::InsufficientDof { .. })));
        let (m, _, _) = random_model(6, 2, 1);
        let mut a = m.design().clone();
        let col = a.column(0).into_owned();
        a.set_column(1, &(col * 2.0));
        let bad = TruncatedModel::new(m.y().clone(), &CoefficientMatrix::new(a), m.weights().clone()).unwrap();
        assert!(matches!(fit_ls(&bad, 1e-8, 10), Err(FsarError::SingularDesign(_))));
    }

    #[test]
    fn coef_covariance_with_orthonormal_design() {
        let (m, _, _) = random_model(10, 3, 2);
        let qr = m.design().clone().qr();
        let q = qr.q();
        let m2 = TruncatedModel::new(m.y().clone(), &CoefficientMatrix::new(q), m.weights().clone()).unwrap();
        let cov = coef_covariance(&m2, 0.0, 2.5).unwrap();
        assert!((cov - DMatrix::identity(3, 3) * 2.5).amax() < 1e-12);
    }

    #[test]
    fn concentrated_update_converges_to_ml() {
        let (m, _, _) = random_model(30, 2, 44);
        let opts = FitOptions {
            rho_update: RhoUpdate::ConcentratedLikelihood,
            tol: 1e-10,
            ..FitOptions::default()
        };
        let it = fit_ls_with(&m, &opts).unwrap();
        let ml = fit_ml(&m, 1e-10).unwrap();
        assert!((it.rho_hat - ml.rho_hat).abs() < 1e-6);
        for pair in it.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-10);
        }
    }

    #[test]
    fn degenerate_residual_on_exact_data() {
        let (m, b, _) = random_model(12, 2, 3);
        let y = m.design() * b;
        let exact = TruncatedModel::new(y, &CoefficientMatrix::new(m.design().clone()), m.weights().clone()).unwrap();
        assert!(matches!(fit_ls(&exact, 1e-8, 10), Err(FsarError::DegenerateResidual)));
    }
}
