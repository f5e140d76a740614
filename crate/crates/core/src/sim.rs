//! Synthetic functional SAR data and the Monte Carlo harness.
//!
//! A scenario fixes one draw of area coordinates, weights, curves and the
//! smoothed slope function; replicates redraw only the response. Every
//! random draw comes from a ChaCha stream derived from `(seed, stream)`:
//! stream 0 for the scenario data, stream `r + 1` for replicate `r`, so the
//! result does not depend on how replicates are scheduled.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{
    make_basis, project, project_function, Basis, BasisKind, CoefficientMatrix, FunctionalSample, Grid,
};
use crate::error::{FsarError, Result};
use crate::estimate::{fit_ls_with, FitOptions, RhoUpdate};
use crate::inference::integrals;
use crate::model::TruncatedModel;
use crate::par::{map_indexed, Execution};
use crate::spatial::{
    rho_interval, row_standardize, symmetrize, weights_from_coordinates, NeighborRule, RhoInterval, SpatialWeights,
};

/// Parameters of one simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_areas: usize,
    pub grid_points: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub rho_true: f64,
    pub sigma2_true: f64,
    pub beta_noise_var: f64,
    pub gp_length_scale: f64,
    pub gp_variance: f64,
    pub trend_amplitude: f64,
    pub trend_frequency: f64,
    pub basis: BasisKind,
    pub basis_k: usize,
    pub knn: usize,
    pub replicates: usize,
    pub seed: u64,
    pub rho_update: RhoUpdate,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_areas: 117,
            grid_points: 101,
            grid_lo: 0.0,
            grid_hi: 100.0,
            rho_true: 0.5,
            sigma2_true: 1.0,
            beta_noise_var: 2.0,
            gp_length_scale: 11.5,
            gp_variance: 1.0,
            trend_amplitude: 1.0,
            trend_frequency: 2.0 * std::f64::consts::PI / 100.0,
            basis: BasisKind::OrthonormalizedBSpline,
            basis_k: 15,
            knn: 4,
            replicates: 100,
            seed: 20240601,
            rho_update: RhoUpdate::ConcentratedLikelihood,
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FsarError::invalid(msg));
        if self.n_areas < 3 {
            return bad(format!("n_areas must be at least 3, got {}", self.n_areas));
        }
        if self.grid_points < 2 || !(self.grid_lo < self.grid_hi) {
            return bad(format!(
                "grid needs at least 2 points on a non-empty interval, got {} on [{}, {}]",
                self.grid_points, self.grid_lo, self.grid_hi
            ));
        }
        if !(self.sigma2_true >= 0.0 && self.beta_noise_var >= 0.0 && self.gp_variance >= 0.0) {
            return bad("variances must be non-negative".into());
        }
        if !(self.gp_length_scale > 0.0) {
            return bad(format!(
                "gp_length_scale must be positive, got {}",
                self.gp_length_scale
            ));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.knn == 0 || self.knn >= self.n_areas {
            return bad(format!("knn must lie in 1..{}, got {}", self.n_areas, self.knn));
        }
        if !self.rho_true.is_finite() || !self.trend_amplitude.is_finite() || !self.trend_frequency.is_finite() {
            return bad("rho_true and trend parameters must be finite".into());
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return bad("tol must be positive and max_iter at least 1".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::uniform(self.grid_lo, self.grid_hi, self.grid_points)
    }
}

/// A set of scenarios sharing everything except the true `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_rho_values")]
    pub rho_values: Vec<f64>,
    #[serde(default)]
    pub scenario: ScenarioConfig,
}

fn default_rho_values() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            rho_values: default_rho_values(),
            scenario: ScenarioConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn scenarios(&self) -> Vec<ScenarioConfig> {
        self.rho_values
            .iter()
            .map(|&rho| ScenarioConfig {
                rho_true: rho,
                ..self.scenario.clone()
            })
            .collect()
    }
}

/// Random stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Squared-exponential kernel `v exp(-(s - t)^2 / (2 l^2))` on the grid.
pub fn se_kernel(grid: &Grid, variance: f64, length_scale: f64) -> DMatrix<f64> {
    let t = grid.points();
    DMatrix::from_fn(t.len(), t.len(), |i, j| {
        let d = t[i] - t[j];
        variance * (-0.5 * d * d / (length_scale * length_scale)).exp()
    })
}

/// Lower Cholesky factor of `k + jitter I`, escalating the jitter from
/// `1e-12` to `1e-6` times the diagonal scale.
pub fn kernel_factor(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = k.diagonal().max();
    if !(scale > 0.0) {
        return Err(FsarError::KernelDegenerate);
    }
    let n = k.nrows();
    let mut jitter = 1e-12 * scale;
    while jitter <= 1e-6 * scale {
        if let Some(ch) = (k + DMatrix::identity(n, n) * jitter).cholesky() {
            return Ok(ch.l());
        }
        jitter *= 10.0;
    }
    Err(FsarError::KernelDegenerate)
}

/// `n` independent curves: zero-mean GP draws plus the sinusoidal trend.
pub fn simulate_curves<R: Rng + ?Sized>(cfg: &ScenarioConfig, n: usize, rng: &mut R) -> Result<FunctionalSample> {
    let grid = cfg.grid()?;
    let big_n = grid.len();
    let trend: Vec<f64> = grid
        .points()
        .iter()
        .map(|t| cfg.trend_amplitude * (cfg.trend_frequency * t).sin())
        .collect();
    let mut curves = DMatrix::from_fn(n, big_n, |_, j| trend[j]);
    if cfg.gp_variance > 0.0 {
        let l = kernel_factor(&se_kernel(&grid, cfg.gp_variance, cfg.gp_length_scale))?;
        for i in 0..n {
            let z = DVector::from_fn(big_n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let draw = &l * z;
            for j in 0..big_n {
                curves[(i, j)] += draw[j];
            }
        }
    }
    FunctionalSample::new(curves, grid)
}

/// Projection of a tabulated function onto the span of `basis`.
pub fn smooth(f: &[f64], basis: &Basis) -> Result<Vec<f64>> {
    let c = project_function(f, basis)?;
    Ok((basis.values().transpose() * c).as_slice().to_vec())
}

/// Raw noisy slope `cos(2t) + e` and its basis smoothing.
#[derive(Debug, Clone)]
pub struct BetaDraw {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
}

pub fn simulate_beta<R: Rng + ?Sized>(cfg: &ScenarioConfig, basis: &Basis, rng: &mut R) -> Result<BetaDraw> {
    let sd = cfg.beta_noise_var.sqrt();
    let raw: Vec<f64> = basis
        .grid()
        .points()
        .iter()
        .map(|t| (2.0 * t).cos() + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let smoothed = smooth(&raw, basis)?;
    Ok(BetaDraw { raw, smoothed })
}

/// `Y = int X beta + nu` with `(I - rho W) nu = eps`, `eps ~ N(0, sigma2 I)`.
pub fn simulate_response<R: Rng + ?Sized>(
    x: &FunctionalSample,
    beta: &[f64],
    rho: f64,
    w: &SpatialWeights,
    sigma2: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if x.n() != w.n() {
        return Err(FsarError::invalid(format!("{} curves for {} areas", x.n(), w.n())));
    }
    if !(sigma2 >= 0.0) {
        return Err(FsarError::invalid(format!("sigma2 must be non-negative, got {sigma2}")));
    }
    let signal = integrals(x, beta)?;
    let n = w.n();
    let sd = sigma2.sqrt();
    let eps = DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    let nu = sar_noise(&eps, rho, w)?;
    Ok(signal + nu)
}

/// `(I - rho W)^{-1} eps` by an LU solve.
pub fn sar_noise(eps: &DVector<f64>, rho: f64, w: &SpatialWeights) -> Result<DVector<f64>> {
    let m = crate::spatial::sar_transform(rho, w)?;
    m.lu().solve(eps).ok_or(FsarError::DeterminantSign { rho })
}

/// `int (f - g)^2 dt` by quadrature.
pub fn integrated_squared_error(beta_hat: &[f64], beta_true: &[f64], grid: &Grid) -> Result<f64> {
    if beta_hat.len() != beta_true.len() || beta_hat.len() != grid.len() {
        return Err(FsarError::invalid(format!(
            "length mismatch: {} and {} values on a grid of {}",
            beta_hat.len(),
            beta_true.len(),
            grid.len()
        )));
    }
    Ok(beta_hat
        .iter()
        .zip(beta_true)
        .zip(grid.weights())
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum())
}

/// Integrated squared error divided by the interval length.
pub fn mise(beta_hat: &[f64], beta_true: &[f64], grid: &Grid) -> Result<f64> {
    Ok(integrated_squared_error(beta_hat, beta_true, grid)? / grid.length())
}

/// Fixed ingredients of a scenario.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub coords: Vec<[f64; 2]>,
    pub weights: SpatialWeights,
    pub interval: RhoInterval,
    pub curves: FunctionalSample,
    pub basis: Basis,
    pub design: CoefficientMatrix,
    pub beta: BetaDraw,
    pub warnings: Vec<String>,
}

impl ScenarioData {
    /// Draw the scenario from stream 0; `coords` replaces the default
    /// uniform points in the unit square.
    pub fn generate(cfg: &ScenarioConfig, coords: Option<&[[f64; 2]]>) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(cfg.seed, 0);
        let coords: Vec<[f64; 2]> = match coords {
            Some(c) if c.len() != cfg.n_areas => {
                return Err(FsarError::invalid(format!(
                    "{} coordinates for n_areas = {}",
                    c.len(),
                    cfg.n_areas
                )))
            }
            Some(c) => c.to_vec(),
            None => (0..cfg.n_areas).map(|_| [rng.random(), rng.random()]).collect(),
        };
        let build = weights_from_coordinates(&coords, NeighborRule::Knn(cfg.knn))?;
        let weights = symmetrize(&row_standardize(&build.weights)?);
        Self::draw(cfg, coords, weights, build.warnings, &mut rng)
    }

    /// Like [`ScenarioData::generate`] but on a caller-supplied symmetric
    /// `W`; no coordinates are drawn.
    pub fn with_weights(cfg: &ScenarioConfig, weights: SpatialWeights) -> Result<Self> {
        cfg.validate()?;
        if weights.n() != cfg.n_areas {
            return Err(FsarError::invalid(format!(
                "weights matrix has {} areas but n_areas = {}",
                weights.n(),
                cfg.n_areas
            )));
        }
        if !weights.is_symmetric() {
            return Err(FsarError::invalid("simulation weights must be symmetric"));
        }
        let mut rng = stream_rng(cfg.seed, 0);
        Self::draw(cfg, Vec::new(), weights, Vec::new(), &mut rng)
    }

    fn draw(
        cfg: &ScenarioConfig,
        coords: Vec<[f64; 2]>,
        weights: SpatialWeights,
        warnings: Vec<String>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let interval = rho_interval(&weights)?;
        let curves = simulate_curves(cfg, cfg.n_areas, rng)?;
        let basis = make_basis(cfg.basis, cfg.basis_k, curves.grid())?;
        let design = project(&curves, &basis)?;
        let beta = simulate_beta(cfg, &basis, rng)?;
        Ok(ScenarioData {
            coords,
            weights,
            interval,
            curves,
            basis,
            design,
            beta,
            warnings,
        })
    }
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplicateOutcome {
    Fitted {
        rho_hat: f64,
        sigma2_hat: f64,
        mise: f64,
        ise: f64,
        clamped: bool,
    },
    Excluded(String),
}

/// Summary statistics of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub rho_true: f64,
    pub rho_hat_mean: f64,
    pub rho_hat_sd: f64,
    pub mise: f64,
    pub mise_absolute: f64,
    pub sigma2_hat_mean: f64,
    pub sigma2_hat_sd: f64,
    pub replicates: usize,
    pub replicates_converged: usize,
    pub interval: RhoInterval,
    pub warnings: Vec<String>,
}

/// Draw a response for replicate `r` and fit it.
pub fn run_replicate(cfg: &ScenarioConfig, data: &ScenarioData, r: usize) -> ReplicateOutcome {
    let mut rng = stream_rng(cfg.seed, r as u64 + 1);
    let opts = FitOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        rho_update: cfg.rho_update,
    };
    let fitted = simulate_response(
        &data.curves,
        &data.beta.smoothed,
        cfg.rho_true,
        &data.weights,
        cfg.sigma2_true,
        &mut rng,
    )
    .and_then(|y| TruncatedModel::new(y, &data.design, data.weights.clone()))
    .and_then(|m| fit_ls_with(&m, &opts));
    let fit = match fitted {
        Ok(f) => f,
        Err(e) => return ReplicateOutcome::Excluded(e.to_string()),
    };
    if !fit.converged {
        return ReplicateOutcome::Excluded(format!("did not converge within {} iterations", cfg.max_iter));
    }
    let beta_hat = (data.basis.values().transpose() * &fit.b_hat).as_slice().to_vec();
    let grid = data.basis.grid();
    let ise = match integrated_squared_error(&beta_hat, &data.beta.smoothed, grid) {
        Ok(v) => v,
        Err(e) => return ReplicateOutcome::Excluded(e.to_string()),
    };
    ReplicateOutcome::Fitted {
        rho_hat: fit.rho_hat,
        sigma2_hat: fit.sigma2_hat,
        mise: ise / grid.length(),
        ise,
        clamped: !fit.warnings.is_empty(),
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Reduce replicate outcomes, in index order, to a summary.
pub fn summarize(cfg: &ScenarioConfig, data: &ScenarioData, outcomes: &[ReplicateOutcome]) -> MonteCarloSummary {
    let mut rho = Vec::new();
    let mut s2 = Vec::new();
    let mut mises = Vec::new();
    let mut ises = Vec::new();
    let mut clamped = 0usize;
    let mut excluded: Vec<(usize, &str)> = Vec::new();
    for (r, o) in outcomes.iter().enumerate() {
        match o {
            ReplicateOutcome::Fitted {
                rho_hat,
                sigma2_hat,
                mise,
                ise,
                clamped: c,
            } => {
                rho.push(*rho_hat);
                s2.push(*sigma2_hat);
                mises.push(*mise);
                ises.push(*ise);
                clamped += usize::from(*c);
            }
            ReplicateOutcome::Excluded(msg) => excluded.push((r, msg)),
        }
    }
    let mut warnings = data.warnings.clone();
    if clamped > 0 {
        warnings.push(format!(
            "rho = {}: {clamped} replicate fit(s) reported warnings (clamping or restarts)",
            cfg.rho_true
        ));
    }
    for (r, msg) in &excluded {
        warnings.push(format!("rho = {}: replicate {r} excluded: {msg}", cfg.rho_true));
    }
    let (rho_hat_mean, rho_hat_sd) = mean_sd(&rho);
    let (sigma2_hat_mean, sigma2_hat_sd) = mean_sd(&s2);
    MonteCarloSummary {
        rho_true: cfg.rho_true,
        rho_hat_mean,
        rho_hat_sd,
        mise: mean_sd(&mises).0,
        mise_absolute: mean_sd(&ises).0,
        sigma2_hat_mean,
        sigma2_hat_sd,
        replicates: outcomes.len(),
        replicates_converged: rho.len(),
        interval: data.interval,
        warnings,
    }
}

/// Run all replicates of a scenario on pre-generated data.
pub fn run_scenario_with(cfg: &ScenarioConfig, data: &ScenarioData, exec: Execution) -> Result<MonteCarloSummary> {
    cfg.validate()?;
    data.interval.check(cfg.rho_true)?;
    let outcomes = map_indexed(cfg.replicates, exec, |r| run_replicate(cfg, data, r));
    Ok(summarize(cfg, data, &outcomes))
}

/// Generate the scenario and run its replicates.
pub fn run_scenario(cfg: &ScenarioConfig, exec: Execution) -> Result<MonteCarloSummary> {
    let data = ScenarioData::generate(cfg, None)?;
    run_scenario_with(cfg, &data, exec)
}
