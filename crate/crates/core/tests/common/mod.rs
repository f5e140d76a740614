#![allow(dead_code)]

use fsar_core::basis::CoefficientMatrix;
use fsar_core::model::TruncatedModel;
use fsar_core::sim::stream_rng;
use fsar_core::spatial::{
    rho_interval, row_standardize, symmetrize, weights_from_coordinates, NeighborRule, SpatialWeights,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A random truncated model together with the truth that generated it.
pub struct Instance {
    pub model: TruncatedModel,
    pub b: DVector<f64>,
    pub rho: f64,
    pub weights: SpatialWeights,
    pub design: DMatrix<f64>,
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// knn(min(3, n - 1)) weights on uniform points, row-standardized then symmetrized.
pub fn knn_weights(n: usize, rng: &mut ChaCha8Rng) -> SpatialWeights {
    let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
    let w = weights_from_coordinates(&coords, NeighborRule::Knn(3.min(n - 1)))
        .unwrap()
        .weights;
    symmetrize(&row_standardize(&w).unwrap())
}

/// `Y = A b + (I - rho W)^{-1} eps` with Gaussian `A`, `b`, `eps` and `rho`
/// drawn from the central part of the admissible interval.
pub fn random_instance(n: usize, k: usize, seed: u64) -> Instance {
    let mut rng = stream_rng(seed, 99);
    let weights = knn_weights(n, &mut rng);
    let design = DMatrix::from_fn(n, k, |_, _| normal(&mut rng));
    let b = DVector::from_fn(k, |_, _| normal(&mut rng));
    let iv = rho_interval(&weights).unwrap();
    let rho = 0.8 * iv.lo + 0.8 * (iv.hi - iv.lo) * rng.random::<f64>();
    let eps = DVector::from_fn(n, |_, _| normal(&mut rng));
    let y = &design * &b + draw_sar(&weights, rho, &eps);
    let model = TruncatedModel::new(y, &CoefficientMatrix::new(design.clone()), weights.clone()).unwrap();
    Instance {
        model,
        b,
        rho,
        weights,
        design,
    }
}

pub fn draw_sar(w: &SpatialWeights, rho: f64, eps: &DVector<f64>) -> DVector<f64> {
    let n = w.n();
    (DMatrix::identity(n, n) - rho * w.matrix()).lu().solve(eps).unwrap()
}

/// Mean and sample standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}
