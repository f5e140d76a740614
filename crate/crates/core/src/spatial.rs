//! Spatial proximity matrices, the admissible interval for the
//! autoregression parameter and the SAR transform `I - rho W`.

use nalgebra::{DMatrix, Schur, SymmetricEigen};

use crate::error::{FsarError, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const SCHUR_MAX_ITER: usize = 100_000;

/// Relative margin kept between `rho` and the ends of the admissible interval.
pub const RHO_MARGIN: f64 = 1e-6;

/// Proximity matrix `W` with its spectrum cached at construction.
#[derive(Debug, Clone)]
pub struct SpatialWeights {
    w: DMatrix<f64>,
    symmetric: bool,
    // Real parts, ascending.
    eigenvalues: Vec<f64>,
}

impl SpatialWeights {
    /// Validate `w` (square, finite, non-negative, zero diagonal) and cache
    /// its eigenvalues.
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        let n = w.nrows();
        if n < 2 || w.ncols() != n {
            return Err(FsarError::invalid(format!(
                "weights matrix must be square with n >= 2, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(FsarError::invalid("weights matrix has non-finite entries"));
        }
        if let Some(v) = w.iter().find(|v| **v < 0.0) {
            return Err(FsarError::invalid(format!("weights must be non-negative, found {v}")));
        }
        if let Some(i) = (0..n).find(|&i| w[(i, i)] != 0.0) {
            return Err(FsarError::invalid(format!(
                "weights diagonal must be zero, W[{i},{i}] = {}",
                w[(i, i)]
            )));
        }
        let asym = (&w - w.transpose()).amax();
        let symmetric = asym <= SYMMETRY_TOL;
        let mut eigenvalues: Vec<f64> = if symmetric {
            let sym = 0.5 * (&w + w.transpose());
            SymmetricEigen::new(sym).eigenvalues.iter().copied().collect()
        } else if let Some(sym) = symmetrizing_similarity(&w) {
            SymmetricEigen::new(sym).eigenvalues.iter().copied().collect()
        } else {
            Schur::try_new(w.clone(), f64::EPSILON, SCHUR_MAX_ITER)
                .ok_or(FsarError::SpectrumFailure)?
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .collect()
        };
        eigenvalues.sort_by(f64::total_cmp);
        Ok(SpatialWeights {
            w,
            symmetric,
            eigenvalues,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Real parts of the eigenvalues, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eig_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn eig_max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `ln det(I - rho W) = sum ln(1 - rho lambda_i)`; errors when any factor
    /// is non-positive. Only meaningful for symmetric `W`.
    pub fn log_det(&self, rho: f64) -> Result<f64> {
        let mut acc = 0.0;
        for lam in &self.eigenvalues {
            let f = 1.0 - rho * lam;
            if f <= 0.0 {
                return Err(FsarError::DeterminantSign { rho });
            }
            acc += f.ln();
        }
        Ok(acc)
    }

    /// `tr((I - rho W)^{-1} W) = sum lambda_i / (1 - rho lambda_i)`.
    pub fn trace_inverse_w(&self, rho: f64) -> f64 {
        self.eigenvalues.iter().map(|l| l / (1.0 - rho * l)).sum()
    }
}

// If `D W` is symmetric for some positive diagonal `D` (as for a
// row-standardized symmetric graph), returns the symmetric matrix
// `D^{1/2} W D^{-1/2}`, which shares the spectrum of `W`.
fn symmetrizing_similarity(w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = w.nrows();
    let mut d = vec![f64::NAN; n];
    for root in 0..n {
        if !d[root].is_nan() {
            continue;
        }
        d[root] = 1.0;
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let (wij, wji) = (w[(i, j)], w[(j, i)]);
                if (wij > 0.0) != (wji > 0.0) {
                    return None;
                }
                if wij > 0.0 && d[j].is_nan() {
                    d[j] = d[i] * wij / wji;
                    stack.push(j);
                }
            }
        }
    }
    let sqrt: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| sqrt[i] * w[(i, j)] / sqrt[j]);
    let scale = s.amax().max(f64::MIN_POSITIVE);
    if (&s - s.transpose()).amax() > 1e-10 * scale {
        return None;
    }
    Some(0.5 * (&s + s.transpose()))
}

/// Neighbourhood rule for building `W` from coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NeighborRule {
    Knn(usize),
    DistanceThreshold(f64),
}

/// Weights matrix together with any geometry warnings raised while building it.
#[derive(Debug, Clone)]
pub struct WeightsBuild {
    pub weights: SpatialWeights,
    pub warnings: Vec<String>,
}

/// Binary adjacency from planar coordinates, symmetrized by union.
///
/// Ties in the k-nearest-neighbour rule are broken by lower index; ties and
/// duplicate coordinates are reported as warnings.
pub fn weights_from_coordinates(coords: &[[f64; 2]], rule: NeighborRule) -> Result<WeightsBuild> {
    let n = coords.len();
    if n < 2 {
        return Err(FsarError::invalid("need at least 2 coordinates"));
    }
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(FsarError::invalid("coordinates must be finite"));
    }
    let mut warnings = Vec::new();
    let dist = |i: usize, j: usize| {
        let dx = coords[i][0] - coords[j][0];
        let dy = coords[i][1] - coords[j][1];
        (dx * dx + dy * dy).sqrt()
    };
    let duplicates: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| dist(i, j) == 0.0)
        .collect();
    if !duplicates.is_empty() {
        warnings.push(format!(
            "degenerate geometry: {} pair(s) of duplicate coordinates, first ({}, {}); ties broken by index order",
            duplicates.len(),
            duplicates[0].0,
            duplicates[0].1
        ));
    }

    let mut adj = DMatrix::<f64>::zeros(n, n);
    match rule {
        NeighborRule::Knn(k) => {
            if k == 0 || k >= n {
                return Err(FsarError::invalid(format!(
                    "knn needs 1 <= k < n, got k = {k}, n = {n}"
                )));
            }
            let mut tied = Vec::new();
            for i in 0..n {
                let mut order: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(i, j), j)).collect();
                order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, j) in &order[..k] {
                    adj[(i, j)] = 1.0;
                }
                if order.len() > k && order[k - 1].0 == order[k].0 {
                    tied.push(i);
                }
            }
            if !tied.is_empty() {
                warnings.push(format!(
                    "knn({k}): {} area(s) have tied k-th neighbours (first: {}); ties broken by index order",
                    tied.len(),
                    tied[0]
                ));
            }
        }
        NeighborRule::DistanceThreshold(d) => {
            if !(d > 0.0 && d.is_finite()) {
                return Err(FsarError::invalid(format!(
                    "distance threshold must be positive, got {d}"
                )));
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j && dist(i, j) <= d {
                        adj[(i, j)] = 1.0;
                    }
                }
            }
        }
    }
    let union = adj.zip_map(&adj.transpose(), f64::max);
    Ok(WeightsBuild {
        weights: SpatialWeights::new(union)?,
        warnings,
    })
}

/// Divide each row by its sum.
pub fn row_standardize(w: &SpatialWeights) -> Result<SpatialWeights> {
    let mut out = w.matrix().clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let s: f64 = row.sum();
        if s <= 0.0 {
            return Err(FsarError::IsolatedRegion { index: i });
        }
        row /= s;
    }
    SpatialWeights::new(out)
}

/// `(W + W') / 2`.
pub fn symmetrize(w: &SpatialWeights) -> SpatialWeights {
    let m = w.matrix();
    let sym = 0.5 * (m + m.transpose());
    SpatialWeights::new(sym).expect("symmetrizing a valid weights matrix keeps it valid")
}

/// Open interval `(1/lambda_min, 1/lambda_max)` of admissible `rho`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RhoInterval {
    pub lo: f64,
    pub hi: f64,
}

impl RhoInterval {
    fn margin(&self) -> f64 {
        RHO_MARGIN * (self.hi - self.lo)
    }

    /// Closed sub-interval kept away from the singular endpoints.
    pub fn inner(&self) -> (f64, f64) {
        let m = self.margin();
        (self.lo + m, self.hi - m)
    }

    pub fn contains(&self, rho: f64) -> bool {
        rho > self.lo && rho < self.hi
    }

    /// True when `rho` respects the interior margin.
    pub fn admits(&self, rho: f64) -> bool {
        let (a, b) = self.inner();
        rho >= a && rho <= b
    }

    /// Clamp into the inner interval; the flag reports whether clamping happened.
    pub fn clamp(&self, rho: f64) -> (f64, bool) {
        let (a, b) = self.inner();
        if rho < a {
            (a, true)
        } else if rho > b {
            (b, true)
        } else {
            (rho, false)
        }
    }

    pub fn check(&self, rho: f64) -> Result<()> {
        if self.admits(rho) {
            Ok(())
        } else {
            Err(FsarError::RhoOutOfBounds {
                rho,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }
}

/// Admissible interval from the extreme eigenvalues of `W`.
///
/// Requires `lambda_min < 0 < lambda_max`; the classical statement of this
/// bound repeats `lambda_min` in the second condition, read here as `lambda_max > 0`.
pub fn rho_interval(w: &SpatialWeights) -> Result<RhoInterval> {
    let (lmin, lmax) = (w.eig_min(), w.eig_max());
    if !(lmin < 0.0 && lmax > 0.0) {
        return Err(FsarError::UnboundedInterval {
            eig_min: lmin,
            eig_max: lmax,
        });
    }
    Ok(RhoInterval {
        lo: 1.0 / lmin,
        hi: 1.0 / lmax,
    })
}

/// `I - rho W`, checked to be invertible.
pub fn sar_transform(rho: f64, w: &SpatialWeights) -> Result<DMatrix<f64>> {
    rho_interval(w)?.check(rho)?;
    let n = w.n();
    Ok(DMatrix::identity(n, n) - rho * w.matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn two_cycle() -> SpatialWeights {
        SpatialWeights::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap()
    }

    fn random_coords(n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
    }

    fn default_pipeline(n: usize, seed: u64) -> SpatialWeights {
        let b = weights_from_coordinates(&random_coords(n, seed), NeighborRule::Knn(4)).unwrap();
        symmetrize(&row_standardize(&b.weights).unwrap())
    }

    fn lu_det(m: DMatrix<f64>) -> f64 {
        m.lu().determinant()
    }

    #[test]
    fn spectrum_of_row_standardized_path() {
        let w = SpatialWeights::new(DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0.5, 0., 0.5, 0., 1., 0.])).unwrap();
        assert!(!w.is_symmetric());
        let ev = w.eigenvalues();
        for (got, want) in ev.iter().zip([-1.0, 0.0, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn spectrum_of_directed_cycle_uses_real_parts() {
        let w = SpatialWeights::new(DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 1., 0., 0.])).unwrap();
        let ev = w.eigenvalues();
        for (got, want) in ev.iter().zip([-0.5, -0.5, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_invalid_matrices() {
        assert!(SpatialWeights::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0])).is_err());
        assert!(SpatialWeights::new(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).is_err());
        assert!(SpatialWeights::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn knn_two_points() {
        let b = weights_from_coordinates(&[[0.0, 0.0], [3.0, 4.0]], NeighborRule::Knn(1)).unwrap();
        assert_eq!(
            b.weights.matrix(),
            &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
        );
        assert!(b.weights.is_symmetric());
    }

    #[test]
    fn knn_collinear_tie_broken_by_index() {
        // Distances: d01 = d12 = 1, d02 = 2. Point 1 picks 0 (lower index),
        // points 0 and 2 pick 1; the union adds 1-2.
        let coords = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let b = weights_from_coordinates(&coords, NeighborRule::Knn(1)).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(b.weights.matrix(), &expect);
        assert!(b.warnings.iter().any(|w| w.contains("tied")));
    }

    #[test]
    fn knn_structure_on_117_points() {
        let b = weights_from_coordinates(&random_coords(117, 3), NeighborRule::Knn(4)).unwrap();
        let w = b.weights.matrix();
        assert!(b.weights.is_symmetric());
        for i in 0..117 {
            assert_eq!(w[(i, i)], 0.0);
            assert!(w.row(i).sum() >= 4.0);
        }
    }

    #[test]
    fn duplicates_and_bad_threshold() {
        let coords = [[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]];
        let b = weights_from_coordinates(&coords, NeighborRule::Knn(1)).unwrap();
        assert!(b.warnings.iter().any(|w| w.contains("degenerate geometry")));
        assert!(weights_from_coordinates(&coords, NeighborRule::DistanceThreshold(0.0)).is_err());
        assert!(weights_from_coordinates(&coords, NeighborRule::Knn(3)).is_err());
        let t = weights_from_coordinates(&coords, NeighborRule::DistanceThreshold(0.5)).unwrap();
        assert!(matches!(
            row_standardize(&t.weights),
            Err(FsarError::IsolatedRegion { index: 2 })
        ));
    }

    #[test]
    fn row_standardize_examples() {
        let w = two_cycle();
        assert_eq!(row_standardize(&w).unwrap().matrix(), w.matrix());
        let w2 = SpatialWeights::new(DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0])).unwrap();
        assert_eq!(row_standardize(&w2).unwrap().matrix(), w.matrix());
        let b = weights_from_coordinates(&random_coords(40, 5), NeighborRule::Knn(3)).unwrap();
        let rs = row_standardize(&b.weights).unwrap();
        assert_abs_diff_eq!(rs.eig_max(), 1.0, epsilon = 1e-10);
        assert!(!rs.is_symmetric());
    }

    #[test]
    fn symmetrize_examples() {
        let w = two_cycle();
        assert_eq!(symmetrize(&w).matrix(), w.matrix());
        let a = SpatialWeights::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])).unwrap();
        let s = symmetrize(&a);
        assert_eq!(s.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
        assert!(s.is_symmetric());
        // Real spectrum: the general eigensolver sees no imaginary parts.
        let w = default_pipeline(30, 9);
        assert!(w.matrix().complex_eigenvalues().iter().all(|z| z.im.abs() < 1e-10));
    }

    #[test]
    fn rho_interval_examples() {
        let iv = rho_interval(&two_cycle()).unwrap();
        assert_abs_diff_eq!(iv.lo, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(iv.hi, 1.0, epsilon = 1e-12);
        let empty = SpatialWeights::new(DMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(rho_interval(&empty), Err(FsarError::UnboundedInterval { .. })));
    }

    #[test]
    fn row_standardized_symmetric_interval_top_is_one() {
        // A regular graph stays symmetric under row standardization.
        let n = 12;
        let mut ring = DMatrix::zeros(n, n);
        for i in 0..n {
            ring[(i, (i + 1) % n)] = 1.0;
            ring[((i + 1) % n, i)] = 1.0;
        }
        let w = row_standardize(&SpatialWeights::new(ring).unwrap()).unwrap();
        assert!(w.is_symmetric());
        assert_abs_diff_eq!(rho_interval(&w).unwrap().hi, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn invertible_inside_singular_at_boundary() {
        let w = default_pipeline(25, 17);
        let iv = rho_interval(&w).unwrap();
        let n = w.n();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let rho = iv.lo + (iv.hi - iv.lo) * rng.random_range(0.001..0.999);
            let det = lu_det(DMatrix::identity(n, n) - rho * w.matrix());
            assert!(det.abs() > 1e-12, "rho = {rho}");
        }
        let det_edge = lu_det(DMatrix::identity(n, n) - iv.hi * w.matrix());
        assert!(det_edge.abs() < 1e-10, "{det_edge}");
    }

    #[test]
    fn sar_transform_examples() {
        let w = two_cycle();
        assert_eq!(sar_transform(0.0, &w).unwrap(), DMatrix::identity(2, 2));
        let m = sar_transform(0.5, &w).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]));
        let inv = m.try_inverse().unwrap();
        let oracle = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]) * (4.0 / 3.0);
        assert!((inv - oracle).amax() < 1e-14);
        assert!(matches!(sar_transform(1.0, &w), Err(FsarError::RhoOutOfBounds { .. })));
    }

    #[test]
    fn condition_number_blows_up_near_boundary() {
        let w = default_pipeline(20, 4);
        let iv = rho_interval(&w).unwrap();
        let mut last = 0.0;
        for gap in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
            let rho = iv.hi - gap * (iv.hi - iv.lo);
            let svd = sar_transform(rho, &w).unwrap().svd(false, false);
            let cond = svd.singular_values.max() / svd.singular_values.min();
            assert!(cond > last);
            last = cond;
        }
        assert!(last > 1e4);
    }

    #[test]
    fn log_det_matches_lu() {
        let w = default_pipeline(15, 2);
        let n = w.n();
        for rho in [-0.8, -0.1, 0.3, 0.9] {
            let direct = lu_det(DMatrix::identity(n, n) - rho * w.matrix()).ln();
            assert_abs_diff_eq!(w.log_det(rho).unwrap(), direct, epsilon = 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn determinant_nonzero_inside_interval(seed in 0u64..1000) {
            let w = default_pipeline(12, seed);
            let iv = rho_interval(&w).unwrap();
            let n = w.n();
            for i in 1..=50 {
                let rho = iv.lo + (iv.hi - iv.lo) * i as f64 / 51.0;
                let det = lu_det(DMatrix::identity(n, n) - rho * w.matrix());
                prop_assert!(det.abs() > 0.0 && det > 0.0);
            }
        }

        #[test]
        fn symmetrize_idempotent(seed in 0u64..1000) {
            let b = weights_from_coordinates(&random_coords(10, seed), NeighborRule::Knn(2)).unwrap();
            let rs = row_standardize(&b.weights).unwrap();
            let once = symmetrize(&rs);
            let twice = symmetrize(&once);
            prop_assert_eq!(once.matrix(), twice.matrix());
        }

        #[test]
        fn row_sums_are_one(seed in 0u64..1000) {
            let b = weights_from_coordinates(&random_coords(15, seed), NeighborRule::Knn(3)).unwrap();
            let rs = row_standardize(&b.weights).unwrap();
            for row in rs.matrix().row_iter() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn knn_invariant_under_rigid_motion(seed in 0u64..1000, angle in 0.0f64..std::f64::consts::TAU, dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
            let c = random_coords(20, seed);
            let (s, co) = angle.sin_cos();
            let moved: Vec<[f64; 2]> = c.iter().map(|p| [co * p[0] - s * p[1] + dx, s * p[0] + co * p[1] + dy]).collect();
            let a = weights_from_coordinates(&c, NeighborRule::Knn(3)).unwrap();
            let b = weights_from_coordinates(&moved, NeighborRule::Knn(3)).unwrap();
            prop_assert_eq!(a.weights.matrix(), b.weights.matrix());
        }
    }
}
