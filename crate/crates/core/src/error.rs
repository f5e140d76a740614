use thiserror::Error;

/// Errors raised by the functional SAR toolkit.
///
/// Variants are split into input problems (bad arguments, malformed files,
/// inconsistent dimensions) and numerical failures (singular systems,
/// degenerate spectra). [`FsarError::is_input_error`] drives the CLI exit
/// code contract.
#[derive(Debug, Error)]
pub enum FsarError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("area {index} has no neighbours; row standardization is undefined for isolated regions")]
    IsolatedRegion { index: usize },

    #[error("admissible rho interval is unbounded: eigenvalues of W span [{eig_min}, {eig_max}], need eig_min < 0 < eig_max")]
    UnboundedInterval { eig_min: f64, eig_max: f64 },

    #[error("rho = {rho} lies outside the admissible interval ({lo}, {hi})")]
    RhoOutOfBounds { rho: f64, lo: f64, hi: f64 },

    #[error("det(I - rho W) is not positive at rho = {rho}")]
    DeterminantSign { rho: f64 },

    #[error("eigenvalue iteration for W did not converge")]
    SpectrumFailure,

    #[error("design matrix is rank deficient ({0}); try a smaller basis size k")]
    SingularDesign(String),

    #[error("degenerate residual: r'W^2 r = 0, rho cannot be updated")]
    DegenerateResidual,

    #[error("insufficient degrees of freedom: n = {n}, effective parameters r = {r}")]
    InsufficientDof { n: usize, r: f64 },

    #[error("information matrix A'(I - rho W)^2 A is singular")]
    SingularInformation,

    #[error("invalid fit: {0}")]
    InvalidFit(String),

    #[error("system (I - rho W) is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("empirical covariance operator is degenerate: all eigenvalues below 1e-12")]
    DegenerateCovariance,

    #[error("covariance operator has eigenvalue {eigenvalue:.3e} at k_n = {k_n}; choose a smaller k_n")]
    RankDeficient { k_n: usize, eigenvalue: f64 },

    #[error("Gaussian process covariance is not positive definite after jitter")]
    KernelDegenerate,

    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FsarError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        FsarError::InvalidArgument(msg.into())
    }

    /// True for errors caused by user input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            FsarError::InvalidArgument(_)
                | FsarError::IsolatedRegion { .. }
                | FsarError::RhoOutOfBounds { .. }
                | FsarError::Parse { .. }
                | FsarError::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, FsarError>;
