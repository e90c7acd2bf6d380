use thiserror::Error;

/// Errors raised by the numerical kernels and the experiment plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment law: {0}")]
    InvalidLaw(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("moment generating function is infinite: potential plus tilt reaches {max_psi} >= 0 with eta = {eta} > 0")]
    NonFiniteMgf { eta: f64, max_psi: f64 },

    #[error("environment window underflow: site {site} needed, data starts at {x_lo}")]
    WindowUnderflow { site: i64, x_lo: i64 },

    #[error("singular tridiagonal system at row {row}")]
    Singular { row: usize },

    #[error("no tilt solves L'(eta) = 1/v for v = {v}: derivative at 0 is {d1_at_zero}")]
    NoSolution { v: f64, d1_at_zero: f64 },

    #[error("velocity {v} is not above the critical velocity {v_c}")]
    BelowCritical { v: f64, v_c: f64 },

    #[error("root finding failed: {0}")]
    RootNotFound(String),

    #[error("degenerate variance: sigma_v^2 = {0:e}")]
    DegenerateVariance(f64),

    #[error("domain too small: boundary mantissa {boundary:e} exceeds {tol:e} of the maximum")]
    DomainTooSmall { boundary: f64, tol: f64 },

    #[error("environment does not cover site {0}")]
    OutsideEnvironment(i64),

    #[error("integration unstable at t = {t}: value {value} at site {site}")]
    Unstable { t: f64, site: i64, value: f64 },

    #[error("front not formed at t = {0}")]
    FrontNotFormed(f64),

    #[error("site {n} not reached before horizon {horizon}")]
    NotReached { n: i64, horizon: f64 },

    #[error("Y^approx is not resolved: Y = {y:e}, Y^< = {y_less:e}")]
    Resolution { y: f64, y_less: f64 },

    #[error("population cap {cap} exceeded")]
    CapExceeded { cap: usize },

    #[error("ensemble too small: {got} paths, need at least {need}")]
    EnsembleTooSmall { got: usize, need: usize },

    #[error("negative gap {gap} at t = {t}")]
    NegativeGap { t: f64, gap: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unsupported schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Usage-type errors, as opposed to numerical failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidLaw(_)
                | Error::InvalidArgument(_)
                | Error::Schema(_)
                | Error::SchemaVersion { .. }
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
