use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    /// The enclosing ball of a hole comes closer than `kappa * epsilon` to its cell boundary.
    #[error(
        "layout violation in cell {cell:?}: d + kappa*eps = {required} exceeds eps/2 = {available}"
    )]
    LayoutViolation {
        cell: Option<Vec<i64>>,
        required: f64,
        available: f64,
    },

    #[error("argument outside the domain of {what}: {detail}")]
    DomainError { what: &'static str, detail: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("hole {hole} masks no grid node (d = {d}, h = {h})")]
    Unresolvable { hole: usize, d: f64, h: f64 },

    #[error("cell {0:?} contains no active grid node")]
    EmptyCell(Vec<i64>),

    #[error("cutoff band ({inner}, {outer}) contains no grid node")]
    UnresolvableCutoff { inner: f64, outer: f64 },

    #[error(
        "CG did not reach tolerance {tol:e} after {iterations} iterations (residual {residual:e})"
    )]
    CgNotConverged {
        iterations: usize,
        residual: f64,
        tol: f64,
        best: Vec<f64>,
    },

    #[error(
        "eigensolver converged {converged} of {requested} pairs after {iterations} iterations"
    )]
    EigNotConverged {
        requested: usize,
        converged: usize,
        iterations: usize,
        eigenvalues: Vec<f64>,
    },

    #[error("matrix exponential action did not meet tolerance {tol:e} (estimate {estimate:e})")]
    ExpmTolerance { tol: f64, estimate: f64 },

    #[error("dense computation of size {size} exceeds the dense limit {limit}")]
    SizeLimit { size: usize, limit: usize },

    #[error("matrix is not symmetric positive semidefinite: {0}")]
    NotPsd(String),

    #[error("interval endpoint {endpoint} lies within 1e-6 of the spectra of both operators")]
    SpectralGap { endpoint: f64 },

    #[error("beta in (0, 1) is required for n = 4")]
    MissingBeta,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("hausdorff distance of an empty set")]
    EmptySet,

    #[error("no samples satisfy the distance threshold")]
    NoSamples,

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
