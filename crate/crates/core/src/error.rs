use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("finite-difference derivative unstable at {what}: relative disagreement {rel:.3e}")]
    DerivativeUnstable { what: String, rel: f64 },
    #[error("symbol is not elliptic: {0}")]
    NotElliptic(String),
    #[error("principal components incompatible: {0}")]
    CompatibilityViolation(String),
    #[error("non-positive component {component} at sample {at}")]
    NonPositiveComponent { component: String, at: String },
    #[error("cutoff configuration invariant violated: {0}")]
    ConfigInvariantViolated(String),
    #[error("quadrature did not converge: estimate {estimate:.3e}, error {error:.3e}")]
    QuadratureNotConverged { estimate: f64, error: f64 },
    #[error("tail decays too slowly (measured exponent {alpha:.3})")]
    DivergentTail { alpha: f64 },
    #[error("derivation routes disagree: direct {direct:.12e}, reduced {reduced:.12e}")]
    PathsDisagree { direct: f64, reduced: f64 },
    #[error("orders are equal (m = mu = {0}); logarithmic case not handled")]
    EqualOrders(f64),
    #[error("quadrature under-resolved: matrix entry moved by {delta:.3e}")]
    QuadratureUnderResolved { delta: f64 },
    #[error("eigensolver failure: {0}")]
    SolverFailure(String),
    #[error("model mismatch: {0} vs {1}")]
    ModelMismatch(String, String),
    #[error("lambda {lambda} beyond trusted range (max {max})")]
    BeyondTrustedRange { lambda: f64, max: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("ODE tolerance not met: {0}")]
    OdeToleranceNotMet(String),
    #[error("flow map not invertible at T = {t}: {detail}")]
    FlowNotInvertible { t: f64, detail: String },
    #[error("Newton iteration diverged: {0}")]
    NewtonDiverged(String),
    #[error("phase certificate failed: {0}")]
    CertificateFailed(String),
    #[error("quadrature budget exceeded ({0} evaluations)")]
    QuadratureBudgetExceeded(usize),
    #[error("phase coverage insufficient: {0}")]
    PhaseCoverageInsufficient(String),
    #[error("contraction violated: measured ratio {ratio:.3} > {bound:.3}")]
    ContractionViolated { ratio: f64, bound: f64 },
    #[error("point outside the fixed-point domain: <x> = {jx:.4} > kappa*lambda = {limit:.4}")]
    OutOfDomain { jx: f64, limit: f64 },
    #[error("Hessian degenerate or outside band: {0}")]
    HessianDegenerate(String),
    #[error("derivative unavailable: {0}")]
    DerivativeUnavailable(String),
    #[error("Tauberian hypothesis failed: {0}")]
    HypothesisFailed(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("cache corrupt: {0}")]
    CacheCorrupt(String),
    #[error("stage dependency missing: {0}")]
    StageDependencyMissing(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
