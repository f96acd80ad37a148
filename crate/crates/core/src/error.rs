use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("bubble became non-positive at r = {radius:e}")]
    NonPositiveBubble { radius: f64 },
    #[error("ODE step size underflow at t = {at}")]
    StepFailure { at: f64 },
    #[error("quadrature error {achieved:e} above requested {requested:e}")]
    QuadratureTolerance { achieved: f64, requested: f64 },
    #[error("design matrix condition number {condition:e} too large")]
    SingularFit { condition: f64 },
    #[error("bisection bracket lost for target {target}")]
    BracketFailure { target: f64 },
    #[error("bubble supports overlap or exceed a quarter of the box")]
    SupportOverlap,
    #[error("support radius {delta:e} spans fewer than 4 grid cells")]
    UnderResolved { delta: f64 },
    #[error("positive part of the field is empty")]
    EmptyPositivePart,
    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("line search stalled at J = {value}")]
    LineSearchStall { value: f64 },
    #[error("solution lost positivity (min = {min})")]
    NonPositiveSolution { min: f64 },
    #[error("Krylov breakdown after {iterations} iterations")]
    KrylovBreakdown { iterations: usize },
    #[error("Newton reached {iterations} iterations with residual {residual:e}")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("continuation step collapsed at beta = {beta}")]
    StepCollapse { beta: f64 },
    #[error("blow-up detected at beta = {beta}: u_max = {u_max}, mu = {mu:e}")]
    BlowUpDetected { beta: f64, u_max: f64, mu: f64 },
}

impl Error {
    /// Input-validation errors, as opposed to numerical failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::SupportOverlap | Error::UnderResolved { .. }
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::NonPositiveBubble { .. } => "NonPositiveBubble",
            Error::StepFailure { .. } => "StepFailure",
            Error::QuadratureTolerance { .. } => "QuadratureTolerance",
            Error::SingularFit { .. } => "SingularFit",
            Error::BracketFailure { .. } => "BracketFailure",
            Error::SupportOverlap => "SupportOverlap",
            Error::UnderResolved { .. } => "UnderResolved",
            Error::EmptyPositivePart => "EmptyPositivePart",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::LineSearchStall { .. } => "LineSearchStall",
            Error::NonPositiveSolution { .. } => "NonPositiveSolution",
            Error::KrylovBreakdown { .. } => "KrylovBreakdown",
            Error::MaxIterations { .. } => "MaxIterations",
            Error::StepCollapse { .. } => "StepCollapse",
            Error::BlowUpDetected { .. } => "BlowUpDetected",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
