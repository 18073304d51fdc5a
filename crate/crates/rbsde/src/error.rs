use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared by all solver families.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: horizon={horizon}, steps={steps}")]
    InvalidGrid { horizon: f64, steps: usize },

    #[error("invalid space grid: [{x_min}, {x_max}] with {nx} nodes")]
    InvalidSpaceGrid { x_min: f64, x_max: f64, nx: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("generator returned non-finite value {value} at t={t}, y={y}, |z|={z_norm}")]
    NonFiniteGenerator { t: f64, y: f64, z_norm: f64, value: f64 },

    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("sup-moment overflow on path {path} for exponent {exponent}")]
    MomentOverflow { path: usize, exponent: f64 },

    #[error("too few samples for regression: {samples} < basis size {basis_size}")]
    TooFewSamples { samples: usize, basis_size: usize },

    #[error("barriers not strictly ordered at t={t}: lower={lower} >= upper={upper}")]
    BarrierOrdering { t: f64, lower: f64, upper: f64 },

    #[error("terminal value {xi} outside barrier band [{lower}, {upper}] on path {path}")]
    TerminalOutsideBand { path: usize, xi: f64, lower: f64, upper: f64 },

    #[error("backward recursion diverged at step {step}: |y|={value} exceeds cap {cap}")]
    Diverged { step: usize, value: f64, cap: f64 },

    #[error(
        "generator exceeds its declared growth envelope on probe sample {index}: \
         |f|={value} > envelope {envelope} (y={y}, |z|={z_norm})"
    )]
    GrowthEnvelope { index: usize, value: f64, envelope: f64, y: f64, z_norm: f64 },

    #[error("penalization schedule must be strictly increasing with all levels >= 1")]
    InvalidSchedule,

    #[error("CFL violation in explicit mode: dt={dt} > dx^2/max(sigma^2)={limit}; reduce dt to at most {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("projected relaxation did not converge after {iters} iterations (residual {residual})")]
    RelaxationDiverged { iters: usize, residual: f64 },

    #[error("obstacles not strictly separated at t={t}, x={x}: h={lower}, h'={upper}")]
    ObstacleOrdering { t: f64, x: f64, lower: f64, upper: f64 },

    #[error("terminal datum {g} outside obstacle band [{lower}, {upper}] at x={x}")]
    TerminalOutsideObstacles { x: f64, g: f64, lower: f64, upper: f64 },

    #[error("volatility matrix not invertible at t={t} (path {path}, step {step})")]
    SingularVolatility { t: f64, path: usize, step: usize },

    #[error(
        "Girsanov weight overflow on path {path}: log-weight {log_weight}; \
         reduce the horizon or the drift scale"
    )]
    WeightOverflow { path: usize, log_weight: f64 },

    #[error("game growth bound violated at t={t}: |h|+|phi|={value} > K(1+||x||)={bound}")]
    GameGrowthBound { t: f64, value: f64, bound: f64 },

    #[error("control grids must be non-empty")]
    EmptyControlGrid,

    #[error("unknown {kind} '{name}'; known entries: {known}")]
    UnknownRegistryEntry { kind: &'static str, name: String, known: String },

    #[error("missing required parameter '{param}' for {kind} '{entry}'")]
    MissingParam { kind: &'static str, entry: String, param: String },

    #[error("unknown parameter(s) [{params}] for {kind} '{entry}'")]
    UnusedParams { kind: &'static str, entry: String, params: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
