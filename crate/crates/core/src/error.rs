use thiserror::Error;

/// Errors shared by every module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("spatial dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("point ({t}, {x:?}) is outside the search window of the graph box")]
    OutOfWindow { t: f64, x: Vec<f64> },

    #[error("requested scale {requested} is below the resolution floor {floor}")]
    ResolutionFloor { requested: f64, floor: f64 },

    #[error("point is not on the graph (vertical offset {offset}, tolerance {tol})")]
    NotOnGraph { offset: f64, tol: f64 },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("grid is not aligned with the dyadic lattice: {0}")]
    Misaligned(String),

    #[error("cube axiom violated for cube {cube}: {what}")]
    AxiomViolation { cube: String, what: String },

    #[error("Whitney separation violated for cube at {at}: dist {dist} < required {required}")]
    SeparationViolation { at: String, dist: f64, required: f64 },

    #[error("field is negative at a sample (min {0})")]
    NegativeField(f64),

    #[error("Lip(1/2,1) constant too large: measured {measured}, limit {limit}")]
    LipExceeded { measured: f64, limit: f64 },

    #[error("derivative undefined on the zero set")]
    UndefinedDerivative,

    #[error("explicit scheme stability violated: factor {factor} > {limit}")]
    Cfl { factor: f64, limit: f64 },

    #[error("domain mask is empty")]
    EmptyDomain,

    #[error("enlarged ball exits the solved domain")]
    BallExitsDomain,

    #[error("corona input is inconsistent: {0}")]
    CoronaInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
