use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("radicand d = {0} must be at least 2")]
    BadRadicand(u64),
    #[error("radicand d = {0} is not squarefree")]
    NotSquarefree(u64),
    #[error("surd coefficient b is zero; the input is rational")]
    Rational,
    #[error("value {0} lies outside the open unit interval")]
    OutOfRange(String),
    #[error("cannot parse alpha spec {0:?}")]
    AlphaSpec(String),
    #[error("continued fraction period not found within {0} steps")]
    PeriodNotFound(usize),
    #[error("index must be positive")]
    ZeroIndex,
    #[error("x = {0} is below 2, where log2(x)^2 vanishes")]
    IndexBelowTwo(u64),
    #[error("epsilon must be 2^k with k < 0, got k = {0}")]
    BadEpsilon(i32),
    #[error("delta must lie in (0, 1), got {0}")]
    BadDelta(String),
    #[error("level {level} exceeds the capacity {max} of the dyadic index type")]
    LevelOverflow { level: u32, max: u32 },
    #[error("interval [{lo}, {hi}] is not a subinterval of [0, 1]")]
    InvalidInterval { lo: String, hi: String },
    #[error("empty union has no leftmost interval")]
    EmptyUnion,
    #[error("survivor set went extinct at x = {x}")]
    Extinct { x: u64 },
    #[error("q0 = {q0} must be at least 2 and at most Q = {q_max}")]
    BadRange { q0: u64, q_max: u64 },
    #[error("requested {requested} bits but the surviving interval sits at level {level}")]
    InsufficientBits { requested: u32, level: u32 },
    #[error("beta interval contains a fraction y/{q}")]
    BetaHitsRational { q: u64 },
    #[error("run has not reached x = {0}")]
    NotReached(u64),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
