use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("exhaustive budget exceeded: {points} points > {budget}; use the query-based search in `sft`")]
    BudgetExceeded { points: u128, budget: u128 },

    #[error("{0} is not coprime with modulus {1}")]
    NotCoprime(u64, u64),

    #[error("operation requires basic literals (z = 1), found z = {0}")]
    NonBasicLiteral(u64),

    #[error("no correlated character found at gamma = {gamma}")]
    NoCorrelatedCharacter { gamma: f64 },

    #[error("rejection sampling exhausted {draws} draws without an accept")]
    MeasureCollapse { draws: u64 },

    #[error("no disagreement found in {draws} draws")]
    NoDisagreementFound { draws: u64 },

    #[error("refinement degenerate: b = {b} <= 4 * kappa * ell with kappa*ell = {kappa_ell}")]
    RefinementDegenerate { b: u64, kappa_ell: u64 },

    #[error("iteration cap {0} exceeded")]
    IterationCapExceeded(usize),

    #[error("query cap {0} exceeded")]
    QueryCapExceeded(u64),

    #[error("gamma schedule exhausted below {min}")]
    GammaExhausted { min: f64 },

    #[error("booster called after termination")]
    BoosterTerminated,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
