use alloc::string::String;

/// Errors raised by the core routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("simplex ETF of {n} points needs dimension >= {required}, got {d}")]
    DimensionTooSmall { n: usize, d: usize, required: usize },
    #[error("row {row} has zero norm and cannot be projected onto the sphere")]
    ZeroRow { row: usize },
    #[error("row {row} of view {view} has norm {norm}, expected 1")]
    NotUnitRow { view: char, row: usize, norm: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range for {n} instances")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),
    #[error("input is not a simplex ETF: {0}")]
    NotEtf(String),
    #[error("batch size {m} does not divide {n} instances")]
    Indivisible { n: usize, m: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("loss family {family} does not allow negative selectors (c1, c2) = ({c1}, {c2})")]
    Selectors { family: &'static str, c1: u8, c2: u8 },
    #[error("{family} is not a member of the {expected} loss form")]
    WrongForm { family: &'static str, expected: &'static str },
    #[error("log received nonpositive argument {0}")]
    Domain(f64),
    #[error("non-finite value at step {step}: loss = {loss}, gradient norm = {grad_norm}")]
    NonFinite { step: usize, loss: f64, grad_norm: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
