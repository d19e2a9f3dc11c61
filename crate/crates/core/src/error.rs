use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("non-finite value in `{array}` at index {index}")]
    NonFinite { array: &'static str, index: usize },
    #[error("scene is empty")]
    EmptyScene,
    #[error("invalid grid configuration: {0}")]
    InvalidGrid(String),
    #[error("cell {cell:?} out of range for resolution {res}")]
    CellOutOfRange { cell: [u32; 3], res: u32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("quantization step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("non-finite value cannot be quantized")]
    NonFiniteValue,
    #[error("symbol {symbol} outside coder range [{min}, {max}]")]
    SymbolRange { symbol: i64, min: i32, max: i32 },
    #[error("range decoder ran past the end of its input")]
    Exhausted,
    #[error("range decoder desynchronized")]
    Desync,
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}
