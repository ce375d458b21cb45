use alloc::string::String;
use core::fmt;

/// Convenience result type used across the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the simulator, the autodiff tape, the adapters and the
/// training loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// The vector to embed has (numerically) zero ℓ₂ norm.
    ZeroNormInput,
    /// A vector length did not match the embedding it was given to.
    DimensionMismatch { expected: usize, found: usize },
    /// A qubit index was outside `0..n_qubits`.
    QubitOutOfRange { qubit: usize, n_qubits: usize },
    /// A two-qubit gate named the same qubit as control and target.
    SelfTarget { qubit: usize },
    /// Operand shapes are incompatible for the requested operation.
    ShapeMismatch(String),
    /// A parameter value is NaN or infinite.
    NonFiniteParameter { index: usize },
    /// `backward` was called on a loss that depends on no trainable tensor.
    DisconnectedGraph,
    /// `backward` was called on a non-scalar node.
    NotScalar { len: usize },
    /// A method name did not match any known fine-tuning strategy.
    UnknownMethod(String),
    /// A token id is not below the vocabulary size.
    TokenOutOfRange { token: usize, vocab_size: usize },
    /// The sequence (plus any prefix) exceeds the positional table.
    SequenceTooLong { len: usize, max: usize },
    /// Every position of a loss was masked out.
    AllMasked,
    /// The training loss became NaN or infinite.
    NonFiniteLoss { step: u64 },
    /// A configuration value is outside its valid range.
    InvalidConfig(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ZeroNormInput => write!(f, "input vector has zero norm"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::QubitOutOfRange { qubit, n_qubits } => {
                write!(f, "qubit {qubit} out of range for {n_qubits} qubits")
            }
            Error::SelfTarget { qubit } => {
                write!(f, "control and target are both qubit {qubit}")
            }
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::NonFiniteParameter { index } => {
                write!(f, "parameter {index} is not finite")
            }
            Error::DisconnectedGraph => {
                write!(f, "loss does not depend on any trainable tensor")
            }
            Error::NotScalar { len } => {
                write!(f, "backward requires a scalar, got {len} elements")
            }
            Error::UnknownMethod(name) => write!(
                f,
                "unknown method '{name}' (expected one of full, lora, sora, prefix, qaa)"
            ),
            Error::TokenOutOfRange { token, vocab_size } => {
                write!(f, "token {token} out of range for vocabulary of {vocab_size}")
            }
            Error::SequenceTooLong { len, max } => {
                write!(f, "sequence length {len} exceeds maximum {max}")
            }
            Error::AllMasked => write!(f, "every loss position is masked"),
            Error::NonFiniteLoss { step } => write!(f, "non-finite loss at step {step}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
