use thiserror::Error;

/// Errors surfaced by grid construction, spectral operators, kernel
/// validation, time stepping, and the refinement harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operator requires zero-mean input, measured mean {mean:e}")]
    NonzeroMean { mean: f64 },

    #[error("imaginary residue {residue:e} of inverse transform exceeds threshold; coefficients violate conjugate symmetry")]
    SymmetryViolation { residue: f64 },

    #[error("kernel positivity violated: implicit-solve denominator {denominator} at mode ({k}, {l})")]
    KernelPositivity { denominator: f64, k: i64, l: i64 },

    #[error("solution blew up at step {step}: non-finite values detected")]
    BlowUp { step: usize },

    #[error("mean mismatch between solution ({lhs:e}) and reference ({rhs:e}); both sides must conserve the same mass")]
    ConservationViolation { lhs: f64, rhs: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed data file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code mandated for this error class: blow-up maps to 2,
    /// everything else (validation, I/O, format) to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BlowUp { .. } => 2,
            _ => 1,
        }
    }
}
