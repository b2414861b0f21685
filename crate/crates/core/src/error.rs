use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, CoreError>;

/// Errors surfaced by the math core.
///
/// Variants carry enough data to reconstruct what went wrong without a
/// debugger: offending shapes, lengths, names and values.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Two tensors (or a tensor and an expectation) disagree on shape.
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    /// A buffer length does not match the shape it claims to carry.
    DataLength {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// An argument violated a documented precondition.
    InvalidArgument { what: &'static str, detail: String },
    /// A NaN or infinity appeared where finite values are contractual.
    NonFinite { what: String },
    /// Amplitude alignment hit a (near-)constant spectrum: σ below the floor.
    DegenerateStd { sigma: f64, floor: f64 },
    /// An inverse transform produced an imaginary part too large to discard.
    ImaginaryResidue { residue: f64, limit: f64 },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch {
                what,
                expected,
                got,
            } => write!(
                f,
                "{what}: shape mismatch, expected {}x{}x{}, got {}x{}x{}",
                expected.0, expected.1, expected.2, got.0, got.1, got.2
            ),
            CoreError::DataLength {
                what,
                expected,
                got,
            } => write!(f, "{what}: data length {got} does not match shape ({expected} entries)"),
            CoreError::InvalidArgument { what, detail } => write!(f, "{what}: {detail}"),
            CoreError::NonFinite { what } => write!(f, "non-finite value in {what}"),
            CoreError::DegenerateStd { sigma, floor } => write!(
                f,
                "amplitude std {sigma:e} is below the degeneracy floor {floor:e} (constant spectrum?)"
            ),
            CoreError::ImaginaryResidue { residue, limit } => write!(
                f,
                "inverse transform left imaginary residue {residue:e} (limit {limit:e}); spectrum is not conjugate-symmetric"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}
