use thiserror::Error;

use crate::notation::WireLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// The three ways a set of operations can violate the wiring rules.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WiringError {
    #[error("OneWireViolation: slot {label} has more than one wire attached")]
    OneWireViolation { label: WireLabel },
    #[error("TypeMismatch: wire {id} joins type {first} to type {second}")]
    TypeMismatch { id: u32, first: String, second: String },
    #[error("ClosedLoop: {}", cycle.join(" -> "))]
    ClosedLoop { cycle: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("SyntaxError at byte {position}: expected {expected}")]
    Syntax { position: usize, expected: String },
    #[error(transparent)]
    Wiring(#[from] WiringError),
    #[error("DuplicateLabel: {0} occurs in both operands")]
    DuplicateLabel(WireLabel),
    #[error("UnknownLabel: {0}")]
    UnknownLabel(WireLabel),
    #[error("NonHermitian: max |M - M^dagger| = {deviation:e}")]
    NonHermitian { deviation: f64 },
    #[error("LabelArityError: {label} appears twice as {role}")]
    LabelArity { label: WireLabel, role: &'static str },
    #[error("DimMismatch: {0}")]
    DimMismatch(String),
    #[error("NonUnitary: matrix for {label} deviates from unitary by {deviation:e}")]
    NonUnitary { label: WireLabel, deviation: f64 },
    #[error("SignatureMismatch: {0}")]
    SignatureMismatch(String),
    #[error("NotApplicable: operator is physical, no witness exists")]
    NotApplicable,
    #[error("SingularMetric: fiducial metric for type {0} is not invertible")]
    SingularMetric(String),
    #[error("SingularBasis: fiducial basis for type {0} does not span the operator space")]
    SingularBasis(String),
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("MissingFiducials: no fiducial set for type {0}")]
    MissingFiducials(String),
    #[error("UnboundOperation: {0}")]
    UnboundOperation(String),
    #[error("NonCircuitTerm: term {0} has open ports")]
    NonCircuitTerm(usize),
    #[error("ZeroFragment: reference fragment operator vanishes")]
    ZeroFragment,
    #[error("NonPhysical: {0}")]
    NonPhysical(String),
    #[error("Format: {0}")]
    Format(String),
    #[error("NotFound: {0}")]
    NotFound(String),
    #[error("Io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(e.to_string()),
            _ => Error::Io(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
