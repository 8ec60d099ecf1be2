//! Operator tensors for quantum circuits: labelled operators, circuit-trace
//! contraction, physicality checks, fiducial duotensors and tomography.

pub mod duotensor;
pub mod error;
pub mod evaluator;
pub mod io;
pub mod linalg;
pub mod notation;
pub mod optensor;
pub mod tomography;

pub use duotensor::{DotColor, Duotensor, FiducialSet, FiducialSets};
pub use error::{Error, Result, WiringError};
pub use evaluator::{probability, probability_foliated, Binding};
pub use linalg::{CMatrix, CVector, LabeledOperator, Role, Slot};
pub use notation::{parse_circuit, print_circuit, CircuitFragment, SystemType, TypeRegistry, WireLabel};
pub use optensor::circuit_trace;
