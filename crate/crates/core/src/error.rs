use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{field} value {value} does not fit in 16 bits")]
    LabelOverflow { field: &'static str, value: u32 },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("rotation is not a proper orthonormal matrix: {0}")]
    InvalidRotation(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("things point {index} carries instance id 0")]
    MissingInstance { index: usize },
    #[error("frame {0} has no pose")]
    MissingPose(usize),
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { loss: f64, step: usize },
    #[error("{0} is undefined")]
    Undefined(&'static str),
    #[error("malformed weight head data: {0}")]
    HeadFormat(String),
}
