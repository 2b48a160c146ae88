use core::fmt;

/// Errors raised by the simulation and learning core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A physical or configuration parameter is outside its valid domain.
    InvalidParameter(&'static str),
    /// A numeric input was NaN or infinite.
    NonFinite(&'static str),
    /// An applied voltage fell outside `[0, 10]` V.
    VoltageOutOfRange { index: usize, volts: f64 },
    /// Array or sequence dimensions disagree.
    ShapeMismatch { expected: usize, found: usize },
    /// `step` was called on an episode that already ended.
    EpisodeDone,
    /// `step` was called before `reset`.
    NotReset,
    /// The replay buffer holds fewer trajectories than requested.
    BufferNotReady { len: usize, requested: usize },
    /// A trajectory did not have the configured length.
    TrajectoryLength { expected: usize, found: usize },
    /// A gradient cache does not belong to the parameters it is used with.
    StaleCache,
    /// A training loss became NaN or infinite.
    Divergence { what: &'static str, value: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(what) => write!(f, "invalid parameter: {what}"),
            Error::NonFinite(what) => write!(f, "non-finite input: {what}"),
            Error::VoltageOutOfRange { index, volts } => {
                write!(f, "voltage {volts} V on muscle {index} outside [0, 10] V")
            }
            Error::ShapeMismatch { expected, found } => {
                write!(f, "shape mismatch: expected {expected}, found {found}")
            }
            Error::EpisodeDone => f.write_str("episode already finished; call reset"),
            Error::NotReset => f.write_str("environment stepped before reset"),
            Error::BufferNotReady { len, requested } => {
                write!(f, "replay buffer holds {len} trajectories, {requested} requested")
            }
            Error::TrajectoryLength { expected, found } => {
                write!(f, "trajectory has {found} steps, expected {expected}")
            }
            Error::StaleCache => f.write_str("gradient cache does not match parameters"),
            Error::Divergence { what, value } => write!(f, "{what} diverged ({value})"),
        }
    }
}

impl core::error::Error for Error {}
