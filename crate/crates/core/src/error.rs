use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One violated configuration invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Dotted field path, e.g. `fading.multicast_gains[1][0]`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Non-empty list of violations found while validating a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Violations(pub Vec<Violation>);

impl Violations {
    pub fn iter(&self) -> impl Iterator<Item = &Violation> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when some violation message contains `needle`.
    pub fn mentions(&self, needle: &str) -> bool {
        self.0.iter().any(|v| v.message.contains(needle))
    }
}

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(Violations),

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("{kind} index {index} out of range (len {len})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    #[error("zero-forcing infeasible: N = {n_antennas} must exceed G + U = {streams}")]
    ZfInfeasible { n_antennas: usize, streams: usize },

    #[error("degenerate zero-forcing group load for group {group}: B = {load} <= P = {total_power}")]
    DegenerateZf {
        group: usize,
        load: f64,
        total_power: f64,
    },

    #[error("precoder for stream {stream} requested with power {power} but zero estimate variance")]
    ZeroEstimateVariance { stream: usize, power: f64 },

    #[error("estimated channel matrix is rank deficient or ill-conditioned (condition {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(what: impl Into<String>, expected: impl fmt::Display, found: impl fmt::Display) -> Self {
        Error::ShapeMismatch {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
