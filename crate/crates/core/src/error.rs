//! Crate-wide error type.
//!
//! Every failure carries a stable one-word class (see [`Error::class`]) so
//! callers such as the CLI can emit machine-parseable error lines without
//! matching on message text.

/// Unified error for all modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad configuration value (out-of-range dimension, invalid key, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// Qubit or element index out of range.
    #[error("index error: {0}")]
    Index(String),
    /// Structurally impossible gate (e.g. control equals target).
    #[error("invalid gate: {0}")]
    InvalidGate(String),
    /// Circuit structure cannot be built (active set too small, ...).
    #[error("structural error: {0}")]
    Structure(String),
    /// Caller broke an API contract (dimension mismatch between values).
    #[error("contract error: {0}")]
    Contract(String),
    /// Input data is malformed or inconsistent.
    #[error("data error: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn index(msg: impl Into<String>) -> Self {
        Error::Index(msg.into())
    }
    pub fn invalid_gate(msg: impl Into<String>) -> Self {
        Error::InvalidGate(msg.into())
    }
    pub fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Prefix the message with a location hint, keeping the class. Io gets
    /// re-classed as data because io::Error carries no message slot.
    pub fn prefixed(self, prefix: &str) -> Error {
        match self {
            Error::Config(m) => Error::Config(format!("{prefix}: {m}")),
            Error::Index(m) => Error::Index(format!("{prefix}: {m}")),
            Error::InvalidGate(m) => Error::InvalidGate(format!("{prefix}: {m}")),
            Error::Structure(m) => Error::Structure(format!("{prefix}: {m}")),
            Error::Contract(m) => Error::Contract(format!("{prefix}: {m}")),
            Error::Data(m) => Error::Data(format!("{prefix}: {m}")),
            Error::Io(e) => Error::Data(format!("{prefix}: {e}")),
        }
    }

    /// Stable machine-readable category name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Index(_) => "index",
            Error::InvalidGate(_) => "invalid-gate",
            Error::Structure(_) => "structure",
            Error::Contract(_) => "contract",
            Error::Data(_) => "data",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_are_stable_words() {
        let errs = [
            Error::config("x"),
            Error::index("x"),
            Error::invalid_gate("x"),
            Error::structure("x"),
            Error::contract("x"),
            Error::data("x"),
        ];
        let classes: Vec<_> = errs.iter().map(Error::class).collect();
        assert_eq!(
            classes,
            ["config", "index", "invalid-gate", "structure", "contract", "data"]
        );
    }

    #[test]
    fn io_errors_convert() {
        let e: Error = std::io::Error::new(std::io::ErrorKind::NotFound, "gone").into();
        assert_eq!(e.class(), "io");
    }
}
