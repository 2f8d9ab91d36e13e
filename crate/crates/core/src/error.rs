use thiserror::Error;

/// Errors raised by the platoon model, the simulator and the analysis layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("controller state has dimension {got}, policy expects {expected}")]
    Dimension { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("simulation diverged at step {step} (t = {t:.4} s), vehicle {vehicle}")]
    Diverged { step: usize, t: f64, vehicle: usize },

    #[error("{}", config_message(.line, .key, .reason))]
    Config {
        line: Option<usize>,
        key: String,
        reason: String,
    },

    #[error("trajectory log: {0}")]
    Schema(String),

    #[error("inconsistent analysis inputs: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn config_message(line: &Option<usize>, key: &str, reason: &str) -> String {
    match line {
        Some(l) => format!("config line {l}, key `{key}`: {reason}"),
        None => format!("config key `{key}`: {reason}"),
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
