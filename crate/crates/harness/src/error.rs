use thiserror::Error;
use zvonkin_core::Error as CoreError;

/// Process exit codes.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BLOW_UP: i32 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("blow-up: {0}")]
    BlowUp(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(CoreError),
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match root(&e) {
            CoreError::BlowUp { .. } | CoreError::NonFinite => HarnessError::BlowUp(e.to_string()),
            CoreError::Config(_)
            | CoreError::InvalidParameter { .. }
            | CoreError::DimensionMismatch { .. }
            | CoreError::Threshold { .. }
            | CoreError::NoiseMismatch(_) => HarnessError::Config(e.to_string()),
            _ => HarnessError::Core(e),
        }
    }
}

fn root(e: &CoreError) -> &CoreError {
    match e {
        CoreError::Component { source, .. } => root(source),
        e => e,
    }
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io(_) | HarnessError::Csv(_) => EXIT_CONFIG,
            HarnessError::BlowUp(_) => EXIT_BLOW_UP,
            HarnessError::Check(_) | HarnessError::Core(_) => EXIT_CHECK,
        }
    }
}

pub type HResult<T> = Result<T, HarnessError>;
