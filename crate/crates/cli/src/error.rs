use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config,
    Format,
    Compute,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Config => 2,
            ExitKind::Format => 3,
            ExitKind::Compute => 4,
        }
    }
}

/// A failure tagged with the pipeline stage it happened in.
#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub kind: ExitKind,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn new(stage: &'static str, kind: ExitKind, message: impl Into<String>) -> Self {
        CliError { stage, kind, message: message.into() }
    }

    pub fn config(stage: &'static str, message: impl Into<String>) -> Self {
        CliError::new(stage, ExitKind::Config, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.code()
    }

    /// Classifies a library error raised during `stage`. I/O failures count
    /// as input problems while reading inputs and as compute failures later.
    pub fn from_core(stage: &'static str, e: mobilicities::Error) -> Self {
        use mobilicities::Error as E;
        let reading = matches!(stage, "input" | "ingest");
        let kind = match &e {
            E::Config(_) => ExitKind::Config,
            E::Format(_) | E::Csv(_) | E::Json(_) => ExitKind::Format,
            E::Io(_) if reading => ExitKind::Format,
            E::Input(_) if reading => ExitKind::Format,
            _ => ExitKind::Compute,
        };
        CliError::new(stage, kind, e.to_string())
    }

    pub fn io(stage: &'static str, e: std::io::Error) -> Self {
        CliError::from_core(stage, mobilicities::Error::Io(e))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T> StageExt<T> for mobilicities::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::from_core(stage, e))
    }
}

impl<T> StageExt<T> for std::io::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::io(stage, e))
    }
}

impl<T> StageExt<T> for serde_json::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::from_core(stage, mobilicities::Error::Json(e)))
    }
}
