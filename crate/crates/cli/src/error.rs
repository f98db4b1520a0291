use std::fmt;
use std::process::ExitCode;

use dvd_core::agent::AgentError;
use dvd_core::eval_behavior::EvalError;
use dvd_core::ingest::IngestError;
use dvd_core::model_gateway::ModelError;
use dvd_core::toolset::ToolError;
use dvd_core::video_store::StoreError;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_BACKEND: u8 = 4;
/// Build interrupted by Ctrl-C; rerunning resumes from the checkpoint.
pub const EXIT_INTERRUPTED: u8 = 130;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: msg.into() }
    }

    pub fn backend(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_BACKEND, message: msg.into() }
    }

    pub fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidRequest(m) => CliError::usage(format!("backend configuration: {m}")),
            other => CliError::backend(other.to_string()),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<ToolError> for CliError {
    fn from(e: ToolError) -> Self {
        match e {
            ToolError::Backend(m) => CliError::backend(m.to_string()),
            ToolError::Store(s) => CliError::data(s.to_string()),
            other => CliError::usage(other.to_string()),
        }
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::InvalidConfig(m) => CliError::usage(m),
            aborted => CliError::backend(aborted.to_string()),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let code = match e.root_cause() {
            IngestError::InvalidArgument(_) => EXIT_USAGE,
            IngestError::Backend(_) | IngestError::MalformedOutput { .. } => EXIT_BACKEND,
            IngestError::Interrupted { .. } => EXIT_INTERRUPTED,
            _ => EXIT_DATA,
        };
        CliError { code, message: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;
