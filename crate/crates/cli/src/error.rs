use std::fmt;

use adaptctl_core::closedloop::LoopError;
use adaptctl_core::knowledge::KnowledgeError;
use adaptctl_core::metrics::MetricsError;
use adaptctl_core::pipeline::PipelineError;

/// Exit 1 for domain failures, 2 for usage and input/output problems.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Io(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

impl From<KnowledgeError> for CliError {
    fn from(e: KnowledgeError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidGrid(_) => CliError::Usage(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<LoopError> for CliError {
    fn from(e: LoopError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Io(e.to_string())
    }
}

pub fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}
