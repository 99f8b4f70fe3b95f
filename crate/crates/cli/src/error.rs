use std::io;
use std::path::Path;

use bridgeprobe::corpus::standoff::ConvertError;
use bridgeprobe::corpus::CorpusError;
use bridgeprobe::eval::EvalError;
use bridgeprobe::protocol::ProtocolError;
use bridgeprobe::records::RecordError;

/// A failure reported as one JSON line on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError::new("usage", message)
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::NotFound {
            CliError::new("file not found", format!("file not found: {}", path.display()))
        } else {
            CliError::new("io", format!("{}: {e}", path.display()))
        }
    }

    /// 2 for usage errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        if self.kind == "usage" {
            2
        } else {
            1
        }
    }

    pub fn report(&self) {
        eprintln!(
            "{}",
            serde_json::json!({ "error": self.kind, "message": self.message })
        );
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { path, source } => CliError::io(&path, source),
            other => CliError::new("corpus", other.to_string()),
        }
    }
}

impl From<RecordError> for CliError {
    fn from(e: RecordError) -> Self {
        match e {
            RecordError::Io { path, source } => CliError::io(&path, source),
            other => CliError::new("records", other.to_string()),
        }
    }
}

impl From<ConvertError> for CliError {
    fn from(e: ConvertError) -> Self {
        match e {
            ConvertError::Io { path, source } => CliError::io(&path, source),
            other => CliError::new("convert", other.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        CliError::new("backend", e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::new("eval", e.to_string())
    }
}
