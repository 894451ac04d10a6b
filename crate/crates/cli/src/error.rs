use std::process::ExitCode;

use serde::Serialize;

/// Failure reported to the caller as a single JSON record on stderr.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: "config",
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn usage(field: Option<String>, message: impl Into<String>) -> Self {
        Self {
            kind: "usage",
            field,
            message: message.into(),
        }
    }

    pub fn input(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: "input",
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Self {
            kind: "io",
            field: None,
            message: format!("{}: {err}", path.display()),
        }
    }

    /// Fills in the field when the underlying error did not name one.
    pub fn in_field(mut self, field: &str) -> Self {
        if self.field.is_none() {
            self.field = Some(field.to_string());
        }
        self
    }

    pub fn record(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }

    pub fn exit_code(&self) -> ExitCode {
        match self.kind {
            "config" | "usage" => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }
}

impl From<gan_audit::Error> for CliError {
    fn from(e: gan_audit::Error) -> Self {
        use gan_audit::Error as E;
        let (kind, field) = match &e {
            E::InvalidArgument { name, .. } => ("invalid-argument", Some(name.to_string())),
            E::ShapeMismatch { .. } => ("shape-mismatch", None),
            E::NonFinite(_) => ("non-finite", None),
            E::UnsupportedModel { .. } => ("unsupported-model", None),
            E::AllRestartsFailed(_) => ("projection-failed", None),
            E::Format(_) => ("format", None),
            E::Manifest(_) => ("manifest", None),
            E::Io { .. } => ("io", None),
            E::Json(_) => ("json", None),
        };
        Self {
            kind,
            field,
            message: e.to_string(),
        }
    }
}

/// Attaches a config field to library errors.
pub trait Context<T> {
    fn field(self, field: &str) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn field(self, field: &str) -> CliResult<T> {
        self.map_err(|e| e.into().in_field(field))
    }
}
