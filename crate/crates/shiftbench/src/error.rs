use shiftbench_core::estimation::EstimationError;
use shiftbench_core::model::ModelError;
use shiftbench_core::worst_case::WorstCaseError;
use shiftbench_sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum WorkbenchError {
    /// Invalid input; `pointer` locates the offending field in the request.
    #[error("{message}")]
    BadRequest { pointer: String, message: String },
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Io(String),
}

impl WorkbenchError {
    pub fn bad(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        WorkbenchError::BadRequest { pointer: pointer.into(), message: message.into() }
    }

    /// Prefixes the pointer of a bad-request error with the field it came from.
    pub fn under(self, prefix: &str) -> Self {
        match self {
            WorkbenchError::BadRequest { pointer, message } => WorkbenchError::BadRequest { pointer: format!("{prefix}{pointer}"), message },
            other => other,
        }
    }

    pub fn pointer(&self) -> Option<&str> {
        match self {
            WorkbenchError::BadRequest { pointer, .. } => Some(pointer),
            _ => None,
        }
    }
}

impl From<ModelError> for WorkbenchError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Invalid { path, message } => WorkbenchError::bad(path, message),
            other => WorkbenchError::bad("", other.to_string()),
        }
    }
}

impl From<EstimationError> for WorkbenchError {
    fn from(e: EstimationError) -> Self {
        match e {
            EstimationError::Model(m) => m.into(),
            other => WorkbenchError::bad("", other.to_string()),
        }
    }
}

impl From<WorstCaseError> for WorkbenchError {
    fn from(e: WorstCaseError) -> Self {
        match e {
            WorstCaseError::Estimation(inner) => inner.into(),
            other => WorkbenchError::bad("/constraint", other.to_string()),
        }
    }
}

impl From<SimError> for WorkbenchError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Model(m) => m.into(),
            SimError::Estimation(m) => m.into(),
            SimError::WorstCase(m) => m.into(),
            other => WorkbenchError::bad("", other.to_string()),
        }
    }
}

/// Parses JSON into `T`, reporting the JSON pointer of the first failing field.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, WorkbenchError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer: String = e
            .path()
            .iter()
            .filter_map(|seg| match seg {
                serde_path_to_error::Segment::Seq { index } => Some(format!("/{index}")),
                serde_path_to_error::Segment::Map { key } => Some(format!("/{key}")),
                serde_path_to_error::Segment::Enum { variant } => Some(format!("/{variant}")),
                serde_path_to_error::Segment::Unknown => None,
            })
            .collect();
        WorkbenchError::bad(pointer, e.into_inner().to_string())
    })
}
