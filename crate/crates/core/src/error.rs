use std::fmt;

/// Pipeline stage an explanation error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Encode,
    Neighborhood,
    Surrogate,
    Rules,
    Exemplars,
    Counterexemplar,
    Saliency,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Encode => "encode",
            Stage::Neighborhood => "neighborhood",
            Stage::Surrogate => "surrogate",
            Stage::Rules => "rules",
            Stage::Exemplars => "exemplars",
            Stage::Counterexemplar => "counterexemplar",
            Stage::Saliency => "saliency",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LxlError {
    #[error("shape mismatch at {node}: expected {expected}, got {actual}")]
    Shape {
        node: String,
        expected: String,
        actual: String,
    },
    #[error("invalid state: {0}")]
    State(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("explanation infeasible at stage {stage}: {detail}")]
    Infeasible { stage: Stage, detail: String },
    #[error("{stage}: {source}")]
    AtStage {
        stage: Stage,
        #[source]
        source: Box<LxlError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LxlError {
    pub fn shape(node: impl Into<String>, expected: impl fmt::Debug, actual: impl fmt::Debug) -> Self {
        LxlError::Shape {
            node: node.into(),
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }

    /// Tags an error with the pipeline stage it came from, unless it already carries one.
    pub fn at(self, stage: Stage) -> Self {
        match self {
            e @ (LxlError::Infeasible { .. } | LxlError::AtStage { .. }) => e,
            other => LxlError::AtStage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            LxlError::Infeasible { stage, .. } | LxlError::AtStage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        match self {
            LxlError::Infeasible { .. } => true,
            LxlError::AtStage { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, LxlError>;
