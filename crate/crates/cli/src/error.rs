use std::fmt;

use deixis::datasets::DatasetError;
use deixis::eval::EvalError;
use deixis::grounding::GroundingError;
use deixis::logic::{SceneError, SyntaxError};
use deixis::pipeline::PipelineError;
use deixis::reasoner::ReasonError;
use deixis::rulegen::RulegenError;
use deixis::training::TrainError;
use deixis::unifier::EmbeddingError;
use deixis::ServiceError;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input files, arguments or configuration (exit 2).
    Input(String),
    /// Chat or embedding service failure (exit 3).
    Service(String),
    /// Broken internal invariant (exit 4).
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Service(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn input(m: impl fmt::Display) -> Self {
        CliError::Input(m.to_string())
    }

    /// Prefixes the message, keeping the class.
    pub fn context(self, what: impl fmt::Display) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("{what}: {m}")),
            CliError::Service(m) => CliError::Service(format!("{what}: {m}")),
            CliError::Internal(m) => CliError::Internal(format!("{what}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Service(m) => write!(f, "service error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        CliError::Service(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SyntaxError> for CliError {
    fn from(e: SyntaxError) -> Self {
        CliError::Input(format!("program: {e}"))
    }
}

impl From<GroundingError> for CliError {
    fn from(e: GroundingError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ReasonError> for CliError {
    fn from(e: ReasonError) -> Self {
        match e {
            ReasonError::NoTargetAtoms | ReasonError::InvalidConfig(_) => CliError::Input(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<RulegenError> for CliError {
    fn from(e: RulegenError) -> Self {
        match e {
            RulegenError::Service(s) => s.into(),
            RulegenError::Format(f) => CliError::Service(format!("rule generator returned invalid rules:\n{f}")),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::Service(s) => s.into(),
            other => CliError::Input(format!("embeddings: {other}")),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let context = e.to_string();
        let base = match e {
            PipelineError::Instance { source, .. } => CliError::from(*source),
            PipelineError::Scene(s) => s.into(),
            PipelineError::Grounding(g) => g.into(),
            PipelineError::Reason(r) => r.into(),
            PipelineError::Rulegen(r) => r.into(),
        };
        match base {
            CliError::Input(_) => CliError::Input(context),
            CliError::Service(_) => CliError::Service(context),
            CliError::Internal(_) => CliError::Internal(context),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Pipeline(p) => p.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Input(e.to_string())
    }
}
