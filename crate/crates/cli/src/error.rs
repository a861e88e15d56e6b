use std::fmt;

use hpfa::corpus::CorpusError;
use hpfa::evaluation::EvalError;
use hpfa::model::ModelError;
use hpfa::sampler::SamplerError;
use hpfa::synthetic::SyntheticError;

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input data: exit 1.
    Validation(anyhow::Error),
    /// Numerical or i/o failure after validation: exit 2.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn validation(msg: impl fmt::Display) -> Self {
        CliError::Validation(anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(e) => write!(f, "invalid input: {e:#}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Validation(e.into())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Dist(_) => CliError::Runtime(e.into()),
            _ => CliError::Validation(e.into()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::MissingCovariates => CliError::Validation(e.into()),
            SamplerError::Model(m) => m.into(),
            _ => CliError::Runtime(e.into()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Sampler(s) => s.into(),
            EvalError::Corpus(c) => c.into(),
            EvalError::ZeroPredictive | EvalError::MissingPredictive => CliError::Runtime(e.into()),
            _ => CliError::Validation(e.into()),
        }
    }
}

impl From<SyntheticError> for CliError {
    fn from(e: SyntheticError) -> Self {
        match e {
            SyntheticError::Config(_) | SyntheticError::Corpus(_) => CliError::Validation(e.into()),
            SyntheticError::Model(m) => m.into(),
            _ => CliError::Runtime(e.into()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.into())
    }
}
