use cascade_core::analysis::AnalysisError;
use cascade_core::confidence::ConfidenceError;
use cascade_core::engine::CascadeError;
use cascade_core::ingest::IngestError;
use cascade_core::sweep::SweepError;
use cascade_core::synth::SynthError;

/// A failed command, classified by who has to fix it.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    /// Bad input files.
    #[error("{0:#}")]
    Input(anyhow::Error),
    /// Bad flags or config values.
    #[error("{0:#}")]
    Config(anyhow::Error),
    /// An internal consistency check failed.
    #[error("internal invariant violated: {0:#}")]
    Invariant(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Config(_) => 3,
            Failure::Invariant(_) => 4,
        }
    }

    pub fn config(msg: impl std::fmt::Display) -> Self {
        Failure::Config(anyhow::anyhow!("{msg}"))
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::Input(e.into())
    }
}

impl From<ConfidenceError> for Failure {
    fn from(e: ConfidenceError) -> Self {
        match e {
            ConfidenceError::UnknownPolicy(_) => Failure::Config(e.into()),
            _ => Failure::Input(e.into()),
        }
    }
}

impl From<CascadeError> for Failure {
    fn from(e: CascadeError) -> Self {
        match e {
            CascadeError::InvariantViolation(_) => Failure::Invariant(e.into()),
            CascadeError::Confidence(c) => c.into(),
            CascadeError::CountMismatch { .. } => Failure::Invariant(e.into()),
            _ => Failure::Config(e.into()),
        }
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Cascade(c) => c.into(),
            SweepError::EmptyBundle | SweepError::EmptyCurve => Failure::Input(e.into()),
            _ => Failure::Config(e.into()),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Sweep(s) => s.into(),
            AnalysisError::Cascade(c) => c.into(),
            AnalysisError::InfeasibleBudget { .. } | AnalysisError::UnknownModel(_) => {
                Failure::Config(e.into())
            }
            _ => Failure::Invariant(e.into()),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Ingest(i) => Failure::Invariant(i.into()),
            SynthError::InvalidSpec(_) => Failure::Config(e.into()),
        }
    }
}
