use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies at or behind the camera plane (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("box is not visible in camera {camera_id}")]
    NotVisible { camera_id: u32 },
    #[error("invalid calibration for camera {camera_id}: {reason}")]
    InvalidCalibration { camera_id: u32, reason: String },
    #[error("ground truth contains no matched 2D boxes")]
    EmptyTruth,
    #[error("mean embedding is degenerate (norm {norm})")]
    DegenerateMean { norm: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("ground truth and predictions share no frames")]
    MisalignedFrames,
    #[error("infeasible scene: {0}")]
    InfeasibleSpec(String),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
