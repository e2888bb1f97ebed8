//! Multi-generator adversarial trajectory forecasting.
//!
//! The crate models futures of pedestrian trajectories as a mixture over
//! several generators. A Generator Selector predicts a prior over the
//! generators from a condition vector that fuses social attention, physical
//! (scene) attention and a target-centric spatiotemporal grid encoding.
//! Generators whose prior stays below an activation threshold are switched
//! off, which lets the model represent disconnected manifolds of futures
//! (branches of an intersection) without bridging them with out-of-distribution
//! samples.
//!
//! Module map:
//!
//! - [`datamodel`]: episodes, scenes, predictions, configuration
//! - [`ingest`]: trajectory files, windowing, synthetic intersections
//! - [`encoders`]: social/physical encoders and attention
//! - [`stgraph`]: fused spatiotemporal graph frames and their encoder
//! - [`gan`]: generator bank, discriminator, checkpoints
//! - [`selector`]: priors, Monte-Carlo likelihood, posterior, selector loss
//! - [`training`]: the alternating optimisation loop
//! - [`metrics`]: ADE/FDE, min-of-K, precision/recall, purity
//! - [`cli`]: the `mgtraj` command implementations
//!
//! Runnable walkthroughs live in `examples/`.

pub mod cli;
pub mod datamodel;
pub mod encoders;
pub mod gan;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod selector;
pub mod stgraph;
pub mod training;
pub mod viz;

pub use datamodel::{
    validate_episode, AgentTrack, ModelConfig, Point, PredictedSample, PredictionSet, SceneGrid, Trajectory, TrajectoryEpisode,
    Violation,
};
pub use model::MultiGenModel;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("{source_name}:{line}: {message}")]
    Parse { source_name: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dimension mismatch in {segment}: expected {expected}, found {found}")]
    Dimension { segment: String, expected: usize, found: usize },
    #[error("non-finite {term} at iteration {iteration}")]
    NonFinite { iteration: usize, term: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("no generator explains the trajectory (all log-likelihoods are -inf)")]
    NoSupport,
    #[error("generator index {index} out of range for n_G = {n_g}")]
    GeneratorIndex { index: usize, n_g: usize },
}

impl Error {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid { field: field.into(), message: message.into() }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
