//! Synthetic scenarios, Monte-Carlo ground truth and desk-scale experiments.

pub mod experiments;
pub mod predictor;
pub mod random;
pub mod scenario;
pub mod truth;

use shiftbench_core::estimation::EstimationError;
use shiftbench_core::model::ModelError;
use shiftbench_core::table::TableError;
use shiftbench_core::worst_case::WorstCaseError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    WorstCase(#[from] WorstCaseError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{0}")]
    Config(String),
}

pub use predictor::{LossKind, Predictor};
pub use scenario::{Scenario, ScenarioId, ScenarioOptions};
pub use truth::{mc_ground_truth, GroundTruth};
