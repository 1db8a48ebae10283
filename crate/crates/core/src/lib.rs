//! Active learning by feature mixing, plus uncertainty and diversity
//! baselines, with a small MLP substrate and an experiment harness.

pub mod acquisition;
pub mod clustering;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod numkernel;

pub use acquisition::{AcquisitionConfig, Selection, SelectionContext, Strategy};
pub use data::{Dataset, SplitSpec};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, InitMode, PreparedData, RoundRecord, RunResult};
pub use model::{MlpSpec, ModelParams, ModelSnapshot, TrainConfig};
pub use numkernel::{Matrix, RngStream};
