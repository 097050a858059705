//! Scene-history trajectory prediction.
//!
//! A pedestrian's future path is predicted in two stages. First the observed
//! past is used as a key into a [`bank::TrajectoryBank`] of representative
//! group trajectories (built by K-medoids clustering of the training set and
//! grown online during training). The retrieved candidate future is then
//! refined by a small cross-modal transformer ([`neural`]) that attends
//! between the observed trajectory and a semantic scene raster and predicts
//! per-step offsets. [`pipeline`] wires the two together; [`metrics`] scores
//! predictions with ADE/FDE and their curve-smoothed variants built on the
//! quadratic Bézier smoother in [`smoothing`].

pub mod bank;
pub mod complexity;
pub mod config;
pub mod error;
pub mod kmedoids;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod report;
pub mod smoothing;
pub mod trajdata;

pub use bank::{BankEntry, EntryOrigin, SearchResult, TrajectoryBank, UpdateOutcome};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use metrics::{ade, best_of_k, cs_ade, cs_fde, fde, EvalReport};
pub use pipeline::{ShenetModel, TrainState};
pub use smoothing::{BezierSpec, ControlRule};
pub use trajdata::{Dataset, Point, SceneRaster, Split, TrajPoint, Trajectory};
