//! Segmentation plans, L-BFGS, segment-sequential training, stitching and inversion.

pub mod checkpoint;
pub mod invert;
pub mod lbfgs;
pub mod plan;
pub mod train;

pub use checkpoint::{read_checkpoint, read_stitched, write_checkpoint, write_stitched, CheckpointManifest};
pub use invert::{
    add_noise, invert_coefficients, observations_from_grid, read_observations_csv, write_observations_csv, Coefficient,
    InversionConfig, InversionResult, InversionStep, Observation,
};
pub use lbfgs::{lbfgs_minimize, Accepted, LbfgsResult, OptimizerOptions, Termination};
pub use plan::{plan_segments, plan_segments_simplified, PlanScheme, SegmentationPlan};
pub use train::{
    evaluate_stitched, train_lbc, train_segment, train_std, SegmentOutcome, SegmentReport, StitchedModel, TrainAbort,
    TrainConfig, TrainReport, BURN_IN_ITERATIONS,
};
