//! Tick-driven kinematic simulation of the shared workspace.

pub mod batch;
pub mod replay;
pub mod scene;
pub mod trial;

pub use batch::{
    benchmark_modes, collect_dataset, read_dataset, run_batch, run_batch_with, write_dataset, BatchOutcome,
    BenchmarkMode, BenchmarkRow, DatasetWriter, SampleRecord,
};
pub use scene::{RobotEntry, Role, SceneConfig, SceneFile};

pub use replay::{run_replay, settles, Episode, ReplayConfig, ReplayReport};
pub use trial::{
    drop_for_seed, run_trial, run_trial_at, run_trial_with, Simulation, TaskEvent, TrajectoryLog, TrialOptions,
    TrialResult, TrialSequence,
};
