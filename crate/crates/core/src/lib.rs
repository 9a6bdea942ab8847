//! Motion-priority design for a workspace shared by autonomous manufacturing
//! manipulators and one recovery manipulator.
//!
//! The crate contains the full pipeline: kinematics and a QP-based
//! multi-robot differential IK with velocity-damper collision constraints,
//! impedance motion generators, a Metropolis–Hastings drop-position sampler,
//! a kinematic shared-workspace simulator, Gaussian-process surrogates and a
//! constrained genetic algorithm for the priority thresholds.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod ga;
pub mod gp;
pub mod kinematics;
pub mod pipeline;
pub mod prior;
pub mod priority;
pub mod qp;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};

pub use ga::{GaConfig, OptimizationResult};
pub use gp::GpModel;
pub use pipeline::{AppendixResult, ProcessTimes, RunManifest};
pub use prior::{MhConfig, PriorDistribution};
pub use priority::{CollisionParams, Priority, PriorityConfig, PriorityPolicy};
pub use sim::{SampleRecord, SceneConfig, TrialResult};
