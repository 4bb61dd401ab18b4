//! Memorygram side channel: a spy on one GPU watches miss counts of many
//! L2 sets of another GPU over time, and uses them to tell which
//! application runs there or how large a neural network it trains.

mod features;
mod fingerprint;
mod memorygram;
mod mlp;
mod rig;

pub use features::{autocorrelation, dominant_period, feature_weights, memorygram_features, resample, PROFILE_BINS};
pub use fingerprint::{Classification, ConfusionMatrix, FingerprintModel, MIN_SAMPLES_PER_LABEL, MODEL_SCHEMA_VERSION};
pub use memorygram::{collect_memorygram, CollectParams, Memorygram, MemorygramSpy};
pub use mlp::{estimate_hidden_neurons, NeuronCalibration, NeuronEstimate};
pub use rig::{RigConfig, RigRun, SpyRig};

use thiserror::Error;

use crate::probe::ProbeError;
use crate::simcore::SimError;
use crate::workloads::WorkloadError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SideChanError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("enumerated only {found} of {wanted} monitored sets")]
    NotEnoughSets { found: usize, wanted: usize },
    #[error("label `{label}` has {count} training samples, need {needed}")]
    TrainingDataInsufficient { label: String, count: usize, needed: usize },
    #[error("feature vector has {found} entries, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("calibration table is empty")]
    EmptyCalibration,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed input: {0}")]
    Format(String),
}
