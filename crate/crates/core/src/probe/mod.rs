//! Attacker-side reverse engineering of the L2, driven only through
//! [`AgentSession`](crate::simcore::AgentSession) timed loads.

mod alias;
mod calibrate;
pub mod cluster;
mod evset;
mod policy;

pub use alias::{enumerate_unique_sets, test_alias, Enumeration};
pub use calibrate::{calibrate_latencies, Calibration};
pub use evset::{discover_eviction_set, target_evicted, EvictionSet, EvictionSetFile};
pub use policy::{measure_associativity, validation_curve, PolicyLabel, PolicyReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simcore::{AccessClass, SimError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("eviction set incomplete: found {found} of {wanted} members")]
    IncompleteSet { found: usize, wanted: usize },
    #[error("buffer too small: need {needed} bytes, have {available}")]
    BufferTooSmall { needed: u64, available: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed eviction-set file: {0}")]
    Format(String),
}

/// Boundaries between the four latency clusters, fastest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyThresholds {
    /// `[local hit | local miss, local miss | remote hit, remote hit | remote miss]`
    pub boundaries: [f64; 3],
    pub cluster_means: [f64; 4],
    pub cluster_sigmas: [f64; 4],
}

impl LatencyThresholds {
    /// Thresholds at the midpoints of known class means, with zero spread.
    pub fn from_means(means: [f64; 4]) -> Self {
        Self {
            boundaries: [
                (means[0] + means[1]) / 2.0,
                (means[1] + means[2]) / 2.0,
                (means[2] + means[3]) / 2.0,
            ],
            cluster_means: means,
            cluster_sigmas: [0.0; 4],
        }
    }

    /// Latency above which an access to local (or remote) memory is a miss.
    pub fn miss_threshold(&self, local: bool) -> f64 {
        if local {
            self.boundaries[0]
        } else {
            self.boundaries[2]
        }
    }

    pub fn is_miss(&self, cycles: u64, local: bool) -> bool {
        cycles as f64 > self.miss_threshold(local)
    }

    pub fn classify(&self, cycles: u64) -> AccessClass {
        let c = cycles as f64;
        let idx = self.boundaries.iter().take_while(|&&b| c > b).count();
        AccessClass::ALL[idx]
    }

    /// Mean hit and miss latencies for the given tier.
    pub fn tier_means(&self, local: bool) -> (f64, f64) {
        if local {
            (self.cluster_means[0], self.cluster_means[1])
        } else {
            (self.cluster_means[2], self.cluster_means[3])
        }
    }

    pub fn is_valid(&self) -> bool {
        let b = self.boundaries;
        let m = self.cluster_means;
        b[0] < b[1]
            && b[1] < b[2]
            && (0..3).all(|i| m[i] < b[i] && b[i] < m[i + 1])
    }
}

/// Knobs for calibration and eviction-set search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Candidate stride; one cache line for the standard attack.
    pub stride_bytes: u64,
    /// Loads of the same address per calibration line (one miss, then hits).
    pub num_access_repeats: usize,
    /// Calibration launches, each on fresh lines.
    pub kernel_repeats: usize,
    /// Maximum number of candidates the chase may grow to.
    pub search_budget: usize,
    /// When set, only addresses at the target's offset within other pages
    /// are tried (lines inside one page index consecutive sets).
    pub page_hint_bytes: Option<u64>,
    /// Members collected per eviction set.
    pub eviction_set_size: usize,
    /// Trials per eviction decision; the majority wins.
    pub votes: usize,
    /// Candidates appended per step before falling back to a linear scan.
    pub skip_block: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            stride_bytes: 128,
            num_access_repeats: 4,
            kernel_repeats: 20,
            search_budget: 1 << 20,
            page_hint_bytes: Some(64 << 10),
            eviction_set_size: 16,
            votes: 5,
            skip_block: 8,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    /// Settings for the 64-set, 4-way test geometry: plain line-stride
    /// search, four members per set.
    pub fn small() -> Self {
        Self {
            page_hint_bytes: None,
            eviction_set_size: 4,
            ..Self::default()
        }
    }
}

/// Runs `trial` until one outcome holds a strict majority of `votes`.
pub(crate) fn majority<F>(votes: usize, mut trial: F) -> Result<bool, ProbeError>
where
    F: FnMut() -> Result<bool, ProbeError>,
{
    let votes = votes.max(1);
    let need = votes / 2 + 1;
    let (mut yes, mut no) = (0, 0);
    while yes < need && no < need {
        if trial()? {
            yes += 1;
        } else {
            no += 1;
        }
    }
    Ok(yes >= need)
}
