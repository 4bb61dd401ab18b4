use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SimError;

/// The four latency classes an access can fall into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessClass {
    LocalL2Hit,
    LocalDram,
    RemoteL2Hit,
    RemoteDram,
}

impl AccessClass {
    /// Fastest to slowest.
    pub const ALL: [AccessClass; 4] = [
        AccessClass::LocalL2Hit,
        AccessClass::LocalDram,
        AccessClass::RemoteL2Hit,
        AccessClass::RemoteDram,
    ];

    pub fn from_outcome(hit: bool, local: bool) -> Self {
        match (hit, local) {
            (true, true) => AccessClass::LocalL2Hit,
            (false, true) => AccessClass::LocalDram,
            (true, false) => AccessClass::RemoteL2Hit,
            (false, false) => AccessClass::RemoteDram,
        }
    }

    pub fn is_hit(self) -> bool {
        matches!(self, AccessClass::LocalL2Hit | AccessClass::RemoteL2Hit)
    }

    pub fn is_local(self) -> bool {
        matches!(self, AccessClass::LocalL2Hit | AccessClass::LocalDram)
    }

    /// Position in [`AccessClass::ALL`].
    pub fn rank(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AccessClass::LocalL2Hit => "local_l2_hit",
            AccessClass::LocalDram => "local_dram",
            AccessClass::RemoteL2Hit => "remote_l2_hit",
            AccessClass::RemoteDram => "remote_dram",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassLatency {
    pub mean: f64,
    pub sigma: f64,
}

impl ClassLatency {
    pub const fn new(mean: f64, sigma: f64) -> Self {
        Self { mean, sigma }
    }
}

/// Per-class truncated Gaussian latency distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyModel {
    pub local_l2_hit: ClassLatency,
    pub local_dram: ClassLatency,
    pub remote_l2_hit: ClassLatency,
    pub remote_dram: ClassLatency,
    /// Extra sigma, in cycles, per concurrently probed set beyond the first.
    pub contention_coeff: f64,
}

/// Samples further than this many sigmas from the mean are redrawn.
const TRUNCATE_SIGMAS: f64 = 4.0;

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            local_l2_hit: ClassLatency::new(270.0, 12.0),
            local_dram: ClassLatency::new(470.0, 25.0),
            remote_l2_hit: ClassLatency::new(650.0, 20.0),
            remote_dram: ClassLatency::new(850.0, 30.0),
            contention_coeff: 8.0,
        }
    }
}

impl LatencyModel {
    /// Default means with every sigma and the contention coefficient at zero.
    pub fn zero_noise() -> Self {
        Self::default().scaled(0.0, 0.0)
    }

    /// Copy with every class sigma multiplied by `sigma_scale` and the given
    /// contention coefficient.
    pub fn scaled(&self, sigma_scale: f64, contention_coeff: f64) -> Self {
        let s = |c: ClassLatency| ClassLatency::new(c.mean, c.sigma * sigma_scale);
        Self {
            local_l2_hit: s(self.local_l2_hit),
            local_dram: s(self.local_dram),
            remote_l2_hit: s(self.remote_l2_hit),
            remote_dram: s(self.remote_dram),
            contention_coeff,
        }
    }

    pub fn class(&self, class: AccessClass) -> ClassLatency {
        match class {
            AccessClass::LocalL2Hit => self.local_l2_hit,
            AccessClass::LocalDram => self.local_dram,
            AccessClass::RemoteL2Hit => self.remote_l2_hit,
            AccessClass::RemoteDram => self.remote_dram,
        }
    }

    pub fn means(&self) -> [f64; 4] {
        AccessClass::ALL.map(|c| self.class(c).mean)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let means = self.means();
        if means.windows(2).any(|w| !(w[0] < w[1])) || means[0] < 1.0 {
            return Err(SimError::InvalidLatency(format!(
                "class means must be >= 1 and strictly increasing, got {means:?}"
            )));
        }
        let bad_sigma = AccessClass::ALL
            .iter()
            .any(|&c| !(self.class(c).sigma >= 0.0));
        if bad_sigma || !(self.contention_coeff >= 0.0) {
            return Err(SimError::InvalidLatency(
                "sigmas and contention coefficient must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Effective sigma for `class` when `active_sets` sets are being probed
    /// at the same time.
    pub fn effective_sigma(&self, class: AccessClass, active_sets: usize) -> f64 {
        self.class(class).sigma
            + self.contention_coeff * active_sets.saturating_sub(1) as f64
    }

    /// Draws one latency in whole cycles, never below 1.
    pub fn sample<R: Rng + ?Sized>(&self, class: AccessClass, active_sets: usize, rng: &mut R) -> u64 {
        let mean = self.class(class).mean;
        let sigma = self.effective_sigma(class, active_sets);
        if sigma == 0.0 {
            return (mean.round() as u64).max(1);
        }
        let z = loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= TRUNCATE_SIGMAS {
                break z;
            }
        };
        let v = (mean + sigma * z).round();
        if v < 1.0 {
            1
        } else {
            v as u64
        }
    }
}
