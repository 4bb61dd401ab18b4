//! Experiment file schema.
//!
//! Every table is optional and every key falls back to its default; keys
//! the schema does not know are rejected.
//!
//! ```toml
//! seed = 1
//! out_dir = "out"
//!
//! [topology]            # see SimConfig
//! [cache]
//! [latency]
//! [noise]               # sigma_scale, contention_coeff
//! [probe]               # calibration and eviction-set search knobs
//!
//! [calibrate]
//! samples_per_class = 500
//!
//! [discover]
//! target_offset = 0
//! num_sets = 1
//! curve_max_k = 40
//! thresholds_file = "out/calibration.json"   # optional
//!
//! [covert]
//! message = "Hello! How are you? "
//! pairs = [1, 2, 4, 8, 16]
//!
//! [sidechan]
//! monitored_sets = 128
//! noise_intensity = 0.0
//!
//! [sidechan.fingerprint]
//! labels = ["vectoradd", "histogram", "blackscholes", "matmul", "quasirandom", "walsh"]
//! train_per_label = 50
//! test_per_label = 20
//!
//! [sidechan.mlp]
//! sizes = [64, 128, 256, 512]
//!
//! [workload]            # victim of `memorygram`
//! kind = "vectoradd"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::covert::{AlignmentConfig, ChannelOptions, NoiseProfile};
use crate::probe::ProbeConfig;
use crate::sidechan::RigConfig;
use crate::simcore::{CacheConfig, GpuId, LatencyModel, SimConfig};
use crate::simcore::config::TopologyConfig;
use crate::workloads::{WorkloadKind, WorkloadSpec, MLP_SIZES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub topology: TopologyConfig,
    pub cache: CacheConfig,
    pub latency: LatencyModel,
    pub noise: NoiseProfile,
    pub probe: ProbeConfig,
    pub calibrate: CalibrateSection,
    pub discover: DiscoverSection,
    pub covert: CovertSection,
    pub sidechan: SidechanSection,
    pub workload: WorkloadSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("out"),
            topology: TopologyConfig::default(),
            cache: CacheConfig::default(),
            latency: LatencyModel::default(),
            noise: NoiseProfile::default(),
            probe: ProbeConfig::default(),
            calibrate: CalibrateSection::default(),
            discover: DiscoverSection::default(),
            covert: CovertSection::default(),
            sidechan: SidechanSection::default(),
            workload: WorkloadSpec::new(WorkloadKind::VectorAdd, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateSection {
    pub samples_per_class: usize,
    /// GPU the measuring session runs on; the remote buffer lives on `peer_gpu`.
    pub gpu: GpuId,
    pub peer_gpu: GpuId,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self { samples_per_class: 500, gpu: 1, peer_gpu: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoverSection {
    /// Byte offset in the target buffer of the first set's target line.
    pub target_offset: u64,
    /// Eviction sets to discover, one line apart.
    pub num_sets: usize,
    pub buffer_bytes: u64,
    /// GPU that owns the target buffer; the attacker runs on `calibrate.gpu`.
    pub target_gpu: GpuId,
    pub associativity_trials: usize,
    pub curve_max_k: usize,
    /// Thresholds from an earlier `calibrate` run instead of calibrating again.
    pub thresholds_file: Option<PathBuf>,
}

impl Default for DiscoverSection {
    fn default() -> Self {
        Self {
            target_offset: 0,
            num_sets: 1,
            buffer_bytes: 16 << 20,
            target_gpu: 0,
            associativity_trials: 10,
            curve_max_k: 40,
            thresholds_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovertSection {
    pub message: String,
    /// When set, a seeded random message of this many bytes replaces `message`.
    pub random_message_bytes: Option<usize>,
    pub pairs: Vec<usize>,
    pub slot_cycles: u64,
    pub prime_reps: usize,
    pub zero_wait_cycles: u64,
    pub calibration_samples: usize,
    pub buffer_bytes: u64,
    pub trojan_gpu: GpuId,
    pub spy_gpu: GpuId,
    pub alignment: AlignmentConfig,
}

impl Default for CovertSection {
    fn default() -> Self {
        let o = ChannelOptions::default();
        Self {
            message: "Hello! How are you? ".into(),
            random_message_bytes: None,
            pairs: vec![1, 2, 4, 8, 16],
            slot_cycles: o.slot_cycles,
            prime_reps: o.prime_reps,
            zero_wait_cycles: o.zero_wait_cycles,
            calibration_samples: o.calibration_samples,
            buffer_bytes: o.buffer_bytes,
            trojan_gpu: o.trojan_gpu,
            spy_gpu: o.spy_gpu,
            alignment: o.alignment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SidechanSection {
    pub calibration_samples: usize,
    pub enumerated_sets: usize,
    pub monitored_sets: usize,
    pub buffer_bytes: u64,
    pub spy_gpu: GpuId,
    pub victim_gpu: GpuId,
    pub epoch_cycles: u64,
    pub num_epochs: usize,
    pub victim_layout_jitter: bool,
    /// Intensity of a background noise workload run next to every victim;
    /// 0 runs none.
    pub noise_intensity: f64,
    /// Exclusive occupancy keeps the noise workload off the victim GPU.
    pub exclusive: bool,
    pub fingerprint: FingerprintSection,
    pub mlp: MlpSection,
}

impl Default for SidechanSection {
    fn default() -> Self {
        let r = RigConfig::default();
        Self {
            calibration_samples: r.calibration_samples,
            enumerated_sets: r.enumerated_sets,
            monitored_sets: r.monitored_sets,
            buffer_bytes: r.buffer_bytes,
            spy_gpu: r.spy_gpu,
            victim_gpu: r.victim_gpu,
            epoch_cycles: r.epoch_cycles,
            num_epochs: r.num_epochs,
            victim_layout_jitter: r.victim_layout_jitter,
            noise_intensity: 0.0,
            exclusive: false,
            fingerprint: FingerprintSection::default(),
            mlp: MlpSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FingerprintSection {
    /// Workload kinds to tell apart, by name.
    pub labels: Vec<String>,
    pub train_per_label: usize,
    pub test_per_label: usize,
    /// Model read by `eval`; `<out_dir>/model.json` when unset.
    pub model_file: Option<PathBuf>,
}

impl Default for FingerprintSection {
    fn default() -> Self {
        Self {
            labels: WorkloadKind::APPS.iter().map(|k| k.name().to_string()).collect(),
            train_per_label: 50,
            test_per_label: 20,
            model_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpSection {
    pub sizes: Vec<usize>,
    pub epochs: usize,
    pub calibration_runs: usize,
    pub heldout_runs: usize,
}

impl Default for MlpSection {
    fn default() -> Self {
        Self { sizes: MLP_SIZES.to_vec(), epochs: 1, calibration_runs: 5, heldout_runs: 10 }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub pairs: Option<Vec<usize>>,
    /// Scales both the latency spread and the contention coefficient;
    /// 0 is a noiseless node, 1 the default.
    pub noise: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(p) = &o.pairs {
            self.covert.pairs = p.clone();
        }
        if let Some(n) = o.noise {
            if !(n >= 0.0 && n.is_finite()) {
                return Err(CliError::Config(format!("--noise {n} must be a non-negative number")));
            }
            self.noise = NoiseProfile {
                sigma_scale: n,
                contention_coeff: n * self.latency.contention_coeff,
            };
        }
        Ok(())
    }

    /// Node description without the noise profile applied.
    pub fn sim(&self) -> SimConfig {
        SimConfig {
            topology: self.topology.clone(),
            cache: self.cache.clone(),
            latency: self.latency.clone(),
        }
    }

    /// Node description with the noise profile folded into the latencies.
    pub fn noisy_sim(&self) -> SimConfig {
        let sim = self.sim();
        let latency = self.noise.apply(&sim.latency);
        sim.with_latency(latency)
    }

    pub fn channel_options(&self) -> ChannelOptions {
        let c = &self.covert;
        ChannelOptions {
            sim: self.sim(),
            alignment: c.alignment.clone(),
            probe: self.probe.clone(),
            slot_cycles: c.slot_cycles,
            prime_reps: c.prime_reps,
            zero_wait_cycles: c.zero_wait_cycles,
            calibration_samples: c.calibration_samples,
            buffer_bytes: c.buffer_bytes,
            trojan_gpu: c.trojan_gpu,
            spy_gpu: c.spy_gpu,
        }
    }

    pub fn rig(&self) -> RigConfig {
        let s = &self.sidechan;
        RigConfig {
            sim: self.sim(),
            noise: self.noise,
            probe: self.probe.clone(),
            calibration_samples: s.calibration_samples,
            enumerated_sets: s.enumerated_sets,
            monitored_sets: s.monitored_sets,
            buffer_bytes: s.buffer_bytes,
            spy_gpu: s.spy_gpu,
            victim_gpu: s.victim_gpu,
            epoch_cycles: s.epoch_cycles,
            num_epochs: s.num_epochs,
            victim_layout_jitter: s.victim_layout_jitter,
        }
    }

    /// Checks what parsing alone cannot.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.sim().topology().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.noise.sigma_scale >= 0.0 && self.noise.contention_coeff >= 0.0) {
            return bad("noise values must be non-negative".into());
        }
        if self.covert.pairs.contains(&0) {
            return bad("covert.pairs entries must be at least 1".into());
        }
        let ni = self.sidechan.noise_intensity;
        if !(0.0..=1.0).contains(&ni) {
            return bad(format!("sidechan.noise_intensity {ni} outside [0, 1]"));
        }
        for l in &self.sidechan.fingerprint.labels {
            if app_kind(l).is_none() {
                return bad(format!("unknown fingerprint label `{l}`"));
            }
        }
        self.workload.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }
}

/// The fingerprintable workload kind with this name.
pub fn app_kind(name: &str) -> Option<WorkloadKind> {
    WorkloadKind::APPS.iter().find(|k| k.name() == name).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["sed = 3", "[covert]\npair = [1]", "[sidechan.mlp]\nsize = [64]", "[workload]\nkind = \"idle\"\nneurons = 4"] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let mut c = ExperimentConfig::from_toml("seed = 9\n[covert]\npairs = [2]\nmessage = \"x\"").unwrap();
        assert_eq!((c.seed, c.covert.pairs.clone()), (9, vec![2]));
        c.apply(&Overrides { seed: Some(4), noise: Some(0.0), ..Overrides::default() }).unwrap();
        assert_eq!((c.seed, c.covert.pairs.clone(), c.covert.message.as_str()), (4, vec![2], "x"));
        assert_eq!(c.noise, NoiseProfile::zero());
        assert_eq!(c.out_dir, PathBuf::from("out"));
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = ExperimentConfig::default();
        c.sidechan.fingerprint.labels.push("resnet".into());
        assert!(c.validate().is_err());
        let c = ExperimentConfig::from_toml("[covert]\npairs = [0]").unwrap();
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }
}
