use serde::{Deserialize, Serialize};

use super::{collect_memorygram, CollectParams, Memorygram, SideChanError};
use crate::covert::NoiseProfile;
use crate::probe::{calibrate_latencies, enumerate_unique_sets, EvictionSet, LatencyThresholds, ProbeConfig};
use crate::simcore::{derive_seed, BufferHandle, GpuId, SessionId, SimConfig, Simulator, TraceLog};
use crate::workloads::{make_workload, OccupancyPolicy, Workload, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    pub sim: SimConfig,
    pub noise: NoiseProfile,
    pub probe: ProbeConfig,
    pub calibration_samples: usize,
    /// Distinct sets to enumerate; `monitored_sets` of them, evenly spaced
    /// in enumeration order, are watched.
    pub enumerated_sets: usize,
    pub monitored_sets: usize,
    pub buffer_bytes: u64,
    pub spy_gpu: GpuId,
    pub victim_gpu: GpuId,
    pub epoch_cycles: u64,
    pub num_epochs: usize,
    /// Give each victim run fresh page frames by letting it allocate a
    /// seed-dependent amount of memory before its real buffer.
    pub victim_layout_jitter: bool,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            noise: NoiseProfile::default(),
            probe: ProbeConfig::default(),
            calibration_samples: 500,
            enumerated_sets: 2048,
            monitored_sets: 128,
            buffer_bytes: 16 << 20,
            spy_gpu: 1,
            victim_gpu: 0,
            epoch_cycles: 50_000,
            num_epochs: 64,
            victim_layout_jitter: true,
        }
    }
}

/// A spy that has calibrated and enumerated its monitored sets once and
/// can re-attach to fresh simulators built from the same layout seed.
///
/// Re-attaching repeats the spy's allocations in the same order, so its
/// buffers land on the same frames and the stored eviction sets stay
/// valid; only the noise seed and the victims change between runs.
#[derive(Debug, Clone)]
pub struct SpyRig {
    pub config: RigConfig,
    pub layout_seed: u64,
    pub thresholds: LatencyThresholds,
    /// Monitored sets; row `i` of a memorygram watches `sets[i]`.
    pub sets: Vec<EvictionSet>,
    /// Position of each monitored set in the enumeration.
    pub set_ids: Vec<usize>,
    calibration_bytes: u64,
}

struct Attached {
    sim: Simulator,
    spy: SessionId,
    local: BufferHandle,
    remote: BufferHandle,
    target: BufferHandle,
}

/// Output of one monitored run.
#[derive(Debug, Clone)]
pub struct RigRun {
    pub memorygram: Memorygram,
    /// Agent indices `0..sets.len()` are the spies.
    pub trace: Option<TraceLog>,
    pub victim_accesses: u64,
}

impl SpyRig {
    pub fn setup(config: RigConfig, layout_seed: u64) -> Result<Self, SideChanError> {
        if config.monitored_sets == 0 || config.monitored_sets > config.enumerated_sets {
            return Err(SideChanError::InvalidArgument(
                "need 0 < monitored_sets <= enumerated_sets".into(),
            ));
        }
        let reps = config.probe.kernel_repeats.max(1) as u64;
        let calibration_bytes =
            (config.calibration_samples as u64).div_ceil(reps) * reps * config.probe.stride_bytes;
        let mut a = attach(&config, layout_seed, layout_seed, calibration_bytes)?;
        let probe = ProbeConfig { seed: layout_seed, ..config.probe.clone() };
        let mut s = a.sim.session(a.spy);
        let cal = calibrate_latencies(&mut s, &a.local, &a.remote, config.calibration_samples, &probe)?;
        let en = enumerate_unique_sets(&mut s, &a.target, config.enumerated_sets, &cal.thresholds, &probe)?;
        if !en.is_complete() {
            return Err(SideChanError::NotEnoughSets { found: en.sets.len(), wanted: en.wanted });
        }
        let (m, n) = (config.monitored_sets, en.sets.len());
        let set_ids: Vec<usize> = (0..m).map(|i| i * n / m).collect();
        let sets = set_ids.iter().map(|&i| en.sets[i].clone()).collect();
        Ok(Self {
            config,
            layout_seed,
            thresholds: cal.thresholds,
            sets,
            set_ids,
            calibration_bytes,
        })
    }

    /// Runs the admitted `victims` on the victim GPU under a fresh
    /// simulator and records a memorygram of every monitored set.
    pub fn run(
        &self,
        victims: &[WorkloadSpec],
        policy: OccupancyPolicy,
        noise_seed: u64,
        trace: bool,
    ) -> Result<RigRun, SideChanError> {
        let cfg = &self.config;
        let mut a = attach(cfg, self.layout_seed, noise_seed, self.calibration_bytes)?;
        let sim = &mut a.sim;
        let page = sim.topology().page_bytes();

        let mut workloads: Vec<Workload> = Vec::new();
        for spec in victims.iter().filter(|s| policy.admits(s)) {
            let vs = sim.create_session(cfg.victim_gpu)?;
            if cfg.victim_layout_jitter {
                let pages = 1 + derive_seed(spec.seed, 0x1a_e0, 0) % 31;
                sim.allocate(vs, cfg.victim_gpu, pages * page)?;
            }
            workloads.push(make_workload(sim, vs, spec)?);
        }

        let spies = (0..self.sets.len())
            .map(|_| sim.fork_session(a.spy))
            .collect::<Result<Vec<_>, _>>()?;
        let e = cfg.epoch_cycles;
        let start = (sim.max_clock() / e + 2) * e;
        for w in &workloads {
            for (sid, _) in &w.lanes {
                sim.wait_until(*sid, start)?;
            }
        }

        let saved = sim.active_probed_sets();
        sim.set_active_probed_sets(1);
        let params = CollectParams {
            start_cycle: start,
            num_epochs: cfg.num_epochs,
            epoch_cycles: e,
            miss_threshold: self.thresholds.miss_threshold(false),
            trace,
        };
        let mut others: Vec<_> = workloads.iter_mut().flat_map(|w| w.agents()).collect();
        let result = collect_memorygram(sim, &spies, &self.sets, &mut others, &params);
        sim.set_active_probed_sets(saved);
        drop(others);
        let (mut memorygram, trace) = result?;
        memorygram.set_ids = self.set_ids.clone();
        Ok(RigRun {
            memorygram,
            trace,
            victim_accesses: workloads.iter().map(Workload::accesses).sum(),
        })
    }

    /// Builds the simulator a run would use, for oracle checks.
    pub fn fresh_simulator(&self, noise_seed: u64) -> Result<Simulator, SideChanError> {
        Ok(attach(&self.config, self.layout_seed, noise_seed, self.calibration_bytes)?.sim)
    }
}

fn attach(cfg: &RigConfig, layout_seed: u64, noise_seed: u64, calibration_bytes: u64) -> Result<Attached, SideChanError> {
    let sim_cfg = cfg.sim.clone().with_latency(cfg.noise.apply(&cfg.sim.latency));
    let mut sim = sim_cfg.build_with_seeds(layout_seed, noise_seed)?;
    let spy = sim.create_session(cfg.spy_gpu)?;
    sim.enable_peer_access(spy, cfg.victim_gpu)?;
    let local = sim.allocate(spy, cfg.spy_gpu, calibration_bytes)?;
    let remote = sim.allocate(spy, cfg.victim_gpu, calibration_bytes)?;
    let target = sim.allocate(spy, cfg.victim_gpu, cfg.buffer_bytes)?;
    Ok(Attached { sim, spy, local, remote, target })
}
