use serde::{Deserialize, Serialize};

use super::align::{align_sets, Alignment, AlignmentConfig};
use super::channel::{bytes_to_bits, transmit, ChannelConfig, Transmission};
use super::CovertError;
use crate::probe::{
    calibrate_latencies, discover_eviction_set, test_alias, EvictionSet, LatencyThresholds,
    ProbeConfig, ProbeError,
};
use crate::simcore::{BufferHandle, GpuId, LatencyModel, SessionId, SimConfig, Simulator};

/// How noisy the node is: class sigmas are scaled by `sigma_scale` and the
/// per-set contention coefficient replaced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseProfile {
    pub sigma_scale: f64,
    pub contention_coeff: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            sigma_scale: 1.0,
            contention_coeff: LatencyModel::default().contention_coeff,
        }
    }
}

impl NoiseProfile {
    pub fn zero() -> Self {
        Self { sigma_scale: 0.0, contention_coeff: 0.0 }
    }

    pub fn apply(&self, base: &LatencyModel) -> LatencyModel {
        base.scaled(self.sigma_scale, self.contention_coeff)
    }
}

/// Everything `run_channel` needs besides the message and pair count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelOptions {
    pub sim: SimConfig,
    pub alignment: AlignmentConfig,
    pub probe: ProbeConfig,
    pub slot_cycles: u64,
    pub prime_reps: usize,
    pub zero_wait_cycles: u64,
    pub calibration_samples: usize,
    pub buffer_bytes: u64,
    pub trojan_gpu: GpuId,
    pub spy_gpu: GpuId,
}

impl Default for ChannelOptions {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            alignment: AlignmentConfig::quick(),
            probe: ProbeConfig::default(),
            slot_cycles: 40_000,
            prime_reps: 2,
            zero_wait_cycles: 10_000,
            calibration_samples: 500,
            buffer_bytes: 16 << 20,
            trojan_gpu: 0,
            spy_gpu: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub pairs: usize,
    pub slot_cycles: u64,
    pub bits_sent: usize,
    pub bit_errors: usize,
    pub error_rate: f64,
    pub duration_cycles: u64,
    pub throughput_bits_per_kilocycle: f64,
}

impl ChannelStats {
    pub fn compute(sent: &[bool], decoded: &[bool], pairs: usize, slot_cycles: u64, duration_cycles: u64) -> Self {
        let bit_errors = sent.iter().zip(decoded).filter(|(a, b)| a != b).count();
        let bits_sent = sent.len();
        Self {
            pairs,
            slot_cycles,
            bits_sent,
            bit_errors,
            error_rate: if bits_sent == 0 { 0.0 } else { bit_errors as f64 / bits_sent as f64 },
            duration_cycles,
            throughput_bits_per_kilocycle: if duration_cycles == 0 {
                0.0
            } else {
                bits_sent as f64 * 1000.0 / duration_cycles as f64
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRun {
    pub stats: ChannelStats,
    pub seed: u64,
    pub spy_thresholds: LatencyThresholds,
    pub alignment: Alignment,
    pub transmission: Transmission,
    pub decoded_message: Vec<u8>,
}

struct Side {
    session: SessionId,
    buf: BufferHandle,
    thresholds: LatencyThresholds,
}

fn prepare_side(
    sim: &mut Simulator,
    home: GpuId,
    peer: GpuId,
    target_gpu: GpuId,
    opts: &ChannelOptions,
) -> Result<Side, CovertError> {
    let session = sim.create_session(home)?;
    sim.enable_peer_access(session, peer)?;
    let mut s = sim.session(session);
    let need = (opts.calibration_samples as u64).div_ceil(opts.probe.kernel_repeats.max(1) as u64)
        * opts.probe.kernel_repeats.max(1) as u64
        * opts.probe.stride_bytes;
    let local = s.allocate(home, need)?;
    let remote = s.allocate(peer, need)?;
    let cal = calibrate_latencies(&mut s, &local, &remote, opts.calibration_samples, &opts.probe)?;
    let buf = s.allocate(target_gpu, opts.buffer_bytes)?;
    Ok(Side { session, buf, thresholds: cal.thresholds })
}

/// Eviction sets at page offset 0 of successive pages, skipping any that
/// alias a set already returned, until `f` accepts one.
fn find_base<F>(
    sim: &mut Simulator,
    side: &Side,
    probe: &ProbeConfig,
    max_distinct: usize,
    mut accept: F,
) -> Result<Option<EvictionSet>, CovertError>
where
    F: FnMut(&mut Simulator, &EvictionSet) -> Result<bool, CovertError>,
{
    let page = probe.page_hint_bytes.unwrap_or(sim.topology().page_bytes());
    let mut seen: Vec<EvictionSet> = Vec::new();
    for p in 0..side.buf.length / page {
        if seen.len() >= max_distinct {
            break;
        }
        let mut s = sim.session(side.session);
        let local = s.is_local(&side.buf);
        let cand = match discover_eviction_set(&mut s, &side.buf, p * page, &side.thresholds, probe) {
            Ok(c) => c,
            Err(ProbeError::IncompleteSet { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let mut dup = false;
        for k in &seen {
            if test_alias(&mut s, k, &cand, local, &side.thresholds, probe.votes)? {
                dup = true;
                break;
            }
        }
        if dup {
            continue;
        }
        if accept(sim, &cand)? {
            return Ok(Some(cand));
        }
        seen.push(cand);
    }
    Ok(None)
}

/// Full covert-channel experiment on a fresh simulator.
///
/// The trojan runs on `trojan_gpu` with a buffer in its own memory; the
/// spy runs on `spy_gpu` with a buffer in the trojan GPU's memory, reached
/// over NVLink. Both calibrate, each finds an eviction set at the start of
/// a page, and the spy keeps searching until its set aligns with the
/// trojan's. Both sets are then slid across the page to get `num_pairs`
/// pairs, which are confirmed by a full alignment before the message is
/// sent.
pub fn run_channel(
    message: &[u8],
    num_pairs: usize,
    noise: NoiseProfile,
    seed: u64,
    opts: &ChannelOptions,
) -> Result<ChannelRun, CovertError> {
    if num_pairs == 0 {
        return Err(CovertError::InvalidArgument("num_pairs must be at least 1".into()));
    }
    let cfg = opts.sim.clone().with_latency(noise.apply(&opts.sim.latency));
    let mut sim = cfg.build(seed)?;
    let tg = opts.trojan_gpu;
    let trojan = prepare_side(&mut sim, tg, opts.spy_gpu, tg, opts)?;
    let spy = prepare_side(&mut sim, opts.spy_gpu, tg, tg, opts)?;

    let probe = ProbeConfig { seed, ..opts.probe.clone() };
    let line = probe.stride_bytes;
    let page = probe.page_hint_bytes.unwrap_or(sim.topology().page_bytes());
    if num_pairs as u64 > page / line {
        return Err(CovertError::InvalidArgument(format!(
            "at most {} pairs fit in one page",
            page / line
        )));
    }

    let t_base = find_base(&mut sim, &trojan, &probe, 1, |_, _| Ok(true))?
        .ok_or(CovertError::AlignmentFailed { found: 0, wanted: num_pairs })?;
    let ways = sim.topology().gpus()[tg].cache.ways;
    let t_base_ref = &t_base;
    let s_base = find_base(&mut sim, &spy, &probe, ways, |sim, cand| {
        let a = align_sets(
            sim,
            trojan.session,
            spy.session,
            std::slice::from_ref(t_base_ref),
            std::slice::from_ref(cand),
            &spy.thresholds,
            &opts.alignment,
        )?;
        Ok(!a.pairs.is_empty())
    })?
    .ok_or(CovertError::AlignmentFailed { found: 0, wanted: num_pairs })?;

    let t_sets: Vec<EvictionSet> = (0..num_pairs as u64).map(|i| t_base.shifted(i * line)).collect();
    let s_sets: Vec<EvictionSet> = (0..num_pairs as u64).map(|i| s_base.shifted(i * line)).collect();
    let alignment = align_sets(
        &mut sim,
        trojan.session,
        spy.session,
        &t_sets,
        &s_sets,
        &spy.thresholds,
        &opts.alignment,
    )?;
    if alignment.pairs.len() < num_pairs {
        return Err(CovertError::AlignmentFailed { found: alignment.pairs.len(), wanted: num_pairs });
    }

    let mut trojans = Vec::with_capacity(num_pairs);
    let mut spies = Vec::with_capacity(num_pairs);
    let mut tp = Vec::with_capacity(num_pairs);
    let mut sp = Vec::with_capacity(num_pairs);
    for pair in &alignment.pairs {
        trojans.push(sim.fork_session(trojan.session)?);
        spies.push(sim.fork_session(spy.session)?);
        tp.push(t_sets[pair.trojan_set_index].clone());
        sp.push(s_sets[pair.spy_set_index].clone());
    }

    let mut ch = ChannelConfig::new(spy.thresholds.clone());
    ch.slot_cycles = opts.slot_cycles;
    ch.prime_reps = opts.prime_reps;
    ch.zero_wait_cycles = opts.zero_wait_cycles;

    let bits = bytes_to_bits(message);
    let tx = transmit(&mut sim, &trojans, &spies, &tp, &sp, &bits, &ch)?;
    let stats = ChannelStats::compute(
        &bits,
        &tx.decoded,
        num_pairs,
        ch.slot_cycles,
        tx.duration_cycles(ch.slot_cycles),
    );
    Ok(ChannelRun {
        stats,
        seed,
        spy_thresholds: spy.thresholds,
        alignment,
        decoded_message: super::channel::bits_to_bytes(&tx.decoded),
        transmission: tx,
    })
}
