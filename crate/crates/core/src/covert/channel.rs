use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::CovertError;
use crate::probe::{EvictionSet, LatencyThresholds};
use crate::simcore::{Agent, AgentProgram, AgentView, Op, Scheduler, SessionId, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub slot_cycles: u64,
    /// Passes over the trojan set in a '1' slot.
    pub prime_reps: usize,
    /// Busy work the trojan burns in a '0' slot instead of touching memory.
    pub zero_wait_cycles: u64,
    /// Where in each slot the spy probes, as a fraction of the slot.
    pub probe_offset: f64,
    pub thresholds: LatencyThresholds,
}

impl ChannelConfig {
    pub fn new(thresholds: LatencyThresholds) -> Self {
        Self {
            slot_cycles: 40_000,
            prime_reps: 2,
            zero_wait_cycles: 10_000,
            probe_offset: 0.6,
            thresholds,
        }
    }

    fn probe_start(&self) -> u64 {
        (self.slot_cycles as f64 * self.probe_offset) as u64
    }

    /// Checks that, at mean latencies, the trojan's prime ends before the
    /// spy probes and the probe ends before the slot does.
    pub fn validate(&self, lines: usize) -> Result<(), CovertError> {
        if !(0.0..1.0).contains(&self.probe_offset) || self.prime_reps == 0 {
            return Err(CovertError::InvalidArgument(
                "probe_offset must lie in [0, 1) and prime_reps must be positive".into(),
            ));
        }
        let m = self.thresholds.cluster_means;
        let n = lines as f64;
        let prime = self.prime_reps as f64 * n * m[1];
        let probe = n * m[3];
        let start = self.probe_start() as f64;
        if prime >= start || start + probe >= self.slot_cycles as f64 {
            return Err(CovertError::InvalidArgument(format!(
                "slot of {} cycles cannot fit a {prime:.0}-cycle prime and a {probe:.0}-cycle probe",
                self.slot_cycles
            )));
        }
        Ok(())
    }
}

/// Sends one pair's share of the bits: at each slot start, walks its set
/// `prime_reps` times for a '1' or burns cycles for a '0'.
#[derive(Debug, Clone)]
pub struct TrojanProgram {
    lines: Vec<u64>,
    bits: Vec<bool>,
    start: u64,
    cfg_slot: u64,
    prime_reps: usize,
    zero_wait: u64,
    next_slot: usize,
    queue: VecDeque<Op>,
    accesses: u64,
}

impl TrojanProgram {
    pub fn new(set: &EvictionSet, bits: Vec<bool>, start_cycle: u64, cfg: &ChannelConfig) -> Self {
        Self {
            lines: set.members.clone(),
            bits,
            start: start_cycle,
            cfg_slot: cfg.slot_cycles,
            prime_reps: cfg.prime_reps,
            zero_wait: cfg.zero_wait_cycles,
            next_slot: 0,
            queue: VecDeque::new(),
            accesses: 0,
        }
    }

    /// Memory accesses issued so far.
    pub fn accesses(&self) -> u64 {
        self.accesses
    }
}

impl AgentProgram for TrojanProgram {
    fn next_op(&mut self, _view: AgentView<'_>) -> Option<Op> {
        while self.queue.is_empty() {
            let k = self.next_slot;
            let bit = *self.bits.get(k)?;
            self.next_slot += 1;
            self.queue.push_back(Op::WaitUntil(self.start + k as u64 * self.cfg_slot));
            if bit {
                for _ in 0..self.prime_reps {
                    self.queue.extend(self.lines.iter().map(|&a| Op::Access(a)));
                }
            } else if self.zero_wait > 0 {
                self.queue.push_back(Op::Burn(self.zero_wait));
            }
        }
        let op = self.queue.pop_front();
        if matches!(op, Some(Op::Access(_))) {
            self.accesses += 1;
        }
        op
    }
}

/// Primes its set once, then probes it once per slot and keeps the mean
/// latency of each probe. Odd slots walk the set backwards, so a set the
/// trojan only partly evicted does not cascade misses through the probe.
#[derive(Debug, Clone)]
pub struct SpyProgram {
    lines: Vec<u64>,
    slots: usize,
    start: u64,
    slot_cycles: u64,
    probe_start: u64,
    next_slot: usize,
    queue: VecDeque<Op>,
    recording: bool,
    expect_sample: bool,
    sum: u64,
    count: u64,
    means: Vec<f64>,
}

impl SpyProgram {
    pub fn new(set: &EvictionSet, slots: usize, start_cycle: u64, cfg: &ChannelConfig) -> Self {
        let lines = set.members.clone();
        let queue = lines.iter().map(|&a| Op::Access(a)).collect();
        Self {
            lines,
            slots,
            start: start_cycle,
            slot_cycles: cfg.slot_cycles,
            probe_start: cfg.probe_start(),
            next_slot: 0,
            queue,
            recording: false,
            expect_sample: false,
            sum: 0,
            count: 0,
            means: Vec::with_capacity(slots),
        }
    }

    /// Mean probe latency of every completed slot.
    pub fn slot_means(&self) -> &[f64] {
        &self.means
    }
}

impl AgentProgram for SpyProgram {
    fn next_op(&mut self, view: AgentView<'_>) -> Option<Op> {
        if self.expect_sample {
            if let Some(s) = view.last {
                self.sum += s.observed_cycles;
                self.count += 1;
            }
            self.expect_sample = false;
        }
        loop {
            if let Some(op) = self.queue.pop_front() {
                self.expect_sample = self.recording && matches!(op, Op::Access(_));
                return Some(op);
            }
            if self.recording {
                self.means.push(self.sum as f64 / self.count.max(1) as f64);
                self.sum = 0;
                self.count = 0;
                self.recording = false;
                self.next_slot += 1;
            }
            let k = self.next_slot;
            if k >= self.slots {
                return None;
            }
            let at = self.start + k as u64 * self.slot_cycles + self.probe_start;
            self.queue.push_back(Op::WaitUntil(at));
            if k % 2 == 0 {
                self.queue.extend(self.lines.iter().map(|&a| Op::Access(a)));
            } else {
                self.queue.extend(self.lines.iter().rev().map(|&a| Op::Access(a)));
            }
            self.recording = true;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub pair: usize,
    pub bit_index: usize,
    pub sent: bool,
    pub decoded: bool,
    pub mean_latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    /// Same length as the bits handed to [`transmit`].
    pub decoded: Vec<bool>,
    pub records: Vec<SlotRecord>,
    pub start_cycle: u64,
    pub slots: usize,
    /// Zero bits appended so every pair carries the same number of slots.
    pub padding: usize,
    /// Memory accesses the trojan made after setup.
    pub trojan_accesses: u64,
}

impl Transmission {
    pub fn duration_cycles(&self, slot_cycles: u64) -> u64 {
        self.slots as u64 * slot_cycles
    }

    /// Per-slot CSV: `slot,pair,bit_index,sent,decoded,mean_latency`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "slot,pair,bit_index,sent,decoded,mean_latency")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{:.2}",
                r.slot, r.pair, r.bit_index, r.sent as u8, r.decoded as u8, r.mean_latency
            )?;
        }
        Ok(())
    }
}

/// Stripes `bits` over the pairs (bit `i` goes to pair `i % P` in slot
/// `i / P`), runs every trojan and spy agent under the scheduler, and
/// decodes each slot by comparing the spy's mean latency with the remote
/// miss threshold.
///
/// Session `trojans[i]` drives `trojan_sets[i]`, `spies[i]` probes
/// `spy_sets[i]`. Slot 0 starts two slots after the latest session clock.
pub fn transmit(
    sim: &mut Simulator,
    trojans: &[SessionId],
    spies: &[SessionId],
    trojan_sets: &[EvictionSet],
    spy_sets: &[EvictionSet],
    bits: &[bool],
    cfg: &ChannelConfig,
) -> Result<Transmission, CovertError> {
    let p = trojan_sets.len();
    if p == 0 || spy_sets.len() != p || trojans.len() != p || spies.len() != p {
        return Err(CovertError::InvalidArgument(
            "need one trojan and one spy session per aligned pair".into(),
        ));
    }
    let lines = spy_sets.iter().chain(trojan_sets).map(EvictionSet::len).max().unwrap_or(0);
    cfg.validate(lines)?;

    let slots = bits.len().div_ceil(p);
    let padding = slots * p - bits.len();
    let mut latest = 0;
    for &s in trojans.iter().chain(spies) {
        latest = latest.max(sim.now(s)?);
    }
    let start = (latest / cfg.slot_cycles + 2) * cfg.slot_cycles;

    let lane = |i: usize| -> Vec<bool> {
        (0..slots)
            .map(|k| bits.get(k * p + i).copied().unwrap_or(false))
            .collect()
    };
    let mut tprogs: Vec<TrojanProgram> = (0..p)
        .map(|i| TrojanProgram::new(&trojan_sets[i], lane(i), start, cfg))
        .collect();
    let mut sprogs: Vec<SpyProgram> = (0..p)
        .map(|i| SpyProgram::new(&spy_sets[i], slots, start, cfg))
        .collect();

    let prev_active = sim.active_probed_sets();
    sim.set_active_probed_sets(p);
    let result = {
        let mut agents: Vec<Agent<'_>> = Vec::with_capacity(2 * p);
        for (i, t) in tprogs.iter_mut().enumerate() {
            agents.push(Agent::new(trojans[i], t));
        }
        for (i, s) in sprogs.iter_mut().enumerate() {
            agents.push(Agent::new(spies[i], s));
        }
        Scheduler::default().run(sim, &mut agents)
    };
    sim.set_active_probed_sets(prev_active);
    result?;

    let thr = cfg.thresholds.miss_threshold(false);
    let mut decoded = vec![false; bits.len()];
    let mut records = Vec::with_capacity(slots * p);
    for k in 0..slots {
        for (i, sp) in sprogs.iter().enumerate() {
            let mean = sp.slot_means()[k];
            let idx = k * p + i;
            let d = mean > thr;
            if idx < bits.len() {
                decoded[idx] = d;
            }
            records.push(SlotRecord {
                slot: k,
                pair: i,
                bit_index: idx,
                sent: bits.get(idx).copied().unwrap_or(false),
                decoded: d,
                mean_latency: mean,
            });
        }
    }
    Ok(Transmission {
        decoded,
        records,
        start_cycle: start,
        slots,
        padding,
        trojan_accesses: tprogs.iter().map(TrojanProgram::accesses).sum(),
    })
}

/// Most significant bit first.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<bool> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).rev().map(move |i| b >> i & 1 == 1))
        .collect()
}

/// Inverse of [`bytes_to_bits`]; a trailing partial byte is zero-filled.
pub fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i))))
        .collect()
}
