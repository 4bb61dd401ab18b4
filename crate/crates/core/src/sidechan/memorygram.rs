use std::collections::VecDeque;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::SideChanError;
use crate::probe::EvictionSet;
use crate::simcore::{Agent, AgentProgram, AgentView, Op, Scheduler, SessionId, Simulator, TraceLog};

/// Miss counts of monitored sets over fixed-length epochs. Rows are sets,
/// columns are epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Memorygram {
    pub counts: Vec<Vec<u32>>,
    /// Index of each row's set in the monitored set list.
    pub set_ids: Vec<usize>,
    pub epoch_cycles: u64,
    pub start_cycle: u64,
    /// Lines probed per set, the most misses one cell can hold.
    pub ways: usize,
}

impl Memorygram {
    pub fn num_sets(&self) -> usize {
        self.counts.len()
    }

    pub fn num_epochs(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().map(|&c| c as u64).sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().map(|&c| c as u64).sum()).collect()
    }

    pub fn column_totals(&self) -> Vec<u64> {
        let mut cols = vec![0u64; self.num_epochs()];
        for row in &self.counts {
            for (c, &v) in cols.iter_mut().zip(row) {
                *c += v as u64;
            }
        }
        cols
    }

    /// Long-format CSV: `set_id,epoch,miss_count`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "set_id,epoch,miss_count")?;
        for (row, &id) in self.counts.iter().zip(&self.set_ids) {
            for (e, c) in row.iter().enumerate() {
                writeln!(out, "{id},{e},{c}")?;
            }
        }
        Ok(())
    }

    /// Binary PGM, one row per set and one column per epoch; a cell with
    /// any miss is white.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.num_epochs(), self.num_sets())?;
        let pixels: Vec<u8> = self.counts.iter().flatten().map(|&c| if c > 0 { 255 } else { 0 }).collect();
        out.write_all(&pixels)
    }
}

/// Primes one set, then at the end of every epoch probes it, alternating
/// direction so a partly evicted set does not cascade misses through the
/// probe.
pub struct MemorygramSpy {
    lines: Vec<u64>,
    miss_threshold: f64,
    start: u64,
    epoch_cycles: u64,
    epochs: usize,
    next_epoch: usize,
    queue: VecDeque<Op>,
    recording: bool,
    expect_sample: bool,
    misses: u32,
    counts: Vec<u32>,
}

impl MemorygramSpy {
    pub fn new(set: &EvictionSet, miss_threshold: f64, start_cycle: u64, epoch_cycles: u64, epochs: usize) -> Self {
        let lines = set.members.clone();
        let queue = lines.iter().map(|&a| Op::Access(a)).collect();
        Self {
            lines,
            miss_threshold,
            start: start_cycle,
            epoch_cycles,
            epochs,
            next_epoch: 0,
            queue,
            recording: false,
            expect_sample: false,
            misses: 0,
            counts: Vec::with_capacity(epochs),
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }
}

impl AgentProgram for MemorygramSpy {
    fn next_op(&mut self, view: AgentView<'_>) -> Option<Op> {
        if self.expect_sample {
            if let Some(s) = view.last {
                if s.observed_cycles as f64 > self.miss_threshold {
                    self.misses += 1;
                }
            }
            self.expect_sample = false;
        }
        loop {
            if let Some(op) = self.queue.pop_front() {
                self.expect_sample = self.recording && matches!(op, Op::Access(_));
                return Some(op);
            }
            if self.recording {
                self.counts.push(self.misses);
                self.misses = 0;
                self.recording = false;
                self.next_epoch += 1;
            }
            let e = self.next_epoch;
            if e >= self.epochs {
                return None;
            }
            self.queue.push_back(Op::WaitUntil(self.start + (e as u64 + 1) * self.epoch_cycles));
            if e % 2 == 0 {
                self.queue.extend(self.lines.iter().rev().map(|&a| Op::Access(a)));
            } else {
                self.queue.extend(self.lines.iter().map(|&a| Op::Access(a)));
            }
            self.recording = true;
        }
    }
}

/// What [`collect_memorygram`] needs besides the simulator and the agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectParams {
    pub start_cycle: u64,
    pub num_epochs: usize,
    pub epoch_cycles: u64,
    pub miss_threshold: f64,
    pub trace: bool,
}

/// Runs one spy agent per monitored set next to `others` and gathers the
/// memorygram. `spies[i]` probes `sets[i]`; spies are scheduled first, so
/// their agent indices in the returned trace are `0..sets.len()`.
///
/// Spies prime immediately and probe at the end of each epoch after
/// `start_cycle`; `others` should be parked at `start_cycle` by the caller.
pub fn collect_memorygram(
    sim: &mut Simulator,
    spies: &[SessionId],
    sets: &[EvictionSet],
    others: &mut [Agent<'_>],
    p: &CollectParams,
) -> Result<(Memorygram, Option<TraceLog>), SideChanError> {
    if spies.len() != sets.len() {
        return Err(SideChanError::InvalidArgument(format!(
            "{} spy sessions for {} sets",
            spies.len(),
            sets.len()
        )));
    }
    if p.num_epochs == 0 || p.epoch_cycles == 0 {
        return Err(SideChanError::InvalidArgument("need at least one epoch of non-zero length".into()));
    }
    let mut programs: Vec<MemorygramSpy> = sets
        .iter()
        .map(|s| MemorygramSpy::new(s, p.miss_threshold, p.start_cycle, p.epoch_cycles, p.num_epochs))
        .collect();
    let mut agents: Vec<Agent<'_>> = spies
        .iter()
        .zip(programs.iter_mut())
        .map(|(&sid, prog)| Agent::new(sid, prog as &mut dyn AgentProgram))
        .collect();
    agents.extend(others.iter_mut().map(|a| Agent::new(a.session, &mut *a.program)));

    let end = p.start_cycle + (p.num_epochs as u64 + 1) * p.epoch_cycles;
    if p.trace {
        sim.start_trace();
    }
    let result = Scheduler::new(Scheduler::default().quantum_cycles, end).run(sim, &mut agents);
    let trace = p.trace.then(|| sim.take_trace());
    result?;
    drop(agents);

    let ways = sets.iter().map(|s| s.members.len()).max().unwrap_or(0);
    let mut counts = Vec::with_capacity(programs.len());
    for prog in &programs {
        let mut row = prog.counts().to_vec();
        row.resize(p.num_epochs, 0);
        counts.push(row);
    }
    Ok((
        Memorygram {
            counts,
            set_ids: (0..sets.len()).collect(),
            epoch_cycles: p.epoch_cycles,
            start_cycle: p.start_cycle,
            ways,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Memorygram {
        Memorygram {
            counts: vec![vec![0, 2, 0], vec![1, 0, 16]],
            set_ids: vec![4, 9],
            epoch_cycles: 10,
            start_cycle: 0,
            ways: 16,
        }
    }

    #[test]
    fn totals_and_csv() {
        let m = tiny();
        assert_eq!(m.total(), 19);
        assert_eq!(m.row_totals(), vec![2, 17]);
        assert_eq!(m.column_totals(), vec![1, 2, 16]);
        let mut out = Vec::new();
        m.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert_eq!(text.lines().nth(6), Some("9,2,16"));
    }

    #[test]
    fn pgm_is_binarised() {
        let mut out = Vec::new();
        tiny().write_pgm(&mut out).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&out[..header.len()], header);
        assert_eq!(&out[header.len()..], &[0, 255, 0, 255, 0, 255]);
    }

    #[test]
    fn spy_alternates_probe_direction() {
        let set = EvictionSet { target: 0, members: vec![1, 2, 3], resolved_set: None };
        let mut spy = MemorygramSpy::new(&set, 500.0, 100, 50, 2);
        let mut ops = Vec::new();
        while let Some(op) = spy.next_op(AgentView { now: 0, last: None }) {
            ops.push(op);
        }
        use Op::*;
        assert_eq!(
            ops,
            vec![
                Access(1), Access(2), Access(3),
                WaitUntil(150), Access(3), Access(2), Access(1),
                WaitUntil(200), Access(1), Access(2), Access(3),
            ]
        );
        assert_eq!(spy.counts(), &[0, 0]);
    }
}
