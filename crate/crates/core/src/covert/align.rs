use std::cell::Cell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::CovertError;
use crate::probe::{EvictionSet, LatencyThresholds};
use crate::simcore::{Agent, AgentProgram, AgentView, Op, Scheduler, SessionId, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentConfig {
    /// Passes the trojan makes over its set while the spy measures. The
    /// trojan also stops as soon as the spy is done.
    pub trojan_probe_loops: u64,
    pub spy_probe_loops: u64,
    /// Lines touched per pass.
    pub num_cache_lines: usize,
    /// Required rise of the spy's mean latency over its solo run. `None`
    /// takes half the calibrated remote hit/miss gap.
    pub margin_cycles: Option<f64>,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            trojan_probe_loops: 400_000,
            spy_probe_loops: 150_000,
            num_cache_lines: 16,
            margin_cycles: None,
        }
    }
}

impl AlignmentConfig {
    /// Same ratio with a thousandth of the passes.
    pub fn quick() -> Self {
        Self {
            trojan_probe_loops: 400,
            spy_probe_loops: 150,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CovertError> {
        if self.spy_probe_loops < 2 || self.trojan_probe_loops < self.spy_probe_loops {
            return Err(CovertError::InvalidArgument(
                "need spy_probe_loops >= 2 and trojan_probe_loops >= spy_probe_loops".into(),
            ));
        }
        if self.num_cache_lines == 0 {
            return Err(CovertError::InvalidArgument("num_cache_lines must be positive".into()));
        }
        Ok(())
    }

    pub fn margin(&self, thresholds: &LatencyThresholds) -> f64 {
        self.margin_cycles.unwrap_or_else(|| {
            let (hit, miss) = thresholds.tier_means(false);
            (miss - hit) / 2.0
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub trojan_set_index: usize,
    pub spy_set_index: usize,
    /// Spy mean latency under trojan pressure minus its solo mean.
    pub contention_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub pairs: Vec<AlignedPair>,
    /// Trojan sets no spy set matched.
    pub unmatched: Vec<usize>,
    /// Solo mean probe latency of each spy set.
    pub baselines: Vec<f64>,
}

struct Hammer {
    lines: Vec<u64>,
    passes_left: u64,
    pos: usize,
    stop: Rc<Cell<bool>>,
}

impl AgentProgram for Hammer {
    fn next_op(&mut self, _view: AgentView<'_>) -> Option<Op> {
        if self.stop.get() || self.passes_left == 0 {
            return None;
        }
        let a = self.lines[self.pos];
        self.pos += 1;
        if self.pos == self.lines.len() {
            self.pos = 0;
            self.passes_left -= 1;
        }
        Some(Op::Access(a))
    }
}

/// Probes its lines for a number of passes and averages every pass after
/// the first, which only warms the set.
struct ProbeLoop {
    lines: Vec<u64>,
    passes: u64,
    issued: u64,
    sum: u64,
    count: u64,
    done: Rc<Cell<bool>>,
}

impl ProbeLoop {
    fn mean(&self) -> f64 {
        self.sum as f64 / self.count.max(1) as f64
    }
}

impl AgentProgram for ProbeLoop {
    fn next_op(&mut self, view: AgentView<'_>) -> Option<Op> {
        let per_pass = self.lines.len() as u64;
        if let Some(s) = view.last {
            if self.issued > per_pass {
                self.sum += s.observed_cycles;
                self.count += 1;
            }
        }
        if self.issued == self.passes * per_pass {
            self.done.set(true);
            return None;
        }
        let a = self.lines[(self.issued % per_pass) as usize];
        self.issued += 1;
        Some(Op::Access(a))
    }
}

fn lines_of(set: &EvictionSet, n: usize) -> Vec<u64> {
    set.members.iter().copied().take(n).collect()
}

fn sync_clocks(sim: &mut Simulator, sessions: &[SessionId]) -> Result<(), CovertError> {
    let mut t = 0;
    for &s in sessions {
        t = t.max(sim.now(s)?);
    }
    for &s in sessions {
        sim.wait_until(s, t)?;
    }
    Ok(())
}

fn spy_mean(
    sim: &mut Simulator,
    trojan: Option<(SessionId, &EvictionSet)>,
    spy: SessionId,
    spy_set: &EvictionSet,
    cfg: &AlignmentConfig,
) -> Result<f64, CovertError> {
    let done = Rc::new(Cell::new(false));
    let mut probe = ProbeLoop {
        lines: lines_of(spy_set, cfg.num_cache_lines),
        passes: cfg.spy_probe_loops,
        issued: 0,
        sum: 0,
        count: 0,
        done: done.clone(),
    };
    match trojan {
        None => {
            sync_clocks(sim, &[spy])?;
            Scheduler::default().run(sim, &mut [Agent::new(spy, &mut probe)])?;
        }
        Some((t, tset)) => {
            sync_clocks(sim, &[t, spy])?;
            let mut hammer = Hammer {
                lines: lines_of(tset, cfg.num_cache_lines),
                passes_left: cfg.trojan_probe_loops,
                pos: 0,
                stop: done,
            };
            Scheduler::default().run(
                sim,
                &mut [Agent::new(t, &mut hammer), Agent::new(spy, &mut probe)],
            )?;
        }
    }
    Ok(probe.mean())
}

/// Matches trojan sets to spy sets that share a physical set.
///
/// Every spy set is first timed alone. Then, for each candidate pair, the
/// trojan hammers its set while the spy probes its own; a pair scores the
/// rise in the spy's mean latency. Each trojan set takes the best-scoring
/// spy set still free, if that score clears the margin.
pub fn align_sets(
    sim: &mut Simulator,
    trojan: SessionId,
    spy: SessionId,
    trojan_sets: &[EvictionSet],
    spy_sets: &[EvictionSet],
    thresholds: &LatencyThresholds,
    cfg: &AlignmentConfig,
) -> Result<Alignment, CovertError> {
    cfg.validate()?;
    let margin = cfg.margin(thresholds);
    let baselines = spy_sets
        .iter()
        .map(|s| spy_mean(sim, None, spy, s, cfg))
        .collect::<Result<Vec<_>, _>>()?;

    let mut taken = vec![false; spy_sets.len()];
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (ti, tset) in trojan_sets.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (si, sset) in spy_sets.iter().enumerate() {
            if taken[si] {
                continue;
            }
            let score = spy_mean(sim, Some((trojan, tset)), spy, sset, cfg)? - baselines[si];
            if score > margin && best.map_or(true, |(_, b)| score > b) {
                best = Some((si, score));
            }
        }
        match best {
            Some((si, score)) => {
                taken[si] = true;
                pairs.push(AlignedPair {
                    trojan_set_index: ti,
                    spy_set_index: si,
                    contention_score: score,
                });
            }
            None => unmatched.push(ti),
        }
    }
    Ok(Alignment { pairs, unmatched, baselines })
}
