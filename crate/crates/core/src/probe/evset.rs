use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{majority, LatencyThresholds, ProbeConfig, ProbeError};
use crate::simcore::{AgentSession, BufferHandle, Simulator};

pub const EVSET_SCHEMA_VERSION: u32 = 1;

/// Addresses that all index the same cache set as `target`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionSet {
    pub target: u64,
    pub members: Vec<u64>,
    /// Oracle set id, filled in by tests only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_set: Option<usize>,
}

impl EvictionSet {
    /// Same set moved by `delta` bytes, e.g. to the next line of every page.
    pub fn shifted(&self, delta: u64) -> Self {
        Self {
            target: self.target + delta,
            members: self.members.iter().map(|m| m + delta).collect(),
            resolved_set: None,
        }
    }

    /// Target first, then members.
    pub fn addresses(&self) -> impl Iterator<Item = u64> + '_ {
        std::iter::once(self.target).chain(self.members.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Ground truth lookup: the set id every member maps to, if they agree.
    pub fn resolve(&mut self, sim: &Simulator) -> Option<usize> {
        let sets: Vec<Option<usize>> = self
            .addresses()
            .map(|a| sim.oracle_set(a).ok().map(|(_, s)| s))
            .collect();
        let agree = sets.iter().all(|s| *s == sets[0]);
        self.resolved_set = if agree { sets[0] } else { None };
        self.resolved_set
    }
}

/// On-disk form for reuse across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvictionSetFile {
    pub schema_version: u32,
    pub sets: Vec<EvictionSet>,
}

impl EvictionSetFile {
    pub fn new(sets: Vec<EvictionSet>) -> Self {
        Self { schema_version: EVSET_SCHEMA_VERSION, sets }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("eviction sets serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, ProbeError> {
        let f: Self = serde_json::from_str(s).map_err(|e| ProbeError::Format(e.to_string()))?;
        if f.schema_version != EVSET_SCHEMA_VERSION {
            return Err(ProbeError::Format(format!(
                "unsupported schema_version {}",
                f.schema_version
            )));
        }
        Ok(f)
    }
}

/// One trial: load the target, walk the chain in a fresh random order, and
/// time the target again.
fn evicted_once(
    session: &mut AgentSession<'_>,
    target: u64,
    chain: &[u64],
    order: &mut Vec<u64>,
    rng: &mut ChaCha8Rng,
    threshold: f64,
) -> Result<bool, ProbeError> {
    order.clear();
    order.extend_from_slice(chain);
    order.shuffle(rng);
    session.access(target)?;
    for &a in order.iter() {
        session.access(a)?;
    }
    Ok(session.access(target)?.observed_cycles as f64 > threshold)
}

/// Majority-vote decision on whether walking `chain` evicts `target`.
pub fn target_evicted(
    session: &mut AgentSession<'_>,
    target: u64,
    chain: &[u64],
    local: bool,
    thresholds: &LatencyThresholds,
    votes: usize,
    seed: u64,
) -> Result<bool, ProbeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(chain.len());
    let thr = thresholds.miss_threshold(local);
    majority(votes, || evicted_once(session, target, chain, &mut order, &mut rng, thr))
}

/// Grows a chase over candidate lines until `eviction_set_size` lines that
/// conflict with the target have been found.
///
/// Candidates are appended a block at a time. When a block makes the target
/// miss, the block is withdrawn and replayed one line at a time; the line
/// whose addition causes the miss conflicts with the target, is recorded,
/// and leaves the chain.
pub fn discover_eviction_set(
    session: &mut AgentSession<'_>,
    buf: &BufferHandle,
    target_offset: u64,
    thresholds: &LatencyThresholds,
    cfg: &ProbeConfig,
) -> Result<EvictionSet, ProbeError> {
    if cfg.stride_bytes == 0 || cfg.eviction_set_size == 0 {
        return Err(ProbeError::InvalidArgument(
            "stride and eviction_set_size must be non-zero".into(),
        ));
    }
    let line = cfg.stride_bytes;
    let target_off = target_offset - target_offset % line;
    if target_off >= buf.length {
        return Err(ProbeError::InvalidArgument(format!(
            "target offset {target_offset} outside buffer of {} bytes",
            buf.length
        )));
    }
    let target = buf.vaddr(target_off);
    let local = session.is_local(buf);
    let wanted = cfg.eviction_set_size;

    let candidates: Box<dyn Iterator<Item = u64>> = match cfg.page_hint_bytes {
        Some(page) if page >= line => {
            let in_page = target_off % page;
            let own_page = target_off / page;
            let pages = buf.length / page;
            Box::new(
                (0..pages)
                    .filter(move |&p| p != own_page)
                    .map(move |p| p * page + in_page)
                    .filter(move |&o| o < buf.length),
            )
        }
        _ => Box::new(
            (0..buf.length / line)
                .map(move |i| i * line)
                .filter(move |&o| o != target_off),
        ),
    };
    let mut candidates = candidates.map(|o| buf.vaddr(o)).take(cfg.search_budget);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ target.rotate_left(17));
    let mut order = Vec::new();
    let thr = thresholds.miss_threshold(local);
    let votes = cfg.votes;
    let block = cfg.skip_block.max(1);

    let mut chain: Vec<u64> = Vec::new();
    let mut found: Vec<u64> = Vec::new();
    let mut decide = |session: &mut AgentSession<'_>, chain: &[u64]| {
        majority(votes, || evicted_once(session, target, chain, &mut order, &mut rng, thr))
    };

    while found.len() < wanted {
        let start = chain.len();
        chain.extend(candidates.by_ref().take(block));
        if chain.len() == start {
            return Err(ProbeError::IncompleteSet { found: found.len(), wanted });
        }
        if !decide(session, &chain)? {
            continue;
        }
        let pending: Vec<u64> = chain.drain(start..).collect();
        for a in pending {
            chain.push(a);
            if decide(session, &chain)? {
                chain.pop();
                found.push(a);
                if found.len() == wanted {
                    break;
                }
            }
        }
    }
    Ok(EvictionSet { target, members: found, resolved_set: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::{CacheConfig, LatencyModel, SimConfig};

    fn thresholds() -> LatencyThresholds {
        LatencyThresholds::from_means([270.0, 470.0, 650.0, 850.0])
    }

    #[test]
    fn small_config_members_share_target_set() {
        for seed in 0..5 {
            let mut sim = SimConfig::small().build(seed).unwrap();
            let s = sim.create_session(0).unwrap();
            sim.enable_peer_access(s, 1).unwrap();
            let mut sess = sim.session(s);
            let buf = sess.allocate(1, 128 << 10).unwrap();
            let mut ev = discover_eviction_set(&mut sess, &buf, 640, &thresholds(), &ProbeConfig::small()).unwrap();
            assert_eq!(ev.len(), 4);
            let mut uniq = ev.members.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), 4);
            assert!(ev.resolve(&sim).is_some(), "seed {seed}");
        }
    }

    #[test]
    fn direct_mapped_first_conflict_completes() {
        let mut cfg = SimConfig::small();
        cfg.cache = CacheConfig::new(128, 64, 1);
        let mut sim = cfg.with_latency(LatencyModel::zero_noise()).build(4).unwrap();
        let s = sim.create_session(0).unwrap();
        let mut sess = sim.session(s);
        let buf = sess.allocate(0, 64 << 10).unwrap();
        let pc = ProbeConfig { eviction_set_size: 1, ..ProbeConfig::small() };
        let mut ev = discover_eviction_set(&mut sess, &buf, 0, &thresholds(), &pc).unwrap();
        assert_eq!(ev.len(), 1);
        let (_, want) = sim.oracle_set(ev.target).unwrap();
        // The first candidate line, in buffer order, that shares the set.
        let first = (1..buf.length / 128)
            .map(|i| buf.vaddr(i * 128))
            .find(|&a| sim.oracle_set(a).unwrap().1 == want)
            .unwrap();
        assert_eq!(ev.members, vec![first]);
        assert_eq!(ev.resolve(&sim), Some(want));
    }

    #[test]
    fn budget_exhaustion_reports_partial_count() {
        let mut sim = SimConfig::small().build(2).unwrap();
        let s = sim.create_session(0).unwrap();
        let mut sess = sim.session(s);
        let buf = sess.allocate(0, 64 << 10).unwrap();
        let pc = ProbeConfig { search_budget: 0, ..ProbeConfig::small() };
        assert_eq!(
            discover_eviction_set(&mut sess, &buf, 0, &thresholds(), &pc),
            Err(ProbeError::IncompleteSet { found: 0, wanted: 4 })
        );
        // Four pages hold at most four lines of any one set, short of the
        // seven a four-way search needs.
        let tiny = sess.allocate(0, 8 << 10).unwrap();
        let r = discover_eviction_set(&mut sess, &tiny, 0, &thresholds(), &ProbeConfig::small());
        assert!(matches!(r, Err(ProbeError::IncompleteSet { .. })), "{r:?}");
    }

    #[test]
    fn json_round_trip_and_shift() {
        let ev = EvictionSet { target: 0x1000, members: vec![0x2000, 0x3000], resolved_set: Some(3) };
        let f = EvictionSetFile::new(vec![ev.clone()]);
        assert_eq!(EvictionSetFile::from_json(&f.to_json()).unwrap(), f);
        let s = ev.shifted(128);
        assert_eq!(s.target, 0x1080);
        assert_eq!(s.members, vec![0x2080, 0x3080]);
        assert_eq!(s.resolved_set, None);
        assert!(EvictionSetFile::from_json("{\"schema_version\":9,\"sets\":[]}").is_err());
    }
}
