//! Oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use gpuleak::probe::{EvictionSet, LatencyThresholds};
use gpuleak::simcore::{BufferHandle, Simulator};

/// Thresholds at the midpoints of the default class means.
pub fn default_thresholds() -> LatencyThresholds {
    LatencyThresholds::from_means([270.0, 470.0, 650.0, 850.0])
}

/// Virtual addresses of `buf`'s lines that the oracle maps to cache `set`,
/// skipping the first `skip`.
pub fn lines_in_set(sim: &Simulator, buf: &BufferHandle, line: u64, set: usize, skip: usize, n: usize) -> Vec<u64> {
    (0..buf.length / line)
        .map(|i| buf.vaddr(i * line))
        .filter(|&a| sim.oracle_set(a).unwrap().1 == set)
        .skip(skip)
        .take(n)
        .collect()
}

/// Eviction set built from the oracle rather than from timing.
pub fn oracle_evset(sim: &Simulator, buf: &BufferHandle, line: u64, set: usize, members: usize) -> EvictionSet {
    let lines = lines_in_set(sim, buf, line, set, 0, members + 1);
    assert_eq!(lines.len(), members + 1, "buffer too small for set {set}");
    EvictionSet { target: lines[0], members: lines[1..].to_vec(), resolved_set: Some(set) }
}

/// Textbook LRU over per-set queues, most recent at the front.
pub struct ReferenceLru {
    sets: Vec<VecDeque<u64>>,
    ways: usize,
}

impl ReferenceLru {
    pub fn new(num_sets: usize, ways: usize) -> Self {
        Self { sets: vec![VecDeque::new(); num_sets], ways }
    }

    /// Returns true on a hit.
    pub fn access(&mut self, line: u64) -> bool {
        let n = self.sets.len() as u64;
        let q = &mut self.sets[(line % n) as usize];
        let tag = line / n;
        let hit = if let Some(p) = q.iter().position(|&t| t == tag) {
            q.remove(p);
            true
        } else {
            if q.len() == self.ways {
                q.pop_back();
            }
            false
        };
        q.push_front(tag);
        hit
    }

    pub fn set(&self, set: usize) -> Vec<u64> {
        self.sets[set].iter().copied().collect()
    }
}

/// Builds 16 trojan and 16 spy eviction sets from the oracle on a fresh
/// noiseless default node, with a seed-chosen half of the spy sets sharing
/// a physical set with some trojan set, and runs `align_sets` over all
/// 16×16 pairs. Returns the accepted and the oracle-same-set pairs.
pub fn alignment_grid(seed: u64) -> (BTreeSet<(usize, usize)>, BTreeSet<(usize, usize)>) {
    use gpuleak::covert::{align_sets, AlignmentConfig};
    use gpuleak::simcore::{LatencyModel, SimConfig};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let cfg = SimConfig::default().with_latency(LatencyModel::default().scaled(0.0, 0.0));
    let mut sim = cfg.build(seed).unwrap();
    let trojan = sim.create_session(0).unwrap();
    let spy = sim.create_session(1).unwrap();
    sim.enable_peer_access(spy, 0).unwrap();
    let tbuf = sim.allocate(trojan, 0, 16 << 20).unwrap();
    let sbuf = sim.allocate(spy, 0, 16 << 20).unwrap();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..2048).collect();
    pool.shuffle(&mut rng);
    let t_ids: Vec<usize> = pool[..16].to_vec();
    let mut s_ids: Vec<usize> = t_ids[..8].to_vec();
    s_ids.extend_from_slice(&pool[16..24]);
    s_ids.shuffle(&mut rng);

    let t_sets: Vec<_> = t_ids.iter().map(|&s| oracle_evset(&sim, &tbuf, 128, s, 16)).collect();
    let s_sets: Vec<_> = s_ids.iter().map(|&s| oracle_evset(&sim, &sbuf, 128, s, 16)).collect();
    let a = align_sets(&mut sim, trojan, spy, &t_sets, &s_sets, &default_thresholds(), &AlignmentConfig::quick()).unwrap();

    let accepted = a.pairs.iter().map(|p| (p.trojan_set_index, p.spy_set_index)).collect();
    let mut truth = BTreeSet::new();
    for (ti, t) in t_ids.iter().enumerate() {
        for (si, s) in s_ids.iter().enumerate() {
            if t == s {
                truth.insert((ti, si));
            }
        }
    }
    (accepted, truth)
}
