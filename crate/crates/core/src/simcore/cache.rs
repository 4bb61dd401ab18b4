//! Physically indexed, set-associative L2 model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::memory::PhysicalAddress;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReplacementPolicy {
    #[default]
    Lru,
    /// Evicts a uniformly random way on a miss into a full set. Only used
    /// to check that the policy probe can tell the difference.
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    pub line_bytes: u64,
    pub num_sets: usize,
    pub ways: usize,
    #[serde(default)]
    pub policy: ReplacementPolicy,
}

impl Default for CacheConfig {
    /// P100 L2: 128 B lines, 2048 sets, 16 ways, LRU (4 MiB).
    fn default() -> Self {
        Self {
            line_bytes: 128,
            num_sets: 2048,
            ways: 16,
            policy: ReplacementPolicy::Lru,
        }
    }
}

impl CacheConfig {
    pub fn new(line_bytes: u64, num_sets: usize, ways: usize) -> Self {
        Self {
            line_bytes,
            num_sets,
            ways,
            policy: ReplacementPolicy::Lru,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !self.line_bytes.is_power_of_two() {
            return Err(SimError::InvalidCache(format!(
                "line size {} is not a power of two",
                self.line_bytes
            )));
        }
        if !self.num_sets.is_power_of_two() {
            return Err(SimError::InvalidCache(format!(
                "set count {} is not a power of two",
                self.num_sets
            )));
        }
        if self.ways == 0 || self.ways > u8::MAX as usize {
            return Err(SimError::InvalidCache(format!(
                "associativity {} out of range",
                self.ways
            )));
        }
        Ok(())
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.line_bytes * self.num_sets as u64 * self.ways as u64
    }

    /// Bytes covered by one pass over every set (`line_bytes * num_sets`).
    pub fn span_bytes(&self) -> u64 {
        self.line_bytes * self.num_sets as u64
    }

    fn line_number(&self, paddr: PhysicalAddress) -> u64 {
        paddr.offset / self.line_bytes
    }
}

/// Linear index function: physical line number modulo the set count.
pub fn set_index(paddr: PhysicalAddress, cfg: &CacheConfig) -> usize {
    (cfg.line_number(paddr) % cfg.num_sets as u64) as usize
}

/// Tag stored in a set for the line holding `paddr`.
pub fn line_tag(paddr: PhysicalAddress, cfg: &CacheConfig) -> u64 {
    cfg.line_number(paddr) / cfg.num_sets as u64
}

/// One GPU's L2 contents. Each set keeps its tags ordered most-recent first.
#[derive(Debug, Clone)]
pub struct L2Cache {
    cfg: CacheConfig,
    tags: Vec<u64>,
    lens: Vec<u8>,
    rng: ChaCha8Rng,
}

impl PartialEq for L2Cache {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg
            && (0..self.cfg.num_sets).all(|s| self.set(s) == other.set(s))
    }
}

impl L2Cache {
    pub fn new(cfg: CacheConfig, seed: u64) -> Self {
        let n = cfg.num_sets * cfg.ways;
        Self {
            tags: vec![0; n],
            lens: vec![0; cfg.num_sets],
            rng: ChaCha8Rng::seed_from_u64(seed),
            cfg,
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    /// Tags resident in `set`, most-recently-used first.
    pub fn set(&self, set: usize) -> &[u64] {
        let base = set * self.cfg.ways;
        &self.tags[base..base + self.lens[set] as usize]
    }

    pub fn contains(&self, paddr: PhysicalAddress) -> bool {
        let tag = line_tag(paddr, &self.cfg);
        self.set(set_index(paddr, &self.cfg)).contains(&tag)
    }

    pub fn occupancy(&self) -> usize {
        self.lens.iter().map(|&l| l as usize).sum()
    }

    /// Looks up `paddr`, filling on a miss. Returns true on a hit.
    pub fn access(&mut self, paddr: PhysicalAddress) -> bool {
        let set = set_index(paddr, &self.cfg);
        let tag = line_tag(paddr, &self.cfg);
        self.access_set(set, tag)
    }

    fn access_set(&mut self, set: usize, tag: u64) -> bool {
        let ways = self.cfg.ways;
        let base = set * ways;
        let len = self.lens[set] as usize;
        let slots = &mut self.tags[base..base + ways];

        if let Some(pos) = slots[..len].iter().position(|&t| t == tag) {
            slots[..=pos].rotate_right(1);
            return true;
        }

        if len < ways {
            slots[..=len].rotate_right(1);
            slots[0] = tag;
            self.lens[set] += 1;
            return false;
        }

        let victim = match self.cfg.policy {
            ReplacementPolicy::Lru => ways - 1,
            ReplacementPolicy::Random => self.rng.random_range(0..ways),
        };
        slots[..=victim].rotate_right(1);
        slots[0] = tag;
        false
    }

    pub fn flush(&mut self) {
        self.lens.iter_mut().for_each(|l| *l = 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pa(offset: u64) -> PhysicalAddress {
        PhysicalAddress { gpu: 0, offset }
    }

    #[test]
    fn set_index_examples() {
        let cfg = CacheConfig::default();
        assert_eq!(set_index(pa(0), &cfg), 0);
        assert_eq!(set_index(pa(128 * 2048), &cfg), 0);
        assert_eq!(set_index(pa(128 * 5), &cfg), 5);
        assert_eq!(set_index(pa(128 * 5 + 127), &cfg), 5);
        assert_eq!(cfg.capacity_bytes(), 4 << 20);
    }

    #[test]
    fn validate_rejects_bad_geometry() {
        assert!(CacheConfig::new(100, 2048, 16).validate().is_err());
        assert!(CacheConfig::new(128, 2000, 16).validate().is_err());
        assert!(CacheConfig::new(128, 2048, 0).validate().is_err());
        assert!(CacheConfig::new(128, 64, 4).validate().is_ok());
    }

    #[test]
    fn seventeenth_line_evicts_first() {
        let cfg = CacheConfig::default();
        let mut cache = L2Cache::new(cfg.clone(), 0);
        let stride = cfg.span_bytes();
        for i in 0..16 {
            assert!(!cache.access(pa(i * stride)));
        }
        assert!(cache.contains(pa(0)));
        assert!(!cache.access(pa(16 * stride)));
        assert!(!cache.contains(pa(0)));
        assert!(cache.contains(pa(stride)));
        assert_eq!(cache.set(0).len(), 16);
    }

    #[test]
    fn hit_promotes_to_front() {
        let mut cache = L2Cache::new(CacheConfig::new(128, 4, 2), 0);
        let stride = 128 * 4;
        cache.access(pa(0));
        cache.access(pa(stride));
        assert_eq!(cache.set(0), &[1, 0]);
        assert!(cache.access(pa(0)));
        assert_eq!(cache.set(0), &[0, 1]);
        cache.access(pa(2 * stride));
        assert_eq!(cache.set(0), &[2, 0]);
    }

    #[test]
    fn flush_empties_every_set() {
        let mut cache = L2Cache::new(CacheConfig::new(128, 8, 2), 0);
        for i in 0..32 {
            cache.access(pa(i * 128));
        }
        assert!(cache.occupancy() > 0);
        cache.flush();
        assert_eq!(cache.occupancy(), 0);
        cache.flush();
        assert_eq!(cache.occupancy(), 0);
    }

    #[test]
    fn random_policy_keeps_set_bounded() {
        let mut cfg = CacheConfig::new(128, 2, 4);
        cfg.policy = ReplacementPolicy::Random;
        let mut cache = L2Cache::new(cfg, 3);
        for i in 0..100 {
            cache.access(pa(i * 256));
        }
        let set = cache.set(0);
        assert_eq!(set.len(), 4);
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
    }
}
