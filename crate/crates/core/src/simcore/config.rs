//! Node description as read from the `[topology]`, `[cache]` and
//! `[latency]` tables of an experiment file.
//!
//! ```toml
//! [topology]
//! page_bytes = 65536          # power of two
//! dram_bytes = 17179869184    # per GPU, multiple of page_bytes
//! # neighbors[i] = GPUs linked to GPU i; defaults to the 8-GPU cube-mesh
//! neighbors = [[1, 2, 3, 4], [0, 2, 3, 5], ...]
//!
//! [cache]
//! line_bytes = 128
//! num_sets = 2048
//! ways = 16
//! policy = "lru"              # or "random"
//!
//! [latency]
//! local_l2_hit = { mean = 270.0, sigma = 12.0 }
//! local_dram = { mean = 470.0, sigma = 25.0 }
//! remote_l2_hit = { mean = 650.0, sigma = 20.0 }
//! remote_dram = { mean = 850.0, sigma = 30.0 }
//! contention_coeff = 8.0
//! ```

use serde::{Deserialize, Serialize};

use super::cache::CacheConfig;
use super::latency::LatencyModel;
use super::sim::Simulator;
use super::topology::{build_topology, GpuNode, Topology, TopologySpec, DEFAULT_DRAM_BYTES, DEFAULT_PAGE_BYTES};
use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub page_bytes: u64,
    pub dram_bytes: u64,
    pub neighbors: Vec<Vec<usize>>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            page_bytes: DEFAULT_PAGE_BYTES,
            dram_bytes: DEFAULT_DRAM_BYTES,
            neighbors: TopologySpec::dgx1().neighbors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub topology: TopologyConfig,
    pub cache: CacheConfig,
    pub latency: LatencyModel,
}

impl SimConfig {
    /// Cube-mesh node with a 64-set, 4-way L2 and 2 KiB pages, for fast
    /// experiments that still have several pages per cache span.
    pub fn small() -> Self {
        Self {
            topology: TopologyConfig {
                page_bytes: 2 << 10,
                dram_bytes: 64 << 20,
                ..TopologyConfig::default()
            },
            cache: CacheConfig::new(128, 64, 4),
            latency: LatencyModel::default(),
        }
    }

    pub fn with_latency(mut self, latency: LatencyModel) -> Self {
        self.latency = latency;
        self
    }

    pub fn topology_spec(&self) -> TopologySpec {
        TopologySpec {
            page_bytes: self.topology.page_bytes,
            gpus: (0..self.topology.neighbors.len())
                .map(|id| GpuNode {
                    id,
                    dram_bytes: self.topology.dram_bytes,
                    cache: self.cache.clone(),
                })
                .collect(),
            neighbors: self.topology.neighbors.clone(),
        }
    }

    pub fn topology(&self) -> Result<Topology, SimError> {
        build_topology(&self.topology_spec())
    }

    pub fn build(&self, seed: u64) -> Result<Simulator, SimError> {
        Simulator::new(self.topology()?, self.latency.clone(), seed)
    }

    pub fn build_with_seeds(&self, layout_seed: u64, noise_seed: u64) -> Result<Simulator, SimError> {
        Simulator::with_seeds(self.topology()?, self.latency.clone(), layout_seed, noise_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_dgx1() {
        let topo = SimConfig::default().topology().unwrap();
        assert_eq!(topo.num_gpus(), 8);
        assert_eq!(topo.gpus()[0].cache, CacheConfig::default());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: SimConfig = toml::from_str(
            "[cache]\nline_bytes = 128\nnum_sets = 64\nways = 4\n[latency.local_l2_hit]\nmean = 260.0\nsigma = 0.0\n",
        )
        .unwrap();
        assert_eq!(cfg.cache.num_sets, 64);
        assert_eq!(cfg.latency.local_l2_hit.mean, 260.0);
        assert_eq!(cfg.latency.remote_dram, LatencyModel::default().remote_dram);
        assert_eq!(cfg.topology, TopologyConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = toml::from_str::<SimConfig>("[cache]\nline_bytes = 128\nnum_sets = 64\nways = 4\ncolour = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn small_config_builds() {
        let sim = SimConfig::small().build(1).unwrap();
        assert_eq!(sim.topology().gpus()[0].cache.num_sets, 64);
        assert_eq!(sim.topology().page_bytes(), 2048);
    }
}
