//! GPU node topology: which GPUs exist, how much DRAM each one has, and
//! which pairs share a single-hop NVLink.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::cache::CacheConfig;
use super::SimError;

/// Index of a GPU inside a [`Topology`]. Ids are dense, starting at 0.
pub type GpuId = usize;

/// 16 GiB of HBM per GPU.
pub const DEFAULT_DRAM_BYTES: u64 = 16 << 30;

/// Default page size used for virtual-to-physical translation.
pub const DEFAULT_PAGE_BYTES: u64 = 64 << 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuNode {
    pub id: GpuId,
    pub dram_bytes: u64,
    pub cache: CacheConfig,
}

/// Unvalidated description of a node, as read from a config file.
///
/// `neighbors[i]` lists the GPUs linked to `gpus[i]`. The lists must be
/// mutually consistent: if `b` appears in the list of `a`, then `a` must
/// appear in the list of `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub page_bytes: u64,
    pub gpus: Vec<GpuNode>,
    pub neighbors: Vec<Vec<GpuId>>,
}

impl TopologySpec {
    /// Eight GPUs in the hybrid cube-mesh: two fully connected quads
    /// (0-3 and 4-7) plus one link between GPU `i` and GPU `i + 4`.
    pub fn dgx1() -> Self {
        Self::dgx1_with(CacheConfig::default(), DEFAULT_DRAM_BYTES, DEFAULT_PAGE_BYTES)
    }

    pub fn dgx1_with(cache: CacheConfig, dram_bytes: u64, page_bytes: u64) -> Self {
        let gpus = (0..8)
            .map(|id| GpuNode {
                id,
                dram_bytes,
                cache: cache.clone(),
            })
            .collect();
        let neighbors = (0..8)
            .map(|g: usize| {
                let quad = g / 4 * 4;
                let mut n: Vec<GpuId> = (quad..quad + 4).filter(|&o| o != g).collect();
                n.push((g + 4) % 8);
                n.sort_unstable();
                n
            })
            .collect();
        Self {
            page_bytes,
            gpus,
            neighbors,
        }
    }

    /// Two GPUs joined by one link.
    pub fn pair(cache: CacheConfig, dram_bytes: u64, page_bytes: u64) -> Self {
        Self {
            page_bytes,
            gpus: (0..2)
                .map(|id| GpuNode {
                    id,
                    dram_bytes,
                    cache: cache.clone(),
                })
                .collect(),
            neighbors: vec![vec![1], vec![0]],
        }
    }
}

impl Default for TopologySpec {
    fn default() -> Self {
        Self::dgx1()
    }
}

/// Validated topology. Construct with [`build_topology`].
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    page_bytes: u64,
    gpus: Vec<GpuNode>,
    links: BTreeSet<(GpuId, GpuId)>,
}

impl Topology {
    pub fn gpus(&self) -> &[GpuNode] {
        &self.gpus
    }

    pub fn gpu(&self, id: GpuId) -> Option<&GpuNode> {
        self.gpus.get(id)
    }

    pub fn num_gpus(&self) -> usize {
        self.gpus.len()
    }

    pub fn page_bytes(&self) -> u64 {
        self.page_bytes
    }

    /// True when `a` and `b` share a single-hop link.
    pub fn is_adjacent(&self, a: GpuId, b: GpuId) -> bool {
        self.links.contains(&(a.min(b), a.max(b)))
    }

    pub fn degree(&self, gpu: GpuId) -> usize {
        self.links
            .iter()
            .filter(|&&(a, b)| a == gpu || b == gpu)
            .count()
    }

    /// Undirected links, each reported once with the smaller id first.
    pub fn links(&self) -> impl Iterator<Item = (GpuId, GpuId)> + '_ {
        self.links.iter().copied()
    }

    pub fn to_spec(&self) -> TopologySpec {
        let neighbors = (0..self.gpus.len())
            .map(|g| {
                (0..self.gpus.len())
                    .filter(|&o| self.is_adjacent(g, o))
                    .collect()
            })
            .collect();
        TopologySpec {
            page_bytes: self.page_bytes,
            gpus: self.gpus.clone(),
            neighbors,
        }
    }
}

/// Validates a [`TopologySpec`].
pub fn build_topology(spec: &TopologySpec) -> Result<Topology, SimError> {
    let bad = |msg: String| Err(SimError::InvalidTopology(msg));

    if spec.gpus.len() < 2 {
        return bad(format!("need at least 2 GPUs, got {}", spec.gpus.len()));
    }
    if !spec.page_bytes.is_power_of_two() {
        return bad(format!("page size {} is not a power of two", spec.page_bytes));
    }
    if spec.neighbors.len() != spec.gpus.len() {
        return bad(format!(
            "{} neighbor lists for {} GPUs",
            spec.neighbors.len(),
            spec.gpus.len()
        ));
    }

    let mut seen = BTreeSet::new();
    for gpu in &spec.gpus {
        if !seen.insert(gpu.id) {
            return Err(SimError::DuplicateGpu(gpu.id));
        }
        gpu.cache.validate()?;
        if gpu.dram_bytes == 0 || gpu.dram_bytes % spec.page_bytes != 0 {
            return bad(format!(
                "GPU {} DRAM size {} is not a positive multiple of the page size",
                gpu.id, gpu.dram_bytes
            ));
        }
    }
    // Ids double as indices, so they must be exactly 0..n.
    if seen.iter().copied().ne(0..spec.gpus.len()) {
        return bad("GPU ids must be contiguous starting at 0".to_string());
    }

    let mut gpus = spec.gpus.clone();
    gpus.sort_by_key(|g| g.id);

    let mut directed = BTreeSet::new();
    for (pos, list) in spec.neighbors.iter().enumerate() {
        let from = spec.gpus[pos].id;
        for &to in list {
            if to == from {
                return Err(SimError::SelfLink(from));
            }
            if to >= gpus.len() {
                return Err(SimError::UnknownGpu(to));
            }
            directed.insert((from, to));
        }
    }
    for &(a, b) in &directed {
        if !directed.contains(&(b, a)) {
            return Err(SimError::AsymmetricLink(a, b));
        }
    }
    let links: BTreeSet<_> = directed
        .into_iter()
        .filter(|(a, b)| a < b)
        .collect();
    if links.is_empty() {
        return bad("topology has no links".to_string());
    }

    Ok(Topology {
        page_bytes: spec.page_bytes,
        gpus,
        links,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dgx1_is_cube_mesh_of_degree_four() {
        let topo = build_topology(&TopologySpec::dgx1()).unwrap();
        assert_eq!(topo.num_gpus(), 8);
        for g in 0..8 {
            assert_eq!(topo.degree(g), 4, "gpu {g}");
        }
        assert!(topo.is_adjacent(0, 4));
        assert!(topo.is_adjacent(2, 1));
        assert!(!topo.is_adjacent(0, 5));
        assert!(!topo.is_adjacent(3, 6));
        assert_eq!(topo.links().count(), 16);
    }

    #[test]
    fn minimal_pair_is_valid() {
        let spec = TopologySpec::pair(CacheConfig::default(), 1 << 30, DEFAULT_PAGE_BYTES);
        let topo = build_topology(&spec).unwrap();
        assert!(topo.is_adjacent(0, 1));
        assert_eq!(topo.links().count(), 1);
    }

    #[test]
    fn self_link_rejected() {
        let mut spec = TopologySpec::pair(CacheConfig::default(), 1 << 30, DEFAULT_PAGE_BYTES);
        spec.neighbors[0].push(0);
        assert_eq!(build_topology(&spec), Err(SimError::SelfLink(0)));
    }

    #[test]
    fn asymmetric_link_rejected() {
        let mut spec = TopologySpec::dgx1();
        spec.neighbors[0].push(5);
        assert_eq!(build_topology(&spec), Err(SimError::AsymmetricLink(0, 5)));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut spec = TopologySpec::dgx1();
        spec.gpus[3].id = 2;
        assert_eq!(build_topology(&spec), Err(SimError::DuplicateGpu(2)));
    }

    #[test]
    fn single_gpu_or_no_links_rejected() {
        let mut spec = TopologySpec::pair(CacheConfig::default(), 1 << 30, DEFAULT_PAGE_BYTES);
        spec.neighbors = vec![vec![], vec![]];
        assert!(build_topology(&spec).is_err());
        spec.gpus.pop();
        spec.neighbors.pop();
        assert!(build_topology(&spec).is_err());
    }

    #[test]
    fn dram_must_be_page_multiple() {
        let spec = TopologySpec::pair(CacheConfig::default(), 1000, DEFAULT_PAGE_BYTES);
        assert!(build_topology(&spec).is_err());
    }
}
