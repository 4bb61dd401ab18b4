//! The simulation instance: caches, memory, sessions and the access path.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cache::L2Cache;
use super::latency::{AccessClass, LatencyModel};
use super::memory::{
    new_allocation, oracle_translate, AllocId, Allocation, BufferHandle, ContextId, FrameAllocator,
    PhysicalAddress,
};
use super::topology::{GpuId, Topology};
use super::trace::{TraceLog, TraceRecord};
use super::SimError;

/// First virtual address handed out. Purely cosmetic.
const VA_BASE: u64 = 0x7f00_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SessionId(pub usize);

/// One timed load as seen by the issuing session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingSample {
    pub vaddr: u64,
    pub observed_cycles: u64,
    /// Session clock when the access was issued.
    pub timestamp_cycles: u64,
    /// Ground truth. Attack code must not read this; it exists for tests
    /// and for the calibration histogram export.
    pub true_class: AccessClass,
}

#[derive(Debug, Clone)]
struct Session {
    context: ContextId,
    home_gpu: GpuId,
    grants: BTreeSet<GpuId>,
    clock: u64,
    rng: ChaCha8Rng,
}

/// Mixes a seed with a stream tag and index into an independent seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a combined word.
    let mut z = seed
        ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_FRAMES: u64 = 1;
const STREAM_CACHE: u64 = 2;
const STREAM_SESSION: u64 = 3;

/// A self-contained, single-threaded simulation of one multi-GPU node.
///
/// Two seeds drive it. The layout seed fixes physical page placement, so
/// repeating the same allocation sequence reproduces the same frames. The
/// noise seed drives latency sampling, one independent stream per session.
#[derive(Debug, Clone)]
pub struct Simulator {
    topology: Topology,
    latency: LatencyModel,
    caches: Vec<L2Cache>,
    frames: Vec<FrameAllocator>,
    allocations: Vec<Allocation>,
    by_base: BTreeMap<u64, usize>,
    next_vaddr: u64,
    sessions: Vec<Session>,
    next_context: usize,
    noise_seed: u64,
    active_sets: usize,
    trace: Option<Vec<TraceRecord>>,
    current_agent: usize,
}

impl Simulator {
    pub fn new(topology: Topology, latency: LatencyModel, seed: u64) -> Result<Self, SimError> {
        Self::with_seeds(topology, latency, seed, seed)
    }

    pub fn with_seeds(
        topology: Topology,
        latency: LatencyModel,
        layout_seed: u64,
        noise_seed: u64,
    ) -> Result<Self, SimError> {
        latency.validate()?;
        let caches = topology
            .gpus()
            .iter()
            .map(|g| L2Cache::new(g.cache.clone(), derive_seed(noise_seed, STREAM_CACHE, g.id as u64)))
            .collect();
        let frames = topology
            .gpus()
            .iter()
            .map(|g| {
                FrameAllocator::new(
                    g.dram_bytes / topology.page_bytes(),
                    derive_seed(layout_seed, STREAM_FRAMES, g.id as u64),
                )
            })
            .collect();
        Ok(Self {
            topology,
            latency,
            caches,
            frames,
            allocations: Vec::new(),
            by_base: BTreeMap::new(),
            next_vaddr: VA_BASE,
            sessions: Vec::new(),
            next_context: 0,
            noise_seed,
            active_sets: 1,
            trace: None,
            current_agent: 0,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn latency_model(&self) -> &LatencyModel {
        &self.latency
    }

    /// Number of sets currently being probed in parallel; feeds the
    /// contention term of the latency model.
    pub fn set_active_probed_sets(&mut self, n: usize) {
        self.active_sets = n.max(1);
    }

    pub fn active_probed_sets(&self) -> usize {
        self.active_sets
    }

    // ---- sessions -------------------------------------------------------

    /// Opens a session (a new process context) homed on `home_gpu`.
    pub fn create_session(&mut self, home_gpu: GpuId) -> Result<SessionId, SimError> {
        if self.topology.gpu(home_gpu).is_none() {
            return Err(SimError::UnknownGpu(home_gpu));
        }
        let context = ContextId(self.next_context);
        self.next_context += 1;
        Ok(self.push_session(context, home_gpu, BTreeSet::new(), 0))
    }

    /// New session in the same context as `parent`: same home GPU, same
    /// peer grants, same allocations, its own clock (starting at the
    /// parent's) and its own noise stream.
    pub fn fork_session(&mut self, parent: SessionId) -> Result<SessionId, SimError> {
        let p = self.session_ref(parent)?.clone();
        Ok(self.push_session(p.context, p.home_gpu, p.grants, p.clock))
    }

    fn push_session(
        &mut self,
        context: ContextId,
        home_gpu: GpuId,
        grants: BTreeSet<GpuId>,
        clock: u64,
    ) -> SessionId {
        let id = self.sessions.len();
        self.sessions.push(Session {
            context,
            home_gpu,
            grants,
            clock,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(self.noise_seed, STREAM_SESSION, id as u64)),
        });
        SessionId(id)
    }

    fn session_ref(&self, id: SessionId) -> Result<&Session, SimError> {
        self.sessions.get(id.0).ok_or(SimError::UnknownSession(id.0))
    }

    fn session_mut(&mut self, id: SessionId) -> Result<&mut Session, SimError> {
        self.sessions.get_mut(id.0).ok_or(SimError::UnknownSession(id.0))
    }

    pub fn home_gpu(&self, id: SessionId) -> Result<GpuId, SimError> {
        Ok(self.session_ref(id)?.home_gpu)
    }

    pub fn has_peer_access(&self, id: SessionId, gpu: GpuId) -> Result<bool, SimError> {
        Ok(self.session_ref(id)?.grants.contains(&gpu))
    }

    /// Grants `id` access to `remote_gpu` iff the two GPUs share a link.
    pub fn enable_peer_access(&mut self, id: SessionId, remote_gpu: GpuId) -> Result<(), SimError> {
        let home = self.home_gpu(id)?;
        if self.topology.gpu(remote_gpu).is_none() {
            return Err(SimError::UnknownGpu(remote_gpu));
        }
        if remote_gpu == home {
            return Err(SimError::SelfPeer(home));
        }
        if !self.topology.is_adjacent(home, remote_gpu) {
            return Err(SimError::NoNvlinkPath {
                from: home,
                to: remote_gpu,
            });
        }
        self.session_mut(id)?.grants.insert(remote_gpu);
        Ok(())
    }

    pub fn now(&self, id: SessionId) -> Result<u64, SimError> {
        Ok(self.session_ref(id)?.clock)
    }

    /// Spends `cycles` without touching memory.
    pub fn burn(&mut self, id: SessionId, cycles: u64) -> Result<(), SimError> {
        let s = self.session_mut(id)?;
        s.clock += cycles;
        Ok(())
    }

    /// Idles until the session clock reaches `t` (no-op if already past).
    pub fn wait_until(&mut self, id: SessionId, t: u64) -> Result<(), SimError> {
        let s = self.session_mut(id)?;
        s.clock = s.clock.max(t);
        Ok(())
    }

    /// Latest clock over all sessions.
    pub fn max_clock(&self) -> u64 {
        self.sessions.iter().map(|s| s.clock).max().unwrap_or(0)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    // ---- memory ---------------------------------------------------------

    pub fn allocate(&mut self, id: SessionId, owner_gpu: GpuId, length: u64) -> Result<BufferHandle, SimError> {
        let session = self.session_ref(id)?;
        let context = session.context;
        if self.topology.gpu(owner_gpu).is_none() {
            return Err(SimError::UnknownGpu(owner_gpu));
        }
        if owner_gpu != session.home_gpu && !session.grants.contains(&owner_gpu) {
            return Err(SimError::NoPeerAccess {
                session: id.0,
                gpu: owner_gpu,
            });
        }
        if length == 0 {
            return Err(SimError::EmptyAllocation);
        }
        let page = self.topology.page_bytes();
        let pages = length.div_ceil(page);
        let frames = self.frames[owner_gpu]
            .take(pages)
            .ok_or(SimError::OutOfMemory {
                gpu: owner_gpu,
                requested: length,
            })?;

        let alloc_id = AllocId(self.allocations.len());
        let base = self.next_vaddr;
        // One unmapped guard page between allocations.
        self.next_vaddr += (pages + 1) * page;
        let alloc = new_allocation(alloc_id, context, owner_gpu, base, length, page, frames);
        let handle = alloc.handle();
        self.by_base.insert(base, self.allocations.len());
        self.allocations.push(alloc);
        Ok(handle)
    }

    fn lookup(&self, vaddr: u64) -> Option<&Allocation> {
        let (_, &idx) = self.by_base.range(..=vaddr).next_back()?;
        let a = &self.allocations[idx];
        (vaddr < a.base_vaddr + a.length).then_some(a)
    }

    // ---- access path ----------------------------------------------------

    /// Issues one timed load from session `id`.
    ///
    /// Only the L2 of the GPU that owns the page is consulted or updated;
    /// the issuing GPU's own cache is never touched by remote loads.
    pub fn access(&mut self, id: SessionId, vaddr: u64) -> Result<TimingSample, SimError> {
        let s = self.session_ref(id)?;
        let home = s.home_gpu;
        let alloc = self.lookup(vaddr).ok_or(SimError::Unmapped(vaddr))?;
        if alloc.context != s.context || (alloc.owner_gpu != home && !s.grants.contains(&alloc.owner_gpu)) {
            return Err(SimError::PermissionDenied {
                session: id.0,
                vaddr,
            });
        }
        let paddr = oracle_translate(alloc, vaddr - alloc.base_vaddr)?;
        self.timed_access(id, vaddr, paddr, home)
    }

    fn timed_access(
        &mut self,
        id: SessionId,
        vaddr: u64,
        paddr: PhysicalAddress,
        home: GpuId,
    ) -> Result<TimingSample, SimError> {
        let hit = self.caches[paddr.gpu].access(paddr);
        let class = AccessClass::from_outcome(hit, paddr.gpu == home);
        let active = self.active_sets;
        let session = &mut self.sessions[id.0];
        let cycles = self.latency.sample(class, active, &mut session.rng);
        let sample = TimingSample {
            vaddr,
            observed_cycles: cycles,
            timestamp_cycles: session.clock,
            true_class: class,
        };
        session.clock += cycles;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                agent: self.current_agent,
                session: id,
                sample,
            });
        }
        Ok(sample)
    }

    /// Empties every L2. Page maps are untouched.
    pub fn flush_caches(&mut self) {
        self.caches.iter_mut().for_each(L2Cache::flush);
    }

    // ---- tracing --------------------------------------------------------

    /// Starts recording every access into a fresh [`TraceLog`].
    pub fn start_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    /// Stops recording and returns what was captured.
    pub fn take_trace(&mut self) -> TraceLog {
        TraceLog::new(self.trace.take().unwrap_or_default())
    }

    pub fn is_tracing(&self) -> bool {
        self.trace.is_some()
    }

    pub(crate) fn set_current_agent(&mut self, agent: usize) {
        self.current_agent = agent;
    }

    // ---- oracle ---------------------------------------------------------

    pub fn oracle_allocation(&self, id: AllocId) -> Option<&Allocation> {
        self.allocations.get(id.0)
    }

    pub fn oracle_translate_vaddr(&self, vaddr: u64) -> Result<PhysicalAddress, SimError> {
        let alloc = self.lookup(vaddr).ok_or(SimError::Unmapped(vaddr))?;
        oracle_translate(alloc, vaddr - alloc.base_vaddr)
    }

    /// GPU and cache set that hold the line behind `vaddr`.
    pub fn oracle_set(&self, vaddr: u64) -> Result<(GpuId, usize), SimError> {
        let p = self.oracle_translate_vaddr(vaddr)?;
        let cfg = self.caches[p.gpu].config();
        Ok((p.gpu, super::cache::set_index(p, cfg)))
    }

    pub fn oracle_cache(&self, gpu: GpuId) -> &L2Cache {
        &self.caches[gpu]
    }

    /// Attacker-facing handle for one session.
    pub fn session(&mut self, id: SessionId) -> AgentSession<'_> {
        AgentSession { sim: self, id }
    }
}

/// The only view of the simulator attack code gets: timed loads, clock
/// control, allocation and peer-access requests. No translation, no cache
/// inspection.
pub struct AgentSession<'a> {
    sim: &'a mut Simulator,
    id: SessionId,
}

impl AgentSession<'_> {
    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn home_gpu(&self) -> GpuId {
        self.sim.sessions[self.id.0].home_gpu
    }

    pub fn access(&mut self, vaddr: u64) -> Result<TimingSample, SimError> {
        self.sim.access(self.id, vaddr)
    }

    pub fn allocate(&mut self, owner_gpu: GpuId, length: u64) -> Result<BufferHandle, SimError> {
        self.sim.allocate(self.id, owner_gpu, length)
    }

    pub fn enable_peer_access(&mut self, remote_gpu: GpuId) -> Result<(), SimError> {
        self.sim.enable_peer_access(self.id, remote_gpu)
    }

    pub fn now(&self) -> u64 {
        self.sim.sessions[self.id.0].clock
    }

    pub fn burn(&mut self, cycles: u64) {
        self.sim.sessions[self.id.0].clock += cycles;
    }

    /// True when `buffer` lives in this session's home GPU memory.
    pub fn is_local(&self, buffer: &BufferHandle) -> bool {
        buffer.owner_gpu == self.home_gpu()
    }
}
