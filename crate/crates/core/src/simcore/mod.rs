//! Ground-truth model of a multi-GPU node with NUMA L2 caching.
//!
//! Each GPU's L2 caches only lines whose pages live in that GPU's DRAM. A
//! load from GPU B to memory on GPU A is looked up (and filled) in A's L2
//! and is timed as a remote access; B's L2 is left alone.

pub mod cache;
pub mod config;
pub mod latency;
pub mod memory;
pub mod sched;
pub mod sim;
pub mod topology;
pub mod trace;

pub use cache::{set_index, CacheConfig, L2Cache, ReplacementPolicy};
pub use config::SimConfig;
pub use latency::{AccessClass, ClassLatency, LatencyModel};
pub use memory::{oracle_translate, AllocId, Allocation, BufferHandle, PhysicalAddress};
pub use sched::{run_agents, Agent, AgentProgram, AgentView, Op, Scheduler, ScriptedProgram};
pub use sim::{derive_seed, AgentSession, SessionId, Simulator, TimingSample};
pub use topology::{build_topology, GpuId, GpuNode, Topology, TopologySpec};
pub use trace::{TraceLog, TraceRecord};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("duplicate GPU id {0}")]
    DuplicateGpu(GpuId),
    #[error("GPU {0} links to itself")]
    SelfLink(GpuId),
    #[error("link {0} -> {1} has no reverse entry")]
    AsymmetricLink(GpuId, GpuId),
    #[error("unknown GPU {0}")]
    UnknownGpu(GpuId),
    #[error("invalid cache geometry: {0}")]
    InvalidCache(String),
    #[error("invalid latency model: {0}")]
    InvalidLatency(String),
    #[error("unknown session {0}")]
    UnknownSession(usize),
    #[error("GPU {from} has no NVLink path to GPU {to}")]
    NoNvlinkPath { from: GpuId, to: GpuId },
    #[error("GPU {0} cannot peer with itself")]
    SelfPeer(GpuId),
    #[error("session {session} has no peer access to GPU {gpu}")]
    NoPeerAccess { session: usize, gpu: GpuId },
    #[error("out of memory on GPU {gpu} ({requested} bytes requested)")]
    OutOfMemory { gpu: GpuId, requested: u64 },
    #[error("zero-length allocation")]
    EmptyAllocation,
    #[error("address {0:#x} is not mapped")]
    Unmapped(u64),
    #[error("session {session} may not access {vaddr:#x}")]
    PermissionDenied { session: usize, vaddr: u64 },
    #[error("offset {offset} outside allocation of {length} bytes")]
    OffsetOutOfRange { offset: u64, length: u64 },
}
