//! Prime+probe covert channel between a trojan on the GPU that owns the
//! memory and a spy reaching that GPU's L2 over NVLink.

mod align;
mod channel;
mod pipeline;

pub use align::{align_sets, AlignedPair, Alignment, AlignmentConfig};
pub use channel::{
    bits_to_bytes, bytes_to_bits, transmit, ChannelConfig, SlotRecord, SpyProgram, Transmission,
    TrojanProgram,
};
pub use pipeline::{run_channel, ChannelOptions, ChannelRun, ChannelStats, NoiseProfile};

use thiserror::Error;

use crate::probe::ProbeError;
use crate::simcore::SimError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CovertError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("alignment failed: matched {found} of {wanted} pairs")]
    AlignmentFailed { found: usize, wanted: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
