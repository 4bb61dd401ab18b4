pub mod cli;
pub mod covert;
pub mod probe;
pub mod sidechan;
pub mod simcore;
pub mod workloads;
