use std::io::{self, Write};

use super::sim::{SessionId, TimingSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    /// Position of the issuing agent in the scheduler's agent list.
    pub agent: usize,
    pub session: SessionId,
    pub sample: TimingSample,
}

/// Every access issued while tracing was on, in global issue order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceLog {
    records: Vec<TraceRecord>,
}

impl TraceLog {
    pub fn new(records: Vec<TraceRecord>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn for_agent(&self, agent: usize) -> impl Iterator<Item = &TraceRecord> + '_ {
        self.records.iter().filter(move |r| r.agent == agent)
    }

    /// Writes `agent_id,timestamp,vaddr,cycles` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "agent_id,timestamp,vaddr,cycles")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{:#x},{}",
                r.agent, r.sample.timestamp_cycles, r.sample.vaddr, r.sample.observed_cycles
            )?;
        }
        Ok(())
    }
}
