//! Fixed-quantum round-robin interleaving of agent programs.
//!
//! Every agent owns a session, and every session carries its own cycle
//! counter. The scheduler walks the agents in list order; each one keeps
//! issuing operations until its counter reaches the current quantum
//! boundary, then the next agent gets its turn. When all agents have
//! reached the boundary it moves forward by one quantum (or jumps to the
//! earliest live agent). Nothing here is random: the same agents, quantum
//! and simulator seed always produce the same global order.

use super::sim::{SessionId, Simulator, TimingSample};
use super::trace::TraceLog;
use super::SimError;

pub const DEFAULT_QUANTUM_CYCLES: u64 = 2_000;

/// One step of an agent program. Accesses are never split across quanta.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Access(u64),
    Burn(u64),
    WaitUntil(u64),
}

/// What an agent sees before choosing its next op.
#[derive(Debug, Clone, Copy)]
pub struct AgentView<'a> {
    pub now: u64,
    /// Result of the previous op when it was an access.
    pub last: Option<&'a TimingSample>,
}

pub trait AgentProgram {
    /// Next operation, or `None` when the program has finished.
    fn next_op(&mut self, view: AgentView<'_>) -> Option<Op>;
}

pub struct Agent<'a> {
    pub session: SessionId,
    pub program: &'a mut dyn AgentProgram,
}

impl<'a> Agent<'a> {
    pub fn new(session: SessionId, program: &'a mut dyn AgentProgram) -> Self {
        Self { session, program }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scheduler {
    pub quantum_cycles: u64,
    /// Agents are stopped once their clock reaches this absolute cycle.
    pub max_cycles: u64,
}

impl Default for Scheduler {
    fn default() -> Self {
        Self {
            quantum_cycles: DEFAULT_QUANTUM_CYCLES,
            max_cycles: u64::MAX,
        }
    }
}

impl Scheduler {
    pub fn new(quantum_cycles: u64, max_cycles: u64) -> Self {
        Self {
            quantum_cycles: quantum_cycles.max(1),
            max_cycles,
        }
    }

    /// Runs the agents to completion without recording a trace (unless the
    /// simulator is already tracing).
    pub fn run(&self, sim: &mut Simulator, agents: &mut [Agent<'_>]) -> Result<(), SimError> {
        let q = self.quantum_cycles.max(1);
        let n = agents.len();
        let mut done = vec![false; n];
        let mut last: Vec<Option<TimingSample>> = vec![None; n];

        let mut start = u64::MAX;
        for a in agents.iter() {
            start = start.min(sim.now(a.session)?);
        }
        if n == 0 {
            return Ok(());
        }
        let mut boundary = (start / q + 1) * q;

        loop {
            let mut earliest = u64::MAX;
            for (i, agent) in agents.iter_mut().enumerate() {
                if done[i] {
                    continue;
                }
                let sid = agent.session;
                sim.set_current_agent(i);
                loop {
                    let now = sim.now(sid)?;
                    if now >= self.max_cycles {
                        done[i] = true;
                        break;
                    }
                    if now >= boundary {
                        earliest = earliest.min(now);
                        break;
                    }
                    let view = AgentView {
                        now,
                        last: last[i].as_ref(),
                    };
                    match agent.program.next_op(view) {
                        None => {
                            done[i] = true;
                            break;
                        }
                        Some(Op::Access(vaddr)) => last[i] = Some(sim.access(sid, vaddr)?),
                        Some(Op::Burn(c)) => {
                            sim.burn(sid, c)?;
                            last[i] = None;
                        }
                        Some(Op::WaitUntil(t)) => {
                            sim.wait_until(sid, t)?;
                            last[i] = None;
                        }
                    }
                }
            }
            if earliest == u64::MAX {
                return Ok(());
            }
            boundary = (boundary + q).max((earliest / q + 1) * q);
        }
    }
}

/// Runs `agents` under a fresh trace and returns it.
pub fn run_agents(
    sim: &mut Simulator,
    agents: &mut [Agent<'_>],
    quantum_cycles: u64,
    max_cycles: u64,
) -> Result<TraceLog, SimError> {
    sim.start_trace();
    let result = Scheduler::new(quantum_cycles, max_cycles).run(sim, agents);
    let trace = sim.take_trace();
    result.map(|()| trace)
}

/// Plays back a fixed list of ops.
#[derive(Debug, Clone)]
pub struct ScriptedProgram {
    ops: Vec<Op>,
    pos: usize,
}

impl ScriptedProgram {
    pub fn new(ops: Vec<Op>) -> Self {
        Self { ops, pos: 0 }
    }
}

impl AgentProgram for ScriptedProgram {
    fn next_op(&mut self, _view: AgentView<'_>) -> Option<Op> {
        let op = self.ops.get(self.pos).copied();
        self.pos += 1;
        op
    }
}
