//! Parses a victim description from TOML, runs it alone with tracing on,
//! and summarises what it touched.

use std::collections::BTreeSet;

use gpuleak::simcore::{run_agents, SimConfig};
use gpuleak::workloads::{make_workload, WorkloadSpec};

const SPEC: &str = r#"
kind = "mlp"
neurons = 128
epochs = 2
seed = 9
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec: WorkloadSpec = toml::from_str(SPEC)?;
    let mut sim = SimConfig::default().build(1)?;
    let root = sim.create_session(0)?;
    let mut w = make_workload(&mut sim, root, &spec)?;
    let mut agents = w.agents();
    let trace = run_agents(&mut sim, &mut agents, 2_000, 4_000_000)?;
    drop(agents);

    let lines: BTreeSet<u64> = trace.records().iter().map(|r| r.sample.vaddr / 128).collect();
    println!("{} ({} lanes): {} accesses, {} distinct lines", spec.kind.name(), spec.lanes, w.accesses(), lines.len());
    println!("as JSON: {}", serde_json::to_string(&spec)?);
    Ok(())
}
