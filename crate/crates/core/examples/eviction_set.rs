//! Finds an eviction set for one line of a remote buffer, then recovers
//! the associativity and replacement policy from it.

use gpuleak::probe::{
    calibrate_latencies, discover_eviction_set, measure_associativity, validation_curve, ProbeConfig,
};
use gpuleak::simcore::SimConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = SimConfig::default().build(3)?;
    let spy = sim.create_session(1)?;
    sim.enable_peer_access(spy, 0)?;
    let cfg = ProbeConfig::default();

    let mut s = sim.session(spy);
    let local = s.allocate(1, 500 * 128)?;
    let remote = s.allocate(0, 500 * 128)?;
    let thresholds = calibrate_latencies(&mut s, &local, &remote, 500, &cfg)?.thresholds;
    let target = s.allocate(0, 16 << 20)?;

    let mut ev = discover_eviction_set(&mut s, &target, 0, &thresholds, &cfg)?;
    let policy = measure_associativity(&mut s, &ev, false, &thresholds, 10)?;
    let curve = validation_curve(&mut s, &ev, 40)?;

    println!("target {:#x}, {} members", ev.target, ev.members.len());
    println!("all members in the target's set (oracle): {:?}", ev.resolve(&sim));
    println!(
        "inferred ways {}, eviction period {}, policy {}",
        policy.inferred_ways,
        policy.eviction_period,
        policy.policy_label.as_str()
    );
    let row: Vec<String> = curve.iter().map(|(k, c)| format!("{k}:{c}")).collect();
    println!("re-access latency after k members: {}", row.join(" "));
    Ok(())
}
