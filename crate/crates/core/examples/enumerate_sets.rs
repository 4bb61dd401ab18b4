//! Enumerates every set of a small 64-set, 4-way cache through timing
//! alone and checks the result against the simulator's ground truth.

use std::collections::BTreeSet;

use gpuleak::probe::{calibrate_latencies, enumerate_unique_sets, ProbeConfig};
use gpuleak::simcore::SimConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = SimConfig::small().build(5)?;
    let spy = sim.create_session(1)?;
    sim.enable_peer_access(spy, 0)?;
    let cfg = ProbeConfig::small();
    let mut s = sim.session(spy);
    let local = s.allocate(1, 500 * 128)?;
    let remote = s.allocate(0, 500 * 128)?;
    let thresholds = calibrate_latencies(&mut s, &local, &remote, 500, &cfg)?.thresholds;
    let buf = s.allocate(0, 256 << 10)?;
    let en = enumerate_unique_sets(&mut s, &buf, 64, &thresholds, &cfg)?;

    let mut physical = BTreeSet::new();
    for mut set in en.sets.clone() {
        if let Some(p) = set.resolve(&sim) {
            physical.insert(p);
        }
    }
    println!("eviction sets found: {} of {}", en.sets.len(), en.wanted);
    println!("distinct physical sets (oracle): {}", physical.len());
    Ok(())
}
