//! Times the four kinds of access on a simulated 8-GPU node and shows that
//! a remote line is cached only in its home GPU's L2.

use gpuleak::simcore::SimConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = SimConfig::default().build(42)?;
    let s = sim.create_session(1)?;
    sim.enable_peer_access(s, 0)?;
    let local = sim.allocate(s, 1, 1 << 20)?;
    let remote = sim.allocate(s, 0, 1 << 20)?;

    for (name, buf) in [("local", &local), ("remote", &remote)] {
        let a = buf.vaddr(0);
        let miss = sim.access(s, a)?;
        let hit = sim.access(s, a)?;
        println!(
            "{name:>6}: first load {:>4} cycles ({}), second {:>4} cycles ({})",
            miss.observed_cycles,
            miss.true_class.name(),
            hit.observed_cycles,
            hit.true_class.name()
        );
    }

    let pa = sim.oracle_translate_vaddr(remote.vaddr(0))?;
    let (home, set) = sim.oracle_set(remote.vaddr(0))?;
    println!(
        "remote line maps to GPU {home} set {set}; held by GPU 0's L2: {}, by GPU 1's L2: {}",
        sim.oracle_cache(0).contains(pa),
        sim.oracle_cache(1).contains(pa)
    );
    Ok(())
}
