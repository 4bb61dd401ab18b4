//! Sends a message from a trojan on GPU 0 to a spy on GPU 1 through
//! contention in GPU 0's L2, then sweeps the number of parallel set pairs.

use gpuleak::covert::{run_channel, ChannelOptions, NoiseProfile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let opts = ChannelOptions::default();
    let msg = b"Hello! How are you? ";

    let run = run_channel(msg, 1, NoiseProfile::zero(), 11, &opts)?;
    println!("noiseless, 1 pair: {:?} ({} bit errors)", String::from_utf8_lossy(&run.decoded_message), run.stats.bit_errors);

    println!("pairs  bits/kcycle  error rate");
    for p in [1, 2, 4, 8, 16] {
        let s = run_channel(msg, p, NoiseProfile::default(), 11, &opts)?.stats;
        println!("{p:>5}  {:>11.3}  {:>10.4}", s.throughput_bits_per_kilocycle, s.error_rate);
    }
    Ok(())
}
