//! Splits local/remote hit/miss latencies into four clusters, the first
//! step of every attack. Pass an output directory to also write the
//! report and histogram the CLI would.

use gpuleak::cli::{cmd_calibrate, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("gpuleak-calibrate"));
    let cfg = ExperimentConfig { out_dir, ..ExperimentConfig::default() };
    let r = cmd_calibrate(&cfg)?;
    let t = &r.thresholds;
    for (name, (m, s)) in ["local hit", "local miss", "remote hit", "remote miss"]
        .iter()
        .zip(t.cluster_means.iter().zip(&t.cluster_sigmas))
    {
        println!("{name:>12}: mean {m:6.1} cycles, sigma {s:5.1}");
    }
    println!("boundaries {:?}", t.boundaries);
    println!("agreement with ground truth over {} samples: {:.4}", r.samples, r.oracle_agreement);
    println!("wrote {}", cfg.out_dir.display());
    Ok(())
}
