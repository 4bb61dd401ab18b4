//! Trains the nearest-centroid fingerprint model on the six synthetic
//! applications and classifies fresh runs, with and without a noisy
//! neighbour. Uses fewer samples than the CLI defaults to run quickly.

use gpuleak::cli::{eval_fingerprint, train_fingerprint, ExperimentConfig};
use gpuleak::sidechan::SpyRig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::default();
    cfg.sidechan.fingerprint.train_per_label = 15;
    cfg.sidechan.fingerprint.test_per_label = 10;
    let rig = SpyRig::setup(cfg.rig(), cfg.seed)?;
    let model = train_fingerprint(&rig, &cfg)?;
    println!("labels: {}", model.labels.join(", "));

    for noise in [0.0, 0.1, 0.3] {
        cfg.sidechan.noise_intensity = noise;
        let cm = eval_fingerprint(&rig, &cfg, &model)?;
        println!("noise {noise}: accuracy {:.3}", cm.accuracy());
        if noise == 0.0 {
            cm.write_csv(std::io::stdout())?;
        }
    }
    Ok(())
}
