//! Estimates the hidden-layer width of an MLP training on the victim GPU
//! from the total misses it causes in the spy's monitored sets.

use gpuleak::sidechan::{autocorrelation, dominant_period, estimate_hidden_neurons, NeuronCalibration, RigConfig, SpyRig};
use gpuleak::workloads::{OccupancyPolicy, WorkloadKind, WorkloadSpec, MLP_SIZES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rig = SpyRig::setup(RigConfig::default(), 1)?;
    let policy = OccupancyPolicy::default();
    let total = |neurons: usize, epochs: usize, seed: u64| -> Result<_, Box<dyn std::error::Error>> {
        let spec = WorkloadSpec::new(WorkloadKind::mlp(neurons, epochs), seed);
        Ok(rig.run(&[spec], policy, seed + 1000, false)?.memorygram)
    };

    let mut table = NeuronCalibration::new();
    for n in MLP_SIZES {
        for i in 0..3 {
            table.add(n, total(n, 1, 10 * i)?.total());
        }
    }
    println!("calibration means: {:?}", table.means());

    for n in MLP_SIZES {
        let est = estimate_hidden_neurons(&total(n, 1, 777)?, &table)?;
        println!("true {n:>3} neurons -> estimated {:>3} ({} misses)", est.estimated_neurons, est.observed_total_misses);
    }

    let two = total(256, 2, 5)?;
    let cols: Vec<f64> = two.column_totals().iter().map(|&c| c as f64).collect();
    let half = cols.len() / 2;
    println!(
        "two-epoch run: dominant period {:?} of {} epochs, autocorrelation at {half} = {:.2}",
        dominant_period(&cols, cols.len() * 3 / 4),
        cols.len(),
        autocorrelation(&cols, half)
    );
    Ok(())
}
