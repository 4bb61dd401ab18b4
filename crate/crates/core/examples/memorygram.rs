//! Watches 128 remote L2 sets while a victim runs and prints the
//! memorygram as text; writes CSV and PGM copies to the given directory.
//!
//! `cargo run --release --example memorygram -- matmul /tmp/mg`

use std::fs::File;
use std::path::PathBuf;

use gpuleak::sidechan::{RigConfig, SpyRig};
use gpuleak::workloads::{OccupancyPolicy, WorkloadKind, WorkloadSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "matmul".into());
    let out: PathBuf = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("gpuleak-memorygram"));
    let kind = WorkloadKind::APPS
        .iter()
        .find(|k| k.name() == name)
        .cloned()
        .ok_or_else(|| format!("unknown workload {name}"))?;

    let rig = SpyRig::setup(RigConfig::default(), 1)?;
    let run = rig.run(&[WorkloadSpec::new(kind, 1)], OccupancyPolicy::default(), 2, false)?;
    let mg = &run.memorygram;

    // One text row per 4 monitored sets keeps it on a screen.
    for rows in mg.counts.chunks(4) {
        let line: String = (0..mg.num_epochs())
            .map(|e| match rows.iter().map(|r| r[e]).max().unwrap_or(0) {
                0 => ' ',
                1..=2 => '.',
                3..=8 => '+',
                _ => '#',
            })
            .collect();
        println!("|{line}|");
    }
    println!("{name}: {} misses over {} sets x {} epochs", mg.total(), mg.num_sets(), mg.num_epochs());

    std::fs::create_dir_all(&out)?;
    mg.write_csv(File::create(out.join("memorygram.csv"))?)?;
    mg.write_pgm(File::create(out.join("memorygram.pgm"))?)?;
    println!("wrote {}", out.display());
    Ok(())
}
