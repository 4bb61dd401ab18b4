//! Acceptance harness: one PASS/FAIL line per criterion, non-zero exit if
//! any fails. Run with `cargo test --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::ReferenceLru;
use gpuleak::cli::{cmd_mlp_extract, eval_fingerprint, train_fingerprint, ExperimentConfig};
use gpuleak::covert::{run_channel, ChannelOptions, NoiseProfile};
use gpuleak::probe::{
    calibrate_latencies, discover_eviction_set, enumerate_unique_sets, measure_associativity, LatencyThresholds,
    PolicyLabel, ProbeConfig,
};
use gpuleak::sidechan::{dominant_period, SpyRig};
use gpuleak::simcore::{AgentSession, CacheConfig, L2Cache, PhysicalAddress, SimConfig};
use gpuleak::workloads::{OccupancyPolicy, WorkloadKind, WorkloadSpec, MLP_SIZES};

type Outcome = Result<String, String>;

fn calibrated(s: &mut AgentSession<'_>, local_gpu: usize, remote_gpu: usize, cfg: &ProbeConfig) -> LatencyThresholds {
    let bytes = 500 * cfg.stride_bytes;
    let local = s.allocate(local_gpu, bytes).unwrap();
    let remote = s.allocate(remote_gpu, bytes).unwrap();
    calibrate_latencies(s, &local, &remote, 500, cfg).unwrap().thresholds
}

fn geometry_recovery() -> Outcome {
    let mut slowest = Duration::ZERO;
    for seed in 1..=10u64 {
        let t0 = Instant::now();
        let mut sim = SimConfig::default().build(seed).unwrap();
        let spy = sim.create_session(1).unwrap();
        sim.enable_peer_access(spy, 0).unwrap();
        let cfg = ProbeConfig { seed, ..ProbeConfig::default() };
        let mut s = sim.session(spy);
        let thr = calibrated(&mut s, 1, 0, &cfg);
        let buf = s.allocate(0, 16 << 20).unwrap();
        let ev = discover_eviction_set(&mut s, &buf, 0, &thr, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let r = measure_associativity(&mut s, &ev, false, &thr, 10).unwrap();
        let took = t0.elapsed();
        slowest = slowest.max(took);
        if (r.inferred_ways, r.eviction_period, r.policy_label) != (16, 16, PolicyLabel::LruLike) || took.as_secs() >= 60 {
            return Err(format!(
                "seed {seed}: ways {} period {} policy {} in {took:?}",
                r.inferred_ways,
                r.eviction_period,
                r.policy_label.as_str()
            ));
        }
    }
    Ok(format!("10/10 seeds: ways 16, period 16, LRU-like; slowest run {slowest:.2?}"))
}

fn evset_oracle_equivalence() -> Outcome {
    let mut sim = SimConfig::small().build(77).unwrap();
    let spy = sim.create_session(1).unwrap();
    sim.enable_peer_access(spy, 0).unwrap();
    let cfg = ProbeConfig::small();
    let thr = calibrated(&mut sim.session(spy), 1, 0, &cfg);
    let buf = sim.allocate(spy, 0, 256 << 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut good = 0;
    for _ in 0..100 {
        let off = rng.random_range(0..buf.length / 128) * 128;
        let (_, want) = sim.oracle_set(buf.vaddr(off)).unwrap();
        if let Ok(mut ev) = discover_eviction_set(&mut sim.session(spy), &buf, off, &thr, &cfg) {
            good += (ev.resolve(&sim) == Some(want)) as usize;
        }
    }
    let en = enumerate_unique_sets(&mut sim.session(spy), &buf, 64, &thr, &cfg).map_err(|e| e.to_string())?;
    let distinct: BTreeSet<usize> = en.sets.clone().iter_mut().filter_map(|e| e.resolve(&sim)).collect();
    let detail = format!("{good}/100 targets oracle-consistent; enumeration gave {} sets, {} distinct", en.sets.len(), distinct.len());
    if good >= 99 && en.sets.len() == 64 && distinct.len() == 64 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn four_cluster_calibration() -> Outcome {
    let mut sim = SimConfig::default().build(5).unwrap();
    let spy = sim.create_session(1).unwrap();
    sim.enable_peer_access(spy, 0).unwrap();
    let mut s = sim.session(spy);
    let thr = calibrated(&mut s, 1, 0, &ProbeConfig::default());
    let m = thr.cluster_means;
    let ordered = m.windows(2).all(|w| w[0] < w[1]);

    // 25 000 fresh lines per buffer, each loaded twice: a miss, then a hit.
    let lines = 25_000u64;
    let local = s.allocate(1, lines * 128).unwrap();
    let remote = s.allocate(0, lines * 128).unwrap();
    let (mut agree, mut total) = (0usize, 0usize);
    for buf in [&local, &remote] {
        for i in 0..lines {
            for _ in 0..2 {
                let smp = s.access(buf.vaddr(i * 128)).unwrap();
                agree += (thr.classify(smp.observed_cycles) == smp.true_class) as usize;
                total += 1;
            }
        }
    }
    let rate = agree as f64 / total as f64;
    let detail = format!("means {:.0} < {:.0} < {:.0} < {:.0}; agreement {rate:.5} over {total} fresh samples", m[0], m[1], m[2], m[3]);
    if ordered && rate >= 0.99 && total == 100_000 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn covert_correctness() -> Outcome {
    let opts = ChannelOptions::default();
    let hello = b"Hello! How are you? ";
    let clean = run_channel(hello, 1, NoiseProfile::zero(), 1, &opts).map_err(|e| e.to_string())?;
    let mut msg = vec![0u8; 125_000];
    ChaCha8Rng::seed_from_u64(99).fill_bytes(&mut msg);
    let t0 = Instant::now();
    let noisy = run_channel(&msg, 4, NoiseProfile::default(), 1, &opts).map_err(|e| e.to_string())?;
    let took = t0.elapsed();
    let detail = format!(
        "zero noise: {} bit errors; default noise 4 pairs {} bits: error rate {:.5} in {took:.1?}",
        clean.stats.bit_errors, noisy.stats.bits_sent, noisy.stats.error_rate
    );
    if clean.stats.bit_errors == 0 && noisy.stats.bits_sent == 1_000_000 && noisy.stats.error_rate <= 0.02 && took.as_secs() < 300 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn covert_trends() -> Outcome {
    let opts = ChannelOptions::default();
    let pairs = [1usize, 2, 4, 8, 16];
    let mut tput = [0.0; 5];
    let mut err = [0.0; 5];
    for seed in 1..=20u64 {
        for (i, &p) in pairs.iter().enumerate() {
            let s = run_channel(b"Hello! How are you? ", p, NoiseProfile::default(), seed, &opts)
                .map_err(|e| format!("seed {seed} pairs {p}: {e}"))?
                .stats;
            tput[i] += s.throughput_bits_per_kilocycle / 20.0;
            err[i] += s.error_rate / 20.0;
        }
    }
    let detail = format!("throughput {tput:.3?}, error rate {err:.5?}");
    if tput.windows(2).all(|w| w[0] < w[1]) && err.windows(2).all(|w| w[0] <= w[1]) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn alignment_soundness() -> Outcome {
    for seed in 1..=10u64 {
        let (accepted, truth) = common::alignment_grid(seed);
        if accepted != truth {
            return Err(format!("seed {seed}: accepted {accepted:?}, oracle {truth:?}"));
        }
    }
    Ok("10/10 seeds: accepted pairs equal the oracle same-set pairs on 16x16 grids".into())
}

fn fingerprinting() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    let rig = SpyRig::setup(cfg.rig(), cfg.seed).map_err(|e| e.to_string())?;
    let model = train_fingerprint(&rig, &cfg).map_err(|e| e.to_string())?;
    let mut accs = Vec::new();
    let mut worst_class = (String::new(), 1.0);
    for noise in [0.0, 0.1, 0.3] {
        cfg.sidechan.noise_intensity = noise;
        let cm = eval_fingerprint(&rig, &cfg, &model).map_err(|e| e.to_string())?;
        if noise == 0.0 {
            for (l, a) in cm.per_class_accuracy() {
                if a < worst_class.1 {
                    worst_class = (l, a);
                }
            }
            if cm.total() != 120 {
                return Err(format!("{} test samples", cm.total()));
            }
        }
        accs.push(cm.accuracy());
    }
    let detail = format!(
        "accuracy at noise 0/0.1/0.3: {:.3}/{:.3}/{:.3}; lowest class {} {:.2}",
        accs[0], accs[1], accs[2], if worst_class.0.is_empty() { "(none below 1)" } else { &worst_class.0 }, worst_class.1
    );
    if accs[0] >= 0.95 && worst_class.1 >= 0.90 && accs.windows(2).all(|w| w[0] >= w[1]) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mlp_extraction() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { out_dir: dir.path().to_path_buf(), ..ExperimentConfig::default() };
    let report = cmd_mlp_extract(&cfg).map_err(|e| e.to_string())?;
    let means = report.calibration.means();
    let sizes: Vec<usize> = means.iter().map(|m| m.0).collect();
    let increasing = sizes == MLP_SIZES && means.windows(2).all(|w| w[0].1 < w[1].1);

    let rig = SpyRig::setup(cfg.rig(), cfg.seed).map_err(|e| e.to_string())?;
    let run = rig
        .run(&[WorkloadSpec::new(WorkloadKind::mlp(256, 2), 5)], OccupancyPolicy::default(), 6, false)
        .map_err(|e| e.to_string())?;
    let cols: Vec<f64> = run.memorygram.column_totals().iter().map(|&c| c as f64).collect();
    let period = dominant_period(&cols, cols.len() * 3 / 4);
    let half = cols.len() / 2;

    let shown: Vec<String> = means.iter().map(|(n, m)| format!("{n}:{m:.0}")).collect();
    let detail = format!(
        "means {}; held-out accuracy {:.3} over {}; two-epoch period {period:?} of {}",
        shown.join(" < "),
        report.accuracy,
        report.estimates.len(),
        cols.len()
    );
    if increasing && report.accuracy >= 0.9 && period == Some(half) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn numa_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sequences = 10_000;
    for case in 0..sequences {
        // LRU law on a small cache against the reference.
        let (sets, ways) = (rng.random_range(1..9usize), rng.random_range(1..9usize));
        let mut l2 = L2Cache::new(CacheConfig::new(128, sets, ways), case);
        let mut reference = ReferenceLru::new(sets, ways);
        let span = (sets * ways * 3) as u64;
        for _ in 0..rng.random_range(1..200) {
            let line = rng.random_range(0..span);
            if l2.access(PhysicalAddress { gpu: 0, offset: line * 128 }) != reference.access(line) {
                return Err(format!("LRU mismatch in sequence {case}"));
            }
        }
        if (0..sets).any(|s| l2.set(s) != reference.set(s).as_slice()) {
            return Err(format!("LRU state mismatch in sequence {case}"));
        }
    }

    let mut sim = SimConfig::small().build(9).unwrap();
    let s = sim.create_session(1).unwrap();
    sim.enable_peer_access(s, 0).unwrap();
    let local = sim.allocate(s, 1, 256 << 10).unwrap();
    let remote = sim.allocate(s, 0, 1 << 20).unwrap();
    for case in 0..sequences {
        sim.flush_caches();
        for _ in 0..rng.random_range(0..64) {
            sim.access(s, local.vaddr(rng.random_range(0..local.length))).unwrap();
        }
        let before = sim.oracle_cache(1).clone();
        for _ in 0..rng.random_range(1..64) {
            sim.access(s, remote.vaddr(rng.random_range(0..remote.length))).unwrap();
            if sim.oracle_cache(1) != &before {
                return Err(format!("remote access changed the local L2 in sequence {case}"));
            }
        }
    }
    Ok(format!("{sequences} LRU sequences match the reference; {sequences} remote sequences left the local L2 unchanged"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let commands: [&[&str]; 7] = [
        &["calibrate"],
        &["discover"],
        &["covert"],
        &["memorygram"],
        &["fingerprint", "train"],
        &["fingerprint", "eval"],
        &["mlp-extract"],
    ];
    let mut runs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for r in 0..3 {
        let out = dir.path().join(format!("run{r}"));
        for args in commands {
            let status = Command::new(env!("CARGO_BIN_EXE_gpuleak"))
                .args(args)
                .args(["--seed", "2", "--out-dir"])
                .arg(&out)
                .stdout(std::process::Stdio::null())
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("{args:?} exited with {status}"));
            }
        }
        runs.push(read_dir_sorted(&out));
    }
    let files = runs[0].len();
    for (i, r) in runs.iter().enumerate().skip(1) {
        if r != &runs[0] {
            return Err(format!("run {i} differs from run 0"));
        }
    }
    Ok(format!("7 subcommands x 3 runs: {files} output files byte-identical"))
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 cache geometry recovery", geometry_recovery),
        ("2 eviction-set oracle equivalence", evset_oracle_equivalence),
        ("3 four-cluster calibration", four_cluster_calibration),
        ("4 covert channel correctness", covert_correctness),
        ("5 covert channel trends", covert_trends),
        ("6 alignment soundness", alignment_soundness),
        ("7 fingerprinting", fingerprinting),
        ("8 MLP extraction", mlp_extraction),
        ("9 NUMA invariant suite", numa_invariants),
        ("10 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{:.1?}]", t0.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{:.1?}]", t0.elapsed());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
