mod common;

use gpuleak::cli::{cmd_memorygram, ExperimentConfig};
use gpuleak::covert::NoiseProfile;
use gpuleak::probe::EvictionSet;
use gpuleak::sidechan::{
    collect_memorygram, feature_weights, memorygram_features, CollectParams, FingerprintModel, RigConfig, SpyRig,
};
use gpuleak::simcore::{Agent, AccessClass, LatencyModel, Op, ScriptedProgram, SimConfig};
use gpuleak::workloads::{OccupancyPolicy, WorkloadKind, WorkloadSpec};

fn quiet_rig() -> SpyRig {
    let cfg = RigConfig { noise: NoiseProfile::zero(), ..RigConfig::default() };
    SpyRig::setup(cfg, 3).unwrap()
}

#[test]
fn memorygram_counts_equal_traced_probe_misses_at_zero_noise() {
    let rig = quiet_rig();
    let victim = WorkloadSpec::new(WorkloadKind::VectorAdd, 8);
    let run = rig.run(&[victim], OccupancyPolicy::default(), 4, true).unwrap();
    let trace = run.trace.unwrap();
    let mg = &run.memorygram;
    assert!(mg.total() > 0);
    for (i, set) in rig.sets.iter().enumerate() {
        // The first pass primes; every later access is a probe.
        let misses = trace
            .for_agent(i)
            .skip(set.members.len())
            .filter(|r| r.sample.true_class == AccessClass::RemoteDram)
            .count() as u64;
        assert_eq!(mg.row_totals()[i], misses, "set {i}");
    }
}

#[test]
fn idle_victim_leaves_a_blank_memorygram() {
    let run = quiet_rig().run(&[WorkloadSpec::new(WorkloadKind::Idle, 1)], OccupancyPolicy::default(), 2, false).unwrap();
    assert_eq!(run.memorygram.total(), 0);
    assert_eq!(run.victim_accesses, 0);
    let mut pgm = Vec::new();
    run.memorygram.write_pgm(&mut pgm).unwrap();
    assert!(pgm[b"P5\n64 128\n255\n".len()..].iter().all(|&p| p == 0));
}

#[test]
fn single_set_victim_lights_a_single_row() {
    let cfg = SimConfig::default().with_latency(LatencyModel::default().scaled(0.0, 0.0));
    let mut sim = cfg.build(6).unwrap();
    let spy = sim.create_session(1).unwrap();
    sim.enable_peer_access(spy, 0).unwrap();
    let spy_buf = sim.allocate(spy, 0, 16 << 20).unwrap();
    let victim = sim.create_session(0).unwrap();
    let victim_buf = sim.allocate(victim, 0, 16 << 20).unwrap();

    let watched = [100usize, 700, 1300, 1900];
    let sets: Vec<EvictionSet> = watched.iter().map(|&s| common::oracle_evset(&sim, &spy_buf, 128, s, 16)).collect();
    let spies: Vec<_> = watched.iter().map(|_| sim.fork_session(spy).unwrap()).collect();

    let epoch = 50_000;
    let start = 100_000;
    let lines = common::lines_in_set(&sim, &victim_buf, 128, 1300, 0, 16);
    let mut ops = vec![Op::WaitUntil(start)];
    for e in 0..8u64 {
        ops.push(Op::WaitUntil(start + e * epoch + epoch / 2));
        ops.extend(lines.iter().map(|&a| Op::Access(a)));
    }
    let mut prog = ScriptedProgram::new(ops);
    let mut others = [Agent::new(victim, &mut prog)];
    let params = CollectParams { start_cycle: start, num_epochs: 8, epoch_cycles: epoch, miss_threshold: 750.0, trace: false };
    let (mg, _) = collect_memorygram(&mut sim, &spies, &sets, &mut others, &params).unwrap();

    assert_eq!(mg.counts[2], vec![16; 8]);
    for row in [0, 1, 3] {
        assert!(mg.counts[row].iter().all(|&c| c == 0), "row {row}: {:?}", mg.counts[row]);
    }
}

#[test]
fn matmul_and_vectoradd_images_differ_in_a_tenth_of_cells() {
    let dir = tempfile::tempdir().unwrap();
    let mut images = Vec::new();
    for kind in [WorkloadKind::MatMul, WorkloadKind::VectorAdd] {
        let cfg = ExperimentConfig {
            out_dir: dir.path().join(kind.name()),
            workload: WorkloadSpec::new(kind, 0),
            ..ExperimentConfig::default()
        };
        cmd_memorygram(&cfg).unwrap();
        images.push(std::fs::read(cfg.out_dir.join("memorygram.pgm")).unwrap());
    }
    assert_eq!(images[0].len(), images[1].len());
    let header = b"P5\n64 128\n255\n".len();
    let cells = images[0].len() - header;
    let differing = images[0][header..].iter().zip(&images[1][header..]).filter(|(a, b)| a != b).count();
    assert!(differing * 10 >= cells, "{differing} of {cells} cells differ");
}

/// Centroid distances between applications exceed each class's spread.
#[test]
fn application_signatures_are_separated() {
    let rig = SpyRig::setup(RigConfig::default(), 21).unwrap();
    let mut samples = Vec::new();
    for kind in WorkloadKind::APPS {
        for i in 0..20u64 {
            let r = rig.run(&[WorkloadSpec::new(kind.clone(), 40 + i)], OccupancyPolicy::default(), 90 + i, false).unwrap();
            samples.push((kind.name().to_string(), memorygram_features(&r.memorygram)));
        }
    }
    let m = FingerprintModel::train_weighted(&samples, &feature_weights(rig.sets.len())).unwrap();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(&m.weights).map(|((x, y), w)| w * (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let z = |v: &[f64]| -> Vec<f64> { v.iter().zip(&m.mean).zip(&m.scale).map(|((x, mu), s)| (x - mu) / s).collect() };

    // Root-mean-square distance of a class's samples to its own centroid.
    let spread: Vec<f64> = m
        .labels
        .iter()
        .zip(&m.centroids)
        .map(|(label, c)| {
            let d2: Vec<f64> = samples.iter().filter(|(l, _)| l == label).map(|(_, v)| dist(&z(v), c).powi(2)).collect();
            (d2.iter().sum::<f64>() / d2.len() as f64).sqrt()
        })
        .collect();
    for i in 0..m.labels.len() {
        for j in i + 1..m.labels.len() {
            let d = dist(&m.centroids[i], &m.centroids[j]);
            assert!(d > spread[i].max(spread[j]), "{} vs {}: {d:.3} within spread", m.labels[i], m.labels[j]);
        }
    }
}
