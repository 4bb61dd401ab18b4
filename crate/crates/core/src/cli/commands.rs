use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{app_kind, ExperimentConfig};
use super::CliError;
use crate::covert::{run_channel, ChannelStats};
use crate::probe::{
    calibrate_latencies, discover_eviction_set, measure_associativity, validation_curve, EvictionSet,
    EvictionSetFile, LatencyThresholds, PolicyReport, ProbeConfig,
};
use crate::sidechan::{
    estimate_hidden_neurons, feature_weights, memorygram_features, ConfusionMatrix, FingerprintModel, Memorygram,
    NeuronCalibration, NeuronEstimate, SpyRig,
};
use crate::simcore::{derive_seed, AccessClass};
use crate::workloads::{OccupancyPolicy, WorkloadKind, WorkloadSpec};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

const TRAIN_STREAM: u64 = 0xf1_0000;
const TEST_STREAM: u64 = 0xf2_0000;
const MLP_CAL_STREAM: u64 = 0xa1_0000;
const MLP_HELDOUT_STREAM: u64 = 0xa2_0000;
const MEMORYGRAM_STREAM: u64 = 0x3e_0000;
const MESSAGE_STREAM: u64 = 0x4d_5347;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateReport {
    pub schema_version: u32,
    pub seed: u64,
    pub samples: usize,
    pub thresholds: LatencyThresholds,
    /// Share of samples whose threshold class equals the simulator's ground truth.
    pub oracle_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverReport {
    pub schema_version: u32,
    pub seed: u64,
    pub thresholds: LatencyThresholds,
    /// Measured on the first set.
    pub policy: PolicyReport,
    pub sets: Vec<EvictionSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovertRunReport {
    pub stats: ChannelStats,
    pub aligned_pairs: usize,
    pub decoded_message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovertReport {
    pub schema_version: u32,
    pub seed: u64,
    pub message_bytes: usize,
    pub runs: Vec<CovertRunReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorygramReport {
    pub schema_version: u32,
    pub seed: u64,
    pub victims: Vec<WorkloadSpec>,
    pub num_sets: usize,
    pub num_epochs: usize,
    pub epoch_cycles: u64,
    pub start_cycle: u64,
    pub total_misses: u64,
    pub victim_accesses: u64,
    pub row_totals: Vec<u64>,
    pub column_totals: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub schema_version: u32,
    pub seed: u64,
    pub labels: Vec<String>,
    pub train_per_label: usize,
    pub noise_intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub seed: u64,
    pub test_per_label: usize,
    pub noise_intensity: f64,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<(String, f64)>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutEstimate {
    pub true_neurons: usize,
    pub estimate: NeuronEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpReport {
    pub schema_version: u32,
    pub seed: u64,
    pub calibration: NeuronCalibration,
    pub estimates: Vec<HeldOutEstimate>,
    pub accuracy: f64,
}

/// Maps `f` over `items` on scoped worker threads; results keep input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker thread panicked")).collect()
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?))
}

fn write_with<F>(dir: &Path, name: &str, f: F) -> Result<PathBuf, CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let path = dir.join(name);
    let mut w = create(dir, name)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    write_with(dir, name, |w| writeln!(w, "{text}"))
}

/// Calibrates the four latency classes and writes `calibration.json` and
/// `latency_histogram.csv` (`cycles,count,true_class`).
pub fn cmd_calibrate(cfg: &ExperimentConfig) -> Result<CalibrateReport, CliError> {
    let c = &cfg.calibrate;
    let mut sim = cfg.noisy_sim().build(cfg.seed)?;
    let sid = sim.create_session(c.gpu)?;
    sim.enable_peer_access(sid, c.peer_gpu)?;
    let probe = ProbeConfig { seed: cfg.seed, ..cfg.probe.clone() };
    let reps = probe.kernel_repeats.max(1) as u64;
    let bytes = (c.samples_per_class as u64).div_ceil(reps) * reps * probe.stride_bytes.max(1);
    let mut s = sim.session(sid);
    let local = s.allocate(c.gpu, bytes)?;
    let remote = s.allocate(c.peer_gpu, bytes)?;
    let cal = calibrate_latencies(&mut s, &local, &remote, c.samples_per_class, &probe)?;

    let mut hist: BTreeMap<(u64, AccessClass), u64> = BTreeMap::new();
    let mut agree = 0usize;
    for smp in &cal.samples {
        *hist.entry((smp.observed_cycles, smp.true_class)).or_default() += 1;
        agree += (cal.thresholds.classify(smp.observed_cycles) == smp.true_class) as usize;
    }
    let report = CalibrateReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: cfg.seed,
        samples: cal.samples.len(),
        thresholds: cal.thresholds,
        oracle_agreement: agree as f64 / cal.samples.len().max(1) as f64,
    };
    write_json(&cfg.out_dir, "calibration.json", &report)?;
    write_with(&cfg.out_dir, "latency_histogram.csv", |w| {
        writeln!(w, "cycles,count,true_class")?;
        for ((cycles, class), n) in &hist {
            writeln!(w, "{cycles},{n},{}", class.name())?;
        }
        Ok(())
    })?;
    Ok(report)
}

/// Reads the thresholds out of a `calibration.json`.
pub fn load_thresholds(path: &Path) -> Result<LatencyThresholds, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let r: CalibrateReport =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if r.schema_version != REPORT_SCHEMA_VERSION || !r.thresholds.is_valid() {
        return Err(CliError::Config(format!("{}: unusable calibration report", path.display())));
    }
    Ok(r.thresholds)
}

/// Finds eviction sets for consecutive lines of a remote buffer, measures
/// the replacement behaviour on the first, and writes `discover.json`,
/// `eviction_sets.json` and `validation_curve.csv` (`k,cycles,miss`).
pub fn cmd_discover(cfg: &ExperimentConfig) -> Result<DiscoverReport, CliError> {
    let d = &cfg.discover;
    let gpu = cfg.calibrate.gpu;
    let mut sim = cfg.noisy_sim().build(cfg.seed)?;
    let sid = sim.create_session(gpu)?;
    sim.enable_peer_access(sid, d.target_gpu)?;
    let probe = ProbeConfig { seed: cfg.seed, ..cfg.probe.clone() };
    let mut s = sim.session(sid);

    let thresholds = match &d.thresholds_file {
        Some(path) => load_thresholds(path)?,
        None => {
            let n = cfg.calibrate.samples_per_class;
            let reps = probe.kernel_repeats.max(1) as u64;
            let bytes = (n as u64).div_ceil(reps) * reps * probe.stride_bytes.max(1);
            let local = s.allocate(gpu, bytes)?;
            let remote = s.allocate(cfg.calibrate.peer_gpu, bytes)?;
            calibrate_latencies(&mut s, &local, &remote, n, &probe)?.thresholds
        }
    };

    let buf = s.allocate(d.target_gpu, d.buffer_bytes)?;
    let local = s.is_local(&buf);
    let mut sets = Vec::with_capacity(d.num_sets);
    for i in 0..d.num_sets as u64 {
        let off = d.target_offset + i * probe.stride_bytes;
        sets.push(discover_eviction_set(&mut s, &buf, off, &thresholds, &probe)?);
    }
    let first = sets
        .first()
        .ok_or_else(|| CliError::Config("discover.num_sets must be at least 1".into()))?;
    let policy = measure_associativity(&mut s, first, local, &thresholds, d.associativity_trials.max(1))?;
    let curve = validation_curve(&mut s, first, d.curve_max_k)?;

    let report = DiscoverReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: cfg.seed,
        thresholds: thresholds.clone(),
        policy,
        sets: sets.clone(),
    };
    write_json(&cfg.out_dir, "discover.json", &report)?;
    let file = EvictionSetFile::new(sets).to_json();
    write_with(&cfg.out_dir, "eviction_sets.json", |w| writeln!(w, "{file}"))?;
    write_with(&cfg.out_dir, "validation_curve.csv", |w| {
        writeln!(w, "k,cycles,miss")?;
        for (k, cycles) in &curve {
            writeln!(w, "{k},{cycles},{}", thresholds.is_miss(*cycles, local) as u8)?;
        }
        Ok(())
    })?;
    Ok(report)
}

/// The configured message, or the seeded random one.
pub fn covert_message(cfg: &ExperimentConfig) -> Vec<u8> {
    match cfg.covert.random_message_bytes {
        Some(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, MESSAGE_STREAM, 0));
            let mut m = vec![0u8; n];
            rng.fill_bytes(&mut m);
            m
        }
        None => cfg.covert.message.as_bytes().to_vec(),
    }
}

/// Runs the channel once per configured pair count and writes
/// `covert.json`, `covert_sweep.csv` and one `covert_slots_p<P>.csv` each.
pub fn cmd_covert(cfg: &ExperimentConfig) -> Result<CovertReport, CliError> {
    let message = covert_message(cfg);
    let opts = cfg.channel_options();
    let results = par_map(&cfg.covert.pairs, |&p| run_channel(&message, p, cfg.noise, cfg.seed, &opts));
    let mut runs = Vec::with_capacity(results.len());
    let mut txs = Vec::with_capacity(results.len());
    for r in results {
        let r = r?;
        runs.push(CovertRunReport {
            stats: r.stats.clone(),
            aligned_pairs: r.alignment.pairs.len(),
            decoded_message: String::from_utf8_lossy(&r.decoded_message).into_owned(),
        });
        txs.push((r.stats.pairs, r.transmission));
    }
    let report = CovertReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: cfg.seed,
        message_bytes: message.len(),
        runs,
    };
    write_json(&cfg.out_dir, "covert.json", &report)?;
    write_with(&cfg.out_dir, "covert_sweep.csv", |w| {
        writeln!(w, "pairs,throughput_bits_per_kilocycle,error_rate,bit_errors,bits_sent")?;
        for r in &report.runs {
            let s = &r.stats;
            writeln!(
                w,
                "{},{:.6},{:.6},{},{}",
                s.pairs, s.throughput_bits_per_kilocycle, s.error_rate, s.bit_errors, s.bits_sent
            )?;
        }
        Ok(())
    })?;
    for (p, tx) in &txs {
        write_with(&cfg.out_dir, &format!("covert_slots_p{p}.csv"), |w| tx.write_csv(w))?;
    }
    Ok(report)
}

fn victims(cfg: &ExperimentConfig, spec: WorkloadSpec, noise_seed: u64) -> Vec<WorkloadSpec> {
    let mut v = vec![spec];
    let intensity = cfg.sidechan.noise_intensity;
    if intensity > 0.0 {
        v.push(WorkloadSpec::new(WorkloadKind::Noise { intensity }, noise_seed));
    }
    v
}

fn policy(cfg: &ExperimentConfig) -> OccupancyPolicy {
    OccupancyPolicy { exclusive: cfg.sidechan.exclusive }
}

/// One monitored run of `spec` (re-seeded from `stream` and `index`).
fn sample(
    rig: &SpyRig,
    cfg: &ExperimentConfig,
    kind: &WorkloadKind,
    stream: u64,
    index: u64,
) -> Result<Memorygram, CliError> {
    let spec = WorkloadSpec::new(kind.clone(), derive_seed(cfg.seed, stream, 3 * index));
    let v = victims(cfg, spec, derive_seed(cfg.seed, stream, 3 * index + 1));
    let run = rig.run(&v, policy(cfg), derive_seed(cfg.seed, stream, 3 * index + 2), false)?;
    Ok(run.memorygram)
}

/// Monitors the `[workload]` victim and writes `memorygram.csv`,
/// `memorygram.pgm` and `memorygram.json`.
pub fn cmd_memorygram(cfg: &ExperimentConfig) -> Result<(MemorygramReport, Memorygram), CliError> {
    let rig = SpyRig::setup(cfg.rig(), cfg.seed)?;
    let v = victims(cfg, cfg.workload.clone(), derive_seed(cfg.seed, MEMORYGRAM_STREAM, 1));
    let run = rig.run(&v, policy(cfg), derive_seed(cfg.seed, MEMORYGRAM_STREAM, 2), false)?;
    let mg = run.memorygram;
    let report = MemorygramReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: cfg.seed,
        victims: v,
        num_sets: mg.num_sets(),
        num_epochs: mg.num_epochs(),
        epoch_cycles: mg.epoch_cycles,
        start_cycle: mg.start_cycle,
        total_misses: mg.total(),
        victim_accesses: run.victim_accesses,
        row_totals: mg.row_totals(),
        column_totals: mg.column_totals(),
    };
    write_json(&cfg.out_dir, "memorygram.json", &report)?;
    write_with(&cfg.out_dir, "memorygram.csv", |w| mg.write_csv(w))?;
    write_with(&cfg.out_dir, "memorygram.pgm", |w| mg.write_pgm(w))?;
    Ok((report, mg))
}

fn labelled_features(
    rig: &SpyRig,
    cfg: &ExperimentConfig,
    per_label: usize,
    stream: u64,
) -> Result<Vec<(String, Vec<f64>)>, CliError> {
    let jobs: Vec<(usize, &String, u64)> = cfg
        .sidechan
        .fingerprint
        .labels
        .iter()
        .enumerate()
        .flat_map(|(li, l)| (0..per_label as u64).map(move |i| (li, l, i)))
        .collect();
    par_map(&jobs, |&(li, label, i)| {
        let kind = app_kind(label).ok_or_else(|| CliError::Config(format!("unknown label `{label}`")))?;
        let mg = sample(rig, cfg, &kind, stream + li as u64, i)?;
        Ok((label.clone(), memorygram_features(&mg)))
    })
    .into_iter()
    .collect()
}

fn model_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.sidechan.fingerprint.model_file.clone().unwrap_or_else(|| cfg.out_dir.join("model.json"))
}

/// Trains a fingerprint model from a configured spy rig.
pub fn train_fingerprint(rig: &SpyRig, cfg: &ExperimentConfig) -> Result<FingerprintModel, CliError> {
    let train = labelled_features(rig, cfg, cfg.sidechan.fingerprint.train_per_label, TRAIN_STREAM)?;
    Ok(FingerprintModel::train_weighted(&train, &feature_weights(rig.sets.len()))?)
}

/// Classifies fresh test runs with `model`.
pub fn eval_fingerprint(rig: &SpyRig, cfg: &ExperimentConfig, model: &FingerprintModel) -> Result<ConfusionMatrix, CliError> {
    let test = labelled_features(rig, cfg, cfg.sidechan.fingerprint.test_per_label, TEST_STREAM)?;
    let mut cm = ConfusionMatrix::new(model.labels.clone());
    for (truth, f) in &test {
        cm.record(truth, &model.classify(f)?.label);
    }
    Ok(cm)
}

/// Writes `model.json` (or `sidechan.fingerprint.model_file`) and
/// `fingerprint_train.json`.
pub fn cmd_fingerprint_train(cfg: &ExperimentConfig) -> Result<FingerprintModel, CliError> {
    let rig = SpyRig::setup(cfg.rig(), cfg.seed)?;
    let model = train_fingerprint(&rig, cfg)?;
    let path = model_path(cfg);
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "model.json".into());
    let json = model.to_json();
    write_with(&dir, &name, |w| writeln!(w, "{json}"))?;
    let report = TrainReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: cfg.seed,
        labels: model.labels.clone(),
        train_per_label: cfg.sidechan.fingerprint.train_per_label,
        noise_intensity: cfg.sidechan.noise_intensity,
    };
    write_json(&cfg.out_dir, "fingerprint_train.json", &report)?;
    Ok(model)
}

/// Reads the trained model and writes `fingerprint_report.json` and
/// `confusion_matrix.csv`.
pub fn cmd_fingerprint_eval(cfg: &ExperimentConfig) -> Result<EvalReport, CliError> {
    let path = model_path(cfg);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let model = FingerprintModel::from_json(&text)?;
    let rig = SpyRig::setup(cfg.rig(), cfg.seed)?;
    let cm = eval_fingerprint(&rig, cfg, &model)?;
    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: cfg.seed,
        test_per_label: cfg.sidechan.fingerprint.test_per_label,
        noise_intensity: cfg.sidechan.noise_intensity,
        accuracy: cm.accuracy(),
        per_class_accuracy: cm.per_class_accuracy(),
        confusion: cm,
    };
    write_json(&cfg.out_dir, "fingerprint_report.json", &report)?;
    write_with(&cfg.out_dir, "confusion_matrix.csv", |w| report.confusion.write_csv(w))?;
    Ok(report)
}

/// Calibrates miss totals per hidden size, estimates held-out runs, and
/// writes `mlp_calibration.csv` (`neurons,run,total_misses`) and
/// `mlp_estimate.json`.
pub fn cmd_mlp_extract(cfg: &ExperimentConfig) -> Result<MlpReport, CliError> {
    let m = &cfg.sidechan.mlp;
    let rig = SpyRig::setup(cfg.rig(), cfg.seed)?;
    let jobs = |runs: usize| -> Vec<(usize, u64)> {
        m.sizes.iter().flat_map(|&n| (0..runs as u64).map(move |i| (n, i))).collect()
    };
    let total = |stream: u64, &(n, i): &(usize, u64)| -> Result<Memorygram, CliError> {
        sample(&rig, cfg, &WorkloadKind::mlp(n, m.epochs), stream + n as u64, i)
    };

    let cal_jobs = jobs(m.calibration_runs);
    let cal_runs = par_map(&cal_jobs, |j| total(MLP_CAL_STREAM, j));
    let mut calibration = NeuronCalibration::new();
    let mut rows = Vec::with_capacity(cal_jobs.len());
    for (&(n, i), mg) in cal_jobs.iter().zip(cal_runs) {
        let t = mg?.total();
        calibration.add(n, t);
        rows.push((n, i, t));
    }
    write_with(&cfg.out_dir, "mlp_calibration.csv", |w| {
        writeln!(w, "neurons,run,total_misses")?;
        for (n, i, t) in &rows {
            writeln!(w, "{n},{i},{t}")?;
        }
        Ok(())
    })?;
    if calibration.is_empty() {
        return Err(crate::sidechan::SideChanError::EmptyCalibration.into());
    }

    let held_jobs = jobs(m.heldout_runs);
    let held_runs = par_map(&held_jobs, |j| total(MLP_HELDOUT_STREAM, j));
    let mut estimates = Vec::with_capacity(held_jobs.len());
    for (&(n, _), mg) in held_jobs.iter().zip(held_runs) {
        estimates.push(HeldOutEstimate { true_neurons: n, estimate: estimate_hidden_neurons(&mg?, &calibration)? });
    }
    let correct = estimates.iter().filter(|e| e.estimate.estimated_neurons == e.true_neurons).count();
    let report = MlpReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: cfg.seed,
        calibration,
        accuracy: correct as f64 / estimates.len().max(1) as f64,
        estimates,
    };
    write_json(&cfg.out_dir, "mlp_estimate.json", &report)?;
    Ok(report)
}
