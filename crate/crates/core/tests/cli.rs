use std::path::Path;
use std::process::Command;

use gpuleak::cli::{CalibrateReport, DiscoverReport, EvalReport, REPORT_SCHEMA_VERSION};

fn gpuleak(dir: &Path, config: &str, args: &[&str]) -> (i32, String) {
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gpuleak"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_config_key_exits_1() {
    let d = tempfile::tempdir().unwrap();
    let (code, err) = gpuleak(d.path(), "[covert]\npair_count = 3\n", &["covert"]);
    assert_eq!(code, 1);
    assert!(err.contains("pair_count"), "{err}");
}

#[test]
fn noiseless_calibration_reports_exact_midpoints() {
    let d = tempfile::tempdir().unwrap();
    let (code, err) = gpuleak(d.path(), "seed = 12\n", &["calibrate", "--noise", "0"]);
    assert_eq!(code, 0, "{err}");
    let r: CalibrateReport = read_json(&d.path().join("out/calibration.json"));
    assert_eq!((r.schema_version, r.seed), (REPORT_SCHEMA_VERSION, 12));
    assert_eq!(r.thresholds.boundaries, [370.0, 560.0, 750.0]);
    assert_eq!(r.oracle_agreement, 1.0);
    let hist = std::fs::read_to_string(d.path().join("out/latency_histogram.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("cycles,count,true_class"));
    // Four distinct latencies, one per class.
    assert_eq!(hist.lines().count(), 5);
}

#[test]
fn swamped_calibration_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let (code, err) = gpuleak(d.path(), "", &["calibrate", "--noise", "12"]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn discover_reuses_calibration_thresholds() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(gpuleak(d.path(), "", &["calibrate"]).0, 0);
    let cal: CalibrateReport = read_json(&d.path().join("out/calibration.json"));
    let cfg = format!("[discover]\nthresholds_file = {:?}\n", d.path().join("out/calibration.json"));
    let (code, err) = gpuleak(d.path(), &cfg, &["discover"]);
    assert_eq!(code, 0, "{err}");
    let r: DiscoverReport = read_json(&d.path().join("out/discover.json"));
    assert_eq!(r.thresholds, cal.thresholds);
    assert_eq!(r.sets[0].members.len(), 16);
    assert_eq!((r.policy.inferred_ways, r.policy.eviction_period), (16, 16));
    let curve = std::fs::read_to_string(d.path().join("out/validation_curve.csv")).unwrap();
    let misses: Vec<&str> = curve.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(misses.iter().position(|&m| m == "1"), Some(15));
}

#[test]
fn zero_search_budget_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let (code, err) = gpuleak(d.path(), "[probe]\nsearch_budget = 0\n", &["discover"]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn unreachable_alignment_margin_exits_4() {
    let d = tempfile::tempdir().unwrap();
    let (code, err) = gpuleak(d.path(), "[covert.alignment]\nmargin_cycles = 1e9\n", &["covert", "--pairs", "1"]);
    assert_eq!(code, 4, "{err}");
}

#[test]
fn covert_sweep_writes_one_row_per_pair_count() {
    let d = tempfile::tempdir().unwrap();
    let (code, err) = gpuleak(d.path(), "", &["covert", "--pairs", "1,2", "--noise", "0"]);
    assert_eq!(code, 0, "{err}");
    let sweep = std::fs::read_to_string(d.path().join("out/covert_sweep.csv")).unwrap();
    assert_eq!(
        sweep,
        "pairs,throughput_bits_per_kilocycle,error_rate,bit_errors,bits_sent\n\
         1,0.025000,0.000000,0,160\n2,0.050000,0.000000,0,160\n"
    );
    let slots = std::fs::read_to_string(d.path().join("out/covert_slots_p2.csv")).unwrap();
    assert_eq!(slots.lines().count(), 161);
}

#[test]
fn too_few_training_runs_exit_5() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "[sidechan.fingerprint]\ntrain_per_label = 2\nlabels = [\"matmul\", \"walsh\"]\n";
    let (code, err) = gpuleak(d.path(), cfg, &["fingerprint", "train"]);
    assert_eq!(code, 5, "{err}");
}

#[test]
fn empty_mlp_calibration_exits_6() {
    let d = tempfile::tempdir().unwrap();
    let (code, err) = gpuleak(d.path(), "[sidechan.mlp]\ncalibration_runs = 0\n", &["mlp-extract"]);
    assert_eq!(code, 6, "{err}");
}

#[test]
fn single_label_fingerprint_is_trivially_perfect() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "[sidechan.fingerprint]\nlabels = [\"histogram\"]\ntrain_per_label = 5\ntest_per_label = 3\n";
    assert_eq!(gpuleak(d.path(), cfg, &["fingerprint", "train"]).0, 0);
    assert_eq!(gpuleak(d.path(), cfg, &["fingerprint", "eval"]).0, 0);
    let r: EvalReport = read_json(&d.path().join("out/fingerprint_report.json"));
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.confusion.counts, vec![vec![3]]);
}

#[test]
fn default_labels_give_a_six_by_six_confusion_matrix() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "[sidechan.fingerprint]\ntrain_per_label = 5\ntest_per_label = 2\n";
    assert_eq!(gpuleak(d.path(), cfg, &["fingerprint", "train"]).0, 0);
    assert_eq!(gpuleak(d.path(), cfg, &["fingerprint", "eval"]).0, 0);
    let csv = std::fs::read_to_string(d.path().join("out/confusion_matrix.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.len() == 7));
    assert_eq!(rows[0][0], "true_label");
}

#[test]
fn memorygram_output_is_byte_identical_across_runs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "[workload]\nkind = \"histogram\"\nseed = 4\n";
    let mut outputs = Vec::new();
    for _ in 0..2 {
        assert_eq!(gpuleak(d.path(), cfg, &["memorygram"]).0, 0);
        let files: Vec<Vec<u8>> = ["memorygram.csv", "memorygram.pgm", "memorygram.json"]
            .iter()
            .map(|f| std::fs::read(d.path().join("out").join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}
