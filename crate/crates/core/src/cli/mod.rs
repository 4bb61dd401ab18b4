//! The `gpuleak` experiment driver: subcommands, config loading and exit
//! codes. The binary only parses arguments and calls [`run`].
//!
//! | exit | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | bad config or flags, I/O failure, other errors |
//! | 2 | latency calibration failed |
//! | 3 | an eviction set could not be completed |
//! | 4 | covert-channel sets could not be aligned |
//! | 5 | too little fingerprint training data |
//! | 6 | empty MLP calibration |

mod commands;
pub mod config;

pub use commands::{
    cmd_calibrate, cmd_covert, cmd_discover, cmd_fingerprint_eval, cmd_fingerprint_train, cmd_memorygram,
    cmd_mlp_extract, covert_message, eval_fingerprint, load_thresholds, par_map, train_fingerprint, CalibrateReport,
    CovertReport, CovertRunReport, DiscoverReport, EvalReport, HeldOutEstimate, MemorygramReport, MlpReport,
    TrainReport, REPORT_SCHEMA_VERSION,
};
pub use config::{ExperimentConfig, Overrides};

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::covert::CovertError;
use crate::probe::ProbeError;
use crate::sidechan::SideChanError;
use crate::simcore::SimError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Covert(#[from] CovertError),
    #[error(transparent)]
    SideChan(#[from] SideChanError),
}

impl CliError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), message: e.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        fn probe(e: &ProbeError) -> i32 {
            match e {
                ProbeError::CalibrationFailed(_) => 2,
                ProbeError::IncompleteSet { .. } => 3,
                _ => 1,
            }
        }
        match self {
            CliError::Probe(e) | CliError::Covert(CovertError::Probe(e)) | CliError::SideChan(SideChanError::Probe(e)) => {
                probe(e)
            }
            CliError::Covert(CovertError::AlignmentFailed { .. }) => 4,
            CliError::SideChan(SideChanError::NotEnoughSets { .. }) => 3,
            CliError::SideChan(SideChanError::TrainingDataInsufficient { .. }) => 5,
            CliError::SideChan(SideChanError::EmptyCalibration) => 6,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gpuleak", version, about = "Multi-GPU L2 cache side-channel experiments on a simulated node")]
pub struct Cli {
    /// TOML experiment file; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Pair counts for `covert`, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub pairs: Option<Vec<usize>>,
    /// Noise scale: 0 is a noiseless node, 1 the default spread and contention.
    #[arg(long, global = true)]
    pub noise: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FingerprintMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Cluster local and remote access latencies into hit/miss thresholds.
    Calibrate,
    /// Find eviction sets and measure associativity and replacement.
    Discover,
    /// Sweep the covert channel over pair counts.
    Covert,
    /// Record a memorygram of the `[workload]` victim.
    Memorygram,
    /// Train or evaluate the application fingerprint classifier.
    Fingerprint {
        #[arg(value_enum)]
        mode: FingerprintMode,
    },
    /// Estimate an MLP's hidden-layer size from its miss totals.
    MlpExtract,
}

impl Cli {
    /// File (or defaults) with the flags applied, validated.
    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            out_dir: self.out_dir.clone(),
            pairs: self.pairs.clone(),
            noise: self.noise,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one subcommand and returns a one-line summary.
pub fn execute(command: Command, cfg: &ExperimentConfig) -> Result<String, CliError> {
    let out = cfg.out_dir.display();
    Ok(match command {
        Command::Calibrate => {
            let r = cmd_calibrate(cfg)?;
            let m = r.thresholds.cluster_means;
            format!(
                "calibrate seed={}: cluster means {:.0}/{:.0}/{:.0}/{:.0}, oracle agreement {:.4} -> {out}",
                r.seed, m[0], m[1], m[2], m[3], r.oracle_agreement
            )
        }
        Command::Discover => {
            let r = cmd_discover(cfg)?;
            format!(
                "discover seed={}: {} set(s), ways={} period={} policy={} -> {out}",
                r.seed,
                r.sets.len(),
                r.policy.inferred_ways,
                r.policy.eviction_period,
                r.policy.policy_label.as_str()
            )
        }
        Command::Covert => {
            let r = cmd_covert(cfg)?;
            let rows: Vec<String> = r
                .runs
                .iter()
                .map(|x| format!("P={} {:.3} b/kc err={:.4}", x.stats.pairs, x.stats.throughput_bits_per_kilocycle, x.stats.error_rate))
                .collect();
            format!("covert seed={}: {} -> {out}", r.seed, rows.join(", "))
        }
        Command::Memorygram => {
            let (r, _) = cmd_memorygram(cfg)?;
            format!(
                "memorygram seed={}: {}x{} cells, {} misses -> {out}",
                r.seed, r.num_sets, r.num_epochs, r.total_misses
            )
        }
        Command::Fingerprint { mode: FingerprintMode::Train } => {
            let m = cmd_fingerprint_train(cfg)?;
            format!("fingerprint train seed={}: {} labels -> {out}", cfg.seed, m.labels.len())
        }
        Command::Fingerprint { mode: FingerprintMode::Eval } => {
            let r = cmd_fingerprint_eval(cfg)?;
            format!("fingerprint eval seed={}: accuracy {:.4} -> {out}", r.seed, r.accuracy)
        }
        Command::MlpExtract => {
            let r = cmd_mlp_extract(cfg)?;
            format!("mlp-extract seed={}: held-out accuracy {:.4} -> {out}", r.seed, r.accuracy)
        }
    })
}

/// Parses nothing itself: takes parsed arguments, returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let result = cli.experiment().and_then(|cfg| execute(cli.command, &cfg));
    match result {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("gpuleak: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_table() {
        let cases: Vec<(CliError, i32)> = vec![
            (CliError::Config("x".into()), 1),
            (ProbeError::CalibrationFailed("x".into()).into(), 2),
            (ProbeError::IncompleteSet { found: 1, wanted: 16 }.into(), 3),
            (CovertError::AlignmentFailed { found: 0, wanted: 2 }.into(), 4),
            (SideChanError::TrainingDataInsufficient { label: "a".into(), count: 1, needed: 5 }.into(), 5),
            (SideChanError::EmptyCalibration.into(), 6),
            (SideChanError::Probe(ProbeError::IncompleteSet { found: 0, wanted: 1 }).into(), 3),
        ];
        for (e, code) in cases {
            assert_eq!(e.exit_code(), code, "{e}");
        }
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["gpuleak", "covert", "--pairs", "1,4", "--seed", "7", "--noise", "0"]).unwrap();
        let cfg = cli.experiment().unwrap();
        assert_eq!((cfg.seed, cfg.covert.pairs.clone()), (7, vec![1, 4]));
        let cli = Cli::try_parse_from(["gpuleak", "fingerprint", "eval"]).unwrap();
        assert_eq!(cli.command, Command::Fingerprint { mode: FingerprintMode::Eval });
        assert!(Cli::try_parse_from(["gpuleak", "fingerprint", "tune"]).is_err());
    }
}
