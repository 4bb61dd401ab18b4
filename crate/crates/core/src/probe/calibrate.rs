use serde::{Deserialize, Serialize};

use super::cluster::kmeans_1d;
use super::{LatencyThresholds, ProbeConfig, ProbeError};
use crate::simcore::{AccessClass, AgentSession, BufferHandle, TimingSample};

/// Thresholds plus every timed access that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub thresholds: LatencyThresholds,
    pub samples: Vec<TimingSample>,
}

pub const MIN_SAMPLES_PER_CLASS: usize = 100;
const MIN_LABEL_AGREEMENT: f64 = 0.95;

/// Times strided first touches (misses) and re-touches (hits) on a local
/// and a remote buffer, then splits the pooled latencies into four clusters.
///
/// Every launch works on lines nobody has touched yet, so the first load of
/// each line is a miss without needing a cache flush.
pub fn calibrate_latencies(
    session: &mut AgentSession<'_>,
    local: &BufferHandle,
    remote: &BufferHandle,
    samples_per_class: usize,
    cfg: &ProbeConfig,
) -> Result<Calibration, ProbeError> {
    if samples_per_class < MIN_SAMPLES_PER_CLASS {
        return Err(ProbeError::InvalidArgument(format!(
            "need at least {MIN_SAMPLES_PER_CLASS} samples per class, got {samples_per_class}"
        )));
    }
    if cfg.num_access_repeats < 2 || cfg.kernel_repeats == 0 || cfg.stride_bytes == 0 {
        return Err(ProbeError::InvalidArgument(
            "calibration needs num_access_repeats >= 2, kernel_repeats >= 1 and a non-zero stride".into(),
        ));
    }
    if !session.is_local(local) || session.is_local(remote) {
        return Err(ProbeError::InvalidArgument(
            "first buffer must be local and second remote to the session".into(),
        ));
    }
    let launches = cfg.kernel_repeats as u64;
    let lines_per_launch = (samples_per_class as u64).div_ceil(launches);
    let needed = launches * lines_per_launch * cfg.stride_bytes;
    for buf in [local, remote] {
        if buf.length < needed {
            return Err(ProbeError::BufferTooSmall { needed, available: buf.length });
        }
    }

    let mut samples = Vec::with_capacity(
        2 * (launches * lines_per_launch) as usize * cfg.num_access_repeats,
    );
    for launch in 0..launches {
        for buf in [local, remote] {
            for i in 0..lines_per_launch {
                let vaddr = buf.vaddr((launch * lines_per_launch + i) * cfg.stride_bytes);
                for _ in 0..cfg.num_access_repeats {
                    samples.push(session.access(vaddr)?);
                }
            }
        }
    }

    let data: Vec<f64> = samples.iter().map(|s| s.observed_cycles as f64).collect();
    let thresholds = thresholds_from_latencies(&data, cfg.seed)?;

    // The attacker knows which loads were first touches and which buffer
    // they hit, so a clustering that contradicts that is rejected.
    let per_line = cfg.num_access_repeats;
    let per_launch_buf = lines_per_launch as usize * per_line;
    let consistent = samples
        .iter()
        .enumerate()
        .filter(|(i, s)| {
            let local = (i / per_launch_buf) % 2 == 0;
            let miss = i % per_line == 0;
            thresholds.classify(s.observed_cycles) == AccessClass::from_outcome(!miss, local)
        })
        .count();
    if (consistent as f64) < MIN_LABEL_AGREEMENT * samples.len() as f64 {
        return Err(ProbeError::CalibrationFailed(format!(
            "clusters explain only {consistent} of {} labelled loads",
            samples.len()
        )));
    }
    Ok(Calibration { thresholds, samples })
}

/// Four-way clustering of raw latencies into thresholds.
pub fn thresholds_from_latencies(data: &[f64], seed: u64) -> Result<LatencyThresholds, ProbeError> {
    let clusters = kmeans_1d(data, 4, seed).ok_or_else(|| {
        ProbeError::CalibrationFailed("fewer than four distinct latencies observed".into())
    })?;
    let c = &clusters.centers;
    let s = &clusters.sigmas;
    for i in 0..3 {
        let gap = c[i + 1] - c[i];
        if gap <= s[i].max(s[i + 1]) {
            return Err(ProbeError::CalibrationFailed(format!(
                "clusters at {:.1} and {:.1} overlap (sigma {:.1})",
                c[i],
                c[i + 1],
                s[i].max(s[i + 1])
            )));
        }
    }
    let mut means = [0.0; 4];
    let mut sigmas = [0.0; 4];
    means.copy_from_slice(c);
    sigmas.copy_from_slice(s);
    let mut t = LatencyThresholds::from_means(means);
    t.cluster_sigmas = sigmas;
    Ok(t)
}
