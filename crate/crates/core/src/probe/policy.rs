use serde::{Deserialize, Serialize};

use super::evset::EvictionSet;
use super::{LatencyThresholds, ProbeError};
use crate::simcore::AgentSession;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyLabel {
    #[serde(rename = "LRU-like")]
    LruLike,
    #[serde(rename = "random-like")]
    RandomLike,
    #[serde(rename = "unknown")]
    Unknown,
}

impl PolicyLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyLabel::LruLike => "LRU-like",
            PolicyLabel::RandomLike => "random-like",
            PolicyLabel::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub inferred_ways: usize,
    pub eviction_period: usize,
    pub policy_label: PolicyLabel,
    /// Smallest evicting prefix length in each trial, if any.
    pub eviction_points: Vec<Option<usize>>,
}

/// For each trial, finds the shortest prefix `members[..k]` whose walk
/// evicts the target, and checks that all longer prefixes evict too.
///
/// Deterministic replacement gives the same `k` every trial with no
/// reloads escaping eviction past it. Varying points mean the victim is
/// picked at random.
pub fn measure_associativity(
    session: &mut AgentSession<'_>,
    evset: &EvictionSet,
    local: bool,
    thresholds: &LatencyThresholds,
    trials: usize,
) -> Result<PolicyReport, ProbeError> {
    if evset.is_empty() || trials == 0 {
        return Err(ProbeError::InvalidArgument(
            "associativity needs a non-empty eviction set and at least one trial".into(),
        ));
    }
    let thr = thresholds.miss_threshold(local);
    let n = evset.members.len();
    let mut points = Vec::with_capacity(trials);
    let mut monotone = true;
    for _ in 0..trials {
        let mut first = None;
        for k in 1..=n {
            session.access(evset.target)?;
            for &m in &evset.members[..k] {
                session.access(m)?;
            }
            let miss = session.access(evset.target)?.observed_cycles as f64 > thr;
            match (miss, first) {
                (true, None) => first = Some(k),
                (false, Some(_)) => monotone = false,
                _ => {}
            }
        }
        points.push(first);
    }

    let observed: Vec<usize> = points.iter().flatten().copied().collect();
    let (label, period) = if observed.is_empty() {
        (PolicyLabel::Unknown, 0)
    } else if observed.len() == trials && monotone && observed.iter().all(|&p| p == observed[0]) {
        (PolicyLabel::LruLike, observed[0])
    } else if observed.iter().any(|&p| p != observed[0]) || !monotone {
        (PolicyLabel::RandomLike, *observed.iter().max().unwrap())
    } else {
        (PolicyLabel::Unknown, observed[0])
    };
    let inferred_ways = match label {
        PolicyLabel::LruLike => period,
        _ => n,
    };
    Ok(PolicyReport {
        inferred_ways,
        eviction_period: period,
        policy_label: label,
        eviction_points: points,
    })
}

/// Latency of re-touching the target after walking `k` members, cycling
/// through the set, for `k = 1..=max_k`.
pub fn validation_curve(
    session: &mut AgentSession<'_>,
    evset: &EvictionSet,
    max_k: usize,
) -> Result<Vec<(usize, u64)>, ProbeError> {
    if evset.is_empty() {
        return Err(ProbeError::InvalidArgument("empty eviction set".into()));
    }
    let mut out = Vec::with_capacity(max_k);
    for k in 1..=max_k {
        session.access(evset.target)?;
        for i in 0..k {
            session.access(evset.members[i % evset.members.len()])?;
        }
        out.push((k, session.access(evset.target)?.observed_cycles));
    }
    Ok(out)
}
