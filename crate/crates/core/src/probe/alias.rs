use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::evset::{discover_eviction_set, target_evicted, EvictionSet};
use super::{majority, LatencyThresholds, ProbeConfig, ProbeError};
use crate::simcore::{AgentSession, BufferHandle};

/// One prime/interfere/probe round: does touching `b` disturb a primed `a`?
fn disturbs(
    session: &mut AgentSession<'_>,
    a: &EvictionSet,
    b: &EvictionSet,
    threshold: f64,
) -> Result<bool, ProbeError> {
    for &x in &a.members {
        session.access(x)?;
    }
    for &x in &b.members {
        session.access(x)?;
    }
    let mut missed = false;
    for &x in &a.members {
        missed |= session.access(x)?.observed_cycles as f64 > threshold;
    }
    Ok(missed)
}

fn shares_address(a: &EvictionSet, b: &EvictionSet) -> bool {
    let a_addrs: HashSet<u64> = a.addresses().collect();
    b.addresses().any(|x| a_addrs.contains(&x))
}

/// True when `a` and `b` index the same physical set.
///
/// Shared addresses settle it at once. Otherwise the members of `a` are
/// primed, those of `b` walked and `a` probed again; together they hold
/// more lines than a set has ways, so a real alias forces at least one miss.
pub fn test_alias(
    session: &mut AgentSession<'_>,
    a: &EvictionSet,
    b: &EvictionSet,
    local: bool,
    thresholds: &LatencyThresholds,
    trials: usize,
) -> Result<bool, ProbeError> {
    if shares_address(a, b) {
        return Ok(true);
    }
    let thr = thresholds.miss_threshold(local);
    majority(trials, || disturbs(session, a, b, thr))
}

/// Single round first; only a positive round pays for the full vote.
fn aliases_any(
    session: &mut AgentSession<'_>,
    cand: &EvictionSet,
    kept: &[EvictionSet],
    local: bool,
    thresholds: &LatencyThresholds,
    votes: usize,
) -> Result<bool, ProbeError> {
    let thr = thresholds.miss_threshold(local);
    for k in kept {
        if shares_address(k, cand) {
            return Ok(true);
        }
        if disturbs(session, k, cand, thr)?
            && test_alias(session, k, cand, local, thresholds, votes)?
        {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Result of a set enumeration; `sets.len() < wanted` when the buffer or
/// the budget ran out first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enumeration {
    pub sets: Vec<EvictionSet>,
    pub wanted: usize,
}

impl Enumeration {
    pub fn is_complete(&self) -> bool {
        self.sets.len() >= self.wanted
    }
}

/// Collects `count_wanted` eviction sets that pairwise index distinct sets.
///
/// With a page hint, one set is discovered at the start of a page and then
/// slid line by line across the page. Lines of one page land in
/// consecutive sets, so two pages' slid copies either coincide shift for
/// shift or never meet: each copy is alias-tested only against the copies
/// at the same position from earlier pages. Without a hint, every line of
/// the buffer is tried as a target in turn.
pub fn enumerate_unique_sets(
    session: &mut AgentSession<'_>,
    buf: &BufferHandle,
    count_wanted: usize,
    thresholds: &LatencyThresholds,
    cfg: &ProbeConfig,
) -> Result<Enumeration, ProbeError> {
    let local = session.is_local(buf);
    let line = cfg.stride_bytes;
    let mut kept: Vec<EvictionSet> = Vec::new();
    let mut known: HashSet<u64> = HashSet::new();
    let remember = |known: &mut HashSet<u64>, s: &EvictionSet| known.extend(s.addresses());

    match cfg.page_hint_bytes {
        Some(page) if page >= line => {
            let pages = buf.length / page;
            // For each earlier base, the index in `kept` of its copy at each shift.
            let mut groups: Vec<Vec<Option<usize>>> = Vec::new();
            let peers = |groups: &[Vec<Option<usize>>], kept: &[EvictionSet], shift: usize| -> Vec<EvictionSet> {
                groups
                    .iter()
                    .filter_map(|g| g.get(shift).copied().flatten())
                    .map(|i| kept[i].clone())
                    .collect()
            };
            for p in 0..pages {
                if kept.len() >= count_wanted {
                    break;
                }
                let base_off = p * page;
                if known.contains(&buf.vaddr(base_off)) {
                    continue;
                }
                let base = match discover_eviction_set(session, buf, base_off, thresholds, cfg) {
                    Ok(s) => s,
                    Err(ProbeError::IncompleteSet { .. }) => continue,
                    Err(e) => return Err(e),
                };
                if aliases_any(session, &base, &peers(&groups, &kept, 0), local, thresholds, cfg.votes)? {
                    remember(&mut known, &base);
                    continue;
                }
                let mut group = Vec::new();
                for shift in 0..page / line {
                    if kept.len() >= count_wanted {
                        break;
                    }
                    let cand = base.shifted(shift * line);
                    if cand.addresses().any(|a| !buf.contains(a)) {
                        break;
                    }
                    if shift > 0 {
                        let seed = cfg.seed ^ cand.target;
                        if !target_evicted(session, cand.target, &cand.members, local, thresholds, cfg.votes, seed)? {
                            continue;
                        }
                        let same_shift = peers(&groups, &kept, shift as usize);
                        if aliases_any(session, &cand, &same_shift, local, thresholds, cfg.votes)? {
                            continue;
                        }
                    }
                    group.resize(shift as usize, None);
                    group.push(Some(kept.len()));
                    remember(&mut known, &cand);
                    kept.push(cand);
                }
                groups.push(group);
            }
        }
        _ => {
            for i in 0..buf.length / line {
                if kept.len() >= count_wanted {
                    break;
                }
                let off = i * line;
                if known.contains(&buf.vaddr(off)) {
                    continue;
                }
                let cand = match discover_eviction_set(session, buf, off, thresholds, cfg) {
                    Ok(s) => s,
                    Err(ProbeError::IncompleteSet { .. }) => continue,
                    Err(e) => return Err(e),
                };
                remember(&mut known, &cand);
                if aliases_any(session, &cand, &kept, local, thresholds, cfg.votes)? {
                    continue;
                }
                kept.push(cand);
            }
        }
    }
    Ok(Enumeration { sets: kept, wanted: count_wanted })
}
