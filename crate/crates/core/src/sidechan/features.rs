use super::Memorygram;

/// Bins in the resampled temporal profile.
pub const PROFILE_BINS: usize = 64;

/// Feature vector of a memorygram: per-set miss totals sorted from
/// busiest to quietest, the grand total, the per-epoch totals resampled to
/// [`PROFILE_BINS`] bins, then the same profile sorted from busiest to
/// quietest epoch.
///
/// Which sets a victim lands in changes with its page frames from run to
/// run, so the per-set totals are ranked rather than kept by set; what
/// survives is how concentrated the activity is. The sorted profile does
/// the same for time: a bursty victim whose bursts start at a random
/// phase still has a few heavy epochs and many light ones.
pub fn memorygram_features(mg: &Memorygram) -> Vec<f64> {
    let mut rows = mg.row_totals();
    rows.sort_unstable_by(|a, b| b.cmp(a));
    let mut v: Vec<f64> = rows.into_iter().map(|t| t as f64).collect();
    v.push(mg.total() as f64);
    let cols: Vec<f64> = mg.column_totals().into_iter().map(|t| t as f64).collect();
    let profile = resample(&cols, PROFILE_BINS);
    let mut ranked = profile.clone();
    ranked.sort_unstable_by(|a, b| b.total_cmp(a));
    v.extend(profile);
    v.extend(ranked);
    v
}

/// Distance weights for [`memorygram_features`] of a memorygram with
/// `num_sets` rows: each block (per-set totals, grand total, profile,
/// sorted profile) carries the same total weight.
pub fn feature_weights(num_sets: usize) -> Vec<f64> {
    let mut w = vec![1.0 / num_sets.max(1) as f64; num_sets];
    w.push(1.0);
    w.extend(std::iter::repeat(1.0 / PROFILE_BINS as f64).take(2 * PROFILE_BINS));
    w
}

/// Rebins `series` into `bins` equal-width bins, splitting source samples
/// that straddle a bin edge in proportion to the overlap. The sum is kept.
pub fn resample(series: &[f64], bins: usize) -> Vec<f64> {
    let mut out = vec![0.0; bins];
    let n = series.len();
    if n == 0 || bins == 0 {
        return out;
    }
    // Work in units of 1/(n*bins) so every edge is an integer.
    let (n, b) = (n as u64, bins as u64);
    for (i, &x) in series.iter().enumerate() {
        let lo = i as u64 * b;
        let hi = lo + b;
        let mut t = lo;
        while t < hi {
            let bin = t / n;
            let edge = ((bin + 1) * n).min(hi);
            out[bin as usize] += x * (edge - t) as f64 / b as f64;
            t = edge;
        }
    }
    out
}

/// Pearson correlation between `series` and itself shifted by `lag`.
/// Returns 0 when either overlap is constant or empty.
pub fn autocorrelation(series: &[f64], lag: usize) -> f64 {
    if lag >= series.len() {
        return 0.0;
    }
    let a = &series[..series.len() - lag];
    let b = &series[lag..];
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Period of `series` from its autocorrelation: past the central lobe
/// (the lags before the autocorrelation first drops to zero or below), the
/// lag up to `max_lag` with the highest autocorrelation, the smallest such
/// lag on ties. `None` when the central lobe never ends.
pub fn dominant_period(series: &[f64], max_lag: usize) -> Option<usize> {
    let max_lag = max_lag.min(series.len().saturating_sub(2));
    let first = (1..=max_lag).find(|&k| autocorrelation(series, k) <= 0.0)?;
    let mut best: Option<(usize, f64)> = None;
    for lag in first..=max_lag {
        let r = autocorrelation(series, lag);
        if best.map_or(true, |(_, b)| r > b) {
            best = Some((lag, r));
        }
    }
    best.map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_keeps_sum_and_spreads_evenly() {
        let s = vec![3.0, 6.0];
        assert_eq!(resample(&s, 4), vec![1.5, 1.5, 3.0, 3.0]);
        let s: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let r = resample(&s, 64);
        assert!((r.iter().sum::<f64>() - 4950.0).abs() < 1e-9);
        assert_eq!(resample(&[1.0, 2.0, 3.0, 4.0], 2), vec![3.0, 7.0]);
    }

    #[test]
    fn autocorrelation_of_periodic_signal() {
        let s: Vec<f64> = (0..40).map(|i| if i % 10 < 3 { 5.0 } else { 1.0 }).collect();
        assert!((autocorrelation(&s, 10) - 1.0).abs() < 1e-12);
        assert!(autocorrelation(&s, 5) < 0.0);
        assert_eq!(dominant_period(&s, 25), Some(10));
        let ramp: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(dominant_period(&ramp, 5), None);
        assert_eq!(autocorrelation(&[1.0; 8], 2), 0.0);
    }

    #[test]
    fn features_layout() {
        let mg = Memorygram {
            counts: vec![vec![1, 0], vec![2, 3]],
            set_ids: vec![0, 1],
            epoch_cycles: 1,
            start_cycle: 0,
            ways: 16,
        };
        let f = memorygram_features(&mg);
        assert_eq!(f.len(), 2 + 1 + 2 * PROFILE_BINS);
        assert_eq!(&f[..3], &[5.0, 1.0, 6.0]);
        let (profile, ranked) = f[3..].split_at(PROFILE_BINS);
        assert!((profile.iter().sum::<f64>() - 6.0).abs() < 1e-9);
        assert_eq!(profile[0], 3.0 / 32.0);
        assert_eq!(ranked[0], 3.0 / 32.0);
        assert!(ranked.windows(2).all(|w| w[0] >= w[1]));
        let w = feature_weights(2);
        assert_eq!(w.len(), f.len());
        assert!((w.iter().sum::<f64>() - 4.0).abs() < 1e-12);
    }
}
