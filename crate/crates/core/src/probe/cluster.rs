//! One-dimensional k-means with seeded k-means++ seeding and restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Clusters {
    /// Ascending.
    pub centers: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub counts: Vec<usize>,
    pub inertia: f64,
}

const RESTARTS: usize = 8;
const MAX_ITERS: usize = 100;

/// Clusters `data` into `k` groups. Returns `None` when there are fewer
/// distinct values than `k`.
pub fn kmeans_1d(data: &[f64], k: usize, seed: u64) -> Option<Clusters> {
    let mut distinct: Vec<f64> = data.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if k == 0 || distinct.len() < k {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..RESTARTS)
        .filter_map(|_| {
            let init = plus_plus_init(data, k, &mut rng);
            lloyd(data, init)
        })
        .min_by(|a, b| a.inertia.total_cmp(&b.inertia))
}

fn plus_plus_init(data: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centers = vec![data[rng.random_range(0..data.len())]];
    let mut d2: Vec<f64> = data.iter().map(|&x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = data.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.random_range(0..data.len())
        };
        let c = data[pick];
        centers.push(c);
        for (d, &x) in d2.iter_mut().zip(data) {
            *d = d.min((x - c).powi(2));
        }
    }
    centers
}

fn nearest(centers: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, &c) in centers.iter().enumerate().skip(1) {
        if (x - c).abs() < (x - centers[best]).abs() {
            best = i;
        }
    }
    best
}

fn lloyd(data: &[f64], mut centers: Vec<f64>) -> Option<Clusters> {
    let k = centers.len();
    let mut assign = vec![usize::MAX; data.len()];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (a, &x) in assign.iter_mut().zip(data) {
            let n = nearest(&centers, x);
            if *a != n {
                *a = n;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&a, &x) in assign.iter().zip(data) {
            sums[a] += x;
            counts[a] += 1;
        }
        for i in 0..k {
            if counts[i] > 0 {
                centers[i] = sums[i] / counts[i] as f64;
            }
        }
        if !changed {
            break;
        }
    }

    let mut counts = vec![0usize; k];
    let mut sq = vec![0.0; k];
    for (&a, &x) in assign.iter().zip(data) {
        counts[a] += 1;
        sq[a] += (x - centers[a]).powi(2);
    }
    if counts.contains(&0) {
        return None;
    }
    let inertia = sq.iter().sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]));
    Some(Clusters {
        centers: order.iter().map(|&i| centers[i]).collect(),
        sigmas: order
            .iter()
            .map(|&i| (sq[i] / counts[i] as f64).sqrt())
            .collect(),
        counts: order.iter().map(|&i| counts[i]).collect(),
        inertia,
    })
}
