//! k-means (k-means++ seeding, Lloyd iterations) and silhouette scores.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centers<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            stats::sample_categorical(&d2, rng)
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[idx].clone());
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, centers.last().unwrap()));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iter: usize) -> KMeans {
    let dim = points[0].len();
    let k = centers.len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let (c, _) = nearest(p, &centers);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    KMeans {
        centers,
        labels,
        inertia,
    }
}

/// Best-of-`n_init` k-means with k-means++ seeding. Deterministic for a given seed.
pub fn kmeans(points: &[Vec<f64>], k: usize, n_init: usize, seed: u64) -> KMeans {
    assert!(!points.is_empty() && k >= 1, "k-means needs points and k >= 1");
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..n_init.max(1) {
        let centers = seed_centers(points, k, &mut rng);
        let fit = lloyd(points, centers, 300);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    best.unwrap()
}

/// Mean silhouette width of a clustering, computed on at most `max_points` points
/// (a seeded subsample when the data are larger).
pub fn silhouette(points: &[Vec<f64>], labels: &[usize], k: usize, max_points: usize, seed: u64) -> f64 {
    let n = points.len();
    if k < 2 || n < 3 {
        return 0.0;
    }
    let idx: Vec<usize> = if n > max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, n, max_points).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let mut total = 0.0;
    for &i in &idx {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for &j in &idx {
            if j == i {
                continue;
            }
            sums[labels[j]] += sq_dist(&points[i], &points[j]).sqrt();
            counts[labels[j]] += 1;
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / idx.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = Vec::new();
        for c in [(0.0, 0.0), (5.0, 5.0), (-5.0, 5.0)] {
            for _ in 0..50 {
                pts.push(vec![c.0 + rng.random_range(-0.5..0.5), c.1 + rng.random_range(-0.5..0.5)]);
            }
        }
        pts
    }

    #[test]
    fn recovers_separated_blobs() {
        let pts = blobs();
        let fit = kmeans(&pts, 3, 5, 7);
        for block in 0..3 {
            let l = fit.labels[block * 50];
            assert!(fit.labels[block * 50..(block + 1) * 50].iter().all(|&x| x == l));
        }
        let s3 = silhouette(&pts, &fit.labels, 3, 2000, 0);
        let f2 = kmeans(&pts, 2, 5, 7);
        let s2 = silhouette(&pts, &f2.labels, 2, 2000, 0);
        assert!(s3 > 0.8 && s3 > s2);
    }

    #[test]
    fn deterministic_for_seed() {
        let pts = blobs();
        assert_eq!(kmeans(&pts, 3, 3, 11), kmeans(&pts, 3, 3, 11));
    }
}
