//! Lloyd's k-means with k-means++ seeding and restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            restarts: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Number of empty clusters re-seeded from the farthest point.
    pub repairs: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(k, x.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn lloyd(x: &Matrix, mut centroids: Matrix, max_iters: usize) -> KMeansResult {
    let (n, d) = x.shape();
    let k = centroids.rows();
    let mut assignment = vec![usize::MAX; n];
    let mut repairs = 0;
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest(x.row(i), &centroids);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignment[i]] += 1;
            for (s, v) in sums.row_mut(assignment[i]).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / counts[c] as f64;
                }
                continue;
            }
            // Empty cluster: move it onto the point farthest from its own centroid.
            let far = (0..n)
                .map(|i| (i, sq_dist(x.row(i), centroids.row(assignment[i]))))
                .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            centroids.row_mut(c).copy_from_slice(x.row(far.0));
            assignment[far.0] = c;
            repairs += 1;
            changed = true;
        }
        if !changed {
            break;
        }
    }
    for i in 0..n {
        assignment[i] = nearest(x.row(i), &centroids).0;
    }
    let inertia = (0..n)
        .map(|i| sq_dist(x.row(i), centroids.row(assignment[i])))
        .sum();
    KMeansResult {
        centroids,
        assignment,
        inertia,
        repairs,
    }
}

/// Best of `cfg.restarts` seeded runs by inertia (earliest run wins ties).
pub fn kmeans(x: &Matrix, k: usize, cfg: &KMeansConfig) -> Result<KMeansResult> {
    if k == 0 || k > x.rows() {
        return Err(Error::Config(format!("k-means with k={k} on {} points", x.rows())));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let run = lloyd(x, plus_plus(x, k, &mut rng), cfg.max_iters);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}
