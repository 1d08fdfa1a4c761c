use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ClapsError, Result};
use crate::vocab::TokenEmbeddings;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub num_clusters: usize,
    /// Lloyd iterations after seeding; 0 keeps the K-means++ seeds as centroids.
    pub max_iters: usize,
    pub seed: u64,
    /// Stop once the fraction of points changing cluster is at or below this.
    pub tolerance: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            num_clusters: 2000,
            max_iters: 100,
            seed: 0,
            tolerance: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index of every embedded token, in embedding row order.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the nearest centroid: after seeding, then
    /// after every Lloyd iteration.
    pub distortion: Vec<f64>,
    pub iterations: usize,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared distance; ties go to the lower centroid index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(emb: &TokenEmbeddings, centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    (0..emb.len())
        .into_par_iter()
        .map(|i| nearest(emb.row(i), centroids))
        .collect()
}

fn seed_plus_plus(emb: &TokenEmbeddings, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = emb.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(emb.row(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(emb.row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            log::warn!(
                "k-means++: every point coincides with a chosen centroid; {} of {k} centroids collapse",
                k - centroids.len()
            );
            while centroids.len() < k {
                centroids.push(centroids[centroids.len() - 1].clone());
            }
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("positive total implies a positive weight");
        let c = emb.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(emb.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// K-means++ seeding followed by Lloyd iterations. Deterministic for a given seed.
pub fn kmeanspp_cluster(emb: &TokenEmbeddings, cfg: &ClusterConfig) -> Result<Clustering> {
    let n = emb.len();
    let k = cfg.num_clusters;
    if k == 0 || k > n {
        return Err(ClapsError::Precondition(format!(
            "num_clusters must be in 1..={n}, got {k}"
        )));
    }
    if cfg.tolerance.is_nan() || cfg.tolerance < 0.0 {
        return Err(ClapsError::Config("tolerance must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = seed_plus_plus(emb, k, &mut rng);

    let mut current = assign(emb, &centroids);
    let mut distortion = vec![current.iter().map(|(_, d)| d).sum::<f64>()];
    let mut iterations = 0;
    let dim = emb.dim();

    while iterations < cfg.max_iters {
        iterations += 1;
        // Update step: fixed-order accumulation per cluster id.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, (c, _)) in current.iter().enumerate() {
            counts[*c] += 1;
            for (s, x) in sums[*c].iter_mut().zip(emb.row(i)) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                continue;
            }
            // Empty cluster: move it onto the point farthest from its centroid.
            let far = current.iter().enumerate().filter(|(i, _)| !taken[*i]).fold(
                None::<(usize, f64)>,
                |best, (i, (_, d))| match best {
                    Some((_, bd)) if bd >= *d => best,
                    _ => Some((i, *d)),
                },
            );
            if let Some((i, d)) = far {
                if d > 0.0 {
                    taken[i] = true;
                    centroids[c] = emb.row(i).to_vec();
                }
            }
        }

        let next = assign(emb, &centroids);
        let changed = next
            .iter()
            .zip(&current)
            .filter(|(a, b)| a.0 != b.0)
            .count();
        distortion.push(next.iter().map(|(_, d)| d).sum());
        current = next;
        if changed as f64 <= cfg.tolerance * n as f64 {
            break;
        }
    }

    Ok(Clustering {
        centroids,
        assignments: current.into_iter().map(|(c, _)| c).collect(),
        distortion,
        iterations,
    })
}
