use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

/// Column means and standard deviations, and the standardized rows.
/// Constant columns keep a unit scale.
pub fn standardize(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let mut means = vec![0.0; d];
    let mut sds = vec![1.0; d];
    if n > 0 {
        for j in 0..d {
            means[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n as f64;
            if var > 0.0 {
                sds[j] = var.sqrt();
            }
        }
    }
    let z = rows
        .iter()
        .map(|r| r.iter().enumerate().map(|(j, x)| (x - means[j]) / sds[j]).collect())
        .collect();
    (z, means, sds)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; lowest index on ties.
pub(crate) fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = dist2(x, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm from a seeded k-means++ start, until the assignment
/// stops changing or [`MAX_ITERATIONS`] steps. A cluster that loses all
/// its points keeps its previous centroid.
pub fn kmeans_cluster(rows: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d || r.iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidParameter("rows must be finite and of equal length".into()));
    }
    let distinct: HashSet<Vec<u64>> = rows.iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
    if k > distinct.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the {} distinct rows",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![rows[rng.random_range(0..rows.len())].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| dist2(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, w) in d2.iter().enumerate() {
            if *w > 0.0 {
                pick = Some(i);
                if u < *w {
                    break;
                }
                u -= w;
            }
        }
        let c = rows[pick.expect("a row away from every centroid exists")].clone();
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min(dist2(r, &c));
        }
        centroids.push(c);
    }

    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let (new_labels, inertia): (Vec<usize>, f64) = {
            let mut inertia = 0.0;
            let l = rows
                .iter()
                .map(|r| {
                    let (c, dd) = nearest(r, &centroids);
                    inertia += dd;
                    c
                })
                .collect();
            (l, inertia)
        };
        history.push(inertia);
        if new_labels == labels {
            break;
        }
        labels = new_labels;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (r, &c) in rows.iter().zip(&labels) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(r) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(KMeans {
        labels,
        centroids,
        inertia_history: history,
    })
}
