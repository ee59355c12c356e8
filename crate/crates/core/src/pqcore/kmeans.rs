//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

use crate::distance::l2_sqr;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct KMeans {
    pub k: usize,
    pub dim: usize,
    /// Row-major `k x dim`.
    pub centroids: Vec<f32>,
    /// Mean squared quantization error before each Lloyd update and after
    /// the last one (length `iterations + 1`).
    pub objective: Vec<f64>,
}

impl KMeans {
    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }
}

/// Index of the nearest centroid and its squared distance. Ties go to the
/// lowest index.
#[inline]
pub fn nearest(centroids: &[f32], dim: usize, x: &[f32]) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = l2_sqr(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(data: &[f32], dim: usize, centroids: &[f32], labels: &mut [u32], dists: &mut [f32]) {
    let rows = 1024;
    let work = |chunk: usize, labels: &mut [u32], dists: &mut [f32]| {
        for (r, (l, d)) in labels.iter_mut().zip(dists.iter_mut()).enumerate() {
            let i = chunk * rows + r;
            let (j, dist) = nearest(centroids, dim, &data[i * dim..(i + 1) * dim]);
            *l = j as u32;
            *d = dist;
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        labels
            .par_chunks_mut(rows)
            .zip(dists.par_chunks_mut(rows))
            .enumerate()
            .for_each(|(c, (l, d))| work(c, l, d));
    }
    #[cfg(not(feature = "parallel"))]
    labels
        .chunks_mut(rows)
        .zip(dists.chunks_mut(rows))
        .enumerate()
        .for_each(|(c, (l, d))| work(c, l, d));
}

fn plus_plus_seed<R: Rng>(data: &[f32], dim: usize, k: usize, rng: &mut R) -> Vec<f32> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| l2_sqr(row(i), row(first)) as f64).collect();
    for _ in 1..k {
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
            // Floating-point leftovers can land on a zero-weight tail.
            while d2[chosen] == 0.0 && chosen > 0 {
                chosen -= 1;
            }
            chosen
        } else {
            // Every point coincides with a centroid already.
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, w) in d2.iter_mut().enumerate() {
            let d = l2_sqr(row(i), &c) as f64;
            if d < *w {
                *w = d;
            }
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Clusters `data` (row-major, `dim` columns) into `k` cells.
///
/// A cell that ends an update empty is re-seeded with the point of the
/// largest cell farthest from that cell's centroid.
pub fn kmeans<R: Rng>(data: &[f32], dim: usize, k: usize, iterations: usize, rng: &mut R) -> Result<KMeans> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::invalid("k-means input shape does not match dimension"));
    }
    let n = data.len() / dim;
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "k-means needs at least k = {k} training points, got {n}"
        )));
    }
    let mut centroids = plus_plus_seed(data, dim, k, rng);
    let mut labels = vec![0u32; n];
    let mut dists = vec![0f32; n];
    let mut objective = Vec::with_capacity(iterations + 1);
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];

    for _ in 0..iterations {
        assign(data, dim, &centroids, &mut labels, &mut dists);
        objective.push(dists.iter().map(|&d| d as f64).sum::<f64>() / n as f64);

        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for (i, &l) in labels.iter().enumerate() {
            let l = l as usize;
            counts[l] += 1;
            for (s, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
                *s += v as f64;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for c in 0..dim {
                    centroids[j * dim + c] = (sums[j * dim + c] / counts[j] as f64) as f32;
                }
            }
        }
        for j in 0..k {
            if counts[j] != 0 {
                continue;
            }
            let largest = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
            let mut far = (usize::MAX, -1f32);
            for (i, &l) in labels.iter().enumerate() {
                if l as usize == largest {
                    let d = l2_sqr(&data[i * dim..(i + 1) * dim], &centroids[largest * dim..(largest + 1) * dim]);
                    if d > far.1 {
                        far = (i, d);
                    }
                }
            }
            let p = far.0;
            centroids[j * dim..(j + 1) * dim].copy_from_slice(&data[p * dim..(p + 1) * dim]);
            labels[p] = j as u32;
            counts[largest] -= 1;
            counts[j] = 1;
        }
    }
    assign(data, dim, &centroids, &mut labels, &mut dists);
    objective.push(dists.iter().map(|&d| d as f64).sum::<f64>() / n as f64);

    Ok(KMeans {
        k,
        dim,
        centroids,
        objective,
    })
}
