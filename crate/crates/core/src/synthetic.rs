//! Seeded synthetic data for tests, smoke runs and the demo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataio::VectorSet;

/// A Gaussian mixture with cluster-specific spreads.
#[derive(Clone, Debug)]
pub struct Mixture {
    dim: usize,
    centers: Vec<f32>,
    spreads: Vec<f32>,
}

impl Mixture {
    pub fn new(dim: usize, n_clusters: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = Normal::new(0.0f32, 4.0).unwrap();
        let centers = (0..dim * n_clusters).map(|_| center.sample(&mut rng)).collect();
        let spreads = (0..n_clusters).map(|_| rng.random_range(0.5f32..1.5)).collect();
        Self { dim, centers, spreads }
    }

    pub fn sample(&self, n: usize, seed: u64) -> VectorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.spreads.len();
        let mut data = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let c = rng.random_range(0..k);
            for j in 0..self.dim {
                let z: f32 = StandardNormal.sample(&mut rng);
                data.push(self.centers[c * self.dim + j] + self.spreads[c] * z);
            }
        }
        VectorSet::new(self.dim, data).expect("finite by construction")
    }
}

/// `n` points from a fixed mixture determined by `dim` and `n_clusters`
/// alone; `seed` only picks the points, so calls with different seeds
/// produce database and query sets from the same distribution.
pub fn clustered(n: usize, dim: usize, n_clusters: usize, seed: u64) -> VectorSet {
    let center_seed = 0x5EED_0000 ^ ((dim as u64) << 20) ^ n_clusters as u64;
    Mixture::new(dim, n_clusters, center_seed).sample(n, seed)
}

/// Uniform points in the unit square.
pub fn uniform_square(n: usize, seed: u64) -> VectorSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..2 * n).map(|_| rng.random::<f32>()).collect();
    VectorSet::new(2, data).expect("finite by construction")
}
