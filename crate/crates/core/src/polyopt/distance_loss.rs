use super::{check_perm, hamming_word, CentroidDistances, SwapObjective};
use crate::error::{Error, Result};

/// Weighted squared error between Hamming distances of assigned words and
/// an affine rescaling of centroid distances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceLossSpec {
    pub nbits: u32,
    pub mu: f64,
    pub sigma: f64,
    /// Base of the weight `w(u) = alpha^u`.
    pub alpha: f64,
}

impl DistanceLossSpec {
    pub fn new(nbits: u32, mu: f64, sigma: f64, alpha: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !mu.is_finite() {
            return Err(Error::invalid("mu must be finite"));
        }
        Ok(Self {
            nbits,
            mu,
            sigma,
            alpha,
        })
    }

    /// Mean and standard deviation measured over the off-diagonal entries.
    pub fn fit(c: &CentroidDistances, nbits: u32, alpha: f64) -> Result<Self> {
        let k = c.k();
        if k < 2 {
            return Err(Error::invalid("need at least two centroids"));
        }
        let count = (k * (k - 1)) as f64;
        let mut sum = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    sum += c.get(i, j);
                }
            }
        }
        let mu = sum / count;
        let mut var = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    var += (c.get(i, j) - mu).powi(2);
                }
            }
        }
        Self::new(nbits, mu, (var / count).sqrt(), alpha)
    }

    /// Maps a centroid distance to the Hamming range, matching the binomial
    /// mean `nbits / 2` and variance `nbits / 4`.
    pub fn map(&self, x: f64) -> f64 {
        (self.nbits as f64).sqrt() / (2.0 * self.sigma) * (x - self.mu) + self.nbits as f64 / 2.0
    }

    pub fn weight(&self, u: f64) -> f64 {
        self.alpha.powf(u)
    }
}

/// Full evaluation, `O(K^2)`.
pub fn distance_loss(perm: &[u8], c: &CentroidDistances, spec: &DistanceLossSpec) -> Result<f64> {
    Ok(DistanceObjective::new(c, spec, perm.to_vec())?.loss())
}

/// Loss change for exchanging the words of `a` and `b`, `O(K)`.
pub fn distance_loss_delta(
    perm: &[u8],
    swap: (usize, usize),
    c: &CentroidDistances,
    spec: &DistanceLossSpec,
) -> Result<f64> {
    let obj = DistanceObjective::new(c, spec, perm.to_vec())?;
    super::check_swap(swap, obj.k)?;
    Ok(obj.delta(swap.0, swap.1))
}

/// Incremental state for annealing under the distance loss.
#[derive(Clone, Debug)]
pub struct DistanceObjective {
    k: usize,
    target: Vec<f64>,
    weight: Vec<f64>,
    perm: Vec<u8>,
    loss: f64,
}

impl DistanceObjective {
    pub fn new(c: &CentroidDistances, spec: &DistanceLossSpec, perm: Vec<u8>) -> Result<Self> {
        let k = c.k();
        check_perm(&perm, k)?;
        if k != 1usize << spec.nbits {
            return Err(Error::invalid(format!(
                "{k} centroids do not match {} bits",
                spec.nbits
            )));
        }
        let target: Vec<f64> = (0..k * k).map(|ij| spec.map(c.get(ij / k, ij % k))).collect();
        let weight: Vec<f64> = target.iter().map(|&t| spec.weight(t)).collect();
        let mut obj = Self {
            k,
            target,
            weight,
            perm,
            loss: 0.0,
        };
        obj.loss = obj.recompute();
        Ok(obj)
    }

    fn recompute(&self) -> f64 {
        let k = self.k;
        let mut total = 0.0;
        for i in 0..k {
            for j in 0..k {
                let h = hamming_word(self.perm[i], self.perm[j]) as f64;
                let e = h - self.target[i * k + j];
                total += self.weight[i * k + j] * e * e;
            }
        }
        total
    }
}

impl SwapObjective for DistanceObjective {
    fn k(&self) -> usize {
        self.k
    }

    fn loss(&self) -> f64 {
        self.loss
    }

    fn perm(&self) -> &[u8] {
        &self.perm
    }

    fn delta(&self, a: usize, b: usize) -> f64 {
        let k = self.k;
        let (pa, pb) = (self.perm[a], self.perm[b]);
        let (ra, rb) = (a * k, b * k);
        let mut d = 0.0;
        for j in 0..k {
            if j == a || j == b {
                continue;
            }
            let pj = self.perm[j];
            let old_a = hamming_word(pa, pj) as f64;
            let old_b = hamming_word(pb, pj) as f64;
            // Row a takes b's word and vice versa.
            let (ta, tb) = (self.target[ra + j], self.target[rb + j]);
            d += self.weight[ra + j] * ((old_b - ta).powi(2) - (old_a - ta).powi(2));
            d += self.weight[rb + j] * ((old_a - tb).powi(2) - (old_b - tb).powi(2));
        }
        // Each off-diagonal pair appears as (i, j) and (j, i); the (a, b) pair
        // itself keeps its Hamming distance.
        2.0 * d
    }

    fn apply(&mut self, a: usize, b: usize) {
        self.loss += self.delta(a, b);
        self.perm.swap(a, b);
    }

    fn exact_loss(&self) -> f64 {
        self.recompute()
    }
}
