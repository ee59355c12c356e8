use super::{check_perm, hamming_word, CentroidDistances, SwapObjective};
use crate::error::Result;

/// Rank-based loss: for every ordered pair `(i, j)` count the centroids `k`
/// that are farther from `i` than `j` but whose word is strictly closer in
/// Hamming distance, penalize that count sublinearly, and weight the pair by
/// how close `j` is to `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankLossSpec {
    k: usize,
    /// `rank[i * k + j]`: 1 + number of centroids strictly closer to `i`
    /// than `j` (so the nearest neighbor of `i` has rank 1, or 2 when `i`
    /// itself is counted at distance 0).
    rank: Vec<u32>,
    /// `alpha[r] = 1 / r` for `r >= 1`.
    alpha: Vec<f64>,
    /// `ell[n] = alpha[1] + ... + alpha[n]`, `ell[0] = 0`.
    ell: Vec<f64>,
}

impl RankLossSpec {
    pub fn new(c: &CentroidDistances) -> Self {
        let k = c.k();
        let mut rank = vec![0u32; k * k];
        for i in 0..k {
            for j in 0..k {
                let dij = c.get(i, j);
                rank[i * k + j] = 1 + (0..k).filter(|&l| c.get(i, l) < dij).count() as u32;
            }
        }
        let mut alpha = vec![0.0; k + 1];
        let mut ell = vec![0.0; k + 1];
        for r in 1..=k {
            alpha[r] = 1.0 / r as f64;
            ell[r] = ell[r - 1] + alpha[r];
        }
        Self { k, rank, alpha, ell }
    }

    pub fn rank(&self, i: usize, j: usize) -> u32 {
        self.rank[i * self.k + j]
    }

    pub fn alpha(&self, r: usize) -> f64 {
        self.alpha[r]
    }

    pub fn ell(&self, n: usize) -> f64 {
        self.ell[n]
    }
}

/// Full evaluation, `O(K^3)`.
pub fn rank_loss(perm: &[u8], c: &CentroidDistances, spec: &RankLossSpec) -> Result<f64> {
    Ok(RankObjective::new(c, spec, perm.to_vec())?.loss())
}

/// Loss change for exchanging the words of `a` and `b`. Builds the
/// violation cache first (`O(K^3)`); the annealer keeps a
/// [`RankObjective`] alive so each delta costs `O(K^2)`.
pub fn rank_loss_delta(
    perm: &[u8],
    swap: (usize, usize),
    c: &CentroidDistances,
    spec: &RankLossSpec,
) -> Result<f64> {
    let obj = RankObjective::new(c, spec, perm.to_vec())?;
    super::check_swap(swap, obj.k)?;
    Ok(obj.delta(swap.0, swap.1))
}

#[derive(Clone, Debug)]
pub struct RankObjective {
    k: usize,
    dist: Vec<f64>,
    pair_weight: Vec<f64>,
    ell: Vec<f64>,
    perm: Vec<u8>,
    /// Violation count per ordered pair under the current assignment.
    viol: Vec<u32>,
    loss: f64,
}

impl RankObjective {
    pub fn new(c: &CentroidDistances, spec: &RankLossSpec, perm: Vec<u8>) -> Result<Self> {
        let k = c.k();
        check_perm(&perm, k)?;
        if spec.k != k {
            return Err(crate::error::Error::invalid("rank spec built for a different K"));
        }
        let dist: Vec<f64> = (0..k * k).map(|ij| c.get(ij / k, ij % k)).collect();
        let pair_weight = spec.rank.iter().map(|&r| spec.alpha[r as usize]).collect();
        let mut obj = Self {
            k,
            dist,
            pair_weight,
            ell: spec.ell.clone(),
            perm,
            viol: vec![0; k * k],
            loss: 0.0,
        };
        for i in 0..k {
            for j in 0..k {
                obj.viol[i * k + j] = obj.count_row_entry(i, j, |x| obj.perm[x]);
            }
        }
        obj.loss = obj.total();
        Ok(obj)
    }

    /// Violations of pair `(i, j)` under the word map `word`.
    #[inline]
    fn count_row_entry(&self, i: usize, j: usize, word: impl Fn(usize) -> u8) -> u32 {
        let k = self.k;
        let row = &self.dist[i * k..(i + 1) * k];
        let wi = word(i);
        let dij = row[j];
        let hij = hamming_word(wi, word(j));
        let mut count = 0;
        for (l, &dil) in row.iter().enumerate() {
            if dij < dil && hij > hamming_word(wi, word(l)) {
                count += 1;
            }
        }
        count
    }

    fn total(&self) -> f64 {
        self.viol
            .iter()
            .zip(&self.pair_weight)
            .map(|(&v, &w)| w * self.ell[v as usize])
            .sum()
    }

    /// Calls `f(index, new_violations)` for every pair whose count changes
    /// when `a` and `b` exchange words.
    fn for_each_change(&self, a: usize, b: usize, mut f: impl FnMut(usize, u32)) {
        let k = self.k;
        let swapped = |x: usize| {
            if x == a {
                self.perm[b]
            } else if x == b {
                self.perm[a]
            } else {
                self.perm[x]
            }
        };
        for i in 0..k {
            let idx = i * k;
            if i == a || i == b {
                for j in 0..k {
                    let v = self.count_row_entry(i, j, swapped);
                    if v != self.viol[idx + j] {
                        f(idx + j, v);
                    }
                }
                continue;
            }
            let wi = self.perm[i];
            let ha = hamming_word(wi, self.perm[a]);
            let hb = hamming_word(wi, self.perm[b]);
            let (dia, dib) = (self.dist[idx + a], self.dist[idx + b]);
            for j in 0..k {
                let v = if j == a || j == b {
                    self.count_row_entry(i, j, swapped)
                } else {
                    // Only the comparisons against a and b move: their Hamming
                    // distances from i trade places.
                    let hij = hamming_word(wi, self.perm[j]);
                    let dij = self.dist[idx + j];
                    let closer_a = dij < dia;
                    let closer_b = dij < dib;
                    if closer_a == closer_b {
                        continue;
                    }
                    let old = (closer_a && hij > ha) as i64 + (closer_b && hij > hb) as i64;
                    let new = (closer_a && hij > hb) as i64 + (closer_b && hij > ha) as i64;
                    if old == new {
                        continue;
                    }
                    (self.viol[idx + j] as i64 - old + new) as u32
                };
                if v != self.viol[idx + j] {
                    f(idx + j, v);
                }
            }
        }
    }
}

impl SwapObjective for RankObjective {
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
        let mut d = 0.0;
        self.for_each_change(a, b, |idx, v| {
            d += self.pair_weight[idx] * (self.ell[v as usize] - self.ell[self.viol[idx] as usize]);
        });
        d
    }

    fn apply(&mut self, a: usize, b: usize) {
        let mut changes = Vec::new();
        self.for_each_change(a, b, |idx, v| changes.push((idx, v)));
        for (idx, v) in changes {
            let old = self.viol[idx];
            self.loss += self.pair_weight[idx] * (self.ell[v as usize] - self.ell[old as usize]);
            self.viol[idx] = v;
        }
        self.perm.swap(a, b);
    }

    fn exact_loss(&self) -> f64 {
        self.total()
    }
}
