//! Index-assignment optimization: relabel each sub-quantizer's centroids so
//! that the Hamming distance between their words tracks the distance between
//! the centroids themselves.
//!
//! Each sub-quantizer is an independent problem. The search over bijections
//! is simulated annealing driven by random pairwise swaps, with incremental
//! swap costs: `O(K)` for the distance loss and `O(K^2)` for the rank loss
//! (the rank loss keeps a `K x K` cache of violation counts).

mod distance_loss;
mod rank_loss;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use distance_loss::{distance_loss, distance_loss_delta, DistanceLossSpec, DistanceObjective};
pub use rank_loss::{rank_loss, rank_loss_delta, RankLossSpec, RankObjective};

use crate::error::{Error, Result};
use crate::pqcore::{sub_seed, ProductQuantizer};

#[inline]
pub(crate) fn hamming_word(a: u8, b: u8) -> u32 {
    (a ^ b).count_ones()
}

pub(crate) fn check_perm(perm: &[u8], k: usize) -> Result<()> {
    if perm.len() != k {
        return Err(Error::invalid(format!(
            "permutation has {} entries, expected {k}",
            perm.len()
        )));
    }
    let mut seen = vec![false; k];
    for &p in perm {
        let p = p as usize;
        if p >= k || seen[p] {
            return Err(Error::invalid("permutation is not a bijection"));
        }
        seen[p] = true;
    }
    Ok(())
}

pub(crate) fn check_swap((a, b): (usize, usize), k: usize) -> Result<()> {
    if a == b {
        return Err(Error::invalid(format!("swap needs two distinct indexes, got ({a}, {b})")));
    }
    if a >= k || b >= k {
        return Err(Error::invalid(format!("swap ({a}, {b}) out of range for K = {k}")));
    }
    Ok(())
}

/// Symmetric matrix of Euclidean distances between the centroids of one
/// sub-quantizer.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidDistances {
    k: usize,
    data: Vec<f64>,
}

impl CentroidDistances {
    /// `codebook` is `k x dim`, row-major.
    pub fn from_codebook(codebook: &[f32], dim: usize) -> Self {
        let k = codebook.len() / dim;
        let mut data = vec![0.0; k * k];
        for i in 0..k {
            for j in i + 1..k {
                let d = codebook[i * dim..(i + 1) * dim]
                    .iter()
                    .zip(&codebook[j * dim..(j + 1) * dim])
                    .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                data[i * k + j] = d;
                data[j * k + i] = d;
            }
        }
        Self { k, data }
    }

    pub fn from_matrix(k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * k {
            return Err(Error::invalid("distance matrix is not K x K"));
        }
        for i in 0..k {
            if data[i * k + i] != 0.0 {
                return Err(Error::invalid("distance matrix has a nonzero diagonal"));
            }
            for j in 0..k {
                let v = data[i * k + j];
                if !(v >= 0.0 && v.is_finite()) || v != data[j * k + i] {
                    return Err(Error::invalid(
                        "distance matrix must be symmetric, finite and nonnegative",
                    ));
                }
            }
        }
        Ok(Self { k, data })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    /// Same matrix with centroids renumbered: new index `i` is old `order[i]`.
    pub fn relabeled(&self, order: &[usize]) -> Self {
        let k = self.k;
        let mut data = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                data[i * k + j] = self.get(order[i], order[j]);
            }
        }
        Self { k, data }
    }
}

/// A loss over assignments that supports cheap swap updates.
pub trait SwapObjective {
    fn k(&self) -> usize;
    /// Loss of the current assignment (maintained incrementally).
    fn loss(&self) -> f64;
    fn perm(&self) -> &[u8];
    /// `L(perm with a and b exchanged) - L(perm)`.
    fn delta(&self, a: usize, b: usize) -> f64;
    fn apply(&mut self, a: usize, b: usize);
    /// Loss of the current assignment, recomputed from scratch.
    fn exact_loss(&self) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AcceptRule {
    /// Accept a non-improving swap with probability `t`, regardless of
    /// its cost.
    #[default]
    Temperature,
    /// Accept a non-improving swap with probability `exp(-delta / t)`.
    Metropolis,
}

impl FromStr for AcceptRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temperature" => Ok(Self::Temperature),
            "metropolis" => Ok(Self::Metropolis),
            _ => Err(Error::invalid(format!(
                "unknown acceptance rule '{s}' (expected temperature or metropolis)"
            ))),
        }
    }
}

impl fmt::Display for AcceptRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Temperature => "temperature",
            Self::Metropolis => "metropolis",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealSchedule {
    pub n_iter: usize,
    pub t0: f64,
    pub t_decay: f64,
    pub seed: u64,
    pub accept: AcceptRule,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            n_iter: 500_000,
            t0: 0.7,
            // A factor 0.9 every 500 iterations.
            t_decay: 0.9f64.powf(1.0 / 500.0),
            seed: 1234,
            accept: AcceptRule::Temperature,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_decay > 0.0 && self.t_decay < 1.0) {
            return Err(Error::invalid(format!("t_decay must lie in (0, 1), got {}", self.t_decay)));
        }
        if !(self.t0 > 0.0 && self.t0 <= 1.0) {
            return Err(Error::invalid(format!("t0 must lie in (0, 1], got {}", self.t0)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnealOutcome {
    /// Best assignment visited.
    pub perm: Vec<u8>,
    /// Its loss ([`anneal`] recomputes it from scratch).
    pub loss: f64,
    pub initial_loss: f64,
    /// Loss of the last state (may exceed `loss`).
    pub final_loss: f64,
    pub accepted: usize,
    /// `(iteration, current loss)` samples when tracing was requested.
    pub trace: Vec<(usize, f64)>,
}

/// Runs the annealer from the objective's current assignment. When
/// `trace_every > 0`, the current loss is sampled every `trace_every`
/// iterations (and at the end).
pub fn anneal_objective<O: SwapObjective>(
    obj: &mut O,
    schedule: &AnnealSchedule,
    trace_every: usize,
) -> Result<AnnealOutcome> {
    schedule.validate()?;
    let k = obj.k();
    let initial_loss = obj.loss();
    let mut best_perm = obj.perm().to_vec();
    let mut best_loss = initial_loss;
    let mut accepted = 0;
    let mut trace = Vec::new();
    if trace_every > 0 {
        trace.push((0, initial_loss));
    }
    if k >= 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        let mut t = schedule.t0;
        for it in 0..schedule.n_iter {
            let a = rng.random_range(0..k);
            let mut b = rng.random_range(0..k - 1);
            if b >= a {
                b += 1;
            }
            let delta = obj.delta(a, b);
            let accept = delta < 0.0
                || match schedule.accept {
                    AcceptRule::Temperature => rng.random::<f64>() < t,
                    AcceptRule::Metropolis => rng.random::<f64>() < (-delta / t).exp(),
                };
            if accept {
                obj.apply(a, b);
                accepted += 1;
                if obj.loss() < best_loss {
                    best_loss = obj.loss();
                    best_perm.copy_from_slice(obj.perm());
                }
            }
            t *= schedule.t_decay;
            if trace_every > 0 && (it + 1) % trace_every == 0 {
                trace.push((it + 1, obj.loss()));
            }
        }
    }
    if trace_every > 0 && trace.last().map(|t| t.0) != Some(schedule.n_iter) {
        trace.push((schedule.n_iter, obj.loss()));
    }
    let final_loss = obj.exact_loss();
    Ok(AnnealOutcome {
        perm: best_perm,
        loss: best_loss,
        initial_loss,
        final_loss,
        accepted,
        trace,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    Distance,
    Rank,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distance" => Ok(Self::Distance),
            "rank" => Ok(Self::Rank),
            _ => Err(Error::invalid(format!("unknown loss '{s}' (expected distance or rank)"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Distance => "distance",
            Self::Rank => "rank",
        })
    }
}

/// Everything needed to optimize one quantizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolyConfig {
    pub loss: LossKind,
    pub alpha: f64,
    pub schedule: AnnealSchedule,
}

impl Default for PolyConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Distance,
            alpha: 0.5,
            schedule: AnnealSchedule::default(),
        }
    }
}

/// Anneals one sub-quantizer from the identity assignment.
pub fn anneal(
    c: &CentroidDistances,
    nbits: u32,
    config: &PolyConfig,
    trace_every: usize,
) -> Result<AnnealOutcome> {
    let identity: Vec<u8> = (0..c.k()).map(|i| i as u8).collect();
    match config.loss {
        LossKind::Distance => {
            let spec = DistanceLossSpec::fit(c, nbits, config.alpha)?;
            let mut obj = DistanceObjective::new(c, &spec, identity)?;
            let mut out = anneal_objective(&mut obj, &config.schedule, trace_every)?;
            out.loss = distance_loss(&out.perm, c, &spec)?;
            Ok(out)
        }
        LossKind::Rank => {
            let spec = RankLossSpec::new(c);
            let mut obj = RankObjective::new(c, &spec, identity)?;
            let mut out = anneal_objective(&mut obj, &config.schedule, trace_every)?;
            out.loss = rank_loss(&out.perm, c, &spec)?;
            Ok(out)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubReport {
    pub initial_loss: f64,
    pub loss: f64,
    pub accepted: usize,
}

/// Replaces every sub-quantizer's assignment with an annealed one. The
/// codebooks are untouched. Sub-quantizer `m` uses a seed derived from
/// `config.schedule.seed` and `m`, so results do not depend on threading.
pub fn optimize_pq(pq: &ProductQuantizer, config: &PolyConfig) -> Result<(ProductQuantizer, Vec<SubReport>)> {
    config.schedule.validate()?;
    log::info!(
        "optimizing index assignment: {} loss, {} iterations per sub-quantizer",
        config.loss,
        config.schedule.n_iter
    );
    let outcomes = crate::par::map_range(pq.m(), |m| {
        let c = CentroidDistances::from_codebook(pq.sub_codebook(m), pq.dsub());
        let mut sub = *config;
        sub.schedule.seed = sub_seed(config.schedule.seed, m as u64);
        anneal(&c, pq.nbits(), &sub, 0)
    });
    let mut out = pq.clone();
    let mut reports = Vec::with_capacity(pq.m());
    for (m, o) in outcomes.into_iter().enumerate() {
        let o = o?;
        log::debug!("sub-quantizer {m}: loss {:.4} -> {:.4}", o.initial_loss, o.loss);
        out.set_assignment(m, &o.perm)?;
        reports.push(SubReport {
            initial_loss: o.initial_loss,
            loss: o.loss,
            accepted: o.accepted,
        });
    }
    Ok((out, reports))
}

#[cfg(test)]
mod tests;
