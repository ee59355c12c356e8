use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataio::VectorSet;
use crate::error::{Error, Result};

const ORTHO_TOLERANCE: f64 = 1e-4;

/// A fixed transform `y = R (x - shift)` applied before training and
/// indexing. Both parts are optional.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreprocessSpec {
    dim: usize,
    /// Row-major `dim x dim`.
    rotation: Option<Vec<f32>>,
    mean_shift: Option<Vec<f32>>,
}

impl PreprocessSpec {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            rotation: None,
            mean_shift: None,
        }
    }

    pub fn new(dim: usize, rotation: Option<Vec<f32>>, mean_shift: Option<Vec<f32>>) -> Result<Self> {
        if let Some(r) = &rotation {
            if r.len() != dim * dim {
                return Err(Error::invalid(format!(
                    "rotation has {} entries, expected {}",
                    r.len(),
                    dim * dim
                )));
            }
            check_orthogonal(r, dim)?;
        }
        if let Some(s) = &mean_shift {
            if s.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: s.len(),
                });
            }
        }
        Ok(Self {
            dim,
            rotation,
            mean_shift,
        })
    }

    /// A Haar-random orthogonal matrix from the QR factorization of a
    /// Gaussian matrix, reproducible from `seed`.
    pub fn random_rotation(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q: Vec<f64> = (0..dim * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        // Modified Gram-Schmidt over rows, run twice for stability.
        for _ in 0..2 {
            for i in 0..dim {
                for j in 0..i {
                    let proj: f64 = (0..dim).map(|c| q[i * dim + c] * q[j * dim + c]).sum();
                    for c in 0..dim {
                        q[i * dim + c] -= proj * q[j * dim + c];
                    }
                }
                let norm = (0..dim).map(|c| q[i * dim + c].powi(2)).sum::<f64>().sqrt();
                for c in 0..dim {
                    q[i * dim + c] /= norm;
                }
            }
        }
        Self {
            dim,
            rotation: Some(q.into_iter().map(|v| v as f32).collect()),
            mean_shift: None,
        }
    }

    pub fn with_mean_shift(mut self, shift: Vec<f32>) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: shift.len(),
            });
        }
        self.mean_shift = Some(shift);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rotation(&self) -> Option<&[f32]> {
        self.rotation.as_deref()
    }

    pub fn mean_shift(&self) -> Option<&[f32]> {
        self.mean_shift.as_deref()
    }

    pub fn is_identity(&self) -> bool {
        self.rotation.is_none() && self.mean_shift.is_none()
    }

    pub fn apply_row(&self, x: &[f32], out: &mut [f32]) {
        let mut centered = x.to_vec();
        if let Some(s) = &self.mean_shift {
            for (c, m) in centered.iter_mut().zip(s) {
                *c -= m;
            }
        }
        match &self.rotation {
            Some(r) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = crate::distance::dot(&r[i * self.dim..(i + 1) * self.dim], &centered);
                }
            }
            None => out.copy_from_slice(&centered),
        }
    }
}

fn check_orthogonal(r: &[f32], dim: usize) -> Result<()> {
    for i in 0..dim {
        for j in i..dim {
            // (R^T R)_{ij} = sum_k R_{ki} R_{kj}
            let v: f64 = (0..dim)
                .map(|k| r[k * dim + i] as f64 * r[k * dim + j] as f64)
                .sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if (v - want).abs() > ORTHO_TOLERANCE {
                return Err(Error::invalid(format!(
                    "rotation is not orthogonal: (R^T R)[{i}][{j}] = {v}"
                )));
            }
        }
    }
    Ok(())
}

/// Applies `p` to every row.
pub fn apply_preprocess(x: &VectorSet, p: &PreprocessSpec) -> Result<VectorSet> {
    if x.dim() != p.dim && !x.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: p.dim,
            actual: x.dim(),
        });
    }
    if p.is_identity() {
        return Ok(x.clone());
    }
    let dim = x.dim();
    let mut out = vec![0f32; x.len() * dim];
    crate::par::for_each_chunk_mut(&mut out, dim.max(1) * 256, |chunk_idx, chunk| {
        for (r, o) in chunk.chunks_exact_mut(dim).enumerate() {
            p.apply_row(x.row(chunk_idx * 256 + r), o);
        }
    });
    VectorSet::with_ids(dim, out, x.ids().to_vec())
}
