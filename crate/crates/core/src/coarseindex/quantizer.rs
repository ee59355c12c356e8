use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use crate::distance::l2_sqr;
use crate::error::{Error, Result};
use crate::pqcore::kmeans;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CoarseKind {
    /// One k-means codebook over the full space.
    #[default]
    Ivf,
    /// Two codebooks over the two halves; cells are pairs.
    Imi,
}

impl FromStr for CoarseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ivf" => Ok(Self::Ivf),
            "imi" => Ok(Self::Imi),
            _ => Err(Error::invalid(format!("unknown coarse kind '{s}' (expected ivf or imi)"))),
        }
    }
}

impl fmt::Display for CoarseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ivf => "ivf",
            Self::Imi => "imi",
        })
    }
}

/// The partitioning level: a cell id is a centroid index (IVF) or
/// `a * k + b` for the pair of half-centroids `(a, b)` (IMI).
#[derive(Clone, Debug, PartialEq)]
pub enum CoarseQuantizer {
    Ivf {
        dim: usize,
        k: usize,
        centroids: Vec<f32>,
    },
    Imi {
        dim: usize,
        k: usize,
        /// Width of the first half; the second has `dim - split`.
        split: usize,
        first: Vec<f32>,
        second: Vec<f32>,
    },
}

#[derive(Clone, Copy, Debug)]
struct Frontier {
    dist: f32,
    cell: u64,
    i: usize,
    j: usize,
}

impl PartialEq for Frontier {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Frontier {}
impl PartialOrd for Frontier {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Frontier {
    fn cmp(&self, o: &Self) -> Ordering {
        self.dist.total_cmp(&o.dist).then(self.cell.cmp(&o.cell))
    }
}

fn sorted_distances(q: &[f32], book: &[f32], dim: usize) -> Vec<(f32, usize)> {
    let mut d: Vec<(f32, usize)> = book.chunks_exact(dim).map(|c| l2_sqr(q, c)).zip(0..).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d
}

impl CoarseQuantizer {
    pub fn train<R: rand::Rng>(
        kind: CoarseKind,
        data: &[f32],
        dim: usize,
        k: usize,
        iters: usize,
        rng: &mut R,
    ) -> Result<Self> {
        match kind {
            CoarseKind::Ivf => {
                let km = kmeans::kmeans(data, dim, k, iters, rng)?;
                Ok(Self::Ivf {
                    dim,
                    k,
                    centroids: km.centroids,
                })
            }
            CoarseKind::Imi => {
                if dim < 2 {
                    return Err(Error::invalid("multi-index needs at least two dimensions"));
                }
                let split = dim / 2;
                let n = data.len() / dim;
                let mut a = Vec::with_capacity(n * split);
                let mut b = Vec::with_capacity(n * (dim - split));
                for row in data.chunks_exact(dim) {
                    a.extend_from_slice(&row[..split]);
                    b.extend_from_slice(&row[split..]);
                }
                let first = kmeans::kmeans(&a, split, k, iters, rng)?.centroids;
                let second = kmeans::kmeans(&b, dim - split, k, iters, rng)?.centroids;
                Ok(Self::Imi {
                    dim,
                    k,
                    split,
                    first,
                    second,
                })
            }
        }
    }

    pub fn kind(&self) -> CoarseKind {
        match self {
            Self::Ivf { .. } => CoarseKind::Ivf,
            Self::Imi { .. } => CoarseKind::Imi,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Ivf { dim, .. } | Self::Imi { dim, .. } => *dim,
        }
    }

    /// Centroids per codebook.
    pub fn k(&self) -> usize {
        match self {
            Self::Ivf { k, .. } | Self::Imi { k, .. } => *k,
        }
    }

    pub fn n_cells(&self) -> usize {
        match self {
            Self::Ivf { k, .. } => *k,
            Self::Imi { k, .. } => k * k,
        }
    }

    /// Writes the centroid of `cell` into `out`.
    pub fn centroid_into(&self, cell: usize, out: &mut [f32]) {
        match self {
            Self::Ivf { dim, centroids, .. } => out.copy_from_slice(&centroids[cell * dim..(cell + 1) * dim]),
            Self::Imi {
                dim,
                k,
                split,
                first,
                second,
            } => {
                let (a, b) = (cell / k, cell % k);
                let rest = dim - split;
                out[..*split].copy_from_slice(&first[a * split..(a + 1) * split]);
                out[*split..].copy_from_slice(&second[b * rest..(b + 1) * rest]);
            }
        }
    }

    pub fn centroid(&self, cell: usize) -> Vec<f32> {
        let mut out = vec![0f32; self.dim()];
        self.centroid_into(cell, &mut out);
        out
    }

    /// Nearest cell and its squared distance. For IMI this is the pair of
    /// per-half nearest centroids, which is also the nearest pair overall.
    pub fn assign(&self, x: &[f32]) -> (usize, f32) {
        match self {
            Self::Ivf { dim, centroids, .. } => kmeans::nearest(centroids, *dim, x),
            Self::Imi {
                dim,
                k,
                split,
                first,
                second,
            } => {
                let (a, da) = kmeans::nearest(first, *split, &x[..*split]);
                let (b, db) = kmeans::nearest(second, dim - split, &x[*split..]);
                (a * k + b, da + db)
            }
        }
    }

    /// The `nprobe` cells closest to `q`, ascending, with their squared
    /// distances. IMI cells come from a multi-sequence traversal of the two
    /// sorted half-distance lists.
    pub fn enumerate_cells(&self, q: &[f32], nprobe: usize) -> Vec<(usize, f32)> {
        let nprobe = nprobe.min(self.n_cells());
        if nprobe == 0 {
            return Vec::new();
        }
        match self {
            Self::Ivf { dim, centroids, .. } => {
                let mut d = sorted_distances(q, centroids, *dim);
                d.truncate(nprobe);
                d.into_iter().map(|(dist, c)| (c, dist)).collect()
            }
            Self::Imi {
                dim,
                k,
                split,
                first,
                second,
            } => {
                let da = sorted_distances(&q[..*split], first, *split);
                let db = sorted_distances(&q[*split..], second, dim - split);
                let cell = |i: usize, j: usize| (da[i].1 * k + db[j].1) as u64;
                let mut heap = BinaryHeap::new();
                heap.push(Reverse(Frontier {
                    dist: da[0].0 + db[0].0,
                    cell: cell(0, 0),
                    i: 0,
                    j: 0,
                }));
                let mut out = Vec::with_capacity(nprobe);
                while out.len() < nprobe {
                    let Reverse(f) = heap.pop().expect("frontier never empties before K^2 cells");
                    out.push((f.cell as usize, f.dist));
                    // Each pair (i, j) has the unique parent (i, j - 1), or
                    // (i - 1, 0) when j = 0, so nothing is pushed twice.
                    if f.j + 1 < *k {
                        heap.push(Reverse(Frontier {
                            dist: da[f.i].0 + db[f.j + 1].0,
                            cell: cell(f.i, f.j + 1),
                            i: f.i,
                            j: f.j + 1,
                        }));
                    }
                    if f.j == 0 && f.i + 1 < *k {
                        heap.push(Reverse(Frontier {
                            dist: da[f.i + 1].0 + db[0].0,
                            cell: cell(f.i + 1, 0),
                            i: f.i + 1,
                            j: 0,
                        }));
                    }
                }
                out
            }
        }
    }
}
