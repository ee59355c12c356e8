//! Non-exhaustive search: a coarse partition (inverted file or inverted
//! multi-index) whose lists hold polysemous codes of residual vectors.
//!
//! A query visits cells in increasing coarse distance. In each visited list
//! the query residual with respect to that cell is encoded once for the
//! Hamming filter and turned into a lookup table for re-ranking.

mod graph;
mod quantizer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use graph::{knn_graph, read_graph, write_graph_ivecs, GraphRow, GraphWriter, KnnGraph, NeighborSearch};
pub use quantizer::{CoarseKind, CoarseQuantizer};

use crate::dataio::VectorSet;
use crate::distance::dot;
use crate::error::{Error, Result};
use crate::flatindex::{hamming, threshold_from_curve, Calibration, FlatIndex, ResultList, TopK};
use crate::polyopt::{optimize_pq, PolyConfig};
use crate::pqcore::{sub_seed, CodeTable, PqConfig, ProductQuantizer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseConfig {
    pub kind: CoarseKind,
    /// Centroids per coarse codebook (IMI has `k_coarse^2` cells).
    pub k_coarse: usize,
    /// Maximum number of cells visited per query.
    pub nprobe: usize,
    /// Maximum number of codes scanned per query, counted before filtering.
    pub cap: usize,
    /// Share of scanned codes the Hamming filter should reject.
    pub filter_rate: f64,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            kind: CoarseKind::Ivf,
            k_coarse: 1024,
            nprobe: 16,
            cap: 10_000,
            filter_rate: 0.8,
            kmeans_iters: 25,
            seed: 1234,
        }
    }
}

impl CoarseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nprobe == 0 || self.cap == 0 {
            return Err(Error::invalid("nprobe and cap must both be at least 1"));
        }
        if self.k_coarse == 0 {
            return Err(Error::invalid("k_coarse must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.filter_rate) {
            return Err(Error::invalid(format!(
                "filter rate must lie in [0, 1), got {}",
                self.filter_rate
            )));
        }
        Ok(())
    }
}

/// How per-cell lookup tables are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TableMode {
    /// Residual per visited cell, table computed from scratch.
    #[default]
    PerCell,
    /// `|q - c - r|^2 = |q - c|^2 + (|r|^2 + 2<c, r>) - 2<q, r>`: the middle
    /// term is stored per coarse centroid, the last computed once per query.
    Precomputed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseSearchParams {
    pub k: usize,
    pub nprobe: usize,
    pub cap: usize,
    pub tau: u32,
    pub tables: TableMode,
}

/// Trained coarse level plus residual quantizer.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedCoarse {
    pub coarse: CoarseQuantizer,
    pub pq: ProductQuantizer,
    pub calibration: Calibration,
}

fn residuals(coarse: &CoarseQuantizer, x: &VectorSet) -> VectorSet {
    let dim = x.dim();
    let mut data = vec![0f32; x.len() * dim];
    let rows = 256;
    crate::par::for_each_chunk_mut(&mut data, rows * dim, |chunk, out| {
        let mut c = vec![0f32; dim];
        for (r, o) in out.chunks_exact_mut(dim).enumerate() {
            let row = x.row(chunk * rows + r);
            let (cell, _) = coarse.assign(row);
            coarse.centroid_into(cell, &mut c);
            for ((o, v), c) in o.iter_mut().zip(row).zip(&c) {
                *o = v - c;
            }
        }
    });
    VectorSet::with_ids(dim, data, x.ids().to_vec()).expect("shape preserved")
}

/// Trains the coarse codebook(s), the residual PQ, optionally its index
/// assignment, and a global Hamming threshold for the in-list filter.
///
/// The threshold is calibrated on training residuals: up to 1000 of them act
/// as queries against the codes of the rest.
pub fn train_coarse(
    train: &VectorSet,
    config: &CoarseConfig,
    pq_config: &PqConfig,
    poly: Option<&PolyConfig>,
) -> Result<TrainedCoarse> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("coarse training set is empty"));
    }
    log::info!(
        "training {} coarse quantizer with {} centroids per codebook",
        config.kind,
        config.k_coarse
    );
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, u64::MAX));
    let coarse = CoarseQuantizer::train(
        config.kind,
        train.as_slice(),
        train.dim(),
        config.k_coarse,
        config.kmeans_iters,
        &mut rng,
    )?;
    let res = residuals(&coarse, train);
    let mut pq = ProductQuantizer::train(&res, pq_config)?;
    if let Some(poly) = poly {
        pq = optimize_pq(&pq, poly)?.0;
    }
    let calibration = residual_threshold(&pq, &res, config.filter_rate)?;
    log::info!(
        "in-list threshold tau = {} keeps {:.3} of codes",
        calibration.tau,
        calibration.survivor_fraction
    );
    Ok(TrainedCoarse {
        coarse,
        pq,
        calibration,
    })
}

/// Global in-list threshold for `pq` on the residuals of `train` with
/// respect to `coarse`.
pub fn calibrate_residuals(
    coarse: &CoarseQuantizer,
    pq: &ProductQuantizer,
    train: &VectorSet,
    filter_rate: f64,
) -> Result<Calibration> {
    residual_threshold(pq, &residuals(coarse, train), filter_rate)
}

fn residual_threshold(pq: &ProductQuantizer, res: &VectorSet, filter_rate: f64) -> Result<Calibration> {
    let n = res.len();
    if n < 2 {
        return threshold_from_curve(&vec![1.0; pq.code_bits() + 1], filter_rate);
    }
    let nq = (n / 10).clamp(1, 1000);
    let queries = res.head(nq);
    let rest: Vec<usize> = (nq..n).collect();
    let mut flat = FlatIndex::new(pq.clone());
    flat.add(&res.select(&rest))?;
    let curve = flat.survivor_curve(&queries)?;
    threshold_from_curve(&curve, filter_rate)
}

/// Inverted lists in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseIndex {
    coarse: CoarseQuantizer,
    pq: ProductQuantizer,
    /// `offsets[c]..offsets[c + 1]` is cell `c`'s range.
    offsets: Vec<u64>,
    ids: Vec<u64>,
    codes: Vec<u8>,
    tau: u32,
    precomputed: Option<Vec<f32>>,
}

/// One inverted list, borrowed from the index.
#[derive(Clone, Copy, Debug)]
pub struct InvertedList<'a> {
    pub cell: usize,
    pub ids: &'a [u64],
    pub codes: &'a [u8],
}

impl<'a> InvertedList<'a> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Accumulates encoded vectors, then lays them out by cell.
#[derive(Debug)]
pub struct CoarseIndexBuilder {
    trained: TrainedCoarse,
    cells: Vec<u32>,
    ids: Vec<u64>,
    codes: Vec<u8>,
}

impl CoarseIndexBuilder {
    pub fn new(trained: TrainedCoarse) -> Self {
        Self {
            trained,
            cells: Vec::new(),
            ids: Vec::new(),
            codes: Vec::new(),
        }
    }

    pub fn add(&mut self, x: &VectorSet) -> Result<()> {
        if x.is_empty() {
            return Ok(());
        }
        let dim = self.trained.coarse.dim();
        if x.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: x.dim(),
            });
        }
        let cs = self.trained.pq.code_size();
        let coarse = &self.trained.coarse;
        let pq = &self.trained.pq;
        let encoded = crate::par::map_range(x.len().div_ceil(512), |chunk| {
            let start = chunk * 512;
            let end = (start + 512).min(x.len());
            let mut cells = Vec::with_capacity(end - start);
            let mut codes = vec![0u8; (end - start) * cs];
            let mut c = vec![0f32; dim];
            let mut r = vec![0f32; dim];
            for (i, code) in (start..end).zip(codes.chunks_exact_mut(cs)) {
                let row = x.row(i);
                let (cell, _) = coarse.assign(row);
                coarse.centroid_into(cell, &mut c);
                for ((r, v), c) in r.iter_mut().zip(row).zip(&c) {
                    *r = v - c;
                }
                pq.encode_into(&r, code);
                cells.push(cell as u32);
            }
            (cells, codes)
        });
        for (cells, codes) in encoded {
            self.cells.extend(cells);
            self.codes.extend(codes);
        }
        self.ids.extend_from_slice(x.ids());
        Ok(())
    }

    pub fn finish(self) -> CoarseIndex {
        let n_cells = self.trained.coarse.n_cells();
        let cs = self.trained.pq.code_size();
        let mut offsets = vec![0u64; n_cells + 1];
        for &c in &self.cells {
            offsets[c as usize + 1] += 1;
        }
        for c in 0..n_cells {
            offsets[c + 1] += offsets[c];
        }
        let mut cursor: Vec<u64> = offsets[..n_cells].to_vec();
        let mut ids = vec![0u64; self.ids.len()];
        let mut codes = vec![0u8; self.codes.len()];
        for (i, &c) in self.cells.iter().enumerate() {
            let pos = cursor[c as usize] as usize;
            cursor[c as usize] += 1;
            ids[pos] = self.ids[i];
            codes[pos * cs..(pos + 1) * cs].copy_from_slice(&self.codes[i * cs..(i + 1) * cs]);
        }
        CoarseIndex {
            coarse: self.trained.coarse,
            pq: self.trained.pq,
            offsets,
            ids,
            codes,
            tau: self.trained.calibration.tau,
            precomputed: None,
        }
    }
}

/// Assigns every database vector to its nearest cell and stores its
/// residual code there.
pub fn build(database: &VectorSet, trained: TrainedCoarse) -> Result<CoarseIndex> {
    let mut b = CoarseIndexBuilder::new(trained);
    b.add(database)?;
    Ok(b.finish())
}

impl CoarseIndex {
    pub fn from_parts(
        coarse: CoarseQuantizer,
        pq: ProductQuantizer,
        offsets: Vec<u64>,
        ids: Vec<u64>,
        codes: Vec<u8>,
        tau: u32,
    ) -> Result<Self> {
        if offsets.len() != coarse.n_cells() + 1
            || offsets[0] != 0
            || offsets.windows(2).any(|w| w[0] > w[1])
            || *offsets.last().unwrap() as usize != ids.len()
        {
            return Err(Error::invalid("inverted list offsets are inconsistent"));
        }
        if codes.len() != ids.len() * pq.code_size() || pq.dim() != coarse.dim() {
            return Err(Error::invalid("inverted list payload does not match the quantizer"));
        }
        if tau as usize > pq.code_bits() {
            return Err(Error::invalid("stored threshold exceeds the code length"));
        }
        Ok(Self {
            coarse,
            pq,
            offsets,
            ids,
            codes,
            tau,
            precomputed: None,
        })
    }

    pub fn coarse(&self) -> &CoarseQuantizer {
        &self.coarse
    }

    pub fn pq(&self) -> &ProductQuantizer {
        &self.pq
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    /// Calibrated default threshold for the in-list filter.
    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn set_tau(&mut self, tau: u32) -> Result<()> {
        if tau as usize > self.pq.code_bits() {
            return Err(Error::invalid(format!(
                "tau = {tau} exceeds the code length of {} bits",
                self.pq.code_bits()
            )));
        }
        self.tau = tau;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Swaps in a quantizer that differs only in its index assignment and
    /// rewrites the stored words to match.
    pub fn relabel(&mut self, pq: ProductQuantizer) -> Result<()> {
        if pq.centroids() != self.pq.centroids() || pq.nbits() != self.pq.nbits() {
            return Err(Error::invalid("relabeling requires identical codebooks"));
        }
        let cs = pq.code_size();
        for code in self.codes.chunks_exact_mut(cs) {
            let indices = self.pq.code_indices(code);
            code.copy_from_slice(&pq.code_from_indices(&indices)?);
        }
        self.pq = pq;
        self.precomputed = None;
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.coarse.n_cells()
    }

    pub fn list(&self, cell: usize) -> InvertedList<'_> {
        let (a, b) = (self.offsets[cell] as usize, self.offsets[cell + 1] as usize);
        let cs = self.pq.code_size();
        InvertedList {
            cell,
            ids: &self.ids[a..b],
            codes: &self.codes[a * cs..b * cs],
        }
    }

    pub fn list_sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| (w[1] - w[0]) as usize).collect()
    }

    pub fn enumerate_cells(&self, query: &[f32], nprobe: usize) -> Vec<(usize, f32)> {
        self.coarse.enumerate_cells(query, nprobe)
    }

    /// Fills the per-centroid term tables used by [`TableMode::Precomputed`].
    /// IMI needs an even number of sub-quantizers so each lies in one half.
    pub fn precompute_tables(&mut self) -> Result<()> {
        if self.precomputed.is_some() {
            return Ok(());
        }
        let (m, ksub, dsub) = (self.pq.m(), self.pq.ksub(), self.pq.dsub());
        let k = self.coarse.k();
        if let CoarseQuantizer::Imi { split, .. } = &self.coarse {
            if split % dsub != 0 {
                return Err(Error::invalid(
                    "precomputed tables need sub-quantizers aligned with the multi-index halves",
                ));
            }
        }
        let norms: Vec<f32> = self.pq.centroids().chunks_exact(dsub).map(|c| dot(c, c)).collect();
        // Row `a` covers every sub-quantizer for IVF; for IMI, codebook-half
        // rows are stacked: first-half centroids then second-half ones.
        let rows = match self.coarse {
            CoarseQuantizer::Ivf { .. } => k,
            CoarseQuantizer::Imi { .. } => 2 * k,
        };
        let tables = crate::par::map_range(rows, |row| {
            let (cell_vec, sub_range) = match &self.coarse {
                CoarseQuantizer::Ivf { .. } => (self.coarse.centroid(row), 0..m),
                CoarseQuantizer::Imi {
                    k,
                    split,
                    first,
                    second,
                    dim,
                } => {
                    let mut full = vec![0f32; *dim];
                    let half_m = split / dsub;
                    if row < *k {
                        full[..*split].copy_from_slice(&first[row * split..(row + 1) * split]);
                        (full, 0..half_m)
                    } else {
                        let r = row - k;
                        let rest = dim - split;
                        full[*split..].copy_from_slice(&second[r * rest..(r + 1) * rest]);
                        (full, half_m..m)
                    }
                }
            };
            let mut t = vec![0f32; m * ksub];
            for sub in sub_range {
                let c = &cell_vec[sub * dsub..(sub + 1) * dsub];
                for j in 0..ksub {
                    t[sub * ksub + j] = norms[sub * ksub + j] + 2.0 * dot(c, self.pq.centroid(sub, j));
                }
            }
            t
        });
        self.precomputed = Some(tables.concat());
        Ok(())
    }

    fn precomputed_row(&self, cell: usize, out: &mut [f32]) {
        let t = self.precomputed.as_ref().expect("tables computed");
        let len = self.pq.m() * self.pq.ksub();
        match self.coarse {
            CoarseQuantizer::Ivf { .. } => out.copy_from_slice(&t[cell * len..(cell + 1) * len]),
            CoarseQuantizer::Imi { k, .. } => {
                let (a, b) = (cell / k, cell % k);
                let ra = &t[a * len..(a + 1) * len];
                let rb = &t[(k + b) * len..(k + b + 1) * len];
                // Each half fills only its own sub-quantizers; the rest are 0.
                for ((o, x), y) in out.iter_mut().zip(ra).zip(rb) {
                    *o = x + y;
                }
            }
        }
    }

    /// Probes cells in increasing coarse distance until `nprobe` cells were
    /// visited or `cap` codes scanned; inside each list keeps codes within
    /// Hamming distance `tau` of the residual query code and ranks them by
    /// asymmetric distance.
    pub fn search(&self, query: &[f32], params: &CoarseSearchParams) -> Result<ResultList> {
        if query.len() != self.coarse.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.coarse.dim(),
                actual: query.len(),
            });
        }
        if params.tau as usize > self.pq.code_bits() {
            return Err(Error::invalid(format!(
                "threshold tau = {} exceeds the code length of {} bits",
                params.tau,
                self.pq.code_bits()
            )));
        }
        if params.k == 0 || params.nprobe == 0 || params.cap == 0 {
            return Ok(ResultList::default());
        }
        if params.tables == TableMode::Precomputed && self.precomputed.is_none() {
            return Err(Error::invalid("precomputed tables requested but not built"));
        }
        let (m, ksub, dsub) = (self.pq.m(), self.pq.ksub(), self.pq.dsub());
        let cs = self.pq.code_size();
        let filter = (params.tau as usize) < self.pq.code_bits();
        let cells = self.coarse.enumerate_cells(query, params.nprobe);

        // -2 <q_m, c_mj>, shared by every cell in precomputed mode.
        let query_terms: Vec<f32> = if params.tables == TableMode::Precomputed {
            (0..m)
                .flat_map(|sub| {
                    let q = &query[sub * dsub..(sub + 1) * dsub];
                    (0..ksub).map(move |j| -2.0 * dot(q, self.pq.centroid(sub, j)))
                })
                .collect()
        } else {
            Vec::new()
        };

        let mut top = TopK::new(params.k);
        let mut scanned = 0usize;
        let mut survivors = 0usize;
        let mut centroid = vec![0f32; query.len()];
        let mut residual = vec![0f32; query.len()];
        let mut natural = vec![0f32; m * ksub];
        for (cell, coarse_dist) in cells {
            if scanned >= params.cap {
                break;
            }
            let list = self.list(cell);
            if list.is_empty() {
                continue;
            }
            let (table, offset, qcode) = match params.tables {
                TableMode::PerCell => {
                    self.coarse.centroid_into(cell, &mut centroid);
                    for ((r, q), c) in residual.iter_mut().zip(query).zip(&centroid) {
                        *r = q - c;
                    }
                    let lut = self.pq.compute_lut(&residual)?;
                    let qcode = self.pq.code_from_indices(&lut.argmin())?;
                    (self.pq.code_table(&lut), 0.0, qcode)
                }
                TableMode::Precomputed => {
                    self.precomputed_row(cell, &mut natural);
                    for (t, q) in natural.iter_mut().zip(&query_terms) {
                        *t += q;
                    }
                    let argmin: Vec<usize> = natural
                        .chunks_exact(ksub)
                        .map(|row| {
                            let mut best = 0;
                            for (j, &v) in row.iter().enumerate() {
                                if v < row[best] {
                                    best = j;
                                }
                            }
                            best
                        })
                        .collect();
                    let qcode = self.pq.code_from_indices(&argmin)?;
                    let mut permuted = CodeTable::from_raw(m, self.pq.nbits(), vec![0f32; m * ksub]);
                    let raw = permuted.raw_mut();
                    for sub in 0..m {
                        let assign = self.pq.assignment(sub);
                        for j in 0..ksub {
                            raw[sub * ksub + assign[j] as usize] = natural[sub * ksub + j];
                        }
                    }
                    (permuted, coarse_dist, qcode)
                }
            };
            let take = list.len().min(params.cap - scanned);
            for (code, &id) in list.codes.chunks_exact(cs).zip(list.ids).take(take) {
                if filter && hamming(&qcode, code) > params.tau {
                    continue;
                }
                survivors += 1;
                top.push(offset + table.distance(code), id);
            }
            scanned += take;
        }
        Ok(ResultList {
            hits: top.into_hits(),
            scanned,
            survivors,
        })
    }

    pub fn search_batch(&self, queries: &VectorSet, params: &CoarseSearchParams) -> Result<Vec<ResultList>> {
        crate::par::map_range(queries.len(), |i| self.search(queries.row(i), params))
            .into_iter()
            .collect()
    }
}

#[cfg(test)]
mod tests;
