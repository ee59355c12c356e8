//! Exhaustive scans over polysemous codes.
//!
//! The same stored bytes support four comparisons: asymmetric distance
//! through a lookup table (`adc`), Hamming distance to the query's own code
//! (`binary`), number of differing sub-quantizer words (`disidx`), and the
//! two-pass `dual` search that keeps only codes within Hamming distance `tau`
//! of the query code and ranks those by asymmetric distance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use crate::dataio::VectorSet;
use crate::error::{Error, Result};
use crate::pqcore::{CodeTable, ProductQuantizer};

/// Number of differing bits.
#[inline]
pub fn hamming(a: &[u8], b: &[u8]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    let mut d = 0;
    for (x, y) in (&mut ca).zip(&mut cb) {
        d += (u64::from_le_bytes(x.try_into().unwrap()) ^ u64::from_le_bytes(y.try_into().unwrap())).count_ones();
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        d += (x ^ y).count_ones();
    }
    d
}

/// Number of sub-quantizers whose stored words differ.
pub fn disidx(a: &[u8], b: &[u8], pq: &ProductQuantizer) -> u32 {
    (0..pq.m()).filter(|&m| pq.field(a, m) != pq.field(b, m)).count() as u32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Strategy {
    Adc,
    Binary,
    Disidx,
    #[default]
    Dual,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adc" => Ok(Self::Adc),
            "binary" => Ok(Self::Binary),
            "disidx" => Ok(Self::Disidx),
            "dual" => Ok(Self::Dual),
            _ => Err(Error::invalid(format!(
                "unknown strategy '{s}' (expected adc, binary, disidx or dual)"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adc => "adc",
            Self::Binary => "binary",
            Self::Disidx => "disidx",
            Self::Dual => "dual",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchParams {
    pub k: usize,
    /// Hamming threshold for the dual strategy, `0..=code_bits`.
    pub tau: u32,
    pub strategy: Strategy,
}

impl SearchParams {
    pub fn new(k: usize, tau: u32, strategy: Strategy) -> Self {
        Self { k, tau, strategy }
    }

    pub fn validate(&self, code_bits: usize) -> Result<()> {
        if self.tau as usize > code_bits {
            return Err(Error::invalid(format!(
                "threshold tau = {} exceeds the code length of {code_bits} bits",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub id: u64,
    pub score: f32,
}

/// Up to `k` hits in ascending score order, ties broken by lower id, plus
/// scan counters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultList {
    pub hits: Vec<Hit>,
    /// Codes examined.
    pub scanned: usize,
    /// Codes that reached the final scoring stage (all of them except under
    /// a Hamming filter).
    pub survivors: usize,
}

impl ResultList {
    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.hits.iter().map(|h| h.id)
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    score: f32,
    id: u64,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then(self.id.cmp(&other.id))
    }
}

/// Bounded selection of the `k` smallest `(score, id)` pairs.
#[derive(Debug)]
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Entry>,
}

impl TopK {
    pub(crate) fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, score: f32, id: u64) {
        if self.k == 0 {
            return;
        }
        let e = Entry { score, id };
        if self.heap.len() < self.k {
            self.heap.push(e);
        } else if e < *self.heap.peek().unwrap() {
            *self.heap.peek_mut().unwrap() = e;
        }
    }

    pub(crate) fn into_hits(self) -> Vec<Hit> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|e| Hit { id: e.id, score: e.score })
            .collect()
    }
}

/// Flat array of codes over one quantizer.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatIndex {
    pq: ProductQuantizer,
    codes: Vec<u8>,
    ids: Vec<u64>,
}

impl FlatIndex {
    pub fn new(pq: ProductQuantizer) -> Self {
        Self {
            pq,
            codes: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn from_parts(pq: ProductQuantizer, codes: Vec<u8>, ids: Vec<u64>) -> Result<Self> {
        if codes.len() != ids.len() * pq.code_size() {
            return Err(Error::invalid(format!(
                "{} code bytes do not match {} ids of {} bytes",
                codes.len(),
                ids.len(),
                pq.code_size()
            )));
        }
        Ok(Self { pq, codes, ids })
    }

    pub fn pq(&self) -> &ProductQuantizer {
        &self.pq
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn code(&self, pos: usize) -> &[u8] {
        let cs = self.pq.code_size();
        &self.codes[pos * cs..(pos + 1) * cs]
    }

    /// Encodes and appends `vectors`, keeping their ids.
    pub fn add(&mut self, vectors: &VectorSet) -> Result<()> {
        if vectors.is_empty() {
            return Ok(());
        }
        if vectors.dim() != self.pq.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.pq.dim(),
                actual: vectors.dim(),
            });
        }
        let codes = self.pq.encode_set(vectors)?;
        self.codes.extend_from_slice(&codes);
        self.ids.extend_from_slice(vectors.ids());
        Ok(())
    }

    /// Replaces the quantizer's index assignment and rewrites the stored
    /// words accordingly. Codebooks must be identical.
    pub fn relabel(&mut self, pq: ProductQuantizer) -> Result<()> {
        if pq.centroids() != self.pq.centroids() || pq.nbits() != self.pq.nbits() {
            return Err(Error::invalid("relabel needs a quantizer with the same codebooks"));
        }
        let cs = self.pq.code_size();
        for code in self.codes.chunks_exact_mut(cs) {
            let indices = self.pq.code_indices(code);
            code.copy_from_slice(&pq.code_from_indices(&indices)?);
        }
        self.pq = pq;
        Ok(())
    }

    /// Hamming distance from `query_code` to every stored code.
    pub fn hamming_scan(&self, query_code: &[u8], out: &mut [u32]) {
        let cs = self.pq.code_size();
        debug_assert_eq!(out.len(), self.len());
        match cs {
            8 => {
                let q = u64::from_le_bytes(query_code.try_into().unwrap());
                for (o, c) in out.iter_mut().zip(self.codes.chunks_exact(8)) {
                    *o = (q ^ u64::from_le_bytes(c.try_into().unwrap())).count_ones();
                }
            }
            16 => {
                let q0 = u64::from_le_bytes(query_code[..8].try_into().unwrap());
                let q1 = u64::from_le_bytes(query_code[8..].try_into().unwrap());
                for (o, c) in out.iter_mut().zip(self.codes.chunks_exact(16)) {
                    let c0 = u64::from_le_bytes(c[..8].try_into().unwrap());
                    let c1 = u64::from_le_bytes(c[8..].try_into().unwrap());
                    *o = (q0 ^ c0).count_ones() + (q1 ^ c1).count_ones();
                }
            }
            _ => {
                for (o, c) in out.iter_mut().zip(self.codes.chunks_exact(cs)) {
                    *o = hamming(query_code, c);
                }
            }
        }
    }

    /// Asymmetric distance from the table's query to every stored code.
    pub fn adc_scan(&self, table: &CodeTable, out: &mut [f32]) {
        let cs = self.pq.code_size();
        for (o, c) in out.iter_mut().zip(self.codes.chunks_exact(cs)) {
            *o = table.distance(c);
        }
    }

    fn check_query(&self, query: &[f32]) -> Result<()> {
        if query.len() != self.pq.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.pq.dim(),
                actual: query.len(),
            });
        }
        Ok(())
    }

    pub fn search(&self, query: &[f32], params: &SearchParams) -> Result<ResultList> {
        self.check_query(query)?;
        params.validate(self.pq.code_bits())?;
        let n = self.len();
        if params.k == 0 || n == 0 {
            return Ok(ResultList::default());
        }
        let cs = self.pq.code_size();
        let mut top = TopK::new(params.k);
        let mut survivors = n;
        match params.strategy {
            Strategy::Adc => {
                let table = self.pq.code_table(&self.pq.compute_lut(query)?);
                for (c, &id) in self.codes.chunks_exact(cs).zip(&self.ids) {
                    top.push(table.distance(c), id);
                }
            }
            Strategy::Binary => {
                let qc = self.pq.encode(query)?;
                let mut d = vec![0u32; n];
                self.hamming_scan(&qc, &mut d);
                for (&h, &id) in d.iter().zip(&self.ids) {
                    top.push(h as f32, id);
                }
            }
            Strategy::Disidx => {
                let qc = self.pq.encode(query)?;
                for (c, &id) in self.codes.chunks_exact(cs).zip(&self.ids) {
                    top.push(disidx(&qc, c, &self.pq) as f32, id);
                }
            }
            Strategy::Dual => {
                let qc = self.pq.encode(query)?;
                let mut d = vec![0u32; n];
                self.hamming_scan(&qc, &mut d);
                let passed: Vec<u32> = d
                    .iter()
                    .enumerate()
                    .filter(|(_, &h)| h <= params.tau)
                    .map(|(i, _)| i as u32)
                    .collect();
                survivors = passed.len();
                let table = self.pq.code_table(&self.pq.compute_lut(query)?);
                for &i in &passed {
                    let i = i as usize;
                    top.push(table.distance(&self.codes[i * cs..(i + 1) * cs]), self.ids[i]);
                }
            }
        }
        Ok(ResultList {
            hits: top.into_hits(),
            scanned: n,
            survivors,
        })
    }

    /// Independent searches, parallel over queries.
    pub fn search_batch(&self, queries: &VectorSet, params: &SearchParams) -> Result<Vec<ResultList>> {
        crate::par::map_range(queries.len(), |i| self.search(queries.row(i), params))
            .into_iter()
            .collect()
    }

    /// Mean fraction of stored codes within Hamming distance `tau` of the
    /// query codes, for every `tau` in `0..=code_bits`.
    pub fn survivor_curve(&self, queries: &VectorSet) -> Result<Vec<f64>> {
        let bits = self.pq.code_bits();
        if queries.is_empty() || self.is_empty() {
            return Err(Error::invalid("survivor curve needs queries and a nonempty index"));
        }
        let hists = crate::par::map_range(queries.len(), |i| -> Result<Vec<u64>> {
            let qc = self.pq.encode(queries.row(i))?;
            let mut d = vec![0u32; self.len()];
            self.hamming_scan(&qc, &mut d);
            let mut h = vec![0u64; bits + 1];
            for v in d {
                h[v as usize] += 1;
            }
            Ok(h)
        });
        let mut total = vec![0u64; bits + 1];
        for h in hists {
            for (t, v) in total.iter_mut().zip(h?) {
                *t += v;
            }
        }
        let denom = (queries.len() * self.len()) as f64;
        let mut acc = 0u64;
        Ok(total
            .into_iter()
            .map(|c| {
                acc += c;
                acc as f64 / denom
            })
            .collect())
    }
}

/// Result of threshold calibration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub tau: u32,
    /// Mean surviving fraction at `tau` on the calibration queries.
    pub survivor_fraction: f64,
    /// False when even `tau = 0` lets too many codes through; `tau` is then 0.
    pub attainable: bool,
}

/// Picks the largest `tau` whose survivor fraction is at most
/// `1 - target_filter_rate` from a survivor curve.
pub fn threshold_from_curve(curve: &[f64], target_filter_rate: f64) -> Result<Calibration> {
    if !(0.0..1.0).contains(&target_filter_rate) {
        return Err(Error::invalid(format!(
            "filter rate must lie in [0, 1), got {target_filter_rate}"
        )));
    }
    let bits = curve.len() - 1;
    if target_filter_rate == 0.0 {
        return Ok(Calibration {
            tau: bits as u32,
            survivor_fraction: curve[bits],
            attainable: true,
        });
    }
    let keep = 1.0 - target_filter_rate;
    match (0..=bits).rev().find(|&t| curve[t] <= keep) {
        Some(t) => Ok(Calibration {
            tau: t as u32,
            survivor_fraction: curve[t],
            attainable: true,
        }),
        None => {
            log::warn!(
                "filter rate {target_filter_rate} unattainable: tau = 0 keeps {:.4} of the codes",
                curve[0]
            );
            Ok(Calibration {
                tau: 0,
                survivor_fraction: curve[0],
                attainable: false,
            })
        }
    }
}

/// Calibrates `tau` so that, on `train_queries`, at least
/// `target_filter_rate` of the database is filtered out on average.
pub fn calibrate_threshold(index: &FlatIndex, train_queries: &VectorSet, target_filter_rate: f64) -> Result<Calibration> {
    let curve = index.survivor_curve(train_queries)?;
    threshold_from_curve(&curve, target_filter_rate)
}
