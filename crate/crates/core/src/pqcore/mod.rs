//! Product quantization with a relabelable index assignment per
//! sub-quantizer.
//!
//! A code stores, for each sub-quantizer `m`, the word `assign_m(q_m)` where
//! `q_m` is the index of the nearest sub-centroid. Word `m` occupies bits
//! `[m * nbits, (m + 1) * nbits)` of the packed code, least significant bit
//! first; bit `p` of the code is bit `p % 8` of byte `p / 8`. With the
//! identity assignment this is the plain PQ code; after optimization the same
//! bytes also work as a binary code under Hamming distance.

pub mod kmeans;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::VectorSet;
use crate::distance::l2_sqr;
use crate::error::{Error, Result};

pub const MAX_NBITS: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PqConfig {
    /// Number of sub-quantizers.
    pub m: usize,
    /// Bits per sub-quantizer.
    pub nbits: u32,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl PqConfig {
    pub fn new(m: usize, nbits: u32) -> Self {
        Self {
            m,
            nbits,
            kmeans_iters: 25,
            seed: 1234,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProductQuantizer {
    dim: usize,
    m: usize,
    nbits: u32,
    dsub: usize,
    ksub: usize,
    /// `m x ksub x dsub`, row-major.
    centroids: Vec<f32>,
    /// `assign[m * ksub + j]` is the stored word for centroid `j`.
    assign: Vec<u8>,
    inverse: Vec<u8>,
}

/// Derives an independent stream seed for sub-problem `index`.
pub(crate) fn sub_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn validate_shape(dim: usize, m: usize, nbits: u32) -> Result<()> {
    if m == 0 || dim == 0 || !dim.is_multiple_of(m) {
        return Err(Error::invalid(format!(
            "dimension {dim} is not divisible into {m} sub-quantizers"
        )));
    }
    if !(1..=MAX_NBITS).contains(&nbits) {
        return Err(Error::invalid(format!(
            "bits per sub-quantizer must be in 1..={MAX_NBITS}, got {nbits}"
        )));
    }
    Ok(())
}

fn check_bijection(perm: &[u8], ksub: usize) -> Result<()> {
    if perm.len() != ksub {
        return Err(Error::invalid(format!(
            "assignment has {} entries, expected {ksub}",
            perm.len()
        )));
    }
    let mut seen = vec![false; ksub];
    for &p in perm {
        let p = p as usize;
        if p >= ksub || seen[p] {
            return Err(Error::invalid("assignment is not a bijection"));
        }
        seen[p] = true;
    }
    Ok(())
}

impl ProductQuantizer {
    /// Trains each sub-codebook independently with k-means.
    pub fn train(train: &VectorSet, config: &PqConfig) -> Result<Self> {
        validate_shape(train.dim(), config.m, config.nbits)?;
        let dim = train.dim();
        let dsub = dim / config.m;
        let ksub = 1usize << config.nbits;
        let n = train.len();
        if n < ksub {
            return Err(Error::invalid(format!(
                "{n} training vectors cannot fill {ksub} centroids per sub-quantizer"
            )));
        }
        log::info!(
            "training PQ: {} sub-quantizers x {} centroids on {} vectors",
            config.m,
            ksub,
            n
        );
        let books = crate::par::map_range(config.m, |m| {
            let mut sub = Vec::with_capacity(n * dsub);
            for row in train.rows() {
                sub.extend_from_slice(&row[m * dsub..(m + 1) * dsub]);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, m as u64));
            kmeans::kmeans(&sub, dsub, ksub, config.kmeans_iters, &mut rng)
        });
        let mut centroids = Vec::with_capacity(config.m * ksub * dsub);
        for b in books {
            centroids.extend_from_slice(&b?.centroids);
        }
        Self::from_parts(dim, config.m, config.nbits, centroids, None)
    }

    /// Assembles a quantizer from raw codebooks; `assign` defaults to the
    /// identity for every sub-quantizer.
    pub fn from_parts(
        dim: usize,
        m: usize,
        nbits: u32,
        centroids: Vec<f32>,
        assign: Option<Vec<u8>>,
    ) -> Result<Self> {
        validate_shape(dim, m, nbits)?;
        let dsub = dim / m;
        let ksub = 1usize << nbits;
        if centroids.len() != m * ksub * dsub {
            return Err(Error::invalid(format!(
                "codebook has {} values, expected {}",
                centroids.len(),
                m * ksub * dsub
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("codebook contains non-finite values"));
        }
        let assign = assign.unwrap_or_else(|| (0..m).flat_map(|_| (0..ksub).map(|j| j as u8)).collect());
        if assign.len() != m * ksub {
            return Err(Error::invalid("assignment table has the wrong size"));
        }
        let mut inverse = vec![0u8; m * ksub];
        for sub in 0..m {
            let perm = &assign[sub * ksub..(sub + 1) * ksub];
            check_bijection(perm, ksub)?;
            for (j, &w) in perm.iter().enumerate() {
                inverse[sub * ksub + w as usize] = j as u8;
            }
        }
        Ok(Self {
            dim,
            m,
            nbits,
            dsub,
            ksub,
            centroids,
            assign,
            inverse,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn nbits(&self) -> u32 {
        self.nbits
    }

    pub fn dsub(&self) -> usize {
        self.dsub
    }

    pub fn ksub(&self) -> usize {
        self.ksub
    }

    /// Total code length in bits.
    pub fn code_bits(&self) -> usize {
        self.m * self.nbits as usize
    }

    /// Bytes per packed code.
    pub fn code_size(&self) -> usize {
        self.code_bits().div_ceil(8)
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Codebook of sub-quantizer `m`, `ksub x dsub`.
    pub fn sub_codebook(&self, m: usize) -> &[f32] {
        let len = self.ksub * self.dsub;
        &self.centroids[m * len..(m + 1) * len]
    }

    pub fn centroid(&self, m: usize, j: usize) -> &[f32] {
        let start = (m * self.ksub + j) * self.dsub;
        &self.centroids[start..start + self.dsub]
    }

    /// The full assignment table, `m x ksub`.
    pub fn assignments(&self) -> &[u8] {
        &self.assign
    }

    pub fn assignment(&self, m: usize) -> &[u8] {
        &self.assign[m * self.ksub..(m + 1) * self.ksub]
    }

    pub fn set_assignment(&mut self, m: usize, perm: &[u8]) -> Result<()> {
        if m >= self.m {
            return Err(Error::invalid(format!("no sub-quantizer {m}")));
        }
        check_bijection(perm, self.ksub)?;
        self.assign[m * self.ksub..(m + 1) * self.ksub].copy_from_slice(perm);
        for (j, &w) in perm.iter().enumerate() {
            self.inverse[m * self.ksub + w as usize] = j as u8;
        }
        Ok(())
    }

    /// Resets every sub-quantizer to the identity assignment.
    pub fn with_identity_assignment(&self) -> Self {
        Self::from_parts(self.dim, self.m, self.nbits, self.centroids.clone(), None)
            .expect("shape already validated")
    }

    pub fn is_identity_assignment(&self) -> bool {
        self.assign
            .chunks_exact(self.ksub)
            .all(|p| p.iter().enumerate().all(|(j, &w)| j == w as usize))
    }

    fn check_dim(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Nearest sub-centroid index per sub-quantizer, before relabeling.
    pub fn quantize(&self, x: &[f32]) -> Result<Vec<usize>> {
        self.check_dim(x)?;
        Ok((0..self.m)
            .map(|m| kmeans::nearest(self.sub_codebook(m), self.dsub, &x[m * self.dsub..(m + 1) * self.dsub]).0)
            .collect())
    }

    pub fn encode(&self, x: &[f32]) -> Result<Vec<u8>> {
        self.check_dim(x)?;
        let mut code = vec![0u8; self.code_size()];
        self.encode_into(x, &mut code);
        Ok(code)
    }

    /// Encodes without checking `x.len()`; `out` must be `code_size` bytes
    /// and is overwritten.
    pub(crate) fn encode_into(&self, x: &[f32], out: &mut [u8]) {
        out.iter_mut().for_each(|b| *b = 0);
        for m in 0..self.m {
            let (q, _) = kmeans::nearest(self.sub_codebook(m), self.dsub, &x[m * self.dsub..(m + 1) * self.dsub]);
            set_field(out, m, self.nbits, self.assign[m * self.ksub + q]);
        }
    }

    /// Encodes every row of `x`, in parallel.
    pub fn encode_set(&self, x: &VectorSet) -> Result<Vec<u8>> {
        if x.is_empty() {
            return Ok(Vec::new());
        }
        self.check_dim(x.row(0))?;
        let cs = self.code_size();
        let mut codes = vec![0u8; x.len() * cs];
        let rows = 512;
        crate::par::for_each_chunk_mut(&mut codes, rows * cs, |chunk, out| {
            for (r, code) in out.chunks_exact_mut(cs).enumerate() {
                self.encode_into(x.row(chunk * rows + r), code);
            }
        });
        Ok(codes)
    }

    /// Builds a code directly from centroid indexes (before relabeling).
    pub fn code_from_indices(&self, indices: &[usize]) -> Result<Vec<u8>> {
        if indices.len() != self.m || indices.iter().any(|&q| q >= self.ksub) {
            return Err(Error::invalid("centroid index list does not fit this quantizer"));
        }
        let mut code = vec![0u8; self.code_size()];
        for (m, &q) in indices.iter().enumerate() {
            set_field(&mut code, m, self.nbits, self.assign[m * self.ksub + q]);
        }
        Ok(code)
    }

    /// Centroid indexes stored in a code (undoing the relabeling).
    pub fn code_indices(&self, code: &[u8]) -> Vec<usize> {
        (0..self.m)
            .map(|m| self.inverse[m * self.ksub + get_field(code, m, self.nbits)] as usize)
            .collect()
    }

    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.dim);
        for (m, q) in self.code_indices(code).into_iter().enumerate() {
            out.extend_from_slice(self.centroid(m, q));
        }
        out
    }

    pub fn compute_lut(&self, query: &[f32]) -> Result<LookupTable> {
        self.check_dim(query)?;
        let mut data = Vec::with_capacity(self.m * self.ksub);
        for m in 0..self.m {
            let q = &query[m * self.dsub..(m + 1) * self.dsub];
            data.extend(self.sub_codebook(m).chunks_exact(self.dsub).map(|c| l2_sqr(q, c)));
        }
        Ok(LookupTable {
            m: self.m,
            ksub: self.ksub,
            data,
        })
    }

    /// Reorders a natural-order table so it is indexed by stored words.
    pub fn code_table(&self, lut: &LookupTable) -> CodeTable {
        let mut data = vec![0f32; lut.data.len()];
        for m in 0..self.m {
            for w in 0..self.ksub {
                data[m * self.ksub + w] = lut.data[m * self.ksub + self.inverse[m * self.ksub + w] as usize];
            }
        }
        CodeTable {
            m: self.m,
            nbits: self.nbits,
            data,
        }
    }

    /// Word stored for sub-quantizer `m` in `code`.
    #[inline]
    pub fn field(&self, code: &[u8], m: usize) -> usize {
        get_field(code, m, self.nbits)
    }
}

#[inline]
pub(crate) fn get_field(code: &[u8], m: usize, nbits: u32) -> usize {
    if nbits == 8 {
        return code[m] as usize;
    }
    let bit = m * nbits as usize;
    let byte = bit / 8;
    let shift = bit % 8;
    let lo = code[byte] as u16;
    let hi = code.get(byte + 1).copied().unwrap_or(0) as u16;
    (((lo | (hi << 8)) >> shift) & ((1u16 << nbits) - 1)) as usize
}

#[inline]
pub(crate) fn set_field(code: &mut [u8], m: usize, nbits: u32, word: u8) {
    if nbits == 8 {
        code[m] = word;
        return;
    }
    let bit = m * nbits as usize;
    let byte = bit / 8;
    let shift = bit % 8;
    let mask = ((1u16 << nbits) - 1) << shift;
    let value = (word as u16) << shift;
    code[byte] = (code[byte] & !(mask as u8)) | value as u8;
    if shift + nbits as usize > 8 {
        code[byte + 1] = (code[byte + 1] & !((mask >> 8) as u8)) | (value >> 8) as u8;
    }
}

/// Squared distances from each query sub-vector to every sub-centroid,
/// indexed by centroid (not by stored word).
#[derive(Clone, Debug, PartialEq)]
pub struct LookupTable {
    m: usize,
    ksub: usize,
    data: Vec<f32>,
}

impl LookupTable {
    pub fn get(&self, m: usize, j: usize) -> f32 {
        self.data[m * self.ksub + j]
    }

    pub fn row(&self, m: usize) -> &[f32] {
        &self.data[m * self.ksub..(m + 1) * self.ksub]
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ksub(&self) -> usize {
        self.ksub
    }

    /// Asymmetric distance estimate to a stored code.
    pub fn adc_distance(&self, pq: &ProductQuantizer, code: &[u8]) -> f32 {
        pq.code_indices(code)
            .into_iter()
            .enumerate()
            .map(|(m, q)| self.get(m, q))
            .sum()
    }

    /// Per sub-quantizer argmin, i.e. the centroid indexes `encode` picks.
    pub fn argmin(&self) -> Vec<usize> {
        (0..self.m)
            .map(|m| {
                let row = self.row(m);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v < row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// A lookup table indexed by stored word, for scanning packed codes.
#[derive(Clone, Debug)]
pub struct CodeTable {
    m: usize,
    nbits: u32,
    data: Vec<f32>,
}

impl CodeTable {
    pub(crate) fn from_raw(m: usize, nbits: u32, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), m << nbits);
        Self { m, nbits, data }
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn distance(&self, code: &[u8]) -> f32 {
        if self.nbits == 8 {
            let mut acc = 0f32;
            // Sub-quantizer m reads row m of the table.
            for (m, &b) in code[..self.m].iter().enumerate() {
                acc += self.data[(m << 8) | b as usize];
            }
            acc
        } else {
            let k = 1usize << self.nbits;
            (0..self.m)
                .map(|m| self.data[m * k + get_field(code, m, self.nbits)])
                .sum()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_pq(dim: usize, m: usize, nbits: u32, seed: u64) -> ProductQuantizer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ksub = 1 << nbits;
        let centroids = (0..dim * ksub).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
        ProductQuantizer::from_parts(dim, m, nbits, centroids, None).unwrap()
    }

    fn shuffled_assign(pq: &ProductQuantizer, seed: u64) -> Vec<u8> {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for _ in 0..pq.m() {
            let mut p: Vec<u8> = (0..pq.ksub() as u32).map(|v| v as u8).collect();
            p.shuffle(&mut rng);
            out.extend(p);
        }
        out
    }

    #[test]
    fn field_packing_round_trip() {
        for nbits in 1..=8u32 {
            let m = 11;
            let mut code = vec![0u8; (m * nbits as usize).div_ceil(8)];
            let words: Vec<u8> = (0..m).map(|i| ((i * 37 + 5) % (1 << nbits)) as u8).collect();
            for (i, &w) in words.iter().enumerate() {
                set_field(&mut code, i, nbits, w);
            }
            for (i, &w) in words.iter().enumerate() {
                assert_eq!(get_field(&code, i, nbits), w as usize, "nbits {nbits} field {i}");
            }
        }
    }

    #[test]
    fn lsb_first_layout() {
        let mut code = vec![0u8; 2];
        set_field(&mut code, 0, 3, 0b101);
        set_field(&mut code, 1, 3, 0b011);
        set_field(&mut code, 2, 3, 0b110);
        // bit positions 0..9: 1 0 1 | 1 1 0 | 0 1 1
        assert_eq!(code[0], 0b1001_1101);
        assert_eq!(code[1], 0b0000_0001);
    }

    #[test]
    fn centroid_tuple_encodes_to_its_indexes() {
        let pq = random_pq(8, 4, 3, 1);
        let picks = [3usize, 0, 7, 5];
        let x: Vec<f32> = picks.iter().enumerate().flat_map(|(m, &j)| pq.centroid(m, j).to_vec()).collect();
        let code = pq.encode(&x).unwrap();
        assert_eq!(pq.code_indices(&code), picks);
        assert_eq!((0..4).map(|m| pq.field(&code, m)).collect::<Vec<_>>(), picks);
        assert_eq!(pq.decode(&code), x);
    }

    #[test]
    fn relabeled_code_decodes_identically() {
        let base = random_pq(12, 4, 4, 2);
        let mut relabeled = base.clone();
        let assign = shuffled_assign(&base, 9);
        for m in 0..4 {
            relabeled.set_assignment(m, &assign[m * 16..(m + 1) * 16]).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x: Vec<f32> = (0..12).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
            let a = base.encode(&x).unwrap();
            let b = relabeled.encode(&x).unwrap();
            for m in 0..4 {
                assert_eq!(relabeled.field(&b, m), assign[m * 16 + base.field(&a, m)] as usize);
            }
            assert_eq!(base.decode(&a), relabeled.decode(&b));
            let lut = base.compute_lut(&x).unwrap();
            assert_eq!(lut.adc_distance(&base, &a), lut.adc_distance(&relabeled, &b));
        }
    }

    #[test]
    fn encode_is_brute_force_argmin() {
        let pq = random_pq(6, 3, 2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let x: Vec<f32> = (0..6).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
            let q = pq.quantize(&x).unwrap();
            for m in 0..3 {
                let sub = &x[m * 2..m * 2 + 2];
                let mut best = (0, f32::INFINITY);
                for j in 0..4 {
                    let c = pq.centroid(m, j);
                    let d = (sub[0] - c[0]).powi(2) + (sub[1] - c[1]).powi(2);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                assert_eq!(q[m], best.0);
            }
        }
    }

    #[test]
    fn ties_pick_lowest_index() {
        let centroids = vec![1.0, -1.0, 1.0, 3.0];
        let pq = ProductQuantizer::from_parts(1, 1, 2, centroids, None).unwrap();
        // 0.0 is equidistant from centroids 0 and 1; 2.0 from 0, 2 and 3.
        assert_eq!(pq.quantize(&[0.0]).unwrap(), vec![0]);
        assert_eq!(pq.quantize(&[2.0]).unwrap(), vec![0]);
    }

    #[test]
    fn lut_matches_direct_distance() {
        let pq = random_pq(16, 4, 4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q: Vec<f32> = (0..16).map(|_| rng.random::<f32>()).collect();
        let lut = pq.compute_lut(&q).unwrap();
        let table = pq.code_table(&lut);
        for _ in 0..100 {
            let x: Vec<f32> = (0..16).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
            let code = pq.encode(&x).unwrap();
            let direct = l2_sqr(&q, &pq.decode(&code));
            let adc = lut.adc_distance(&pq, &code);
            assert!((adc - direct).abs() <= 1e-4 * direct.max(1e-6));
            assert_eq!(adc, table.distance(&code));
        }
        // Row minimum is the sub-distance encode picks.
        let code = pq.encode(&q).unwrap();
        assert_eq!(lut.argmin(), pq.code_indices(&code));
    }

    #[test]
    fn train_exact_on_k_distinct_points() {
        let ksub = 4;
        let data: Vec<f32> = (0..ksub).flat_map(|i| [i as f32, 10.0 * i as f32, -(i as f32), 0.5 * i as f32]).collect();
        let set = VectorSet::new(4, data).unwrap();
        let pq = ProductQuantizer::train(&set, &PqConfig { m: 2, nbits: 2, kmeans_iters: 10, seed: 3 }).unwrap();
        for row in set.rows() {
            let code = pq.encode(row).unwrap();
            assert_eq!(pq.decode(&code), row);
        }
    }

    #[test]
    fn shape_errors() {
        assert!(ProductQuantizer::from_parts(10, 3, 8, vec![0.0; 10 * 256], None).is_err());
        assert!(ProductQuantizer::from_parts(4, 2, 9, vec![], None).is_err());
        let mut pq = random_pq(4, 2, 2, 0);
        assert!(pq.set_assignment(0, &[0, 1, 1, 3]).is_err());
        assert!(pq.encode(&[0.0; 3]).is_err());
    }
}
