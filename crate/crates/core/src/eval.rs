//! Ground truth, recall, timing, and the benchmark driver.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coarseindex::{CoarseIndex, CoarseSearchParams};
use crate::config::{BenchKind, IndexType, RunConfig};
use crate::dataio::{load_index, read_ivecs_rows, StoredIndex, VectorSet};
use crate::distance::l2_sqr;
use crate::error::{Error, Result};
use crate::flatindex::{hamming, FlatIndex, ResultList, SearchParams, Strategy, TopK};
use crate::pipeline;
use crate::pqcore::{CodeTable, ProductQuantizer};

/// Exact neighbor ids per query, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub neighbors: Vec<Vec<u64>>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// From ivecs rows as distributed with the benchmark datasets.
    pub fn from_ivecs(rows: Vec<Vec<i32>>) -> Result<Self> {
        let neighbors = rows
            .into_iter()
            .enumerate()
            .map(|(q, r)| {
                r.into_iter()
                    .map(|v| u64::try_from(v).map_err(|_| Error::invalid(format!("negative id {v} in ground truth row {q}"))))
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(Self { neighbors })
    }
}

/// Exact top-k accumulated over database chunks, so the database never has
/// to be in memory at once.
pub struct ExactKnn<'a> {
    queries: &'a VectorSet,
    heaps: Vec<TopK>,
}

impl<'a> ExactKnn<'a> {
    pub fn new(queries: &'a VectorSet, k: usize) -> Self {
        Self {
            queries,
            heaps: (0..queries.len()).map(|_| TopK::new(k)).collect(),
        }
    }

    pub fn add(&mut self, chunk: &VectorSet) -> Result<()> {
        if chunk.is_empty() {
            return Ok(());
        }
        if chunk.dim() != self.queries.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.queries.dim(),
                actual: chunk.dim(),
            });
        }
        let queries = self.queries;
        crate::par::for_each_chunk_mut(&mut self.heaps, 1, |q, h| {
            let row = queries.row(q);
            for (x, &id) in chunk.rows().zip(chunk.ids()) {
                h[0].push(l2_sqr(row, x), id);
            }
        });
        Ok(())
    }

    pub fn finish(self) -> GroundTruth {
        GroundTruth {
            neighbors: self
                .heaps
                .into_iter()
                .map(|h| h.into_hits().into_iter().map(|hit| hit.id).collect())
                .collect(),
        }
    }
}

/// Exact squared-Euclidean top-`k` for every query; ties go to the lower id.
pub fn exact_knn(database: &VectorSet, queries: &VectorSet, k: usize) -> Result<GroundTruth> {
    let mut acc = ExactKnn::new(queries, k);
    acc.add(database)?;
    Ok(acc.finish())
}

/// Fraction of queries whose true nearest neighbor is among the first `r`
/// returned ids.
pub fn recall_at(results: &[ResultList], gt: &GroundTruth, r: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results
        .iter()
        .zip(&gt.neighbors)
        .filter(|(res, truth)| match truth.first() {
            Some(t) => res.hits.iter().take(r).any(|h| h.id == *t),
            None => false,
        })
        .count();
    hits as f64 / results.len() as f64
}

/// Median of the samples (mean of the middle two for even counts).
pub fn median(samples: &mut [f64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

/// Median wall time of `reps` calls, in seconds.
pub fn time_median(reps: usize, mut f: impl FnMut()) -> f64 {
    let mut t: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed().as_secs_f64()
        })
        .collect();
    median(&mut t)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Random vector pairs `(i, j)`, `i != j`, drawn from `n` rows.
pub fn random_pairs(n: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            if i != j {
                break (i, j);
            }
        })
        .collect()
}

/// Pearson correlation between code Hamming distance and true Euclidean
/// distance over the given pairs.
pub fn hamming_correlation(pq: &ProductQuantizer, x: &VectorSet, pairs: &[(usize, usize)]) -> Result<f64> {
    let codes = pq.encode_set(x)?;
    let cs = pq.code_size();
    let code = |i: usize| &codes[i * cs..(i + 1) * cs];
    let (h, d): (Vec<f64>, Vec<f64>) = pairs
        .iter()
        .map(|&(i, j)| {
            (
                hamming(code(i), code(j)) as f64,
                (l2_sqr(x.row(i), x.row(j)) as f64).sqrt(),
            )
        })
        .unzip();
    Ok(pearson(&h, &d))
}

/// Per-code cost of the two flat scan kernels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanTiming {
    pub code_bytes: usize,
    pub codes: usize,
    pub hamming_ns: f64,
    pub adc_ns: f64,
}

impl ScanTiming {
    /// How many times faster a Hamming comparison is than a table lookup sum.
    pub fn ratio(&self) -> f64 {
        self.adc_ns / self.hamming_ns
    }
}

/// Times a Hamming scan and an ADC scan over `n` random codes of
/// `code_bytes` bytes (8-bit sub-quantizers), median of `reps` runs each.
pub fn scan_throughput(code_bytes: usize, n: usize, reps: usize, seed: u64) -> Result<ScanTiming> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = code_bytes;
    let centroids: Vec<f32> = (0..m * 256).map(|_| rng.random()).collect();
    let pq = ProductQuantizer::from_parts(m, m, 8, centroids, None)?;
    let codes: Vec<u8> = (0..n * code_bytes).map(|_| rng.random()).collect();
    let index = FlatIndex::from_parts(pq, codes, (0..n as u64).collect())?;
    let query: Vec<f32> = (0..m).map(|_| rng.random()).collect();
    let table: CodeTable = index.pq().code_table(&index.pq().compute_lut(&query)?);
    let qcode = index.pq().encode(&query)?;
    let mut hd = vec![0u32; n];
    let mut ad = vec![0f32; n];
    // Warm caches and page in the outputs before timing.
    index.hamming_scan(&qcode, &mut hd);
    index.adc_scan(&table, &mut ad);
    let h = time_median(reps, || {
        index.hamming_scan(std::hint::black_box(&qcode), &mut hd);
        std::hint::black_box(&hd);
    });
    let a = time_median(reps, || {
        index.adc_scan(std::hint::black_box(&table), &mut ad);
        std::hint::black_box(&ad);
    });
    Ok(ScanTiming {
        code_bytes,
        codes: n,
        hamming_ns: h * 1e9 / n as f64,
        adc_ns: a * 1e9 / n as f64,
    })
}

/// One evaluated method of a benchmark run.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub method: String,
    /// `(R, recall@R)`.
    pub recall: Vec<(usize, f64)>,
    /// Mean per-query time in milliseconds, queries issued as one batch.
    pub batch_ms: f64,
    /// Mean per-query time in milliseconds, queries issued one at a time.
    pub single_ms: f64,
    /// Mean share of scanned codes rejected by the Hamming filter.
    pub filter_rate: f64,
    /// Share of queries with fewer than `k` survivors.
    pub shortfall_rate: f64,
    pub tau: Option<u32>,
    /// Further named measurements (scan and correlation benchmarks).
    pub extra: Vec<(String, f64)>,
    pub config: Vec<(String, String)>,
}

impl BenchReport {
    fn new(method: impl Into<String>, config: &RunConfig) -> Self {
        Self {
            method: method.into(),
            recall: Vec::new(),
            batch_ms: f64::NAN,
            single_ms: f64::NAN,
            filter_rate: f64::NAN,
            shortfall_rate: f64::NAN,
            tau: None,
            extra: Vec::new(),
            config: config.entries(),
        }
    }

    pub fn recall_at(&self, r: usize) -> Option<f64> {
        self.recall.iter().find(|(x, _)| *x == r).map(|(_, v)| *v)
    }

    pub fn extra(&self, key: &str) -> Option<f64> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// One self-describing line of space-separated `key=value` pairs.
    pub fn to_record(&self) -> String {
        let mut s = format!("method={}", self.method);
        for (r, v) in &self.recall {
            let _ = write!(s, " recall@{r}={v:.4}");
        }
        let _ = write!(
            s,
            " batch_ms={:.4} single_ms={:.4} filter_rate={:.4} shortfall_rate={:.4}",
            self.batch_ms, self.single_ms, self.filter_rate, self.shortfall_rate
        );
        if let Some(t) = self.tau {
            let _ = write!(s, " tau={t}");
        }
        for (k, v) in &self.extra {
            let _ = write!(s, " {k}={v}");
        }
        for (k, v) in &self.config {
            if !v.is_empty() {
                let _ = write!(s, " config.{k}={}", v.replace(' ', "_"));
            }
        }
        s
    }
}

/// Human-readable table of reports.
pub fn render_table(reports: &[BenchReport]) -> String {
    let mut ranks: Vec<usize> = reports.iter().flat_map(|r| r.recall.iter().map(|x| x.0)).collect();
    ranks.sort_unstable();
    ranks.dedup();
    let mut s = format!("{:<22}", "method");
    for r in &ranks {
        let _ = write!(s, " {:>9}", format!("R@{r}"));
    }
    let _ = writeln!(s, " {:>10} {:>10} {:>8} {:>9} {:>5}", "batch ms", "single ms", "filter", "shortfall", "tau");
    for rep in reports {
        let _ = write!(s, "{:<22}", rep.method);
        for r in &ranks {
            match rep.recall_at(*r) {
                Some(v) => {
                    let _ = write!(s, " {v:>9.4}");
                }
                None => {
                    let _ = write!(s, " {:>9}", "-");
                }
            }
        }
        let tau = rep.tau.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
        // Scan and correlation rows carry no search timings.
        let num = |v: f64| if v.is_nan() { "-".to_string() } else { format!("{v:.4}") };
        let _ = writeln!(
            s,
            " {:>10} {:>10} {:>8} {:>9} {:>5}",
            num(rep.batch_ms),
            num(rep.single_ms),
            num(rep.filter_rate),
            num(rep.shortfall_rate),
            tau
        );
        for (k, v) in &rep.extra {
            let _ = writeln!(s, "    {k} = {v:.4}");
        }
    }
    s
}

/// Runs the benchmark described by `config`.
pub fn run_benchmark(config: &RunConfig) -> Result<Vec<BenchReport>> {
    config.validate()?;
    config.validate_recall()?;
    match config.bench_kind {
        BenchKind::Scan => bench_scan(config),
        BenchKind::Correlation => bench_correlation(config),
        BenchKind::Search => match config.index_type {
            IndexType::Flat => bench_flat(config),
            IndexType::Coarse => bench_coarse(config),
        },
    }
}

fn bench_scan(config: &RunConfig) -> Result<Vec<BenchReport>> {
    [8usize, 16]
        .into_iter()
        .map(|bytes| {
            let t = scan_throughput(bytes, config.scan_codes, config.repetitions, config.pq_seed)?;
            let mut r = BenchReport::new(format!("scan/{bytes}B"), config);
            r.extra = vec![
                ("hamming_ns_per_code".into(), t.hamming_ns),
                ("adc_ns_per_code".into(), t.adc_ns),
                ("speed_ratio".into(), t.ratio()),
            ];
            Ok(r)
        })
        .collect()
}

/// Loads the configured index, or trains one from the learning set.
fn index_for(config: &RunConfig, learn: &VectorSet) -> Result<StoredIndex> {
    if let Some(p) = &config.index {
        if p.is_file() {
            log::info!("loading index from {}", p.display());
            return Ok(load_index(p)?.0);
        }
    }
    pipeline::train(config, learn)
}

fn bench_correlation(config: &RunConfig) -> Result<Vec<BenchReport>> {
    let learn = pipeline::load(config, "learn")?;
    let stored = index_for(config, &learn)?;
    let optimized = stored.pq().clone();
    let optimized = if optimized.is_identity_assignment() {
        pipeline::optimize(config, &optimized)?.0
    } else {
        optimized
    };
    let identity = optimized.with_identity_assignment();
    let sample = match config.base {
        Some(_) => pipeline::load(config, "base")?,
        None => learn,
    };
    let pairs = random_pairs(sample.len(), config.pairs, config.pq_seed ^ 0xC0FF);
    let before = hamming_correlation(&identity, &sample, &pairs)?;
    let after = hamming_correlation(&optimized, &sample, &pairs)?;
    let mut r = BenchReport::new("correlation", config);
    r.extra = vec![
        ("pearson_identity".into(), before),
        ("pearson_optimized".into(), after),
        ("pearson_gain".into(), after - before),
    ];
    Ok(vec![r])
}

/// Exact ground truth, or the configured file after spot-checking its
/// first queries against an exact scan.
fn ground_truth(config: &RunConfig, queries: &VectorSet, k: usize, base: Option<&VectorSet>) -> Result<GroundTruth> {
    let exact_on = |q: &VectorSet| -> Result<GroundTruth> {
        match base {
            Some(b) => exact_knn(b, q, k),
            None => {
                let mut acc = ExactKnn::new(q, k);
                pipeline::stream_base(config, |chunk| acc.add(chunk))?;
                Ok(acc.finish())
            }
        }
    };
    if config.groundtruth.is_none() {
        log::info!("computing exact ground truth for {} queries", queries.len());
        return exact_on(queries);
    }
    let path = config.dataset("groundtruth")?;
    let gt = GroundTruth::from_ivecs(read_ivecs_rows(&path, config.query_limit)?)?;
    if gt.len() < queries.len() {
        return Err(Error::invalid(format!(
            "{} holds {} ground-truth rows for {} queries",
            path.display(),
            gt.len(),
            queries.len()
        )));
    }
    let check = queries.len().min(20);
    let exact = exact_on(&queries.head(check))?;
    let offset = config.base_offset as u64;
    for q in 0..check {
        let file_nn = gt.neighbors[q].first().copied();
        let ours = exact.neighbors[q].first().copied().map(|id| id - offset);
        // Equal-distance ties may order differently; compare distances.
        if file_nn != ours {
            let d = |id: Option<u64>| -> Option<f32> {
                let id = id? as usize;
                base.map(|b| l2_sqr(queries.row(q), b.row(id)))
            };
            if base.is_none() || d(file_nn) != d(ours) {
                return Err(Error::invalid(format!(
                    "ground truth in {} disagrees with an exact scan on query {q} ({file_nn:?} vs {ours:?})",
                    path.display()
                )));
            }
        }
    }
    log::info!("ground truth file agrees with an exact scan on {check} queries");
    let neighbors = gt.neighbors.into_iter().take(queries.len()).map(|r| r.into_iter().map(|id| id + offset).collect()).collect();
    Ok(GroundTruth { neighbors })
}

fn summarize(report: &mut BenchReport, results: &[ResultList], gt: &GroundTruth, r_list: &[usize], k: usize) {
    report.recall = r_list.iter().map(|&r| (r, recall_at(results, gt, r))).collect();
    let n = results.len().max(1) as f64;
    report.filter_rate = results
        .iter()
        .map(|r| if r.scanned == 0 { 0.0 } else { 1.0 - r.survivors as f64 / r.scanned as f64 })
        .sum::<f64>()
        / n;
    report.shortfall_rate = results.iter().filter(|r| r.survivors < k).count() as f64 / n;
}

fn timings<F>(config: &RunConfig, queries: &VectorSet, search: F) -> Result<(f64, f64)>
where
    F: Fn(&[f32]) -> Result<ResultList> + Sync,
{
    let sub = queries.head(config.timing_queries.max(1));
    let nq = sub.len().max(1) as f64;
    let mut err = None;
    let batch = time_median(config.repetitions, || {
        for r in crate::par::map_range(sub.len(), |i| search(sub.row(i))) {
            if let Err(e) = r {
                err = Some(e);
            }
        }
    });
    let single = time_median(config.repetitions, || {
        for row in sub.rows() {
            if let Err(e) = search(row) {
                err = Some(e);
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok((batch * 1e3 / nq, single * 1e3 / nq)),
    }
}

fn bench_flat(config: &RunConfig) -> Result<Vec<BenchReport>> {
    let learn = pipeline::load(config, "learn")?;
    let queries = pipeline::load(config, "query")?;
    let base = pipeline::load(config, "base")?;
    let stored = index_for(config, &learn)?;
    let index = match stored {
        StoredIndex::Flat(f) => f,
        StoredIndex::Quantizer(pq) => {
            let mut f = FlatIndex::new(pq);
            f.add(&base)?;
            f
        }
        StoredIndex::Coarse(_) => return Err(Error::invalid("index_type = flat but the index file is coarse")),
    };
    let gt = ground_truth(config, &queries, config.k, Some(&base))?;
    drop(base);

    let optimized_name = match config.loss {
        crate::polyopt::LossKind::Distance => "polyd",
        crate::polyopt::LossKind::Rank => "polyr",
    };
    let mut variants = Vec::new();
    if index.pq().is_identity_assignment() {
        variants.push(("pq", index));
    } else {
        if config.compare_identity {
            let mut plain = index.clone();
            plain.relabel(index.pq().with_identity_assignment())?;
            variants.push(("pq", plain));
        }
        variants.push((optimized_name, index));
    }

    let mut reports = Vec::new();
    for (name, idx) in &variants {
        let tau = match config.tau {
            Some(t) => t,
            None => pipeline::calibrate_flat(config, idx, &learn)?.tau,
        };
        for &strategy in &config.strategies {
            let params = SearchParams::new(config.k, tau, strategy);
            let results = idx.search_batch(&queries, &params)?;
            let mut rep = BenchReport::new(format!("{name}/{strategy}"), config);
            summarize(&mut rep, &results, &gt, &config.r_list, config.k);
            if strategy == Strategy::Dual {
                rep.tau = Some(tau);
            }
            (rep.batch_ms, rep.single_ms) = timings(config, &queries, |q| idx.search(q, &params))?;
            reports.push(rep);
        }
    }
    Ok(reports)
}

fn bench_coarse(config: &RunConfig) -> Result<Vec<BenchReport>> {
    let learn = pipeline::load(config, "learn")?;
    let queries = pipeline::load(config, "query")?;
    let stored = index_for(config, &learn)?;
    let mut index: CoarseIndex = match stored {
        StoredIndex::Coarse(c) if c.is_empty() => match pipeline::build(config, StoredIndex::Coarse(c))? {
            StoredIndex::Coarse(c) => c,
            _ => unreachable!("building a coarse model yields a coarse index"),
        },
        StoredIndex::Coarse(c) => c,
        _ => return Err(Error::invalid("index_type = coarse but the index file is not a coarse index")),
    };
    if config.precomputed_tables {
        index.precompute_tables()?;
    }
    drop(learn);
    let gt = ground_truth(config, &queries, config.k, None)?;
    let filtered_tau = config.tau.unwrap_or(index.tau());
    let mut reports = Vec::new();
    for (name, tau) in [
        ("coarse/unfiltered", index.pq().code_bits() as u32),
        ("coarse/filtered", filtered_tau),
    ] {
        let params = CoarseSearchParams {
            k: config.k,
            nprobe: config.nprobe,
            cap: config.cap,
            tau,
            tables: config.table_mode(),
        };
        let results = index.search_batch(&queries, &params)?;
        let mut rep = BenchReport::new(name, config);
        summarize(&mut rep, &results, &gt, &config.r_list, config.k);
        rep.tau = Some(tau);
        let scanned = results.iter().map(|r| r.scanned as f64).sum::<f64>() / results.len().max(1) as f64;
        rep.extra.push(("mean_scanned".into(), scanned));
        (rep.batch_ms, rep.single_ms) = timings(config, &queries, |q| index.search(q, &params))?;
        reports.push(rep);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flatindex::Hit;
    use crate::synthetic;

    fn list(ids: &[u64]) -> ResultList {
        ResultList {
            hits: ids.iter().map(|&id| Hit { id, score: 0.0 }).collect(),
            scanned: ids.len(),
            survivors: ids.len(),
        }
    }

    #[test]
    fn query_in_database_is_first() {
        let db = synthetic::clustered(300, 8, 4, 1);
        let q = db.select(&[17, 42]);
        let gt = exact_knn(&db, &q, 5).unwrap();
        assert_eq!(gt.neighbors[0][0], 17);
        assert_eq!(gt.neighbors[1][0], 42);
    }

    #[test]
    fn full_k_is_a_permutation() {
        let db = synthetic::clustered(50, 4, 3, 2);
        let q = synthetic::clustered(3, 4, 3, 3);
        let gt = exact_knn(&db, &q, 50).unwrap();
        for row in &gt.neighbors {
            let mut s = row.clone();
            s.sort_unstable();
            assert_eq!(s, (0..50).collect::<Vec<u64>>());
        }
    }

    #[test]
    fn traversal_order_does_not_matter() {
        let db = synthetic::clustered(400, 6, 5, 4);
        let q = synthetic::clustered(20, 6, 5, 5);
        let a = exact_knn(&db, &q, 10).unwrap();
        let mut order: Vec<usize> = (0..db.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let shuffled = db.select(&order);
        // Streaming in two chunks exercises the accumulator as well.
        let mut acc = ExactKnn::new(&q, 10);
        let half: Vec<usize> = (0..200).collect();
        let rest: Vec<usize> = (200..400).collect();
        acc.add(&shuffled.select(&half)).unwrap();
        acc.add(&shuffled.select(&rest)).unwrap();
        assert_eq!(acc.finish(), a);
    }

    #[test]
    fn ties_prefer_lower_id() {
        let db = VectorSet::with_ids(1, vec![1.0, -1.0, 1.0], vec![5, 3, 1]).unwrap();
        let q = VectorSet::new(1, vec![0.0]).unwrap();
        assert_eq!(exact_knn(&db, &q, 3).unwrap().neighbors[0], vec![1, 3, 5]);
    }

    #[test]
    fn recall_edges() {
        let gt = GroundTruth {
            neighbors: vec![vec![1, 2], vec![3, 4]],
        };
        assert_eq!(recall_at(&[list(&[1, 2]), list(&[3, 4])], &gt, 1), 1.0);
        assert_eq!(recall_at(&[list(&[]), list(&[])], &gt, 10), 0.0);
        assert_eq!(recall_at(&[], &gt, 10), 0.0);
        let res = [list(&[9, 1]), list(&[3])];
        assert_eq!(recall_at(&res, &gt, 1), 0.5);
        assert_eq!(recall_at(&res, &gt, 2), 1.0);
    }

    #[test]
    fn median_and_pearson() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &[2.0, 4.0, 6.0, 8.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[8.0, 6.0, 4.0, 2.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn record_is_flat_key_value() {
        let c = RunConfig::default();
        let mut r = BenchReport::new("pq/adc", &c);
        r.recall = vec![(1, 0.5), (10, 0.75)];
        let rec = r.to_record();
        assert!(!rec.contains('\n'));
        for field in rec.split(' ') {
            assert!(field.contains('='), "{field}");
        }
        for (k, v) in c.entries() {
            if !v.is_empty() {
                assert!(rec.contains(&format!("config.{k}=")), "{k} missing");
            }
        }
        assert!(render_table(&[r]).contains("pq/adc"));
    }
}
