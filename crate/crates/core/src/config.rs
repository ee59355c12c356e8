//! Run configuration shared by the command line and the benchmark driver.
//!
//! The file format is flat `key = value` text with `#` comments. Keys use
//! underscores; the command line accepts the same keys as `--key-name`
//! flags, and hyphens and underscores are interchangeable in both places.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::coarseindex::{CoarseConfig, CoarseKind, TableMode};
use crate::error::{Error, Result};
use crate::flatindex::Strategy;
use crate::polyopt::{AcceptRule, AnnealSchedule, LossKind, PolyConfig};
use crate::pqcore::PqConfig;

/// Environment variable naming the directory relative dataset paths are
/// resolved against.
pub const DATA_DIR_ENV: &str = "POLYSEMOUS_DATA_DIR";

/// Every recognized key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("data_dir", "directory for relative dataset paths (default: $POLYSEMOUS_DATA_DIR or .)"),
    ("base", "database vectors (.fvecs/.bvecs/.ivecs)"),
    ("query", "query vectors"),
    ("learn", "training vectors"),
    ("groundtruth", "optional ground-truth .ivecs, cross-checked against an exact scan"),
    ("base_limit", "read at most this many database vectors"),
    ("base_offset", "skip this many database vectors first"),
    ("query_limit", "read at most this many queries"),
    ("learn_limit", "read at most this many training vectors"),
    ("rotation_seed", "apply a seeded random rotation to every vector set"),
    ("m", "sub-quantizers per code"),
    ("nbits", "bits per sub-quantizer, 1..=8"),
    ("kmeans_iters", "k-means iterations"),
    ("pq_seed", "seed for codebook training"),
    ("optimize", "optimize the index assignment during training (true/false)"),
    ("loss", "assignment loss: distance or rank"),
    ("alpha", "weight base of the distance loss"),
    ("n_iter", "annealing iterations per sub-quantizer"),
    ("t0", "initial annealing temperature"),
    ("t_decay", "per-iteration temperature factor"),
    ("accept", "annealing acceptance rule: temperature or metropolis"),
    ("anneal_seed", "seed for annealing"),
    ("index_type", "flat or coarse"),
    ("coarse_kind", "ivf or imi"),
    ("k_coarse", "centroids per coarse codebook"),
    ("nprobe", "cells visited per query"),
    ("cap", "codes scanned per query, counted before filtering"),
    ("precomputed_tables", "use the precomputed coarse lookup-table terms (true/false)"),
    ("coarse_seed", "seed for coarse training"),
    ("strategy", "flat search strategy: adc, binary, disidx or dual"),
    ("strategies", "comma-separated strategies evaluated by bench"),
    ("compare_identity", "bench also evaluates the unoptimized assignment (true/false)"),
    ("tau", "Hamming threshold; overrides calibration"),
    ("filter_rate", "target share of codes rejected by the Hamming filter"),
    ("calib_queries", "training vectors used as calibration queries"),
    ("k", "results per query"),
    ("r_list", "comma-separated recall ranks"),
    ("repetitions", "timing repetitions; the median is reported"),
    ("timing_queries", "queries used for timing"),
    ("bench_kind", "search, scan or correlation"),
    ("pairs", "random pairs used by the correlation benchmark"),
    ("scan_codes", "codes per scan in the scan benchmark"),
    ("check_exact", "knn-graph: compare with the exact graph (true/false)"),
    ("threads", "worker threads; 0 uses every core"),
    ("index", "index container path"),
    ("output", "output path (search results, graph)"),
    ("report", "append machine-readable bench records to this file"),
];

fn normalize(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::invalid(format!("bad value '{value}' for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::invalid(format!("bad value '{value}' for {key}: expected true or false"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn opt_string<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum IndexType {
    #[default]
    Flat,
    Coarse,
}

impl FromStr for IndexType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Self::Flat),
            "coarse" => Ok(Self::Coarse),
            _ => Err(Error::invalid(format!("unknown index type '{s}' (expected flat or coarse)"))),
        }
    }
}

impl std::fmt::Display for IndexType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Flat => "flat",
            Self::Coarse => "coarse",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BenchKind {
    #[default]
    Search,
    Scan,
    Correlation,
}

impl FromStr for BenchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "search" => Ok(Self::Search),
            "scan" => Ok(Self::Scan),
            "correlation" => Ok(Self::Correlation),
            _ => Err(Error::invalid(format!(
                "unknown bench kind '{s}' (expected search, scan or correlation)"
            ))),
        }
    }
}

impl std::fmt::Display for BenchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Search => "search",
            Self::Scan => "scan",
            Self::Correlation => "correlation",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub base: Option<PathBuf>,
    pub query: Option<PathBuf>,
    pub learn: Option<PathBuf>,
    pub groundtruth: Option<PathBuf>,
    pub base_limit: Option<usize>,
    pub base_offset: usize,
    pub query_limit: Option<usize>,
    pub learn_limit: Option<usize>,
    pub rotation_seed: Option<u64>,
    pub m: usize,
    pub nbits: u32,
    pub kmeans_iters: usize,
    pub pq_seed: u64,
    pub optimize: bool,
    pub loss: LossKind,
    pub alpha: f64,
    pub n_iter: usize,
    pub t0: f64,
    pub t_decay: f64,
    pub accept: AcceptRule,
    pub anneal_seed: u64,
    pub index_type: IndexType,
    pub coarse_kind: CoarseKind,
    pub k_coarse: usize,
    pub nprobe: usize,
    pub cap: usize,
    pub precomputed_tables: bool,
    pub coarse_seed: u64,
    pub strategy: Strategy,
    pub strategies: Vec<Strategy>,
    pub compare_identity: bool,
    pub tau: Option<u32>,
    pub filter_rate: f64,
    pub calib_queries: usize,
    pub k: usize,
    pub r_list: Vec<usize>,
    pub repetitions: usize,
    pub timing_queries: usize,
    pub bench_kind: BenchKind,
    pub pairs: usize,
    pub scan_codes: usize,
    pub check_exact: bool,
    pub threads: usize,
    pub index: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let schedule = AnnealSchedule::default();
        let coarse = CoarseConfig::default();
        Self {
            data_dir: None,
            base: None,
            query: None,
            learn: None,
            groundtruth: None,
            base_limit: None,
            base_offset: 0,
            query_limit: None,
            learn_limit: None,
            rotation_seed: None,
            m: 16,
            nbits: 8,
            kmeans_iters: 25,
            pq_seed: 1234,
            optimize: true,
            loss: LossKind::Distance,
            alpha: 0.5,
            n_iter: schedule.n_iter,
            t0: schedule.t0,
            t_decay: schedule.t_decay,
            accept: schedule.accept,
            anneal_seed: schedule.seed,
            index_type: IndexType::Flat,
            coarse_kind: coarse.kind,
            k_coarse: coarse.k_coarse,
            nprobe: coarse.nprobe,
            cap: coarse.cap,
            precomputed_tables: false,
            coarse_seed: coarse.seed,
            strategy: Strategy::Dual,
            strategies: vec![Strategy::Adc, Strategy::Binary, Strategy::Dual],
            compare_identity: true,
            tau: None,
            filter_rate: 0.95,
            calib_queries: 1000,
            k: 100,
            r_list: vec![1, 10, 100],
            repetitions: 5,
            timing_queries: 100,
            bench_kind: BenchKind::Search,
            pairs: 100_000,
            scan_codes: 1_000_000,
            check_exact: false,
            threads: 0,
            index: None,
            output: None,
            report: None,
        }
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize(key);
        let v = value.trim();
        let path = || Some(PathBuf::from(v));
        match key.as_str() {
            "data_dir" => self.data_dir = path(),
            "base" => self.base = path(),
            "query" => self.query = path(),
            "learn" => self.learn = path(),
            "groundtruth" => self.groundtruth = path(),
            "base_limit" => self.base_limit = Some(parse(&key, v)?),
            "base_offset" => self.base_offset = parse(&key, v)?,
            "query_limit" => self.query_limit = Some(parse(&key, v)?),
            "learn_limit" => self.learn_limit = Some(parse(&key, v)?),
            "rotation_seed" => self.rotation_seed = Some(parse(&key, v)?),
            "m" => self.m = parse(&key, v)?,
            "nbits" => self.nbits = parse(&key, v)?,
            "kmeans_iters" => self.kmeans_iters = parse(&key, v)?,
            "pq_seed" => self.pq_seed = parse(&key, v)?,
            "optimize" => self.optimize = parse_bool(&key, v)?,
            "loss" => self.loss = v.parse()?,
            "alpha" => self.alpha = parse(&key, v)?,
            "n_iter" => self.n_iter = parse(&key, v)?,
            "t0" => self.t0 = parse(&key, v)?,
            "t_decay" => self.t_decay = parse(&key, v)?,
            "accept" => self.accept = v.parse()?,
            "anneal_seed" => self.anneal_seed = parse(&key, v)?,
            "index_type" => self.index_type = v.parse()?,
            "coarse_kind" => self.coarse_kind = v.parse()?,
            "k_coarse" => self.k_coarse = parse(&key, v)?,
            "nprobe" => self.nprobe = parse(&key, v)?,
            "cap" => self.cap = parse(&key, v)?,
            "precomputed_tables" => self.precomputed_tables = parse_bool(&key, v)?,
            "coarse_seed" => self.coarse_seed = parse(&key, v)?,
            "strategy" => self.strategy = v.parse()?,
            "strategies" => {
                self.strategies = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse())
                    .collect::<Result<_>>()?
            }
            "compare_identity" => self.compare_identity = parse_bool(&key, v)?,
            "tau" => self.tau = Some(parse(&key, v)?),
            "filter_rate" => self.filter_rate = parse(&key, v)?,
            "calib_queries" => self.calib_queries = parse(&key, v)?,
            "k" => self.k = parse(&key, v)?,
            "r_list" => self.r_list = parse_list(&key, v)?,
            "repetitions" => self.repetitions = parse(&key, v)?,
            "timing_queries" => self.timing_queries = parse(&key, v)?,
            "bench_kind" => self.bench_kind = v.parse()?,
            "pairs" => self.pairs = parse(&key, v)?,
            "scan_codes" => self.scan_codes = parse(&key, v)?,
            "check_exact" => self.check_exact = parse_bool(&key, v)?,
            "threads" => self.threads = parse(&key, v)?,
            "index" => self.index = path(),
            "output" => self.output = path(),
            "report" => self.report = path(),
            _ => return Err(Error::invalid(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Current value of `key` as text, in the form `set` accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match normalize(key).as_str() {
            "data_dir" => p(&self.data_dir),
            "base" => p(&self.base),
            "query" => p(&self.query),
            "learn" => p(&self.learn),
            "groundtruth" => p(&self.groundtruth),
            "base_limit" => opt_string(&self.base_limit),
            "base_offset" => self.base_offset.to_string(),
            "query_limit" => opt_string(&self.query_limit),
            "learn_limit" => opt_string(&self.learn_limit),
            "rotation_seed" => opt_string(&self.rotation_seed),
            "m" => self.m.to_string(),
            "nbits" => self.nbits.to_string(),
            "kmeans_iters" => self.kmeans_iters.to_string(),
            "pq_seed" => self.pq_seed.to_string(),
            "optimize" => self.optimize.to_string(),
            "loss" => self.loss.to_string(),
            "alpha" => self.alpha.to_string(),
            "n_iter" => self.n_iter.to_string(),
            "t0" => self.t0.to_string(),
            "t_decay" => self.t_decay.to_string(),
            "accept" => self.accept.to_string(),
            "anneal_seed" => self.anneal_seed.to_string(),
            "index_type" => self.index_type.to_string(),
            "coarse_kind" => self.coarse_kind.to_string(),
            "k_coarse" => self.k_coarse.to_string(),
            "nprobe" => self.nprobe.to_string(),
            "cap" => self.cap.to_string(),
            "precomputed_tables" => self.precomputed_tables.to_string(),
            "coarse_seed" => self.coarse_seed.to_string(),
            "strategy" => self.strategy.to_string(),
            "strategies" => join(&self.strategies),
            "compare_identity" => self.compare_identity.to_string(),
            "tau" => opt_string(&self.tau),
            "filter_rate" => self.filter_rate.to_string(),
            "calib_queries" => self.calib_queries.to_string(),
            "k" => self.k.to_string(),
            "r_list" => join(&self.r_list),
            "repetitions" => self.repetitions.to_string(),
            "timing_queries" => self.timing_queries.to_string(),
            "bench_kind" => self.bench_kind.to_string(),
            "pairs" => self.pairs.to_string(),
            "scan_codes" => self.scan_codes.to_string(),
            "check_exact" => self.check_exact.to_string(),
            "threads" => self.threads.to_string(),
            "index" => p(&self.index),
            "output" => p(&self.output),
            "report" => p(&self.report),
            _ => return None,
        })
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .map(|(k, _)| (k.to_string(), self.get(k).expect("every listed key is readable")))
            .collect()
    }

    /// Applies a `key = value` text; later lines win.
    pub fn merge_str(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::invalid(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("invalid argument: "))))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::default();
        c.merge_str(&text)?;
        Ok(c)
    }

    /// The configuration as a loadable text file.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            if !v.is_empty() {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }

    /// Checks cross-field consistency.
    pub fn validate(&self) -> Result<()> {
        if self.nbits == 0 || self.nbits > 8 {
            return Err(Error::invalid(format!("nbits must lie in 1..=8, got {}", self.nbits)));
        }
        if self.m == 0 {
            return Err(Error::invalid("m must be at least 1"));
        }
        let bits = self.m * self.nbits as usize;
        if let Some(tau) = self.tau {
            if tau as usize > bits {
                return Err(Error::invalid(format!(
                    "tau = {tau} exceeds the code length m * nbits = {bits}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.filter_rate) {
            return Err(Error::invalid(format!(
                "filter_rate must lie in [0, 1), got {}",
                self.filter_rate
            )));
        }
        if self.r_list.is_empty() || self.r_list.contains(&0) {
            return Err(Error::invalid("r_list needs at least one positive rank"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        self.schedule().validate()?;
        self.coarse_config().validate()?;
        if self.alpha <= 0.0 {
            return Err(Error::invalid("alpha must be positive"));
        }
        Ok(())
    }

    /// Recall ranks must fit in the returned lists.
    pub fn validate_recall(&self) -> Result<()> {
        match self.r_list.iter().max() {
            Some(&r) if r > self.k => Err(Error::invalid(format!(
                "recall rank {r} exceeds k = {} (lower r_list or raise k)",
                self.k
            ))),
            _ => Ok(()),
        }
    }

    pub fn pq_config(&self) -> PqConfig {
        PqConfig {
            m: self.m,
            nbits: self.nbits,
            kmeans_iters: self.kmeans_iters,
            seed: self.pq_seed,
        }
    }

    pub fn schedule(&self) -> AnnealSchedule {
        AnnealSchedule {
            n_iter: self.n_iter,
            t0: self.t0,
            t_decay: self.t_decay,
            seed: self.anneal_seed,
            accept: self.accept,
        }
    }

    pub fn poly_config(&self) -> PolyConfig {
        PolyConfig {
            loss: self.loss,
            alpha: self.alpha,
            schedule: self.schedule(),
        }
    }

    pub fn coarse_config(&self) -> CoarseConfig {
        CoarseConfig {
            kind: self.coarse_kind,
            k_coarse: self.k_coarse,
            nprobe: self.nprobe,
            cap: self.cap,
            filter_rate: self.filter_rate,
            kmeans_iters: self.kmeans_iters,
            seed: self.coarse_seed,
        }
    }

    pub fn table_mode(&self) -> TableMode {
        if self.precomputed_tables {
            TableMode::Precomputed
        } else {
            TableMode::PerCell
        }
    }

    /// Resolves a dataset path against `data_dir`, then the environment
    /// variable, then the working directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            return p.to_path_buf();
        }
        match &self.data_dir {
            Some(d) => d.join(p),
            None => match std::env::var_os(DATA_DIR_ENV) {
                Some(d) => PathBuf::from(d).join(p),
                None => p.to_path_buf(),
            },
        }
    }

    /// Resolved path of a required dataset key, or an error naming it.
    pub fn dataset(&self, key: &str) -> Result<PathBuf> {
        let p = match key {
            "base" => &self.base,
            "query" => &self.query,
            "learn" => &self.learn,
            "groundtruth" => &self.groundtruth,
            _ => return Err(Error::invalid(format!("'{key}' is not a dataset key"))),
        };
        let p = p
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("no '{key}' dataset configured (set {key} = <path>)")))?;
        let full = self.resolve(p);
        if !full.is_file() {
            return Err(Error::invalid(format!(
                "dataset '{key}' not found at {} (check the path, data_dir or ${DATA_DIR_ENV})",
                full.display()
            )));
        }
        Ok(full)
    }
}
