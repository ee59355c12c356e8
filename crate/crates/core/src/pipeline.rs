//! Configuration-driven steps shared by the command line and the benchmark
//! driver: loading datasets, training, optimizing, building.

use std::path::Path;

use crate::coarseindex::{self, CoarseIndex, CoarseIndexBuilder, CoarseQuantizer, TrainedCoarse};
use crate::config::{IndexType, RunConfig};
use crate::dataio::{
    apply_preprocess, read_vectors, read_vectors_range, IndexMeta, PreprocessSpec, StoredIndex, VecFormat, VectorSet,
};
use crate::error::{Error, Result};
use crate::flatindex::{calibrate_threshold, Calibration, FlatIndex};
use crate::polyopt::{optimize_pq, SubReport};
use crate::pqcore::ProductQuantizer;

/// Vectors read per chunk when streaming a database into an index.
pub const STREAM_CHUNK: usize = 500_000;

pub fn format_of(path: &Path) -> Result<VecFormat> {
    VecFormat::from_path(path).ok_or_else(|| {
        Error::invalid(format!(
            "cannot tell the format of {} (expected .fvecs, .bvecs or .ivecs)",
            path.display()
        ))
    })
}

fn preprocess(config: &RunConfig, x: VectorSet) -> Result<VectorSet> {
    match config.rotation_seed {
        Some(seed) if !x.is_empty() => apply_preprocess(&x, &PreprocessSpec::random_rotation(x.dim(), seed)),
        _ => Ok(x),
    }
}

/// Loads the dataset under `key` (`base`, `query` or `learn`) with the
/// configured limits and preprocessing.
pub fn load(config: &RunConfig, key: &str) -> Result<VectorSet> {
    let path = config.dataset(key)?;
    let format = format_of(&path)?;
    let x = match key {
        "base" if config.base_offset > 0 => read_vectors_range(
            &path,
            format,
            config.base_offset,
            config.base_limit.unwrap_or(usize::MAX),
        )?,
        "base" => read_vectors(&path, format, config.base_limit)?,
        "query" => read_vectors(&path, format, config.query_limit)?,
        "learn" => read_vectors(&path, format, config.learn_limit)?,
        _ => return Err(Error::invalid(format!("'{key}' is not a vector dataset"))),
    };
    log::info!("loaded {} {} vectors of dimension {} from {}", x.len(), key, x.dim(), path.display());
    preprocess(config, x)
}

/// Calls `f` on consecutive chunks of the configured database, so sets
/// larger than memory can be indexed.
pub fn stream_base(config: &RunConfig, mut f: impl FnMut(&VectorSet) -> Result<()>) -> Result<usize> {
    let path = config.dataset("base")?;
    let format = format_of(&path)?;
    let limit = config.base_limit.unwrap_or(usize::MAX);
    let mut done = 0usize;
    while done < limit {
        let want = STREAM_CHUNK.min(limit - done);
        let chunk = read_vectors_range(&path, format, config.base_offset + done, want)?;
        if chunk.is_empty() {
            break;
        }
        let got = chunk.len();
        f(&preprocess(config, chunk)?)?;
        done += got;
        log::info!("streamed {done} database vectors");
        if got < want {
            break;
        }
    }
    Ok(done)
}

/// Every configuration entry, recorded in saved containers.
pub fn meta_for(config: &RunConfig) -> IndexMeta {
    let mut meta = IndexMeta::new();
    for (k, v) in config.entries() {
        meta.set(&k, v);
    }
    meta
}

/// Trains codebooks (and the coarse level for coarse indexes). When
/// `config.optimize` is set the index assignment is annealed as well.
pub fn train(config: &RunConfig, learn: &VectorSet) -> Result<StoredIndex> {
    config.validate()?;
    match config.index_type {
        IndexType::Flat => {
            let pq = ProductQuantizer::train(learn, &config.pq_config())?;
            let pq = if config.optimize { optimize(config, &pq)?.0 } else { pq };
            Ok(StoredIndex::Quantizer(pq))
        }
        IndexType::Coarse => {
            let poly = config.poly_config();
            let trained = coarseindex::train_coarse(
                learn,
                &config.coarse_config(),
                &config.pq_config(),
                config.optimize.then_some(&poly),
            )?;
            Ok(StoredIndex::Coarse(CoarseIndexBuilder::new(trained).finish()))
        }
    }
}

/// Anneals the index assignment of every sub-quantizer.
pub fn optimize(config: &RunConfig, pq: &ProductQuantizer) -> Result<(ProductQuantizer, Vec<SubReport>)> {
    let (out, reports) = optimize_pq(pq, &config.poly_config())?;
    let (before, after) = reports
        .iter()
        .fold((0.0, 0.0), |(b, a), r| (b + r.initial_loss, a + r.loss));
    log::info!("assignment loss summed over sub-quantizers: {before:.4} -> {after:.4}");
    Ok((out, reports))
}

/// Re-optimizes the quantizer inside a stored index, rewriting codes, and
/// recalibrates the coarse threshold when `learn` is given.
pub fn optimize_stored(config: &RunConfig, index: StoredIndex, learn: Option<&VectorSet>) -> Result<StoredIndex> {
    let (pq, _) = optimize(config, index.pq())?;
    Ok(match index {
        StoredIndex::Quantizer(_) => StoredIndex::Quantizer(pq),
        StoredIndex::Flat(mut f) => {
            f.relabel(pq)?;
            StoredIndex::Flat(f)
        }
        StoredIndex::Coarse(mut c) => {
            c.relabel(pq)?;
            if let Some(learn) = learn {
                let cal = coarseindex::calibrate_residuals(c.coarse(), c.pq(), learn, config.filter_rate)?;
                c.set_tau(cal.tau)?;
            }
            StoredIndex::Coarse(c)
        }
    })
}

fn trained_of(c: &CoarseIndex) -> Result<TrainedCoarse> {
    if !c.is_empty() {
        return Err(Error::invalid("the coarse index already holds vectors"));
    }
    let bits = c.pq().code_bits();
    Ok(TrainedCoarse {
        coarse: c.coarse().clone(),
        pq: c.pq().clone(),
        calibration: Calibration {
            tau: c.tau(),
            survivor_fraction: f64::NAN,
            attainable: c.tau() as usize <= bits,
        },
    })
}

/// Adds the configured database to a trained model, streaming it.
pub fn build(config: &RunConfig, trained: StoredIndex) -> Result<StoredIndex> {
    match trained {
        StoredIndex::Quantizer(pq) => {
            let mut flat = FlatIndex::new(pq);
            stream_base(config, |chunk| flat.add(chunk))?;
            Ok(StoredIndex::Flat(flat))
        }
        StoredIndex::Coarse(c) => {
            let mut b = CoarseIndexBuilder::new(trained_of(&c)?);
            stream_base(config, |chunk| b.add(chunk))?;
            Ok(StoredIndex::Coarse(b.finish()))
        }
        StoredIndex::Flat(_) => Err(Error::invalid("the index is already built")),
    }
}

/// Threshold for a flat index at the configured filter rate, using the
/// first `calib_queries` training vectors as queries.
pub fn calibrate_flat(config: &RunConfig, index: &FlatIndex, learn: &VectorSet) -> Result<Calibration> {
    let cal = calibrate_threshold(index, &learn.head(config.calib_queries), config.filter_rate)?;
    log::info!(
        "tau = {} keeps {:.4} of the database at target filter rate {}",
        cal.tau,
        cal.survivor_fraction,
        config.filter_rate
    );
    Ok(cal)
}

/// Describes a stored index for `inspect`.
pub fn describe(index: &StoredIndex, meta: &IndexMeta) -> String {
    use std::fmt::Write;
    let pq = index.pq();
    let mut s = String::new();
    let _ = writeln!(s, "kind = {}", index.kind_name());
    let _ = writeln!(s, "dim = {}", pq.dim());
    let _ = writeln!(s, "m = {}", pq.m());
    let _ = writeln!(s, "nbits = {}", pq.nbits());
    let _ = writeln!(s, "code_bytes = {}", pq.code_size());
    let _ = writeln!(s, "identity_assignment = {}", pq.is_identity_assignment());
    match index {
        StoredIndex::Quantizer(_) => {}
        StoredIndex::Flat(f) => {
            let _ = writeln!(s, "vectors = {}", f.len());
        }
        StoredIndex::Coarse(c) => {
            let sizes = c.list_sizes();
            let nonempty = sizes.iter().filter(|&&n| n > 0).count();
            let _ = writeln!(s, "coarse_kind = {}", c.coarse().kind());
            let _ = writeln!(s, "coarse_centroids = {}", c.coarse().k());
            let _ = writeln!(s, "cells = {}", c.n_cells());
            let _ = writeln!(s, "nonempty_cells = {nonempty}");
            let _ = writeln!(s, "largest_list = {}", sizes.iter().max().copied().unwrap_or(0));
            let _ = writeln!(s, "vectors = {}", c.len());
            let _ = writeln!(s, "tau = {}", c.tau());
            if let CoarseQuantizer::Imi { split, .. } = c.coarse() {
                let _ = writeln!(s, "imi_split = {split}");
            }
        }
    }
    for (k, v) in meta.entries() {
        if !v.is_empty() {
            let _ = writeln!(s, "meta.{k} = {v}");
        }
    }
    s
}
