//! Browser demo. Three operations, each returning a flat `Float64Array` that
//! the page in `www/` draws on a canvas:
//!
//! - `layout`: 16 centroids in the unit square with their 4-bit words before
//!   and after annealing, so Hamming neighbors can be drawn as edges;
//! - `trace`: loss of the current assignment while annealing;
//! - `sweep`: recall@10 and filter rate of dual search for every threshold.

use polysemous::eval::{exact_knn, recall_at};
use polysemous::flatindex::{FlatIndex, SearchParams, Strategy};
use polysemous::polyopt::{anneal, optimize_pq, AnnealSchedule, CentroidDistances, LossKind, PolyConfig};
use polysemous::pqcore::{PqConfig, ProductQuantizer};
use polysemous::{synthetic, Result};
use wasm_bindgen::prelude::*;

fn poly(loss: LossKind, n_iter: usize, seed: u64) -> PolyConfig {
    PolyConfig {
        loss,
        alpha: 0.5,
        schedule: AnnealSchedule {
            n_iter,
            seed,
            ..Default::default()
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub points: Vec<[f32; 2]>,
    /// Word of centroid `i` before (identity) and after annealing.
    pub before: Vec<u8>,
    pub after: Vec<u8>,
    pub loss_before: f64,
    pub loss_after: f64,
}

pub fn centroid_layout(seed: u64, n_iter: usize) -> Result<Layout> {
    let data = synthetic::uniform_square(4000, seed);
    let pq = ProductQuantizer::train(&data, &PqConfig { m: 1, nbits: 4, kmeans_iters: 30, seed })?;
    let c = CentroidDistances::from_codebook(pq.sub_codebook(0), 2);
    let out = anneal(&c, 4, &poly(LossKind::Distance, n_iter, seed), 0)?;
    Ok(Layout {
        points: pq.sub_codebook(0).chunks_exact(2).map(|p| [p[0], p[1]]).collect(),
        before: (0..16).collect(),
        after: out.perm,
        loss_before: out.initial_loss,
        loss_after: out.loss,
    })
}

/// `(iteration, loss)` samples of one annealing run on 256 (distance) or 64
/// (rank) centroids of a 4-dimensional mixture.
pub fn anneal_trace(seed: u64, n_iter: usize, loss: LossKind) -> Result<Vec<(usize, f64)>> {
    let nbits = match loss {
        LossKind::Distance => 8,
        LossKind::Rank => 6,
    };
    let data = synthetic::clustered(4000, 4, 12, seed);
    let pq = ProductQuantizer::train(&data, &PqConfig { m: 1, nbits, kmeans_iters: 15, seed })?;
    let c = CentroidDistances::from_codebook(pq.sub_codebook(0), 4);
    let every = (n_iter / 200).max(1);
    Ok(anneal(&c, nbits, &poly(loss, n_iter, seed), every)?.trace)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub tau: u32,
    pub recall_at_10: f64,
    pub filter_rate: f64,
}

/// Dual search over 4-byte codes of a synthetic set for every threshold.
pub fn tau_sweep(seed: u64, optimized: bool, n_iter: usize) -> Result<Vec<SweepPoint>> {
    let base = synthetic::clustered(5000, 16, 10, seed);
    let queries = synthetic::clustered(100, 16, 10, seed ^ 0xABCD);
    let mut pq = ProductQuantizer::train(&base, &PqConfig { m: 4, nbits: 8, kmeans_iters: 10, seed })?;
    if optimized {
        pq = optimize_pq(&pq, &poly(LossKind::Distance, n_iter, seed))?.0;
    }
    let mut index = FlatIndex::new(pq);
    index.add(&base)?;
    let gt = exact_knn(&base, &queries, 1)?;
    (0..=index.pq().code_bits() as u32)
        .map(|tau| {
            let res = index.search_batch(&queries, &SearchParams::new(10, tau, Strategy::Dual))?;
            let kept = res.iter().map(|r| r.survivors as f64 / r.scanned as f64).sum::<f64>() / res.len() as f64;
            Ok(SweepPoint {
                tau,
                recall_at_10: recall_at(&res, &gt, 10),
                filter_rate: 1.0 - kept,
            })
        })
        .collect()
}

fn js_err(e: polysemous::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// `[x, y, word_before, word_after]` per centroid, then the two losses.
#[wasm_bindgen]
pub fn layout(seed: u32, n_iter: u32) -> std::result::Result<Vec<f64>, JsValue> {
    let l = centroid_layout(seed as u64, n_iter as usize).map_err(js_err)?;
    let mut out = Vec::with_capacity(l.points.len() * 4 + 2);
    for (i, p) in l.points.iter().enumerate() {
        out.extend_from_slice(&[p[0] as f64, p[1] as f64, l.before[i] as f64, l.after[i] as f64]);
    }
    out.extend_from_slice(&[l.loss_before, l.loss_after]);
    Ok(out)
}

/// `[iteration, loss]` pairs; `loss` is `"distance"` or `"rank"`.
#[wasm_bindgen]
pub fn trace(seed: u32, n_iter: u32, loss: &str) -> std::result::Result<Vec<f64>, JsValue> {
    let loss: LossKind = loss.parse().map_err(js_err)?;
    let t = anneal_trace(seed as u64, n_iter as usize, loss).map_err(js_err)?;
    Ok(t.into_iter().flat_map(|(i, l)| [i as f64, l]).collect())
}

/// `[tau, recall@10, filter rate]` triples.
#[wasm_bindgen]
pub fn sweep(seed: u32, optimized: bool, n_iter: u32) -> std::result::Result<Vec<f64>, JsValue> {
    let s = tau_sweep(seed as u64, optimized, n_iter as usize).map_err(js_err)?;
    Ok(s.into_iter()
        .flat_map(|p| [p.tau as f64, p.recall_at_10, p.filter_rate])
        .collect())
}
