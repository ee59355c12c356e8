use super::*;
use crate::distance::l2_sqr;
use crate::flatindex::{SearchParams, Strategy};
use crate::synthetic;

fn trained(kind: CoarseKind, k_coarse: usize, data: &VectorSet, optimize: bool) -> TrainedCoarse {
    let config = CoarseConfig {
        kind,
        k_coarse,
        nprobe: 4,
        cap: 1000,
        filter_rate: 0.5,
        kmeans_iters: 10,
        seed: 5,
    };
    let poly = PolyConfig {
        schedule: crate::polyopt::AnnealSchedule {
            n_iter: 2000,
            ..Default::default()
        },
        ..Default::default()
    };
    train_coarse(data, &config, &PqConfig { m: 4, nbits: 4, kmeans_iters: 10, seed: 3 }, optimize.then_some(&poly))
        .unwrap()
}

fn params(k: usize, nprobe: usize, cap: usize, tau: u32) -> CoarseSearchParams {
    CoarseSearchParams {
        k,
        nprobe,
        cap,
        tau,
        tables: TableMode::PerCell,
    }
}

#[test]
fn imi_has_k_squared_cells() {
    let data = synthetic::clustered(2000, 8, 6, 1);
    let t = trained(CoarseKind::Imi, 8, &data, false);
    assert_eq!(t.coarse.n_cells(), 64);
    assert_eq!(t.coarse.k(), 8);
}

#[test]
fn build_assigns_nearest_cell() {
    let data = synthetic::clustered(1500, 8, 6, 2);
    for kind in [CoarseKind::Ivf, CoarseKind::Imi] {
        let t = trained(kind, 8, &data, false);
        let coarse = t.coarse.clone();
        let idx = build(&data, t).unwrap();
        assert_eq!(idx.len(), data.len());
        for cell in 0..idx.n_cells() {
            for &id in idx.list(cell).ids {
                let x = data.row(id as usize);
                let best = (0..coarse.n_cells())
                    .map(|c| l2_sqr(x, &coarse.centroid(c)))
                    .fold(f32::INFINITY, f32::min);
                let mine = l2_sqr(x, &coarse.centroid(cell));
                assert!(mine <= best * (1.0 + 1e-5) + 1e-5, "{kind}: {mine} > {best}");
            }
        }
    }
}

#[test]
fn enumeration_matches_full_sort() {
    let data = synthetic::clustered(3000, 8, 10, 3);
    let t = trained(CoarseKind::Imi, 32, &data, false);
    let queries = synthetic::clustered(20, 8, 10, 4);
    for q in queries.rows() {
        let got = t.coarse.enumerate_cells(q, 1024);
        let mut all: Vec<(usize, f32)> = (0..1024).map(|c| (c, l2_sqr(q, &t.coarse.centroid(c)))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1));
        assert_eq!(got.len(), 1024);
        let mut seen: Vec<usize> = got.iter().map(|g| g.0).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 1024, "cells repeat");
        for (g, a) in got.iter().zip(&all) {
            // Half distances are summed, so allow rounding between orders.
            assert!((g.1 - a.1).abs() <= 1e-4 * a.1.max(1.0), "{g:?} vs {a:?}");
        }
        assert!(got.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}

#[test]
fn full_probe_equals_exhaustive_residual_adc() {
    let data = synthetic::clustered(2000, 8, 6, 6);
    let t = trained(CoarseKind::Ivf, 16, &data, true);
    let idx = build(&data, t).unwrap();
    let bits = idx.pq().code_bits() as u32;
    let queries = synthetic::clustered(30, 8, 6, 7);
    for q in queries.rows() {
        let got = idx.search(q, &params(20, idx.n_cells(), usize::MAX, bits)).unwrap();
        assert_eq!(got.scanned, idx.len());
        // Oracle: decode every stored residual and score it directly.
        let mut all: Vec<(f32, u64)> = Vec::new();
        for cell in 0..idx.n_cells() {
            let c = idx.coarse().centroid(cell);
            let list = idx.list(cell);
            for (code, &id) in list.codes.chunks_exact(idx.pq().code_size()).zip(list.ids) {
                let lut = idx.pq().compute_lut(&q.iter().zip(&c).map(|(a, b)| a - b).collect::<Vec<_>>()).unwrap();
                all.push((lut.adc_distance(idx.pq(), code), id));
            }
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let want: Vec<u64> = all.iter().take(20).map(|x| x.1).collect();
        assert_eq!(got.ids().collect::<Vec<_>>(), want);
    }
}

#[test]
fn more_probes_never_lose_recall() {
    let data = synthetic::clustered(3000, 8, 8, 8);
    let t = trained(CoarseKind::Ivf, 32, &data, true);
    let tau = t.calibration.tau;
    let idx = build(&data, t).unwrap();
    let queries = synthetic::clustered(50, 8, 8, 9);
    let gt = crate::eval::exact_knn(&data, &queries, 1).unwrap();
    let mut last = 0.0;
    for nprobe in [1, 2, 4, 8, 16, 32] {
        let res = idx.search_batch(&queries, &params(10, nprobe, usize::MAX, tau)).unwrap();
        let r = crate::eval::recall_at(&res, &gt, 10);
        assert!(r >= last, "nprobe {nprobe}: {r} < {last}");
        last = r;
    }
}

#[test]
fn cap_limits_scanned_codes() {
    let data = synthetic::clustered(2000, 8, 4, 10);
    let t = trained(CoarseKind::Ivf, 8, &data, false);
    let idx = build(&data, t).unwrap();
    let bits = idx.pq().code_bits() as u32;
    for cap in [1, 17, 300, 5000] {
        let r = idx.search(data.row(0), &params(5, 8, cap, bits)).unwrap();
        assert_eq!(r.scanned, cap.min(idx.len()));
    }
}

#[test]
fn duplicate_vector_found_at_k1() {
    let mut data = synthetic::clustered(1000, 8, 4, 11).into_parts().1;
    let dup = data[8 * 123..8 * 124].to_vec();
    data.extend_from_slice(&dup);
    let data = VectorSet::new(8, data).unwrap();
    let t = trained(CoarseKind::Ivf, 8, &data, false);
    let idx = build(&data, t).unwrap();
    let bits = idx.pq().code_bits() as u32;
    let r = idx.search(&dup, &params(1, 8, usize::MAX, bits)).unwrap();
    assert_eq!(r.len(), 1);
    assert!(r.hits[0].id == 123 || r.hits[0].id == 1000);
}

#[test]
fn residuals_are_smaller_than_vectors() {
    let data = synthetic::clustered(2000, 8, 6, 12);
    let t = trained(CoarseKind::Ivf, 16, &data, false);
    let res = residuals(&t.coarse, &data);
    let energy = |s: &VectorSet| s.as_slice().iter().map(|v| (*v as f64).powi(2)).sum::<f64>();
    assert!(energy(&res) < 0.5 * energy(&data));
}

#[test]
fn precomputed_tables_match_per_cell() {
    let data = synthetic::clustered(2500, 8, 6, 13);
    for kind in [CoarseKind::Ivf, CoarseKind::Imi] {
        let t = trained(kind, 8, &data, true);
        let tau = t.calibration.tau;
        let mut idx = build(&data, t).unwrap();
        idx.precompute_tables().unwrap();
        let queries = synthetic::clustered(40, 8, 6, 14);
        for q in queries.rows() {
            let mut p = params(10, 6, 800, tau);
            let a = idx.search(q, &p).unwrap();
            p.tables = TableMode::Precomputed;
            let b = idx.search(q, &p).unwrap();
            assert_eq!((a.scanned, a.survivors), (b.scanned, b.survivors), "{kind}");
            assert_eq!(a.len(), b.len());
            for (x, y) in a.hits.iter().zip(&b.hits) {
                assert!((x.score - y.score).abs() <= 1e-3 * x.score.abs().max(1.0), "{kind}: {x:?} vs {y:?}");
            }
        }
    }
}

#[test]
fn relabel_keeps_decoded_lists() {
    let data = synthetic::clustered(1200, 8, 4, 15);
    let t = trained(CoarseKind::Ivf, 8, &data, false);
    let mut idx = build(&data, t).unwrap();
    let before: Vec<Vec<f32>> = idx.codes().chunks_exact(idx.pq().code_size()).map(|c| idx.pq().decode(c)).collect();
    let mut pq = idx.pq().clone();
    let perm: Vec<u8> = (0..16u8).rev().collect();
    pq.set_assignment(1, &perm).unwrap();
    idx.relabel(pq).unwrap();
    let after: Vec<Vec<f32>> = idx.codes().chunks_exact(idx.pq().code_size()).map(|c| idx.pq().decode(c)).collect();
    assert_eq!(before, after);
}

#[test]
fn single_cell_matches_flat_dual() {
    // One coarse centroid: coarse search degenerates to flat search on
    // residuals against a shifted query.
    let data = synthetic::clustered(800, 8, 4, 16);
    let t = trained(CoarseKind::Ivf, 1, &data, true);
    let c = t.coarse.centroid(0);
    let tau = t.calibration.tau;
    let pq = t.pq.clone();
    let idx = build(&data, t).unwrap();
    let res = residuals(&idx.coarse().clone(), &data);
    let mut flat = FlatIndex::new(pq);
    flat.add(&res).unwrap();
    for q in synthetic::clustered(10, 8, 4, 17).rows() {
        let shifted: Vec<f32> = q.iter().zip(&c).map(|(a, b)| a - b).collect();
        let want = flat.search(&shifted, &SearchParams::new(10, tau, Strategy::Dual)).unwrap();
        let got = idx.search(q, &params(10, 1, usize::MAX, tau)).unwrap();
        assert_eq!(got.survivors, want.survivors);
        assert_eq!(got.ids().collect::<Vec<_>>(), want.ids().collect::<Vec<_>>());
    }
}
