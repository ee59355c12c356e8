use super::*;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_codebook(k: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k * dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn random_perm(k: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    use rand::seq::SliceRandom;
    let mut p: Vec<u8> = (0..k).map(|i| i as u8).collect();
    p.shuffle(rng);
    p
}

/// Direct transcription of the weighted distance loss.
fn oracle_distance_loss(perm: &[u8], c: &CentroidDistances, nbits: u32, mu: f64, sigma: f64, alpha: f64) -> f64 {
    let k = c.k();
    let f = |x: f64| (nbits as f64).sqrt() / (2.0 * sigma) * (x - mu) + nbits as f64 / 2.0;
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = f(c.get(i, j));
            let h = (perm[i] ^ perm[j]).count_ones() as f64;
            total += alpha.powf(target) * (h - target).powi(2);
        }
    }
    total
}

/// Direct O(K^3) transcription of the weighted rank loss.
fn oracle_rank_loss(perm: &[u8], c: &CentroidDistances) -> f64 {
    let k = c.k();
    let h = |x: usize, y: usize| (perm[x] ^ perm[y]).count_ones();
    let harmonic = |n: usize| (1..=n).map(|i| 1.0 / i as f64).sum::<f64>();
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            let rank = 1 + (0..k).filter(|&l| c.get(i, l) < c.get(i, j)).count();
            let violations = (0..k)
                .filter(|&l| c.get(i, j) < c.get(i, l) && h(i, j) > h(i, l))
                .count();
            total += harmonic(violations) / rank as f64;
        }
    }
    total
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

/// Every permutation of 0..k via Heap's algorithm.
fn for_each_permutation(k: usize, mut f: impl FnMut(&[u8])) {
    let mut p: Vec<u8> = (0..k).map(|i| i as u8).collect();
    let mut c = vec![0usize; k];
    f(&p);
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            f(&p);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn fitted_map_hits_half_bits_at_mean() {
    let c = CentroidDistances::from_codebook(&gaussian_codebook(16, 3, 1), 3);
    let spec = DistanceLossSpec::fit(&c, 4, 0.5).unwrap();
    assert_eq!(spec.map(spec.mu), 2.0);
    assert!(spec.sigma > 0.0);
}

#[test]
fn distance_loss_matches_oracle() {
    let c = CentroidDistances::from_codebook(&gaussian_codebook(32, 4, 2), 4);
    let spec = DistanceLossSpec::fit(&c, 5, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let p = random_perm(32, &mut rng);
        let got = distance_loss(&p, &c, &spec).unwrap();
        let want = oracle_distance_loss(&p, &c, 5, spec.mu, spec.sigma, 0.5);
        assert!(rel_close(got, want, 1e-12), "{got} vs {want}");
    }
}

#[test]
fn two_centroid_pair_with_unit_target_costs_nothing() {
    let c = CentroidDistances::from_matrix(2, vec![0.0, 3.0, 3.0, 0.0]).unwrap();
    // f(x) = (x - mu) / (2 sigma) + 1/2 = 1 at x = 3 when mu = 2, sigma = 1.
    let spec = DistanceLossSpec::new(1, 2.0, 1.0, 0.5).unwrap();
    assert_eq!(spec.map(3.0), 1.0);
    let diagonal = 2.0 * spec.weight(spec.map(0.0)) * spec.map(0.0).powi(2);
    for p in [[0u8, 1], [1, 0]] {
        let loss = distance_loss(&p, &c, &spec).unwrap();
        assert!((loss - diagonal).abs() < 1e-12, "{loss}");
    }
}

#[test]
fn complement_and_xor_mask_leave_distance_loss_unchanged() {
    let c = CentroidDistances::from_codebook(&gaussian_codebook(64, 2, 4), 2);
    let spec = DistanceLossSpec::fit(&c, 6, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_perm(64, &mut rng);
    let base = distance_loss(&p, &c, &spec).unwrap();
    for mask in [0b111111u8, 0b101010, 0b000001] {
        let q: Vec<u8> = p.iter().map(|&w| w ^ mask).collect();
        assert!(rel_close(base, distance_loss(&q, &c, &spec).unwrap(), 1e-12));
    }
}

#[test]
fn distance_delta_matches_full_recompute_k256() {
    let c = CentroidDistances::from_codebook(&gaussian_codebook(256, 8, 6), 8);
    let spec = DistanceLossSpec::fit(&c, 8, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut obj = DistanceObjective::new(&c, &spec, random_perm(256, &mut rng)).unwrap();
    for _ in 0..1000 {
        let a = rng.random_range(0..256);
        let b = (a + 1 + rng.random_range(0..255)) % 256;
        let before = oracle_distance_loss(obj.perm(), &c, 8, spec.mu, spec.sigma, 0.5);
        let delta = obj.delta(a, b);
        let mut p = obj.perm().to_vec();
        p.swap(a, b);
        let after = oracle_distance_loss(&p, &c, 8, spec.mu, spec.sigma, 0.5);
        assert!(rel_close(delta, after - before, 1e-6), "{delta} vs {}", after - before);
        // Wander so the checks cover many states.
        if rng.random::<bool>() {
            obj.apply(a, b);
        }
    }
    assert!(rel_close(obj.loss(), obj.exact_loss(), 1e-9));
}

#[test]
fn swap_and_swap_back_cancel() {
    let c = CentroidDistances::from_codebook(&gaussian_codebook(16, 2, 8), 2);
    let dspec = DistanceLossSpec::fit(&c, 4, 0.5).unwrap();
    let rspec = RankLossSpec::new(&c);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_perm(16, &mut rng);
    let mut d = DistanceObjective::new(&c, &dspec, p.clone()).unwrap();
    let mut r = RankObjective::new(&c, &rspec, p).unwrap();
    for (a, b) in [(0, 5), (3, 15), (7, 8)] {
        let fwd = d.delta(a, b);
        d.apply(a, b);
        assert!((fwd + d.delta(a, b)).abs() < 1e-9);
        d.apply(a, b);
        let fwd = r.delta(a, b);
        r.apply(a, b);
        assert!((fwd + r.delta(a, b)).abs() < 1e-9);
        r.apply(a, b);
    }
}

#[test]
fn duplicate_centroids_swap_for_free() {
    let mut book = gaussian_codebook(16, 3, 10);
    let (src, dst) = (4 * 3, 11 * 3);
    let row: Vec<f32> = book[src..src + 3].to_vec();
    book[dst..dst + 3].copy_from_slice(&row);
    let c = CentroidDistances::from_codebook(&book, 3);
    assert_eq!(c.get(4, 11), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = random_perm(16, &mut rng);
    let dspec = DistanceLossSpec::fit(&c, 4, 0.5).unwrap();
    assert!(distance_loss_delta(&p, (4, 11), &c, &dspec).unwrap().abs() < 1e-9);
    let rspec = RankLossSpec::new(&c);
    assert!(rank_loss_delta(&p, (4, 11), &c, &rspec).unwrap().abs() < 1e-9);
}

#[test]
fn same_index_swap_is_rejected() {
    let c = CentroidDistances::from_codebook(&gaussian_codebook(4, 2, 0), 2);
    let p = [0u8, 1, 2, 3];
    let dspec = DistanceLossSpec::fit(&c, 2, 0.5).unwrap();
    assert!(distance_loss_delta(&p, (2, 2), &c, &dspec).is_err());
    assert!(rank_loss_delta(&p, (1, 1), &c, &RankLossSpec::new(&c)).is_err());
    assert!(distance_loss(&[0, 1, 1, 3], &c, &dspec).is_err());
}

#[test]
fn rank_loss_matches_triple_loop() {
    for seed in 0..5 {
        let c = CentroidDistances::from_codebook(&gaussian_codebook(8, 2, 20 + seed), 2);
        let spec = RankLossSpec::new(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_perm(8, &mut rng);
        let got = rank_loss(&p, &c, &spec).unwrap();
        assert!(rel_close(got, oracle_rank_loss(&p, &c), 1e-12));
    }
}

#[test]
fn rank_loss_trivial_cases() {
    let c = CentroidDistances::from_codebook(&gaussian_codebook(2, 3, 1), 3);
    let spec = RankLossSpec::new(&c);
    assert_eq!(rank_loss(&[0, 1], &c, &spec).unwrap(), 0.0);
    assert_eq!(rank_loss(&[1, 0], &c, &spec).unwrap(), 0.0);

    // Centroids at the corners of the unit square, labelled by their
    // coordinates: Euclidean and Hamming orderings agree everywhere.
    let square = [0.0f32, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let c = CentroidDistances::from_codebook(&square, 2);
    let spec = RankLossSpec::new(&c);
    assert_eq!(rank_loss(&[0, 1, 2, 3], &c, &spec).unwrap(), 0.0);
    // Putting diagonal corners at Hamming distance 1 inverts some pairs.
    assert!(rank_loss(&[0, 1, 3, 2], &c, &spec).unwrap() > 0.0);
}

#[test]
fn rank_delta_matches_full_recompute_k64() {
    let c = CentroidDistances::from_codebook(&gaussian_codebook(64, 4, 12), 4);
    let spec = RankLossSpec::new(&c);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut obj = RankObjective::new(&c, &spec, random_perm(64, &mut rng)).unwrap();
    for _ in 0..200 {
        let a = rng.random_range(0..64);
        let b = (a + 1 + rng.random_range(0..63)) % 64;
        let before = oracle_rank_loss(obj.perm(), &c);
        let mut p = obj.perm().to_vec();
        p.swap(a, b);
        let after = oracle_rank_loss(&p, &c);
        let delta = obj.delta(a, b);
        assert!(
            rel_close(delta, after - before, 1e-6) || (delta - (after - before)).abs() < 1e-9,
            "{delta} vs {}",
            after - before
        );
        obj.apply(a, b);
        assert!(rel_close(obj.loss(), after, 1e-9));
    }
}

#[test]
fn rank_loss_is_relabeling_equivariant() {
    let c = CentroidDistances::from_codebook(&gaussian_codebook(16, 2, 14), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let p = random_perm(16, &mut rng);
    let order: Vec<usize> = random_perm(16, &mut rng).into_iter().map(usize::from).collect();
    let c2 = c.relabeled(&order);
    let p2: Vec<u8> = order.iter().map(|&o| p[o]).collect();
    let a = rank_loss(&p, &c, &RankLossSpec::new(&c)).unwrap();
    let b = rank_loss(&p2, &c2, &RankLossSpec::new(&c2)).unwrap();
    assert!(rel_close(a, b, 1e-12));
}

#[test]
fn zero_iterations_returns_identity() {
    let c = CentroidDistances::from_codebook(&gaussian_codebook(8, 2, 1), 2);
    let config = PolyConfig {
        schedule: AnnealSchedule {
            n_iter: 0,
            ..Default::default()
        },
        ..Default::default()
    };
    let out = anneal(&c, 3, &config, 0).unwrap();
    assert_eq!(out.perm, (0..8).collect::<Vec<u8>>());
    assert_eq!(out.accepted, 0);
}

#[test]
fn best_so_far_never_worse_than_start_or_end() {
    for loss in [LossKind::Distance, LossKind::Rank] {
        let c = CentroidDistances::from_codebook(&gaussian_codebook(32, 3, 16), 3);
        let config = PolyConfig {
            loss,
            schedule: AnnealSchedule {
                n_iter: 5_000,
                seed: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = anneal(&c, 5, &config, 100).unwrap();
        assert!(out.loss <= out.initial_loss + 1e-9);
        assert!(out.loss <= out.final_loss + 1e-9);
        for &(_, l) in &out.trace {
            assert!(out.loss <= l + 1e-9);
        }
    }
}

#[test]
fn annealing_is_deterministic() {
    let c = CentroidDistances::from_codebook(&gaussian_codebook(64, 2, 17), 2);
    let config = PolyConfig {
        schedule: AnnealSchedule {
            n_iter: 20_000,
            seed: 99,
            ..Default::default()
        },
        ..Default::default()
    };
    let a = anneal(&c, 6, &config, 0).unwrap();
    let b = anneal(&c, 6, &config, 0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn metropolis_rule_also_improves() {
    let c = CentroidDistances::from_codebook(&gaussian_codebook(32, 2, 18), 2);
    let config = PolyConfig {
        schedule: AnnealSchedule {
            n_iter: 20_000,
            accept: AcceptRule::Metropolis,
            ..Default::default()
        },
        ..Default::default()
    };
    let out = anneal(&c, 5, &config, 0).unwrap();
    assert!(out.loss < out.initial_loss);
}

#[test]
fn small_instance_reaches_near_exhaustive_minimum() {
    let mut hits = 0;
    for seed in 0..10 {
        let c = CentroidDistances::from_codebook(&gaussian_codebook(8, 4, 100 + seed), 4);
        let spec = DistanceLossSpec::fit(&c, 3, 0.5).unwrap();
        let mut best = f64::INFINITY;
        for_each_permutation(8, |p| {
            best = best.min(oracle_distance_loss(p, &c, 3, spec.mu, spec.sigma, 0.5));
        });
        let config = PolyConfig {
            schedule: AnnealSchedule {
                seed,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = anneal(&c, 3, &config, 0).unwrap();
        if out.loss <= 1.05 * best {
            hits += 1;
        }
    }
    assert!(hits >= 9, "{hits}/10");
}

#[test]
fn heap_enumeration_is_complete() {
    let mut seen = std::collections::HashSet::new();
    for_each_permutation(5, |p| {
        seen.insert(p.to_vec());
    });
    assert_eq!(seen.len(), 120);
}

#[test]
fn optimize_pq_keeps_codebooks_and_lowers_losses() {
    let dim = 8;
    let book = gaussian_codebook(2 * 16, dim / 2, 21);
    let pq = ProductQuantizer::from_parts(dim, 2, 4, book, None).unwrap();
    let config = PolyConfig {
        schedule: AnnealSchedule {
            n_iter: 20_000,
            ..Default::default()
        },
        ..Default::default()
    };
    let (opt, reports) = optimize_pq(&pq, &config).unwrap();
    assert_eq!(opt.centroids(), pq.centroids());
    assert!(!opt.is_identity_assignment());
    for r in &reports {
        assert!(r.loss < r.initial_loss);
    }
}
