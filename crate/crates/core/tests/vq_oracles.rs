//! Quantizer behavior pinned against independent reference implementations.

use melpatch_core::patch::VectorGrid;
use melpatch_core::vq::{
    inertia, kmeans_fit, nearest, quantize, Codebook, EmaCodebook,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference nearest-neighbor: reverse scan with `<=` so ties resolve to the
/// lowest index through a different mechanism than the implementation's
/// forward scan with `<`.
fn oracle_nearest(entries: &[f64], k: usize, dim: usize, v: &[f64]) -> usize {
    let mut best_d = f64::INFINITY;
    let mut best_i = 0;
    for i in (0..k).rev() {
        let e = &entries[i * dim..(i + 1) * dim];
        let d: f64 = e.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d <= best_d {
            best_d = d;
            best_i = i;
        }
    }
    best_i
}

#[test]
fn quantize_matches_exhaustive_search_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE);
    for case in 0..25 {
        let dim = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=32);
        let entries: Vec<f64> = (0..k * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let cb = Codebook::from_flat(entries.clone(), k, dim).unwrap();
        let rows = rng.gen_range(1..=4);
        let cols = rng.gen_range(1..=5);
        // quantized values make exact distance ties likely
        let data: Vec<f64> = (0..rows * cols * dim)
            .map(|_| (rng.gen_range(-4i32..=4) as f64) * 0.5)
            .collect();
        let grid = VectorGrid::new(rows, cols, dim, rows * 4, data.clone()).unwrap();
        let tokens = quantize(&cb, &grid).unwrap();
        for (i, v) in grid.iter_vectors().enumerate() {
            let expected = oracle_nearest(&entries, k, dim, v);
            assert_eq!(
                tokens.indices()[i] as usize,
                expected,
                "case {case}: vector {i} disagrees with the exhaustive oracle"
            );
        }
    }
}

#[test]
fn nearest_agrees_with_oracle_on_tie_heavy_codebook() {
    // every entry is one of three points; many exact ties
    let entries = vec![1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0];
    let cb = Codebook::from_flat(entries.clone(), 4, 2).unwrap();
    let probes: [&[f64]; 4] = [&[0.0, 0.0], &[1.0, 1.0], &[-1.0, 1.0], &[0.0, 1.0]];
    for v in probes {
        let got = nearest(&cb, v).unwrap().0;
        assert_eq!(got, oracle_nearest(&entries, 4, 2, v));
    }
}

/// Optimal 1D 2-means found by trying every split of the sorted samples.
fn brute_force_two_means(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sse = |s: &[f64]| -> f64 {
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().map(|v| (v - mean) * (v - mean)).sum()
    };
    (1..sorted.len())
        .map(|cut| sse(&sorted[..cut]) + sse(&sorted[cut..]))
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn kmeans_reaches_the_brute_force_optimum_on_separated_clusters() {
    let samples = [0.9, 1.0, 1.1, 1.2, 8.9, 9.0, 9.1, 9.2];
    let cb = kmeans_fit(&samples, 1, 2, 20, 3).unwrap();
    let mut centers = [cb.entry(0)[0], cb.entry(1)[0]];
    centers.sort_by(f64::total_cmp);
    assert!((centers[0] - 1.05).abs() < 1e-12, "low center {}", centers[0]);
    assert!((centers[1] - 9.05).abs() < 1e-12, "high center {}", centers[1]);
    let got = inertia(&cb, &samples, 1).unwrap();
    let optimal = brute_force_two_means(&samples);
    assert!((got - optimal).abs() < 1e-12, "inertia {got} vs optimal {optimal}");
}

#[test]
fn kmeans_inertia_is_monotone_in_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let samples: Vec<f64> = (0..600).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut prev = f64::INFINITY;
    for iters in [1usize, 2, 4, 8, 16] {
        let cb = kmeans_fit(&samples, 3, 8, iters, 1234).unwrap();
        let i = inertia(&cb, &samples, 3).unwrap();
        assert!(
            i <= prev + 1e-9,
            "inertia rose from {prev} to {i} at iters={iters}"
        );
        prev = i;
    }
}

#[test]
fn kmeans_with_k_equal_n_hits_zero_inertia() {
    // every sample can own its own center
    let samples = [0.0, 1.0, 2.0, 5.0, 9.0, 12.0];
    let cb = kmeans_fit(&samples, 1, 6, 10, 7).unwrap();
    let i = inertia(&cb, &samples, 1).unwrap();
    assert!(i < 1e-18, "inertia {i} should be zero when k == n");
}

#[test]
fn ema_converges_to_the_batch_mean() {
    let cb = Codebook::from_flat(vec![10.0, -10.0], 2, 1).unwrap();
    let mut ema = EmaCodebook::new(cb);
    // entry 0 always sees {1.0, 2.0, 3.0}; fixed point is their mean
    let batch = [1.0, 2.0, 3.0];
    let assignments = [0u32, 0, 0];
    for _ in 0..300 {
        ema.update(&batch, &assignments, 0.9, 1e-5).unwrap();
    }
    let e0 = ema.codebook().entry(0)[0];
    assert!((e0 - 2.0).abs() < 1e-4, "entry 0 at {e0}, expected ~2.0");
    // unassigned entry never moved
    assert_eq!(ema.codebook().entry(1)[0], -10.0);
}
