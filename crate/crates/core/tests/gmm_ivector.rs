use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use speechmark_core::frontend::FeatureMatrix;
use speechmark_core::gmm::{train_ubm_traced, GmmModel, UbmOptions};
use speechmark_core::ivector::{accumulate_stats, train_t_matrix, IvectorOptions, TotalVariabilityModel};

fn mixture_frames(seed: u64, n: usize, dim: usize, clusters: usize) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let centers: Vec<Vec<f64>> = (0..clusters).map(|_| (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
    let data: Vec<f64> = (0..n)
        .flat_map(|_| {
            let c = &centers[rng.random_range(0..clusters)];
            c.iter().map(|m| m + 0.7 * normal.sample(&mut rng)).collect::<Vec<_>>()
        })
        .collect();
    FeatureMatrix::from_flat(data, n, dim).unwrap()
}

#[test]
fn posteriors_match_hand_computation() {
    let g = GmmModel::new(vec![0.3, 0.7], vec![0.0, 2.0], vec![1.0, 4.0]).unwrap();
    let x = 0.8;
    let dens = |w: f64, m: f64, v: f64| w * (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let (a, b) = (dens(0.3, 0.0, 1.0), dens(0.7, 2.0, 4.0));
    let p = g.posteriors(&[x]).unwrap();
    assert!((p[0] - a / (a + b)).abs() < 1e-12);
    assert!((p[1] - b / (a + b)).abs() < 1e-12);
    assert!((g.log_likelihood(&[x]) - (a + b).ln()).abs() < 1e-12);
}

#[test]
fn em_log_likelihood_never_decreases() {
    for seed in 0..10u64 {
        let feats = mixture_frames(seed, 600, 3, 4);
        for k in [1, 2, 8] {
            let opts = UbmOptions { components: k, iters: 8, seed, ..Default::default() };
            let (_, trace) = train_ubm_traced(std::slice::from_ref(&feats), &opts).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "seed {seed} k {k}: {} -> {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn scalar_ivector_matches_grid_integration() {
    let (mean, var, t) = (0.5, 2.0, 1.3);
    let ubm = GmmModel::new(vec![1.0], vec![mean], vec![var]).unwrap();
    let model = TotalVariabilityModel::new(DMatrix::from_element(1, 1, t), &ubm).unwrap();
    let xs = [1.9, -0.4, 2.7, 0.1, 1.2];
    let feats = FeatureMatrix::from_flat(xs.to_vec(), xs.len(), 1).unwrap();
    let w = model.extract(&accumulate_stats(&ubm, &feats).unwrap()).unwrap();

    let log_post = |w: f64| -0.5 * w * w - xs.iter().map(|x| (x - mean - t * w).powi(2) / (2.0 * var)).sum::<f64>();
    let grid: Vec<f64> = (0..=160_000).map(|i| -8.0 + i as f64 * 1e-4).collect();
    let peak = grid.iter().map(|&w| log_post(w)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1) = (0.0, 0.0);
    for &g in &grid {
        let p = (log_post(g) - peak).exp();
        z += p;
        m1 += g * p;
    }
    assert!((w.values()[0] - m1 / z).abs() < 1e-4, "{} vs {}", w.values()[0], m1 / z);
}

#[test]
fn zero_t_matrix_gives_exact_zero() {
    let feats = mixture_frames(3, 200, 2, 3);
    let ubm = train_ubm_traced(std::slice::from_ref(&feats), &UbmOptions { components: 3, iters: 3, ..Default::default() })
        .unwrap()
        .0;
    let model = TotalVariabilityModel::new(DMatrix::zeros(6, 2), &ubm).unwrap();
    let w = model.extract(&accumulate_stats(&ubm, &feats).unwrap()).unwrap();
    assert!(w.values().iter().all(|&v| v == 0.0));
}

#[test]
fn known_total_variability_is_recovered() {
    let (k, d) = (4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let means: Vec<f64> = (0..k * d).map(|i| if i % d == 0 { 6.0 * (i / d) as f64 } else { 0.0 }).collect();
    let ubm = GmmModel::new(vec![0.25; k], means.clone(), vec![1.0; k * d]).unwrap();
    let t0: Vec<f64> = (0..k * d).map(|_| 1.5 * normal.sample(&mut rng)).collect();
    let stats: Vec<_> = (0..300)
        .map(|_| {
            let w = normal.sample(&mut rng);
            let data: Vec<f64> = (0..150)
                .flat_map(|_| {
                    let c = rng.random_range(0..k);
                    (0..d).map(|i| means[c * d + i] + t0[c * d + i] * w + normal.sample(&mut rng)).collect::<Vec<_>>()
                })
                .collect();
            accumulate_stats(&ubm, &FeatureMatrix::from_flat(data, 150, d).unwrap()).unwrap()
        })
        .collect();
    let model = train_t_matrix(&stats, &ubm, &IvectorOptions { rank: 1, iters: 20, seed: 4 }).unwrap();
    let t = model.t_matrix().column(0).clone_owned();
    let dot: f64 = t.iter().zip(&t0).map(|(a, b)| a * b).sum();
    let cos = dot / (t.norm() * t0.iter().map(|v| v * v).sum::<f64>().sqrt());
    assert!(cos.abs() > 0.95, "cosine {cos}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn soft_counts_sum_to_frames(seed in 0u64..1000, n in 1usize..300, k in 1usize..6) {
        let feats = mixture_frames(seed, n.max(k), 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        let means: Vec<f64> = (0..k * 3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let vars: Vec<f64> = (0..k * 3).map(|_| rng.random_range(0.1..3.0)).collect();
        let ubm = GmmModel::new(w.iter().map(|v| v / total).collect(), means, vars).unwrap();
        let s = accumulate_stats(&ubm, &feats).unwrap();
        prop_assert!((s.zero_order.iter().sum::<f64>() - feats.frames() as f64).abs() < 1e-6);
    }
}
