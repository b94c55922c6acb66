use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use speechmark_core::frontend::FeatureMatrix;
use speechmark_core::xvector::{
    stats_pool, train_xvector, XvectorConfig, XvectorNet, XvectorTrainOptions, STD_EPSILON,
};

fn random_feats(t: usize, d: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let data = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureMatrix::from_flat(data, t, d).unwrap()
}

/// Class-dependent mean shift on the first half of the dims.
fn labelled_set(n: usize, t: usize, d: usize, seed: u64) -> Vec<(FeatureMatrix, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|i| {
            let y = i % 2;
            let shift = if y == 0 { 0.6 } else { -0.6 };
            let data = (0..t * d)
                .map(|k| noise.sample(&mut rng) + if k % d < d / 2 { shift } else { 0.0 })
                .collect();
            (FeatureMatrix::from_flat(data, t, d).unwrap(), y)
        })
        .collect()
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let cfg = XvectorConfig::with_widths(3, 5, 6, 4, 2);
    let mut net = XvectorNet::new(cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // non-zero output layer so every layer receives gradient
    let n = net.params().num_params();
    let out = net.params().0.last().unwrap().w.len() + net.params().0.last().unwrap().b.len();
    for i in n - out..n {
        *net.params_mut().get_mut(i) = rng.random_range(-0.5..0.5);
    }
    let x = random_feats(32, 3, &mut rng);
    let (_, grad, _) = net.loss_and_gradient(&x, 1).unwrap();
    let eps = 1e-5;
    let mut checked = 0;
    for i in (0..n).step_by(7) {
        let analytic = grad.get(i);
        let orig = net.params().get(i);
        *net.params_mut().get_mut(i) = orig + eps;
        let lp = net.loss(&x, 1).unwrap();
        *net.params_mut().get_mut(i) = orig - eps;
        let lm = net.loss(&x, 1).unwrap();
        *net.params_mut().get_mut(i) = orig;
        let numeric = (lp - lm) / (2.0 * eps);
        let denom = analytic.abs().max(numeric.abs());
        if denom < 1e-7 {
            assert!((analytic - numeric).abs() < 1e-9, "param {i}: {analytic} vs {numeric}");
            continue;
        }
        let rel = (analytic - numeric).abs() / denom;
        assert!(rel < 1e-4, "param {i}: analytic {analytic} numeric {numeric} rel {rel}");
        checked += 1;
    }
    assert!(checked > 20);
}

#[test]
fn initial_loss_is_ln_of_class_count() {
    let net = XvectorNet::new(XvectorConfig::with_widths(4, 8, 16, 8, 2), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_feats(40, 4, &mut rng);
    let out = net.forward(&x).unwrap();
    assert_eq!(out.probabilities, vec![0.5, 0.5]);
    assert!((net.loss(&x, 0).unwrap() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn constant_pooling_input_has_zero_std() {
    let h = DMatrix::from_element(10, 3, 2.5);
    let (mean, std) = stats_pool(&h);
    assert!(mean.iter().all(|&m| (m - 2.5).abs() < 1e-12));
    assert!(std.iter().all(|&s| s <= 1e-5 && (s - STD_EPSILON.sqrt()).abs() < 1e-15));
}

#[test]
fn training_separates_shifted_classes() {
    let data = labelled_set(40, 60, 8, 21);
    let mut net = XvectorNet::new(XvectorConfig::with_widths(8, 16, 32, 16, 2), 5).unwrap();
    let opts = XvectorTrainOptions {
        epochs: 30,
        batch_size: 8,
        chunk_min: 40,
        chunk_max: 60,
        learning_rate: 0.01,
        seed: 6,
        ..Default::default()
    };
    let trace = train_xvector(&mut net, &data, &opts).unwrap();
    assert_eq!(trace.epoch_loss.len(), 30);
    let correct = data
        .iter()
        .filter(|(f, y)| {
            let p = net.forward(f).unwrap().probabilities;
            usize::from(p[1] > p[0]) == *y
        })
        .count();
    assert!(correct as f64 / data.len() as f64 >= 0.95, "accuracy {correct}/40");
    assert!(trace.epoch_loss[29] < trace.epoch_loss[0]);
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let data = labelled_set(12, 40, 4, 2);
    let opts = XvectorTrainOptions { epochs: 3, batch_size: 4, chunk_min: 30, chunk_max: 40, seed: 1, ..Default::default() };
    let run = || {
        let mut net = XvectorNet::new(XvectorConfig::with_widths(4, 8, 8, 8, 2), 9).unwrap();
        train_xvector(&mut net, &data, &opts).unwrap();
        net.to_bytes()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pooling_ignores_frame_order(seed in any::<u64>(), t in 2usize..30, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = DMatrix::from_fn(t, d, |_, _| rng.random_range(-3.0..3.0));
        let mut perm: Vec<usize> = (0..t).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let hp = DMatrix::from_fn(t, d, |i, j| h[(perm[i], j)]);
        let (m1, s1) = stats_pool(&h);
        let (m2, s2) = stats_pool(&hp);
        prop_assert_eq!(m1, m2);
        prop_assert_eq!(s1, s2);
    }

    #[test]
    fn context_free_network_ignores_frame_order(seed in any::<u64>(), t in 1usize..20) {
        let cfg = XvectorConfig::with_widths(3, 6, 6, 4, 2).context_free();
        prop_assert_eq!(cfg.receptive_field(), 1);
        let net = XvectorNet::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = random_feats(t, 3, &mut rng);
        let rows: Vec<Vec<f64>> = (0..t).rev().map(|i| x.row(i).to_vec()).collect();
        let xr = FeatureMatrix::from_rows(rows, 0.01, 0.025).unwrap();
        let a = net.embed(&x).unwrap();
        let b = net.embed(&xr).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }
}
