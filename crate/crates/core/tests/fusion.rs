use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use speechmark_core::corpus::Label;
use speechmark_core::fusion::{train_svm, BlockLayout, Confusion, FusionVector, SvmOptions};

const LAYOUT: BlockLayout = BlockLayout { perplexity: false, ivector: Some(2), xvector: None };

fn clusters(n: usize, seed: u64) -> Vec<(FusionVector, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Dementia } else { Label::Control };
            let c = 2.0 * label.sign();
            let values = vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)];
            (FusionVector { values, layout: LAYOUT }, label)
        })
        .collect()
}

#[test]
fn separable_clusters_are_classified() {
    let train = clusters(60, 1);
    let model = train_svm(&train, &SvmOptions::default()).unwrap();
    for (v, y) in &train {
        assert_eq!(model.predict(v).unwrap().0, *y);
    }
    for (v, y) in &clusters(40, 2) {
        let (label, score) = model.predict(v).unwrap();
        assert_eq!(label, *y);
        assert_eq!(score > 0.0, *y == Label::Dementia);
    }
}

#[test]
fn objective_trace_never_increases() {
    let model = train_svm(&clusters(30, 3), &SvmOptions { c: 1.0, iters: 300 }).unwrap();
    assert_eq!(model.objective_trace.len(), 300);
    assert!(model.objective_trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn flipping_labels_negates_the_decision_function() {
    let train = clusters(40, 4);
    let flipped: Vec<_> = train.iter().map(|(v, y)| (v.clone(), y.flipped())).collect();
    let opts = SvmOptions::default();
    let a = train_svm(&train, &opts).unwrap();
    let b = train_svm(&flipped, &opts).unwrap();
    for (v, _) in clusters(20, 5) {
        assert!((a.decision(&v).unwrap() + b.decision(&v).unwrap()).abs() < 1e-6);
    }
}

#[test]
fn duplicating_the_dataset_keeps_the_boundary() {
    let train = clusters(40, 6);
    let doubled: Vec<_> = train.iter().chain(train.iter()).cloned().collect();
    let opts = SvmOptions::default();
    let a = train_svm(&train, &opts).unwrap();
    let b = train_svm(&doubled, &opts).unwrap();
    for (wa, wb) in a.weights.iter().zip(&b.weights) {
        assert!((wa - wb).abs() < 1e-6);
    }
    assert!((a.bias - b.bias).abs() < 1e-6);
}

#[test]
fn single_class_is_a_training_error() {
    let train: Vec<_> = clusters(10, 7).into_iter().filter(|(_, y)| *y == Label::Control).collect();
    assert!(train_svm(&train, &SvmOptions::default()).is_err());
}

proptest! {
    #[test]
    fn metric_identities(tp in 0usize..50, tn in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
        prop_assume!(tp + tn + fp + fn_ > 0);
        let c = Confusion::new(tp, tn, fp, fn_);
        let acc = 100.0 * (tp + tn) as f64 / (tp + tn + fp + fn_) as f64;
        prop_assert!((c.accuracy() - acc).abs() < 1e-12);
        let (p, r, f) = c.macro_scores();
        for m in [p, r, f, c.accuracy()] {
            prop_assert!((0.0..=100.0).contains(&m));
        }
        let [d, k] = c.per_class();
        prop_assert!((f - 50.0 * (d.2 + k.2)).abs() < 1e-9);
    }
}
