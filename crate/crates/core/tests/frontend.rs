use std::f64::consts::PI;

use proptest::prelude::*;
use speechmark_core::corpus::AudioSignal;
use speechmark_core::frontend::{dct_matrix, hamming, hz_to_mel, mel_filterbank, mel_to_hz, FrontendConfig, MfccExtractor};

/// Direct DFT magnitude, filterbank, log and DCT on one frame.
fn oracle_frame(samples: &[f64], preemph: f64, cfg: &FrontendConfig, start: usize) -> Vec<f64> {
    let win = cfg.window_samples();
    let n_fft = win.next_power_of_two();
    let window = hamming(win);
    let frame: Vec<f64> = (0..win)
        .map(|i| {
            let j = start + i;
            let prev = if j == 0 { 0.0 } else { samples[j - 1] };
            (samples[j] - preemph * prev) * window[i]
        })
        .collect();
    let mag: Vec<f64> = (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &x) in frame.iter().enumerate() {
                let a = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            re.hypot(im)
        })
        .collect();
    let fb = mel_filterbank(cfg.n_mels, n_fft, cfg.sample_rate, cfg.low_freq);
    let log_mel: Vec<f64> =
        fb.iter().map(|f| f.iter().zip(&mag).map(|(w, m)| w * m).sum::<f64>().max(cfg.log_floor).ln()).collect();
    dct_matrix(cfg.n_mfcc, cfg.n_mels).iter().map(|b| b.iter().zip(&log_mel).map(|(a, x)| a * x).sum()).collect()
}

fn chirp(n: usize, rate: u32) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(rate);
            0.3 * (2.0 * PI * (300.0 + 900.0 * t) * t).sin() + 0.05 * (2.0 * PI * 2500.0 * t).sin()
        })
        .collect()
}

#[test]
fn raw_mfcc_matches_direct_dft() {
    let cfg = FrontendConfig { cmvn: false, ..Default::default() };
    let samples = chirp(4000, cfg.sample_rate);
    let ex = MfccExtractor::new(cfg.clone()).unwrap();
    let (feats, _) = ex.mfcc_with_energy(&AudioSignal::new(samples.clone(), cfg.sample_rate)).unwrap();
    assert_eq!(feats.frames(), (4000 - 400) / 160 + 1);
    for t in [0, 7, feats.frames() - 1] {
        let want = oracle_frame(&samples, cfg.preemphasis, &cfg, t * 160);
        for (a, b) in feats.row(t).iter().zip(&want) {
            assert!((a - b).abs() < 1e-8, "frame {t}: {a} vs {b}");
        }
    }
}

#[test]
fn filterbank_rows_peak_at_their_centres() {
    let fb = mel_filterbank(23, 512, 16_000, 20.0);
    assert_eq!(fb.len(), 23);
    assert!(fb.iter().all(|f| f.len() == 257 && f.iter().all(|&w| (0.0..=1.0).contains(&w))));
    let peaks: Vec<usize> =
        fb.iter().map(|f| f.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0).collect();
    assert!(peaks.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn dct_basis_is_orthonormal() {
    let d = dct_matrix(23, 23);
    for i in 0..23 {
        for j in 0..23 {
            let dot: f64 = d[i].iter().zip(&d[j]).map(|(a, b)| a * b).sum();
            assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn mel_scale_roundtrips(hz in 0.0f64..8000.0) {
        prop_assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
    }

    #[test]
    fn frame_count_formula(n in 400usize..20_000) {
        let ex = MfccExtractor::new(FrontendConfig { cmvn: false, ..Default::default() }).unwrap();
        let sig = AudioSignal::new(vec![0.01; n], 16_000);
        prop_assert_eq!(ex.extract(&sig).unwrap().frames(), (n - 400) / 160 + 1);
    }
}
