//! MFCC front end: framing, mel filterbank, log, DCT and per-recording CMVN.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::corpus::AudioSignal;
use crate::error::{Error, Result};

/// Row-major `frames x dim` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    frames: usize,
    dim: usize,
    pub frame_shift: f64,
    pub frame_length: f64,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, frame_shift: f64, frame_length: f64) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Input("ragged feature rows".into()));
        }
        let frames = rows.len();
        Ok(Self { data: rows.concat(), frames, dim, frame_shift, frame_length })
    }

    pub fn from_flat(data: Vec<f64>, frames: usize, dim: usize) -> Result<Self> {
        if data.len() != frames * dim {
            return Err(Error::Input(format!(
                "flat buffer of {} values is not {frames} x {dim}",
                data.len()
            )));
        }
        Ok(Self { data, frames, dim, frame_shift: 0.010, frame_length: 0.025 })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.frames)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copy of frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> FeatureMatrix {
        let data = self.data[start * self.dim..(start + len) * self.dim].to_vec();
        FeatureMatrix { data, frames: len, dim: self.dim, ..*self }
    }

    pub fn column_mean(&self, d: usize) -> f64 {
        self.rows().map(|r| r[d]).sum::<f64>() / self.frames as f64
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub shift_ms: f64,
    pub n_mfcc: usize,
    pub n_mels: usize,
    pub preemphasis: f64,
    pub log_floor: f64,
    pub low_freq: f64,
    pub cmvn: bool,
    /// Energy-based frame dropping; threshold in dB below the loudest frame.
    pub vad_threshold_db: Option<f64>,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::corpus::CANONICAL_RATE,
            window_ms: 25.0,
            shift_ms: 10.0,
            n_mfcc: 20,
            n_mels: 23,
            preemphasis: 0.97,
            log_floor: 1e-10,
            low_freq: 20.0,
            cmvn: true,
            vad_threshold_db: None,
        }
    }
}

impl FrontendConfig {
    pub fn window_samples(&self) -> usize {
        (f64::from(self.sample_rate) * self.window_ms / 1000.0).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (f64::from(self.sample_rate) * self.shift_ms / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.window_samples() == 0 || self.shift_samples() == 0 {
            return Err(Error::Config("frontend: rate, window and shift must be positive".into()));
        }
        if self.n_mfcc == 0 || self.n_mels < self.n_mfcc {
            return Err(Error::Config(format!(
                "frontend: need 0 < n_mfcc ({}) <= n_mels ({})",
                self.n_mfcc, self.n_mels
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("frontend: log_floor must be positive".into()));
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over FFT bins `0..=n_fft/2`, equally spaced on the mel scale.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32, low_hz: f64) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let nyquist = f64::from(sample_rate) / 2.0;
    let (lo, hi) = (hz_to_mel(low_hz), hz_to_mel(nyquist));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(sample_rate) / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|b| {
                    let f = b as f64 * bin_hz;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
}

/// Orthonormal DCT-II basis rows `k = 0..n_out` over `n_in` inputs.
pub fn dct_matrix(n_out: usize, n_in: usize) -> Vec<Vec<f64>> {
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n_in as f64).sqrt() } else { (2.0 / n_in as f64).sqrt() };
            (0..n_in)
                .map(|m| scale * (PI * k as f64 * (m as f64 + 0.5) / n_in as f64).cos())
                .collect()
        })
        .collect()
}

/// Precomputed MFCC pipeline for one configuration.
pub struct MfccExtractor {
    config: FrontendConfig,
    window: Vec<f64>,
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
    filters: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor").field("config", &self.config).finish_non_exhaustive()
    }
}

impl MfccExtractor {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        config.validate()?;
        let win = config.window_samples();
        let n_fft = win.next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self {
            window: hamming(win),
            filters: mel_filterbank(config.n_mels, n_fft, config.sample_rate, config.low_freq),
            dct: dct_matrix(config.n_mfcc, config.n_mels),
            n_fft,
            fft,
            config,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    /// Number of frames `floor((len - window) / shift) + 1`, or 0 if shorter than a window.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        let (win, shift) = (self.config.window_samples(), self.config.shift_samples());
        if n_samples < win {
            0
        } else {
            (n_samples - win) / shift + 1
        }
    }

    /// Raw (un-normalized) MFCCs plus per-frame log energy.
    pub fn mfcc_with_energy(&self, signal: &AudioSignal) -> Result<(FeatureMatrix, Vec<f64>)> {
        if signal.sample_rate != self.config.sample_rate {
            return Err(Error::Input(format!(
                "signal rate {} differs from frontend rate {}",
                signal.sample_rate, self.config.sample_rate
            )));
        }
        let n_frames = self.frame_count(signal.samples.len());
        if n_frames == 0 {
            return Err(Error::EmptyInput(format!(
                "{} samples is shorter than one {}-sample window",
                signal.samples.len(),
                self.window.len()
            )));
        }
        let emphasized = preemphasize(&signal.samples, self.config.preemphasis);
        let (win, shift) = (self.window.len(), self.config.shift_samples());
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut data = Vec::with_capacity(n_frames * self.config.n_mfcc);
        let mut energies = Vec::with_capacity(n_frames);
        let mut log_mel = vec![0.0; self.config.n_mels];
        for t in 0..n_frames {
            let frame = &emphasized[t * shift..t * shift + win];
            let mut energy = 0.0;
            for (i, c) in buf.iter_mut().enumerate() {
                let v = if i < win { frame[i] * self.window[i] } else { 0.0 };
                energy += v * v;
                *c = Complex::new(v, 0.0);
            }
            energies.push(energy.max(self.config.log_floor).ln());
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (out, filt) in log_mel.iter_mut().zip(&self.filters) {
                let e: f64 = filt.iter().zip(&buf).map(|(w, c)| w * c.norm()).sum();
                *out = e.max(self.config.log_floor).ln();
            }
            for basis in &self.dct {
                data.push(basis.iter().zip(&log_mel).map(|(b, x)| b * x).sum());
            }
        }
        let mut feats = FeatureMatrix::from_flat(data, n_frames, self.config.n_mfcc)?;
        feats.frame_shift = self.config.shift_ms / 1000.0;
        feats.frame_length = self.config.window_ms / 1000.0;
        Ok((feats, energies))
    }

    /// Full configured pipeline: MFCC, optional energy VAD, optional CMVN.
    pub fn extract(&self, signal: &AudioSignal) -> Result<FeatureMatrix> {
        let (mut feats, energy) = self.mfcc_with_energy(signal)?;
        if let Some(db) = self.config.vad_threshold_db {
            feats = energy_vad(&feats, &energy, db);
        }
        if self.config.cmvn {
            feats = cmvn(&feats)?;
        }
        Ok(feats)
    }
}

/// Raw MFCCs without VAD or normalization.
pub fn extract_mfcc(signal: &AudioSignal, config: &FrontendConfig) -> Result<FeatureMatrix> {
    Ok(MfccExtractor::new(config.clone())?.mfcc_with_energy(signal)?.0)
}

fn preemphasize(x: &[f64], coeff: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut prev = 0.0;
    for &s in x {
        out.push(s - coeff * prev);
        prev = s;
    }
    out
}

/// Keeps frames whose log energy is within `threshold_db` of the loudest frame.
pub fn energy_vad(feats: &FeatureMatrix, log_energy: &[f64], threshold_db: f64) -> FeatureMatrix {
    let max = log_energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cut = max - threshold_db * std::f64::consts::LN_10 / 10.0;
    let keep: Vec<Vec<f64>> = feats
        .rows()
        .zip(log_energy)
        .filter(|(_, &e)| e >= cut)
        .map(|(r, _)| r.to_vec())
        .collect();
    FeatureMatrix::from_rows(keep, feats.frame_shift, feats.frame_length)
        .expect("rows share the source dimension")
}

/// Per-dimension mean and variance normalization. Dimensions whose variance
/// is below 1e-10 are only mean-centered.
pub fn cmvn(features: &FeatureMatrix) -> Result<FeatureMatrix> {
    let (t, f) = (features.frames(), features.dim());
    if t < 2 {
        return Err(Error::Degenerate(format!("cmvn needs at least 2 frames, got {t}")));
    }
    let mut mean = vec![0.0; f];
    for row in features.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut var = vec![0.0; f];
    for row in features.rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|s| {
            let v = s / t as f64;
            if v < 1e-10 {
                1.0
            } else {
                1.0 / v.sqrt()
            }
        })
        .collect();
    let data = features
        .rows()
        .flat_map(|row| row.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) * s))
        .collect();
    let mut out = FeatureMatrix::from_flat(data, t, f)?;
    out.frame_shift = features.frame_shift;
    out.frame_length = features.frame_length;
    Ok(out)
}

/// Adds white Gaussian noise at the given signal-to-noise ratio.
pub fn add_noise<R: Rng + ?Sized>(signal: &AudioSignal, snr_db: f64, rng: &mut R) -> AudioSignal {
    let power = signal.samples.iter().map(|s| s * s).sum::<f64>() / signal.samples.len().max(1) as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    if sigma <= 0.0 {
        return signal.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    let samples = signal.samples.iter().map(|s| s + normal.sample(rng)).collect();
    AudioSignal::new(samples, signal.sample_rate)
}

/// Feature cache: `(frames, dim)` as LE u32, then LE f32 values row-major.
pub fn write_feature_cache(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&(features.frames() as u32).to_le_bytes())?;
    w.write_all(&(features.dim() as u32).to_le_bytes())?;
    for v in features.as_slice() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureMatrix> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::Codec(format!("{}: truncated header", path.display())));
    }
    let frames = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != frames * dim * 4 {
        return Err(Error::Codec(format!(
            "{}: expected {} floats, found {} bytes",
            path.display(),
            frames * dim,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    FeatureMatrix::from_flat(data, frames, dim)
}
