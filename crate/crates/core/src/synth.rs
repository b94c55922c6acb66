//! Deterministic synthetic corpus with class-dependent text and audio.
//!
//! Transcripts come from one first-order Markov chain per class over a small
//! picture-description vocabulary and are written as CHAT files. Audio comes
//! from one mixture source per class: each 80 ms segment picks a component
//! (a set of sinusoidal partials) by the class weights, with occasional
//! pauses and a white noise floor.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_wav_pcm16, AudioSignal, Label};
use crate::error::{Error, Result};
use crate::eval::mix_seed;

const VOCAB: &[&str] = &[
    "the", "boy", "girl", "mother", "cookie", "jar", "stool", "falling", "water", "sink", "overflowing",
    "dishes", "window", "curtains", "plate", "cup", "taking", "reaching", "kitchen", "floor", "is", "and",
    "she", "he", "on", "off", "over", "drying", "standing", "lid", "cupboard", "outside", "grass", "wet",
    "tipping", "hand", "her", "his", "out", "of",
];
const SEGMENT_SECS: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub n_cases: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub min_secs: f64,
    pub max_secs: f64,
    /// Scale of the class-specific perturbation of the shared text chain.
    pub text_separation: f64,
    /// Fraction of partial frequencies that differ between the class sources.
    pub audio_separation: f64,
    /// Class contrast of the mixture weights: component `j` has weight
    /// proportional to `1 ± contrast` with alternating sign, mirrored
    /// between the classes.
    pub weight_contrast: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            n_cases: 200,
            seed: 0,
            sample_rate: 16_000,
            min_secs: 2.5,
            max_secs: 3.0,
            text_separation: 0.5,
            audio_separation: 0.0,
            weight_contrast: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
struct TextChain {
    start: Vec<f64>,
    trans: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct AudioSource {
    weights: Vec<f64>,
    /// Partial frequencies (Hz) per component.
    partials: Vec<Vec<f64>>,
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

fn sample_index<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn class_chains(rng: &mut ChaCha8Rng, separation: f64) -> [TextChain; 2] {
    let v = VOCAB.len();
    let base: Vec<Vec<f64>> =
        (0..v).map(|_| (0..v).map(|_| rng.random::<f64>().powi(3) + 1e-3).collect()).collect();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut make = || {
        let trans = base
            .iter()
            .map(|row| {
                let mut r: Vec<f64> =
                    row.iter().map(|&b| b * (separation * normal.sample(rng)).exp()).collect();
                normalize(&mut r);
                r
            })
            .collect();
        let mut start: Vec<f64> = (0..v).map(|_| rng.random::<f64>() + 0.1).collect();
        normalize(&mut start);
        TextChain { start, trans }
    };
    [make(), make()]
}

fn class_sources(rng: &mut ChaCha8Rng, separation: f64, contrast: f64) -> [AudioSource; 2] {
    let shared: Vec<Vec<f64>> =
        (0..4).map(|_| (0..3).map(|_| rng.random_range(150.0..3500.0)).collect()).collect();
    let mut make = |sign: f64| {
        let partials = shared
            .iter()
            .map(|comp| {
                comp.iter()
                    .map(|&f| {
                        if rng.random::<f64>() < separation { rng.random_range(150.0..3500.0) } else { f }
                    })
                    .collect()
            })
            .collect();
        let mut weights: Vec<f64> =
            (0..4).map(|j| 1.0 + sign * contrast * if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        normalize(&mut weights);
        AudioSource { weights, partials }
    };
    // index order follows Label::index: Control, Dementia
    [make(-1.0), make(1.0)]
}

fn generate_text(chain: &TextChain, rng: &mut ChaCha8Rng) -> Vec<Vec<&'static str>> {
    let n_utts = rng.random_range(6..=10);
    (0..n_utts)
        .map(|_| {
            let len = rng.random_range(4..=10);
            let mut w = sample_index(&chain.start, rng);
            let mut utt = vec![VOCAB[w]];
            for _ in 1..len {
                w = sample_index(&chain.trans[w], rng);
                utt.push(VOCAB[w]);
            }
            utt
        })
        .collect()
}

fn chat_file(utterances: &[Vec<&str>], rng: &mut ChaCha8Rng) -> String {
    let mut s = String::from("@UTF8\n@Begin\n@Participants:\tPAR Participant, INV Investigator\n");
    s.push_str("*INV:\tjust tell me everything you see happening in the picture .\n");
    let mut t = 0u32;
    for utt in utterances {
        let mut words: Vec<String> = utt.iter().map(|w| w.to_string()).collect();
        if rng.random::<f64>() < 0.3 {
            words.insert(rng.random_range(0..words.len()), "&uh".into());
        }
        if rng.random::<f64>() < 0.2 {
            let i = rng.random_range(0..words.len());
            words[i].push_str(" [//]");
        }
        let start = t;
        t += rng.random_range(800..2500);
        let _ = writeln!(s, "*PAR:\t{} . \u{15}{start}_{t}\u{15}", words.join(" "));
        if rng.random::<f64>() < 0.15 {
            s.push_str("*INV:\tmhm .\n");
        }
    }
    s.push_str("@End\n");
    s
}

fn generate_audio(src: &AudioSource, opts: &SynthOptions, rng: &mut ChaCha8Rng) -> AudioSignal {
    let sr = f64::from(opts.sample_rate);
    let secs = rng.random_range(opts.min_secs..=opts.max_secs);
    let n = (secs * sr) as usize;
    let seg = (SEGMENT_SECS * sr) as usize;
    let jitter: Vec<Vec<f64>> = src
        .partials
        .iter()
        .map(|c| c.iter().map(|_| rng.random_range(0.98..1.02)).collect())
        .collect();
    let gain = rng.random_range(0.5..1.0);
    let noise = Normal::new(0.0, 0.005).unwrap();
    let mut samples = vec![0.0; n];
    let mut phase = [0.0f64; 3];
    for (k, chunk) in samples.chunks_mut(seg).enumerate() {
        let pause = rng.random::<f64>() < 0.1;
        let comp = sample_index(&src.weights, rng);
        let amps: Vec<f64> = (0..3).map(|_| rng.random_range(0.3..1.0)).collect();
        let len = chunk.len();
        for (i, s) in chunk.iter_mut().enumerate() {
            if !pause {
                // raised-cosine envelope per segment
                let env = 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / len as f64).cos();
                let t = (k * seg + i) as f64 / sr;
                let mut v = 0.0;
                for (p, (&f, &j)) in src.partials[comp].iter().zip(&jitter[comp]).enumerate() {
                    v += amps[p] * (2.0 * PI * f * j * t + phase[p]).sin();
                }
                *s = 0.15 * gain * env * v;
            }
            *s += noise.sample(rng);
        }
        for p in &mut phase {
            *p = rng.random_range(0.0..2.0 * PI);
        }
    }
    AudioSignal::new(samples, opts.sample_rate)
}

/// Writes `audio/`, `text/` and `manifest.csv` under `dir`. Labels alternate
/// so the corpus is balanced. Returns the manifest path.
pub fn generate_corpus(dir: &Path, opts: &SynthOptions) -> Result<PathBuf> {
    if opts.n_cases < 2 {
        return Err(Error::Config("synthetic corpus needs at least two cases".into()));
    }
    if !(opts.min_secs > 0.0 && opts.min_secs <= opts.max_secs) || !(0.0..1.0).contains(&opts.weight_contrast) {
        return Err(Error::Config("synthetic duration range is invalid".into()));
    }
    fs::create_dir_all(dir.join("audio"))?;
    fs::create_dir_all(dir.join("text"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let chains = class_chains(&mut rng, opts.text_separation);
    let sources = class_sources(&mut rng, opts.audio_separation, opts.weight_contrast);

    let mut manifest = String::from("id,audio,transcript,label\n");
    for i in 0..opts.n_cases {
        let label = if i % 2 == 0 { Label::Dementia } else { Label::Control };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, i as u64));
        let id = format!("S{i:03}");
        let text = chat_file(&generate_text(&chains[label.index()], &mut rng), &mut rng);
        let audio = generate_audio(&sources[label.index()], opts, &mut rng);
        let (wav, cha) = (format!("audio/{id}.wav"), format!("text/{id}.cha"));
        fs::write(dir.join(&cha), text)?;
        write_wav_pcm16(&dir.join(&wav), &audio)?;
        let _ = writeln!(manifest, "{id},{wav},{cha},{label}");
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest)?;
    Ok(path)
}
