//! Dataset manifests, audio and transcript loading, and fold assignment.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical sample rate every signal is resampled to on ingestion.
pub const CANONICAL_RATE: u32 = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Control,
    Dementia,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Control, Label::Dementia];

    /// Class index used by the x-vector softmax head.
    pub fn index(self) -> usize {
        match self {
            Label::Control => 0,
            Label::Dementia => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Control),
            1 => Some(Label::Dementia),
            _ => None,
        }
    }

    /// +1 for the positive (dementia) class, -1 otherwise.
    pub fn sign(self) -> f64 {
        match self {
            Label::Control => -1.0,
            Label::Dementia => 1.0,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Control => Label::Dementia,
            Label::Dementia => Label::Control,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Control => "control",
            Label::Dementia => "dementia",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "control" | "healthy" | "hc" => Ok(Label::Control),
            "dementia" | "ad" | "probablead" | "probable_ad" => Ok(Label::Dementia),
            other => Err(Error::Parse(format!("unknown label `{other}`"))),
        }
    }
}

/// One interview: audio, transcript, diagnosis and its cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recording {
    pub id: String,
    pub audio_path: PathBuf,
    pub transcript_path: PathBuf,
    pub label: Label,
    pub fold: usize,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    id: String,
    audio: String,
    transcript: String,
    label: String,
}

/// Reads a `id,audio,transcript,label` manifest (header required) and assigns
/// stratified folds. Relative paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path, k_folds: usize, seed: u64) -> Result<Vec<Recording>> {
    if k_folds < 2 {
        return Err(Error::Config(format!("k_folds must be at least 2, got {k_folds}")));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Ingest { row: 0, message: format!("{}: {e}", path.display()) })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Ingest { row: 0, message: e.to_string() })?
        .clone();
    for required in ["id", "audio", "transcript", "label"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Ingest {
                row: 0,
                message: format!("header is missing column `{required}`"),
            });
        }
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Ingest { row: row_no, message: e.to_string() })?;
        if row.id.is_empty() {
            return Err(Error::Ingest { row: row_no, message: "empty id".into() });
        }
        if !seen.insert(row.id.clone()) {
            return Err(Error::Ingest {
                row: row_no,
                message: format!("duplicate id `{}`", row.id),
            });
        }
        let label: Label = row.label.parse().map_err(|e: Error| match e {
            Error::Parse(m) => Error::Parse(format!("row {row_no} (`{}`): {m}", row.id)),
            other => other,
        })?;
        let audio_path = base.join(&row.audio);
        let transcript_path = base.join(&row.transcript);
        for (what, p) in [("audio", &audio_path), ("transcript", &transcript_path)] {
            if !p.is_file() {
                return Err(Error::Ingest {
                    row: row_no,
                    message: format!("`{}`: missing {what} file {}", row.id, p.display()),
                });
            }
        }
        out.push(Recording { id: row.id, audio_path, transcript_path, label, fold: 0 });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!("manifest {} has no rows", path.display())));
    }
    assign_folds(&mut out, k_folds, seed);
    Ok(out)
}

/// Stratified round-robin fold assignment. Each label group is shuffled with
/// the seed and dealt across folds; the next group continues where the
/// previous one stopped so total fold sizes also stay within one.
pub fn assign_folds(recordings: &mut [Recording], k_folds: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = 0usize;
    for label in Label::ALL {
        let mut idx: Vec<usize> = recordings
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        for i in idx {
            recordings[i].fold = next % k_folds;
            next += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Reads an 8- or 16-bit PCM WAV file, downmixes to mono, scales to [-1, 1]
/// and linearly resamples to `target_rate`.
pub fn read_audio(path: &Path, target_rate: u32) -> Result<AudioSignal> {
    let format_err = |message: String| Error::Format { path: path.to_path_buf(), message };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => format_err(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || !matches!(spec.bits_per_sample, 8 | 16) {
        return Err(format_err(format!(
            "{:?} {}-bit; only 8/16-bit integer PCM is supported",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels == 0 || spec.sample_rate == 0 {
        return Err(format_err("zero channels or sample rate".into()));
    }
    let scale = 1.0 / f64::from(1u32 << (spec.bits_per_sample - 1));
    let channels = usize::from(spec.channels);
    let raw: Vec<i32> = reader
        .samples::<i32>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| format_err(e.to_string()))?;
    if raw.len() < channels {
        return Err(Error::EmptyInput(format!("{} has no samples", path.display())));
    }
    let mono: Vec<f64> = raw
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|&s| f64::from(s) * scale).sum::<f64>() / channels as f64)
        .collect();
    Ok(resample_linear(&AudioSignal::new(mono, spec.sample_rate), target_rate))
}

/// Linear-interpolation resampling. The output spans the same time range as
/// the input, so its length is `floor((n - 1) * ratio) + 1`.
pub fn resample_linear(signal: &AudioSignal, target_rate: u32) -> AudioSignal {
    if signal.sample_rate == target_rate || signal.samples.is_empty() {
        return AudioSignal::new(signal.samples.clone(), target_rate);
    }
    let ratio = f64::from(target_rate) / f64::from(signal.sample_rate);
    let n = signal.samples.len();
    let n_out = ((n - 1) as f64 * ratio).floor() as usize + 1;
    let samples = (0..n_out)
        .map(|i| {
            let pos = i as f64 / ratio;
            let lo = (pos.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            signal.samples[lo] * (1.0 - frac) + signal.samples[hi] * frac
        })
        .collect();
    AudioSignal::new(samples, target_rate)
}

/// Writes mono 16-bit PCM, clipping to [-1, 1].
pub fn write_wav_pcm16(path: &Path, signal: &AudioSignal) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format { path: path.to_path_buf(), message: other.to_string() },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &signal.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(to_err)?;
    }
    w.finalize().map_err(to_err)
}

/// Lowercased word tokens of one transcript. Start and end markers are added
/// by the language model, never stored here.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<String>);

impl TokenSequence {
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        Self(words.iter().map(|w| w.as_ref().to_lowercase()).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TranscriptOptions {
    pub strip_chat_markup: bool,
    /// Drop spoken hesitation words ("uh", "um", ...). Off by default.
    pub drop_fillers: bool,
}

const FILLERS: &[&str] = &["uh", "um", "er", "ah", "eh", "hm", "hmm", "mm", "mhm", "uhm"];
const CHAT_PLACEHOLDERS: &[&str] = &["xxx", "yyy", "www"];

pub fn normalize_transcript(raw: &str, strip_chat_markup: bool) -> TokenSequence {
    normalize_transcript_with(raw, TranscriptOptions { strip_chat_markup, drop_fillers: false })
}

pub fn normalize_transcript_with(raw: &str, opts: TranscriptOptions) -> TokenSequence {
    let text = if opts.strip_chat_markup { participant_text(raw) } else { raw.to_string() };
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let word = if opts.strip_chat_markup {
            match clean_chat_word(word) {
                Some(w) => w,
                None => continue,
            }
        } else {
            word.to_lowercase()
        };
        if word.is_empty() || (opts.drop_fillers && FILLERS.contains(&word.as_str())) {
            continue;
        }
        tokens.push(word);
    }
    TokenSequence(tokens)
}

/// Collects `*PAR:` utterance text (with tab-indented continuation lines) and
/// removes bracketed codes and timing bullets.
fn participant_text(raw: &str) -> String {
    let mut out = String::new();
    let mut in_par = false;
    for line in raw.lines() {
        if let Some(rest) = line.strip_prefix("*PAR:") {
            in_par = true;
            out.push_str(rest);
            out.push(' ');
        } else if line.starts_with('*') || line.starts_with('%') || line.starts_with('@') {
            in_par = false;
        } else if in_par && line.starts_with(|c: char| c.is_whitespace()) {
            out.push_str(line);
            out.push(' ');
        }
    }
    remove_delimited(&remove_delimited(&out, '[', ']'), '\u{15}', '\u{15}')
}

fn remove_delimited(s: &str, open: char, close: char) -> String {
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    for c in s.chars() {
        if depth > 0 && c == close {
            depth -= 1;
            out.push(' ');
        } else if c == open {
            depth += 1;
        } else if depth == 0 {
            out.push(c);
        }
    }
    out
}

fn clean_chat_word(word: &str) -> Option<String> {
    if word.starts_with('&') {
        return None;
    }
    // word@x special-form markers keep the word itself
    let word = word.split('@').next().unwrap_or("");
    let cleaned: String = word
        .chars()
        .filter(|c| c.is_alphanumeric() || *c == '\'')
        .flat_map(char::to_lowercase)
        .collect();
    let cleaned = cleaned.trim_matches('\'').to_string();
    if cleaned.is_empty() || CHAT_PLACEHOLDERS.contains(&cleaned.as_str()) {
        None
    } else {
        Some(cleaned)
    }
}

pub fn read_transcript(path: &Path, opts: TranscriptOptions) -> Result<TokenSequence> {
    let raw = std::fs::read_to_string(path)?;
    Ok(normalize_transcript_with(&raw, opts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(n_control: usize, n_dementia: usize) -> Vec<Recording> {
        (0..n_control + n_dementia)
            .map(|i| Recording {
                id: format!("r{i}"),
                audio_path: PathBuf::new(),
                transcript_path: PathBuf::new(),
                label: if i < n_control { Label::Control } else { Label::Dementia },
                fold: usize::MAX,
            })
            .collect()
    }

    fn fold_counts(r: &[Recording], k: usize, label: Label) -> Vec<usize> {
        let mut c = vec![0; k];
        for x in r.iter().filter(|x| x.label == label) {
            c[x.fold] += 1;
        }
        c
    }

    #[test]
    fn ten_rows_ten_folds_one_each() {
        for seed in 0..5 {
            let mut r = recs(5, 5);
            assign_folds(&mut r, 10, seed);
            let mut per_fold = vec![0; 10];
            for x in &r {
                per_fold[x.fold] += 1;
            }
            assert_eq!(per_fold, vec![1; 10]);
        }
    }

    #[test]
    fn pitt_sized_split_is_stratified() {
        let mut r = recs(243, 309);
        assign_folds(&mut r, 10, 7);
        for c in fold_counts(&r, 10, Label::Control) {
            assert!(c == 24 || c == 25, "control {c}");
        }
        for c in fold_counts(&r, 10, Label::Dementia) {
            assert!(c == 30 || c == 31, "dementia {c}");
        }
    }

    #[test]
    fn fold_assignment_is_deterministic() {
        let mut a = recs(20, 13);
        let mut b = recs(20, 13);
        assign_folds(&mut a, 10, 99);
        assign_folds(&mut b, 10, 99);
        assert_eq!(a, b);
    }

    #[test]
    fn chat_participant_line() {
        let t = normalize_transcript("*PAR: the boy [//] is falling .", true);
        assert_eq!(t, TokenSequence::from_words(&["the", "boy", "is", "falling"]));
    }

    #[test]
    fn lowercases_without_stripping() {
        let t = normalize_transcript("Hello HELLO hello", false);
        assert_eq!(t, TokenSequence::from_words(&["hello", "hello", "hello"]));
    }

    #[test]
    fn investigator_line_dropped() {
        assert!(normalize_transcript("*INV: tell me more .", true).is_empty());
    }

    #[test]
    fn chat_fillers_codes_and_continuations() {
        let raw = "@Begin\n*INV: what do you see ?\n*PAR: &uh the <cookie jar> [/] cookie jar\n\tis up there . \u{15}100_200\u{15}\n%mor: det|the n|cookie\n*PAR: uh he's (be)cause xxx .\n@End";
        let t = normalize_transcript(raw, true);
        assert_eq!(
            t,
            TokenSequence::from_words(&[
                "the", "cookie", "jar", "cookie", "jar", "is", "up", "there", "uh", "he's",
                "because"
            ])
        );
        let dropped = normalize_transcript_with(
            raw,
            TranscriptOptions { strip_chat_markup: true, drop_fillers: true },
        );
        assert!(!dropped.0.contains(&"uh".to_string()));
    }

    #[test]
    fn identity_resample_and_constant_upsample() {
        let s = AudioSignal::new(vec![0.1, -0.2, 0.3], 16_000);
        assert_eq!(resample_linear(&s, 16_000), s);

        let c = AudioSignal::new(vec![0.25; 8000], 8000);
        let up = resample_linear(&c, 16_000);
        assert!((up.samples.len() as i64 - 16_000).abs() <= 1);
        assert!(up.samples.iter().all(|&x| (x - 0.25).abs() < 1e-12));
    }

    #[test]
    fn label_parsing() {
        assert_eq!("Dementia".parse::<Label>().unwrap(), Label::Dementia);
        assert_eq!("control".parse::<Label>().unwrap(), Label::Control);
        assert!(matches!("mci".parse::<Label>(), Err(Error::Parse(_))));
    }
}
