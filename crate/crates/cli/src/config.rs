//! INI-style run configuration with environment and command-line overrides.
//!
//! Precedence, lowest first: built-in defaults, config file, `SPEECHMARK_*`
//! environment variables, `--section.key value` flags. Unknown sections or
//! keys are rejected.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use speechmark_core::eval::{GridSpec, PipelineConfig};
use speechmark_core::ngram::Smoothing;
use speechmark_core::synth::SynthOptions;

pub const ENV_PREFIX: &str = "SPEECHMARK_";

const SECTIONS: &[&str] =
    &["paths", "frontend", "transcript", "ngram", "ubm", "ivector", "xvector", "svm", "cv", "blocks", "grid", "synth"];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub grid: GridSpec,
    pub synth: SynthOptions,
    /// `section.key` of every value that was set explicitly.
    provided: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            work_dir: PathBuf::from("work"),
            cache_dir: None,
            pipeline: PipelineConfig::default(),
            grid: GridSpec::default(),
            synth: SynthOptions::default(),
            provided: BTreeSet::new(),
        }
    }
}

/// Where a setting came from; relative paths in a config file resolve
/// against the file's directory.
#[derive(Debug, Clone)]
pub enum Origin {
    File(PathBuf),
    Env,
    Flag,
}

impl Origin {
    fn describe(&self) -> String {
        match self {
            Origin::File(p) => p.display().to_string(),
            Origin::Env => "environment".into(),
            Origin::Flag => "command line".into(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| format!("invalid value `{value}` for `{key}`: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("invalid boolean `{value}` for `{key}`")),
    }
}

fn parse_opt_f64(key: &str, value: &str) -> Result<Option<f64>, String> {
    match value.trim().to_ascii_lowercase().as_str() {
        "" | "none" | "off" => Ok(None),
        _ => parse(key, value).map(Some),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

impl RunConfig {
    /// Applies one `section.key = value` setting.
    pub fn set(&mut self, key: &str, value: &str, origin: &Origin) -> Result<(), String> {
        let (section, name) =
            key.split_once('.').ok_or_else(|| format!("setting `{key}` must be written as section.key"))?;
        if !SECTIONS.contains(&section) {
            return Err(format!("unknown section `{section}` (from {})", origin.describe()));
        }
        let path = |v: &str| -> PathBuf {
            let p = PathBuf::from(v.trim());
            match origin {
                Origin::File(f) if p.is_relative() => f.parent().unwrap_or(Path::new("")).join(p),
                _ => p,
            }
        };
        let p = &mut self.pipeline;
        let x = &mut p.xvector;
        match (section, name) {
            ("paths", "manifest") => self.manifest = Some(path(value)),
            ("paths", "work_dir") => self.work_dir = path(value),
            ("paths", "cache_dir") => self.cache_dir = Some(path(value)),

            ("frontend", "sample_rate") => p.frontend.sample_rate = parse(key, value)?,
            ("frontend", "window_ms") => p.frontend.window_ms = parse(key, value)?,
            ("frontend", "shift_ms") => p.frontend.shift_ms = parse(key, value)?,
            ("frontend", "n_mfcc") => p.frontend.n_mfcc = parse(key, value)?,
            ("frontend", "n_mels") => p.frontend.n_mels = parse(key, value)?,
            ("frontend", "preemphasis") => p.frontend.preemphasis = parse(key, value)?,
            ("frontend", "log_floor") => p.frontend.log_floor = parse(key, value)?,
            ("frontend", "low_freq") => p.frontend.low_freq = parse(key, value)?,
            ("frontend", "cmvn") => p.frontend.cmvn = parse_bool(key, value)?,
            ("frontend", "vad_threshold_db") => p.frontend.vad_threshold_db = parse_opt_f64(key, value)?,

            ("transcript", "strip_chat_markup") => p.transcript.strip_chat_markup = parse_bool(key, value)?,
            ("transcript", "drop_fillers") => p.transcript.drop_fillers = parse_bool(key, value)?,

            ("ngram", "order") => p.ngram.order = parse(key, value)?,
            ("ngram", "smoothing") => p.ngram.smoothing = parse(key, value)?,
            ("ngram", "discount") => p.ngram.discount = parse(key, value)?,
            ("ngram", "unk_threshold") => p.ngram.unk_threshold = parse(key, value)?,
            ("ngram", "katz_cutoff") => p.ngram.katz_cutoff = parse(key, value)?,

            ("ubm", "components") => p.ubm.components = parse(key, value)?,
            ("ubm", "iters") => p.ubm.iters = parse(key, value)?,
            ("ubm", "seed") => p.ubm.seed = parse(key, value)?,
            ("ubm", "kmeans_iters") => p.ubm.kmeans_iters = parse(key, value)?,
            ("ubm", "kmeans_sample") => p.ubm.kmeans_sample = parse(key, value)?,
            ("ubm", "var_floor") => p.ubm.var_floor = parse(key, value)?,

            ("ivector", "rank") => p.ivector.rank = parse(key, value)?,
            ("ivector", "iters") => p.ivector.iters = parse(key, value)?,
            ("ivector", "seed") => p.ivector.seed = parse(key, value)?,

            ("xvector", "hidden") => x.hidden = parse(key, value)?,
            ("xvector", "pre_pool") => x.pre_pool = parse(key, value)?,
            ("xvector", "segment") => x.segment = parse(key, value)?,
            ("xvector", "augment_snr_db") => x.augment_snr_db = parse_opt_f64(key, value)?,
            ("xvector", "epochs") => x.train.epochs = parse(key, value)?,
            ("xvector", "batch_size") => x.train.batch_size = parse(key, value)?,
            ("xvector", "chunk_min") => x.train.chunk_min = parse(key, value)?,
            ("xvector", "chunk_max") => x.train.chunk_max = parse(key, value)?,
            ("xvector", "learning_rate") => x.train.learning_rate = parse(key, value)?,
            ("xvector", "momentum") => x.train.momentum = parse(key, value)?,
            ("xvector", "lr_decay") => x.train.lr_decay = parse(key, value)?,
            ("xvector", "decay_every") => x.train.decay_every = parse(key, value)?,
            ("xvector", "max_grad_norm") => x.train.max_grad_norm = parse(key, value)?,
            ("xvector", "seed") => x.train.seed = parse(key, value)?,

            ("svm", "c") => p.svm.c = parse(key, value)?,
            ("svm", "iters") => p.svm.iters = parse(key, value)?,

            ("cv", "k_folds") => p.k_folds = parse(key, value)?,
            ("cv", "seed") => p.seed = parse(key, value)?,

            ("blocks", "perplexity") => p.blocks.perplexity = parse_bool(key, value)?,
            ("blocks", "ivector") => p.blocks.ivector = parse_bool(key, value)?,
            ("blocks", "xvector") => p.blocks.xvector = parse_bool(key, value)?,

            ("grid", "ngram_orders") => self.grid.ngram_orders = parse_list(key, value)?,
            ("grid", "smoothers") => self.grid.smoothers = parse_list::<Smoothing>(key, value)?,
            ("grid", "ubm_components") => self.grid.ubm_components = parse_list(key, value)?,
            ("grid", "ivector_ranks") => self.grid.ivector_ranks = parse_list(key, value)?,

            ("synth", "n_cases") => self.synth.n_cases = parse(key, value)?,
            ("synth", "seed") => self.synth.seed = parse(key, value)?,
            ("synth", "sample_rate") => self.synth.sample_rate = parse(key, value)?,
            ("synth", "min_secs") => self.synth.min_secs = parse(key, value)?,
            ("synth", "max_secs") => self.synth.max_secs = parse(key, value)?,
            ("synth", "text_separation") => self.synth.text_separation = parse(key, value)?,
            ("synth", "audio_separation") => self.synth.audio_separation = parse(key, value)?,
            ("synth", "weight_contrast") => self.synth.weight_contrast = parse(key, value)?,

            _ => return Err(format!("unknown key `{key}` (from {})", origin.describe())),
        }
        self.provided.insert(key.to_string());
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), String> {
        let ini = ini::Ini::load_from_file(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let origin = Origin::File(path.to_path_buf());
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(format!("key `{k}` in {} is outside any [section]", path.display()));
                }
                continue;
            };
            for (k, v) in props.iter() {
                self.set(&format!("{}.{}", section.trim(), k.trim()), v, &origin)?;
            }
        }
        Ok(())
    }

    /// `SPEECHMARK_UBM_COMPONENTS=16` sets `ubm.components`. `SPEECHMARK_LOG`
    /// is reserved for the log level.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), String> {
        let mut vars: Vec<(String, String)> =
            vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX) && k != "SPEECHMARK_LOG").collect();
        vars.sort();
        for (k, v) in vars {
            let rest = k[ENV_PREFIX.len()..].to_ascii_lowercase();
            let key = rest
                .split_once('_')
                .map(|(s, n)| format!("{s}.{n}"))
                .ok_or_else(|| format!("environment variable `{k}` does not name a section and key"))?;
            self.set(&key, &v, &Origin::Env)?;
        }
        Ok(())
    }

    pub fn was_set(&self, key: &str) -> bool {
        self.provided.contains(key)
    }

    /// Fails naming the first missing key.
    pub fn require(&self, keys: &[&str]) -> Result<(), String> {
        match keys.iter().find(|k| !self.was_set(k)) {
            Some(k) => Err(format!("missing required setting `{k}`")),
            None => Ok(()),
        }
    }

    pub fn manifest(&self) -> Result<&Path, String> {
        self.manifest.as_deref().ok_or_else(|| "missing required setting `paths.manifest`".to_string())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.work_dir.join("cache"))
    }
}

/// Splits `--section.key value` and `--section.key=value` pairs out of
/// `args`, returning the remaining arguments and the overrides in order.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--").filter(|b| b.split('=').next().unwrap_or("").contains('.')) else {
            rest.push(a);
            continue;
        };
        match body.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| format!("flag `--{body}` needs a value"))?;
                overrides.push((body.to_string(), v));
            }
        }
    }
    Ok((rest, overrides))
}
