//! `speechmark` command-line driver.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use speechmark_core::corpus::{load_manifest, read_audio, read_transcript, Label, Recording};
use speechmark_core::eval::{
    grid_cells, mix_seed, render_table, reports_to_jsonl, run_cells, run_cv, Case, Grid,
};
use speechmark_core::frontend::{add_noise, read_feature_cache, write_feature_cache, MfccExtractor};
use speechmark_core::gmm::{train_ubm, GmmModel};
use speechmark_core::ivector::{accumulate_stats, train_t_matrix, TotalVariabilityModel};
use speechmark_core::ngram::train_ngram;
use speechmark_core::synth::generate_corpus;
use speechmark_core::xvector::{train_xvector, XvectorNet};

use config::{extract_overrides, Origin, RunConfig};

const SEEDS: &[&str] = &["cv.seed", "ubm.seed", "ivector.seed", "xvector.seed"];

#[derive(Parser, Debug)]
#[command(
    name = "speechmark",
    version,
    about = "Dementia screening from picture-description speech: N-gram, i-vector and x-vector features fused by a linear SVM",
    after_help = "Any setting can be overridden with `--section.key value`, or with SPEECHMARK_SECTION_KEY=value in the environment."
)]
struct Cli {
    /// INI-style configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker thread cap for all parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load the manifest, read every recording and transcript, report counts.
    IngestValidate,
    /// Train the two class-conditional N-gram models on the whole corpus.
    TrainNgram,
    /// Train the UBM on the whole corpus.
    TrainUbm,
    /// Train the total-variability matrix on the whole corpus.
    TrainIvector,
    /// Train the x-vector network on the whole corpus.
    TrainXvector,
    /// Cache features and export embeddings from whole-corpus models.
    Extract,
    /// Cross-validate the configured feature blocks.
    Evaluate,
    /// Run the ablation grids.
    Ablate {
        #[arg(long, value_enum, default_value_t = GridArg::All)]
        grid: GridArg,
    },
    /// Write the deterministic synthetic corpus.
    SynthData {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GridArg {
    Table3,
    Table4,
    Table5,
    All,
}

impl GridArg {
    fn grids(self) -> Vec<Grid> {
        match self {
            GridArg::Table3 => vec![Grid::Table3],
            GridArg::Table4 => vec![Grid::Table4],
            GridArg::Table5 => vec![Grid::Table5],
            GridArg::All => Grid::ALL.to_vec(),
        }
    }
}

enum Failure {
    Usage(String),
    Stage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Stage(e)
    }
}

impl From<speechmark_core::Error> for Failure {
    fn from(e: speechmark_core::Error) -> Self {
        Failure::Stage(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SPEECHMARK_LOG", "info"))
        .format_timestamp(None)
        .init();
    let (args, overrides) = match extract_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> CmdResult {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path).map_err(Failure::Usage)?;
    }
    cfg.apply_env(std::env::vars()).map_err(Failure::Usage)?;
    for (k, v) in &overrides {
        cfg.set(k, v, &Origin::Flag).map_err(Failure::Usage)?;
    }
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Failure::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Stage(anyhow!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::SynthData { out } => synth_data(&cfg, &out),
        cmd => {
            cfg.manifest().map_err(Failure::Usage)?;
            let required: &[&str] = match cmd {
                Command::Evaluate | Command::Ablate { .. } | Command::Extract => SEEDS,
                Command::TrainUbm => &["cv.seed", "ubm.seed"],
                Command::TrainIvector => &["cv.seed", "ubm.seed", "ivector.seed"],
                Command::TrainXvector => &["cv.seed", "xvector.seed"],
                _ => &["cv.seed"],
            };
            cfg.require(required).map_err(Failure::Usage)?;
            cfg.pipeline.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            let session = Session::new(cfg)?;
            match cmd {
                Command::IngestValidate => session.ingest_validate(),
                Command::TrainNgram => session.train_ngram(),
                Command::TrainUbm => session.ubm().map(|_| ()),
                Command::TrainIvector => session.tmatrix().map(|_| ()),
                Command::TrainXvector => session.xvector().map(|_| ()),
                Command::Extract => session.extract(),
                Command::Evaluate => session.evaluate(),
                Command::Ablate { grid } => session.ablate(grid),
                Command::SynthData { .. } => unreachable!(),
            }
        }
    }
}

fn synth_data(cfg: &RunConfig, out: &Path) -> CmdResult {
    cfg.require(&["synth.seed"]).map_err(Failure::Usage)?;
    let manifest = generate_corpus(out, &cfg.synth)?;
    println!("wrote {} cases", cfg.synth.n_cases);
    println!("{}", manifest.display());
    Ok(())
}

fn short_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))[..16].to_string()
}

fn fingerprint<T: Serialize>(parts: &T) -> String {
    short_hash(serde_json::to_string(parts).expect("config serializes").as_bytes())
}

fn write_artifact(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

struct Session {
    cfg: RunConfig,
    recordings: Vec<Recording>,
    manifest_hash: String,
}

impl Session {
    fn new(cfg: RunConfig) -> Result<Self, Failure> {
        let manifest = cfg.manifest().map_err(Failure::Usage)?.to_path_buf();
        let recordings = load_manifest(&manifest, cfg.pipeline.k_folds, cfg.pipeline.seed)?;
        let bytes = fs::read(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
        fs::create_dir_all(&cfg.work_dir).with_context(|| format!("creating {}", cfg.work_dir.display()))?;
        Ok(Self { manifest_hash: short_hash(&bytes), cfg, recordings })
    }

    fn artifact(&self, stem: &str, fp: &str, ext: &str) -> PathBuf {
        self.cfg.work_dir.join(format!("{stem}-{fp}.{ext}"))
    }

    /// Features are cached per recording as 32-bit floats; fresh features are
    /// written and read back so cached and uncached runs agree exactly.
    fn cases(&self) -> anyhow::Result<Vec<Case>> {
        let p = &self.cfg.pipeline;
        let extractor = MfccExtractor::new(p.frontend.clone())?;
        let dir = self.cfg.cache_dir().join(format!("features-{}", fingerprint(&p.frontend)));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let loaded: Vec<(Case, bool)> = self
            .recordings
            .par_iter()
            .enumerate()
            .map(|(i, r)| -> anyhow::Result<(Case, bool)> {
                let audio_bytes = fs::read(&r.audio_path).with_context(|| format!("reading {}", r.audio_path.display()))?;
                let cache = dir.join(format!("{}-{}.feat", r.id, short_hash(&audio_bytes)));
                let hit = cache.is_file();
                let need_signal = !hit || p.xvector.augment_snr_db.is_some();
                let signal = if need_signal { Some(read_audio(&r.audio_path, p.frontend.sample_rate)?) } else { None };
                if !hit {
                    write_feature_cache(&cache, &extractor.extract(signal.as_ref().unwrap())?)?;
                }
                let features = read_feature_cache(&cache)?;
                let augmented = match (p.xvector.augment_snr_db, &signal) {
                    (Some(snr), Some(sig)) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(p.seed, i as u64));
                        Some(extractor.extract(&add_noise(sig, snr, &mut rng))?)
                    }
                    _ => None,
                };
                let tokens = read_transcript(&r.transcript_path, p.transcript)?;
                let case = Case { id: r.id.clone(), label: r.label, fold: r.fold, tokens, features, augmented };
                Ok((case, hit))
            })
            .collect::<anyhow::Result<_>>()?;
        let hits = loaded.iter().filter(|(_, h)| *h).count();
        if hits > 0 {
            log::info!("feature cache hit for {hits}/{} recordings in {}", loaded.len(), dir.display());
        }
        Ok(loaded.into_iter().map(|(c, _)| c).collect())
    }

    fn ingest_validate(&self) -> CmdResult {
        let cases = self.cases()?;
        let k = self.cfg.pipeline.k_folds;
        let mut per_fold = vec![[0usize; 2]; k];
        for c in &cases {
            per_fold[c.fold][c.label.index()] += 1;
        }
        let frames: usize = cases.iter().map(|c| c.features.frames()).sum();
        let tokens: usize = cases.iter().map(|c| c.tokens.len()).sum();
        let count = |l: Label| cases.iter().filter(|c| c.label == l).count();
        println!(
            "{} cases ({} dementia, {} control), {frames} frames, {tokens} tokens",
            cases.len(),
            count(Label::Dementia),
            count(Label::Control)
        );
        for (f, [c, d]) in per_fold.iter().enumerate() {
            println!("fold {f}: {d} dementia, {c} control");
        }
        Ok(())
    }

    fn train_ngram(&self) -> CmdResult {
        let p = &self.cfg.pipeline;
        let fp = fingerprint(&(&self.manifest_hash, &p.transcript, &p.ngram));
        let paths = [Label::Dementia, Label::Control].map(|l| (l, self.artifact(&format!("ngram-{l}"), &fp, "lm")));
        if paths.iter().all(|(_, p)| p.is_file()) {
            log::info!("cache hit: n-gram models {fp}");
            paths.iter().for_each(|(_, p)| println!("{}", p.display()));
            return Ok(());
        }
        for (label, path) in &paths {
            let corpus = self
                .recordings
                .iter()
                .filter(|r| r.label == *label)
                .map(|r| read_transcript(&r.transcript_path, p.transcript))
                .collect::<Result<Vec<_>, _>>()?;
            let model = train_ngram(&corpus, &p.ngram)?;
            write_artifact(path, model.to_text().as_bytes())?;
        }
        Ok(())
    }

    fn ubm_fp(&self) -> String {
        let p = &self.cfg.pipeline;
        fingerprint(&(&self.manifest_hash, &p.frontend, &p.ubm))
    }

    fn ubm(&self) -> Result<GmmModel, Failure> {
        let fp = self.ubm_fp();
        let path = self.artifact("ubm", &fp, "bin");
        if path.is_file() {
            log::info!("cache hit: {}", path.display());
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            return Ok(GmmModel::from_bytes(&bytes)?);
        }
        let feats: Vec<_> = self.cases()?.into_iter().map(|c| c.features).collect();
        let ubm = train_ubm(&feats, &self.cfg.pipeline.ubm)?;
        write_artifact(&path, &ubm.to_bytes())?;
        Ok(ubm)
    }

    fn tmatrix(&self) -> Result<(GmmModel, TotalVariabilityModel), Failure> {
        let ubm = self.ubm()?;
        let fp = fingerprint(&(self.ubm_fp(), &self.cfg.pipeline.ivector));
        let path = self.artifact("tmatrix", &fp, "bin");
        if path.is_file() {
            log::info!("cache hit: {}", path.display());
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let tv = TotalVariabilityModel::from_bytes(&bytes, &ubm)?;
            return Ok((ubm, tv));
        }
        let stats = self
            .cases()?
            .par_iter()
            .map(|c| accumulate_stats(&ubm, &c.features))
            .collect::<Result<Vec<_>, _>>()?;
        let tv = train_t_matrix(&stats, &ubm, &self.cfg.pipeline.ivector)?;
        write_artifact(&path, &tv.to_bytes())?;
        Ok((ubm, tv))
    }

    fn xvector(&self) -> Result<XvectorNet, Failure> {
        let p = &self.cfg.pipeline;
        let fp = fingerprint(&(&self.manifest_hash, &p.frontend, &p.xvector, p.seed));
        let path = self.artifact("xvector", &fp, "bin");
        if path.is_file() {
            log::info!("cache hit: {}", path.display());
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            return Ok(XvectorNet::from_bytes(&bytes)?);
        }
        let cases = self.cases()?;
        let mut data = Vec::with_capacity(cases.len());
        for c in cases {
            if let Some(a) = c.augmented {
                data.push((a, c.label.index()));
            }
            data.push((c.features, c.label.index()));
        }
        let mut net = XvectorNet::new(p.xvector.net_config(p.frontend.n_mfcc), p.seed)?;
        let trace = train_xvector(&mut net, &data, &p.xvector.train)?;
        if let (Some(l), Some(a)) = (trace.epoch_loss.last(), trace.epoch_accuracy.last()) {
            log::info!("x-vector final epoch: loss {l:.4}, chunk accuracy {:.1}%", 100.0 * a);
        }
        write_artifact(&path, &net.to_bytes())?;
        Ok(net)
    }

    /// Writes one JSON line per case with the embeddings of the enabled
    /// blocks, using models trained on the whole corpus.
    fn extract(&self) -> CmdResult {
        let p = &self.cfg.pipeline;
        let cases = self.cases()?;
        let tv = if p.blocks.ivector { Some(self.tmatrix()?) } else { None };
        let net = if p.blocks.xvector { Some(self.xvector()?) } else { None };
        #[derive(Serialize)]
        struct Row<'a> {
            id: &'a str,
            label: Label,
            frames: usize,
            #[serde(skip_serializing_if = "Option::is_none")]
            ivector: Option<Vec<f64>>,
            #[serde(skip_serializing_if = "Option::is_none")]
            xvector: Option<Vec<f64>>,
        }
        let rows = cases
            .par_iter()
            .map(|c| -> anyhow::Result<String> {
                let ivector = match &tv {
                    Some((ubm, tv)) => Some(tv.extract(&accumulate_stats(ubm, &c.features)?)?.0),
                    None => None,
                };
                let xvector = match &net {
                    Some(n) => Some(n.embed(&c.features)?.0),
                    None => None,
                };
                let row = Row { id: &c.id, label: c.label, frames: c.features.frames(), ivector, xvector };
                Ok(serde_json::to_string(&row)? + "\n")
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let fp = fingerprint(&(&self.manifest_hash, p));
        write_artifact(&self.artifact("embeddings", &fp, "jsonl"), rows.concat().as_bytes())?;
        Ok(())
    }

    fn evaluate(&self) -> CmdResult {
        let p = &self.cfg.pipeline;
        let fp = fingerprint(&(&self.manifest_hash, p));
        let jsonl = self.artifact("report", &fp, "jsonl");
        let text = self.artifact("report", &fp, "txt");
        let report = if jsonl.is_file() && text.is_file() {
            log::info!("cache hit: {}", jsonl.display());
            let line = fs::read_to_string(&jsonl).with_context(|| format!("reading {}", jsonl.display()))?;
            serde_json::from_str(line.trim()).context("parsing cached report")?
        } else {
            let cases = self.cases()?;
            let report = run_cv(&cases, p)?;
            let mut table = format!(
                "cross-validation {} folds, blocks {}, config {}\n",
                p.k_folds,
                p.blocks,
                p.fingerprint()
            );
            table.push_str(&format!(
                "{:<6} {:>4} {:>4} {:>4} {:>4} {:>8}\n",
                "fold", "tp", "tn", "fp", "fn", "accuracy"
            ));
            for f in &report.per_fold {
                let c = f.confusion;
                table.push_str(&format!(
                    "{:<6} {:>4} {:>4} {:>4} {:>4} {:>8.1}\n",
                    f.fold, c.tp, c.tn, c.fp, c.fn_, f.accuracy
                ));
            }
            table.push_str(&format!(
                "accuracy {:.1}  precision {:.1}  recall {:.1}  f1 {:.1} (macro)\n",
                report.accuracy, report.precision, report.recall, report.f1
            ));
            write_artifact(&jsonl, reports_to_jsonl(std::slice::from_ref(&report)).as_bytes())?;
            write_artifact(&text, table.as_bytes())?;
            report
        };
        println!(
            "accuracy: {:.1}% (precision {:.1}, recall {:.1}, f1 {:.1})",
            report.accuracy, report.precision, report.recall, report.f1
        );
        Ok(())
    }

    fn ablate(&self, grid: GridArg) -> CmdResult {
        let p = &self.cfg.pipeline;
        let mut cases = None;
        for g in grid.grids() {
            let cells = grid_cells(g, p, &self.cfg.grid)?;
            let fp = fingerprint(&(&self.manifest_hash, p, &self.cfg.grid, g));
            let jsonl = self.artifact(&format!("ablation-{}", g.name()), &fp, "jsonl");
            let text = self.artifact(&format!("ablation-{}", g.name()), &fp, "txt");
            if jsonl.is_file() && text.is_file() {
                log::info!("cache hit: {}", jsonl.display());
                print!("{}", fs::read_to_string(&text).with_context(|| format!("reading {}", text.display()))?);
                continue;
            }
            if cases.is_none() {
                cases = Some(self.cases()?);
            }
            let reports = run_cells(cases.as_ref().unwrap(), &cells, None)?;
            let table = render_table(g, &cells, &reports);
            write_artifact(&jsonl, reports_to_jsonl(&reports).as_bytes())?;
            write_artifact(&text, table.as_bytes())?;
            print!("{table}");
        }
        Ok(())
    }
}
