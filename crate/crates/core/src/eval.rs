//! Cross-validation and ablation harness.
//!
//! Every fold retrains all upstream models on its training cases only. A
//! [`LeakageGuard`] checks the ids fed to each training stage against the
//! fold's test ids. Perplexity features for training cases are cross-fitted
//! over the remaining folds so the SVM never sees perplexities computed by a
//! model that was trained on the same transcript.
//!
//! Within one fold, computed blocks are cached by the hyperparameters they
//! depend on, so ablation cells that share a UBM or an x-vector net train it
//! once.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::sha256_hex;
use crate::corpus::{read_audio, read_transcript, Label, Recording, TokenSequence, TranscriptOptions};
use crate::error::{Error, Result};
use crate::frontend::{add_noise, FeatureMatrix, FrontendConfig, MfccExtractor};
use crate::fusion::{
    fuse, train_svm, BlockLayout, Confusion, FoldMetrics, FusionVector, MetricsReport, SvmOptions,
};
use crate::gmm::{train_ubm, GmmModel, UbmOptions};
use crate::ivector::{accumulate_stats, train_t_matrix, BaumWelchStats, IVector, IvectorOptions};
use crate::ngram::{score_case, train_ngram, NgramOptions, PerplexityPair, Smoothing};
use crate::xvector::{train_xvector, XvectorConfig, XvectorEmbedding, XvectorNet, XvectorTrainOptions};

/// splitmix64 of `seed` combined with `salt`.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockFlags {
    pub perplexity: bool,
    pub ivector: bool,
    pub xvector: bool,
}

impl BlockFlags {
    pub const ALL: BlockFlags = BlockFlags { perplexity: true, ivector: true, xvector: true };

    pub fn any(&self) -> bool {
        self.perplexity || self.ivector || self.xvector
    }

    pub fn count(&self) -> usize {
        usize::from(self.perplexity) + usize::from(self.ivector) + usize::from(self.xvector)
    }
}

impl fmt::Display for BlockFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.xvector {
            parts.push("xvec");
        }
        if self.ivector {
            parts.push("ivec");
        }
        if self.perplexity {
            parts.push("ppl");
        }
        if parts.is_empty() {
            parts.push("none");
        }
        f.write_str(&parts.join("+"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XvectorSettings {
    pub hidden: usize,
    pub pre_pool: usize,
    pub segment: usize,
    pub train: XvectorTrainOptions,
    /// Adds one noisy copy of each training recording at this SNR.
    pub augment_snr_db: Option<f64>,
}

impl Default for XvectorSettings {
    fn default() -> Self {
        Self { hidden: 64, pre_pool: 256, segment: 64, train: XvectorTrainOptions::default(), augment_snr_db: None }
    }
}

impl XvectorSettings {
    pub fn net_config(&self, feat_dim: usize) -> XvectorConfig {
        XvectorConfig::with_widths(feat_dim, self.hidden, self.pre_pool, self.segment, Label::ALL.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub frontend: FrontendConfig,
    pub transcript: TranscriptOptions,
    pub ngram: NgramOptions,
    pub ubm: UbmOptions,
    pub ivector: IvectorOptions,
    pub xvector: XvectorSettings,
    pub svm: SvmOptions,
    pub blocks: BlockFlags,
    pub k_folds: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frontend: FrontendConfig::default(),
            transcript: TranscriptOptions { strip_chat_markup: true, drop_fillers: false },
            ngram: NgramOptions::default(),
            ubm: UbmOptions::default(),
            ivector: IvectorOptions::default(),
            xvector: XvectorSettings::default(),
            svm: SvmOptions::default(),
            blocks: BlockFlags::ALL,
            k_folds: 10,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        self.ngram.validate()?;
        if !self.blocks.any() {
            return Err(Error::Config("at least one feature block must be enabled".into()));
        }
        if self.k_folds < 2 {
            return Err(Error::Config(format!("k_folds must be at least 2, got {}", self.k_folds)));
        }
        if self.blocks.ivector {
            let kf = self.ubm.components * self.frontend.n_mfcc;
            if self.ubm.components == 0 || self.ivector.rank == 0 || self.ivector.rank >= kf {
                return Err(Error::Config(format!(
                    "i-vector rank {} must be in 1..{kf} for {} UBM components",
                    self.ivector.rank, self.ubm.components
                )));
            }
        }
        if self.blocks.xvector {
            self.xvector.net_config(self.frontend.n_mfcc).validate()?;
        }
        if !(self.svm.c > 0.0) {
            return Err(Error::Config("svm C must be positive".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        sha256_hex(json.as_bytes())[..16].to_string()
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout {
            perplexity: self.blocks.perplexity,
            ivector: self.blocks.ivector.then_some(self.ivector.rank),
            xvector: self.blocks.xvector.then_some(self.xvector.segment),
        }
    }
}

/// One loaded recording.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: String,
    pub label: Label,
    pub fold: usize,
    pub tokens: TokenSequence,
    pub features: FeatureMatrix,
    /// Noise-augmented features, used only as extra x-vector training data.
    pub augmented: Option<FeatureMatrix>,
}

/// Reads audio and transcripts and runs the frontend, in parallel.
pub fn load_dataset(recordings: &[Recording], cfg: &PipelineConfig) -> Result<Vec<Case>> {
    let extractor = MfccExtractor::new(cfg.frontend.clone())?;
    recordings
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let signal = read_audio(&r.audio_path, cfg.frontend.sample_rate)?;
            let features = extractor.extract(&signal)?;
            let augmented = match cfg.xvector.augment_snr_db {
                Some(snr) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, i as u64));
                    Some(extractor.extract(&add_noise(&signal, snr, &mut rng))?)
                }
                None => None,
            };
            Ok(Case {
                id: r.id.clone(),
                label: r.label,
                fold: r.fold,
                tokens: read_transcript(&r.transcript_path, cfg.transcript)?,
                features,
                augmented,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Ngram,
    Ubm,
    TMatrix,
    Xvector,
    Svm,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Ngram, Stage::Ubm, Stage::TMatrix, Stage::Xvector, Stage::Svm];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ngram => "ngram",
            Stage::Ubm => "ubm",
            Stage::TMatrix => "t-matrix",
            Stage::Xvector => "xvector",
            Stage::Svm => "svm",
        })
    }
}

/// Rejects any training input that contains one of the fold's test ids.
#[derive(Debug, Clone)]
pub struct LeakageGuard {
    fold: usize,
    test_ids: HashSet<String>,
}

impl LeakageGuard {
    pub fn new<'a>(fold: usize, test_ids: impl IntoIterator<Item = &'a str>) -> Self {
        Self { fold, test_ids: test_ids.into_iter().map(str::to_string).collect() }
    }

    pub fn check<'a>(&self, stage: Stage, train_ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for id in train_ids {
            if self.test_ids.contains(id) {
                return Err(Error::Leakage { fold: self.fold, stage: stage.to_string(), id: id.to_string() });
            }
        }
        Ok(())
    }
}

/// Adds the first test case of `fold` to the training input of `stage`.
/// Only used to prove the guard fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultInjection {
    pub fold: usize,
    pub stage: Stage,
}

struct FoldContext<'a> {
    cases: &'a [Case],
    fold: usize,
    train: Vec<usize>,
    test: Vec<usize>,
    guard: LeakageGuard,
    fault: Option<Stage>,
    ppl: HashMap<String, Vec<PerplexityPair>>,
    ubm: HashMap<String, (GmmModel, Vec<BaumWelchStats>)>,
    ivec: HashMap<String, Vec<IVector>>,
    xvec: HashMap<String, Vec<XvectorEmbedding>>,
}

fn key<T: Serialize>(parts: &T) -> String {
    serde_json::to_string(parts).expect("options serialize")
}

impl<'a> FoldContext<'a> {
    fn new(cases: &'a [Case], fold: usize, fault: Option<FaultInjection>) -> Self {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..cases.len()).partition(|&i| cases[i].fold == fold);
        let guard = LeakageGuard::new(fold, test.iter().map(|&i| cases[i].id.as_str()));
        Self {
            cases,
            fold,
            train,
            test,
            guard,
            fault: fault.filter(|f| f.fold == fold).map(|f| f.stage),
            ppl: HashMap::new(),
            ubm: HashMap::new(),
            ivec: HashMap::new(),
            xvec: HashMap::new(),
        }
    }

    /// Training indices for `stage`, checked by the guard.
    fn training_set(&self, stage: Stage, base: &[usize]) -> Result<Vec<usize>> {
        let mut idx = base.to_vec();
        if self.fault == Some(stage) {
            idx.push(self.test[0]);
        }
        self.guard.check(stage, idx.iter().map(|&i| self.cases[i].id.as_str()))?;
        Ok(idx)
    }

    fn class_models(&self, train: &[usize], opts: &NgramOptions) -> Result<[crate::ngram::NgramModel; 2]> {
        let corpus = |label: Label| -> Vec<TokenSequence> {
            train.iter().filter(|&&i| self.cases[i].label == label).map(|&i| self.cases[i].tokens.clone()).collect()
        };
        Ok([train_ngram(&corpus(Label::Dementia), opts)?, train_ngram(&corpus(Label::Control), opts)?])
    }

    fn ensure_perplexities(&mut self, opts: &NgramOptions) -> Result<String> {
        let k = key(opts);
        if self.ppl.contains_key(&k) {
            return Ok(k);
        }
        let mut out = vec![PerplexityPair { ppl_dementia: 0.0, ppl_control: 0.0 }; self.cases.len()];
        let train = self.training_set(Stage::Ngram, &self.train)?;
        let [d, c] = self.class_models(&train, opts)?;
        for &i in &self.test {
            out[i] = score_case(&d, &c, &self.cases[i].tokens)?;
        }
        // training cases: score each inner fold with models trained on the others
        let inner: BTreeSet<usize> = self.train.iter().map(|&i| self.cases[i].fold).collect();
        for g in inner {
            let base: Vec<usize> = self.train.iter().copied().filter(|&i| self.cases[i].fold != g).collect();
            let inner_train = self.training_set(Stage::Ngram, &base)?;
            let [d, c] = self.class_models(&inner_train, opts)?;
            for &i in self.train.iter().filter(|&&i| self.cases[i].fold == g) {
                out[i] = score_case(&d, &c, &self.cases[i].tokens)?;
            }
        }
        self.ppl.insert(k.clone(), out);
        Ok(k)
    }

    fn ensure_ubm(&mut self, opts: &UbmOptions) -> Result<String> {
        let k = key(opts);
        if self.ubm.contains_key(&k) {
            return Ok(k);
        }
        let train = self.training_set(Stage::Ubm, &self.train)?;
        let feats: Vec<FeatureMatrix> = train.iter().map(|&i| self.cases[i].features.clone()).collect();
        let fold_opts = UbmOptions { seed: mix_seed(opts.seed, self.fold as u64), ..opts.clone() };
        let ubm = train_ubm(&feats, &fold_opts)?;
        let stats = self
            .cases
            .par_iter()
            .map(|c| accumulate_stats(&ubm, &c.features))
            .collect::<Result<Vec<_>>>()?;
        self.ubm.insert(k.clone(), (ubm, stats));
        Ok(k)
    }

    fn ensure_ivectors(&mut self, ubm_opts: &UbmOptions, opts: &IvectorOptions) -> Result<String> {
        let k = key(&(ubm_opts, opts));
        if self.ivec.contains_key(&k) {
            return Ok(k);
        }
        let uk = self.ensure_ubm(ubm_opts)?;
        let train = self.training_set(Stage::TMatrix, &self.train)?;
        let (ubm, stats) = &self.ubm[&uk];
        let train_stats: Vec<BaumWelchStats> = train.iter().map(|&i| stats[i].clone()).collect();
        let fold_opts = IvectorOptions { seed: mix_seed(opts.seed, self.fold as u64), ..opts.clone() };
        let tv = train_t_matrix(&train_stats, ubm, &fold_opts)?;
        let ivecs = stats.par_iter().map(|s| tv.extract(s)).collect::<Result<Vec<_>>>()?;
        self.ivec.insert(k.clone(), ivecs);
        Ok(k)
    }

    fn train_net(&self, train: &[usize], settings: &XvectorSettings, base_seed: u64, salt: u64) -> Result<XvectorNet> {
        let train = self.training_set(Stage::Xvector, train)?;
        let feat_dim = self.cases[0].features.dim();
        let mut data: Vec<(FeatureMatrix, usize)> = Vec::with_capacity(2 * train.len());
        for &i in &train {
            let c = &self.cases[i];
            data.push((c.features.clone(), c.label.index()));
            if let Some(a) = &c.augmented {
                data.push((a.clone(), c.label.index()));
            }
        }
        let salt = mix_seed(self.fold as u64, salt);
        let mut net = XvectorNet::new(settings.net_config(feat_dim), mix_seed(base_seed, salt))?;
        let opts = XvectorTrainOptions { seed: mix_seed(settings.train.seed, salt), ..settings.train.clone() };
        train_xvector(&mut net, &data, &opts)?;
        Ok(net)
    }

    fn ensure_xvectors(&mut self, settings: &XvectorSettings, base_seed: u64) -> Result<String> {
        let k = key(&(settings, base_seed));
        if self.xvec.contains_key(&k) {
            return Ok(k);
        }
        let net = self.train_net(&self.train, settings, base_seed, 0)?;
        let embs = self.cases.par_iter().map(|c| net.embed(&c.features)).collect::<Result<Vec<_>>>()?;
        self.xvec.insert(k.clone(), embs);
        Ok(k)
    }

    fn evaluate(&mut self, cfg: &PipelineConfig) -> Result<FoldMetrics> {
        let pk = if cfg.blocks.perplexity { Some(self.ensure_perplexities(&cfg.ngram)?) } else { None };
        let ik = if cfg.blocks.ivector { Some(self.ensure_ivectors(&cfg.ubm, &cfg.ivector)?) } else { None };
        let xk = if cfg.blocks.xvector { Some(self.ensure_xvectors(&cfg.xvector, cfg.seed)?) } else { None };
        let layout = cfg.layout();
        let vector = |i: usize| -> Result<FusionVector> {
            fuse(
                pk.as_ref().map(|k| &self.ppl[k][i]),
                ik.as_ref().map(|k| &self.ivec[k][i]),
                xk.as_ref().map(|k| &self.xvec[k][i]),
                &layout,
            )
        };
        let train = self.training_set(Stage::Svm, &self.train)?;
        let examples =
            train.iter().map(|&i| Ok((vector(i)?, self.cases[i].label))).collect::<Result<Vec<_>>>()?;
        let model = train_svm(&examples, &cfg.svm)?;
        let mut confusion = Confusion::default();
        for &i in &self.test {
            let (pred, _) = model.predict(&vector(i)?)?;
            confusion.record(self.cases[i].label, pred);
        }
        Ok(FoldMetrics { fold: self.fold, accuracy: confusion.accuracy(), confusion })
    }
}

fn check_dataset(cases: &[Case], cfg: &PipelineConfig) -> Result<Vec<usize>> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("no cases to evaluate".into()));
    }
    let mut seen = HashSet::new();
    for c in cases {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::Input(format!("duplicate case id `{}`", c.id)));
        }
        if c.fold >= cfg.k_folds {
            return Err(Error::Input(format!("case `{}` has fold {} >= k_folds {}", c.id, c.fold, cfg.k_folds)));
        }
    }
    let folds: BTreeSet<usize> = cases.iter().map(|c| c.fold).collect();
    Ok(folds.into_iter().collect())
}

/// Evaluates several configurations over the same folds. On failure returns
/// the index of the failing configuration with the error.
fn evaluate_configs(
    cases: &[Case],
    configs: &[&PipelineConfig],
    fault: Option<FaultInjection>,
) -> std::result::Result<Vec<Vec<FoldMetrics>>, (Option<usize>, Error)> {
    let base = configs.first().ok_or((None, Error::Config("empty evaluation grid".into())))?;
    for (ci, cfg) in configs.iter().enumerate() {
        cfg.validate().map_err(|e| (Some(ci), e))?;
        if cfg.k_folds != base.k_folds {
            return Err((Some(ci), Error::Config("grid cells must share k_folds".into())));
        }
    }
    let folds = check_dataset(cases, base).map_err(|e| (None, e))?;
    let per_fold: Vec<Vec<FoldMetrics>> = folds
        .par_iter()
        .map(|&fold| {
            let mut ctx = FoldContext::new(cases, fold, fault);
            configs
                .iter()
                .enumerate()
                .map(|(ci, cfg)| {
                    log::debug!("fold {fold}: cell {ci}");
                    ctx.evaluate(cfg).map_err(|e| (Some(ci), e))
                })
                .collect()
        })
        .collect::<std::result::Result<_, _>>()?;
    // transpose to per-config lists
    Ok((0..configs.len()).map(|ci| per_fold.iter().map(|f| f[ci].clone()).collect()).collect())
}

/// k-fold cross-validation of one configuration over pre-assigned folds.
pub fn run_cv(cases: &[Case], cfg: &PipelineConfig) -> Result<MetricsReport> {
    run_cv_with_fault(cases, cfg, None)
}

pub fn run_cv_with_fault(cases: &[Case], cfg: &PipelineConfig, fault: Option<FaultInjection>) -> Result<MetricsReport> {
    let mut folds = evaluate_configs(cases, &[cfg], fault).map_err(|(_, e)| e)?;
    Ok(MetricsReport::from_folds("cv", &cfg.fingerprint(), &cfg.layout(), folds.remove(0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Grid {
    Table3,
    Table4,
    Table5,
}

impl Grid {
    pub const ALL: [Grid; 3] = [Grid::Table3, Grid::Table4, Grid::Table5];

    pub fn name(&self) -> &'static str {
        match self {
            Grid::Table3 => "table3",
            Grid::Table4 => "table4",
            Grid::Table5 => "table5",
        }
    }

    pub fn title(&self) -> &'static str {
        match self {
            Grid::Table3 => "N-gram Model Evaluation",
            Grid::Table4 => "I-vector Model Evaluation",
            Grid::Table5 => "Combined Model Evaluation",
        }
    }

    pub fn key_columns(&self) -> &'static [&'static str] {
        match self {
            Grid::Table3 => &["N-gram", "Smoothing Method"],
            Grid::Table4 => &["UBM Components", "I-vector Size"],
            Grid::Table5 => &["X-vector", "I-vector", "Perplexity"],
        }
    }
}

impl std::str::FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table3" => Ok(Grid::Table3),
            "table4" => Ok(Grid::Table4),
            "table5" => Ok(Grid::Table5),
            other => Err(Error::Parse(format!("unknown grid `{other}`"))),
        }
    }
}

/// Hyperparameter values swept by the Table 3 and Table 4 grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub ngram_orders: Vec<usize>,
    pub smoothers: Vec<Smoothing>,
    pub ubm_components: Vec<usize>,
    pub ivector_ranks: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            ngram_orders: vec![2, 3, 4],
            smoothers: vec![Smoothing::GoodTuring, Smoothing::KneserNey],
            ubm_components: vec![512, 256, 128, 64],
            ivector_ranks: vec![512, 256, 128, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub grid: Grid,
    /// Values for the grid's key columns.
    pub keys: Vec<String>,
    pub config: PipelineConfig,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}/{}", self.grid.name(), self.keys.join("/").replace(' ', "-").to_ascii_lowercase())
    }
}

fn smoothing_title(s: Smoothing) -> &'static str {
    match s {
        Smoothing::GoodTuring => "Good-Turing",
        Smoothing::KneserNey => "Kneser-Ney",
        Smoothing::Mle => "None",
    }
}

fn yes_no(b: bool) -> String {
    if b { "Yes" } else { "No" }.to_string()
}

pub fn grid_cells(grid: Grid, base: &PipelineConfig, spec: &GridSpec) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    match grid {
        Grid::Table3 => {
            for &order in &spec.ngram_orders {
                for &smoothing in &spec.smoothers {
                    let mut config = base.clone();
                    config.blocks = BlockFlags { perplexity: true, ivector: false, xvector: false };
                    config.ngram.order = order;
                    config.ngram.smoothing = smoothing;
                    let keys = vec![format!("{order}-gram"), smoothing_title(smoothing).to_string()];
                    cells.push(Cell { grid, keys, config });
                }
            }
        }
        Grid::Table4 => {
            for &k in &spec.ubm_components {
                for &r in &spec.ivector_ranks {
                    let mut config = base.clone();
                    config.blocks = BlockFlags { perplexity: false, ivector: true, xvector: false };
                    config.ubm.components = k;
                    config.ivector.rank = r;
                    cells.push(Cell { grid, keys: vec![k.to_string(), r.to_string()], config });
                }
            }
        }
        Grid::Table5 => {
            // row order: single blocks, then pairs, then all three
            let rows = [
                (true, false, false),
                (false, true, false),
                (false, false, true),
                (true, true, false),
                (true, false, true),
                (false, true, true),
                (true, true, true),
            ];
            for (x, i, p) in rows {
                let mut config = base.clone();
                config.blocks = BlockFlags { perplexity: p, ivector: i, xvector: x };
                cells.push(Cell { grid, keys: vec![yes_no(x), yes_no(i), yes_no(p)], config });
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Config(format!("grid {} has no cells", grid.name())));
    }
    for c in &cells {
        c.config.validate().map_err(|e| Error::Cell { cell: c.name(), source: Box::new(e) })?;
    }
    Ok(cells)
}

/// Runs every cell over the same folds. Cell failures carry the cell name.
pub fn run_cells(cases: &[Case], cells: &[Cell], fault: Option<FaultInjection>) -> Result<Vec<MetricsReport>> {
    let configs: Vec<&PipelineConfig> = cells.iter().map(|c| &c.config).collect();
    let per_cell = evaluate_configs(cases, &configs, fault).map_err(|(ci, e)| match ci {
        Some(ci) => Error::Cell { cell: cells[ci].name(), source: Box::new(e) },
        None => e,
    })?;
    Ok(cells
        .iter()
        .zip(per_cell)
        .map(|(c, folds)| MetricsReport::from_folds(&c.name(), &c.config.fingerprint(), &c.config.layout(), folds))
        .collect())
}

pub fn run_ablation(cases: &[Case], base: &PipelineConfig, grid: Grid, spec: &GridSpec) -> Result<Vec<MetricsReport>> {
    run_cells(cases, &grid_cells(grid, base, spec)?, None)
}

/// One JSON object per line.
pub fn reports_to_jsonl(reports: &[MetricsReport]) -> String {
    reports.iter().map(|r| r.to_json_line() + "\n").collect()
}

/// Aligned text table with the grid's key columns followed by the metrics.
pub fn render_table(grid: Grid, cells: &[Cell], reports: &[MetricsReport]) -> String {
    let mut header: Vec<String> = grid.key_columns().iter().map(|s| s.to_string()).collect();
    header.extend(["Accuracy", "Precision", "Recall", "F1-Score"].map(String::from));
    let mut rows = vec![header];
    for (cell, r) in cells.iter().zip(reports) {
        let mut row = cell.keys.clone();
        row.extend([r.accuracy, r.precision, r.recall, r.f1].map(|v| format!("{v:.1}")));
        rows.push(row);
    }
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
    let line = |r: &Vec<String>| {
        let cols: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
        cols.join("  ").trim_end().to_string()
    };
    let mut out = format!("{} (macro-averaged precision/recall/F1)\n", grid.title());
    out.push_str(&line(&rows[0]));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in &rows[1..] {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// Number of table rows for a grid specification.
pub fn expected_rows(grid: Grid, spec: &GridSpec) -> usize {
    match grid {
        Grid::Table3 => spec.ngram_orders.len() * spec.smoothers.len(),
        Grid::Table4 => spec.ubm_components.len() * spec.ivector_ranks.len(),
        Grid::Table5 => 7,
    }
}
