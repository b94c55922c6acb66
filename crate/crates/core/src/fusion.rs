//! Feature fusion, linear SVM and classification metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::ivector::IVector;
use crate::ngram::PerplexityPair;
use crate::xvector::XvectorEmbedding;

const MAGIC: &[u8; 4] = b"SMSV";
const VERSION: u32 = 1;

/// Which blocks a fused vector carries, and their widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockLayout {
    pub perplexity: bool,
    pub ivector: Option<usize>,
    pub xvector: Option<usize>,
}

impl BlockLayout {
    pub fn len(&self) -> usize {
        2 * usize::from(self.perplexity) + self.ivector.unwrap_or(0) + self.xvector.unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        !self.perplexity && self.ivector.is_none() && self.xvector.is_none()
    }

    /// Named `(name, start, len)` spans in block order.
    pub fn spans(&self) -> Vec<(&'static str, usize, usize)> {
        let mut out = Vec::new();
        let mut at = 0;
        if self.perplexity {
            out.push(("perplexity", at, 2));
            at += 2;
        }
        if let Some(r) = self.ivector {
            out.push(("ivector", at, r));
            at += r;
        }
        if let Some(s) = self.xvector {
            out.push(("xvector", at, s));
        }
        out
    }
}

impl fmt::Display for BlockLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.spans().iter().map(|(n, _, l)| format!("{n}[{l}]")).collect();
        write!(f, "{}", names.join("+"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionVector {
    pub values: Vec<f64>,
    pub layout: BlockLayout,
}

/// Concatenates `[ln ppl_dementia, ln ppl_control] ⊕ ivector ⊕ xvector`.
pub fn fuse(
    ppl: Option<&PerplexityPair>,
    ivec: Option<&IVector>,
    xvec: Option<&XvectorEmbedding>,
    layout: &BlockLayout,
) -> Result<FusionVector> {
    if layout.is_empty() {
        return Err(Error::Config("fusion layout has no active block".into()));
    }
    let mut values = Vec::with_capacity(layout.len());
    match (layout.perplexity, ppl) {
        (true, Some(p)) => {
            if !(p.ppl_dementia > 0.0 && p.ppl_control > 0.0) {
                return Err(Error::Input(format!("non-positive perplexity {p:?}")));
            }
            values.push(p.ppl_dementia.ln());
            values.push(p.ppl_control.ln());
        }
        (true, None) => return Err(Error::Input("layout expects perplexities".into())),
        (false, _) => {}
    }
    push_block(&mut values, "i-vector", layout.ivector, ivec.map(|v| v.0.as_slice()))?;
    push_block(&mut values, "x-vector", layout.xvector, xvec.map(XvectorEmbedding::values))?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite value in fused vector".into()));
    }
    Ok(FusionVector { values, layout: *layout })
}

fn push_block(out: &mut Vec<f64>, name: &str, want: Option<usize>, got: Option<&[f64]>) -> Result<()> {
    match (want, got) {
        (Some(n), Some(v)) if v.len() == n => {
            out.extend_from_slice(v);
            Ok(())
        }
        (Some(n), Some(v)) => Err(Error::Input(format!("{name} has length {}, layout expects {n}", v.len()))),
        (Some(_), None) => Err(Error::Input(format!("layout expects an {name}"))),
        (None, _) => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    pub c: f64,
    pub iters: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self { c: 1.0, iters: 2000 }
    }
}

/// Per-dimension z-score transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Constant dimensions get scale 1.
    pub fn fit(rows: &[&[f64]]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var.iter().map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 { sd } else { 1.0 }
        });
        Self { mean, scale: scale.collect() }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub layout: BlockLayout,
    pub standardizer: Standardizer,
    /// Weights in standardized coordinates.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    /// Best objective value so far, one entry per iteration.
    pub objective_trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `½‖w‖² + C · mean hinge`, with `y` in {+1, -1}.
pub fn svm_objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64], c: f64) -> f64 {
    let hinge: f64 = xs.iter().zip(ys).map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0)).sum();
    0.5 * dot(w, w) + c * hinge / xs.len() as f64
}

/// Full-batch subgradient descent on the primal objective with step `1/t`;
/// the iterate with the lowest objective is kept. The bias is unregularized.
pub fn train_svm(examples: &[(FusionVector, Label)], opts: &SvmOptions) -> Result<SvmModel> {
    if examples.is_empty() {
        return Err(Error::Training("no SVM training examples".into()));
    }
    if !(opts.c > 0.0) || opts.iters == 0 {
        return Err(Error::Config("SVM needs C > 0 and at least one iteration".into()));
    }
    let layout = examples[0].0.layout;
    if examples.iter().any(|(v, _)| v.layout != layout || v.values.len() != layout.len()) {
        return Err(Error::Consistency("SVM training vectors have mixed layouts".into()));
    }
    let has = |l: Label| examples.iter().any(|(_, y)| *y == l);
    if !has(Label::Dementia) || !has(Label::Control) {
        return Err(Error::Training("SVM training set contains a single class".into()));
    }
    let raw: Vec<&[f64]> = examples.iter().map(|(v, _)| v.values.as_slice()).collect();
    let standardizer = Standardizer::fit(&raw);
    let xs: Vec<Vec<f64>> = raw.iter().map(|r| standardizer.apply(r)).collect();
    let ys: Vec<f64> = examples.iter().map(|(_, y)| y.sign()).collect();
    let (n, d) = (xs.len() as f64, layout.len());

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut best = (svm_objective(&w, b, &xs, &ys, opts.c), w.clone(), b);
    let mut trace = Vec::with_capacity(opts.iters);
    let mut gw = vec![0.0; d];
    for t in 1..=opts.iters {
        gw.copy_from_slice(&w);
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            if y * (dot(&w, x) + b) < 1.0 {
                let s = opts.c * y / n;
                gw.iter_mut().zip(x).for_each(|(g, v)| *g -= s * v);
                gb -= s;
            }
        }
        let eta = 1.0 / t as f64;
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= eta * g);
        b -= eta * gb;
        let obj = svm_objective(&w, b, &xs, &ys, opts.c);
        if obj < best.0 {
            best = (obj, w.clone(), b);
        }
        trace.push(best.0);
    }
    let (_, weights, bias) = best;
    Ok(SvmModel { layout, standardizer, weights, bias, c: opts.c, objective_trace: trace })
}

impl SvmModel {
    /// Score for an already standardized vector.
    pub fn decision_standardized(&self, z: &[f64]) -> f64 {
        dot(&self.weights, z) + self.bias
    }

    pub fn decision(&self, vector: &FusionVector) -> Result<f64> {
        if vector.layout != self.layout || vector.values.len() != self.weights.len() {
            return Err(Error::Consistency(format!(
                "vector layout {} does not match model layout {}",
                vector.layout, self.layout
            )));
        }
        Ok(self.decision_standardized(&self.standardizer.apply(&vector.values)))
    }

    /// Positive scores are Dementia; a score of exactly zero is Control.
    pub fn predict(&self, vector: &FusionVector) -> Result<(Label, f64)> {
        let s = self.decision(vector)?;
        Ok((if s > 0.0 { Label::Dementia } else { Label::Control }, s))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new(Vec::new());
        let write = |e: &mut Encoder<Vec<u8>>| -> Result<()> {
            e.magic(MAGIC, VERSION)?;
            e.u32(u32::from(self.layout.perplexity))?;
            e.usize(self.layout.ivector.unwrap_or(0))?;
            e.usize(self.layout.xvector.unwrap_or(0))?;
            e.f64(self.c)?;
            e.f64s(&self.standardizer.mean)?;
            e.f64s(&self.standardizer.scale)?;
            e.f64s(&self.weights)?;
            e.f64(self.bias)
        };
        write(&mut e).expect("in-memory write");
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(bytes);
        d.magic(MAGIC, VERSION)?;
        let nz = |v: usize| (v > 0).then_some(v);
        let layout = BlockLayout { perplexity: d.u32()? != 0, ivector: nz(d.usize()?), xvector: nz(d.usize()?) };
        let n = layout.len();
        let c = d.f64()?;
        let standardizer = Standardizer { mean: d.f64s(n)?, scale: d.f64s(n)? };
        let weights = d.f64s(n)?;
        let bias = d.f64()?;
        Ok(Self { layout, standardizer, weights, bias, c, objective_trace: Vec::new() })
    }
}

pub fn predict(model: &SvmModel, vector: &FusionVector) -> Result<(Label, f64)> {
    model.predict(vector)
}

/// Confusion counts with Dementia as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 { 0.0 } else { a as f64 / b as f64 }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
}

impl Confusion {
    pub fn new(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Dementia, Label::Dementia) => self.tp += 1,
            (Label::Control, Label::Control) => self.tn += 1,
            (Label::Control, Label::Dementia) => self.fp += 1,
            (Label::Dementia, Label::Control) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Percent.
    pub fn accuracy(&self) -> f64 {
        100.0 * ratio(self.tp + self.tn, self.total())
    }

    /// `(precision, recall, f1)` per class as fractions, Dementia first.
    pub fn per_class(&self) -> [(f64, f64, f64); 2] {
        let (pd, rd) = (ratio(self.tp, self.tp + self.fp), ratio(self.tp, self.tp + self.fn_));
        let (pc, rc) = (ratio(self.tn, self.tn + self.fn_), ratio(self.tn, self.tn + self.fp));
        [(pd, rd, f1(pd, rd)), (pc, rc, f1(pc, rc))]
    }

    /// Macro precision, recall and F1 in percent; F1 is the mean of the
    /// per-class F1 scores.
    pub fn macro_scores(&self) -> (f64, f64, f64) {
        let [d, c] = self.per_class();
        (50.0 * (d.0 + c.0), 50.0 * (d.1 + c.1), 50.0 * (d.2 + c.2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub confusion: Confusion,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cell: String,
    pub fingerprint: String,
    pub layout: String,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_fold: Vec<FoldMetrics>,
}

impl MetricsReport {
    pub fn from_folds(cell: &str, fingerprint: &str, layout: &BlockLayout, folds: Vec<FoldMetrics>) -> Self {
        let mut confusion = Confusion::default();
        for f in &folds {
            confusion.merge(&f.confusion);
        }
        let (precision, recall, f1) = confusion.macro_scores();
        Self {
            cell: cell.to_string(),
            fingerprint: fingerprint.to_string(),
            layout: layout.to_string(),
            accuracy: confusion.accuracy(),
            confusion,
            precision,
            recall,
            f1,
            per_fold: folds,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}
