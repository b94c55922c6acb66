//! TDNN x-vector network: five spliced frame layers, statistics pooling,
//! two segment layers and a softmax head trained with cross-entropy.
//!
//! Sequences are `frames x dim` matrices. Frame layers only emit positions
//! whose whole context is available, so each layer shortens the sequence by
//! its context span minus one. The embedding is the segment6 affine output
//! before the rectifier.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;

const MAGIC: &[u8; 4] = b"SMXV";
const VERSION: u32 = 1;
/// Added to the pooled variance before the square root.
pub const STD_EPSILON: f64 = 1e-10;

pub const FRAME_LAYERS: usize = 5;
const SEG6: usize = FRAME_LAYERS;
const SEG7: usize = FRAME_LAYERS + 1;
const OUTPUT: usize = FRAME_LAYERS + 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct XvectorConfig {
    pub feat_dim: usize,
    /// Output widths of frame layers 1-5; the last is the pre-pooling width.
    pub frame_dims: Vec<usize>,
    /// Frame offsets spliced by each frame layer.
    pub contexts: Vec<Vec<i32>>,
    pub seg6: usize,
    pub seg7: usize,
    pub n_classes: usize,
}

impl XvectorConfig {
    /// The layer contexts used by every preset.
    pub fn standard_contexts() -> Vec<Vec<i32>> {
        vec![(-4..=4).collect(), vec![-4, 0, 4], vec![-5, 0, 5], vec![0], vec![0]]
    }

    /// 128-wide frame layers, 7500-wide pre-pooling layer, 512-wide segment layers.
    pub fn full_scale(feat_dim: usize, n_classes: usize) -> Self {
        Self {
            feat_dim,
            frame_dims: vec![128, 128, 128, 128, 7500],
            contexts: Self::standard_contexts(),
            seg6: 512,
            seg7: 512,
            n_classes,
        }
    }

    /// 64-wide frame layers, 256 pre-pooling (512 pooled), 64-wide segments.
    pub fn desk_scale(feat_dim: usize, n_classes: usize) -> Self {
        Self {
            feat_dim,
            frame_dims: vec![64, 64, 64, 64, 256],
            contexts: Self::standard_contexts(),
            seg6: 64,
            seg7: 64,
            n_classes,
        }
    }

    /// Frame widths `hidden` for layers 1-4 and `pre_pool` for layer 5.
    pub fn with_widths(
        feat_dim: usize,
        hidden: usize,
        pre_pool: usize,
        segment: usize,
        n_classes: usize,
    ) -> Self {
        Self {
            feat_dim,
            frame_dims: vec![hidden, hidden, hidden, hidden, pre_pool],
            contexts: Self::standard_contexts(),
            seg6: segment,
            seg7: segment,
            n_classes,
        }
    }

    /// Same network with every frame layer restricted to the current frame.
    pub fn context_free(mut self) -> Self {
        self.contexts = vec![vec![0]; FRAME_LAYERS];
        self
    }

    pub fn pre_pool_dim(&self) -> usize {
        *self.frame_dims.last().unwrap_or(&0)
    }

    pub fn pooled_dim(&self) -> usize {
        2 * self.pre_pool_dim()
    }

    fn span(ctx: &[i32]) -> usize {
        let (lo, hi) = (ctx.iter().min().unwrap(), ctx.iter().max().unwrap());
        (hi - lo) as usize + 1
    }

    /// Input frames consumed per output frame of layer `upto` (1-based).
    pub fn receptive_field_at(&self, upto: usize) -> usize {
        1 + self.contexts[..upto].iter().map(|c| Self::span(c) - 1).sum::<usize>()
    }

    /// Minimum input length for one pooled frame.
    pub fn receptive_field(&self) -> usize {
        self.receptive_field_at(FRAME_LAYERS)
    }

    /// `(input, output)` dims of all eight affine layers.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(OUTPUT + 1);
        let mut prev = self.feat_dim;
        for (ctx, &out) in self.contexts.iter().zip(&self.frame_dims) {
            shapes.push((prev * ctx.len(), out));
            prev = out;
        }
        shapes.push((self.pooled_dim(), self.seg6));
        shapes.push((self.seg6, self.seg7));
        shapes.push((self.seg7, self.n_classes));
        shapes
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_dims.len() != FRAME_LAYERS || self.contexts.len() != FRAME_LAYERS {
            return Err(Error::Config(format!("x-vector needs exactly {FRAME_LAYERS} frame layers")));
        }
        if self.contexts.iter().any(Vec::is_empty) {
            return Err(Error::Config("x-vector layer context is empty".into()));
        }
        for ctx in &self.contexts {
            if ctx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("layer context offsets must be strictly increasing".into()));
            }
        }
        let dims = [self.feat_dim, self.seg6, self.seg7, self.n_classes];
        if dims.contains(&0) || self.frame_dims.contains(&0) {
            return Err(Error::Config("x-vector layer widths must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("x-vector needs at least two classes".into()));
        }
        Ok(())
    }
}

/// One affine layer, `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Affine {
    fn zeros(inp: usize, out: usize) -> Self {
        Self { w: DMatrix::zeros(out, inp), b: DVector::zeros(out) }
    }

    fn add_scaled(&mut self, other: &Affine, s: f64) {
        self.w.zip_apply(&other.w, |a, b| *a += s * b);
        self.b.zip_apply(&other.b, |a, b| *a += s * b);
    }

    fn scale(&mut self, s: f64) {
        self.w.scale_mut(s);
        self.b.scale_mut(s);
    }

    fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn sq_norm(&self) -> f64 {
        self.w.norm_squared() + self.b.norm_squared()
    }

    /// Applies to each row of `x`.
    fn forward_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * self.w.transpose();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.b[j]);
        }
        z
    }

    fn forward_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * x + &self.b
    }
}

/// Parameters (or gradients) of all eight layers: frame 1-5, segment6,
/// segment7, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Params(pub Vec<Affine>);

impl Params {
    fn zeros_like(cfg: &XvectorConfig) -> Self {
        Params(cfg.layer_shapes().into_iter().map(|(i, o)| Affine::zeros(i, o)).collect())
    }

    fn add_scaled(&mut self, other: &Params, s: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_scaled(b, s);
        }
    }

    pub fn num_params(&self) -> usize {
        self.0.iter().map(Affine::len).sum()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(Affine::sq_norm).sum::<f64>().sqrt()
    }

    /// Mutable access to parameter `i` in flat layer order (weights
    /// column-major, then bias, per layer).
    pub fn get_mut(&mut self, mut i: usize) -> &mut f64 {
        for layer in &mut self.0 {
            if i < layer.w.len() {
                return &mut layer.w.as_mut_slice()[i];
            }
            i -= layer.w.len();
            if i < layer.b.len() {
                return &mut layer.b.as_mut_slice()[i];
            }
            i -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn get(&self, i: usize) -> f64 {
        self.flat().nth(i).expect("parameter index out of range")
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XvectorEmbedding(pub Vec<f64>);

impl XvectorEmbedding {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub probabilities: Vec<f64>,
    pub embedding: XvectorEmbedding,
    pub pooled_mean: Vec<f64>,
    pub pooled_std: Vec<f64>,
}

struct FrameCache {
    spliced: DMatrix<f64>,
    pre: DMatrix<f64>,
}

struct Cache {
    frames: Vec<FrameCache>,
    h5: DMatrix<f64>,
    mean: DVector<f64>,
    std: DVector<f64>,
    pooled: DVector<f64>,
    z6: DVector<f64>,
    a6: DVector<f64>,
    z7: DVector<f64>,
    a7: DVector<f64>,
    probs: DVector<f64>,
}

fn relu_mat(z: &DMatrix<f64>) -> DMatrix<f64> {
    z.map(|v| v.max(0.0))
}

fn relu_vec(z: &DVector<f64>) -> DVector<f64> {
    z.map(|v| v.max(0.0))
}

fn splice(h: &DMatrix<f64>, ctx: &[i32]) -> DMatrix<f64> {
    let lo = ctx[0];
    let span = (ctx[ctx.len() - 1] - lo) as usize + 1;
    let (t, d) = (h.nrows(), h.ncols());
    let t_out = t + 1 - span;
    let mut out = DMatrix::zeros(t_out, d * ctx.len());
    for (k, &o) in ctx.iter().enumerate() {
        let start = (o - lo) as usize;
        out.view_mut((0, k * d), (t_out, d)).copy_from(&h.rows(start, t_out));
    }
    out
}

/// Per-column mean and standard deviation over frames. Each column is summed
/// in sorted order, so the result does not depend on frame order at all.
pub fn stats_pool(h: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let t = h.nrows() as f64;
    let d = h.ncols();
    let mut mean = DVector::zeros(d);
    let mut std = DVector::zeros(d);
    let mut col = Vec::with_capacity(h.nrows());
    for (j, c) in h.column_iter().enumerate() {
        col.clear();
        col.extend(c.iter().copied());
        col.sort_by(f64::total_cmp);
        let m = col.iter().sum::<f64>() / t;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t;
        mean[j] = m;
        std[j] = (var + STD_EPSILON).sqrt();
    }
    (mean, std)
}

fn softmax(z: &DVector<f64>) -> DVector<f64> {
    let max = z.max();
    let e = z.map(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

fn to_matrix(f: &FeatureMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(f.frames(), f.dim(), f.as_slice())
}

#[derive(Debug, Clone, PartialEq)]
pub struct XvectorNet {
    config: XvectorConfig,
    params: Params,
}

impl XvectorNet {
    /// He-normal initialization for rectified layers; the softmax layer
    /// starts at zero so initial predictions are uniform.
    pub fn new(config: XvectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = config.layer_shapes();
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(i, &(inp, out))| {
                if i == OUTPUT {
                    return Affine::zeros(inp, out);
                }
                let normal = Normal::new(0.0, (2.0 / inp as f64).sqrt()).unwrap();
                Affine { w: DMatrix::from_fn(out, inp, |_, _| normal.sample(&mut rng)), b: DVector::zeros(out) }
            })
            .collect();
        Ok(Self { config, params: Params(layers) })
    }

    pub fn config(&self) -> &XvectorConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn check_input(&self, f: &FeatureMatrix) -> Result<()> {
        if f.dim() != self.config.feat_dim {
            return Err(Error::Input(format!(
                "feature dim {} does not match network input {}",
                f.dim(),
                self.config.feat_dim
            )));
        }
        let need = self.config.receptive_field();
        if f.frames() < need {
            return Err(Error::TooShort { frames: f.frames(), required: need });
        }
        Ok(())
    }

    fn forward_cached(&self, x: &DMatrix<f64>) -> Cache {
        let p = &self.params.0;
        let mut h = x.clone();
        let mut frames = Vec::with_capacity(FRAME_LAYERS);
        for (layer, ctx) in p[..FRAME_LAYERS].iter().zip(&self.config.contexts) {
            let spliced = splice(&h, ctx);
            let pre = layer.forward_rows(&spliced);
            h = relu_mat(&pre);
            frames.push(FrameCache { spliced, pre });
        }
        let (mean, std) = stats_pool(&h);
        let d = h.ncols();
        let pooled = DVector::from_iterator(2 * d, mean.iter().chain(std.iter()).copied());
        let z6 = p[SEG6].forward_vec(&pooled);
        let a6 = relu_vec(&z6);
        let z7 = p[SEG7].forward_vec(&a6);
        let a7 = relu_vec(&z7);
        let probs = softmax(&p[OUTPUT].forward_vec(&a7));
        Cache { frames, h5: h, mean, std, pooled, z6, a6, z7, a7, probs }
    }

    pub fn forward(&self, features: &FeatureMatrix) -> Result<ForwardOutput> {
        self.check_input(features)?;
        let c = self.forward_cached(&to_matrix(features));
        Ok(ForwardOutput {
            probabilities: c.probs.iter().copied().collect(),
            embedding: XvectorEmbedding(c.z6.iter().copied().collect()),
            pooled_mean: c.mean.iter().copied().collect(),
            pooled_std: c.std.iter().copied().collect(),
        })
    }

    /// Segment6 pre-activation.
    pub fn embed(&self, features: &FeatureMatrix) -> Result<XvectorEmbedding> {
        Ok(self.forward(features)?.embedding)
    }

    /// Cross-entropy `-ln P(label | x)` and its gradient.
    pub fn loss_and_gradient(&self, features: &FeatureMatrix, label: usize) -> Result<(f64, Params, usize)> {
        self.check_input(features)?;
        if label >= self.config.n_classes {
            return Err(Error::Input(format!("label {label} out of range")));
        }
        let (loss, grads, pred) = self.backprop(&to_matrix(features), label);
        Ok((loss, grads, pred))
    }

    pub fn loss(&self, features: &FeatureMatrix, label: usize) -> Result<f64> {
        self.check_input(features)?;
        let c = self.forward_cached(&to_matrix(features));
        Ok(-c.probs[label].max(f64::MIN_POSITIVE).ln())
    }

    fn backprop(&self, x: &DMatrix<f64>, label: usize) -> (f64, Params, usize) {
        let p = &self.params.0;
        let c = self.forward_cached(x);
        let loss = -c.probs[label].max(f64::MIN_POSITIVE).ln();
        let pred = c.probs.argmax().0;
        let mut g = Params::zeros_like(&self.config);

        let mut dlogits = c.probs.clone();
        dlogits[label] -= 1.0;
        g.0[OUTPUT].w = &dlogits * c.a7.transpose();
        g.0[OUTPUT].b = dlogits.clone();
        let dz7 = (p[OUTPUT].w.tr_mul(&dlogits)).zip_map(&c.z7, |d, z| if z > 0.0 { d } else { 0.0 });
        g.0[SEG7].w = &dz7 * c.a6.transpose();
        g.0[SEG7].b = dz7.clone();
        let dz6 = (p[SEG7].w.tr_mul(&dz7)).zip_map(&c.z6, |d, z| if z > 0.0 { d } else { 0.0 });
        g.0[SEG6].w = &dz6 * c.pooled.transpose();
        g.0[SEG6].b = dz6.clone();
        let dpooled = p[SEG6].w.tr_mul(&dz6);

        // statistics pooling: d mean / d h = 1/T, d std / d h = (h - mean) / (T std)
        let (t, d) = (c.h5.nrows(), c.h5.ncols());
        let tf = t as f64;
        let mut dh = DMatrix::from_fn(t, d, |i, j| {
            dpooled[j] / tf + dpooled[d + j] * (c.h5[(i, j)] - c.mean[j]) / (tf * c.std[j])
        });

        for l in (0..FRAME_LAYERS).rev() {
            let fc = &c.frames[l];
            let dz = dh.zip_map(&fc.pre, |d, z| if z > 0.0 { d } else { 0.0 });
            g.0[l].w = dz.tr_mul(&fc.spliced);
            g.0[l].b = DVector::from_iterator(dz.ncols(), dz.column_iter().map(|col| col.sum()));
            if l == 0 {
                break;
            }
            let dx = &dz * &p[l].w;
            let ctx = &self.config.contexts[l];
            let prev_d = self.config.frame_dims[l - 1];
            let t_in = dz.nrows() + XvectorConfig::span(ctx) - 1;
            let mut dprev = DMatrix::zeros(t_in, prev_d);
            for (k, &o) in ctx.iter().enumerate() {
                let start = (o - ctx[0]) as usize;
                let mut rows = dprev.rows_mut(start, dz.nrows());
                rows += dx.columns(k * prev_d, prev_d);
            }
            dh = dprev;
        }
        (loss, g, pred)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new(Vec::new());
        let cfg = &self.config;
        let write = |e: &mut Encoder<Vec<u8>>| -> Result<()> {
            e.magic(MAGIC, VERSION)?;
            e.usize(cfg.feat_dim)?;
            for &d in &cfg.frame_dims {
                e.usize(d)?;
            }
            for ctx in &cfg.contexts {
                e.usize(ctx.len())?;
                for &o in ctx {
                    e.u32(o as u32)?;
                }
            }
            e.usize(cfg.seg6)?;
            e.usize(cfg.seg7)?;
            e.usize(cfg.n_classes)?;
            for layer in &self.params.0 {
                for i in 0..layer.w.nrows() {
                    for j in 0..layer.w.ncols() {
                        e.f64(layer.w[(i, j)])?;
                    }
                }
                e.f64s(layer.b.as_slice())?;
            }
            Ok(())
        };
        write(&mut e).expect("in-memory write");
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(bytes);
        d.magic(MAGIC, VERSION)?;
        let feat_dim = d.usize()?;
        let frame_dims = (0..FRAME_LAYERS).map(|_| d.usize()).collect::<Result<Vec<_>>>()?;
        let mut contexts = Vec::with_capacity(FRAME_LAYERS);
        for _ in 0..FRAME_LAYERS {
            let n = d.usize()?;
            contexts.push((0..n).map(|_| d.u32().map(|v| v as i32)).collect::<Result<Vec<_>>>()?);
        }
        let (seg6, seg7, n_classes) = (d.usize()?, d.usize()?, d.usize()?);
        let config = XvectorConfig { feat_dim, frame_dims, contexts, seg6, seg7, n_classes };
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(inp, out)| {
                let w = d.f64s(inp * out)?;
                let b = d.f64s(out)?;
                Ok(Affine { w: DMatrix::from_row_slice(out, inp, &w), b: DVector::from_vec(b) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, params: Params(layers) })
    }
}

pub fn forward(net: &XvectorNet, features: &FeatureMatrix) -> Result<ForwardOutput> {
    net.forward(features)
}

pub fn embed(net: &XvectorNet, features: &FeatureMatrix) -> Result<XvectorEmbedding> {
    net.embed(features)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XvectorTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Chunk length range in frames (inclusive).
    pub chunk_min: usize,
    pub chunk_max: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning rate multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    /// Gradient norm clip per minibatch.
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for XvectorTrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            chunk_min: 200,
            chunk_max: 400,
            learning_rate: 0.01,
            momentum: 0.9,
            lr_decay: 0.5,
            decay_every: 10,
            max_grad_norm: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
}

/// Minibatch SGD with momentum on randomly cropped chunks.
pub fn train_xvector(
    net: &mut XvectorNet,
    dataset: &[(FeatureMatrix, usize)],
    opts: &XvectorTrainOptions,
) -> Result<TrainTrace> {
    let cfg = net.config.clone();
    if dataset.is_empty() {
        return Err(Error::Training("empty x-vector training set".into()));
    }
    let mut present = vec![false; cfg.n_classes];
    for (f, y) in dataset {
        if *y >= cfg.n_classes {
            return Err(Error::Input(format!("label {y} out of range")));
        }
        present[*y] = true;
        net.check_input(f)?;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::Training("x-vector training needs at least two classes".into()));
    }
    if opts.batch_size == 0 || opts.chunk_min == 0 || opts.chunk_min > opts.chunk_max {
        return Err(Error::Config("invalid x-vector batch or chunk settings".into()));
    }
    let rf = cfg.receptive_field();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut velocity = Params::zeros_like(&cfg);
    let mut lr = opts.learning_rate;
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..opts.epochs {
        if epoch > 0 && opts.decay_every > 0 && epoch % opts.decay_every == 0 {
            lr *= opts.lr_decay;
        }
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(opts.batch_size) {
            let crops: Vec<(usize, usize, usize)> = batch
                .iter()
                .map(|&i| {
                    let t = dataset[i].0.frames();
                    let len = rng.random_range(opts.chunk_min..=opts.chunk_max).clamp(rf, t);
                    let start = rng.random_range(0..=t - len);
                    (i, start, len)
                })
                .collect();
            let results: Vec<(f64, Params, usize)> = crops
                .par_iter()
                .map(|&(i, start, len)| {
                    let (f, y) = &dataset[i];
                    let (loss, g, pred) = net.backprop(&to_matrix(&f.slice_frames(start, len)), *y);
                    (loss, g, usize::from(pred == *y))
                })
                .collect();
            let mut grad = Params::zeros_like(&cfg);
            for (loss, g, ok) in &results {
                loss_sum += loss;
                correct += ok;
                grad.add_scaled(g, 1.0);
            }
            let mut scale = 1.0 / batch.len() as f64;
            let norm = grad.norm() * scale;
            if norm > opts.max_grad_norm {
                scale *= opts.max_grad_norm / norm;
            }
            for (v, g) in velocity.0.iter_mut().zip(&grad.0) {
                v.scale(opts.momentum);
                v.add_scaled(g, -lr * scale);
            }
            net.params.add_scaled(&velocity, 1.0);
        }
        trace.epoch_loss.push(loss_sum / dataset.len() as f64);
        trace.epoch_accuracy.push(correct as f64 / dataset.len() as f64);
        log::debug!(
            "x-vector epoch {epoch}: loss {:.4} acc {:.3}",
            trace.epoch_loss[epoch],
            trace.epoch_accuracy[epoch]
        );
    }
    Ok(trace)
}
