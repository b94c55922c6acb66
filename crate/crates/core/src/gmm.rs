//! Diagonal-covariance GMM universal background model trained by EM.

use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{sha256_hex, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;

const MAGIC: &[u8; 4] = b"SMGM";
const VERSION: u32 = 1;
const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UbmOptions {
    pub components: usize,
    pub iters: usize,
    pub seed: u64,
    pub kmeans_iters: usize,
    /// Upper bound on frames used for k-means initialization.
    pub kmeans_sample: usize,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub var_floor: f64,
}

impl Default for UbmOptions {
    fn default() -> Self {
        Self { components: 64, iters: 10, seed: 0, kmeans_iters: 10, kmeans_sample: 20_000, var_floor: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    /// `k x dim`, row-major.
    means: Vec<f64>,
    variances: Vec<f64>,
    dim: usize,
    /// `ln w_k - 0.5 * sum_d ln(2 pi var_kd)`.
    log_const: Vec<f64>,
    inv_var: Vec<f64>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() % k != 0 || means.len() != variances.len() {
            return Err(Error::Input("inconsistent GMM parameter shapes".into()));
        }
        if variances.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Input("GMM variances must be positive".into()));
        }
        let dim = means.len() / k;
        let mut m = Self { weights, means, variances, dim, log_const: vec![], inv_var: vec![] };
        m.refresh();
        Ok(m)
    }

    fn refresh(&mut self) {
        let d = self.dim;
        self.inv_var = self.variances.iter().map(|v| 1.0 / v).collect();
        self.log_const = (0..self.k())
            .map(|j| {
                let logdet: f64 =
                    self.variances[j * d..(j + 1) * d].iter().map(|v| (2.0 * PI * v).ln()).sum();
                self.weights[j].ln() - 0.5 * logdet
            })
            .collect();
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, j: usize) -> &[f64] {
        &self.means[j * self.dim..(j + 1) * self.dim]
    }

    pub fn variance(&self, j: usize) -> &[f64] {
        &self.variances[j * self.dim..(j + 1) * self.dim]
    }

    /// Mean supervector (component means concatenated).
    pub fn mean_supervector(&self) -> &[f64] {
        &self.means
    }

    pub fn variance_supervector(&self) -> &[f64] {
        &self.variances
    }

    /// `ln(w_j N(x | m_j, S_j))` for every component.
    pub fn component_log_densities(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (j, o) in out.iter_mut().enumerate() {
            let m = &self.means[j * d..(j + 1) * d];
            let iv = &self.inv_var[j * d..(j + 1) * d];
            let mut q = 0.0;
            for i in 0..d {
                let diff = x[i] - m[i];
                q += diff * diff * iv[i];
            }
            *o = self.log_const[j] - 0.5 * q;
        }
    }

    /// Writes posteriors into `gamma` and returns the frame log-likelihood.
    pub fn posteriors_into(&self, x: &[f64], gamma: &mut [f64]) -> f64 {
        self.component_log_densities(x, gamma);
        let max = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for g in gamma.iter_mut() {
            *g = (*g - max).exp();
            sum += *g;
        }
        for g in gamma.iter_mut() {
            *g /= sum;
        }
        max + sum.ln()
    }

    /// Component posteriors for one frame, computed in log space.
    pub fn posteriors(&self, frame: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(frame.len())?;
        let mut g = vec![0.0; self.k()];
        self.posteriors_into(frame, &mut g);
        Ok(g)
    }

    pub fn log_likelihood(&self, frame: &[f64]) -> f64 {
        let mut g = vec![0.0; self.k()];
        self.posteriors_into(frame, &mut g)
    }

    /// Summed frame log-likelihood over a set of feature matrices.
    pub fn total_log_likelihood(&self, features: &[FeatureMatrix]) -> f64 {
        features.iter().flat_map(|f| f.rows()).map(|r| self.log_likelihood(r)).sum()
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim {
            return Err(Error::Input(format!("feature dim {dim} does not match UBM dim {}", self.dim)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new(Vec::new());
        let write = |e: &mut Encoder<Vec<u8>>| -> Result<()> {
            e.magic(MAGIC, VERSION)?;
            e.usize(self.k())?;
            e.usize(self.dim)?;
            e.f64s(&self.weights)?;
            e.f64s(&self.means)?;
            e.f64s(&self.variances)
        };
        write(&mut e).expect("in-memory write");
        e.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(bytes);
        d.magic(MAGIC, VERSION)?;
        let k = d.usize()?;
        let dim = d.usize()?;
        let weights = d.f64s(k)?;
        let means = d.f64s(k * dim)?;
        let variances = d.f64s(k * dim)?;
        Self::new(weights, means, variances)
    }

    /// SHA-256 of the serialized model; ties statistics to their producer.
    pub fn fingerprint(&self) -> String {
        sha256_hex(&self.to_bytes())
    }
}

/// Associative E-step accumulator.
#[derive(Debug, Clone)]
struct Accum {
    ll: f64,
    n: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Accum {
    fn new(k: usize, d: usize) -> Self {
        Self { ll: 0.0, n: vec![0.0; k], s1: vec![0.0; k * d], s2: vec![0.0; k * d] }
    }

    fn add(&mut self, other: &Accum) {
        self.ll += other.ll;
        for (a, b) in self.n.iter_mut().zip(&other.n) {
            *a += b;
        }
        for (a, b) in self.s1.iter_mut().zip(&other.s1) {
            *a += b;
        }
        for (a, b) in self.s2.iter_mut().zip(&other.s2) {
            *a += b;
        }
    }
}

fn e_step(model: &GmmModel, frames: &[&[f64]]) -> Accum {
    let (k, d) = (model.k(), model.dim());
    let parts: Vec<Accum> = frames
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Accum::new(k, d);
            let mut g = vec![0.0; k];
            for x in chunk {
                acc.ll += model.posteriors_into(x, &mut g);
                for j in 0..k {
                    let gj = g[j];
                    if gj == 0.0 {
                        continue;
                    }
                    acc.n[j] += gj;
                    let s1 = &mut acc.s1[j * d..(j + 1) * d];
                    let s2 = &mut acc.s2[j * d..(j + 1) * d];
                    for i in 0..d {
                        s1[i] += gj * x[i];
                        s2[i] += gj * x[i] * x[i];
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Accum::new(k, d);
    for p in &parts {
        total.add(p);
    }
    total
}

fn m_step(model: &mut GmmModel, acc: &Accum, floor: &[f64]) {
    let (k, d) = (model.k(), model.dim());
    let total: f64 = acc.n.iter().sum();
    for j in 0..k {
        let nj = acc.n[j];
        model.weights[j] = nj / total;
        if nj < 1e-10 {
            continue;
        }
        for i in 0..d {
            let m = acc.s1[j * d + i] / nj;
            let v = acc.s2[j * d + i] / nj - m * m;
            model.means[j * d + i] = m;
            model.variances[j * d + i] = v.max(floor[i]);
        }
    }
    model.refresh();
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means++ followed by Lloyd iterations; returns `k x d` centroids.
fn kmeans(points: &[&[f64]], k: usize, iters: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut best: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &b) in best.iter().enumerate() {
                if target < b {
                    pick = i;
                    break;
                }
                target -= b;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].to_vec());
        let c = centroids.last().unwrap();
        for (b, p) in best.iter_mut().zip(points) {
            *b = b.min(sq_dist(p, c));
        }
    }
    let d = points[0].len();
    for _ in 0..iters {
        let assign: Vec<(usize, f64)> = points
            .par_iter()
            .map(|p| {
                centroids
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (j, sq_dist(p, c)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap()
            })
            .collect();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &(j, _)) in points.iter().zip(&assign) {
            counts[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        let mut far: Vec<usize> = (0..points.len()).collect();
        far.sort_by(|&a, &b| assign[b].1.total_cmp(&assign[a].1).then(a.cmp(&b)));
        let mut far = far.into_iter();
        for j in 0..k {
            if counts[j] == 0 {
                // reseed an empty cluster at the worst-fit point
                if let Some(i) = far.next() {
                    centroids[j] = points[i].to_vec();
                }
            } else {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    centroids
}

/// Trains a UBM and returns it with the log-likelihood trace: entry `i` is
/// the total log-likelihood after `i` EM iterations (entry 0 is the k-means
/// initialization).
pub fn train_ubm_traced(features: &[FeatureMatrix], opts: &UbmOptions) -> Result<(GmmModel, Vec<f64>)> {
    let k = opts.components;
    if k == 0 {
        return Err(Error::Config("UBM needs at least one component".into()));
    }
    let frames: Vec<&[f64]> = features.iter().flat_map(|f| f.rows()).collect();
    if frames.is_empty() {
        return Err(Error::Training("no frames to train the UBM".into()));
    }
    let d = frames[0].len();
    if d == 0 || features.iter().any(|f| f.frames() > 0 && f.dim() != d) {
        return Err(Error::Input("feature matrices disagree on dimension".into()));
    }
    if features.iter().any(FeatureMatrix::has_non_finite) {
        return Err(Error::Input("non-finite value in UBM training features".into()));
    }
    if k > frames.len() {
        return Err(Error::Training(format!("{k} components exceed {} training frames", frames.len())));
    }
    if frames.len() < 10 * k {
        log::warn!("UBM: only {} frames for {k} components", frames.len());
    }

    let n = frames.len() as f64;
    let mut gmean = vec![0.0; d];
    for x in &frames {
        for (m, v) in gmean.iter_mut().zip(x.iter()) {
            *m += v;
        }
    }
    gmean.iter_mut().for_each(|m| *m /= n);
    let mut gvar = vec![0.0; d];
    for x in &frames {
        for ((s, v), m) in gvar.iter_mut().zip(x.iter()).zip(&gmean) {
            *s += (v - m) * (v - m);
        }
    }
    gvar.iter_mut().for_each(|s| *s /= n);
    let floor: Vec<f64> = gvar.iter().map(|v| (v * opts.var_floor).max(1e-10)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let sample: Vec<&[f64]> = if frames.len() > opts.kmeans_sample {
        frames.choose_multiple(&mut rng, opts.kmeans_sample).copied().collect()
    } else {
        frames.clone()
    };
    let centroids = kmeans(&sample, k, opts.kmeans_iters, &mut rng);

    // hard-assignment statistics seed the first M-step
    let mut acc = Accum::new(k, d);
    for x in &frames {
        let j = centroids
            .iter()
            .enumerate()
            .map(|(j, c)| (j, sq_dist(x, c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        acc.n[j] += 1.0;
        for i in 0..d {
            acc.s1[j * d + i] += x[i];
            acc.s2[j * d + i] += x[i] * x[i];
        }
    }
    let mut model = GmmModel::new(
        vec![1.0 / k as f64; k],
        centroids.concat(),
        (0..k).flat_map(|_| gvar.iter().map(|v| v.max(1e-10))).collect(),
    )?;
    m_step(&mut model, &acc, &floor);

    let mut trace = Vec::with_capacity(opts.iters + 1);
    for _ in 0..opts.iters {
        let acc = e_step(&model, &frames);
        trace.push(acc.ll);
        m_step(&mut model, &acc, &floor);
    }
    trace.push(e_step(&model, &frames).ll);
    Ok((model, trace))
}

pub fn train_ubm(features: &[FeatureMatrix], opts: &UbmOptions) -> Result<GmmModel> {
    Ok(train_ubm_traced(features, opts)?.0)
}
