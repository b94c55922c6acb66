//! Baum-Welch statistics, total-variability matrix training and i-vector
//! extraction.
//!
//! The utterance supervector is modeled as `M = m + T w` with `w ~ N(0, I)`,
//! `m` the UBM mean supervector and `Σ` the block-diagonal UBM covariance.
//! Both stay fixed; only `T` is trained. With zero-order stats `N` replicated
//! per dimension and centered first-order stats `F`, the posterior of `w` has
//!
//! ```text
//! precision L = I + Tᵗ Σ⁻¹ N T
//! mean      φ = L⁻¹ Tᵗ Σ⁻¹ F
//! ```
//!
//! and `φ` is the i-vector.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::gmm::GmmModel;

const MAGIC: &[u8; 4] = b"SMTV";
const VERSION: u32 = 1;
/// Cache per-component `T_cᵗ Σ_c⁻¹ T_c` blocks only below this many values.
const BLOCK_CACHE_LIMIT: usize = 1 << 24;

/// Zero- and first-order statistics of one utterance against a UBM.
#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchStats {
    /// `N_j`, one soft count per component.
    pub zero_order: Vec<f64>,
    /// `F_j = Σ_t γ_tj (x_t - m_j)`, components concatenated.
    pub first_order: Vec<f64>,
    pub frames: usize,
    pub ubm_fingerprint: String,
}

impl BaumWelchStats {
    pub fn dim(&self) -> usize {
        self.first_order.len() / self.zero_order.len().max(1)
    }

    pub fn first_order_block(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.first_order[j * d..(j + 1) * d]
    }
}

pub fn accumulate_stats(ubm: &GmmModel, features: &FeatureMatrix) -> Result<BaumWelchStats> {
    ubm.check_dim(features.dim())?;
    let (k, d) = (ubm.k(), ubm.dim());
    let mut zero_order = vec![0.0; k];
    let mut first_order = vec![0.0; k * d];
    let mut gamma = vec![0.0; k];
    for x in features.rows() {
        ubm.posteriors_into(x, &mut gamma);
        for (j, &g) in gamma.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            zero_order[j] += g;
            let m = ubm.mean(j);
            for i in 0..d {
                first_order[j * d + i] += g * (x[i] - m[i]);
            }
        }
    }
    debug_assert!(
        (zero_order.iter().sum::<f64>() - features.frames() as f64).abs() <= 1e-6 * features.frames().max(1) as f64,
        "soft counts must sum to the frame count"
    );
    Ok(BaumWelchStats {
        zero_order,
        first_order,
        frames: features.frames(),
        ubm_fingerprint: ubm.fingerprint(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvectorOptions {
    pub rank: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for IvectorOptions {
    fn default() -> Self {
        Self { rank: 128, iters: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IVector(pub Vec<f64>);

impl IVector {
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

/// Posterior of the latent factor for one utterance.
#[derive(Debug, Clone)]
pub struct FactorPosterior {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl FactorPosterior {
    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn log_det_precision(&self) -> f64 {
        2.0 * self.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct TotalVariabilityModel {
    /// `(k * dim) x rank`.
    t: DMatrix<f64>,
    inv_sigma: Vec<f64>,
    k: usize,
    dim: usize,
    ubm_fingerprint: String,
    blocks: Option<Vec<DMatrix<f64>>>,
}

impl PartialEq for TotalVariabilityModel {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t && self.ubm_fingerprint == other.ubm_fingerprint
    }
}

impl TotalVariabilityModel {
    pub fn new(t_matrix: DMatrix<f64>, ubm: &GmmModel) -> Result<Self> {
        let (k, dim) = (ubm.k(), ubm.dim());
        if t_matrix.nrows() != k * dim {
            return Err(Error::Config(format!(
                "T has {} rows, UBM supervector has {}",
                t_matrix.nrows(),
                k * dim
            )));
        }
        if t_matrix.ncols() == 0 || t_matrix.ncols() > k * dim {
            return Err(Error::Config(format!(
                "rank {} must be in 1..={} (k * dim)",
                t_matrix.ncols(),
                k * dim
            )));
        }
        let mut m = Self {
            t: t_matrix,
            inv_sigma: ubm.variance_supervector().iter().map(|v| 1.0 / v).collect(),
            k,
            dim,
            ubm_fingerprint: ubm.fingerprint(),
            blocks: None,
        };
        m.refresh_blocks();
        Ok(m)
    }

    fn refresh_blocks(&mut self) {
        let r = self.rank();
        self.blocks = (self.k * r * r <= BLOCK_CACHE_LIMIT).then(|| {
            (0..self.k)
                .into_par_iter()
                .map(|c| {
                    let tc = self.scaled_block(c, |_| 1.0);
                    tc.transpose() * tc
                })
                .collect()
        });
    }

    /// `diag(sqrt(s_i / σ_i)) T_c` for component `c`.
    fn scaled_block(&self, c: usize, s: impl Fn(usize) -> f64) -> DMatrix<f64> {
        let d = self.dim;
        let mut tc = self.t.rows(c * d, d).into_owned();
        for i in 0..d {
            let w = (s(c) * self.inv_sigma[c * d + i]).sqrt();
            tc.row_mut(i).scale_mut(w);
        }
        tc
    }

    pub fn rank(&self) -> usize {
        self.t.ncols()
    }

    pub fn t_matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn ubm_fingerprint(&self) -> &str {
        &self.ubm_fingerprint
    }

    fn check_stats(&self, stats: &BaumWelchStats) -> Result<()> {
        if stats.ubm_fingerprint != self.ubm_fingerprint {
            return Err(Error::Consistency(
                "statistics were accumulated against a different UBM".into(),
            ));
        }
        if stats.zero_order.len() != self.k || stats.first_order.len() != self.k * self.dim {
            return Err(Error::Consistency("statistics shape does not match the model".into()));
        }
        Ok(())
    }

    /// `I + Tᵗ Σ⁻¹ N T`.
    pub fn precision(&self, stats: &BaumWelchStats) -> DMatrix<f64> {
        let r = self.rank();
        let mut l = DMatrix::<f64>::identity(r, r);
        match &self.blocks {
            Some(blocks) => {
                for (b, &n) in blocks.iter().zip(&stats.zero_order) {
                    if n != 0.0 {
                        l.zip_apply(b, |a, v| *a += n * v);
                    }
                }
            }
            None => {
                for c in 0..self.k {
                    if stats.zero_order[c] != 0.0 {
                        let tc = self.scaled_block(c, |c| stats.zero_order[c]);
                        l.gemm_tr(1.0, &tc, &tc, 1.0);
                    }
                }
            }
        }
        l
    }

    /// `Tᵗ Σ⁻¹ F`.
    pub fn linear_term(&self, stats: &BaumWelchStats) -> DVector<f64> {
        let f = DVector::from_iterator(
            stats.first_order.len(),
            stats.first_order.iter().zip(&self.inv_sigma).map(|(f, s)| f * s),
        );
        self.t.tr_mul(&f)
    }

    pub fn posterior(&self, stats: &BaumWelchStats) -> Result<FactorPosterior> {
        self.check_stats(stats)?;
        let precision = self.precision(stats);
        let chol = Cholesky::new(precision.clone())
            .ok_or_else(|| Error::Internal("posterior precision is not positive definite".into()))?;
        let mean = chol.solve(&self.linear_term(stats));
        Ok(FactorPosterior { mean, precision, chol })
    }

    pub fn extract(&self, stats: &BaumWelchStats) -> Result<IVector> {
        Ok(IVector(self.posterior(stats)?.mean.iter().copied().collect()))
    }

    /// T-dependent part of the utterance marginal log-likelihood,
    /// `½ bᵗ L⁻¹ b - ½ ln|L|`.
    pub fn utterance_objective(&self, stats: &BaumWelchStats) -> Result<f64> {
        let p = self.posterior(stats)?;
        Ok(0.5 * self.linear_term(stats).dot(&p.mean) - 0.5 * p.log_det_precision())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new(Vec::new());
        let write = |e: &mut Encoder<Vec<u8>>| -> Result<()> {
            e.magic(MAGIC, VERSION)?;
            e.str(&self.ubm_fingerprint)?;
            e.usize(self.k)?;
            e.usize(self.dim)?;
            e.usize(self.rank())?;
            for i in 0..self.t.nrows() {
                for j in 0..self.t.ncols() {
                    e.f64(self.t[(i, j)])?;
                }
            }
            Ok(())
        };
        write(&mut e).expect("in-memory write");
        e.finish()
    }

    /// Loads a model; `ubm` must be the one it was trained against.
    pub fn from_bytes(bytes: &[u8], ubm: &GmmModel) -> Result<Self> {
        let mut d = Decoder::new(bytes);
        d.magic(MAGIC, VERSION)?;
        let fingerprint = d.str()?;
        let (k, dim, rank) = (d.usize()?, d.usize()?, d.usize()?);
        if fingerprint != ubm.fingerprint() {
            return Err(Error::Consistency("T-matrix file references a different UBM".into()));
        }
        if k != ubm.k() || dim != ubm.dim() {
            return Err(Error::Consistency("T-matrix shape disagrees with the UBM".into()));
        }
        let values = d.f64s(k * dim * rank)?;
        Self::new(DMatrix::from_row_slice(k * dim, rank, &values), ubm)
    }
}

pub fn extract_ivector(model: &TotalVariabilityModel, stats: &BaumWelchStats) -> Result<IVector> {
    model.extract(stats)
}

/// Trains T by EM and returns it with the per-iteration average objective
/// (entry `i` evaluated before the `i`-th M-step, the last after training).
pub fn train_t_matrix_traced(
    stats: &[BaumWelchStats],
    ubm: &GmmModel,
    opts: &IvectorOptions,
) -> Result<(TotalVariabilityModel, Vec<f64>)> {
    let (k, d, r) = (ubm.k(), ubm.dim(), opts.rank);
    if r == 0 || r >= k * d {
        return Err(Error::Config(format!("i-vector rank {r} must be in 1..{}", k * d)));
    }
    if stats.is_empty() {
        return Err(Error::Training("no utterances to train the T matrix".into()));
    }
    if stats.len() < r {
        log::warn!("T matrix: {} utterances for rank {r}", stats.len());
    }
    let mean_var = ubm.variance_supervector().iter().sum::<f64>() / (k * d) as f64;
    let normal = Normal::new(0.0, 0.1 * mean_var.sqrt())
        .map_err(|e| Error::Internal(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init = DMatrix::from_fn(k * d, r, |_, _| normal.sample(&mut rng));
    train_t_matrix_from(init, stats, ubm, opts.iters)
}

/// EM from a given initial T (a zero T is a fixed point).
pub fn train_t_matrix_from(
    init: DMatrix<f64>,
    stats: &[BaumWelchStats],
    ubm: &GmmModel,
    iters: usize,
) -> Result<(TotalVariabilityModel, Vec<f64>)> {
    let mut model = TotalVariabilityModel::new(init, ubm)?;
    let (k, d, r) = (model.k, model.dim, model.rank());
    for s in stats {
        model.check_stats(s)?;
    }
    let mut trace = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let posts: Vec<(FactorPosterior, f64)> = stats
            .par_iter()
            .map(|s| {
                let p = model.posterior(s)?;
                let obj = 0.5 * model.linear_term(s).dot(&p.mean) - 0.5 * p.log_det_precision();
                Ok((p, obj))
            })
            .collect::<Result<_>>()?;
        trace.push(posts.iter().map(|(_, o)| o).sum::<f64>() / stats.len() as f64);

        // second moments E[w wᵗ] per utterance
        let moments: Vec<DMatrix<f64>> = posts
            .par_iter()
            .map(|(p, _)| p.covariance() + &p.mean * p.mean.transpose())
            .collect();
        let mut c_acc = DMatrix::<f64>::zeros(k * d, r);
        for (s, (p, _)) in stats.iter().zip(&posts) {
            let f = DVector::from_column_slice(&s.first_order);
            c_acc.ger(1.0, &f, &p.mean, 1.0);
        }
        let new_blocks: Vec<DMatrix<f64>> = (0..k)
            .into_par_iter()
            .map(|c| {
                let mut a = DMatrix::<f64>::zeros(r, r);
                for (s, m) in stats.iter().zip(&moments) {
                    let n = s.zero_order[c];
                    if n != 0.0 {
                        a.zip_apply(m, |x, v| *x += n * v);
                    }
                }
                let cc = c_acc.rows(c * d, d).transpose();
                match Cholesky::new(a) {
                    Some(ch) => Ok(ch.solve(&cc).transpose()),
                    None => Err(Error::Training(format!(
                        "T-matrix M-step: component {c} accumulator is singular"
                    ))),
                }
            })
            .collect::<Result<_>>()?;
        for (c, block) in new_blocks.into_iter().enumerate() {
            model.t.rows_mut(c * d, d).copy_from(&block);
        }
        model.refresh_blocks();
    }
    let final_obj: f64 = stats
        .par_iter()
        .map(|s| model.utterance_objective(s))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum();
    trace.push(final_obj / stats.len() as f64);
    Ok((model, trace))
}

pub fn train_t_matrix(
    stats: &[BaumWelchStats],
    ubm: &GmmModel,
    opts: &IvectorOptions,
) -> Result<TotalVariabilityModel> {
    Ok(train_t_matrix_traced(stats, ubm, opts)?.0)
}
