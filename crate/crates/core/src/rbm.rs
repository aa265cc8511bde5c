//! Restricted Boltzmann machines with binary hidden units.
//!
//! Two visible-unit types are supported. Gaussian-binary layers (unit
//! variance, for standardized real inputs) have energy
//!
//! ```text
//! E(v, h) = ½ (v − b)ᵀ(v − b) − cᵀh − vᵀWh
//! ```
//!
//! and binary-binary layers have `E(v, h) = −bᵀv − cᵀh − vᵀWh`. In both cases
//! `P(h_j = 1 | v) = σ(c_j + vᵀW_{·j})`.
//!
//! Training uses contrastive divergence. The positive phase drives the
//! reconstruction with sampled binary hidden states and accumulates hidden
//! probabilities; the negative phase uses visible means (or samples, see
//! [`Reconstruction`]) and hidden probabilities.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::{sigmoid, Error, Result};

/// Parameters beyond this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Largest `visible + hidden` the exact enumeration accepts.
pub const MAX_ENUMERATION_UNITS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbmKind {
    GaussianBinary,
    BinaryBinary,
}

impl RbmKind {
    fn tag(self) -> u8 {
        match self {
            RbmKind::GaussianBinary => 0,
            RbmKind::BinaryBinary => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(RbmKind::GaussianBinary),
            1 => Ok(RbmKind::BinaryBinary),
            t => Err(Error::Format(format!("unknown layer kind tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmLayer {
    pub kind: RbmKind,
    /// `visible × hidden`.
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

impl RbmLayer {
    pub fn new(
        kind: RbmKind,
        weights: Array2<f64>,
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
    ) -> Result<Self> {
        let layer = Self {
            kind,
            weights,
            visible_bias,
            hidden_bias,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn zeros(kind: RbmKind, visible: usize, hidden: usize) -> Self {
        Self {
            kind,
            weights: Array2::zeros((visible, hidden)),
            visible_bias: Array1::zeros(visible),
            hidden_bias: Array1::zeros(hidden),
        }
    }

    /// `W ~ N(0, 0.01²)`, zero biases.
    pub fn random<R: Rng + ?Sized>(kind: RbmKind, visible: usize, hidden: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        let w: Vec<f64> = (0..visible * hidden).map(|_| normal.sample(rng)).collect();
        Self {
            kind,
            weights: Array2::from_shape_vec((visible, hidden), w).expect("shape matches"),
            visible_bias: Array1::zeros(visible),
            hidden_bias: Array1::zeros(hidden),
        }
    }

    pub fn visible_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.visible_bias.len() != self.visible_dim() {
            return Err(Error::dim(self.visible_dim(), self.visible_bias.len(), "visible bias"));
        }
        if self.hidden_bias.len() != self.hidden_dim() {
            return Err(Error::dim(self.hidden_dim(), self.hidden_bias.len(), "hidden bias"));
        }
        let finite = self.weights.iter().all(|v| v.is_finite())
            && self.visible_bias.iter().all(|v| v.is_finite())
            && self.hidden_bias.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invalid("layer parameters must be finite".into()));
        }
        Ok(())
    }

    fn check_visible(&self, len: usize) -> Result<()> {
        if len != self.visible_dim() {
            return Err(Error::dim(self.visible_dim(), len, "visible vector"));
        }
        Ok(())
    }

    fn check_hidden(&self, len: usize) -> Result<()> {
        if len != self.hidden_dim() {
            return Err(Error::dim(self.hidden_dim(), len, "hidden vector"));
        }
        Ok(())
    }

    /// Energy under this layer's own kind.
    pub fn energy(&self, v: ArrayView1<f64>, h: ArrayView1<f64>) -> Result<f64> {
        self.check_visible(v.len())?;
        self.check_hidden(h.len())?;
        let interaction = v.dot(&self.weights.dot(&h));
        let hidden_term = self.hidden_bias.dot(&h);
        let visible_term = match self.kind {
            RbmKind::GaussianBinary => {
                let d = &v - &self.visible_bias;
                0.5 * d.dot(&d)
            }
            RbmKind::BinaryBinary => -self.visible_bias.dot(&v),
        };
        Ok(visible_term - hidden_term - interaction)
    }

    /// `P(h_j = 1 | v)` for every hidden unit.
    pub fn hidden_conditional(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_visible(v.len())?;
        let mut a = v.dot(&self.weights);
        a += &self.hidden_bias;
        a.mapv_inplace(sigmoid);
        Ok(a)
    }

    /// Row-wise hidden probabilities for a batch.
    pub fn hidden_probs(&self, v: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_visible(v.ncols())?;
        let mut a = v.dot(&self.weights);
        a += &self.hidden_bias;
        a.mapv_inplace(sigmoid);
        Ok(a)
    }

    /// Visible probabilities (binary) or means (Gaussian) given `h`.
    pub fn visible_conditional(&self, h: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_hidden(h.len())?;
        let mut a = self.weights.dot(&h);
        a += &self.visible_bias;
        if self.kind == RbmKind::BinaryBinary {
            a.mapv_inplace(sigmoid);
        }
        Ok(a)
    }

    pub fn visible_means(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_hidden(h.ncols())?;
        let mut a = h.dot(&self.weights.t());
        a += &self.visible_bias;
        if self.kind == RbmKind::BinaryBinary {
            a.mapv_inplace(sigmoid);
        }
        Ok(a)
    }

    fn max_abs_param(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.visible_bias.iter())
            .chain(self.hidden_bias.iter())
            .fold(0.0f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) })
    }

    /// Serialized size in bytes.
    pub fn encoded_len(&self) -> usize {
        1 + 16 + 8 * (self.weights.len() + self.visible_dim() + self.hidden_dim())
    }

    /// Writes kind, dimensions, then row-major `W`, `b`, `c` as little-endian
    /// f64.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&[self.kind.tag()])?;
        w.write_all(&(self.visible_dim() as u64).to_le_bytes())?;
        w.write_all(&(self.hidden_dim() as u64).to_le_bytes())?;
        for row in self.weights.rows() {
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for v in self.visible_bias.iter().chain(self.hidden_bias.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut tag = [0u8; 1];
        read_exact(r, &mut tag)?;
        let kind = RbmKind::from_tag(tag[0])?;
        let visible = read_u64(r)? as usize;
        let hidden = read_u64(r)? as usize;
        if visible == 0 || hidden == 0 || visible.saturating_mul(hidden) > (1 << 32) {
            return Err(Error::Format(format!("implausible layer shape {visible}x{hidden}")));
        }
        let weights = Array2::from_shape_vec((visible, hidden), read_f64s(r, visible * hidden)?)
            .expect("shape matches");
        let visible_bias = Array1::from(read_f64s(r, visible)?);
        let hidden_bias = Array1::from(read_f64s(r, hidden)?);
        Self::new(kind, weights, visible_bias, hidden_bias)
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated file".into()),
        _ => Error::Format(e.to_string()),
    })
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    read_exact(r, &mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn require_kind(layer: &RbmLayer, kind: RbmKind) -> Result<()> {
    if layer.kind != kind {
        return Err(Error::Invalid(format!(
            "expected a {kind:?} layer, got {:?}",
            layer.kind
        )));
    }
    Ok(())
}

/// `½(v−b)ᵀ(v−b) − cᵀh − vᵀWh`.
pub fn grbm_energy(v: ArrayView1<f64>, h: ArrayView1<f64>, layer: &RbmLayer) -> Result<f64> {
    require_kind(layer, RbmKind::GaussianBinary)?;
    layer.energy(v, h)
}

/// `−bᵀv − cᵀh − vᵀWh`.
pub fn brbm_energy(v: ArrayView1<f64>, h: ArrayView1<f64>, layer: &RbmLayer) -> Result<f64> {
    require_kind(layer, RbmKind::BinaryBinary)?;
    layer.energy(v, h)
}

/// How the negative-phase visible state is formed in the final Gibbs step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reconstruction {
    /// Visible probabilities (binary) or means (Gaussian).
    #[default]
    Mean,
    /// A sampled visible state. Unbiased when the data follow the model.
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Momentum from `momentum_switch_epoch` onwards.
    pub momentum: f64,
    /// Momentum for the first `momentum_switch_epoch` epochs.
    pub initial_momentum: f64,
    pub momentum_switch_epoch: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub reconstruction: Reconstruction,
}

impl TrainConfig {
    /// First-layer (Gaussian-binary) defaults.
    pub fn grbm_default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 150,
            ..Self::brbm_default()
        }
    }

    /// Defaults for stacked binary-binary layers.
    pub fn brbm_default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 75,
            batch_size: 75,
            momentum: 0.9,
            initial_momentum: 0.5,
            momentum_switch_epoch: 5,
            weight_decay: 2e-4,
            seed: 0,
            reconstruction: Reconstruction::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        for m in [self.momentum, self.initial_momentum] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::Config(format!("momentum must lie in [0, 1), got {m}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    fn momentum_at(&self, epoch: usize) -> f64 {
        if epoch < self.momentum_switch_epoch {
            self.initial_momentum
        } else {
            self.momentum
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::brbm_default()
    }
}

/// Learning-rate-scaled parameter changes from one contrastive-divergence step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDeltas {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    /// Mean squared difference between the batch and its reconstruction.
    pub reconstruction_error: f64,
}

impl ParamDeltas {
    fn all_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
            && self.visible_bias.iter().all(|v| v.is_finite())
            && self.hidden_bias.iter().all(|v| v.is_finite())
            && self.reconstruction_error.is_finite()
    }
}

/// Explicit random draws for one CD-1 step, one row per batch element.
///
/// `hidden` holds uniforms compared against hidden probabilities. `visible`
/// is only read in [`Reconstruction::Sample`] mode: uniforms for binary
/// layers, standard normals for Gaussian ones.
#[derive(Debug, Clone)]
pub struct CdNoise {
    pub hidden: Array2<f64>,
    pub visible: Option<Array2<f64>>,
}

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let v: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    Array2::from_shape_vec((rows, cols), v).expect("shape matches")
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let v: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Array2::from_shape_vec((rows, cols), v).expect("shape matches")
}

fn bernoulli(probs: &Array2<f64>, uniforms: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    Zip::from(&mut out)
        .and(probs)
        .and(uniforms)
        .for_each(|o, &p, &u| *o = if u < p { 1.0 } else { 0.0 });
    out
}

fn sample_visible(layer: &RbmLayer, means: &Array2<f64>, noise: ArrayView2<f64>) -> Array2<f64> {
    match layer.kind {
        RbmKind::BinaryBinary => bernoulli(means, noise),
        RbmKind::GaussianBinary => means + &noise,
    }
}

fn visible_noise<R: Rng + ?Sized>(layer: &RbmLayer, rows: usize, rng: &mut R) -> Array2<f64> {
    match layer.kind {
        RbmKind::BinaryBinary => uniform_matrix(rows, layer.visible_dim(), rng),
        RbmKind::GaussianBinary => normal_matrix(rows, layer.visible_dim(), rng),
    }
}

fn check_batch(batch: ArrayView2<f64>, layer: &RbmLayer) -> Result<()> {
    if batch.nrows() == 0 {
        return Err(Error::Invalid("contrastive divergence needs a non-empty batch".into()));
    }
    layer.check_visible(batch.ncols())
}

fn finish_deltas(
    batch: ArrayView2<f64>,
    pos_hidden: &Array2<f64>,
    recon: &Array2<f64>,
    recon_mean: &Array2<f64>,
    neg_hidden: &Array2<f64>,
    learning_rate: f64,
) -> Result<ParamDeltas> {
    let n = batch.nrows() as f64;
    let scale = learning_rate / n;
    let mut weights = batch.t().dot(pos_hidden);
    weights -= &recon.t().dot(neg_hidden);
    weights *= scale;
    let visible_bias = (batch.sum_axis(Axis(0)) - recon.sum_axis(Axis(0))) * scale;
    let hidden_bias = (pos_hidden.sum_axis(Axis(0)) - neg_hidden.sum_axis(Axis(0))) * scale;
    let diff = &batch - recon_mean;
    let reconstruction_error = diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64;
    let deltas = ParamDeltas {
        weights,
        visible_bias,
        hidden_bias,
        reconstruction_error,
    };
    if !deltas.all_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            batch: 0,
            reason: "non-finite contrastive divergence update".into(),
        });
    }
    Ok(deltas)
}

/// One CD-1 step with caller-supplied randomness.
pub fn cd1_update_with_noise(
    batch: ArrayView2<f64>,
    layer: &RbmLayer,
    learning_rate: f64,
    reconstruction: Reconstruction,
    noise: &CdNoise,
) -> Result<ParamDeltas> {
    check_batch(batch, layer)?;
    if noise.hidden.dim() != (batch.nrows(), layer.hidden_dim()) {
        return Err(Error::Invalid("hidden noise shape does not match the batch".into()));
    }
    let pos_hidden = layer.hidden_probs(batch)?;
    let h_sample = bernoulli(&pos_hidden, noise.hidden.view());
    let recon_mean = layer.visible_means(h_sample.view())?;
    let recon = match reconstruction {
        Reconstruction::Mean => recon_mean.clone(),
        Reconstruction::Sample => {
            let vn = noise.visible.as_ref().ok_or_else(|| {
                Error::Invalid("sampled reconstruction needs visible noise".into())
            })?;
            if vn.dim() != batch.dim() {
                return Err(Error::Invalid("visible noise shape does not match the batch".into()));
            }
            sample_visible(layer, &recon_mean, vn.view())
        }
    };
    let neg_hidden = layer.hidden_probs(recon.view())?;
    finish_deltas(batch, &pos_hidden, &recon, &recon_mean, &neg_hidden, learning_rate)
}

/// One CD-1 step, drawing randomness from `rng`.
pub fn cd1_update<R: Rng + ?Sized>(
    batch: ArrayView2<f64>,
    layer: &RbmLayer,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ParamDeltas> {
    cd_update(batch, layer, 1, cfg.learning_rate, cfg.reconstruction, rng)
}

/// CD-k: `steps` full Gibbs sweeps started from the data.
///
/// Intermediate visible and hidden states are sampled. The final
/// reconstruction follows `reconstruction` and the final hidden statistics
/// are probabilities.
pub fn cd_update<R: Rng + ?Sized>(
    batch: ArrayView2<f64>,
    layer: &RbmLayer,
    steps: usize,
    learning_rate: f64,
    reconstruction: Reconstruction,
    rng: &mut R,
) -> Result<ParamDeltas> {
    check_batch(batch, layer)?;
    if steps < 1 {
        return Err(Error::Config("contrastive divergence needs at least one Gibbs step".into()));
    }
    let rows = batch.nrows();
    let pos_hidden = layer.hidden_probs(batch)?;
    let mut h_sample = bernoulli(&pos_hidden, uniform_matrix(rows, layer.hidden_dim(), rng).view());
    for step in 1..=steps {
        let recon_mean = layer.visible_means(h_sample.view())?;
        let last = step == steps;
        let recon = if last && reconstruction == Reconstruction::Mean {
            recon_mean.clone()
        } else {
            let noise = visible_noise(layer, rows, rng);
            sample_visible(layer, &recon_mean, noise.view())
        };
        let neg_hidden = layer.hidden_probs(recon.view())?;
        if last {
            return finish_deltas(batch, &pos_hidden, &recon, &recon_mean, &neg_hidden, learning_rate);
        }
        h_sample = bernoulli(&neg_hidden, uniform_matrix(rows, layer.hidden_dim(), rng).view());
    }
    unreachable!("loop returns on the last step")
}

/// Deterministic mean-field reconstruction error, `‖v − E[v | P(h|v)]‖²`
/// averaged over elements.
pub fn reconstruction_error(data: ArrayView2<f64>, layer: &RbmLayer) -> Result<f64> {
    let h = layer.hidden_probs(data)?;
    let v = layer.visible_means(h.view())?;
    let diff = &data - &v;
    Ok(diff.iter().map(|d| d * d).sum::<f64>() / diff.len().max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct TrainedRbm {
    pub layer: RbmLayer,
    /// Mean per-batch reconstruction error of every epoch.
    pub reconstruction_errors: Vec<f64>,
}

/// Mini-batch CD-1 training with momentum and L2 weight decay.
///
/// Rows are reshuffled every epoch from a generator seeded with `cfg.seed`,
/// so identical inputs give bit-identical layers.
pub fn train_rbm(data: ArrayView2<f64>, init: RbmLayer, cfg: &TrainConfig) -> Result<TrainedRbm> {
    cfg.validate()?;
    init.validate()?;
    if data.nrows() == 0 {
        return Err(Error::Invalid("cannot train on an empty data set".into()));
    }
    init.check_visible(data.ncols())?;
    if init.kind == RbmKind::BinaryBinary && data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Invalid("binary-binary layers need inputs in [0, 1]".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("training data contains non-finite values".into()));
    }

    let mut layer = init;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vel_w = Array2::<f64>::zeros(layer.weights.raw_dim());
    let mut vel_b = Array1::<f64>::zeros(layer.visible_dim());
    let mut vel_c = Array1::<f64>::zeros(layer.hidden_dim());
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let momentum = cfg.momentum_at(epoch);
        let mut err_sum = 0.0;
        let mut batches = 0usize;
        for (batch_no, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.select(Axis(0), idx);
            let d = cd1_update(batch.view(), &layer, cfg, &mut rng).map_err(|e| match e {
                Error::Diverged { reason, .. } => Error::Diverged {
                    epoch,
                    batch: batch_no,
                    reason,
                },
                other => other,
            })?;
            vel_w *= momentum;
            vel_w += &d.weights;
            vel_w.scaled_add(-cfg.learning_rate * cfg.weight_decay, &layer.weights);
            vel_b *= momentum;
            vel_b += &d.visible_bias;
            vel_c *= momentum;
            vel_c += &d.hidden_bias;
            layer.weights += &vel_w;
            layer.visible_bias += &vel_b;
            layer.hidden_bias += &vel_c;
            err_sum += d.reconstruction_error;
            batches += 1;
            let max = layer.max_abs_param();
            if !(max <= DIVERGENCE_LIMIT) {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                    reason: format!("parameter magnitude {max:e} exceeds {DIVERGENCE_LIMIT:e}"),
                });
            }
        }
        let mean_err = err_sum / batches as f64;
        if !mean_err.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: batches,
                reason: "reconstruction error is not finite".into(),
            });
        }
        history.push(mean_err);
    }
    Ok(TrainedRbm {
        layer,
        reconstruction_errors: history,
    })
}

/// Gradient of the mean log-likelihood with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

fn check_enumerable(data: ArrayView2<f64>, layer: &RbmLayer) -> Result<()> {
    require_kind(layer, RbmKind::BinaryBinary)?;
    let units = layer.visible_dim() + layer.hidden_dim();
    if units > MAX_ENUMERATION_UNITS {
        return Err(Error::Invalid(format!(
            "exact enumeration supports at most {MAX_ENUMERATION_UNITS} units, model has {units}"
        )));
    }
    if data.nrows() == 0 {
        return Err(Error::Invalid("exact likelihood needs data".into()));
    }
    layer.check_visible(data.ncols())?;
    if data.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::Invalid("exact likelihood needs binary data".into()));
    }
    Ok(())
}

fn bits(code: usize, len: usize) -> Array1<f64> {
    Array1::from_iter((0..len).map(|i| ((code >> i) & 1) as f64))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Every joint state `(v, h)` with its negative energy.
fn joint_states(layer: &RbmLayer) -> Vec<(Array1<f64>, Array1<f64>, f64)> {
    let (nv, nh) = (layer.visible_dim(), layer.hidden_dim());
    let mut out = Vec::with_capacity(1 << (nv + nh));
    for vc in 0..1usize << nv {
        let v = bits(vc, nv);
        for hc in 0..1usize << nh {
            let h = bits(hc, nh);
            let e = layer.energy(v.view(), h.view()).expect("dims match");
            out.push((v.clone(), h, -e));
        }
    }
    out
}

/// Mean log-likelihood of binary data, with the partition function summed
/// over all `2^(visible + hidden)` joint states.
pub fn exact_log_likelihood(data: ArrayView2<f64>, layer: &RbmLayer) -> Result<f64> {
    check_enumerable(data, layer)?;
    let states = joint_states(layer);
    let log_z = log_sum_exp(&states.iter().map(|s| s.2).collect::<Vec<_>>());
    let nh = layer.hidden_dim();
    let mut total = 0.0;
    for v in data.rows() {
        let neg_e: Vec<f64> = (0..1usize << nh)
            .map(|hc| -layer.energy(v, bits(hc, nh).view()).expect("dims match"))
            .collect();
        total += log_sum_exp(&neg_e) - log_z;
    }
    Ok(total / data.nrows() as f64)
}

/// Exact gradient of [`exact_log_likelihood`]: data expectations under
/// `P(h | v)` minus model expectations under `P(v, h)`, both by enumeration.
pub fn exact_gradient(data: ArrayView2<f64>, layer: &RbmLayer) -> Result<ParamGradient> {
    check_enumerable(data, layer)?;
    let (nv, nh) = (layer.visible_dim(), layer.hidden_dim());
    let mut grad = ParamGradient {
        weights: Array2::zeros((nv, nh)),
        visible_bias: Array1::zeros(nv),
        hidden_bias: Array1::zeros(nh),
    };

    let states = joint_states(layer);
    let log_z = log_sum_exp(&states.iter().map(|s| s.2).collect::<Vec<_>>());
    for (v, h, neg_e) in &states {
        let p = (neg_e - log_z).exp();
        grad.weights.scaled_add(-p, &outer(v, h));
        grad.visible_bias.scaled_add(-p, v);
        grad.hidden_bias.scaled_add(-p, h);
    }

    let inv_n = 1.0 / data.nrows() as f64;
    let hidden_states: Vec<Array1<f64>> = (0..1usize << nh).map(|hc| bits(hc, nh)).collect();
    for v in data.rows() {
        let neg_e: Vec<f64> = hidden_states
            .iter()
            .map(|h| -layer.energy(v, h.view()).expect("dims match"))
            .collect();
        let log_zv = log_sum_exp(&neg_e);
        let v = v.to_owned();
        for (h, ne) in hidden_states.iter().zip(&neg_e) {
            let p = (ne - log_zv).exp() * inv_n;
            grad.weights.scaled_add(p, &outer(&v, h));
            grad.hidden_bias.scaled_add(p, h);
        }
        grad.visible_bias.scaled_add(inv_n, &v);
    }
    Ok(grad)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}
