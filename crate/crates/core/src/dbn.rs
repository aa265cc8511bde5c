//! Deep belief networks: greedily pretrained RBM stacks with a softmax head.
//!
//! The first layer is Gaussian-binary and reads standardized spectra; the
//! rest are binary-binary and read the hidden probabilities of the layer
//! below. Pretraining never sees labels ([`UnlabeledFeatures`] carries none).
//! Fine-tuning treats the stack as a sigmoid network, adds a softmax head and
//! minimizes mean cross-entropy by mini-batch gradient descent.
//!
//! Inference is a deterministic mean-field pass, `O(L × D)` for fixed widths.
//!
//! # Model file
//!
//! All integers are little-endian `u64` unless noted, floats are
//! little-endian `f64`:
//!
//! ```text
//! magic          8 bytes  "DBNMODEL"
//! version        u32      1
//! input_dim
//! depth D
//! widths         D values
//! classes M
//! labels         M × (u32 byte length, UTF-8 bytes)
//! has_head       u8
//! layers         D × (kind u8, visible, hidden, W row-major, b, c)
//! head           if has_head: W (top × M) row-major, bias (M)
//! has_scaler     u8
//! scaler         if has_scaler: mean (input_dim), scale (input_dim)
//! ```

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::Standardizer;
use crate::rbm::{read_exact, read_f64s, read_u64, train_rbm, RbmKind, RbmLayer, TrainConfig};
use crate::{derive_seed, Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"DBNMODEL";
pub const MODEL_VERSION: u32 = 1;

/// Seed stream used for weight initialization, distinct from training.
const INIT_STREAM: u64 = 0x1A17;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    /// `top hidden × M`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl SoftmaxHead {
    pub fn zeros(inputs: usize, classes: usize) -> Self {
        Self {
            weights: Array2::zeros((inputs, classes)),
            bias: Array1::zeros(classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbnModel {
    pub layers: Vec<RbmLayer>,
    pub head: Option<SoftmaxHead>,
    pub class_labels: Vec<String>,
    /// Input normalization fitted at training time. Stored with the model;
    /// [`DbnModel::forward`] and friends expect inputs it has already been
    /// applied to (see [`DbnModel::standardize`]).
    pub standardizer: Option<Standardizer>,
}

/// Features with no labels attached, the only input pretraining accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledFeatures(Array2<f64>);

impl UnlabeledFeatures {
    pub fn new(rows: Array2<f64>) -> Self {
        Self(rows)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Ok(Self(rows_to_matrix(rows)?))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

/// Stacks equally long rows into a matrix.
pub fn rows_to_matrix<R: AsRef<[f64]>>(rows: &[R]) -> Result<Array2<f64>> {
    let dim = rows.first().map_or(0, |r| r.as_ref().len());
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        let r = r.as_ref();
        if r.len() != dim {
            return Err(Error::dim(dim, r.len(), "feature row"));
        }
        flat.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((rows.len(), dim), flat).expect("shape matches"))
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl DbnModel {
    /// Stack with `W ~ N(0, 0.01²)` and zero biases, as pretraining would
    /// start from. Used for discriminative-only training.
    pub fn random(input_dim: usize, layer_dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(input_dim, layer_dims)?;
        let mut layers = Vec::with_capacity(layer_dims.len());
        let mut visible = input_dim;
        for (i, &hidden) in layer_dims.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, i as u64), INIT_STREAM));
            layers.push(RbmLayer::random(layer_kind(i), visible, hidden, &mut rng));
            visible = hidden;
        }
        Ok(Self {
            layers,
            head: None,
            class_labels: Vec::new(),
            standardizer: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, RbmLayer::visible_dim)
    }

    /// Number of hidden layers `D`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(RbmLayer::hidden_dim).collect()
    }

    pub fn top_dim(&self) -> usize {
        self.layers.last().map_or(0, RbmLayer::hidden_dim)
    }

    pub fn classes(&self) -> usize {
        self.class_labels.len()
    }

    /// Attaches a zero softmax head (uniform initial posterior).
    pub fn init_head(&mut self, class_labels: Vec<String>) -> Result<()> {
        if class_labels.is_empty() {
            return Err(Error::Invalid("a softmax head needs at least one class".into()));
        }
        self.head = Some(SoftmaxHead::zeros(self.top_dim(), class_labels.len()));
        self.class_labels = class_labels;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Invalid("a deep belief network needs at least one layer".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.kind != layer_kind(i) {
                return Err(Error::Invalid(format!(
                    "layer {i} must be {:?}, found {:?}",
                    layer_kind(i),
                    layer.kind
                )));
            }
            if i > 0 && layer.visible_dim() != self.layers[i - 1].hidden_dim() {
                return Err(Error::dim(
                    self.layers[i - 1].hidden_dim(),
                    layer.visible_dim(),
                    "stacked layer input",
                ));
            }
        }
        if let Some(head) = &self.head {
            if head.weights.nrows() != self.top_dim() {
                return Err(Error::dim(self.top_dim(), head.weights.nrows(), "softmax head input"));
            }
            if head.weights.ncols() != self.classes() || head.bias.len() != self.classes() {
                return Err(Error::dim(self.classes(), head.weights.ncols(), "softmax head classes"));
            }
        }
        if let Some(s) = &self.standardizer {
            if s.dim() != self.input_dim() {
                return Err(Error::dim(self.input_dim(), s.dim(), "stored standardizer"));
            }
        }
        Ok(())
    }

    /// Applies the stored standardizer, if any.
    pub fn standardize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        match &self.standardizer {
            Some(s) => s.apply(raw),
            None => Ok(raw.to_vec()),
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::dim(self.input_dim(), len, "model input length"));
        }
        Ok(())
    }

    /// Hidden probabilities of every layer for one input.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Vec<Array1<f64>>> {
        self.check_input(x.len())?;
        let mut out: Vec<Array1<f64>> = Vec::with_capacity(self.depth());
        for layer in &self.layers {
            let input = out.last().map_or(x, |a| a.view());
            let a = layer.hidden_conditional(input)?;
            out.push(a);
        }
        Ok(out)
    }

    /// Hidden probabilities of every layer for a batch of inputs.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(x.ncols())?;
        let mut out: Vec<Array2<f64>> = Vec::with_capacity(self.depth());
        for layer in &self.layers {
            let input = out.last().map_or(x, |a| a.view());
            let a = layer.hidden_probs(input)?;
            out.push(a);
        }
        Ok(out)
    }

    fn head(&self) -> Result<&SoftmaxHead> {
        self.head
            .as_ref()
            .ok_or_else(|| Error::Invalid("softmax head is not initialized".into()))
    }

    /// `P(a_i | x)` for one input.
    pub fn posterior(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let x2 = x.insert_axis(Axis(0));
        Ok(self.posterior_batch(x2)?.row(0).to_owned())
    }

    /// Row-wise posteriors.
    pub fn posterior_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let head = self.head()?;
        let acts = self.forward_batch(x)?;
        let top = acts.last().expect("at least one layer");
        let mut logits = top.dot(&head.weights);
        logits += &head.bias;
        softmax_rows(&mut logits);
        Ok(logits)
    }

    /// Most probable class index (0-based); ties go to the lowest index.
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<usize> {
        Ok(argmax(self.posterior(x)?.view()))
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let p = self.posterior_batch(x)?;
        Ok(p.rows().into_iter().map(argmax).collect())
    }
}

fn layer_kind(index: usize) -> RbmKind {
    if index == 0 {
        RbmKind::GaussianBinary
    } else {
        RbmKind::BinaryBinary
    }
}

fn check_dims(input_dim: usize, layer_dims: &[usize]) -> Result<()> {
    if layer_dims.is_empty() {
        return Err(Error::Config("at least one hidden layer is required".into()));
    }
    if input_dim == 0 || layer_dims.contains(&0) {
        return Err(Error::Config("layer widths must be positive".into()));
    }
    Ok(())
}

/// Per-layer trainer settings; layer `i > 0` uses `rest`.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub first: TrainConfig,
    pub rest: TrainConfig,
    /// Master seed; each layer trains with `derive_seed(seed, i)`.
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            first: TrainConfig::grbm_default(),
            rest: TrainConfig::brbm_default(),
            seed: 0,
        }
    }
}

impl PretrainConfig {
    /// Effective trainer settings for layer `index`.
    pub fn layer_config(&self, index: usize) -> TrainConfig {
        let base = if index == 0 { &self.first } else { &self.rest };
        TrainConfig {
            seed: derive_seed(self.seed, index as u64),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    /// Stack without a head.
    pub model: DbnModel,
    /// Reconstruction-error history of every layer.
    pub histories: Vec<Vec<f64>>,
}

/// Greedy layer-wise pretraining: layer 1 on the features, each further
/// layer on the hidden probabilities of the frozen layer below.
pub fn pretrain_greedy(
    features: &UnlabeledFeatures,
    layer_dims: &[usize],
    cfg: &PretrainConfig,
) -> Result<Pretrained> {
    let data = features.view();
    check_dims(data.ncols(), layer_dims)?;
    let init = DbnModel::random(data.ncols(), layer_dims, cfg.seed)?;
    let mut layers = Vec::with_capacity(layer_dims.len());
    let mut histories = Vec::with_capacity(layer_dims.len());
    let mut input: Option<Array2<f64>> = None;
    for (i, layer) in init.layers.into_iter().enumerate() {
        let view = input.as_ref().map_or(data, |a| a.view());
        let trained = train_rbm(view, layer, &cfg.layer_config(i))?;
        if i + 1 < layer_dims.len() {
            input = Some(trained.layer.hidden_probs(view)?);
        }
        layers.push(trained.layer);
        histories.push(trained.reconstruction_errors);
    }
    Ok(Pretrained {
        model: DbnModel {
            layers,
            head: None,
            class_labels: Vec::new(),
            standardizer: None,
        },
        histories,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once the epoch loss has not improved for this many epochs.
    pub patience: Option<usize>,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 1000,
            batch_size: 75,
            seed: 0,
            patience: None,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "fine-tuning learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config("fine-tuning epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Gradient of the mean cross-entropy, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct DbnGradient {
    /// `(weights, hidden bias)` per layer.
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
    pub head_weights: Array2<f64>,
    pub head_bias: Array1<f64>,
}

fn check_labels(model: &DbnModel, x: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    if x.nrows() != labels.len() {
        return Err(Error::dim(x.nrows(), labels.len(), "label count"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= model.classes()) {
        return Err(Error::Invalid(format!(
            "label {bad} outside the {} model classes",
            model.classes()
        )));
    }
    Ok(())
}

/// Mean of `−log P(label | x)`.
pub fn cross_entropy(model: &DbnModel, x: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(model, x, labels)?;
    let p = model.posterior_batch(x)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -p[[i, l]].ln())
        .sum::<f64>()
        / labels.len().max(1) as f64)
}

/// Backpropagated loss and gradient for one batch. Also returns how many
/// rows were classified correctly by the pre-update parameters.
pub fn loss_and_gradient(
    model: &DbnModel,
    x: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, DbnGradient, usize)> {
    check_labels(model, x, labels)?;
    let head = model.head()?;
    let n = x.nrows() as f64;
    let acts = model.forward_batch(x)?;
    let top = acts.last().expect("at least one layer");
    let mut probs = top.dot(&head.weights);
    probs += &head.bias;
    softmax_rows(&mut probs);

    let mut loss = 0.0;
    let mut correct = 0;
    let mut delta = probs;
    for (i, &l) in labels.iter().enumerate() {
        let row = delta.row(i);
        loss -= row[l].ln();
        if argmax(row) == l {
            correct += 1;
        }
        delta[[i, l]] -= 1.0;
    }
    delta /= n;
    loss /= n;

    let head_weights = top.t().dot(&delta);
    let head_bias = delta.sum_axis(Axis(0));
    let mut back = delta.dot(&head.weights.t());
    let mut layer_grads = Vec::with_capacity(model.depth());
    for i in (0..model.depth()).rev() {
        let a = &acts[i];
        back *= &a.mapv(|v| v * (1.0 - v));
        let input = if i == 0 { x } else { acts[i - 1].view() };
        let gw = input.t().dot(&back);
        let gc = back.sum_axis(Axis(0));
        if i > 0 {
            back = back.dot(&model.layers[i].weights.t());
        }
        layer_grads.push((gw, gc));
    }
    layer_grads.reverse();
    Ok((
        loss,
        DbnGradient {
            layers: layer_grads,
            head_weights,
            head_bias,
        },
        correct,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean cross-entropy over the epoch's batches, before each update.
    pub loss: f64,
    /// Fraction of rows classified correctly before each update.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FineTuned {
    pub model: DbnModel,
    pub history: Vec<EpochStats>,
    /// Set when early stopping ended training before `epochs`.
    pub stopped_early: bool,
}

/// Supervised fine-tuning of every layer and the head.
pub fn fine_tune(
    model: DbnModel,
    x: ArrayView2<f64>,
    labels: &[usize],
    cfg: &FineTuneConfig,
) -> Result<FineTuned> {
    cfg.validate()?;
    model.validate()?;
    model.head()?;
    check_labels(&model, x, labels)?;
    model.check_input(x.ncols())?;
    if labels.is_empty() {
        return Err(Error::Invalid("fine-tuning needs labeled rows".into()));
    }
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_no, idx) in order.chunks(cfg.batch_size).enumerate() {
            let bx = x.select(Axis(0), idx);
            let by: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (loss, grad, hits) = loss_and_gradient(&model, bx.view(), &by)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                    reason: format!("cross-entropy is {loss}"),
                });
            }
            loss_sum += loss * idx.len() as f64;
            correct += hits;
            apply_gradient(&mut model, &grad, cfg.learning_rate);
        }
        let stats = EpochStats {
            loss: loss_sum / labels.len() as f64,
            accuracy: correct as f64 / labels.len() as f64,
        };
        history.push(stats);
        if let Some(patience) = cfg.patience {
            if stats.loss < best {
                best = stats.loss;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(FineTuned {
        model,
        history,
        stopped_early,
    })
}

fn apply_gradient(model: &mut DbnModel, grad: &DbnGradient, rate: f64) {
    for (layer, (gw, gc)) in model.layers.iter_mut().zip(&grad.layers) {
        layer.weights.scaled_add(-rate, gw);
        layer.hidden_bias.scaled_add(-rate, gc);
    }
    let head = model.head.as_mut().expect("head checked before training");
    head.weights.scaled_add(-rate, &grad.head_weights);
    head.bias.scaled_add(-rate, &grad.head_bias);
}

/// Fraction of rows predicted correctly.
pub fn hit_rate(model: &DbnModel, x: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(model, x, labels)?;
    if labels.is_empty() {
        return Err(Error::Invalid("accuracy of an empty set".into()));
    }
    let pred = model.predict_batch(x)?;
    Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

/// Labeled rows for training or evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub x: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
}

/// Trains a full model: optional pretraining on `unlabeled`, then
/// fine-tuning on `train`.
pub fn train_dbn(
    unlabeled: &UnlabeledFeatures,
    train: LabeledSet<'_>,
    class_labels: Vec<String>,
    layer_dims: &[usize],
    pretrain: Option<&PretrainConfig>,
    finetune: &FineTuneConfig,
    init_seed: u64,
) -> Result<FineTuned> {
    let mut model = match pretrain {
        Some(cfg) => pretrain_greedy(unlabeled, layer_dims, cfg)?.model,
        None => DbnModel::random(train.x.ncols(), layer_dims, init_seed)?,
    };
    model.init_head(class_labels)?;
    fine_tune(model, train.x, train.labels, finetune)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub depth: usize,
    pub width: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub pretrain: Option<PretrainConfig>,
    pub finetune: FineTuneConfig,
    pub seed: u64,
}

/// Trains and scores one sweep cell. `index` is the cell's position in the
/// depth-major grid and fixes its seeds, so cells can run in any order.
pub fn sweep_cell(
    train: LabeledSet<'_>,
    test: LabeledSet<'_>,
    class_labels: &[String],
    depth: usize,
    width: usize,
    index: usize,
    cfg: &SweepConfig,
) -> Result<SweepCell> {
    let seed = derive_seed(cfg.seed, index as u64);
    let pretrain = cfg.pretrain.clone().map(|p| PretrainConfig { seed, ..p });
    let finetune = FineTuneConfig {
        seed: derive_seed(seed, 1),
        ..cfg.finetune.clone()
    };
    let unlabeled = UnlabeledFeatures::new(train.x.to_owned());
    let tuned = train_dbn(
        &unlabeled,
        train,
        class_labels.to_vec(),
        &vec![width; depth],
        pretrain.as_ref(),
        &finetune,
        seed,
    )?;
    Ok(SweepCell {
        depth,
        width,
        train_accuracy: hit_rate(&tuned.model, train.x, train.labels)?,
        test_accuracy: hit_rate(&tuned.model, test.x, test.labels)?,
        seed,
    })
}

/// One model per `(depth, width)` cell, depth-major, all on the same split.
pub fn evaluate_structure_sweep(
    train: LabeledSet<'_>,
    test: LabeledSet<'_>,
    class_labels: &[String],
    depth_grid: &[usize],
    width_grid: &[usize],
    cfg: &SweepConfig,
) -> Result<Vec<SweepCell>> {
    if depth_grid.is_empty() || width_grid.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    let mut cells = Vec::with_capacity(depth_grid.len() * width_grid.len());
    for &depth in depth_grid {
        for &width in width_grid {
            cells.push(sweep_cell(train, test, class_labels, depth, width, cells.len(), cfg)?);
        }
    }
    Ok(cells)
}

fn write_f64s(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a model into its file representation.
pub fn encode_model(model: &DbnModel) -> Result<Vec<u8>> {
    model.validate()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.input_dim() as u64).to_le_bytes());
    buf.extend_from_slice(&(model.depth() as u64).to_le_bytes());
    for w in model.widths() {
        buf.extend_from_slice(&(w as u64).to_le_bytes());
    }
    buf.extend_from_slice(&(model.classes() as u64).to_le_bytes());
    for label in &model.class_labels {
        buf.extend_from_slice(&(label.len() as u32).to_le_bytes());
        buf.extend_from_slice(label.as_bytes());
    }
    buf.push(model.head.is_some() as u8);
    for layer in &model.layers {
        layer.write_to(&mut buf).expect("writing to memory");
    }
    if let Some(head) = &model.head {
        write_f64s(&mut buf, head.weights.iter().copied());
        write_f64s(&mut buf, head.bias.iter().copied());
    }
    match &model.standardizer {
        Some(s) => {
            buf.push(1);
            write_f64s(&mut buf, s.mean().iter().copied());
            write_f64s(&mut buf, s.scale().iter().copied());
        }
        None => buf.push(0),
    }
    Ok(buf)
}

pub fn decode_model(bytes: &[u8]) -> Result<DbnModel> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format("bad magic header".into()));
    }
    let mut version = [0u8; 4];
    read_exact(&mut r, &mut version)?;
    let version = u32::from_le_bytes(version);
    if version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "schema version {version} is not supported (expected {MODEL_VERSION})"
        )));
    }
    let input_dim = read_u64(&mut r)? as usize;
    let depth = read_u64(&mut r)? as usize;
    if depth == 0 || depth > 4096 {
        return Err(Error::Format(format!("implausible depth {depth}")));
    }
    let mut widths = Vec::with_capacity(depth);
    for _ in 0..depth {
        widths.push(read_u64(&mut r)? as usize);
    }
    let classes = read_u64(&mut r)? as usize;
    if classes > 1 << 16 {
        return Err(Error::Format(format!("implausible class count {classes}")));
    }
    let mut class_labels = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut len = [0u8; 4];
        read_exact(&mut r, &mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        if len > r.len() {
            return Err(Error::Format("truncated file".into()));
        }
        let mut bytes = vec![0u8; len];
        read_exact(&mut r, &mut bytes)?;
        class_labels.push(
            String::from_utf8(bytes).map_err(|_| Error::Format("class label is not UTF-8".into()))?,
        );
    }
    let mut flag = [0u8; 1];
    read_exact(&mut r, &mut flag)?;
    let has_head = flag[0] == 1;
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        layers.push(RbmLayer::read_from(&mut r)?);
    }
    let top = *widths.last().expect("depth checked");
    let head = if has_head {
        let w = read_f64s(&mut r, top * classes)?;
        let b = read_f64s(&mut r, classes)?;
        Some(SoftmaxHead {
            weights: Array2::from_shape_vec((top, classes), w).expect("shape matches"),
            bias: Array1::from(b),
        })
    } else {
        None
    };
    read_exact(&mut r, &mut flag)?;
    let standardizer = if flag[0] == 1 {
        let mean = read_f64s(&mut r, input_dim)?;
        let scale = read_f64s(&mut r, input_dim)?;
        Some(Standardizer::from_parts(mean, scale)?)
    } else {
        None
    };
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", r.len())));
    }
    let model = DbnModel {
        layers,
        head,
        class_labels,
        standardizer,
    };
    if model.input_dim() != input_dim || model.widths() != widths {
        return Err(Error::Format("header dimensions disagree with layer blocks".into()));
    }
    model.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(model)
}

pub fn save_model(model: &DbnModel, path: &Path) -> Result<()> {
    let bytes = encode_model(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DbnModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
