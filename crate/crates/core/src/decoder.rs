//! BiCurNet assembly, training, evaluation and checkpoints.

use crate::features::{augment_set, trial_keys, AugmentOp, DatasetSplit, FeatureError, WindowedExample};
use crate::metrics::{mean_std, mse, pcc, MetricsError};
use crate::nn::{mse_loss, Activation, AdamState, Cam, Conv1d, Dense, Dropout, DwsConv1d, Flatten, Layer, MaxPool1d, NnError, Sequential};
use ndarray::{Array1, Array2, Array3, ArrayD, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("example shape {got:?} does not match model input {expected:?}")]
    ShapeMismatch { got: (usize, usize), expected: (usize, usize) },
    #[error("need at least {needed} trial groups, found {found}")]
    TooFewGroups { needed: usize, found: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Architecture and training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Window length `N`.
    pub n_samples: usize,
    /// Feature channels `Nc`.
    pub n_channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dropout: f64,
    pub l2: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dense_units: usize,
    pub dense_layers: usize,
    pub cam_units: usize,
    pub cam_activation: Activation,
    pub augment: BTreeSet<AugmentOp>,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_samples: 200,
            n_channels: 34,
            filters: 32,
            kernel: 5,
            stride: 1,
            dropout: 0.4,
            l2: 0.001,
            lr: 0.001,
            batch_size: 15,
            epochs: 100,
            dense_units: 8,
            dense_layers: 3,
            cam_units: 32,
            cam_activation: Activation::Sigmoid,
            augment: BTreeSet::new(),
            patience: None,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), DecoderError> {
        let bad = |m: String| Err(DecoderError::BadConfig(m));
        let positive = [
            ("n_samples", self.n_samples),
            ("n_channels", self.n_channels),
            ("filters", self.filters),
            ("kernel", self.kernel),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("dense_units", self.dense_units),
            ("cam_units", self.cam_units),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.stride != 1 {
            return bad(format!("only stride 1 is supported, got {}", self.stride));
        }
        if self.n_samples < 2 * self.kernel {
            return bad(format!("window of {} samples is shorter than twice the kernel {}", self.n_samples, self.kernel));
        }
        if self.cam_units != self.filters {
            return bad(format!("cam_units {} must equal filters {}", self.cam_units, self.filters));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.l2 >= 0.0) || !(self.lr >= 0.0) {
            return bad("l2 and lr must be non-negative".into());
        }
        Ok(())
    }

    /// Time length after the two valid convolutions and the pooling layer.
    pub fn pooled_len(&self) -> usize {
        (self.n_samples - 2 * (self.kernel - 1)) / 2
    }
}

/// Per-channel input standardisation and target scaling fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Normalizer {
    pub fn identity(n_channels: usize) -> Self {
        Self { x_mean: vec![0.0; n_channels], x_std: vec![1.0; n_channels], y_mean: 0.0, y_std: 1.0 }
    }

    pub fn fit(examples: &[WindowedExample]) -> Self {
        let c = examples[0].x.nrows();
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut count = 0usize;
        let (mut ys, mut yq, mut yn) = (0.0, 0.0, 0usize);
        for e in examples {
            for (ch, row) in e.x.axis_iter(Axis(0)).enumerate() {
                sum[ch] += row.sum();
                sq[ch] += row.iter().map(|v| v * v).sum::<f64>();
            }
            count += e.x.ncols();
            ys += e.y.sum();
            yq += e.y.iter().map(|v| v * v).sum::<f64>();
            yn += e.y.len();
        }
        let n = count as f64;
        let x_mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let x_std = sq
            .iter()
            .zip(&x_mean)
            .map(|(q, m)| {
                let v = (q / n - m * m).max(0.0).sqrt();
                if v > 1e-12 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        let y_mean = ys / yn as f64;
        let y_var = (yq / yn as f64 - y_mean * y_mean).max(0.0).sqrt();
        Self { x_mean, x_std, y_mean, y_std: if y_var > 1e-12 { y_var } else { 1.0 } }
    }

    /// `Nc × N` example to the network's `N × Nc` layout.
    fn input(&self, x: &Array2<f64>, dst: &mut ndarray::ArrayViewMut2<f64>) {
        for (ch, row) in x.axis_iter(Axis(0)).enumerate() {
            let (m, s) = (self.x_mean[ch], self.x_std[ch]);
            for (t, v) in row.iter().enumerate() {
                dst[[t, ch]] = (v - m) / s;
            }
        }
    }
}

/// The assembled network plus its data scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Bicurnet {
    pub config: ModelConfig,
    pub net: Sequential,
    pub normalizer: Normalizer,
}

/// Builds the layer chain with seeded He-uniform weights and zero biases.
pub fn build_bicurnet(config: &ModelConfig) -> Result<Bicurnet, DecoderError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config;
    let mut layers = vec![
        Layer::DwsConv1d(DwsConv1d::new(c.n_channels, c.kernel, c.filters, c.l2, Activation::Relu, &mut rng)),
        Layer::Conv1d(Conv1d::new(c.filters, c.kernel, c.filters, c.l2, Activation::Relu, &mut rng)),
        Layer::MaxPool1d(MaxPool1d::new(2, 2)),
        Layer::Cam(Cam::new(c.filters, c.cam_units, 0.0, c.cam_activation, &mut rng)?),
        Layer::Flatten(Flatten::new()),
        Layer::Dropout(Dropout::new(c.dropout, c.seed.wrapping_add(0x9E37_79B9_7F4A_7C15))?),
    ];
    let mut width = c.pooled_len() * c.filters;
    for i in 0..c.dense_layers {
        layers.push(Layer::Dense(Dense::new(&format!("dense{}", i + 1), width, c.dense_units, 0.0, Activation::Swish, &mut rng)));
        width = c.dense_units;
    }
    layers.push(Layer::Dense(Dense::new("out", width, c.n_samples, 0.0, Activation::Linear, &mut rng)));
    Ok(Bicurnet { config: config.clone(), net: Sequential::new(layers), normalizer: Normalizer::identity(c.n_channels) })
}

/// Prediction quality over a set of windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean of per-window correlations.
    pub pcc_mean: f64,
    pub pcc_std: f64,
    /// Correlation of all windows concatenated.
    pub pcc_concat: f64,
    pub mse: f64,
    pub n_windows: usize,
    /// Windows skipped from the per-window mean because a series was flat.
    pub n_degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: ModelConfig,
    pub seed: u64,
    pub epochs_run: usize,
    /// Per-epoch training MSE on standardised targets, without the penalty.
    pub train_mse: Vec<f64>,
    /// Per-epoch training objective including the weight penalty.
    pub train_loss: Vec<f64>,
    /// Per-epoch validation MSE on standardised targets (empty without a
    /// validation split).
    pub val_mse: Vec<f64>,
    pub train_eval: EvalReport,
    pub test: Option<EvalReport>,
    /// Excluded from serialized reports.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl Bicurnet {
    fn check(&self, e: &WindowedExample) -> Result<(), DecoderError> {
        let expected = (self.config.n_channels, self.config.n_samples);
        if e.x.dim() != expected || e.y.len() != expected.1 {
            return Err(DecoderError::ShapeMismatch { got: e.x.dim(), expected });
        }
        Ok(())
    }

    fn batch_input(&self, examples: &[&WindowedExample]) -> ArrayD<f64> {
        let (n, c) = (self.config.n_samples, self.config.n_channels);
        let mut x = Array3::<f64>::zeros((examples.len(), n, c));
        for (i, e) in examples.iter().enumerate() {
            self.normalizer.input(&e.x, &mut x.index_axis_mut(Axis(0), i));
        }
        x.into_dyn()
    }

    fn batch_target(&self, examples: &[&WindowedExample]) -> ArrayD<f64> {
        let n = self.config.n_samples;
        let (m, s) = (self.normalizer.y_mean, self.normalizer.y_std);
        Array2::from_shape_fn((examples.len(), n), |(i, t)| (examples[i].y[t] - m) / s).into_dyn()
    }

    /// Predicted trajectory in degrees for one `Nc × N` window.
    pub fn predict(&mut self, x: &Array2<f64>) -> Result<Array1<f64>, DecoderError> {
        let expected = (self.config.n_channels, self.config.n_samples);
        if x.dim() != expected {
            return Err(DecoderError::ShapeMismatch { got: x.dim(), expected });
        }
        let e = WindowedExample { x: x.clone(), y: Array1::zeros(expected.1), trial_id: 0, group: 0, t_start: 0.0 };
        Ok(self.predict_many(&[e])?.remove(0))
    }

    pub fn predict_many(&mut self, examples: &[WindowedExample]) -> Result<Vec<Array1<f64>>, DecoderError> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(64) {
            for e in chunk {
                self.check(e)?;
            }
            let refs: Vec<&WindowedExample> = chunk.iter().collect();
            let y = self.net.forward(self.batch_input(&refs), false)?;
            let (m, s) = (self.normalizer.y_mean, self.normalizer.y_std);
            for row in y.axis_iter(Axis(0)) {
                out.push(row.iter().map(|v| v * s + m).collect());
            }
        }
        Ok(out)
    }

    pub fn evaluate(&mut self, examples: &[WindowedExample]) -> Result<EvalReport, DecoderError> {
        if examples.is_empty() {
            return Err(DecoderError::BadConfig("cannot evaluate an empty set".into()));
        }
        let preds = self.predict_many(examples)?;
        let mut per = Vec::new();
        let mut degenerate = 0;
        let (mut all_a, mut all_p) = (Vec::new(), Vec::new());
        for (e, p) in examples.iter().zip(&preds) {
            let (a, p) = (e.y.as_slice().expect("contiguous"), p.as_slice().expect("contiguous"));
            match pcc(a, p) {
                Ok(r) => per.push(r),
                Err(MetricsError::DegenerateSeries) => degenerate += 1,
                Err(err) => return Err(err.into()),
            }
            all_a.extend_from_slice(a);
            all_p.extend_from_slice(p);
        }
        let (pcc_mean, pcc_std) = if per.is_empty() { (0.0, 0.0) } else { mean_std(&per) };
        Ok(EvalReport {
            pcc_mean,
            pcc_std,
            pcc_concat: pcc(&all_a, &all_p).unwrap_or(0.0),
            mse: mse(&all_a, &all_p)?,
            n_windows: examples.len(),
            n_degenerate: degenerate,
        })
    }

    fn standardized_mse(&mut self, examples: &[WindowedExample]) -> Result<f64, DecoderError> {
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in examples.chunks(64) {
            let refs: Vec<&WindowedExample> = chunk.iter().collect();
            let pred = self.net.forward(self.batch_input(&refs), false)?;
            let (l, _) = mse_loss(&pred, &self.batch_target(&refs))?;
            total += l * pred.len() as f64;
            count += pred.len();
        }
        Ok(total / count as f64)
    }
}

/// Mini-batch Adam on the training split with seeded per-epoch shuffling.
pub fn train(model: &mut Bicurnet, split: &DatasetSplit) -> Result<TrainReport, DecoderError> {
    let started = Instant::now();
    if split.train.is_empty() {
        return Err(DecoderError::EmptyTrainSplit);
    }
    for e in split.train.iter().chain(&split.val).chain(&split.test) {
        model.check(e)?;
    }
    let cfg = model.config.clone();
    model.normalizer = Normalizer::fit(&split.train);
    let train_set = augment_set(&split.train, &cfg.augment, cfg.seed.wrapping_add(1))?;
    let mut adam = AdamState::new(cfg.lr);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let (mut train_mse, mut train_loss, mut val_mse) = (Vec::new(), Vec::new(), Vec::new());
    let mut best: Option<(f64, Sequential)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut se, mut sl, mut count) = (0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&WindowedExample> = idx.iter().map(|&i| &train_set[i]).collect();
            let x = model.batch_input(&batch);
            let y = model.batch_target(&batch);
            model.net.zero_grad();
            let pred = model.net.forward(x, true)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            let penalty = model.net.l2_penalty();
            if !(loss + penalty).is_finite() {
                return Err(DecoderError::NonFiniteLoss { epoch, batch: bi });
            }
            model.net.backward(grad)?;
            model.net.add_l2_grad();
            adam.step(&mut model.net.params_mut())?;
            se += loss * batch.len() as f64;
            sl += (loss + penalty) * batch.len() as f64;
            count += batch.len();
        }
        train_mse.push(se / count as f64);
        train_loss.push(sl / count as f64);
        if !split.val.is_empty() {
            let v = model.standardized_mse(&split.val)?;
            val_mse.push(v);
            if let Some(patience) = cfg.patience {
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, model.net.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= patience {
                        break;
                    }
                }
            }
        }
        log::debug!("epoch {epoch}: train mse {:.5}", train_mse[epoch]);
    }
    if let Some((_, net)) = best {
        model.net = net;
    }
    let train_eval = model.evaluate(&split.train)?;
    let test = if split.test.is_empty() { None } else { Some(model.evaluate(&split.test)?) };
    Ok(TrainReport {
        config: cfg.clone(),
        seed: cfg.seed,
        epochs_run: train_mse.len(),
        train_mse,
        train_loss,
        val_mse,
        train_eval,
        test,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    /// Held-out `(group, trial)` keys of each fold.
    pub folds: Vec<Vec<(u32, u32)>>,
    pub fold_pcc: Vec<f64>,
    pub pcc_mean: f64,
    pub pcc_std: f64,
}

/// Partition of trial keys into `k` folds of near-equal size.
pub fn trial_folds(examples: &[WindowedExample], k: usize, seed: u64) -> Result<Vec<Vec<(u32, u32)>>, DecoderError> {
    let mut keys = trial_keys(examples);
    if k < 2 || keys.len() < k {
        return Err(DecoderError::TooFewGroups { needed: k.max(2), found: keys.len() });
    }
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, key) in keys.into_iter().enumerate() {
        folds[i % k].push(key);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Trial-grouped k-fold cross-validation; each fold trains a fresh model.
pub fn cross_validate(examples: &[WindowedExample], config: &ModelConfig, k: usize) -> Result<CvReport, DecoderError> {
    let folds = trial_folds(examples, k, config.seed)?;
    let mut fold_pcc = Vec::with_capacity(k);
    for (i, fold) in folds.iter().enumerate() {
        let held: BTreeSet<(u32, u32)> = fold.iter().copied().collect();
        let (test, train_set): (Vec<_>, Vec<_>) = examples.iter().cloned().partition(|e| held.contains(&(e.group, e.trial_id)));
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(i as u64);
        let mut model = build_bicurnet(&cfg)?;
        let split = DatasetSplit { train: train_set, val: vec![], test, ratios: (0.0, 0.0, 0.0), grouping: Default::default(), seed: cfg.seed };
        let report = train(&mut model, &split)?;
        fold_pcc.push(report.test.expect("non-empty fold").pcc_mean);
    }
    let (pcc_mean, pcc_std) = mean_std(&fold_pcc);
    Ok(CvReport { k, folds, fold_pcc, pcc_mean, pcc_std })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogoReport {
    pub groups: Vec<u32>,
    pub group_pcc: Vec<f64>,
    pub pcc_mean: f64,
    pub pcc_std: f64,
}

/// Examples of group `g` held out, the rest for training.
pub fn leave_group_out(examples: &[WindowedExample], g: u32) -> (Vec<WindowedExample>, Vec<WindowedExample>) {
    examples.iter().cloned().partition(|e| e.group != g)
}

/// Trains on all groups but one and tests on the held-out group, for each group.
pub fn leave_one_group_out(examples: &[WindowedExample], config: &ModelConfig) -> Result<LogoReport, DecoderError> {
    let groups: Vec<u32> = examples.iter().map(|e| e.group).collect::<BTreeSet<_>>().into_iter().collect();
    if groups.len() < 2 {
        return Err(DecoderError::TooFewGroups { needed: 2, found: groups.len() });
    }
    let mut group_pcc = Vec::new();
    for (i, &g) in groups.iter().enumerate() {
        let (train_set, test) = leave_group_out(examples, g);
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(i as u64);
        let mut model = build_bicurnet(&cfg)?;
        let split = DatasetSplit { train: train_set, val: vec![], test, ratios: (0.0, 0.0, 0.0), grouping: Default::default(), seed: cfg.seed };
        group_pcc.push(train(&mut model, &split)?.test.expect("non-empty group").pcc_mean);
    }
    let (pcc_mean, pcc_std) = mean_std(&group_pcc);
    Ok(LogoReport { groups, group_pcc, pcc_mean, pcc_std })
}

pub const CHECKPOINT_FORMAT: &str = "bicurnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major values.
    pub data: Vec<f64>,
}

/// On-disk model: JSON with the configuration (including seeds), the data
/// scaling and every parameter tensor in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub params: Vec<TensorRecord>,
}

impl Bicurnet {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            params: self
                .net
                .params()
                .iter()
                .map(|p| TensorRecord {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    data: p.value.as_standard_layout().iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, DecoderError> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(DecoderError::Checkpoint(format!("unsupported format {} v{}", ck.format, ck.version)));
        }
        let mut model = build_bicurnet(&ck.config)?;
        let mut params = model.net.params_mut();
        if params.len() != ck.params.len() {
            return Err(DecoderError::Checkpoint(format!("expected {} tensors, found {}", params.len(), ck.params.len())));
        }
        for (p, rec) in params.iter_mut().zip(&ck.params) {
            if p.name != rec.name || p.value.shape() != rec.shape.as_slice() {
                return Err(DecoderError::Checkpoint(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    rec.name,
                    rec.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = ArrayD::from_shape_vec(IxDyn(&rec.shape), rec.data.clone())
                .map_err(|e| DecoderError::Checkpoint(format!("{}: {e}", rec.name)))?;
        }
        if ck.normalizer.x_mean.len() != ck.config.n_channels || ck.normalizer.x_std.len() != ck.config.n_channels {
            return Err(DecoderError::Checkpoint("normaliser width does not match n_channels".into()));
        }
        model.normalizer = ck.normalizer.clone();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DecoderError> {
        std::fs::write(path, serde_json::to_string(&self.to_checkpoint())? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DecoderError> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ck)
    }
}

/// Count of each `(group, trial)` key, used to check fold bookkeeping.
pub fn key_counts(examples: &[WindowedExample]) -> BTreeMap<(u32, u32), usize> {
    let mut m = BTreeMap::new();
    for e in examples {
        *m.entry((e.group, e.trial_id)).or_insert(0) += 1;
    }
    m
}
