//! Two-layer tanh probing classifier, trained with AdamW and early stopping.
//!
//! `logits = W2ᵀ · tanh(W1ᵀ x + b1) + b2`, with `W1: D x H` and `W2: H x C`
//! stored row-major. The math is generic over [`Scalar`] so gradients can be
//! checked in double precision; probes themselves run in `f32`.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::linalg::Scalar;
use crate::neutralize::ProbeConfig;
use crate::treebank::fnv1a;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

pub type ProbeModel = Mlp<f32>;

/// Rows evaluated per forward call during evaluation.
const EVAL_CHUNK: usize = 1024;

impl<T: Scalar> Mlp<T> {
    pub fn zeros(input_dim: usize, hidden_dim: usize, classes: usize) -> Self {
        Mlp {
            input_dim,
            hidden_dim,
            classes,
            w1: vec![T::zero(); input_dim * hidden_dim],
            b1: vec![T::zero(); hidden_dim],
            w2: vec![T::zero(); hidden_dim * classes],
            b2: vec![T::zero(); classes],
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// `[w1, b1, w2, b2]`.
    pub fn tensors(&self) -> [&[T]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_batch(&self, batch: &[T], rows: usize) -> Result<()> {
        if batch.len() != rows * self.input_dim {
            return Err(Error::Dimension {
                context: "probe input batch",
                expected: rows * self.input_dim,
                found: batch.len(),
            });
        }
        Ok(())
    }

    /// Hidden activations (`rows x H`) and logits (`rows x C`).
    fn forward_full(&self, batch: &[T], rows: usize) -> (Vec<T>, Vec<T>) {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.classes);
        let mut hidden: Vec<T> = Vec::with_capacity(rows * h);
        for _ in 0..rows {
            hidden.extend_from_slice(&self.b1);
        }
        T::gemm(
            rows,
            d,
            h,
            T::one(),
            (batch, d as isize, 1),
            (&self.w1, h as isize, 1),
            T::one(),
            (&mut hidden, h as isize, 1),
        );
        for v in &mut hidden {
            *v = v.tanh();
        }
        let mut logits: Vec<T> = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            logits.extend_from_slice(&self.b2);
        }
        T::gemm(
            rows,
            h,
            c,
            T::one(),
            (&hidden, h as isize, 1),
            (&self.w2, c as isize, 1),
            T::one(),
            (&mut logits, c as isize, 1),
        );
        (hidden, logits)
    }

    /// Logits for a row-major `rows x D` batch.
    pub fn forward(&self, batch: &[T], rows: usize) -> Result<Vec<T>> {
        self.check_batch(batch, rows)?;
        Ok(self.forward_full(batch, rows).1)
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(&self, batch: &[T], labels: &[u32], rows: usize) -> Result<(f64, Mlp<T>)> {
        self.check_batch(batch, rows)?;
        if labels.len() != rows {
            return Err(Error::Dimension {
                context: "probe label batch",
                expected: rows,
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= self.classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.classes);
        let (hidden, mut dlogits) = self.forward_full(batch, rows);

        let scale = T::one() / T::from_f64(rows as f64);
        let mut loss = 0f64;
        for (row, &label) in dlogits.chunks_exact_mut(c).zip(labels) {
            let y = label as usize;
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let shifted_target = row[y] - max;
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            loss += (sum.ln() - shifted_target).to_f64();
            for v in row.iter_mut() {
                *v = *v / sum;
            }
            row[y] = row[y] - T::one();
            for v in row.iter_mut() {
                *v = *v * scale;
            }
        }
        let loss = loss / rows as f64;

        let mut grad = Mlp::zeros(d, h, c);
        // dW2 = hiddenᵀ · dlogits
        T::gemm(
            h,
            rows,
            c,
            T::one(),
            (&hidden, 1, h as isize),
            (&dlogits, c as isize, 1),
            T::zero(),
            (&mut grad.w2, c as isize, 1),
        );
        for row in dlogits.chunks_exact(c) {
            for (g, &v) in grad.b2.iter_mut().zip(row) {
                *g = *g + v;
            }
        }
        // dhidden = dlogits · W2ᵀ, then through tanh
        let mut dpre = vec![T::zero(); rows * h];
        T::gemm(
            rows,
            c,
            h,
            T::one(),
            (&dlogits, c as isize, 1),
            (&self.w2, 1, c as isize),
            T::zero(),
            (&mut dpre, h as isize, 1),
        );
        for (g, &a) in dpre.iter_mut().zip(&hidden) {
            *g = *g * (T::one() - a * a);
        }
        T::gemm(
            d,
            rows,
            h,
            T::one(),
            (batch, 1, d as isize),
            (&dpre, h as isize, 1),
            T::zero(),
            (&mut grad.w1, h as isize, 1),
        );
        for row in dpre.chunks_exact(h) {
            for (g, &v) in grad.b1.iter_mut().zip(row) {
                *g = *g + v;
            }
        }
        Ok((loss, grad))
    }
}

/// Row-wise softmax of a `rows x classes` logit matrix.
pub fn softmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Uniform(±1/√fan_in) weights, zero biases.
pub fn init_probe(input_dim: usize, hidden_dim: usize, classes: usize, seed: u64) -> ProbeModel {
    init_mlp(input_dim, hidden_dim, classes, seed)
}

pub fn init_mlp<T: Scalar>(
    input_dim: usize,
    hidden_dim: usize,
    classes: usize,
    seed: u64,
) -> Mlp<T> {
    assert!(
        input_dim >= 1 && hidden_dim >= 1 && classes >= 1,
        "probe dimensions must be positive"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Mlp::zeros(input_dim, hidden_dim, classes);
    let b1 = 1.0 / (input_dim as f64).sqrt();
    for w in &mut m.w1 {
        *w = T::from_f64(rng.gen_range(-b1..b1));
    }
    let b2 = 1.0 / (hidden_dim as f64).sqrt();
    for w in &mut m.w2 {
        *w = T::from_f64(rng.gen_range(-b2..b2));
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    /// Hidden width; `None` means the input width.
    pub hidden_dim: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            max_epochs: 20,
            patience: 3,
            hidden_dim: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.learning_rate, self.weight_decay];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(
                "learning rate and weight decay must be finite and >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("AdamW betas must lie in [0, 1)".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and patience must be >= 1".into(),
            ));
        }
        if self.hidden_dim == Some(0) {
            return Err(Error::Config("hidden_dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn hidden_for(&self, input_dim: usize) -> usize {
        self.hidden_dim.unwrap_or(input_dim)
    }
}

/// AdamW moment estimates.
#[derive(Debug, Clone)]
pub struct AdamW {
    first: ProbeModel,
    second: ProbeModel,
    steps: u64,
}

impl AdamW {
    pub fn new(model: &ProbeModel) -> Self {
        AdamW {
            first: Mlp::zeros(model.input_dim, model.hidden_dim, model.classes),
            second: Mlp::zeros(model.input_dim, model.hidden_dim, model.classes),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// `θ ← θ − lr·(m̂/(√v̂ + ε) + wd·θ)`, decay applied to every tensor.
    pub fn step(&mut self, model: &mut ProbeModel, grad: &ProbeModel, cfg: &TrainConfig) {
        self.steps += 1;
        let t = self.steps as f64;
        let c1 = (1.0 - f64::from(cfg.beta1).powf(t)) as f32;
        let c2 = (1.0 - f64::from(cfg.beta2).powf(t)) as f32;
        let (b1, b2, lr, wd, eps) = (
            cfg.beta1,
            cfg.beta2,
            cfg.learning_rate,
            cfg.weight_decay,
            cfg.epsilon,
        );
        let params = model.tensors_mut();
        let firsts = self.first.tensors_mut();
        let seconds = self.second.tensors_mut();
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grad.tensors())
            .zip(firsts)
            .zip(seconds)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[i]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Cumulative update steps at the end of this epoch.
    pub steps: u64,
    pub mean_train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub total_steps: u64,
    pub stopped_early: bool,
}

fn check_features(model: &ProbeModel, fs: &FeatureSet, what: &'static str) -> Result<()> {
    if fs.dim != model.input_dim {
        return Err(Error::Dimension {
            context: what,
            expected: model.input_dim,
            found: fs.dim,
        });
    }
    if let Some(&bad) = fs
        .gold_labels
        .iter()
        .find(|&&l| l as usize >= model.classes)
    {
        return Err(Error::Config(format!(
            "{what}: label {bad} out of range for {} classes",
            model.classes
        )));
    }
    Ok(())
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    train: &'a FeatureSet,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    batch: Vec<f32>,
    labels: Vec<u32>,
    optimizer: AdamW,
}

impl<'a> Trainer<'a> {
    fn new(model: &ProbeModel, train: &'a FeatureSet, cfg: &'a TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Trainer {
            cfg,
            train,
            rng,
            order: (0..train.len()).collect(),
            batch: Vec::with_capacity(cfg.batch_size * train.dim),
            labels: Vec::with_capacity(cfg.batch_size),
            optimizer: AdamW::new(model),
        }
    }

    /// One shuffled pass, stopping early once `step_limit` updates are done.
    /// Returns the mean batch loss.
    fn epoch(&mut self, model: &mut ProbeModel, step_limit: Option<u64>) -> Result<f64> {
        self.order.shuffle(&mut self.rng);
        let mut loss_sum = 0f64;
        let mut batches = 0usize;
        for chunk in self.order.chunks(self.cfg.batch_size) {
            if step_limit.is_some_and(|limit| self.optimizer.steps() >= limit) {
                break;
            }
            self.batch.clear();
            self.labels.clear();
            for &i in chunk {
                self.batch.extend_from_slice(self.train.row(i));
                self.labels.push(self.train.gold_labels[i]);
            }
            let (loss, grad) = model.loss_and_grad(&self.batch, &self.labels, chunk.len())?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: self.optimizer.steps() + 1,
                    loss,
                });
            }
            self.optimizer.step(model, &grad, self.cfg);
            if !model.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: self.optimizer.steps(),
                    loss: f64::NAN,
                });
            }
            loss_sum += loss;
            batches += 1;
        }
        Ok(if batches == 0 {
            0.0
        } else {
            loss_sum / batches as f64
        })
    }
}

/// Train with early stopping on validation accuracy and return the
/// parameters of the best epoch (earliest on ties).
pub fn train(
    mut model: ProbeModel,
    train: &FeatureSet,
    val: &FeatureSet,
    cfg: &TrainConfig,
) -> Result<(ProbeModel, TrainingLog)> {
    cfg.validate()?;
    check_features(&model, train, "training features")?;
    check_features(&model, val, "validation features")?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let mut trainer = Trainer::new(&model, train, cfg);
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ProbeModel)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let loss = trainer.epoch(&mut model, None)?;
        let acc = evaluate(&model, val)?.overall_accuracy;
        epochs.push(EpochRecord {
            epoch,
            steps: trainer.optimizer.steps(),
            mean_train_loss: loss,
            val_accuracy: Some(acc),
        });
        match &best {
            Some((best_acc, _, _)) if acc <= *best_acc => since_best += 1,
            _ => {
                best = Some((acc, epoch, model.clone()));
                since_best = 0;
            }
        }
        if since_best >= cfg.patience {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    let (best_acc, best_epoch, best_model) = best.expect("at least one epoch runs");
    Ok((
        best_model,
        TrainingLog {
            epochs,
            best_epoch,
            best_val_accuracy: Some(best_acc),
            total_steps: trainer.optimizer.steps(),
            stopped_early,
        },
    ))
}

/// Train for exactly `steps` updates without validation (the control task
/// is matched to a probe run's update count, not its stopping point).
pub fn train_for_steps(
    mut model: ProbeModel,
    train: &FeatureSet,
    cfg: &TrainConfig,
    steps: u64,
) -> Result<(ProbeModel, TrainingLog)> {
    cfg.validate()?;
    check_features(&model, train, "training features")?;
    if train.is_empty() {
        return Err(Error::Config("training set must be non-empty".into()));
    }
    let mut trainer = Trainer::new(&model, train, cfg);
    let mut epochs = Vec::new();
    while trainer.optimizer.steps() < steps {
        let loss = trainer.epoch(&mut model, Some(steps))?;
        epochs.push(EpochRecord {
            epoch: epochs.len() + 1,
            steps: trainer.optimizer.steps(),
            mean_train_loss: loss,
            val_accuracy: None,
        });
    }
    let best_epoch = epochs.len();
    Ok((
        model,
        TrainingLog {
            epochs,
            best_epoch,
            best_val_accuracy: None,
            total_steps: trainer.optimizer.steps(),
            stopped_early: false,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    /// Recall per class; `None` where the class has no gold rows.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub support: Vec<u64>,
    pub correct: Vec<u64>,
    pub predictions: Vec<u32>,
}

impl EvalReport {
    pub fn from_predictions(predictions: Vec<u32>, gold: &[u32], classes: usize) -> Self {
        let mut support = vec![0u64; classes];
        let mut correct = vec![0u64; classes];
        for (&p, &g) in predictions.iter().zip(gold) {
            support[g as usize] += 1;
            if p == g {
                correct[g as usize] += 1;
            }
        }
        let total: u64 = support.iter().sum();
        let hits: u64 = correct.iter().sum();
        EvalReport {
            overall_accuracy: if total == 0 {
                0.0
            } else {
                hits as f64 / total as f64
            },
            per_class_accuracy: support
                .iter()
                .zip(&correct)
                .map(|(&s, &c)| (s > 0).then(|| c as f64 / s as f64))
                .collect(),
            support,
            correct,
            predictions,
        }
    }
}

/// Argmax predictions for every row.
pub fn predict(model: &ProbeModel, features: &FeatureSet) -> Result<Vec<u32>> {
    if features.dim != model.input_dim {
        return Err(Error::Dimension {
            context: "evaluation features",
            expected: model.input_dim,
            found: features.dim,
        });
    }
    let mut out = Vec::with_capacity(features.len());
    let rows_per_chunk = EVAL_CHUNK;
    for chunk in features
        .vectors
        .chunks(rows_per_chunk * features.dim.max(1))
    {
        let rows = chunk.len() / features.dim.max(1);
        let logits = model.forward(chunk, rows)?;
        out.extend(logits.chunks_exact(model.classes).map(|r| argmax(r) as u32));
    }
    Ok(out)
}

pub fn evaluate(model: &ProbeModel, features: &FeatureSet) -> Result<EvalReport> {
    check_features(model, features, "evaluation features")?;
    let predictions = predict(model, features)?;
    Ok(EvalReport::from_predictions(
        predictions,
        &features.gold_labels,
        model.classes,
    ))
}

/// Probe accuracy minus control-task accuracy.
pub fn selectivity(probe_report: &EvalReport, control_report: &EvalReport) -> f64 {
    probe_report.overall_accuracy - control_report.overall_accuracy
}

/// Stable hash of everything that determines a trained probe.
pub fn config_hash(probe: &ProbeConfig, train: &TrainConfig) -> u64 {
    let text = format!(
        "{}|{}|{}|{}|{}|{}|lr={:e}|wd={:e}|b1={:e}|b2={:e}|eps={:e}|bs={}|ep={}|pat={}|h={:?}|seed={}",
        probe.encoder_id,
        probe.treebank_id,
        probe.task,
        probe.layer,
        probe.pooling,
        probe.combiner.map(|c| c.as_str()).unwrap_or("-"),
        train.learning_rate,
        train.weight_decay,
        train.beta1,
        train.beta2,
        train.epsilon,
        train.batch_size,
        train.max_epochs,
        train.patience,
        train.hidden_dim,
        train.seed,
    );
    fnv1a(text.as_bytes())
}

/// Fold further identifying strings (input paths, say) into a config hash.
pub fn extend_hash(hash: u64, parts: &[&str]) -> u64 {
    let mut bytes = hash.to_le_bytes().to_vec();
    for p in parts {
        bytes.extend_from_slice(p.as_bytes());
        bytes.push(0);
    }
    fnv1a(&bytes)
}

pub const PROBE_MAGIC: &[u8; 8] = b"XNPROBE1";

/// A trained probe with the identity of the run that produced it.
///
/// Layout (little-endian): magic `XNPROBE1`, `u32` D, H, C, `u64` seed,
/// `u64` config hash, then `f32` w1, b1, w2, b2.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeBlob {
    pub model: ProbeModel,
    pub seed: u64,
    pub config_hash: u64,
}

impl ProbeBlob {
    pub fn encode<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PROBE_MAGIC)?;
        for dim in [
            self.model.input_dim,
            self.model.hidden_dim,
            self.model.classes,
        ] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.config_hash.to_le_bytes())?;
        for t in self.model.tensors() {
            for v in t {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn decode<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != PROBE_MAGIC {
            return Err(Error::Format("not a probe blob".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            r.read_exact(&mut u32buf)?;
            *d = u32::from_le_bytes(u32buf) as usize;
        }
        if dims.contains(&0) {
            return Err(Error::Format("probe blob has a zero dimension".into()));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let seed = u64::from_le_bytes(u64buf);
        r.read_exact(&mut u64buf)?;
        let config_hash = u64::from_le_bytes(u64buf);
        let mut model = Mlp::zeros(dims[0], dims[1], dims[2]);
        for t in model.tensors_mut() {
            let mut bytes = vec![0u8; t.len() * 4];
            r.read_exact(&mut bytes)?;
            for (v, b) in t.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format(
                "trailing bytes after probe parameters".into(),
            ));
        }
        Ok(ProbeBlob {
            model,
            seed,
            config_hash,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(32 + self.model.param_count() * 4);
        self.encode(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::path_io(path, e))?;
        Self::decode(bytes.as_slice())
    }
}
