//! Training loop: epoch orchestration, soft-target construction, SGD with
//! momentum and step learning-rate decay, teacher maintenance, and history
//! logging.
//!
//! The teacher refreshes exactly once per epoch boundary. At the end of each
//! epoch the model predicts the whole training split in id order; those
//! predictions become the next epoch's teacher (copied parameters or a disk
//! cache) and fill the per-example history. Epoch 1 has no teacher, so
//! distillation methods fall back to hard targets there; the logged alpha is
//! still the schedule value.
//!
//! Everything is deterministic given the seed: weight init, the train/val
//! split, and the per-epoch shuffles each draw from their own RNG stream.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::grad::ExampleEpochRecord;
use crate::metrics::{self, EvalRecord};
use crate::nn::{backward, cross_entropy, forward, softmax, GradientSet, MlpParams};
use crate::store::{snapshot_teacher, PredictionCache, TeacherSource};
use crate::targets::{
    alpha_schedule, kd_soft_target, label_smooth, one_hot, temper, ProbVector, SofteningMethod,
};
use crate::util::{seeded_rng, STREAM_SHUFFLE_BASE, STREAM_SPLIT};

/// How the epoch-(t-1) predictions are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherStrategy {
    /// Keep a frozen copy of the model in memory and recompute.
    Snapshot,
    /// Persist predictions to disk at each epoch end and read them back.
    Disk,
}

/// Schedule for the distillation weight of the PS-KD method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// `a_t = alpha_T * t / T`.
    LinearGrowth,
    /// `a_t = alpha_T` for every epoch (ablation mode).
    Fixed,
}

/// Full description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: SofteningMethod,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub teacher_strategy: TeacherStrategy,
    /// Hidden layer widths; input and output dims come from the dataset.
    pub hidden_dims: Vec<usize>,
    pub val_fraction: f64,
    pub alpha_mode: AlphaMode,
    /// Standardize features to zero mean / unit variance, with statistics
    /// from the training split only.
    pub standardize: bool,
    /// Record per-example gt/max probabilities and correctness each epoch.
    pub per_example_log: bool,
    /// Where disk-strategy caches are written. Required when a
    /// distillation method runs with [`TeacherStrategy::Disk`].
    pub cache_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: SofteningMethod::HardTarget,
            total_epochs: 60,
            batch_size: 32,
            lr_initial: 0.1,
            lr_decay_factor: 0.1,
            lr_decay_epochs: vec![30, 45],
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            teacher_strategy: TeacherStrategy::Snapshot,
            hidden_dims: vec![64, 64],
            val_fraction: 0.1,
            alpha_mode: AlphaMode::LinearGrowth,
            standardize: true,
            per_example_log: false,
            cache_dir: None,
        }
    }
}

impl TrainConfig {
    /// True when the configured method consumes past predictions.
    pub fn uses_teacher(&self) -> bool {
        matches!(
            self.method,
            SofteningMethod::ClassicKd { .. } | SofteningMethod::Pskd { .. }
        )
    }

    /// Mixing weight in effect at epoch t (also the logged value). Hard
    /// targets and label smoothing log 0.
    pub fn alpha_at_epoch(&self, t: usize) -> Result<f64> {
        match self.method {
            SofteningMethod::HardTarget | SofteningMethod::LabelSmoothing { .. } => Ok(0.0),
            SofteningMethod::ClassicKd { alpha, .. } => Ok(alpha),
            SofteningMethod::Pskd { alpha_t_final } => match self.alpha_mode {
                AlphaMode::LinearGrowth => alpha_schedule(t, self.total_epochs, alpha_t_final),
                AlphaMode::Fixed => Ok(alpha_t_final),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        if self.total_epochs < 1 {
            return Err(Error::Config("total_epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.lr_initial <= 0.0 || self.lr_initial.is_nan() {
            return Err(Error::Config(format!(
                "lr_initial must be > 0, got {}",
                self.lr_initial
            )));
        }
        if self.lr_decay_factor <= 0.0 || self.lr_decay_factor.is_nan() {
            return Err(Error::Config(format!(
                "lr_decay_factor must be > 0, got {}",
                self.lr_decay_factor
            )));
        }
        if !self.lr_decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "lr_decay_epochs must be strictly increasing".into(),
            ));
        }
        if self
            .lr_decay_epochs
            .iter()
            .any(|&e| e == 0 || e >= self.total_epochs)
        {
            return Err(Error::Config(format!(
                "lr_decay_epochs must lie in 1..{} (total_epochs)",
                self.total_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must be in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden_dims must be positive".into()));
        }
        if self.uses_teacher()
            && self.teacher_strategy == TeacherStrategy::Disk
            && self.cache_dir.is_none()
        {
            return Err(Error::Config(
                "teacher_strategy=disk requires cache_dir".into(),
            ));
        }
        Ok(())
    }

    /// Full layer dimension list for a dataset: input, hiddens, classes.
    pub fn layer_dims(&self, dataset: &Dataset) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(dataset.dim());
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(dataset.n_classes);
        dims
    }
}

/// Per-epoch scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// The schedule value, even at epoch 1 where distillation methods use
    /// hard targets because no teacher exists yet.
    pub alpha: f64,
    pub lr: f64,
    /// Mean per-example training loss over the epoch (soft-target loss).
    pub train_loss: f64,
    /// Validation NLL against hard targets; absent when the split is empty.
    pub val_nll: Option<f64>,
    pub val_top1_error: Option<f64>,
}

/// Everything logged over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// `per_example[t-1]` holds one record per training example at epoch t
    /// (end-of-epoch predictions, in id order). Present when
    /// `per_example_log` was set.
    pub per_example: Option<Vec<Vec<ExampleEpochRecord>>>,
}

impl TrainHistory {
    pub fn alphas(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.alpha).collect()
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: MlpParams,
    pub history: TrainHistory,
    /// The transform applied to features before training; evaluation must
    /// reuse it verbatim.
    pub standardizer: Standardizer,
    pub train_ids: Vec<u64>,
    pub val_ids: Vec<u64>,
}

/// Hooks for observing a run; every method defaults to a no-op.
pub trait TrainObserver {
    /// Called when a new teacher is installed. `producing_epoch` is the
    /// epoch whose end-of-epoch model produced the predictions.
    fn on_teacher_refresh(&mut self, _producing_epoch: usize, _teacher: &TeacherSource) {}
    /// Called after each epoch's updates, eval pass, and logging.
    fn on_epoch_end(&mut self, _epoch: usize, _params: &MlpParams, _teacher: Option<&TeacherSource>) {
    }
}

/// Observer that does nothing.
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Learning rate at epoch t: `lr_initial * factor^(number of decay epochs <= t)`.
pub fn lr_at_epoch(config: &TrainConfig, t: usize) -> f64 {
    let decays = config.lr_decay_epochs.iter().filter(|&&e| e <= t).count();
    config.lr_initial * config.lr_decay_factor.powi(decays as i32)
}

/// One SGD step with classical (coupled) weight decay:
/// `v <- momentum * v + (grad + weight_decay * param)`, then
/// `param <- param - lr * v`.
pub fn sgd_momentum_step(
    params: &mut MlpParams,
    grads: &GradientSet,
    velocity: &mut GradientSet,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !grads.same_shape(params) || !velocity.same_shape(params) {
        return Err(Error::Shape(
            "gradient/velocity shapes do not match the parameters".into(),
        ));
    }
    for l in 0..params.n_layers() {
        {
            let w = params.weights_mut()[l].values_mut();
            let g = grads.weights[l].values();
            let v = velocity.weights[l].values_mut();
            for i in 0..w.len() {
                v[i] = momentum * v[i] + (g[i] + weight_decay * w[i]);
                w[i] -= lr * v[i];
            }
        }
        let b = &mut params.biases_mut()[l];
        let g = &grads.biases[l];
        let v = &mut velocity.biases[l];
        for i in 0..b.len() {
            v[i] = momentum * v[i] + (g[i] + weight_decay * b[i]);
            b[i] -= lr * v[i];
        }
    }
    Ok(())
}

/// Seed-deterministic split into disjoint, exhaustive train/val id lists
/// (both sorted ascending). `val_fraction` of the data (rounded down) goes
/// to validation.
pub fn split_train_val(
    dataset: &Dataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<u64>, Vec<u64>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Parameter(format!(
            "val_fraction must be in [0, 1), got {val_fraction}"
        )));
    }
    let mut ids = dataset.ids();
    let mut rng = seeded_rng(seed, STREAM_SPLIT);
    ids.shuffle(&mut rng);
    let n_val = (dataset.n() as f64 * val_fraction).floor() as usize;
    let mut val: Vec<u64> = ids[..n_val].to_vec();
    let mut train: Vec<u64> = ids[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Soft targets for one batch. `teacher_probs` are raw (temperature-1)
/// teacher probabilities; `None` means no teacher exists yet (epoch 1), in
/// which case distillation methods use hard targets. `alpha_t` is the
/// resolved mixing weight for the epoch.
pub fn build_targets(
    method: &SofteningMethod,
    labels: &[usize],
    k: usize,
    alpha_t: f64,
    teacher_probs: Option<&[ProbVector]>,
) -> Result<Vec<ProbVector>> {
    if let Some(tp) = teacher_probs {
        if tp.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} teacher rows for {} labels",
                tp.len(),
                labels.len()
            )));
        }
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let y = one_hot(label, k)?;
            match (method, teacher_probs) {
                (SofteningMethod::HardTarget, _) => Ok(y),
                (SofteningMethod::LabelSmoothing { epsilon }, _) => label_smooth(&y, *epsilon),
                (SofteningMethod::ClassicKd { tau, .. }, Some(tp)) => {
                    kd_soft_target(&y, &temper(&tp[i], *tau)?, alpha_t)
                }
                (SofteningMethod::Pskd { .. }, Some(tp)) => kd_soft_target(&y, &tp[i], alpha_t),
                // Epoch 1: no teacher exists yet.
                (SofteningMethod::ClassicKd { .. } | SofteningMethod::Pskd { .. }, None) => Ok(y),
            }
        })
        .collect()
}

/// Softmax predictions for the given ids, in the given order.
pub fn predict_probs(
    params: &MlpParams,
    dataset: &Dataset,
    ids: &[u64],
) -> Result<Vec<ProbVector>> {
    let (batch, _) = dataset.gather(ids)?;
    let logits = forward(params, &batch)?;
    (0..ids.len()).map(|r| softmax(logits.row(r))).collect()
}

/// Run a full training loop. See the module docs for epoch semantics.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutput> {
    train_with_observer(config, dataset, &mut NoopObserver)
}

pub fn train_with_observer(
    config: &TrainConfig,
    dataset: &Dataset,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutput> {
    config.validate()?;
    if dataset.n() == 0 {
        return Err(Error::Input("dataset is empty".into()));
    }

    let (train_ids, val_ids) = split_train_val(dataset, config.val_fraction, config.seed)?;
    if train_ids.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }

    let standardizer = if config.standardize {
        Standardizer::fit(&dataset.features, &train_ids)?
    } else {
        Standardizer::identity(dataset.dim())
    };
    let mut work = dataset.clone();
    standardizer.apply(&mut work.features)?;

    let k = work.n_classes;
    let mut params = MlpParams::init(&config.layer_dims(&work), config.seed)?;
    let mut velocity = GradientSet::zeros_like(&params);
    let mut teacher: Option<TeacherSource> = None;

    let uses_teacher = config.uses_teacher();
    let need_eval_pass = |t: usize| (uses_teacher && t < config.total_epochs) || config.per_example_log;

    let mut epochs = Vec::with_capacity(config.total_epochs);
    let mut per_example: Option<Vec<Vec<ExampleEpochRecord>>> =
        config.per_example_log.then(Vec::new);

    for t in 1..=config.total_epochs {
        let lr = lr_at_epoch(config, t);
        let alpha_t = config.alpha_at_epoch(t)?;

        let mut shuffled = train_ids.clone();
        let mut rng = seeded_rng(config.seed, STREAM_SHUFFLE_BASE + t as u64);
        shuffled.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in shuffled.chunks(config.batch_size).enumerate() {
            let (batch, labels) = work.gather(chunk)?;

            let teacher_probs: Option<Vec<ProbVector>> = match (&teacher, uses_teacher) {
                (Some(src), true) => Some(
                    chunk
                        .iter()
                        .enumerate()
                        .map(|(r, &id)| src.predict(id, batch.row(r)))
                        .collect::<Result<_>>()?,
                ),
                _ => None,
            };
            let targets =
                build_targets(&config.method, &labels, k, alpha_t, teacher_probs.as_deref())?;

            let logits = forward(&params, &batch)?;
            if logits.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch: t,
                    batch: batch_idx,
                });
            }
            let mut batch_loss = 0.0;
            for (r, target) in targets.iter().enumerate() {
                batch_loss += cross_entropy(target, &softmax(logits.row(r))?)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: t,
                    batch: batch_idx,
                });
            }
            loss_sum += batch_loss;

            let grads = backward(&params, &batch, &targets)?;
            sgd_momentum_step(
                &mut params,
                &grads,
                &mut velocity,
                lr,
                config.momentum,
                config.weight_decay,
            )?;
        }
        let train_loss = loss_sum / train_ids.len() as f64;

        // End-of-epoch prediction pass over the training split in id
        // order: feeds the per-example history and becomes the next
        // epoch's teacher. Skipped when nothing consumes it.
        let eval_probs = if need_eval_pass(t) {
            Some(predict_probs(&params, &work, &train_ids)?)
        } else {
            None
        };
        if let (Some(log), Some(probs)) = (per_example.as_mut(), &eval_probs) {
            let (_, labels) = work.gather(&train_ids)?;
            log.push(
                train_ids
                    .iter()
                    .zip(probs)
                    .zip(&labels)
                    .map(|((&id, p), &label)| ExampleEpochRecord {
                        example_id: id,
                        gt_prob: p.get(label),
                        max_prob: p.max_prob(),
                        correct: p.argmax() == label,
                    })
                    .collect(),
            );
        }

        // Validation metrics against hard targets.
        let (val_nll, val_top1_error) = if val_ids.is_empty() {
            (None, None)
        } else {
            let probs = predict_probs(&params, &work, &val_ids)?;
            let (_, labels) = work.gather(&val_ids)?;
            let records: Vec<EvalRecord> = val_ids
                .iter()
                .zip(probs)
                .zip(&labels)
                .map(|((&id, p), &label)| EvalRecord::new(id, p, label))
                .collect::<Result<_>>()?;
            (
                Some(metrics::nll(&records)?),
                Some(metrics::topk_error(&records, 1)?),
            )
        };

        epochs.push(EpochStats {
            epoch: t,
            alpha: alpha_t,
            lr,
            train_loss,
            val_nll,
            val_top1_error,
        });
        // The observer sees the teacher that was in effect during epoch t;
        // the refresh for epoch t+1 happens after.
        observer.on_epoch_end(t, &params, teacher.as_ref());

        if uses_teacher && t < config.total_epochs {
            let probs = eval_probs.as_ref().expect("eval pass runs when a teacher is needed");
            let source = match config.teacher_strategy {
                TeacherStrategy::Snapshot => snapshot_teacher(&params),
                TeacherStrategy::Disk => {
                    let dir = config
                        .cache_dir
                        .as_ref()
                        .expect("validated: disk strategy has cache_dir");
                    std::fs::create_dir_all(dir)?;
                    let mut cache = PredictionCache::new(t as u32, &train_ids, k)?;
                    for (&id, p) in train_ids.iter().zip(probs) {
                        cache.record_prediction(id, p.clone())?;
                    }
                    let path = dir.join(format!("predictions_epoch_{t:03}.pskd"));
                    cache.persist(&path)?;
                    TeacherSource::from_cache_file(&path)?
                }
            };
            observer.on_teacher_refresh(t, &source);
            teacher = Some(source);
        }
    }

    Ok(TrainOutput {
        params,
        history: TrainHistory {
            epochs,
            per_example,
        },
        standardizer,
        train_ids,
        val_ids,
    })
}
