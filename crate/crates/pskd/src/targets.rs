//! Soft-target construction: hard targets, label smoothing, classic
//! teacher-based distillation, and progressive self-distillation.
//!
//! All methods produce a [`ProbVector`] that the trainer feeds to the
//! `tau = 1` cross-entropy loss. The temperature-scaled two-term loss
//! [`kd_loss_tau`] is provided alongside; at `tau = 1` it collapses to the
//! cross-entropy against the mixed soft target, and with a uniform teacher
//! it collapses to label smoothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, softmax, softmax_tau};

/// A point on the K-simplex: entries in `[0, 1]` summing to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Input("probability vector must be non-empty".into()));
        }
        if entries.iter().any(|&v| !v.is_finite() || !(0.0..=1.0).contains(&v)) {
            return Err(Error::Input(format!(
                "probability entries must lie in [0, 1], got {entries:?}"
            )));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!(
                "probabilities sum to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(Self(entries))
    }

    /// Constructor for values that are on the simplex by construction
    /// (softmax outputs, convex combinations of simplex points).
    pub(crate) fn new_unchecked(entries: Vec<f64>) -> Self {
        debug_assert!((entries.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        Self(entries)
    }

    /// Uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Input("uniform distribution needs k >= 1".into()));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// Index of the largest entry; ties go to the lower class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Largest entry (the confidence estimate).
    pub fn max_prob(&self) -> f64 {
        self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// True iff exactly one entry is 1 and the rest are 0. Returns the hot
    /// index.
    pub fn one_hot_index(&self) -> Option<usize> {
        let mut hot = None;
        for (i, &v) in self.0.iter().enumerate() {
            if v == 1.0 {
                if hot.is_some() {
                    return None;
                }
                hot = Some(i);
            } else if v != 0.0 {
                return None;
            }
        }
        hot
    }
}

/// Target-softening method for a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SofteningMethod {
    /// Plain one-hot targets.
    HardTarget,
    /// `(1 - eps) y + eps / K`.
    LabelSmoothing { epsilon: f64 },
    /// Fixed-weight distillation from the epoch-(t-1) self, with the
    /// teacher distribution softened at temperature `tau` before mixing.
    ClassicKd { alpha: f64, tau: f64 },
    /// Progressive self-distillation: `(1 - a_t) y + a_t P_{t-1}(x)` with
    /// `a_t` growing linearly to `alpha_t_final`.
    Pskd { alpha_t_final: f64 },
}

impl SofteningMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SofteningMethod::HardTarget => Ok(()),
            SofteningMethod::LabelSmoothing { epsilon } => {
                if !(0.0..1.0).contains(&epsilon) {
                    Err(Error::Parameter(format!(
                        "label smoothing epsilon must be in [0, 1), got {epsilon}"
                    )))
                } else {
                    Ok(())
                }
            }
            SofteningMethod::ClassicKd { alpha, tau } => {
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(Error::Parameter(format!(
                        "kd alpha must be in [0, 1], got {alpha}"
                    )));
                }
                if tau <= 0.0 || tau.is_nan() {
                    return Err(Error::Parameter(format!("kd tau must be > 0, got {tau}")));
                }
                Ok(())
            }
            SofteningMethod::Pskd { alpha_t_final } => {
                if !(0.0..=1.0).contains(&alpha_t_final) {
                    return Err(Error::Parameter(format!(
                        "alpha_T must be in [0, 1], got {alpha_t_final}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// One-hot target for class `label` out of `k`.
pub fn one_hot(label: usize, k: usize) -> Result<ProbVector> {
    if label >= k {
        return Err(Error::Input(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    Ok(ProbVector(v))
}

/// Label smoothing: target class gets `1 - eps + eps/K`, others `eps/K`.
pub fn label_smooth(y: &ProbVector, epsilon: f64) -> Result<ProbVector> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Parameter(format!(
            "epsilon must be in [0, 1), got {epsilon}"
        )));
    }
    let hot = y
        .one_hot_index()
        .ok_or_else(|| Error::Input("label_smooth expects a one-hot target".into()))?;
    if epsilon == 0.0 {
        return Ok(y.clone());
    }
    let k = y.len();
    let mut v = vec![epsilon / k as f64; k];
    v[hot] = 1.0 - epsilon + epsilon / k as f64;
    Ok(ProbVector::new_unchecked(v))
}

/// Convex combination `(1 - alpha) y + alpha teacher`.
pub fn kd_soft_target(y: &ProbVector, teacher: &ProbVector, alpha: f64) -> Result<ProbVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!(
            "alpha must be in [0, 1], got {alpha}"
        )));
    }
    if y.len() != teacher.len() {
        return Err(Error::Shape(format!(
            "target has {} classes, teacher has {}",
            y.len(),
            teacher.len()
        )));
    }
    let v = y
        .entries()
        .iter()
        .zip(teacher.entries())
        .map(|(yi, ti)| (1.0 - alpha) * yi + alpha * ti)
        .collect();
    Ok(ProbVector::new_unchecked(v))
}

/// Linear growth schedule `a_t = alpha_t_final * t / T` for `1 <= t <= T`.
pub fn alpha_schedule(t: usize, total_epochs: usize, alpha_t_final: f64) -> Result<f64> {
    if total_epochs < 1 {
        return Err(Error::Parameter("total epochs must be >= 1".into()));
    }
    if t < 1 || t > total_epochs {
        return Err(Error::Input(format!(
            "epoch {t} out of range 1..={total_epochs}"
        )));
    }
    if !(0.0..=1.0).contains(&alpha_t_final) {
        return Err(Error::Parameter(format!(
            "alpha_T must be in [0, 1], got {alpha_t_final}"
        )));
    }
    Ok(alpha_t_final * t as f64 / total_epochs as f64)
}

/// Soft target at epoch t: same contract as [`kd_soft_target`] with the
/// teacher being the model's own epoch-(t-1) prediction.
pub fn pskd_target(y: &ProbVector, past_pred: &ProbVector, alpha_t: f64) -> Result<ProbVector> {
    kd_soft_target(y, past_pred, alpha_t)
}

/// Re-soften a probability vector at temperature `tau`: proportional to
/// `p_i^(1/tau)`. Equals `softmax_tau(z, tau)` whenever `p = softmax(z)`.
/// `tau = 1` is the identity.
pub fn temper(p: &ProbVector, tau: f64) -> Result<ProbVector> {
    if tau <= 0.0 || tau.is_nan() {
        return Err(Error::Parameter(format!("tau must be > 0, got {tau}")));
    }
    if tau == 1.0 {
        return Ok(p.clone());
    }
    // Work in log space through the shared softmax so clamping behaviour
    // stays uniform.
    let logs: Vec<f64> = p
        .entries()
        .iter()
        .map(|&v| v.max(crate::nn::LOG_CLAMP).ln())
        .collect();
    softmax_tau(&logs, tau)
}

/// Two-term distillation loss at temperature `tau`:
/// `(1-alpha) H(y, softmax(student)) + alpha tau^2 H(softmax_tau(teacher, tau), softmax_tau(student, tau))`.
pub fn kd_loss_tau(
    student_logits: &[f64],
    teacher_logits: &[f64],
    y: &ProbVector,
    alpha: f64,
    tau: f64,
) -> Result<f64> {
    if student_logits.len() != teacher_logits.len() || student_logits.len() != y.len() {
        return Err(Error::Shape(format!(
            "kd_loss_tau: student {} / teacher {} / target {} classes",
            student_logits.len(),
            teacher_logits.len(),
            y.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!(
            "alpha must be in [0, 1], got {alpha}"
        )));
    }
    let hard = cross_entropy(y, &softmax(student_logits)?)?;
    let soft = cross_entropy(
        &softmax_tau(teacher_logits, tau)?,
        &softmax_tau(student_logits, tau)?,
    )?;
    Ok((1.0 - alpha) * hard + alpha * tau * tau * soft)
}
