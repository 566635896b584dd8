//! Closed-form analysis of the progressive self-distillation gradient.
//!
//! For a fixed mixing weight `alpha`, the loss at epoch t has per-logit
//! gradient `(1-alpha)(p_t - y) + alpha (p_t - p_prev)`. When `alpha` stays
//! below the admissible bound `min_{i != GT} p_{t,i} / p_{t-1,i}`, the L1
//! norm of that gradient collapses to
//! `2 (1 - p_{t,GT}) - 2 alpha (1 - p_{t-1,GT})`, and the ratio against the
//! plain cross-entropy norm `2 (1 - p_{t,GT})` becomes the rescaling factor
//! `1 - alpha * (gamma_prev / gamma_t)` with `gamma = 1 - p_GT`. Examples
//! whose predictions improve quickly get small factors; stagnant (hard)
//! examples keep factors near `1 - alpha`, which is the implicit
//! hard-example mining effect this module measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::ProbVector;

/// Per-class loss gradient with respect to the logits, plus the index of
/// the ground-truth class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGradient {
    entries: Vec<f64>,
    gt_index: usize,
}

impl LogitGradient {
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn gt_index(&self) -> usize {
        self.gt_index
    }
}

/// Gradient of the epoch-t objective with respect to each logit:
/// entry i = `(1-alpha)(p_t_i - y_i) + alpha (p_t_i - p_prev_i)`.
pub fn pskd_logit_gradient(
    p_t: &ProbVector,
    p_prev: &ProbVector,
    y: &ProbVector,
    alpha: f64,
) -> Result<LogitGradient> {
    if p_t.len() != p_prev.len() || p_t.len() != y.len() {
        return Err(Error::Shape(format!(
            "logit gradient: lengths {} / {} / {}",
            p_t.len(),
            p_prev.len(),
            y.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!(
            "alpha must be in [0, 1], got {alpha}"
        )));
    }
    let gt_index = y
        .one_hot_index()
        .ok_or_else(|| Error::Input("ground-truth target must be one-hot".into()))?;
    let entries = p_t
        .entries()
        .iter()
        .zip(p_prev.entries())
        .zip(y.entries())
        .map(|((&pt, &pp), &yi)| (1.0 - alpha) * (pt - yi) + alpha * (pt - pp))
        .collect();
    Ok(LogitGradient { entries, gt_index })
}

/// L1 norm of a PS-KD logit gradient, with the closed-form value that holds
/// whenever `alpha` is admissible.
#[derive(Debug, Clone, PartialEq)]
pub struct GradL1Norm {
    /// `sum_i |grad_i|`, always computed directly.
    pub direct: f64,
    /// `2 (1 - p_t_GT) - 2 alpha (1 - p_prev_GT)`.
    pub closed_form: f64,
    /// True iff `alpha <= admissible_alpha_bound(p_t, p_prev, gt)`, the
    /// precondition under which `direct == closed_form`.
    pub identity_holds: bool,
}

/// Direct L1 norm of the gradient plus the closed form and its
/// applicability flag.
pub fn grad_l1_norm(
    grad: &LogitGradient,
    p_t: &ProbVector,
    p_prev: &ProbVector,
    alpha: f64,
) -> Result<GradL1Norm> {
    if grad.entries.len() != p_t.len() || p_t.len() != p_prev.len() {
        return Err(Error::Shape(format!(
            "l1 norm: lengths {} / {} / {}",
            grad.entries.len(),
            p_t.len(),
            p_prev.len()
        )));
    }
    let gt = grad.gt_index;
    let direct: f64 = grad.entries.iter().map(|g| g.abs()).sum();
    let closed_form =
        2.0 * (1.0 - p_t.get(gt)) - 2.0 * alpha * (1.0 - p_prev.get(gt));
    let bound = admissible_alpha_bound(p_t, p_prev, gt)?;
    Ok(GradL1Norm {
        direct,
        closed_form,
        identity_holds: alpha <= bound,
    })
}

/// Gradient rescaling factor `1 - alpha * (1 - p_prev_GT) / (1 - p_t_GT)`.
///
/// Undefined when the ground-truth probability has reached 1 exactly;
/// callers that aggregate over many examples treat that case as a
/// "converged" sentinel instead (see [`hard_example_report`]).
pub fn rescaling_factor(p_t_gt: f64, p_prev_gt: f64, alpha: f64) -> Result<f64> {
    for (name, v) in [("p_t_gt", p_t_gt), ("p_prev_gt", p_prev_gt)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Input(format!("{name} must be in [0, 1], got {v}")));
        }
    }
    if p_t_gt >= 1.0 {
        return Err(Error::Singularity(
            "rescaling factor undefined at p_t_GT = 1 (gamma_t = 0)".into(),
        ));
    }
    Ok(1.0 - alpha * ((1.0 - p_prev_gt) / (1.0 - p_t_gt)))
}

/// Largest `alpha` for which every non-ground-truth gradient entry stays
/// nonnegative: `min_{i != gt} p_t_i / p_prev_i`. Ratios with
/// `p_prev_i = 0` are treated as +inf so they never set the minimum.
pub fn admissible_alpha_bound(p_t: &ProbVector, p_prev: &ProbVector, gt: usize) -> Result<f64> {
    if p_t.len() != p_prev.len() {
        return Err(Error::Shape(format!(
            "bound: lengths {} / {}",
            p_t.len(),
            p_prev.len()
        )));
    }
    if gt >= p_t.len() {
        return Err(Error::Input(format!(
            "ground-truth index {gt} out of range for {} classes",
            p_t.len()
        )));
    }
    let mut bound = f64::INFINITY;
    for i in 0..p_t.len() {
        if i == gt {
            continue;
        }
        let denom = p_prev.get(i);
        let ratio = if denom == 0.0 {
            f64::INFINITY
        } else {
            p_t.get(i) / denom
        };
        bound = bound.min(ratio);
    }
    Ok(bound)
}

/// One example's rescaling state at one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescalingReport {
    pub example_id: u64,
    /// Epoch t at which the factor applies (t >= 2; the teacher is t-1).
    pub epoch: usize,
    /// `1 - p_t_GT`.
    pub gamma_t: f64,
    /// `1 - p_prev_GT`.
    pub gamma_prev: f64,
    /// Mixing weight in effect at epoch t.
    pub alpha: f64,
    /// `1 - alpha * gamma_prev / gamma_t`; `None` marks the converged
    /// sentinel `gamma_t = 0`, excluded from group means.
    pub factor: Option<f64>,
    /// `min_{i != gt} p_t_i / p_prev_i`; only available when full
    /// probability vectors were supplied, not when reconstructed from
    /// ground-truth-probability history.
    pub admissible_alpha_bound: Option<f64>,
}

impl RescalingReport {
    /// Build from full probability vectors (bound included).
    pub fn from_probs(
        example_id: u64,
        epoch: usize,
        p_t: &ProbVector,
        p_prev: &ProbVector,
        gt: usize,
        alpha: f64,
    ) -> Result<Self> {
        let bound = admissible_alpha_bound(p_t, p_prev, gt)?;
        Ok(Self::from_gt_probs(
            example_id,
            epoch,
            p_t.get(gt),
            p_prev.get(gt),
            alpha,
        )
        .with_bound(bound))
    }

    /// Build from ground-truth probabilities only, as recorded in training
    /// history.
    pub fn from_gt_probs(
        example_id: u64,
        epoch: usize,
        p_t_gt: f64,
        p_prev_gt: f64,
        alpha: f64,
    ) -> Self {
        let gamma_t = 1.0 - p_t_gt;
        let gamma_prev = 1.0 - p_prev_gt;
        let factor = if gamma_t > 0.0 {
            Some(1.0 - alpha * (gamma_prev / gamma_t))
        } else {
            None
        };
        Self {
            example_id,
            epoch,
            gamma_t,
            gamma_prev,
            alpha,
            factor,
            admissible_alpha_bound: None,
        }
    }

    fn with_bound(mut self, bound: f64) -> Self {
        self.admissible_alpha_bound = Some(bound);
        self
    }

    /// True when the prediction got worse: `gamma_prev < gamma_t`. The
    /// theory assumes this never happens on training data; the report
    /// counts occurrences instead of assuming them away.
    pub fn is_gamma_violation(&self) -> bool {
        self.gamma_prev < self.gamma_t
    }
}

/// One example's trajectory entry as logged by the trainer: end-of-epoch
/// prediction summary for a single (example, epoch) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleEpochRecord {
    pub example_id: u64,
    /// Probability assigned to the ground-truth class.
    pub gt_prob: f64,
    /// Maximum class probability (the confidence).
    pub max_prob: f64,
    /// Whether argmax equals the ground-truth label.
    pub correct: bool,
}

/// Hard/easy group label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleGroup {
    Hard,
    Easy,
}

impl std::fmt::Display for ExampleGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExampleGroup::Hard => write!(f, "hard"),
            ExampleGroup::Easy => write!(f, "easy"),
        }
    }
}

/// Per-epoch aggregate for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEpochRow {
    pub epoch: usize,
    pub group: ExampleGroup,
    pub mean_gt_prob: f64,
    pub mean_max_prob: f64,
    /// Mean factor over members with `gamma_t > 0`; `None` at epoch 1 (no
    /// teacher yet) or when every member has converged.
    pub mean_rescaling_factor: Option<f64>,
    pub n_examples: usize,
    /// Members excluded from the factor mean because `gamma_t = 0`.
    pub n_converged: usize,
    /// Members whose prediction got worse since the previous epoch.
    pub n_gamma_violations: usize,
}

/// Output of [`hard_example_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardExampleReport {
    /// An example is hard when it was correct in less than this fraction
    /// of epochs.
    pub threshold: f64,
    pub hard_ids: Vec<u64>,
    pub easy_ids: Vec<u64>,
    /// Two rows per epoch (hard then easy), in epoch order.
    pub rows: Vec<GroupEpochRow>,
    /// Per-example factors for epochs t >= 2.
    pub records: Vec<RescalingReport>,
}

impl HardExampleReport {
    /// CSV with columns
    /// `epoch,group,mean_gt_prob,mean_max_prob,mean_rescaling_factor,n_examples`.
    /// The factor cell is empty when undefined.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("epoch,group,mean_gt_prob,mean_max_prob,mean_rescaling_factor,n_examples\n");
        for row in &self.rows {
            let factor = row
                .mean_rescaling_factor
                .map(|f| f.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.epoch, row.group, row.mean_gt_prob, row.mean_max_prob, factor, row.n_examples
            ));
        }
        out
    }
}

/// Partition examples into hard/easy by correctness frequency and report
/// per-group per-epoch mean target probability, mean confidence, and mean
/// rescaling factor.
///
/// `history[t-1]` holds one record per example for epoch t (same id set
/// every epoch); `alpha_per_epoch[t-1]` is the mixing weight in effect at
/// epoch t. `hard_threshold` is the correctness fraction below which an
/// example counts as hard (0.5 mirrors "correct in less than half of the
/// epochs").
pub fn hard_example_report(
    history: &[Vec<ExampleEpochRecord>],
    alpha_per_epoch: &[f64],
    hard_threshold: f64,
) -> Result<HardExampleReport> {
    if history.is_empty() || history.iter().any(|e| e.is_empty()) {
        return Err(Error::Input("history must be non-empty".into()));
    }
    if alpha_per_epoch.len() != history.len() {
        return Err(Error::Input(format!(
            "{} alpha values for {} epochs",
            alpha_per_epoch.len(),
            history.len()
        )));
    }
    let n = history[0].len();
    if history.iter().any(|e| e.len() != n) {
        return Err(Error::Input(
            "every epoch must record the same number of examples".into(),
        ));
    }
    let total_epochs = history.len();

    // Correctness counts keyed by id; also verify the id set is stable.
    let mut correct_counts: std::collections::BTreeMap<u64, usize> =
        history[0].iter().map(|r| (r.example_id, 0)).collect();
    for epoch_records in history {
        for r in epoch_records {
            match correct_counts.get_mut(&r.example_id) {
                Some(c) => {
                    if r.correct {
                        *c += 1;
                    }
                }
                None => {
                    return Err(Error::Input(format!(
                        "example {} appears in a later epoch but not the first",
                        r.example_id
                    )))
                }
            }
        }
    }

    let mut hard_ids = Vec::new();
    let mut easy_ids = Vec::new();
    for (&id, &c) in &correct_counts {
        if (c as f64 / total_epochs as f64) < hard_threshold {
            hard_ids.push(id);
        } else {
            easy_ids.push(id);
        }
    }
    let is_hard: std::collections::BTreeMap<u64, bool> = correct_counts
        .keys()
        .map(|&id| (id, hard_ids.binary_search(&id).is_ok()))
        .collect();

    // Previous-epoch gt_prob per id, for the factor.
    let mut rows = Vec::with_capacity(2 * total_epochs);
    let mut records = Vec::new();
    let mut prev_gt: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
    for (e, epoch_records) in history.iter().enumerate() {
        let epoch = e + 1;
        let alpha = alpha_per_epoch[e];
        let mut acc = [GroupAcc::default(), GroupAcc::default()];
        for r in epoch_records {
            let g = usize::from(is_hard[&r.example_id]);
            acc[g].add_probs(r.gt_prob, r.max_prob);
            if epoch >= 2 {
                let report = RescalingReport::from_gt_probs(
                    r.example_id,
                    epoch,
                    r.gt_prob,
                    prev_gt[&r.example_id],
                    alpha,
                );
                acc[g].add_factor(&report);
                records.push(report);
            }
        }
        for (g, group) in [(1usize, ExampleGroup::Hard), (0usize, ExampleGroup::Easy)] {
            rows.push(acc[g].into_row(epoch, group));
        }
        for r in epoch_records {
            prev_gt.insert(r.example_id, r.gt_prob);
        }
    }

    Ok(HardExampleReport {
        threshold: hard_threshold,
        hard_ids,
        easy_ids,
        rows,
        records,
    })
}

#[derive(Default, Clone, Copy)]
struct GroupAcc {
    n: usize,
    gt_sum: f64,
    max_sum: f64,
    factor_sum: f64,
    factor_n: usize,
    converged: usize,
    violations: usize,
}

impl GroupAcc {
    fn add_probs(&mut self, gt: f64, max: f64) {
        self.n += 1;
        self.gt_sum += gt;
        self.max_sum += max;
    }

    fn add_factor(&mut self, report: &RescalingReport) {
        match report.factor {
            Some(f) => {
                self.factor_sum += f;
                self.factor_n += 1;
            }
            None => self.converged += 1,
        }
        if report.is_gamma_violation() {
            self.violations += 1;
        }
    }

    fn into_row(self, epoch: usize, group: ExampleGroup) -> GroupEpochRow {
        let denom = self.n.max(1) as f64;
        GroupEpochRow {
            epoch,
            group,
            mean_gt_prob: self.gt_sum / denom,
            mean_max_prob: self.max_sum / denom,
            mean_rescaling_factor: (self.factor_n > 0)
                .then(|| self.factor_sum / self.factor_n as f64),
            n_examples: self.n,
            n_converged: self.converged,
            n_gamma_violations: self.violations,
        }
    }
}
