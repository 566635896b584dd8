//! Accuracy and confidence-estimation metrics.
//!
//! Confidence is always the maximum class probability. ECE bins partition
//! (0, 1] into M half-open intervals `((m-1)/M, m/M]`, with an exact-zero
//! confidence assigned to the first bin. AURC is the mean of the risks at
//! every coverage level of the confidence-sorted record list, reported raw
//! (published tables usually scale it by 1e3).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LOG_CLAMP;
use crate::targets::ProbVector;

/// Default number of ECE bins.
pub const DEFAULT_ECE_BINS: usize = 15;

/// One model prediction with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub example_id: u64,
    pub probs: ProbVector,
    pub true_label: usize,
}

impl EvalRecord {
    pub fn new(example_id: u64, probs: ProbVector, true_label: usize) -> Result<Self> {
        if true_label >= probs.len() {
            return Err(Error::Input(format!(
                "label {true_label} out of range for {} classes",
                probs.len()
            )));
        }
        Ok(Self {
            example_id,
            probs,
            true_label,
        })
    }

    pub fn confidence(&self) -> f64 {
        self.probs.max_prob()
    }

    pub fn correct(&self) -> bool {
        self.probs.argmax() == self.true_label
    }
}

/// One reliability-diagram bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// Fraction correct within the bin; 0 for an empty bin.
    pub accuracy: f64,
    /// Mean confidence within the bin; 0 for an empty bin.
    pub mean_confidence: f64,
}

/// Full metrics bundle for one set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub top1_error: f64,
    /// Computed with k = min(5, K).
    pub top5_error: f64,
    pub nll: f64,
    pub ece: f64,
    pub aurc: f64,
    pub bins: Vec<ReliabilityBin>,
    /// `(coverage, risk)` pairs with coverage strictly increasing to 1.
    pub risk_coverage: Vec<(f64, f64)>,
}

impl MetricsReport {
    pub fn compute(records: &[EvalRecord], m_bins: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Input("metrics need at least one record".into()));
        }
        let k = records[0].probs.len();
        let bins = reliability_bins(records, m_bins)?;
        Ok(Self {
            n: records.len(),
            top1_error: topk_error(records, 1)?,
            top5_error: topk_error(records, 5.min(k))?,
            nll: nll(records)?,
            ece: ece_from_bins(&bins, records.len()),
            aurc: aurc(records)?,
            risk_coverage: risk_coverage(records)?,
            bins,
        })
    }
}

/// Class indices ordered by probability descending; equal probabilities
/// keep the lower class index first.
fn ranked_classes(probs: &ProbVector) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| {
        probs
            .get(b)
            .partial_cmp(&probs.get(a))
            .expect("probabilities are finite")
            .then(a.cmp(&b))
    });
    idx
}

/// Fraction of records whose true label is not among the k most probable
/// classes.
pub fn topk_error(records: &[EvalRecord], k: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Input("topk_error needs at least one record".into()));
    }
    let n_classes = records[0].probs.len();
    if k == 0 || k > n_classes {
        return Err(Error::Parameter(format!(
            "k must be in 1..={n_classes}, got {k}"
        )));
    }
    let mut wrong = 0usize;
    for r in records {
        if r.probs.len() != n_classes {
            return Err(Error::Shape("records have inconsistent class counts".into()));
        }
        let ranked = ranked_classes(&r.probs);
        if !ranked[..k].contains(&r.true_label) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / records.len() as f64)
}

/// Mean negative log-probability of the true label, clamped at 1e-12.
pub fn nll(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Input("nll needs at least one record".into()));
    }
    let mut total = 0.0;
    for r in records {
        total -= r.probs.get(r.true_label).max(LOG_CLAMP).ln();
    }
    Ok(total / records.len() as f64)
}

/// Bin index (0-based) for a confidence value: bin m covers
/// `((m-1)/M, m/M]`, with confidence exactly 0 in bin 1.
fn bin_index(confidence: f64, m_bins: usize) -> usize {
    if confidence <= 0.0 {
        return 0;
    }
    let idx = (confidence * m_bins as f64).ceil() as usize;
    idx.saturating_sub(1).min(m_bins - 1)
}

/// Per-bin count, accuracy, and mean confidence.
pub fn reliability_bins(records: &[EvalRecord], m_bins: usize) -> Result<Vec<ReliabilityBin>> {
    if records.is_empty() {
        return Err(Error::Input("reliability_bins needs records".into()));
    }
    if m_bins == 0 {
        return Err(Error::Parameter("bin count must be >= 1".into()));
    }
    let mut counts = vec![0usize; m_bins];
    let mut correct = vec![0usize; m_bins];
    let mut conf_sum = vec![0.0f64; m_bins];
    for r in records {
        let b = bin_index(r.confidence(), m_bins);
        counts[b] += 1;
        if r.correct() {
            correct[b] += 1;
        }
        conf_sum[b] += r.confidence();
    }
    Ok((0..m_bins)
        .map(|m| ReliabilityBin {
            low: m as f64 / m_bins as f64,
            high: (m + 1) as f64 / m_bins as f64,
            count: counts[m],
            accuracy: if counts[m] > 0 {
                correct[m] as f64 / counts[m] as f64
            } else {
                0.0
            },
            mean_confidence: if counts[m] > 0 {
                conf_sum[m] / counts[m] as f64
            } else {
                0.0
            },
        })
        .collect())
}

/// ECE recovered from a bin table: `(1/n) sum_m |B_m| |Acc - Conf|`.
pub fn ece_from_bins(bins: &[ReliabilityBin], n: usize) -> f64 {
    let mut sum = 0.0;
    for b in bins {
        if b.count > 0 {
            sum += b.count as f64 * (b.accuracy - b.mean_confidence).abs();
        }
    }
    sum / n as f64
}

/// Expected calibration error over M bins.
pub fn ece(records: &[EvalRecord], m_bins: usize) -> Result<f64> {
    let bins = reliability_bins(records, m_bins)?;
    Ok(ece_from_bins(&bins, records.len()))
}

/// Records ordered by confidence descending, ties by example id ascending.
fn confidence_order(records: &[EvalRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| {
        records[b]
            .confidence()
            .partial_cmp(&records[a].confidence())
            .expect("confidences are finite")
            .then(records[a].example_id.cmp(&records[b].example_id))
    });
    idx
}

/// Risk-coverage curve: for i = 1..n, the error rate among the i most
/// confident predictions, at coverage i/n.
pub fn risk_coverage(records: &[EvalRecord]) -> Result<Vec<(f64, f64)>> {
    if records.is_empty() {
        return Err(Error::Input("risk_coverage needs records".into()));
    }
    let order = confidence_order(records);
    let n = records.len();
    let mut curve = Vec::with_capacity(n);
    let mut errors = 0usize;
    for (i, &r) in order.iter().enumerate() {
        if !records[r].correct() {
            errors += 1;
        }
        curve.push(((i + 1) as f64 / n as f64, errors as f64 / (i + 1) as f64));
    }
    Ok(curve)
}

/// Area under the risk-coverage curve: the mean of the per-coverage risks.
pub fn aurc(records: &[EvalRecord]) -> Result<f64> {
    let curve = risk_coverage(records)?;
    let sum: f64 = curve.iter().map(|&(_, risk)| risk).sum();
    Ok(sum / curve.len() as f64)
}

/// Probability-averaging ensemble: the arithmetic mean of one prediction
/// per model, for a single example.
pub fn ensemble_predict(model_outputs: &[ProbVector]) -> Result<ProbVector> {
    let first = model_outputs
        .first()
        .ok_or_else(|| Error::Input("ensemble needs at least one model output".into()))?;
    let k = first.len();
    if model_outputs.iter().any(|p| p.len() != k) {
        return Err(Error::Shape("ensemble members disagree on class count".into()));
    }
    let n = model_outputs.len() as f64;
    let mut mean = vec![0.0; k];
    for p in model_outputs {
        for (m, v) in mean.iter_mut().zip(p.entries()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    ProbVector::new(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: u64, probs: Vec<f64>, label: usize) -> EvalRecord {
        EvalRecord::new(id, ProbVector::new(probs).unwrap(), label).unwrap()
    }

    /// Four records with confidences 0.9, 0.8, 0.6, 0.3 and correctness
    /// 1, 1, 0, 0 — the worked calibration example.
    fn calibration_fixture() -> Vec<EvalRecord> {
        vec![
            rec(0, vec![0.9, 0.05, 0.03, 0.02], 0),
            rec(1, vec![0.8, 0.1, 0.06, 0.04], 0),
            rec(2, vec![0.6, 0.2, 0.15, 0.05], 1),
            rec(3, vec![0.3, 0.25, 0.25, 0.2], 2),
        ]
    }

    #[test]
    fn topk_counting() {
        let records = vec![
            rec(0, vec![0.7, 0.2, 0.1], 0),
            rec(1, vec![0.1, 0.6, 0.3], 1),
            rec(2, vec![0.5, 0.3, 0.2], 0),
            rec(3, vec![0.4, 0.4, 0.2], 2),
        ];
        assert_eq!(topk_error(&records, 1).unwrap(), 0.25);
        assert_eq!(topk_error(&records, 3).unwrap(), 0.0); // k = K
        assert!(matches!(topk_error(&records, 4), Err(Error::Parameter(_))));
    }

    #[test]
    fn topk_all_argmax_correct_is_zero() {
        let records = vec![rec(0, vec![0.9, 0.1], 0), rec(1, vec![0.2, 0.8], 1)];
        assert_eq!(topk_error(&records, 1).unwrap(), 0.0);
    }

    #[test]
    fn topk_tie_break_prefers_lower_index() {
        // Probabilities tie between classes 0 and 1; k=1 keeps class 0.
        let records = vec![rec(0, vec![0.4, 0.4, 0.2], 1)];
        assert_eq!(topk_error(&records, 1).unwrap(), 1.0);
        let records = vec![rec(0, vec![0.4, 0.4, 0.2], 0)];
        assert_eq!(topk_error(&records, 1).unwrap(), 0.0);
    }

    #[test]
    fn nll_values() {
        let records = vec![rec(0, vec![1.0, 0.0], 0)];
        assert_eq!(nll(&records).unwrap(), 0.0);

        let records = vec![rec(0, vec![0.5, 0.5], 0)];
        assert!((nll(&records).unwrap() - 2.0_f64.ln()).abs() < 1e-15);

        let records = vec![rec(0, vec![0.5, 0.5], 0), rec(1, vec![0.25, 0.75], 0)];
        let expected = (2.0_f64.ln() + 4.0_f64.ln()) / 2.0;
        assert!((nll(&records).unwrap() - expected).abs() < 1e-15);
        assert!((nll(&records).unwrap() - 1.0397).abs() < 1e-4);

        assert!(matches!(nll(&[]), Err(Error::Input(_))));
    }

    #[test]
    fn ece_worked_example() {
        // M=2: bin (0.5,1] holds 0.9, 0.8, 0.6 with accuracy 2/3; bin
        // (0,0.5] holds 0.3 with accuracy 0.
        let e = ece(&calibration_fixture(), 2).unwrap();
        assert!((e - 0.15).abs() < 1e-12, "{e}");
    }

    #[test]
    fn ece_perfect_confidence_and_accuracy() {
        let records = vec![rec(0, vec![1.0, 0.0], 0), rec(1, vec![0.0, 1.0], 1)];
        assert_eq!(ece(&records, 15).unwrap(), 0.0);
    }

    #[test]
    fn ece_single_matched_bin() {
        // M=1: accuracy 0.5, mean confidence 0.5 -> ECE 0.
        let records = vec![rec(0, vec![0.5, 0.5], 0), rec(1, vec![0.5, 0.5], 1)];
        // argmax ties to class 0: first record correct, second wrong.
        let e = ece(&records, 1).unwrap();
        assert!((e - 0.0).abs() < 1e-15);
    }

    #[test]
    fn reliability_bins_worked_example() {
        let bins = reliability_bins(&calibration_fixture(), 2).unwrap();
        assert_eq!(bins.len(), 2);
        assert_eq!(bins[0].count, 1);
        assert_eq!(bins[0].accuracy, 0.0);
        assert!((bins[0].mean_confidence - 0.3).abs() < 1e-15);
        assert_eq!(bins[1].count, 3);
        assert!((bins[1].accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!((bins[1].mean_confidence - (0.9 + 0.8 + 0.6) / 3.0).abs() < 1e-15);

        // ECE is recoverable from the table exactly.
        let direct = ece(&calibration_fixture(), 2).unwrap();
        let via_bins = ece_from_bins(&bins, 4);
        assert_eq!(direct, via_bins);
    }

    #[test]
    fn reliability_bins_uniform_confidence() {
        let records = vec![rec(0, vec![0.7, 0.3], 0), rec(1, vec![0.7, 0.3], 1)];
        let bins = reliability_bins(&records, 10).unwrap();
        assert_eq!(bins.iter().filter(|b| b.count > 0).count(), 1);
    }

    #[test]
    fn bin_boundaries_are_half_open() {
        // Confidence exactly 0.5 with M=2 belongs to the first bin (0, 0.5].
        assert_eq!(bin_index(0.5, 2), 0);
        assert_eq!(bin_index(0.500001, 2), 1);
        assert_eq!(bin_index(1.0, 2), 1);
        assert_eq!(bin_index(0.0, 2), 0);
    }

    #[test]
    fn aurc_worked_example() {
        let records = vec![
            rec(0, vec![0.9, 0.1], 0),  // confident, correct
            rec(1, vec![0.8, 0.2], 1),  // less confident, incorrect
        ];
        assert!((aurc(&records).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn aurc_extremes() {
        let all_correct = vec![rec(0, vec![0.9, 0.1], 0), rec(1, vec![0.6, 0.4], 0)];
        assert_eq!(aurc(&all_correct).unwrap(), 0.0);
        let all_wrong = vec![rec(0, vec![0.9, 0.1], 1), rec(1, vec![0.6, 0.4], 1)];
        assert_eq!(aurc(&all_wrong).unwrap(), 1.0);
    }

    #[test]
    fn aurc_ties_break_by_example_id() {
        // Same confidence: id order decides. Putting the error first at the
        // same confidence raises the early risks.
        let wrong_first = vec![rec(0, vec![0.8, 0.2], 1), rec(1, vec![0.8, 0.2], 0)];
        let right_first = vec![rec(0, vec![0.8, 0.2], 0), rec(1, vec![0.8, 0.2], 1)];
        assert!(aurc(&wrong_first).unwrap() > aurc(&right_first).unwrap());
    }

    #[test]
    fn risk_coverage_shape() {
        let records = calibration_fixture();
        let curve = risk_coverage(&records).unwrap();
        assert_eq!(curve.len(), 4);
        assert_eq!(curve.last().unwrap().0, 1.0);
        for pair in curve.windows(2) {
            assert!(pair[1].0 > pair[0].0);
        }
        // Risk at full coverage equals top-1 error.
        let top1 = topk_error(&records, 1).unwrap();
        assert_eq!(curve.last().unwrap().1, top1);
    }

    #[test]
    fn ensemble_basics() {
        let a = ProbVector::new(vec![1.0, 0.0]).unwrap();
        let b = ProbVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(ensemble_predict(std::slice::from_ref(&a)).unwrap(), a);
        let mean = ensemble_predict(&[a.clone(), b]).unwrap();
        assert_eq!(mean.entries(), &[0.5, 0.5]);
        let same = ProbVector::new(vec![0.2, 0.8]).unwrap();
        let m = ensemble_predict(&[same.clone(), same.clone(), same.clone()]).unwrap();
        for (x, y) in m.entries().iter().zip(same.entries()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(ensemble_predict(&[]).is_err());
    }

    #[test]
    fn metrics_report_is_self_consistent() {
        let records = calibration_fixture();
        let report = MetricsReport::compute(&records, 2).unwrap();
        assert_eq!(report.n, 4);
        assert_eq!(report.top1_error, topk_error(&records, 1).unwrap());
        assert_eq!(report.ece, ece(&records, 2).unwrap());
        assert_eq!(report.aurc, aurc(&records).unwrap());
        let bin_total: usize = report.bins.iter().map(|b| b.count).sum();
        assert_eq!(bin_total, 4);
    }

    proptest! {
        #[test]
        fn ece_in_unit_interval_and_bins_consistent(
            seed_probs in proptest::collection::vec(
                (proptest::collection::vec(0.01_f64..1.0, 3), 0usize..3),
                1..40
            ),
            m in 1usize..20,
        ) {
            let records: Vec<EvalRecord> = seed_probs
                .iter()
                .enumerate()
                .map(|(i, (raw, label))| {
                    let s: f64 = raw.iter().sum();
                    rec(i as u64, raw.iter().map(|v| v / s).collect(), *label)
                })
                .collect();
            let direct = ece(&records, m).unwrap();
            prop_assert!((0.0..=1.0).contains(&direct));
            let bins = reliability_bins(&records, m).unwrap();
            let via = ece_from_bins(&bins, records.len());
            prop_assert_eq!(direct, via);
            let total: usize = bins.iter().map(|b| b.count).sum();
            prop_assert_eq!(total, records.len());
        }

        #[test]
        fn topk_monotone_in_k(
            seed_probs in proptest::collection::vec(
                (proptest::collection::vec(0.01_f64..1.0, 4), 0usize..4),
                1..30
            ),
        ) {
            let records: Vec<EvalRecord> = seed_probs
                .iter()
                .enumerate()
                .map(|(i, (raw, label))| {
                    let s: f64 = raw.iter().sum();
                    rec(i as u64, raw.iter().map(|v| v / s).collect(), *label)
                })
                .collect();
            let mut prev = 1.0;
            for k in 1..=4 {
                let e = topk_error(&records, k).unwrap();
                prop_assert!(e <= prev + 1e-15);
                prev = e;
            }
            prop_assert_eq!(topk_error(&records, 4).unwrap(), 0.0);
        }

        #[test]
        fn aurc_oracle_ordering_is_minimal(
            n_correct in 1usize..10,
            n_wrong in 1usize..10,
            swap in 0usize..100,
        ) {
            // Oracle ordering: all correct predictions above all errors.
            let mut records = Vec::new();
            for i in 0..n_correct {
                records.push(rec(i as u64, vec![0.9, 0.1], 0));
            }
            for i in 0..n_wrong {
                records.push(rec((n_correct + i) as u64, vec![0.6, 0.4], 1));
            }
            let oracle = aurc(&records).unwrap();

            // Promote one error above one correct prediction.
            let ci = swap % n_correct;
            let wi = swap % n_wrong;
            records[ci] = rec(ci as u64, vec![0.6, 0.4], 0);
            records[n_correct + wi] = rec((n_correct + wi) as u64, vec![0.9, 0.1], 1);
            let permuted = aurc(&records).unwrap();
            prop_assert!(permuted >= oracle - 1e-15);
        }

        #[test]
        fn ensemble_stays_on_simplex(
            raws in proptest::collection::vec(
                proptest::collection::vec(0.01_f64..1.0, 4),
                1..6
            ),
        ) {
            let probs: Vec<ProbVector> = raws
                .iter()
                .map(|raw| {
                    let s: f64 = raw.iter().sum();
                    ProbVector::new(raw.iter().map(|v| v / s).collect()).unwrap()
                })
                .collect();
            let mean = ensemble_predict(&probs).unwrap();
            prop_assert!((mean.entries().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
