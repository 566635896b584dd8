//! Shared fixtures and independent metric oracles for the integration
//! suites.

// Each integration test target compiles this module separately and uses a
// different subset of it.
#![allow(dead_code)]

use pskd::data::{gen_blobs, gen_spirals, Dataset};
use pskd::metrics::EvalRecord;
use pskd::targets::{ProbVector, SofteningMethod};
use pskd::trainer::{AlphaMode, TeacherStrategy, TrainConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Spiral task used by the mining and directional experiments: three arms,
/// 60 points per class, coordinate noise 0.1. The points near the origin
/// are where all arms meet, so a handful of examples stay hard for the
/// whole run.
pub fn spiral_dataset() -> Dataset {
    gen_spirals(7, 3, 60, 0.1).unwrap()
}

/// Training recipe for the spiral experiments: a net big enough to overfit
/// the 90-example training split, no weight decay, and half the data held
/// out so validation metrics are stable.
pub fn spiral_config(seed: u64, method: SofteningMethod, mode: AlphaMode) -> TrainConfig {
    TrainConfig {
        method,
        total_epochs: 60,
        batch_size: 8,
        lr_initial: 0.1,
        lr_decay_factor: 0.1,
        lr_decay_epochs: vec![30, 45],
        momentum: 0.9,
        weight_decay: 0.0,
        seed,
        teacher_strategy: TeacherStrategy::Snapshot,
        hidden_dims: vec![128, 128],
        val_fraction: 0.5,
        alpha_mode: mode,
        standardize: true,
        per_example_log: true,
        cache_dir: None,
    }
}

/// Blob task for the equivalence and baseline-comparison runs: three
/// overlapping Gaussian clusters, 600 points.
pub fn blob_dataset() -> Dataset {
    gen_blobs(29, 3, 200, 2, 2.0).unwrap()
}

/// Single-hidden-layer recipe for the blob runs.
pub fn blob_config(seed: u64, method: SofteningMethod) -> TrainConfig {
    TrainConfig {
        method,
        total_epochs: 60,
        batch_size: 32,
        lr_initial: 0.1,
        lr_decay_factor: 0.1,
        lr_decay_epochs: vec![30, 45],
        momentum: 0.9,
        weight_decay: 0.0,
        seed,
        teacher_strategy: TeacherStrategy::Snapshot,
        hidden_dims: vec![64],
        val_fraction: 0.2,
        alpha_mode: AlphaMode::LinearGrowth,
        standardize: true,
        per_example_log: false,
        cache_dir: None,
    }
}

/// Random interior point of the K-simplex.
pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> ProbVector {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    ProbVector::new(raw.into_iter().map(|v| v / s).collect()).unwrap()
}

/// Brute-force expected calibration error, straight from the definition:
/// for each bin m = 1..M, scan all records for confidence in
/// ((m-1)/M, m/M] (confidence 0 goes to bin 1), average accuracy and
/// confidence within the bin, and sum |B_m| * |Acc - Conf| / n.
pub fn ece_brute_force(records: &[EvalRecord], m_bins: usize) -> f64 {
    let n = records.len();
    let mut sum = 0.0;
    for m in 1..=m_bins {
        let low = (m - 1) as f64 / m_bins as f64;
        let high = m as f64 / m_bins as f64;
        let members: Vec<&EvalRecord> = records
            .iter()
            .filter(|r| {
                let c = r.confidence();
                if c <= 0.0 {
                    m == 1
                } else {
                    c > low && c <= high
                }
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let count = members.len();
        let mut correct = 0usize;
        let mut conf_sum = 0.0;
        for r in &members {
            if r.correct() {
                correct += 1;
            }
            conf_sum += r.confidence();
        }
        let acc = correct as f64 / count as f64;
        let conf = conf_sum / count as f64;
        sum += count as f64 * (acc - conf).abs();
    }
    sum / n as f64
}

/// Brute-force AURC: for every coverage level i = 1..n, select the i most
/// confident records from scratch (ties by example id) and compute the
/// error rate among them; average the risks.
pub fn aurc_brute_force(records: &[EvalRecord]) -> f64 {
    let n = records.len();
    let mut risk_sum = 0.0;
    for i in 1..=n {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            records[b]
                .confidence()
                .partial_cmp(&records[a].confidence())
                .unwrap()
                .then(records[a].example_id.cmp(&records[b].example_id))
        });
        let mut errors = 0usize;
        for &r in order.iter().take(i) {
            if !records[r].correct() {
                errors += 1;
            }
        }
        risk_sum += errors as f64 / i as f64;
    }
    risk_sum / n as f64
}
