//! Minimal dense feed-forward classifier.
//!
//! The model is a stack of affine layers with rectifier activations on the
//! hidden layers and identity on the output, producing logits. Everything is
//! `f64`; the gradient-theory checks elsewhere in the crate depend on that
//! precision. All functions here are pure: parameters are only ever mutated
//! by the optimizer in the trainer.
//!
//! Gradients come from exact backprop of the soft-target cross-entropy
//! `H(q, softmax(z))` averaged over a batch, and are verified against a
//! central finite-difference oracle.

use rand::distributions::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::targets::ProbVector;
use crate::util::{seeded_rng, STREAM_INIT};

/// Arguments of `log` are clamped to at least this value so that zero
/// probabilities never produce an infinite loss. Applied uniformly across
/// the crate.
pub const LOG_CLAMP: f64 = 1e-12;

/// Row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("matrix contains non-finite values".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Build a matrix from one slice per row.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("rows have inconsistent lengths".into()));
        }
        let mut values = Vec::with_capacity(n * d);
        for r in rows {
            values.extend_from_slice(r);
        }
        Self::new(n, d, values)
    }
}

/// Weights and biases of the classifier.
///
/// `layer_dims` is `[input, hidden..., K]`. Weight `l` has shape
/// `(layer_dims[l+1], layer_dims[l])` in row-major order, so logits for an
/// input row `x` are `W_last * relu(... relu(W_0 x + b_0) ...) + b_last`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    weights: Vec<RealMatrix>,
    biases: Vec<Vec<f64>>,
}

impl MlpParams {
    /// Seeded uniform init in `[-sqrt(6/(fan_in+fan_out)), +sqrt(..)]`;
    /// biases start at zero.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        Self::validate_dims(layer_dims)?;
        let mut rng = seeded_rng(seed, STREAM_INIT);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let values: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            weights.push(RealMatrix::new(fan_out, fan_in, values)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Build from explicit weights/biases, validating shapes.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<RealMatrix>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::validate_dims(&layer_dims)?;
        let n_layers = layer_dims.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(Error::Shape(format!(
                "expected {} weight/bias pairs, got {}/{}",
                n_layers,
                weights.len(),
                biases.len()
            )));
        }
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.rows() != layer_dims[l + 1] || w.cols() != layer_dims[l] {
                return Err(Error::Shape(format!(
                    "layer {} weight is {}x{}, expected {}x{}",
                    l,
                    w.rows(),
                    w.cols(),
                    layer_dims[l + 1],
                    layer_dims[l]
                )));
            }
            if b.len() != layer_dims[l + 1] {
                return Err(Error::Shape(format!(
                    "layer {} bias has length {}, expected {}",
                    l,
                    b.len(),
                    layer_dims[l + 1]
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input("bias contains non-finite values".into()));
            }
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
        })
    }

    fn validate_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 {
            return Err(Error::Shape(
                "layer_dims needs at least input and output dims".into(),
            ));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Shape("layer dims must be positive".into()));
        }
        if layer_dims[layer_dims.len() - 1] < 2 {
            return Err(Error::Shape("output layer needs K >= 2 classes".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_classes(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 1]
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[RealMatrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [RealMatrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn n_parameters(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.values().len())
            .sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }
}

/// Per-parameter values mirroring the shape of an [`MlpParams`]. Used both
/// for gradients and for optimizer velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<RealMatrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params
                .weights
                .iter()
                .map(|w| RealMatrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn same_shape(&self, params: &MlpParams) -> bool {
        self.weights.len() == params.weights.len()
            && self.biases.len() == params.biases.len()
            && self
                .weights
                .iter()
                .zip(&params.weights)
                .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
            && self
                .biases
                .iter()
                .zip(&params.biases)
                .all(|(a, b)| a.len() == b.len())
    }
}

/// Forward pass: one logit row per input row.
///
/// Each row is processed independently with a fixed accumulation order, so
/// the logits for an example do not depend on which batch it appears in.
pub fn forward(params: &MlpParams, batch: &RealMatrix) -> Result<RealMatrix> {
    if batch.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} columns, model expects {}",
            batch.cols(),
            params.input_dim()
        )));
    }
    let k = params.n_classes();
    let mut out = RealMatrix::zeros(batch.rows(), k);
    let mut buf = Vec::new();
    for r in 0..batch.rows() {
        forward_row(params, batch.row(r), &mut buf);
        out.values_mut()[r * k..(r + 1) * k].copy_from_slice(&buf);
    }
    Ok(out)
}

/// Forward pass for a single input row; `logits` is overwritten.
fn forward_row(params: &MlpParams, x: &[f64], logits: &mut Vec<f64>) {
    let mut a: Vec<f64> = x.to_vec();
    let last = params.n_layers() - 1;
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let mut z = vec![0.0; w.rows()];
        for (i, zi) in z.iter_mut().enumerate() {
            let wrow = w.row(i);
            let mut acc = b[i];
            for (wij, aj) in wrow.iter().zip(&a) {
                acc += wij * aj;
            }
            *zi = acc;
        }
        if l < last {
            for v in &mut z {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        a = z;
    }
    logits.clear();
    logits.extend_from_slice(&a);
}

/// Temperature-scaled softmax.
///
/// Stabilized by max-subtraction, which also makes the result invariant to
/// adding a constant to all logits.
pub fn softmax_tau(logits: &[f64], tau: f64) -> Result<ProbVector> {
    if tau <= 0.0 || tau.is_nan() {
        return Err(Error::Parameter(format!("tau must be > 0, got {tau}")));
    }
    if logits.is_empty() {
        return Err(Error::Shape("softmax of empty logit vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("softmax input contains non-finite logits".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|z| ((z - max) / tau).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for e in &mut exps {
        *e /= sum;
    }
    Ok(ProbVector::new_unchecked(exps))
}

/// Plain softmax (`tau = 1`).
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    softmax_tau(logits, 1.0)
}

/// Cross-entropy `H(q, p) = -sum_i q_i log p_i`, with `p_i` clamped to
/// [`LOG_CLAMP`]. Linear in `q`.
pub fn cross_entropy(target: &ProbVector, pred: &ProbVector) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::Shape(format!(
            "cross_entropy: target has {} classes, pred has {}",
            target.len(),
            pred.len()
        )));
    }
    let mut h = 0.0;
    for (q, p) in target.entries().iter().zip(pred.entries()) {
        h -= q * p.max(LOG_CLAMP).ln();
    }
    Ok(h)
}

/// Gradient of `H(q, softmax(z))` with respect to the logits `z`: exactly
/// `p - q` where `p = softmax(z)`.
pub fn softmax_ce_logit_grad(logits: &[f64], target: &ProbVector) -> Result<Vec<f64>> {
    if logits.len() != target.len() {
        return Err(Error::Shape(format!(
            "logit gradient: {} logits vs {} target classes",
            logits.len(),
            target.len()
        )));
    }
    let p = softmax(logits)?;
    Ok(p
        .entries()
        .iter()
        .zip(target.entries())
        .map(|(pi, qi)| pi - qi)
        .collect())
}

/// Mean soft-target cross-entropy loss over a batch:
/// `(1/B) sum_b H(q_b, softmax(z_b))`.
pub fn batch_loss(params: &MlpParams, batch: &RealMatrix, targets: &[ProbVector]) -> Result<f64> {
    check_target_shapes(params, batch, targets)?;
    let logits = forward(params, batch)?;
    let mut total = 0.0;
    for (r, q) in targets.iter().enumerate() {
        let p = softmax(logits.row(r))?;
        total += cross_entropy(q, &p)?;
    }
    Ok(total / batch.rows() as f64)
}

fn check_target_shapes(
    params: &MlpParams,
    batch: &RealMatrix,
    targets: &[ProbVector],
) -> Result<()> {
    if targets.len() != batch.rows() {
        return Err(Error::Shape(format!(
            "{} target rows for a batch of {}",
            targets.len(),
            batch.rows()
        )));
    }
    let k = params.n_classes();
    if targets.iter().any(|t| t.len() != k) {
        return Err(Error::Shape(format!("targets must have {k} classes")));
    }
    Ok(())
}

/// Exact backprop of [`batch_loss`]. The logit-layer gradient per example is
/// `(p - q) / B`; hidden layers propagate through the rectifier mask.
pub fn backward(
    params: &MlpParams,
    batch: &RealMatrix,
    soft_targets: &[ProbVector],
) -> Result<GradientSet> {
    if batch.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} columns, model expects {}",
            batch.cols(),
            params.input_dim()
        )));
    }
    check_target_shapes(params, batch, soft_targets)?;

    let n_layers = params.n_layers();
    let inv_b = 1.0 / batch.rows() as f64;
    let mut grads = GradientSet::zeros_like(params);

    // Per-example accumulation keeps results independent of batch grouping.
    for (r, target) in soft_targets.iter().enumerate() {
        let x = batch.row(r);

        // Forward, keeping post-activation values per layer.
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        activations.push(x.to_vec());
        for l in 0..n_layers {
            let w = &params.weights[l];
            let b = &params.biases[l];
            let prev = &activations[l];
            let mut z = vec![0.0; w.rows()];
            for (i, zi) in z.iter_mut().enumerate() {
                let mut acc = b[i];
                for (wij, aj) in w.row(i).iter().zip(prev) {
                    acc += wij * aj;
                }
                *zi = acc;
            }
            if l < n_layers - 1 {
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(z);
        }

        let logits = &activations[n_layers];
        let mut delta: Vec<f64> = softmax_ce_logit_grad(logits, target)?
            .into_iter()
            .map(|g| g * inv_b)
            .collect();

        for l in (0..n_layers).rev() {
            let w = &params.weights[l];
            let prev = &activations[l];
            {
                let gw = &mut grads.weights[l];
                let gb = &mut grads.biases[l];
                for (i, di) in delta.iter().enumerate() {
                    gb[i] += di;
                    let grow = &mut gw.values_mut()[i * prev.len()..(i + 1) * prev.len()];
                    for (g, aj) in grow.iter_mut().zip(prev) {
                        *g += di * aj;
                    }
                }
            }
            if l > 0 {
                // delta_prev = (W^T delta) masked by the rectifier: the
                // stored activation is already rectified, so a zero entry
                // means the unit was clipped (derivative 0 at z <= 0).
                let mut next = vec![0.0; w.cols()];
                for (i, di) in delta.iter().enumerate() {
                    for (j, wij) in w.row(i).iter().enumerate() {
                        next[j] += wij * di;
                    }
                }
                for (nj, aj) in next.iter_mut().zip(prev) {
                    if *aj <= 0.0 {
                        *nj = 0.0;
                    }
                }
                delta = next;
            }
        }
    }
    Ok(grads)
}

/// Central difference `(f(x+h) - f(x-h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Independent gradient oracle: central finite differences of [`batch_loss`]
/// with respect to every parameter. Slow by construction; used to verify
/// [`backward`].
pub fn finite_difference_oracle(
    params: &MlpParams,
    batch: &RealMatrix,
    soft_targets: &[ProbVector],
    h: f64,
) -> Result<GradientSet> {
    if h <= 0.0 || h.is_nan() {
        return Err(Error::Parameter(format!("step size h must be > 0, got {h}")));
    }
    check_target_shapes(params, batch, soft_targets)?;
    let mut work = params.clone();
    let mut grads = GradientSet::zeros_like(params);
    for l in 0..params.n_layers() {
        for idx in 0..params.weights[l].values().len() {
            let base = params.weights[l].values()[idx];
            grads.weights[l].values_mut()[idx] = central_difference(
                |v| {
                    work.weights_mut()[l].values_mut()[idx] = v;
                    let loss = batch_loss(&work, batch, soft_targets).expect("shapes verified");
                    work.weights_mut()[l].values_mut()[idx] = base;
                    loss
                },
                base,
                h,
            );
        }
        for idx in 0..params.biases[l].len() {
            let base = params.biases[l][idx];
            grads.biases[l][idx] = central_difference(
                |v| {
                    work.biases_mut()[l][idx] = v;
                    let loss = batch_loss(&work, batch, soft_targets).expect("shapes verified");
                    work.biases_mut()[l][idx] = base;
                    loss
                },
                base,
                h,
            );
        }
    }
    Ok(grads)
}
