//! Minimal dense feed-forward network with exact reverse-mode gradients.
//!
//! The model is deliberately small and auditable: flat `f64` parameter
//! vectors, hand-written backprop, no framework. Mask learning only ever
//! needs the loss and its gradient at an averaged weight vector, so this is
//! the entire differentiable substrate of the crate.
//!
//! Parameter flattening order is fixed and load-bearing (checkpoint files
//! depend on it): layer by layer, the weight matrix first in row-major
//! `(out_dim, in_dim)` order (`w[o * in_dim + i]`), then the biases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, CounterRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropySoftmax,
    Mse,
    LogisticBinary,
}

/// Architecture description: layer widths, hidden activation, loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub loss_kind: LossKind,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, loss_kind: LossKind) -> Result<Self> {
        let spec = MlpSpec {
            layer_sizes,
            activation,
            loss_kind,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "layer_sizes needs at least input and output ({} given)",
                self.layer_sizes.len()
            )));
        }
        if let Some(pos) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("layer_sizes[{pos}] must be >= 1")));
        }
        match self.loss_kind {
            LossKind::Mse | LossKind::LogisticBinary if self.output_dim() != 1 => {
                Err(Error::Config(format!(
                    "{:?} requires a single output unit, got {}",
                    self.loss_kind,
                    self.output_dim()
                )))
            }
            LossKind::CrossEntropySoftmax if self.output_dim() < 2 => Err(Error::Config(
                "cross_entropy_softmax requires >= 2 output units".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Total parameter count: sum over layers of `in*out + out`.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// (in_dim, out_dim) of layer `l`.
    fn layer_dims(&self, l: usize) -> (usize, usize) {
        (self.layer_sizes[l], self.layer_sizes[l + 1])
    }

    /// Offset of layer `l`'s weights in the flat parameter vector.
    fn layer_offset(&self, l: usize) -> usize {
        (0..l).map(|i| self.layer_sizes[i] * self.layer_sizes[i + 1] + self.layer_sizes[i + 1]).sum()
    }
}

/// Flat parameter vector; every entry finite by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    values: Vec<f64>,
}

impl WeightVector {
    pub fn zeros(dim: usize) -> Self {
        WeightVector {
            values: vec![0.0; dim],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("weight vector entry {pos}"),
            });
        }
        Ok(WeightVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// self += scale * other
    pub fn axpy(&mut self, scale: f64, other: &WeightVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn dot(&self, other: &WeightVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn l2_distance(&self, other: &WeightVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_finite(&self, context: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }
}

/// Labels are class indices for classification losses, raw values for MSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labels {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(v) => v.len(),
            Labels::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dataset split: n rows of p features plus labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    features: Vec<f64>,
    labels: Labels,
    n: usize,
    p: usize,
    max_feature_norm: f64,
}

impl DatasetSplit {
    pub fn new(features: Vec<f64>, labels: Labels, n: usize, p: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("dataset needs at least one sample".into()));
        }
        if features.len() != n * p {
            return Err(Error::Config(format!(
                "feature buffer length {} != n*p = {}",
                features.len(),
                n * p
            )));
        }
        if labels.len() != n {
            return Err(Error::Config(format!(
                "label count {} != n = {}",
                labels.len(),
                n
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("feature entry {pos}"),
            });
        }
        let max_feature_norm = (0..n)
            .map(|i| {
                features[i * p..(i + 1) * p]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        Ok(DatasetSplit {
            features,
            labels,
            n,
            p,
            max_feature_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.p
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    /// Largest row norm max_i ||x_i||_2; feeds Lipschitz/smoothness estimates.
    pub fn max_feature_norm(&self) -> f64 {
        self.max_feature_norm
    }

    /// Owned copy of rows `[0, m)`; used for fixed evaluation subsets.
    pub fn head(&self, m: usize) -> Result<DatasetSplit> {
        let m = m.min(self.n);
        let features = self.features[..m * self.p].to_vec();
        let labels = match &self.labels {
            Labels::Classes(v) => Labels::Classes(v[..m].to_vec()),
            Labels::Values(v) => Labels::Values(v[..m].to_vec()),
        };
        DatasetSplit::new(features, labels, m, self.p)
    }

    /// Owned copy of the given rows.
    pub fn select(&self, rows: &[usize]) -> Result<DatasetSplit> {
        let mut features = Vec::with_capacity(rows.len() * self.p);
        for &r in rows {
            features.extend_from_slice(self.feature_row(r));
        }
        let labels = match &self.labels {
            Labels::Classes(v) => Labels::Classes(rows.iter().map(|&r| v[r]).collect()),
            Labels::Values(v) => Labels::Values(rows.iter().map(|&r| v[r]).collect()),
        };
        DatasetSplit::new(features, labels, rows.len(), self.p)
    }

    /// Replace row `i`'s features and label.
    pub fn replace_sample(&mut self, i: usize, features: &[f64], label_class: Option<usize>, label_value: Option<f64>) -> Result<()> {
        if i >= self.n {
            return Err(Error::Config(format!("sample index {i} out of range (n={})", self.n)));
        }
        if features.len() != self.p {
            return Err(Error::Config(format!(
                "replacement feature dim {} != p = {}",
                features.len(),
                self.p
            )));
        }
        self.features[i * self.p..(i + 1) * self.p].copy_from_slice(features);
        match (&mut self.labels, label_class, label_value) {
            (Labels::Classes(v), Some(c), _) => v[i] = c,
            (Labels::Values(v), _, Some(x)) => v[i] = x,
            _ => return Err(Error::Config("replacement label kind mismatch".into())),
        }
        self.max_feature_norm = (0..self.n)
            .map(|r| self.feature_row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok(())
    }

    fn check_against(&self, spec: &MlpSpec) -> Result<()> {
        if self.p != spec.input_dim() {
            return Err(Error::DimensionMismatch {
                layer: 0,
                detail: format!(
                    "feature dim {} != input layer width {}",
                    self.p,
                    spec.input_dim()
                ),
            });
        }
        match (&self.labels, spec.loss_kind) {
            (Labels::Classes(v), LossKind::CrossEntropySoftmax) => {
                let out = spec.output_dim();
                if let Some(&c) = v.iter().find(|&&c| c >= out) {
                    return Err(Error::Config(format!(
                        "class index {c} >= output dim {out}"
                    )));
                }
                Ok(())
            }
            (Labels::Classes(v), LossKind::LogisticBinary) => {
                if let Some(&c) = v.iter().find(|&&c| c >= 2) {
                    return Err(Error::Config(format!(
                        "logistic_binary labels must be 0/1, found {c}"
                    )));
                }
                Ok(())
            }
            (Labels::Values(_), LossKind::Mse) => Ok(()),
            (labels, loss) => Err(Error::Config(format!(
                "label kind {labels:?} incompatible with loss {loss:?}"
            ))),
        }
    }
}

/// Deterministic initialization: per-layer uniform
/// (-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))) weights, zero biases.
pub fn mlp_init(spec: &MlpSpec, seed: u64) -> WeightVector {
    let mut values = vec![0.0; spec.param_count()];
    let mut offset = 0;
    for l in 0..spec.num_layers() {
        let (fan_in, fan_out) = spec.layer_dims(l);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let rng = CounterRng::new(seed, stream::INIT, l as u64);
        for i in 0..fan_in * fan_out {
            values[offset + i] = rng.uniform(i as u64, -bound, bound);
        }
        // biases stay zero
        offset += fan_in * fan_out + fan_out;
    }
    WeightVector { values }
}

fn apply_activation(kind: Activation, z: &mut [f64]) {
    match kind {
        Activation::Relu => {
            for v in z {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for v in z {
                *v = v.tanh();
            }
        }
        Activation::Identity => {}
    }
}

/// d(activation)/dz expressed through the post-activation value.
fn activation_derivative(kind: Activation, post: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if post > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - post * post,
        Activation::Identity => 1.0,
    }
}

/// Forward pass for a batch, keeping every layer's post-activation output.
/// `acts[0]` is the input batch itself; `acts.last()` holds the logits.
fn forward_layers(w: &WeightVector, spec: &MlpSpec, x: &[f64], batch: usize) -> Result<Vec<Vec<f64>>> {
    if w.dim() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            layer: 0,
            detail: format!(
                "weight vector length {} != parameter count {}",
                w.dim(),
                spec.param_count()
            ),
        });
    }
    if x.len() != batch * spec.input_dim() {
        return Err(Error::DimensionMismatch {
            layer: 0,
            detail: format!(
                "input buffer length {} != batch {} x input dim {}",
                x.len(),
                batch,
                spec.input_dim()
            ),
        });
    }
    let n_layers = spec.num_layers();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
    acts.push(x.to_vec());
    let params = w.as_slice();
    for l in 0..n_layers {
        let (in_dim, out_dim) = spec.layer_dims(l);
        let offset = spec.layer_offset(l);
        let weights = &params[offset..offset + in_dim * out_dim];
        let biases = &params[offset + in_dim * out_dim..offset + in_dim * out_dim + out_dim];
        let prev = &acts[l];
        let mut out = vec![0.0; batch * out_dim];
        for b in 0..batch {
            let row = &prev[b * in_dim..(b + 1) * in_dim];
            let dst = &mut out[b * out_dim..(b + 1) * out_dim];
            for (o, d) in dst.iter_mut().enumerate() {
                let wrow = &weights[o * in_dim..(o + 1) * in_dim];
                let mut acc = biases[o];
                for (wi, xi) in wrow.iter().zip(row) {
                    acc += wi * xi;
                }
                *d = acc;
            }
        }
        if l + 1 < n_layers {
            apply_activation(spec.activation, &mut out);
        }
        if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("layer {l} output (batch entry {})", pos / out_dim),
            });
        }
        acts.push(out);
    }
    Ok(acts)
}

/// Logits for a batch: `x_batch` is `batch x input_dim` row-major, the
/// result `batch x output_dim`. No activation is applied to the last layer.
pub fn mlp_forward(w: &WeightVector, spec: &MlpSpec, x_batch: &[f64], batch: usize) -> Result<Vec<f64>> {
    let acts = forward_layers(w, spec, x_batch, batch)?;
    Ok(acts.into_iter().last().unwrap())
}

/// Per-sample loss and d(loss)/d(logits), written into `dlogits`.
fn loss_and_dlogits(
    kind: LossKind,
    logits: &[f64],
    labels: &Labels,
    sample: usize,
    dlogits: &mut [f64],
) -> f64 {
    match kind {
        LossKind::Mse => {
            let y = match labels {
                Labels::Values(v) => v[sample],
                Labels::Classes(v) => v[sample] as f64,
            };
            let diff = logits[0] - y;
            dlogits[0] = 2.0 * diff;
            diff * diff
        }
        LossKind::LogisticBinary => {
            let c = match labels {
                Labels::Classes(v) => v[sample],
                Labels::Values(v) => v[sample] as usize,
            };
            let y = if c == 1 { 1.0 } else { -1.0 };
            let z = logits[0];
            // softplus(-y z) = log(1 + exp(-y z)), stabilized
            let m = -y * z;
            let loss = if m > 0.0 {
                m + (-m).exp().ln_1p()
            } else {
                m.exp().ln_1p()
            };
            // d/dz log(1+e^{-yz}) = -y * sigmoid(-y z)
            let sig = 1.0 / (1.0 + (y * z).exp());
            dlogits[0] = -y * sig;
            loss
        }
        LossKind::CrossEntropySoftmax => {
            let y = match labels {
                Labels::Classes(v) => v[sample],
                Labels::Values(_) => unreachable!("validated earlier"),
            };
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &z in logits {
                sum += (z - max).exp();
            }
            let log_z = max + sum.ln();
            for (j, d) in dlogits.iter_mut().enumerate() {
                let p = (logits[j] - log_z).exp();
                *d = p - if j == y { 1.0 } else { 0.0 };
            }
            log_z - logits[y]
        }
    }
}

/// Mean loss and its exact gradient over the given sample indices.
pub fn loss_and_grad_subset(
    w: &WeightVector,
    spec: &MlpSpec,
    data: &DatasetSplit,
    indices: &[usize],
) -> Result<(f64, WeightVector)> {
    data.check_against(spec)?;
    if indices.is_empty() {
        return Err(Error::Config("empty sample index set".into()));
    }
    w.check_finite("weight vector")?;

    let n_layers = spec.num_layers();
    let out_dim = spec.output_dim();
    let params = w.as_slice();
    let mut grad = vec![0.0; w.dim()];
    let mut total_loss = 0.0;
    let inv = 1.0 / indices.len() as f64;

    // Per-sample forward + backward keeps the working set tiny.
    let mut dlogits = vec![0.0; out_dim];
    for &i in indices {
        let acts = forward_layers(w, spec, data.feature_row(i), 1)?;
        let logits = acts.last().unwrap();
        let loss = loss_and_dlogits(spec.loss_kind, logits, data.labels(), i, &mut dlogits);
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("loss at sample {i}"),
            });
        }
        total_loss += loss;

        // Backward: delta holds dL/d(pre-activation) of the current layer.
        let mut delta = dlogits.clone();
        for l in (0..n_layers).rev() {
            let (in_dim, out_d) = spec.layer_dims(l);
            let offset = spec.layer_offset(l);
            let prev = &acts[l];
            {
                let gw = &mut grad[offset..offset + in_dim * out_d];
                for o in 0..out_d {
                    let d = delta[o] * inv;
                    let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for (g, xv) in grow.iter_mut().zip(prev.iter()) {
                        *g += d * xv;
                    }
                }
            }
            {
                let gb = &mut grad[offset + in_dim * out_d..offset + in_dim * out_d + out_d];
                for (g, d) in gb.iter_mut().zip(&delta) {
                    *g += d * inv;
                }
            }
            if l > 0 {
                let weights = &params[offset..offset + in_dim * out_d];
                let mut next = vec![0.0; in_dim];
                for o in 0..out_d {
                    let d = delta[o];
                    let wrow = &weights[o * in_dim..(o + 1) * in_dim];
                    for (nv, wv) in next.iter_mut().zip(wrow) {
                        *nv += d * wv;
                    }
                }
                for (nv, &a) in next.iter_mut().zip(prev.iter()) {
                    *nv *= activation_derivative(spec.activation, a);
                }
                delta = next;
            }
        }
    }

    let grad = WeightVector { values: grad };
    grad.check_finite("gradient")?;
    Ok((total_loss * inv, grad))
}

/// Mean loss and gradient over the whole split.
pub fn loss_and_grad(w: &WeightVector, spec: &MlpSpec, data: &DatasetSplit) -> Result<(f64, WeightVector)> {
    let indices: Vec<usize> = (0..data.len()).collect();
    loss_and_grad_subset(w, spec, data, &indices)
}

/// Mean loss only (no gradient buffer).
pub fn loss_only(w: &WeightVector, spec: &MlpSpec, data: &DatasetSplit) -> Result<f64> {
    data.check_against(spec)?;
    let out_dim = spec.output_dim();
    let mut dlogits = vec![0.0; out_dim];
    let mut total = 0.0;
    for i in 0..data.len() {
        let acts = forward_layers(w, spec, data.feature_row(i), 1)?;
        let loss = loss_and_dlogits(spec.loss_kind, acts.last().unwrap(), data.labels(), i, &mut dlogits);
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("loss at sample {i}"),
            });
        }
        total += loss;
    }
    Ok(total / data.len() as f64)
}

/// Mean loss plus classification accuracy (None for regression).
pub fn eval_metrics(w: &WeightVector, spec: &MlpSpec, data: &DatasetSplit) -> Result<(f64, Option<f64>)> {
    data.check_against(spec)?;
    let out_dim = spec.output_dim();
    let mut dlogits = vec![0.0; out_dim];
    let mut total = 0.0;
    let mut hits = 0usize;
    for i in 0..data.len() {
        let acts = forward_layers(w, spec, data.feature_row(i), 1)?;
        let logits = acts.last().unwrap();
        total += loss_and_dlogits(spec.loss_kind, logits, data.labels(), i, &mut dlogits);
        match (spec.loss_kind, data.labels()) {
            (LossKind::CrossEntropySoftmax, Labels::Classes(v)) => {
                let pred = logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(j, _)| j)
                    .unwrap();
                if pred == v[i] {
                    hits += 1;
                }
            }
            (LossKind::LogisticBinary, Labels::Classes(v)) => {
                let pred = usize::from(logits[0] > 0.0);
                if pred == v[i] {
                    hits += 1;
                }
            }
            _ => {}
        }
    }
    let loss = total / data.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "evaluation loss".into(),
        });
    }
    let acc = match spec.loss_kind {
        LossKind::Mse => None,
        _ => Some(hits as f64 / data.len() as f64),
    };
    Ok((loss, acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sizes: &[usize], act: Activation, loss: LossKind) -> MlpSpec {
        MlpSpec::new(sizes.to_vec(), act, loss).unwrap()
    }

    #[test]
    fn param_count_formula() {
        // 2*1 + 1
        assert_eq!(spec(&[2, 1], Activation::Identity, LossKind::Mse).param_count(), 3);
        // 4*8+8 + 8*3+3
        assert_eq!(
            spec(&[4, 8, 3], Activation::Relu, LossKind::CrossEntropySoftmax).param_count(),
            67
        );
    }

    #[test]
    fn init_zero_bias_and_deterministic() {
        let s = spec(&[2, 1], Activation::Identity, LossKind::Mse);
        let w = mlp_init(&s, 123);
        assert_eq!(w.dim(), 3);
        // layout: [w00, w01, b0]
        assert_eq!(w.as_slice()[2], 0.0);
        let w2 = mlp_init(&s, 123);
        assert_eq!(w.as_slice(), w2.as_slice());
        let w3 = mlp_init(&s, 124);
        assert_ne!(w.as_slice(), w3.as_slice());
    }

    #[test]
    fn init_within_glorot_bound() {
        let s = spec(&[4, 8, 3], Activation::Tanh, LossKind::CrossEntropySoftmax);
        let w = mlp_init(&s, 7);
        let bound0 = (6.0 / 12.0f64).sqrt();
        for &v in &w.as_slice()[..32] {
            assert!(v.abs() < bound0);
        }
    }

    #[test]
    fn forward_zero_weights_zero_logits() {
        let s = spec(&[3, 4, 2], Activation::Relu, LossKind::CrossEntropySoftmax);
        let w = WeightVector::zeros(s.param_count());
        let out = mlp_forward(&w, &s, &[1.0, -2.0, 3.0], 1).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_affine_scalar() {
        // layers [1,1] identity, weight=2, bias=1, x=3 -> 7
        let s = spec(&[1, 1], Activation::Identity, LossKind::Mse);
        let w = WeightVector::from_values(vec![2.0, 1.0]).unwrap();
        let out = mlp_forward(&w, &s, &[3.0], 1).unwrap();
        assert_eq!(out, vec![7.0]);
    }

    #[test]
    fn forward_hand_checked_relu() {
        // layers [2,2,1] relu on x = (1, -1).
        // W1 = [[1, 2], [-3, 0.5]], b1 = (0.25, -0.5)
        //   z1 = (1*1 + 2*(-1) + 0.25, -3*1 + 0.5*(-1) - 0.5) = (-0.75, -4.0)
        //   a1 = relu(z1) = (0, 0)
        // hmm, dead layer; pick b1 = (1.5, 0.5) instead:
        //   z1 = (1 - 2 + 1.5, -3 - 0.5 + 0.5) = (0.5, -3.0); a1 = (0.5, 0)
        // W2 = [[2, -1]], b2 = (0.75)
        //   out = 2*0.5 + (-1)*0 + 0.75 = 1.75
        let s = spec(&[2, 2, 1], Activation::Relu, LossKind::Mse);
        let w = WeightVector::from_values(vec![
            1.0, 2.0, -3.0, 0.5, // W1 row-major (out x in)
            1.5, 0.5, // b1
            2.0, -1.0, // W2
            0.75, // b2
        ])
        .unwrap();
        let out = mlp_forward(&w, &s, &[1.0, -1.0], 1).unwrap();
        assert!((out[0] - 1.75).abs() < 1e-15);
    }

    #[test]
    fn forward_dim_mismatch_names_layer() {
        let s = spec(&[2, 1], Activation::Identity, LossKind::Mse);
        let w = WeightVector::zeros(99);
        let err = mlp_forward(&w, &s, &[1.0, 2.0], 1).unwrap_err();
        match err {
            Error::DimensionMismatch { layer: 0, .. } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn mse_perfect_fit_zero_loss_zero_grad() {
        let s = spec(&[1, 1], Activation::Identity, LossKind::Mse);
        // w=3, b=1 fits y = 3x+1 exactly
        let w = WeightVector::from_values(vec![3.0, 1.0]).unwrap();
        let data = DatasetSplit::new(
            vec![0.0, 1.0, 2.0],
            Labels::Values(vec![1.0, 4.0, 7.0]),
            3,
            1,
        )
        .unwrap();
        let (loss, grad) = loss_and_grad(&w, &s, &data).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cross_entropy_uniform_is_ln2() {
        let s = spec(&[2, 2], Activation::Identity, LossKind::CrossEntropySoftmax);
        let w = WeightVector::zeros(s.param_count());
        let data = DatasetSplit::new(vec![0.3, -0.7], Labels::Classes(vec![1]), 1, 2).unwrap();
        let (loss, _) = loss_and_grad(&w, &s, &data).unwrap();
        // ln(2) = 0.69314718055994531 (high-precision reference)
        assert!((loss - 0.69314718055994531).abs() < 1e-15);
    }

    #[test]
    fn nonfinite_weights_report_context() {
        let s = spec(&[1, 1], Activation::Identity, LossKind::Mse);
        // overflow: w large enough that w*x*w... single layer can't overflow,
        // use enormous weight and input to push the logit to inf
        let w = WeightVector::from_values(vec![1e308, 0.0]).unwrap();
        let data = DatasetSplit::new(vec![1e308], Labels::Values(vec![0.0]), 1, 1).unwrap();
        let err = loss_and_grad(&w, &s, &data).unwrap_err();
        match err {
            Error::NonFinite { context } => assert!(context.contains("layer 0"), "{context}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    /// Central finite differences; the independent oracle for backprop.
    fn fd_gradient(w: &WeightVector, s: &MlpSpec, data: &DatasetSplit, h: f64) -> Vec<f64> {
        let mut g = vec![0.0; w.dim()];
        for j in 0..w.dim() {
            let mut wp = w.clone();
            wp.as_mut_slice()[j] += h;
            let mut wm = w.clone();
            wm.as_mut_slice()[j] -= h;
            let lp = loss_only(&wp, s, data).unwrap();
            let lm = loss_only(&wm, s, data).unwrap();
            g[j] = (lp - lm) / (2.0 * h);
        }
        g
    }

    // Relative tolerance 1e-6 where finite differences are informative; an
    // absolute floor of 1e-8 below that (central FD with step 1e-6 on an
    // O(1) loss carries ~1e-10 of roundoff, so tiny coordinates can only be
    // checked absolutely).
    fn assert_grad_close(analytic: &[f64], numeric: &[f64]) {
        for (j, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            if (a - n).abs() <= 1e-8 {
                continue;
            }
            let rel = (a - n).abs() / a.abs().max(n.abs());
            assert!(rel <= 1e-6, "coord {j}: {a} vs {n}, rel {rel}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // 100 random draws over specs up to [8,8,4], batch <= 16.
        let shapes: [&[usize]; 5] = [&[2, 1], &[3, 4, 1], &[8, 8, 4], &[5, 3, 2], &[4, 4, 4, 2]];
        let acts = [Activation::Relu, Activation::Tanh, Activation::Identity];
        let rng = CounterRng::new(2024, stream::PROBE, 0);
        let mut ctr = 0u64;
        let mut draw = || {
            ctr += 1;
            rng.open01(ctr)
        };
        for trial in 0..100 {
            let sizes = shapes[trial % shapes.len()];
            let act = acts[trial % acts.len()];
            let out = *sizes.last().unwrap();
            let loss = if out == 1 {
                if trial % 2 == 0 {
                    LossKind::Mse
                } else {
                    LossKind::LogisticBinary
                }
            } else {
                LossKind::CrossEntropySoftmax
            };
            let s = spec(sizes, act, loss);
            let mut w = mlp_init(&s, trial as u64);
            // jitter away from relu kinks
            for v in w.as_mut_slice() {
                *v += 0.3 * (draw() - 0.5);
            }
            let batch = 1 + (trial % 16);
            let p = s.input_dim();
            let features: Vec<f64> = (0..batch * p).map(|_| 2.0 * draw() - 1.0).collect();
            let labels = match loss {
                LossKind::Mse => Labels::Values((0..batch).map(|_| 2.0 * draw() - 1.0).collect()),
                LossKind::LogisticBinary => {
                    Labels::Classes((0..batch).map(|_| usize::from(draw() > 0.5)).collect())
                }
                LossKind::CrossEntropySoftmax => {
                    Labels::Classes((0..batch).map(|_| (draw() * out as f64) as usize).collect())
                }
            };
            let data = DatasetSplit::new(features, labels, batch, p).unwrap();
            let (_, grad) = loss_and_grad(&w, &s, &data).unwrap();
            let fd = fd_gradient(&w, &s, &data, 1e-6);
            assert_grad_close(grad.as_slice(), &fd);
        }
    }

    #[test]
    fn logistic_single_layer_is_convex() {
        // loss(l*w1 + (1-l)*w2) <= l*loss(w1) + (1-l)*loss(w2) + 1e-12
        let s = spec(&[3, 1], Activation::Identity, LossKind::LogisticBinary);
        let rng = CounterRng::new(77, stream::PROBE, 1);
        let data = DatasetSplit::new(
            (0..30).map(|c| rng.uniform(c, -2.0, 2.0)).collect(),
            Labels::Classes((0..10).map(|i| usize::from(rng.at(100 + i) % 2 == 0)).collect()),
            10,
            3,
        )
        .unwrap();
        for trial in 0..50u64 {
            let base = 1000 + trial * 16;
            let w1 = WeightVector::from_values(
                (0..4).map(|j| rng.uniform(base + j, -3.0, 3.0)).collect(),
            )
            .unwrap();
            let w2 = WeightVector::from_values(
                (0..4).map(|j| rng.uniform(base + 8 + j, -3.0, 3.0)).collect(),
            )
            .unwrap();
            let lam = rng.open01(base + 15);
            let mut mid = w1.clone();
            mid.scale(lam);
            mid.axpy(1.0 - lam, &w2);
            let f1 = loss_only(&w1, &s, &data).unwrap();
            let f2 = loss_only(&w2, &s, &data).unwrap();
            let fm = loss_only(&mid, &s, &data).unwrap();
            assert!(fm <= lam * f1 + (1.0 - lam) * f2 + 1e-12);
        }
    }
}
