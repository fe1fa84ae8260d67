//! Multilayer perceptron engine: ReLU hidden layers, linear output, softmax
//! cross-entropy and a parameter-distance penalty, with exact backprop.
//!
//! Parameters are laid out layer by layer; each layer stores its weight
//! matrix row-major as `[fan_out][fan_in]` followed by `fan_out` biases.

mod params;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub use params::{param_distance, sgd_step, ParamVector};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix data",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn gather(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w_offset: usize,
    b_offset: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Layer widths from input dimension to class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ModelSpec {
    layer_sizes: Vec<usize>,
}

impl TryFrom<Vec<usize>> for ModelSpec {
    type Error = Error;

    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        ModelSpec::new(sizes)
    }
}

impl From<ModelSpec> for Vec<usize> {
    fn from(spec: ModelSpec) -> Self {
        spec.layer_sizes
    }
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidModel("need at least an input and an output layer".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidModel("layer sizes must be positive".into()));
        }
        if *layer_sizes.last().unwrap() < 2 {
            return Err(Error::InvalidModel("need at least 2 classes".into()));
        }
        Ok(ModelSpec { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn layers(&self) -> Vec<Layer> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let layer = Layer {
                    w_offset: offset,
                    b_offset: offset + w[0] * w[1],
                    fan_in: w[0],
                    fan_out: w[1],
                };
                offset += (w[0] + 1) * w[1];
                layer
            })
            .collect()
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector length",
                expected: self.n_params(),
                actual: params.len(),
            });
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "input width",
                expected: self.input_dim(),
                actual: inputs.cols(),
            });
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = crate::seed::rng(seed);
    let mut values = vec![0.0; spec.n_params()];
    for layer in spec.layers() {
        let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for w in &mut values[layer.w_offset..layer.b_offset] {
            *w = rng.random_range(-bound..=bound);
        }
    }
    ParamVector::from_vec_unchecked(values)
}

/// Returns the activations of every layer: `acts[0]` is the input, the last
/// entry holds the logits, and the ones in between are post-ReLU.
fn forward_all(params: &[f64], spec: &ModelSpec, inputs: &Matrix) -> Vec<Matrix> {
    let layers = spec.layers();
    let mut acts: Vec<Matrix> = Vec::with_capacity(layers.len() + 1);
    acts.push(inputs.clone());
    for (l, layer) in layers.iter().enumerate() {
        let prev = &acts[l];
        let weights = &params[layer.w_offset..layer.b_offset];
        let biases = &params[layer.b_offset..layer.b_offset + layer.fan_out];
        let hidden = l + 1 < layers.len();
        let mut out = Matrix::zeros(prev.rows(), layer.fan_out);
        for b in 0..prev.rows() {
            let x = prev.row(b);
            let y = out.row_mut(b);
            for (o, yo) in y.iter_mut().enumerate() {
                let w = &weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                let z = biases[o] + w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
                *yo = if hidden { z.max(0.0) } else { z };
            }
        }
        acts.push(out);
    }
    acts
}

pub fn forward(params: &ParamVector, spec: &ModelSpec, inputs: &Matrix) -> Result<Matrix> {
    spec.check_params(params)?;
    spec.check_inputs(inputs)?;
    let logits = forward_all(params.as_slice(), spec, inputs).pop().unwrap();
    if logits.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    Ok(logits)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &ParamVector, spec: &ModelSpec, inputs: &Matrix) -> Result<Vec<usize>> {
    let logits = forward(params, spec, inputs)?;
    Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
}

/// Fraction of samples whose predicted class equals the stored label.
pub fn evaluate_accuracy(params: &ParamVector, spec: &ModelSpec, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("evaluate_accuracy"));
    }
    let preds = predict(params, spec, dataset.images())?;
    let hits = preds.iter().zip(dataset.labels()).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Inputs and integer labels for one gradient evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::EmptyDataset("batch"));
        }
        if labels.len() != inputs.rows() {
            return Err(Error::DimensionMismatch {
                context: "batch labels",
                expected: inputs.rows(),
                actual: labels.len(),
            });
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Scaling of the distance term inside the training loss.
///
/// `Mean` is [`param_distance`]; `Sum` is the plain squared Euclidean
/// distance `0.5 * |a - b|^2`, whose pull toward the reference does not
/// shrink as the model grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistNorm {
    #[default]
    Mean,
    Sum,
}

/// Which objective `loss_and_grad` differentiates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// Mean softmax cross-entropy over the batch.
    Class,
    /// `param_distance(params, reference)`.
    Dist,
    /// `(1 - p) * Class + p * Dist`.
    Combined { p: f64 },
}

fn class_loss_and_grad(params: &[f64], spec: &ModelSpec, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    let k = spec.num_classes();
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    spec.check_inputs(&batch.inputs)?;

    let layers = spec.layers();
    let acts = forward_all(params, spec, &batch.inputs);
    let logits = acts.last().unwrap();
    let n = batch.len();
    let inv_n = 1.0 / n as f64;

    let mut loss = 0.0;
    let mut delta = Matrix::zeros(n, k);
    for b in 0..n {
        let z = logits.row(b);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum_exp.ln();
        let y = batch.labels[b];
        loss += log_norm - z[y];
        let d = delta.row_mut(b);
        for (c, dc) in d.iter_mut().enumerate() {
            let prob = (z[c] - log_norm).exp();
            *dc = (prob - if c == y { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    loss *= inv_n;

    let mut grad = vec![0.0; params.len()];
    for (l, layer) in layers.iter().enumerate().rev() {
        let prev = &acts[l];
        let (gw, gb) =
            grad[layer.w_offset..layer.b_offset + layer.fan_out].split_at_mut(layer.b_offset - layer.w_offset);
        for b in 0..n {
            let x = prev.row(b);
            let d = delta.row(b);
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                gb[o] += dv;
                let row = &mut gw[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += dv * xi;
                }
            }
        }
        if l == 0 {
            break;
        }
        let weights = &params[layer.w_offset..layer.b_offset];
        let mut next = Matrix::zeros(n, layer.fan_in);
        for b in 0..n {
            let d = delta.row(b);
            let a = prev.row(b);
            let out = next.row_mut(b);
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                let w = &weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (acc, wi) in out.iter_mut().zip(w) {
                    *acc += wi * dv;
                }
            }
            // ReLU mask: a == 0 exactly where the pre-activation was <= 0.
            for (acc, &ai) in out.iter_mut().zip(a) {
                if ai <= 0.0 {
                    *acc = 0.0;
                }
            }
        }
        delta = next;
    }
    Ok((loss, grad))
}

fn dist_loss_and_grad(params: &[f64], reference: &ParamVector, norm: DistNorm) -> (f64, Vec<f64>) {
    let n = match norm {
        DistNorm::Mean => params.len() as f64,
        DistNorm::Sum => 1.0,
    };
    let diff: Vec<f64> = params.iter().zip(reference.as_slice()).map(|(a, b)| a - b).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * n);
    let grad = diff.into_iter().map(|d| d / n).collect();
    (loss, grad)
}

/// Loss value and gradient with respect to `params`.
///
/// `reference` is the anchor for the distance term and must be present for
/// [`LossSpec::Dist`] and [`LossSpec::Combined`]. At `p = 0` the combined
/// loss is exactly the classification loss and at `p = 1` exactly the
/// distance loss; the unused term is not evaluated.
pub fn loss_and_grad(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &Batch,
    loss: LossSpec,
    reference: Option<&ParamVector>,
) -> Result<(f64, ParamVector)> {
    loss_and_grad_with(params, spec, batch, loss, reference, DistNorm::Mean)
}

/// [`loss_and_grad`] with an explicit distance scaling.
pub fn loss_and_grad_with(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &Batch,
    loss: LossSpec,
    reference: Option<&ParamVector>,
    norm: DistNorm,
) -> Result<(f64, ParamVector)> {
    spec.check_params(params)?;
    let reference = match loss {
        LossSpec::Class => None,
        LossSpec::Dist | LossSpec::Combined { .. } => {
            let r = reference.ok_or(Error::MissingReference)?;
            spec.check_params(r)?;
            Some(r)
        }
    };
    let (value, grad) = match loss {
        LossSpec::Class => class_loss_and_grad(params.as_slice(), spec, batch)?,
        LossSpec::Dist => dist_loss_and_grad(params.as_slice(), reference.unwrap(), norm),
        LossSpec::Combined { p } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("p must lie in [0, 1], got {p}")));
            }
            if p == 0.0 {
                class_loss_and_grad(params.as_slice(), spec, batch)?
            } else if p == 1.0 {
                dist_loss_and_grad(params.as_slice(), reference.unwrap(), norm)
            } else {
                let (lc, gc) = class_loss_and_grad(params.as_slice(), spec, batch)?;
                let (ld, gd) = dist_loss_and_grad(params.as_slice(), reference.unwrap(), norm);
                let q = 1.0 - p;
                let grad = gc.iter().zip(&gd).map(|(c, d)| q * c + p * d).collect();
                (q * lc + p * ld, grad)
            }
        }
    };
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("loss_and_grad"));
    }
    Ok((value, ParamVector::from_vec_unchecked(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sizes: &[usize]) -> ModelSpec {
        ModelSpec::new(sizes.to_vec()).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::new(vec![4]).is_err());
        assert!(ModelSpec::new(vec![4, 1]).is_err());
        assert!(ModelSpec::new(vec![4, 0, 2]).is_err());
        assert_eq!(spec(&[4, 3, 2]).n_params(), 23);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = spec(&[4, 3, 2]);
        let a = init_params(&s, 7);
        let b = init_params(&s, 7);
        assert_eq!(a.len(), 23);
        assert_eq!(a, b);
        assert!(a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        for layer in s.layers() {
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            assert!(a.as_slice()[layer.b_offset..layer.b_offset + layer.fan_out]
                .iter()
                .all(|&v| v == 0.0));
            assert!(a.as_slice()[layer.w_offset..layer.b_offset]
                .iter()
                .all(|v| v.abs() <= bound));
        }
        assert_ne!(init_params(&s, 8), a);
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let s = spec(&[3, 5, 4]);
        let x = Matrix::new(2, 3, vec![0.1, 0.9, 0.4, 1.0, 0.0, 0.3]).unwrap();
        let logits = forward(&ParamVector::zeros(s.n_params()), &s, &x).unwrap();
        assert!(logits.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_by_hand() {
        // W = [[1, 2], [-3, 0.5]], b = [0.25, -1]; x = [2, -1]
        // z0 = 1*2 + 2*(-1) + 0.25 = 0.25
        // z1 = -3*2 + 0.5*(-1) - 1 = -7.5
        let s = spec(&[2, 2]);
        let p = ParamVector::new(vec![1.0, 2.0, -3.0, 0.5, 0.25, -1.0]).unwrap();
        let x = Matrix::new(1, 2, vec![2.0, -1.0]).unwrap();
        let logits = forward(&p, &s, &x).unwrap();
        assert_eq!(logits.as_slice(), &[0.25, -7.5]);
    }

    #[test]
    fn duplicated_rows_give_duplicated_logits() {
        let s = spec(&[3, 4, 3]);
        let p = init_params(&s, 1);
        let x = Matrix::new(3, 3, vec![0.2, 0.5, 0.9, 0.2, 0.5, 0.9, 1.0, 0.0, 0.3]).unwrap();
        let logits = forward(&p, &s, &x).unwrap();
        assert_eq!(logits.row(0), logits.row(1));
    }

    #[test]
    fn forward_dimension_errors() {
        let s = spec(&[3, 2]);
        let x = Matrix::zeros(1, 4);
        assert!(forward(&ParamVector::zeros(8), &s, &x).is_err());
        assert!(forward(&ParamVector::zeros(7), &s, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let s = spec(&[3, 5]);
        let batch = Batch::new(Matrix::zeros(4, 3), vec![0, 1, 2, 4]).unwrap();
        let (loss, _) = loss_and_grad(&ParamVector::zeros(s.n_params()), &s, &batch, LossSpec::Class, None).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn combined_at_p1_on_reference_is_zero() {
        let s = spec(&[3, 4, 2]);
        let p = init_params(&s, 5);
        let batch = Batch::new(Matrix::zeros(1, 3), vec![1]).unwrap();
        let (loss, grad) = loss_and_grad(&p, &s, &batch, LossSpec::Combined { p: 1.0 }, Some(&p)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dist_requires_reference() {
        let s = spec(&[2, 2]);
        let p = ParamVector::zeros(6);
        let batch = Batch::new(Matrix::zeros(1, 2), vec![0]).unwrap();
        assert!(matches!(
            loss_and_grad(&p, &s, &batch, LossSpec::Dist, None),
            Err(Error::MissingReference)
        ));
        assert!(loss_and_grad(&p, &s, &batch, LossSpec::Combined { p: 1.5 }, Some(&p)).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn accuracy_by_hand() {
        // Linear 2 -> 3 model that copies x0, x1 into logits 0, 1 and keeps logit 2 at 0.5.
        let s = spec(&[2, 3]);
        let p = ParamVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
        let xs = [
            [0.9, 0.1],  // 0
            [0.1, 0.9],  // 1
            [0.2, 0.3],  // 2
            [0.6, 0.6],  // tie 0/1 -> 0
            [0.7, 0.2],  // 0
            [0.0, 0.0],  // 2
            [0.4, 0.45], // 2
            [0.3, 0.8],  // 1
        ];
        let labels = vec![0, 0, 2, 1, 0, 2, 1, 1];
        // hits: yes, no, yes, no, yes, yes, no, yes = 5 / 8
        let flat: Vec<f64> = xs.iter().flatten().cloned().collect();
        let ds = Dataset::from_parts(1, 2, flat, labels, 3, "hand").unwrap();
        assert_eq!(evaluate_accuracy(&p, &s, &ds).unwrap(), 0.625);
    }
}
