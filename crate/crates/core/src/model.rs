//! Softmax regression: parameters, loss, gradients and the local SGD step.
//!
//! A model for `C` classes over `d` features is stored as one flat vector:
//! the `C x d` weight matrix in row-major order followed by the `C` biases.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to a probability before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Interpretation of a flat parameter vector as weights plus biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub classes: usize,
    pub features: usize,
}

impl Shape {
    pub fn new(classes: usize, features: usize) -> Self {
        Self { classes, features }
    }

    /// Total parameter count, `C*d + C`.
    pub fn len(&self) -> usize {
        self.classes * self.features + self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn describe(&self) -> String {
        format!("{}x{}+{}", self.classes, self.features, self.classes)
    }
}

/// Flat model parameter vector with its softmax-regression shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    shape: Shape,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn from_values(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::Shape {
                expected: format!("{} values", shape.len()),
                actual: format!("{} values", values.len()),
            });
        }
        Ok(Self { shape, values })
    }

    /// Builds a model from a `C x d` weight matrix (given as rows) and biases.
    pub fn from_parts(weights: &[Vec<f64>], bias: &[f64]) -> Result<Self> {
        let classes = weights.len();
        let features = weights.first().map_or(0, Vec::len);
        if bias.len() != classes || weights.iter().any(|r| r.len() != features) {
            return Err(Error::Shape {
                expected: format!("{classes} rows of {features} plus {classes} biases"),
                actual: "ragged input".into(),
            });
        }
        let mut values: Vec<f64> = weights.iter().flatten().copied().collect();
        values.extend_from_slice(bias);
        Ok(Self {
            shape: Shape::new(classes, features),
            values,
        })
    }

    /// A plain vector with no class structure (`C = len`, `d = 0`), used by
    /// the aggregators and the quadratic testbed.
    pub fn flat(values: Vec<f64>) -> Self {
        Self {
            shape: Shape::new(values.len(), 0),
            values,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn weights_row(&self, class: usize) -> &[f64] {
        let d = self.shape.features;
        &self.values[class * d..(class + 1) * d]
    }

    pub fn bias(&self) -> &[f64] {
        &self.values[self.shape.classes * self.shape.features..]
    }

    pub fn check_same_shape(&self, other: &ParamVector) -> Result<()> {
        if self.shape != other.shape || self.values.len() != other.values.len() {
            return Err(Error::Shape {
                expected: self.shape.describe(),
                actual: other.shape.describe(),
            });
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        ParamVector {
            shape: self.shape,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn squared_distance(&self, other: &ParamVector) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// One labelled example; features are typically scaled into `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// An ordered collection of examples sharing one feature dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>, num_classes: usize) -> Result<Self> {
        let feature_dim = examples.first().map_or(0, |e| e.features.len());
        for (i, e) in examples.iter().enumerate() {
            if e.features.len() != feature_dim {
                return Err(Error::Shape {
                    expected: format!("{feature_dim} features"),
                    actual: format!("{} features at example {i}", e.features.len()),
                });
            }
            if e.label >= num_classes {
                return Err(Error::arg(format!(
                    "label {} at example {i} is not below {num_classes}",
                    e.label
                )));
            }
        }
        Ok(Self {
            examples,
            num_classes,
            feature_dim,
        })
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.num_classes, self.feature_dim)
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.examples.iter().map(|e| e.label)
    }

    /// Copies the examples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let examples = indices
            .iter()
            .map(|&i| {
                self.examples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::arg(format!("index {i} out of range for {} examples", self.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            examples,
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        })
    }

    /// Per-class example counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for e in &self.examples {
            h[e.label] += 1;
        }
        h
    }
}

/// Indices into a [`Dataset`] forming one SGD minibatch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Minibatch {
    indices: Vec<usize>,
}

impl Minibatch {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    /// The whole dataset as one batch.
    pub fn full(data: &Dataset) -> Self {
        Self {
            indices: (0..data.len()).collect(),
        }
    }

    /// Draws `size` distinct indices; `size` is capped at the dataset size.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, data: &Dataset, size: usize) -> Result<Self> {
        if data.is_empty() || size == 0 {
            return Err(Error::arg("minibatch needs a nonempty dataset and size >= 1"));
        }
        let size = size.min(data.len());
        let mut indices = index::sample(rng, data.len(), size).into_vec();
        indices.sort_unstable();
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::arg("empty minibatch"));
        }
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= data.len()) {
            return Err(Error::arg(format!(
                "minibatch index {bad} out of range for {} examples",
                data.len()
            )));
        }
        Ok(())
    }
}

fn check_model_data(model: &ParamVector, data: &Dataset) -> Result<()> {
    if model.shape() != data.shape() {
        return Err(Error::Shape {
            expected: model.shape().describe(),
            actual: data.shape().describe(),
        });
    }
    Ok(())
}

/// Logits `W x + b` written into `out`.
fn logits_into(model: &ParamVector, x: &[f64], out: &mut [f64]) {
    let Shape { classes, features } = model.shape();
    let v = model.values();
    let bias = &v[classes * features..];
    for (c, o) in out.iter_mut().enumerate() {
        let row = &v[c * features..(c + 1) * features];
        *o = bias[c] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
    }
}

/// In-place softmax with max subtraction.
fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Class probabilities `softmax(W x + b)`.
pub fn predict_probs(model: &ParamVector, features: &[f64]) -> Result<Vec<f64>> {
    let shape = model.shape();
    if features.len() != shape.features {
        return Err(Error::Shape {
            expected: format!("{} features", shape.features),
            actual: format!("{} features", features.len()),
        });
    }
    let mut p = vec![0.0; shape.classes];
    logits_into(model, features, &mut p);
    softmax_in_place(&mut p);
    Ok(p)
}

fn example_loss(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

/// Mean cross-entropy over the batch.
pub fn batch_loss(model: &ParamVector, data: &Dataset, batch: &Minibatch) -> Result<f64> {
    check_model_data(model, data)?;
    batch.validate(data)?;
    let mut p = vec![0.0; model.shape().classes];
    let mut total = 0.0;
    for &i in batch.indices() {
        let e = &data.examples[i];
        logits_into(model, &e.features, &mut p);
        softmax_in_place(&mut p);
        total += example_loss(&p, e.label);
    }
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of [`batch_loss`] with respect to every parameter.
pub fn batch_gradient(model: &ParamVector, data: &Dataset, batch: &Minibatch) -> Result<ParamVector> {
    check_model_data(model, data)?;
    batch.validate(data)?;
    let Shape { classes, features } = model.shape();
    let mut grad = ParamVector::zeros(model.shape());
    let mut p = vec![0.0; classes];
    let scale = 1.0 / batch.len() as f64;
    {
        let g = grad.values_mut();
        for &i in batch.indices() {
            let e = &data.examples[i];
            logits_into(model, &e.features, &mut p);
            softmax_in_place(&mut p);
            p[e.label] -= 1.0;
            for (c, &pc) in p.iter().enumerate() {
                let coef = pc * scale;
                let row = &mut g[c * features..(c + 1) * features];
                for (gw, &x) in row.iter_mut().zip(&e.features) {
                    *gw += coef * x;
                }
                g[classes * features + c] += coef;
            }
        }
    }
    Ok(grad)
}

/// `model - lr * grad`; the input is left untouched.
pub fn sgd_step(model: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::arg(format!("learning rate must be positive, got {lr}")));
    }
    let mut next = model.clone();
    next.axpy(-lr, grad)?;
    Ok(next)
}

/// Index of the largest entry; ties (and NaN) resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of examples whose predicted class equals the label.
pub fn evaluate_accuracy(model: &ParamVector, data: &Dataset) -> Result<f64> {
    check_model_data(model, data)?;
    if data.is_empty() {
        return Err(Error::arg("accuracy of an empty dataset"));
    }
    let mut z = vec![0.0; model.shape().classes];
    let correct = data
        .examples
        .iter()
        .filter(|e| {
            // argmax of the logits equals argmax of the probabilities
            logits_into(model, &e.features, &mut z);
            argmax(&z) == e.label
        })
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Mean cross-entropy over the whole dataset.
pub fn evaluate_mean_loss(model: &ParamVector, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::arg("loss of an empty dataset"));
    }
    batch_loss(model, data, &Minibatch::full(data))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    fn ex(features: Vec<f64>, label: usize) -> LabeledExample {
        LabeledExample { features, label }
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let m = ParamVector::zeros(Shape::new(4, 3));
        let p = predict_probs(&m, &[0.3, 0.9, 0.1]).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn equal_logits_split_evenly() {
        let m = ParamVector::from_parts(&[vec![1.0], vec![-1.0]], &[0.0, 0.0]).unwrap();
        let p = predict_probs(&m, &[0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn two_class_probs() {
        let m = ParamVector::from_parts(&[vec![1.0], vec![0.0]], &[0.0, 0.0]).unwrap();
        let p = predict_probs(&m, &[1.0]).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(p[0], e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[0], 0.73106, epsilon = 1e-5);
    }

    #[test]
    fn predict_rejects_wrong_dimension() {
        let m = ParamVector::zeros(Shape::new(2, 3));
        assert!(matches!(predict_probs(&m, &[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn uniform_loss_is_ln_c() {
        let data = Dataset::new(
            (0..10).map(|c| ex(vec![c as f64 / 10.0, 0.5], c)).collect(),
            10,
        )
        .unwrap();
        let m = ParamVector::zeros(data.shape());
        let l = batch_loss(&m, &data, &Minibatch::new(vec![0, 3, 7])).unwrap();
        assert_abs_diff_eq!(l, 10f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(evaluate_mean_loss(&m, &data).unwrap(), std::f64::consts::LN_10, epsilon = 1e-12);
    }

    #[test]
    fn single_example_loss() {
        let data = Dataset::new(vec![ex(vec![1.0], 0)], 2).unwrap();
        let m = ParamVector::from_parts(&[vec![1.0], vec![0.0]], &[0.0, 0.0]).unwrap();
        let l = batch_loss(&m, &data, &Minibatch::full(&data)).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(l, -(e / (e + 1.0)).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(l, 0.31326, epsilon = 1e-5);
    }

    #[test]
    fn separating_model_has_tiny_loss() {
        let data = Dataset::new(vec![ex(vec![1.0], 0), ex(vec![-1.0], 1)], 2).unwrap();
        let m = ParamVector::from_parts(&[vec![20.0], vec![-20.0]], &[0.0, 0.0]).unwrap();
        assert!(evaluate_mean_loss(&m, &data).unwrap() < 1e-3);
    }

    #[test]
    fn confident_mispredict_is_clamped() {
        let data = Dataset::new(vec![ex(vec![1.0], 1)], 2).unwrap();
        let m = ParamVector::from_parts(&[vec![1e4], vec![-1e4]], &[0.0, 0.0]).unwrap();
        let l = evaluate_mean_loss(&m, &data).unwrap();
        assert_abs_diff_eq!(l, -PROB_FLOOR.ln(), epsilon = 1e-9);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let data = Dataset::new(vec![ex(vec![1.0], 0)], 2).unwrap();
        let m = ParamVector::zeros(data.shape());
        assert!(matches!(
            batch_loss(&m, &data, &Minibatch::new(vec![])),
            Err(Error::Argument(_))
        ));
        assert!(batch_gradient(&m, &data, &Minibatch::new(vec![5])).is_err());
    }

    #[test]
    fn weight_gradient_vanishes_at_origin_inputs() {
        let data = Dataset::new(vec![ex(vec![0.0, 0.0], 0), ex(vec![0.0, 0.0], 1)], 2).unwrap();
        let m = ParamVector::from_parts(&[vec![0.4, -1.0], vec![2.0, 0.3]], &[0.0, 0.0]).unwrap();
        let g = batch_gradient(&m, &data, &Minibatch::full(&data)).unwrap();
        assert!(g.values()[..4].iter().all(|&v| v == 0.0));
        // symmetric labels with equal biases: the bias gradient cancels too
        assert!(g.bias().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn uniform_model_bias_gradient_closed_form() {
        let c = 5;
        let data = Dataset::new(vec![ex(vec![0.2, 0.7, 0.1], 3)], c).unwrap();
        let m = ParamVector::zeros(data.shape());
        let g = batch_gradient(&m, &data, &Minibatch::full(&data)).unwrap();
        for (j, &gj) in g.bias().iter().enumerate() {
            let expected = 1.0 / c as f64 - if j == 3 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(gj, expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn sgd_step_arithmetic() {
        let m = ParamVector::flat(vec![1.0, 2.0]);
        let g = ParamVector::flat(vec![1.0, -1.0]);
        let next = sgd_step(&m, &g, 0.01).unwrap();
        assert_abs_diff_eq!(next.values()[0], 0.99, epsilon = 1e-15);
        assert_abs_diff_eq!(next.values()[1], 2.01, epsilon = 1e-15);
        assert_eq!(m.values(), &[1.0, 2.0]);
        let zero = ParamVector::flat(vec![0.0, 0.0]);
        assert_eq!(sgd_step(&m, &zero, 0.5).unwrap(), m);
    }

    #[test]
    fn sgd_step_validates() {
        let m = ParamVector::flat(vec![1.0, 2.0]);
        assert!(sgd_step(&m, &ParamVector::flat(vec![1.0]), 0.1).is_err());
        assert!(sgd_step(&m, &m, 0.0).is_err());
        assert!(sgd_step(&m, &m, -1.0).is_err());
    }

    #[test]
    fn sgd_contracts_on_quadratic() {
        // f(w) = L/2 |w|^2, gradient L w, contraction |1 - lr L| < 1
        let l = 4.0;
        let mut w = ParamVector::flat(vec![3.0, -1.0, 0.5]);
        let mut prev = w.norm_squared();
        for _ in 0..50 {
            let g = w.scaled(l);
            w = sgd_step(&w, &g, 0.3).unwrap();
            let n = w.norm_squared();
            assert!(n < prev);
            prev = n;
        }
    }

    #[test]
    fn accuracy_tie_break_and_constant_model() {
        let data = Dataset::new(
            vec![ex(vec![0.5], 0), ex(vec![0.1], 1), ex(vec![0.9], 0), ex(vec![0.3], 1)],
            2,
        )
        .unwrap();
        let zero = ParamVector::zeros(data.shape());
        assert_eq!(evaluate_accuracy(&zero, &data).unwrap(), 0.5);

        let all0 = Dataset::new(vec![ex(vec![0.5], 0), ex(vec![0.2], 0)], 2).unwrap();
        let favour0 = ParamVector::from_parts(&[vec![0.0], vec![0.0]], &[1.0, 0.0]).unwrap();
        assert_eq!(evaluate_accuracy(&favour0, &all0).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_of_empty_dataset_fails() {
        let data = Dataset::new(vec![], 2).unwrap();
        let m = ParamVector::zeros(Shape::new(2, 0));
        assert!(evaluate_accuracy(&m, &data).is_err());
        assert!(evaluate_mean_loss(&m, &data).is_err());
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        assert!(Dataset::new(vec![ex(vec![0.0], 2)], 2).is_err());
        assert!(Dataset::new(vec![ex(vec![0.0], 0), ex(vec![0.0, 1.0], 0)], 2).is_err());
    }
}
