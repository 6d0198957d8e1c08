//! Gaussian blob classification data, a small stand-in for image datasets.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Dataset, LabeledExample};
use crate::rng::{Purpose, StreamKey};

/// Class centres for `classes` blobs in `dim` dimensions.
///
/// The layout depends only on `(classes, dim)`, so train and test sets drawn
/// with different seeds share their centres. Centres are rescaled so the
/// closest pair sits exactly `max(4 * spread, 1)` apart.
pub fn blob_means(classes: usize, dim: usize, spread: f64) -> Vec<Vec<f64>> {
    let layout_seed = ((classes as u64) << 32) ^ dim as u64;
    let mut rng = StreamKey::new(layout_seed, Purpose::Synthetic).node(usize::MAX).rng();
    let raw: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut closest = f64::INFINITY;
    for i in 0..classes {
        for j in i + 1..classes {
            let d2: f64 = raw[i].iter().zip(&raw[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            closest = closest.min(d2.sqrt());
        }
    }
    let target = (4.0 * spread).max(1.0);
    let scale = if closest.is_finite() && closest > 0.0 {
        target / closest
    } else {
        1.0
    };
    raw.into_iter()
        .map(|m| m.into_iter().map(|v| v * scale).collect())
        .collect()
}

/// `n_per_class` isotropic Gaussian draws (std `spread`) around each class
/// centre, ordered class by class.
pub fn gen_synthetic_blobs(
    classes: usize,
    dim: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || dim < 1 || n_per_class < 1 {
        return Err(Error::arg(format!(
            "synthetic blobs need C >= 2, d >= 1, n_per_class >= 1 (got {classes}, {dim}, {n_per_class})"
        )));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::arg(format!("spread must be a nonnegative real, got {spread}")));
    }
    let means = blob_means(classes, dim, spread);
    let noise = Normal::new(0.0, spread).map_err(|e| Error::arg(e.to_string()))?;
    let mut rng = StreamKey::new(seed, Purpose::Synthetic).rng();
    let mut examples = Vec::with_capacity(classes * n_per_class);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            let features = mean.iter().map(|m| m + noise.sample(&mut rng)).collect();
            examples.push(LabeledExample { features, label });
        }
    }
    Dataset::new(examples, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{batch_gradient, evaluate_accuracy, sgd_step, Minibatch, ParamVector};

    #[test]
    fn histogram_is_exact() {
        let d = gen_synthetic_blobs(4, 3, 17, 0.5, 1).unwrap();
        assert_eq!(d.class_histogram(), vec![17; 4]);
    }

    #[test]
    fn replay_is_identical() {
        let a = gen_synthetic_blobs(3, 5, 10, 1.0, 77).unwrap();
        let b = gen_synthetic_blobs(3, 5, 10, 1.0, 77).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        let c = gen_synthetic_blobs(3, 5, 10, 1.0, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn means_are_separated() {
        for spread in [0.1, 0.5, 2.0] {
            let m = blob_means(10, 64, spread);
            for i in 0..10 {
                for j in i + 1..10 {
                    let d: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    assert!(d >= 4.0 * spread - 1e-9);
                }
            }
        }
    }

    #[test]
    fn degenerate_spread_is_learnable() {
        let d = gen_synthetic_blobs(3, 4, 5, 1e-12, 3).unwrap();
        let means = blob_means(3, 4, 1e-12);
        for e in d.examples() {
            for (x, m) in e.features.iter().zip(&means[e.label]) {
                assert!((x - m).abs() < 1e-9);
            }
        }
        let mut model = ParamVector::zeros(d.shape());
        let batch = Minibatch::full(&d);
        for _ in 0..500 {
            let g = batch_gradient(&model, &d, &batch).unwrap();
            model = sgd_step(&model, &g, 0.5).unwrap();
        }
        assert_eq!(evaluate_accuracy(&model, &d).unwrap(), 1.0);
    }

    #[test]
    fn argument_checks() {
        assert!(gen_synthetic_blobs(1, 3, 5, 1.0, 0).is_err());
        assert!(gen_synthetic_blobs(2, 0, 5, 1.0, 0).is_err());
        assert!(gen_synthetic_blobs(2, 3, 0, 1.0, 0).is_err());
        assert!(gen_synthetic_blobs(2, 3, 5, -1.0, 0).is_err());
    }
}
