//! Model-poisoning payloads sent by malicious nodes.
//!
//! Malicious nodes hold no data and never train. Each round a malicious node
//! builds one payload from an [`AdversaryView`] and sends the same payload to
//! all of its neighbours.

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::model::{ParamVector, Shape};

fn default_sigma() -> f64 {
    30.0
}
fn default_factor() -> f64 {
    -10.0
}

/// Deviation multiplier for ALIE.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlieZ {
    Fixed(f64),
    Auto(AutoTag),
}

/// Serialises as the string `"auto"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

impl AlieZ {
    pub const AUTO: AlieZ = AlieZ::Auto(AutoTag::Auto);
}

impl Default for AlieZ {
    fn default() -> Self {
        AlieZ::AUTO
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackKind {
    /// Every coordinate drawn from `N(0, sigma^2)`.
    Gaussian {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    /// `factor` times the benign mean.
    SignFlip {
        #[serde(default = "default_factor")]
        factor: f64,
    },
    /// A Little Is Enough: coordinate-wise `mean - z * std` of benign models.
    Alie {
        #[serde(default)]
        z: AlieZ,
    },
}

impl AttackKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AttackKind::Gaussian { sigma } if !(sigma > 0.0) || !sigma.is_finite() => {
                Err(Error::arg(format!("gaussian sigma must be positive, got {sigma}")))
            }
            AttackKind::SignFlip { factor } if !factor.is_finite() => {
                Err(Error::arg("sign-flip factor must be finite"))
            }
            AttackKind::Alie { z: AlieZ::Fixed(z) } if !z.is_finite() => {
                Err(Error::arg("ALIE z must be finite"))
            }
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackKind::Gaussian { sigma } => write!(f, "GA(sigma={sigma})"),
            AttackKind::SignFlip { factor } => write!(f, "S-F(factor={factor})"),
            AttackKind::Alie { z: AlieZ::Fixed(z) } => write!(f, "ALIE(z={z})"),
            AttackKind::Alie { .. } => write!(f, "ALIE(z=auto)"),
        }
    }
}

/// What a malicious node can see when building its payload.
#[derive(Clone, Debug)]
pub struct AdversaryView<'a> {
    /// Benign post-training models of this round.
    pub benign: Vec<&'a ParamVector>,
    /// The malicious node's own stored model.
    pub own: &'a ParamVector,
    /// Expected payload shape.
    pub shape: Shape,
    /// Total node count `n` and malicious count `m` (for ALIE's automatic z).
    pub num_nodes: usize,
    pub num_malicious: usize,
}

impl AdversaryView<'_> {
    /// Coordinate-wise mean and population standard deviation of the benign
    /// models.
    pub fn benign_moments(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.benign.len();
        if n == 0 {
            return Err(Error::arg("adversary view holds no benign models"));
        }
        let dim = self.shape.len();
        for m in &self.benign {
            if m.shape() != self.shape {
                return Err(Error::Shape {
                    expected: format!("{:?}", self.shape),
                    actual: format!("{:?}", m.shape()),
                });
            }
        }
        let mut mean = vec![0.0; dim];
        for m in &self.benign {
            for (a, v) in mean.iter_mut().zip(m.values()) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= n as f64);
        let mut var = vec![0.0; dim];
        for m in &self.benign {
            for ((s, v), mu) in var.iter_mut().zip(m.values()).zip(&mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok((mean, std))
    }

    pub fn benign_mean(&self) -> Result<ParamVector> {
        let (mean, _) = self.benign_moments()?;
        ParamVector::from_values(self.shape, mean)
    }
}

/// I.i.d. `N(0, sigma^2)` coordinates.
pub fn gaussian_update<R: Rng + ?Sized>(shape: Shape, sigma: f64, rng: &mut R) -> Result<ParamVector> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::arg(e.to_string()))?;
    if !(sigma > 0.0) {
        return Err(Error::arg(format!("gaussian sigma must be positive, got {sigma}")));
    }
    let values = (0..shape.len()).map(|_| normal.sample(rng)).collect();
    ParamVector::from_values(shape, values)
}

/// Element-wise `factor * model`.
pub fn sign_flip_update(model: &ParamVector, factor: f64) -> ParamVector {
    model.scaled(factor)
}

/// The automatic ALIE multiplier `Phi^-1((n - m - s) / (n - m))` with
/// `s = floor(n / 2 + 1) - m`, clamped to `[0, 3]`. Falls back to 0 when
/// `s <= 0`.
pub fn alie_auto_z(num_nodes: usize, num_malicious: usize) -> f64 {
    let n = num_nodes as i64;
    let m = num_malicious as i64;
    let s = n / 2 + 1 - m;
    if s <= 0 || n - m <= 0 {
        warn!("ALIE automatic z infeasible for n = {n}, m = {m}; using z = 0");
        return 0.0;
    }
    let q = (n - m - s) as f64 / (n - m) as f64;
    let std = StdNormal::new(0.0, 1.0).expect("standard normal");
    let z = std.inverse_cdf(q.clamp(0.0, 1.0));
    if z.is_nan() {
        0.0
    } else {
        z.clamp(0.0, 3.0)
    }
}

/// Coordinate-wise `mean - z * std` over the visible benign models.
pub fn alie_update(view: &AdversaryView<'_>, z: AlieZ) -> Result<ParamVector> {
    if view.benign.len() < 2 {
        return Err(Error::arg(format!(
            "ALIE needs at least 2 benign models, got {}",
            view.benign.len()
        )));
    }
    let z = match z {
        AlieZ::Fixed(z) => z,
        AlieZ::Auto(_) => alie_auto_z(view.num_nodes, view.num_malicious),
    };
    let (mean, std) = view.benign_moments()?;
    let values = mean.iter().zip(&std).map(|(mu, sd)| mu - z * sd).collect();
    ParamVector::from_values(view.shape, values)
}

/// Builds the payload for `kind`. Sign flipping negates the benign mean of
/// the view (the model an honest node would have produced).
pub fn craft_payload<R: Rng + ?Sized>(kind: AttackKind, view: &AdversaryView<'_>, rng: &mut R) -> Result<ParamVector> {
    match kind {
        AttackKind::Gaussian { sigma } => gaussian_update(view.shape, sigma, rng),
        AttackKind::SignFlip { factor } => Ok(sign_flip_update(&view.benign_mean()?, factor)),
        AttackKind::Alie { z } => alie_update(view, z),
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::rng::{stream, Purpose};

    fn view<'a>(benign: &'a [ParamVector], own: &'a ParamVector) -> AdversaryView<'a> {
        AdversaryView {
            benign: benign.iter().collect(),
            own,
            shape: own.shape(),
            num_nodes: 12,
            num_malicious: 2,
        }
    }

    #[test]
    fn gaussian_statistics() {
        let shape = Shape::new(100_000, 0);
        let mut rng = stream(5, Purpose::Attack);
        let v = gaussian_update(shape, 30.0, &mut rng).unwrap();
        let n = v.len() as f64;
        let mean = v.values().iter().sum::<f64>() / n;
        let sd = (v.values().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.5, "{mean}");
        assert!((29.5..30.5).contains(&sd), "{sd}");
        assert_eq!(v.shape(), shape);
    }

    #[test]
    fn gaussian_replays() {
        let shape = Shape::new(3, 4);
        let a = gaussian_update(shape, 30.0, &mut stream(9, Purpose::Attack)).unwrap();
        let b = gaussian_update(shape, 30.0, &mut stream(9, Purpose::Attack)).unwrap();
        assert_eq!(a, b);
        assert!(gaussian_update(shape, 0.0, &mut stream(9, Purpose::Attack)).is_err());
    }

    #[test]
    fn sign_flip_examples() {
        let zero = ParamVector::flat(vec![0.0, 0.0]);
        assert_eq!(sign_flip_update(&zero, -10.0).values(), &[0.0, 0.0]);
        let m = ParamVector::flat(vec![1.0, -2.0]);
        assert_eq!(sign_flip_update(&m, -10.0).values(), &[-10.0, 20.0]);
        let twice = sign_flip_update(&sign_flip_update(&m, -10.0), -10.0);
        assert_eq!(twice.values(), &[100.0, -200.0]);
    }

    #[test]
    fn alie_examples() {
        let own = ParamVector::flat(vec![0.0]);
        let benign = vec![ParamVector::flat(vec![0.0]), ParamVector::flat(vec![2.0])];
        let v = view(&benign, &own);
        assert_eq!(alie_update(&v, AlieZ::Fixed(1.0)).unwrap().values(), &[0.0]);
        assert_eq!(alie_update(&v, AlieZ::Fixed(0.0)).unwrap().values(), &[1.0]);

        let same = vec![ParamVector::flat(vec![4.0, 1.0]); 3];
        let own2 = ParamVector::flat(vec![0.0, 0.0]);
        let v = view(&same, &own2);
        assert_eq!(alie_update(&v, AlieZ::Fixed(2.5)).unwrap().values(), &[4.0, 1.0]);
    }

    #[test]
    fn alie_needs_two_models() {
        let own = ParamVector::flat(vec![0.0]);
        let benign = vec![ParamVector::flat(vec![1.0])];
        assert!(alie_update(&view(&benign, &own), AlieZ::AUTO).is_err());
    }

    #[test]
    fn alie_auto_z_values() {
        // n = 12, m = 2: s = 5, quantile 0.5
        assert_abs_diff_eq!(alie_auto_z(12, 2), 0.0, epsilon = 1e-9);
        // n = 50, m = 10: s = 16, quantile 24/40 = 0.6
        assert_abs_diff_eq!(alie_auto_z(50, 10), 0.2533471031357997, epsilon = 1e-6);
        // s <= 0
        assert_eq!(alie_auto_z(4, 3), 0.0);
    }

    #[test]
    fn attack_json() {
        let a: AttackKind = serde_json::from_str(r#"{"kind":"sign_flip"}"#).unwrap();
        assert_eq!(a, AttackKind::SignFlip { factor: -10.0 });
        let a: AttackKind = serde_json::from_str(r#"{"kind":"gaussian"}"#).unwrap();
        assert_eq!(a, AttackKind::Gaussian { sigma: 30.0 });
        let a: AttackKind = serde_json::from_str(r#"{"kind":"alie","z":"auto"}"#).unwrap();
        assert_eq!(a, AttackKind::Alie { z: AlieZ::AUTO });
        let a: AttackKind = serde_json::from_str(r#"{"kind":"alie","z":1.5}"#).unwrap();
        assert_eq!(a, AttackKind::Alie { z: AlieZ::Fixed(1.5) });
    }

    #[test]
    fn payload_shapes() {
        let own = ParamVector::zeros(Shape::new(3, 2));
        let benign = vec![
            ParamVector::from_values(Shape::new(3, 2), vec![1.0; 9]).unwrap(),
            ParamVector::from_values(Shape::new(3, 2), vec![3.0; 9]).unwrap(),
        ];
        let v = view(&benign, &own);
        let mut rng = stream(1, Purpose::Attack);
        for kind in [
            AttackKind::Gaussian { sigma: 30.0 },
            AttackKind::SignFlip { factor: -10.0 },
            AttackKind::Alie { z: AlieZ::AUTO },
        ] {
            assert_eq!(craft_payload(kind, &v, &mut rng).unwrap().shape(), own.shape());
        }
        let flipped = craft_payload(AttackKind::SignFlip { factor: -10.0 }, &v, &mut rng).unwrap();
        assert!(flipped.values().iter().all(|&x| x == -20.0));
    }
}
