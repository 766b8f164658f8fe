//! Distance-generating functions and the mirror-map calculus built on them.
//!
//! A [`DistanceGenerator`] bundles `phi`, the mirror map `grad_phi`, its
//! inverse `grad_conjugate`, the Hessian of `phi`, and a strong-convexity
//! modulus. Two generators ship: the squared Euclidean norm and the negative
//! entropy. All maps act blockwise on a single agent's `d`-vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent accepted by the entropy conjugate map before `exp` overflows.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    /// All of `R^d`.
    Whole,
    /// The open positive orthant.
    PositiveOrthant,
}

/// Box `[lower, upper]^d` over which the entropy modulus `1 / upper` holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyBox {
    pub lower: f64,
    pub upper: f64,
}

impl Default for EntropyBox {
    fn default() -> Self {
        EntropyBox {
            lower: 1e-6,
            upper: 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgfKind {
    Euclidean,
    NegativeEntropy(EntropyBox),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceGenerator {
    dim: usize,
    kind: DgfKind,
}

impl DistanceGenerator {
    /// `phi(x) = ||x||^2 / 2`; every map is the identity.
    pub fn euclidean(dim: usize) -> Self {
        DistanceGenerator {
            dim,
            kind: DgfKind::Euclidean,
        }
    }

    /// `phi(x) = sum x_j log x_j` with the default modulus box.
    pub fn negative_entropy(dim: usize) -> Self {
        Self::negative_entropy_in_box(dim, EntropyBox::default())
            .expect("default entropy box is valid")
    }

    pub fn negative_entropy_in_box(dim: usize, bounds: EntropyBox) -> Result<Self> {
        if !(bounds.lower > 0.0 && bounds.upper > bounds.lower && bounds.upper.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "entropy box must satisfy 0 < lower < upper < inf, got [{}, {}]",
                bounds.lower, bounds.upper
            )));
        }
        Ok(DistanceGenerator {
            dim,
            kind: DgfKind::NegativeEntropy(bounds),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> DgfKind {
        self.kind
    }

    /// Same generator acting on a different block dimension.
    pub fn with_dim(&self, dim: usize) -> Self {
        DistanceGenerator { dim, kind: self.kind }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            DgfKind::Euclidean => "euclidean",
            DgfKind::NegativeEntropy(_) => "negative_entropy",
        }
    }

    pub fn domain(&self) -> Domain {
        match self.kind {
            DgfKind::Euclidean => Domain::Whole,
            DgfKind::NegativeEntropy(_) => Domain::PositiveOrthant,
        }
    }

    /// `mu_phi`. For the entropy this is `1 / upper`, valid inside its box.
    pub fn strong_convexity_modulus(&self) -> f64 {
        match self.kind {
            DgfKind::Euclidean => 1.0,
            DgfKind::NegativeEntropy(b) => 1.0 / b.upper,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim
            && match self.kind {
                DgfKind::Euclidean => x.iter().all(|v| v.is_finite()),
                DgfKind::NegativeEntropy(_) => x.iter().all(|&v| v > 0.0 && v.is_finite()),
            }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: len,
            });
        }
        Ok(())
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        self.check_dim(x.len())?;
        if let DgfKind::NegativeEntropy(_) = self.kind {
            if let Some((i, v)) = x.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
                return Err(Error::DomainViolation(format!(
                    "negative entropy needs x > 0, got x[{i}] = {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn phi(&self, x: &[f64]) -> Result<f64> {
        self.check_domain(x)?;
        Ok(match self.kind {
            DgfKind::Euclidean => 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            DgfKind::NegativeEntropy(_) => x.iter().map(|&v| v * v.ln()).sum(),
        })
    }

    /// Mirror map `z = grad phi(x)`.
    pub fn grad_phi(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim);
        self.grad_phi_into(x, out.as_mut_slice())?;
        Ok(out)
    }

    pub fn grad_phi_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_domain(x)?;
        match self.kind {
            DgfKind::Euclidean => out.copy_from_slice(x),
            DgfKind::NegativeEntropy(_) => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = 1.0 + v.ln();
                }
            }
        }
        Ok(())
    }

    /// `phi*(z)`, the convex conjugate.
    pub fn conjugate(&self, z: &[f64]) -> Result<f64> {
        self.check_dim(z.len())?;
        match self.kind {
            DgfKind::Euclidean => Ok(0.5 * z.iter().map(|v| v * v).sum::<f64>()),
            DgfKind::NegativeEntropy(_) => {
                let mut total = 0.0;
                for &v in z {
                    total += guarded_exp(v - 1.0)?;
                }
                Ok(total)
            }
        }
    }

    /// Inverse mirror map `x = grad phi*(z)`.
    pub fn grad_conjugate(&self, z: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim);
        self.grad_conjugate_into(z, out.as_mut_slice())?;
        Ok(out)
    }

    pub fn grad_conjugate_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(z.len())?;
        match self.kind {
            DgfKind::Euclidean => out.copy_from_slice(z),
            DgfKind::NegativeEntropy(_) => {
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = guarded_exp(v - 1.0)?;
                }
            }
        }
        Ok(())
    }

    pub fn hessian_phi(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        Ok(match self.kind {
            DgfKind::Euclidean => DMatrix::identity(self.dim, self.dim),
            DgfKind::NegativeEntropy(_) => {
                DMatrix::from_diagonal(&DVector::from_iterator(self.dim, x.iter().map(|v| 1.0 / v)))
            }
        })
    }

    /// `(hessian phi(x))^{-1}`, closed form for both shipped generators.
    pub fn inverse_hessian_phi(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_domain(x)?;
        Ok(match self.kind {
            DgfKind::Euclidean => DMatrix::identity(self.dim, self.dim),
            DgfKind::NegativeEntropy(_) => {
                DMatrix::from_diagonal(&DVector::from_column_slice(x))
            }
        })
    }

    /// `D(x, x_ref) = phi(x) - phi(x_ref) - <grad phi(x_ref), x - x_ref>`.
    pub fn bregman(&self, x: &[f64], x_ref: &[f64]) -> Result<f64> {
        let grad_ref = self.grad_phi(x_ref)?;
        let inner: f64 = grad_ref
            .iter()
            .zip(x.iter().zip(x_ref))
            .map(|(g, (a, b))| g * (a - b))
            .sum();
        Ok(self.phi(x)? - self.phi(x_ref)? - inner)
    }
}

fn guarded_exp(exponent: f64) -> Result<f64> {
    if exponent > MAX_EXPONENT || exponent.is_nan() {
        return Err(Error::NumericalOverflow(format!(
            "entropy conjugate exponent {exponent} exceeds {MAX_EXPONENT}"
        )));
    }
    Ok(exponent.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_maps_are_identity() {
        let dgf = DistanceGenerator::euclidean(2);
        assert_eq!(dgf.grad_phi(&[3.0, -4.0]).unwrap().as_slice(), &[3.0, -4.0]);
        assert_eq!(dgf.grad_conjugate(&[3.0, -4.0]).unwrap().as_slice(), &[3.0, -4.0]);
        assert_eq!(dgf.hessian_phi(&[7.0, 1e6]).unwrap(), DMatrix::identity(2, 2));
        assert_eq!(dgf.strong_convexity_modulus(), 1.0);
        assert_eq!(dgf.domain(), Domain::Whole);
    }

    #[test]
    fn euclidean_bregman_is_half_squared_distance() {
        let dgf = DistanceGenerator::euclidean(2);
        assert_eq!(dgf.bregman(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(dgf.bregman(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 0.0);
        let d = dgf.bregman(&[1.5, -0.5], &[0.25, 2.0]).unwrap();
        let half_sq = 0.5 * (1.25f64.powi(2) + 2.5f64.powi(2));
        assert!((d - half_sq).abs() < 1e-15);
    }

    #[test]
    fn entropy_maps() {
        let dgf = DistanceGenerator::negative_entropy(2);
        assert_eq!(dgf.grad_conjugate(&[1.0, 1.0]).unwrap().as_slice(), &[1.0, 1.0]);
        let z = dgf.grad_phi(&[1.0, std::f64::consts::E]).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-15 && (z[1] - 2.0).abs() < 1e-15);

        let dgf3 = DistanceGenerator::negative_entropy(3);
        let x = [0.5, 2.0, 3.7];
        let back = dgf3.grad_conjugate(dgf3.grad_phi(&x).unwrap().as_slice()).unwrap();
        for (a, b) in back.iter().zip(x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_bregman_closed_form() {
        let dgf = DistanceGenerator::negative_entropy(2);
        let got = dgf.bregman(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        let want = 2.0 - 2.0 * 2f64.ln();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn entropy_rejects_non_positive_points() {
        let dgf = DistanceGenerator::negative_entropy(2);
        assert!(matches!(dgf.phi(&[1.0, 0.0]), Err(Error::DomainViolation(_))));
        assert!(matches!(dgf.grad_phi(&[-1.0, 1.0]), Err(Error::DomainViolation(_))));
        assert!(matches!(dgf.hessian_phi(&[1.0, -0.0]), Err(Error::DomainViolation(_))));
        assert!(matches!(dgf.bregman(&[1.0, 1.0], &[0.0, 1.0]), Err(Error::DomainViolation(_))));
    }

    #[test]
    fn entropy_overflow_guard() {
        let dgf = DistanceGenerator::negative_entropy(1);
        assert!(dgf.grad_conjugate(&[701.0]).is_ok());
        assert!(matches!(
            dgf.grad_conjugate(&[701.5]),
            Err(Error::NumericalOverflow(_))
        ));
        assert!(matches!(dgf.grad_conjugate(&[f64::NAN]), Err(Error::NumericalOverflow(_))));
    }

    #[test]
    fn dimension_is_checked() {
        let dgf = DistanceGenerator::euclidean(3);
        assert!(matches!(
            dgf.grad_phi(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, actual: 1 })
        ));
    }

    #[test]
    fn entropy_box_validation() {
        let bad = EntropyBox { lower: 2.0, upper: 1.0 };
        assert!(DistanceGenerator::negative_entropy_in_box(1, bad).is_err());
        let ok = EntropyBox { lower: 1e-3, upper: 10.0 };
        let dgf = DistanceGenerator::negative_entropy_in_box(1, ok).unwrap();
        assert_eq!(dgf.strong_convexity_modulus(), 0.1);
    }
}
