//! Unit vectors on the d-sphere.
//!
//! Latent states, predictions and evidence all live here. Every constructor
//! renormalizes or checks the norm, so downstream cosine arithmetic can
//! assume `|v| = 1`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm tolerance for vectors claimed to be unit length.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps components that are already unit-norm.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        check_dim(components.len())?;
        let norm = l2(&components);
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::contract(format!(
                "expected unit norm, got {norm}"
            )));
        }
        Ok(UnitVector(components))
    }

    /// Scales arbitrary nonzero components onto the sphere.
    pub fn normalize(mut components: Vec<f64>) -> Result<Self> {
        check_dim(components.len())?;
        let norm = l2(&components);
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::contract("cannot normalize a zero or non-finite vector"));
        }
        components.iter_mut().for_each(|c| *c /= norm);
        Ok(UnitVector(components))
    }

    /// The i-th standard basis vector.
    pub fn basis(dim: usize, i: usize) -> Result<Self> {
        check_dim(dim)?;
        if i >= dim {
            return Err(Error::contract(format!("basis index {i} out of range for dim {dim}")));
        }
        let mut c = vec![0.0; dim];
        c[i] = 1.0;
        Ok(UnitVector(c))
    }

    /// Uniform draw on the sphere via a normalized Gaussian.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        loop {
            let c = gaussian(rng, dim);
            if l2(&c) > 0.0 {
                return Self::normalize(c);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2(&self.0)
    }

    pub fn dot(&self, other: &UnitVector) -> Result<f64> {
        same_dim(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    /// Cosine similarity, clamped into [-1, 1] against rounding. Identical
    /// vectors give exactly 1.
    pub fn cosine(&self, other: &UnitVector) -> Result<f64> {
        same_dim(self.dim(), other.dim())?;
        if self.0 == other.0 {
            return Ok(1.0);
        }
        Ok(self.dot(other)?.clamp(-1.0, 1.0))
    }

    pub fn negated(&self) -> UnitVector {
        UnitVector(self.0.iter().map(|c| -c).collect())
    }

    /// `normalize(a * self + b * other)`.
    pub fn blend(&self, a: f64, other: &UnitVector, b: f64) -> Result<UnitVector> {
        same_dim(self.dim(), other.dim())?;
        let c = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Self::normalize(c)
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        UnitVector::new(v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(v: UnitVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn same_dim(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::DimensionMismatch { left, right });
    }
    Ok(())
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::contract(format!("unit vectors need dim >= 2, got {dim}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(UnitVector::normalize(vec![0.0, 0.0, 0.0]).is_err());
        assert!(UnitVector::normalize(vec![1.0]).is_err());
        assert!(UnitVector::new(vec![1.0, 1.0]).is_err());
        assert!(UnitVector::normalize(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn random_draws_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [2, 3, 17, 256] {
            let v = UnitVector::random(&mut rng, d).unwrap();
            assert!((v.norm() - 1.0).abs() < NORM_TOLERANCE);
        }
    }

    #[test]
    fn blend_renormalizes() {
        let a = UnitVector::basis(2, 0).unwrap();
        let b = UnitVector::basis(2, 1).unwrap();
        let m = a.blend(0.5, &b, 0.5).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.as_slice()[0] - h).abs() < 1e-15);
        assert!((m.as_slice()[1] - h).abs() < 1e-15);
    }

    #[test]
    fn serde_enforces_norm() {
        assert!(serde_json::from_str::<UnitVector>("[0.6, 0.8]").is_ok());
        assert!(serde_json::from_str::<UnitVector>("[1.0, 1.0]").is_err());
    }
}
