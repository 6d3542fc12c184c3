//! Flat parameter/gradient container shared by every numerical routine.
//!
//! All reductions run left-to-right over coordinates so that results are
//! bit-reproducible across runs.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Returns `Err(NonFinite(what))` if any entry is NaN or infinite.
    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn check_dim(&self, dim: usize, what: &str) -> Result<()> {
        if self.dim() == dim {
            Ok(())
        } else {
            Err(Error::config(format!(
                "{what}: dimension mismatch (expected {dim}, got {})",
                self.dim()
            )))
        }
    }

    /// `self += other`
    pub fn add_assign(&mut self, other: &ParamVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    /// `self -= other`
    pub fn sub_assign(&mut self, other: &ParamVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a -= b;
        }
    }

    /// `self - other` as a new vector.
    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.dim(), other.dim());
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.0 {
            *a *= factor;
        }
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|a| a * factor).collect())
    }

    /// Element-wise division by a scalar. Kept distinct from `scaled(1/d)`
    /// because the two are not bit-identical.
    pub fn divided(&self, divisor: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|a| a / divisor).collect())
    }

    pub fn fill(&mut self, value: f64) {
        self.0.iter_mut().for_each(|a| *a = value);
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).fold(0.0, |acc, (a, b)| acc + a * b)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Cosine similarity; zero when either vector vanishes.
    pub fn cosine(&self, other: &ParamVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let mut a = ParamVector::from_vec(vec![1.0, 1.0]);
        a.add_assign(&ParamVector::from_vec(vec![-0.5, 0.25]));
        assert_eq!(a.as_slice(), &[0.5, 1.25]);
        assert_eq!(a.sub(&a), ParamVector::zeros(2));
        assert_eq!(ParamVector::from_vec(vec![3.0, 4.0]).norm(), 5.0);
    }

    #[test]
    fn finiteness_is_detected() {
        let v = ParamVector::from_vec(vec![1.0, f64::NAN]);
        assert!(matches!(v.check_finite("x"), Err(Error::NonFinite("x"))));
        assert!(ParamVector::zeros(3).check_finite("x").is_ok());
    }

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        let z = ParamVector::zeros(2);
        assert_eq!(z.cosine(&ParamVector::from_vec(vec![1.0, 0.0])), 0.0);
    }
}
