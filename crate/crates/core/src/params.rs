//! Flat parameter vectors shared by policies and reward models.

use crate::error::{CoreError, Result};

/// Dense `f64` parameter vector. Both model families store their parameters
/// this way so trainers, finite-difference checks, and checkpoints can treat
/// them uniformly. All entries are finite by construction; updates re-check.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps raw values, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::validation(format!(
                "non-finite parameter at index {i}"
            )));
        }
        Ok(ParamVector(values))
    }

    /// All-zeros vector of dimension `n`.
    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    /// `self += scale * other`. Errors if shapes differ or the result is
    /// non-finite (the caller reports that as divergence).
    pub fn add_scaled(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(CoreError::mismatch(format!(
                "parameter shapes differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += scale * b;
        }
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::validation(format!(
                "non-finite parameter at index {i} after update"
            )));
        }
        Ok(())
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest |component|.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Component-wise clamp into `[lo, hi]`.
    pub fn clamp_in_place(&mut self, lo: f64, hi: f64) {
        for v in &mut self.0 {
            *v = v.clamp(lo, hi);
        }
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Vec<f64> {
        p.0
    }
}

/// Mean of a non-empty set of equally-shaped vectors; used for batch
/// gradient reduction.
pub fn mean_of(vectors: &[ParamVector]) -> Result<ParamVector> {
    let first = vectors
        .first()
        .ok_or_else(|| CoreError::validation("mean of empty vector set"))?;
    let mut acc = ParamVector::zeros(first.len());
    for v in vectors {
        acc.add_scaled(1.0, v)?;
    }
    let scale = 1.0 / vectors.len() as f64;
    for a in acc.as_mut_slice() {
        *a *= scale;
    }
    Ok(acc)
}
