use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` equally spaced atoms `z_i = v_min + i * dz` spanning `[v_min, v_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSupport {
    pub n: usize,
    pub v_min: f64,
    pub v_max: f64,
}

impl AtomSupport {
    pub fn new(n: usize, v_min: f64, v_max: f64) -> Result<Self> {
        if n < 2 || !(v_max > v_min) || !v_min.is_finite() || !v_max.is_finite() {
            return Err(Error::Config(format!("atom support needs n >= 2 and v_min < v_max (got {n}, {v_min}, {v_max})")));
        }
        Ok(AtomSupport { n, v_min, v_max })
    }

    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / (self.n - 1) as f64
    }

    pub fn atom(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.v_max
        } else {
            self.v_min + i as f64 * self.delta()
        }
    }

    pub fn atoms(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.atom(i)).collect()
    }

    /// Nearest atom to `r`; values outside the support clamp to its ends.
    pub fn label(&self, r: f64) -> usize {
        atom_label(r, self.n, self.v_min, self.v_max)
    }
}

/// `clamp(round((r - v_min) / dz), 0, n - 1)`.
pub fn atom_label(r: f64, n: usize, v_min: f64, v_max: f64) -> usize {
    let dz = (v_max - v_min) / (n - 1) as f64;
    let c = ((r - v_min) / dz).round();
    if c.is_nan() || c <= 0.0 {
        0
    } else {
        (c as usize).min(n - 1)
    }
}

/// Categorical distribution over an [`AtomSupport`].
#[derive(Clone, Debug, PartialEq)]
pub struct ValueDistribution {
    pub support: AtomSupport,
    pub probs: Vec<f64>,
}

impl ValueDistribution {
    pub fn new(support: AtomSupport, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != support.n {
            return Err(Error::Shape(format!("{} probabilities for {} atoms", probs.len(), support.n)));
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Shape(format!("probabilities sum to {sum} or contain negatives")));
        }
        Ok(ValueDistribution { support, probs })
    }

    pub fn one_hot(support: AtomSupport, i: usize) -> Self {
        let mut probs = vec![0.0; support.n];
        probs[i] = 1.0;
        ValueDistribution { support, probs }
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.probs.iter().all(|&p| p >= 0.0) && (self.probs.iter().sum::<f64>() - 1.0).abs() <= tol
    }

    pub fn expected_value(&self) -> f64 {
        expected_value(self)
    }
}

/// `sum_i p_i z_i`, kept inside `[v_min, v_max]`.
pub fn expected_value(dist: &ValueDistribution) -> f64 {
    let s = &dist.support;
    let v: f64 = dist.probs.iter().enumerate().map(|(i, p)| p * s.atom(i)).sum();
    v.clamp(s.v_min, s.v_max)
}
