use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat view of every weight and bias of a model, in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        ParamVector(values)
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

    #[cfg(test)]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_len(&self, other: &ParamVector, context: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(())
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_len(other, "parameter subtraction")?;
        Ok(ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    /// `self + scale * other`, elementwise.
    pub fn add_scaled(&self, other: &ParamVector, scale: f64) -> Result<ParamVector> {
        self.check_len(other, "parameter axpy")?;
        let out = ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a + scale * b).collect());
        if !out.is_finite() {
            return Err(Error::NonFinite("parameter axpy"));
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.check_len(other, "parameter comparison")?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Parameter-space distance `(1 / 2n) * sum_k (a_k - b_k)^2`.
///
/// Normalizing by the parameter count keeps the value comparable across model
/// sizes: a unit offset in every coordinate always gives 0.5.
pub fn param_distance(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    a.check_len(b, "param_distance")?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let sq: f64 = a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sq / (2.0 * a.len() as f64))
}

/// Plain gradient step `params - lr * gradient`.
///
/// `lr = 0` is accepted and leaves the parameters unchanged; it is how the
/// harness expresses a run without learning.
pub fn sgd_step(params: &ParamVector, gradient: &ParamVector, lr: f64) -> Result<ParamVector> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    if !gradient.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    params.add_scaled(gradient, -lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn distance_identity_and_unit_offset() {
        let a = pv(&[0.3, -1.0, 2.5]);
        assert_eq!(param_distance(&a, &a).unwrap(), 0.0);
        for n in [1usize, 7, 1000] {
            let x = ParamVector::zeros(n);
            let y = ParamVector::new(vec![1.0; n]).unwrap();
            assert_eq!(param_distance(&x, &y).unwrap(), 0.5);
        }
    }

    #[test]
    fn distance_length_mismatch() {
        assert!(matches!(
            param_distance(&pv(&[1.0]), &pv(&[1.0, 2.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn distance_matches_reference_summation() {
        use rand::Rng;
        let mut rng = crate::seed::rng(3);
        let a: Vec<f64> = (0..257).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..257).map(|_| rng.random_range(-2.0..2.0)).collect();
        // Independent route: pairwise-summed squares in reverse order.
        let mut sq: Vec<f64> = a.iter().zip(&b).rev().map(|(x, y)| (x - y).powi(2)).collect();
        while sq.len() > 1 {
            sq = sq.chunks(2).map(|c| c.iter().sum()).collect();
        }
        let expected = sq[0] / (2.0 * 257.0);
        let got = param_distance(&pv(&a), &pv(&b)).unwrap();
        assert!((got - expected).abs() <= 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn sgd_zero_gradient_and_full_step() {
        let p = pv(&[1.0, -2.0, 3.5]);
        assert_eq!(sgd_step(&p, &ParamVector::zeros(3), 0.7).unwrap(), p);
        assert_eq!(sgd_step(&p, &p, 1.0).unwrap(), ParamVector::zeros(3));
    }

    #[test]
    fn sgd_two_steps_equal_summed_step() {
        let p = pv(&[0.5, 0.25, -1.0]);
        let g1 = pv(&[1.0, 2.0, -4.0]);
        let g2 = pv(&[0.5, -0.25, 2.0]);
        let two = sgd_step(&sgd_step(&p, &g1, 0.5).unwrap(), &g2, 0.5).unwrap();
        let g12 = g1.add_scaled(&g2, 1.0).unwrap();
        let one = sgd_step(&p, &g12, 0.5).unwrap();
        assert_eq!(two, one);
    }

    #[test]
    fn sgd_rejects_bad_inputs() {
        let p = pv(&[1.0]);
        let bad = ParamVector::from_vec_unchecked(vec![f64::NAN]);
        assert!(matches!(sgd_step(&p, &bad, 0.1), Err(Error::NonFinite(_))));
        assert!(sgd_step(&p, &p, -0.1).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
    }
}
