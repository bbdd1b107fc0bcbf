//! Dense row-major f64 tensors (rank 0, 1, or 2) plus the stable scalar
//! kernels (softmax, logsumexp) shared by the tape and the CRF dynamic
//! programs.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, validating the shape/data contract: positive dims,
    /// product(shape) == data.len(), all elements finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                shape,
                reason: "zero-sized dimension".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("product is {numel} but data has {} elements", data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "Tensor::new" });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Numerically stable softmax over a non-empty score vector. Invariant under
/// additive shifts of the input; output sums to 1.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("softmax of empty vector".into()));
    }
    if !scores.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// log(sum(exp(xs))) with max-subtraction so large magnitudes cannot
/// overflow.
pub fn logsumexp(xs: &[f64]) -> f64 {
    debug_assert!(!xs.is_empty());
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn new_rejects_zero_dim() {
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::new(vec![3], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn softmax_symmetry() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_analytic() {
        let p = softmax(&[2.0f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn softmax_large_inputs_no_overflow() {
        let p = softmax(&[1000.0, 999.0]).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(p[0], e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 / (e + 1.0), epsilon = 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn logsumexp_matches_naive_in_safe_range() {
        let xs: [f64; 3] = [0.3, -1.2, 2.0];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert_abs_diff_eq!(logsumexp(&xs), naive, epsilon = 1e-12);
    }

    #[test]
    fn logsumexp_survives_large_values() {
        let v = logsumexp(&[1000.0, 1000.0]);
        assert_abs_diff_eq!(v, 1000.0 + 2.0f64.ln(), epsilon = 1e-9);
    }
}
