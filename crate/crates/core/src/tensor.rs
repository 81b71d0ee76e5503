//! Minimal dense row-major tensor plus the handful of kernels the model is
//! built from.
//!
//! The dot/matmul kernels accumulate in a fixed lane order (eight independent
//! partial sums combined the same way every call) so results are bit-stable
//! run to run while still autovectorizing.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape as shape_err, Result};
use crate::scalar::Real;

/// Dense row-major array of `T` with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Number of rows when viewed as a 2-D matrix (product of all but the
    /// last axis).
    pub fn rows(&self) -> usize {
        debug_assert!(!self.shape.is_empty());
        self.shape[..self.shape.len() - 1].iter().product()
    }

    /// Length of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Cast elementwise through f64.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        self.map(|x| U::from_f64(x.to_f64()))
    }

    pub fn scale(&mut self, s: T) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn sum(&self) -> T {
        sum(&self.data)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len().max(1))
    }

    /// Sum of squares of all elements.
    pub fn sumsq(&self) -> T {
        dot(&self.data, &self.data)
    }

    pub fn check_shape(&self, expect: &[usize], what: &str) -> Result<()> {
        if self.shape != expect {
            return Err(shape_err(format!(
                "{what}: expected {:?}, got {:?}",
                expect, self.shape
            )));
        }
        Ok(())
    }
}

const LANES: usize = 8;

/// Dot product with eight fixed accumulator lanes.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    let (ah, at) = a.split_at(chunks * LANES);
    let (bh, bt) = b.split_at(chunks * LANES);
    for (ca, cb) in ah.chunks_exact(LANES).zip(bh.chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] = acc[l] + ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in at.iter().zip(bt) {
        tail += *x * *y;
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

/// `dst += s * src`, elementwise.
pub fn scaled_add<T: Real>(dst: &mut [T], s: T, src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, x) in dst.iter_mut().zip(src) {
        *d += s * *x;
    }
}

pub fn sum<T: Real>(a: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    let (head, tail) = a.split_at(chunks * LANES);
    for c in head.chunks_exact(LANES) {
        for l in 0..LANES {
            acc[l] = acc[l] + c[l];
        }
    }
    let mut t = T::zero();
    for x in tail {
        t += *x;
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + t
}

/// c[m,n] = a[m,k] · b[n,k]ᵀ. Both operands are traversed along contiguous
/// rows, which is the layout weight matrices are stored in ([out, in]).
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let cr = &mut c[i * n..(i + 1) * n];
        for (j, cv) in cr.iter_mut().enumerate() {
            *cv = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

/// c[m,n] = a[m,k] · b[k,n], accumulated row-wise (axpy form).
pub fn matmul_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let cr = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            scaled_add(cr, a[i * k + l], &b[l * n..(l + 1) * n]);
        }
    }
    c
}

/// c[m,n] += a[k,m]ᵀ · b[k,n]. Used for weight gradients (dW += dyᵀ·x).
pub fn matmul_tn_acc<T: Real>(c: &mut [T], a: &[T], b: &[T], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for l in 0..k {
        let br = &b[l * n..(l + 1) * n];
        for i in 0..m {
            scaled_add(&mut c[i * n..(i + 1) * n], a[l * m + i], br);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..29).map(|i| (i as f64) * 0.3 - 2.0).collect();
        let b: Vec<f64> = (0..29).map(|i| (i as f64) * -0.1 + 1.0).collect();
        let expect: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - expect).abs() < 1e-12);
    }

    #[test]
    fn matmul_variants_agree() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).cos()).collect();
        let want = naive_matmul(&a, &b, m, k, n);

        let got_nn = matmul_nn(&a, &b, m, k, n);
        for (x, y) in got_nn.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // b transposed view for matmul_nt
        let mut bt = vec![0.0; n * k];
        for l in 0..k {
            for j in 0..n {
                bt[j * k + l] = b[l * n + j];
            }
        }
        let got_nt = matmul_nt(&a, &bt, m, k, n);
        for (x, y) in got_nt.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // aᵀ·a via matmul_tn_acc against naive on transposed input
        let mut c = vec![0.0; k * k];
        matmul_tn_acc(&mut c, &a, &a, m, k, k);
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for l in 0..k {
                at[l * m + i] = a[i * k + l];
            }
        }
        let want2 = naive_matmul(&at, &a, k, m, k);
        for (x, y) in c.iter().zip(&want2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_shape_checks() {
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![1.0; 5]).is_err());
        assert!(t.check_shape(&[2, 3], "t").is_ok());
        assert!(t.check_shape(&[3, 2], "t").is_err());
    }
}
