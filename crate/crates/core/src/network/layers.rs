//! Layer primitives with paired forward/backward implementations.
//!
//! Gradients accumulate into caller-provided buffers; every backward here is
//! checked against central finite differences in the tests at f64 precision.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::scalar::Real;
use crate::tensor::{self, Tensor};

pub const LAYERNORM_EPS: f64 = 1e-6;

/// y = x·wᵀ + b for x: [L, in], w: [out, in], b: [out].
pub fn linear_fwd<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (l, d_in) = (x.rows(), x.cols());
    let d_out = w.shape()[0];
    debug_assert_eq!(w.shape()[1], d_in);
    debug_assert_eq!(b.numel(), d_out);
    let mut y = tensor::matmul_nt(x.data(), w.data(), l, d_in, d_out);
    for row in y.chunks_exact_mut(d_out) {
        for (v, &bv) in row.iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    Tensor::from_vec(&[l, d_out], y).expect("linear output shape")
}

/// Backprop through `linear_fwd`. Returns dx; accumulates dw/db.
pub fn linear_bwd<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
) -> Tensor<T> {
    let (l, d_in) = (x.rows(), x.cols());
    let d_out = w.shape()[0];
    debug_assert_eq!(dy.rows(), l);
    debug_assert_eq!(dy.cols(), d_out);

    // dw += dyᵀ·x
    tensor::matmul_tn_acc(dw.data_mut(), dy.data(), x.data(), l, d_out, d_in);
    // db += column sums of dy
    for row in dy.data().chunks_exact(d_out) {
        for (g, &v) in db.data_mut().iter_mut().zip(row) {
            *g += v;
        }
    }
    // dx = dy·w
    let dx = tensor::matmul_nn(dy.data(), w.data(), l, d_out, d_in);
    Tensor::from_vec(&[l, d_in], dx).expect("linear grad shape")
}

/// `linear_bwd` with the weight/bias gradients looked up by name.
pub fn linear_bwd_into<T: Real>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    params: &crate::params::ParameterStore<T>,
    grads: &mut crate::params::ParameterStore<T>,
    wname: &str,
    bname: &str,
) -> crate::error::Result<Tensor<T>> {
    let w = params.get(wname)?;
    let (dw, db) = grads.get_mut2(wname, bname)?;
    Ok(linear_bwd(x, w, dy, dw, db))
}

/// Row-wise layer normalization without learned affine.
/// Returns (y, rstd) where y has zero mean and unit variance per row.
pub fn layernorm_fwd<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let (l, d) = (x.rows(), x.cols());
    let inv_d = T::one() / T::from_usize(d);
    let eps = T::from_f64(LAYERNORM_EPS);
    let mut y = Tensor::zeros(&[l, d]);
    let mut rstd = vec![T::zero(); l];
    for i in 0..l {
        let row = x.row(i);
        let mean = tensor::sum(row) * inv_d;
        let mut var = T::zero();
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var *= inv_d;
        let r = T::one() / (var + eps).sqrt();
        rstd[i] = r;
        for (o, &v) in y.row_mut(i).iter_mut().zip(row) {
            *o = (v - mean) * r;
        }
    }
    (y, rstd)
}

/// dx for layernorm, given the normalized output y and cached rstd.
pub fn layernorm_bwd<T: Real>(y: &Tensor<T>, rstd: &[T], dy: &Tensor<T>) -> Tensor<T> {
    let (l, d) = (y.rows(), y.cols());
    let inv_d = T::one() / T::from_usize(d);
    let mut dx = Tensor::zeros(&[l, d]);
    for i in 0..l {
        let yr = y.row(i);
        let dyr = dy.row(i);
        let mean_dy = tensor::sum(dyr) * inv_d;
        let mean_dyy = tensor::dot(dyr, yr) * inv_d;
        let r = rstd[i];
        for ((o, &dv), &yv) in dx.row_mut(i).iter_mut().zip(dyr).zip(yr) {
            *o = r * (dv - mean_dy - yv * mean_dyy);
        }
    }
    dx
}

pub fn silu_fwd<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.silu())
}

/// dx = dy ⊙ silu'(x), with x the pre-activation input.
pub fn silu_bwd<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(x.shape(), dy.shape());
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &dv)| {
            let s = xv.sigmoid();
            dv * s * (T::one() + xv * (T::one() - s))
        })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("silu grad shape")
}

/// In-place row softmax.
pub fn softmax_rows<T: Real>(x: &mut [T], rows: usize, cols: usize) {
    debug_assert_eq!(x.len(), rows * cols);
    for row in x.chunks_exact_mut(cols) {
        let mut m = row[0];
        for &v in row.iter() {
            if v > m {
                m = v;
            }
        }
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        let inv = T::one() / z;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// dx for a row softmax, given probabilities p and upstream dp.
pub fn softmax_rows_bwd<T: Real>(p: &[T], dp: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * cols];
    for i in 0..rows {
        let pr = &p[i * cols..(i + 1) * cols];
        let dpr = &dp[i * cols..(i + 1) * cols];
        let s = tensor::dot(pr, dpr);
        for ((o, &pv), &dv) in dx[i * cols..(i + 1) * cols]
            .iter_mut()
            .zip(pr)
            .zip(dpr)
        {
            *o = pv * (dv - s);
        }
    }
    dx
}

/// x scaled/shifted per column: y[l, :] = gamma ⊙ x[l, :] + beta.
pub fn modulate<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> Tensor<T> {
    let (l, d) = (x.rows(), x.cols());
    debug_assert_eq!(gamma.len(), d);
    debug_assert_eq!(beta.len(), d);
    let mut y = Tensor::zeros(&[l, d]);
    for i in 0..l {
        for ((o, &xv), (&g, &b)) in y
            .row_mut(i)
            .iter_mut()
            .zip(x.row(i))
            .zip(gamma.iter().zip(beta))
        {
            *o = g * xv + b;
        }
    }
    y
}

/// Backprop through `modulate`: returns dx, accumulates dgamma/dbeta.
pub fn modulate_bwd<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    dy: &Tensor<T>,
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Tensor<T> {
    let (l, d) = (x.rows(), x.cols());
    let mut dx = Tensor::zeros(&[l, d]);
    for i in 0..l {
        let xr = x.row(i);
        let dyr = dy.row(i);
        for j in 0..d {
            dgamma[j] += dyr[j] * xr[j];
            dbeta[j] += dyr[j];
            dx.row_mut(i)[j] = gamma[j] * dyr[j];
        }
    }
    dx
}

/// y[l, :] = x[l, :] + gate ⊙ branch[l, :] (gated residual add).
pub fn gated_residual<T: Real>(x: &Tensor<T>, gate: &[T], branch: &Tensor<T>) -> Tensor<T> {
    let (l, d) = (x.rows(), x.cols());
    let mut y = Tensor::zeros(&[l, d]);
    for i in 0..l {
        for ((o, &xv), (&g, &bv)) in y
            .row_mut(i)
            .iter_mut()
            .zip(x.row(i))
            .zip(gate.iter().zip(branch.row(i)))
        {
            *o = xv + g * bv;
        }
    }
    y
}

/// Sinusoidal features of a scalar position at log-spaced frequencies:
/// [cos(p·f_0..), sin(p·f_0..)], dim must be even.
pub fn sinusoidal_features<T: Real>(pos: T, dim: usize) -> Vec<T> {
    debug_assert_eq!(dim % 2, 0);
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    let log_max = T::from_f64(10000.0f64.ln());
    for i in 0..half {
        let freq = (-(log_max * T::from_usize(i)) / T::from_usize(half)).exp();
        let arg = pos * freq;
        out[i] = arg.cos();
        out[half + i] = arg.sin();
    }
    out
}

/// Fixed 1-D sinusoidal position table, [len, dim].
pub fn pos_embed_1d<T: Real>(len: usize, dim: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[len, dim]);
    for p in 0..len {
        let feats = sinusoidal_features(T::from_usize(p), dim);
        t.row_mut(p).copy_from_slice(&feats);
    }
    t
}

/// Fixed 2-D sinusoidal position table over a rows×cols grid (row-major
/// flattening), first half of dim encodes the row index, second half the
/// column. dim must be divisible by 4.
pub fn pos_embed_2d<T: Real>(rows: usize, cols: usize, dim: usize) -> Tensor<T> {
    debug_assert_eq!(dim % 4, 0);
    let half = dim / 2;
    let row_table = pos_embed_1d::<T>(rows, half);
    let col_table = pos_embed_1d::<T>(cols, half);
    let mut t = Tensor::zeros(&[rows * cols, dim]);
    for r in 0..rows {
        for c in 0..cols {
            let out = t.row_mut(r * cols + c);
            out[..half].copy_from_slice(row_table.row(r));
            out[half..].copy_from_slice(col_table.row(c));
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};

    /// Central finite differences on a scalar function of one tensor.
    fn fd_grad(
        x: &Tensor<f64>,
        f: &mut dyn FnMut(&Tensor<f64>) -> f64,
        h: f64,
    ) -> Vec<f64> {
        let mut g = vec![0.0; x.numel()];
        for i in 0..x.numel() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let denom = x.abs().max(y.abs()).max(1e-6);
            assert!(
                (x - y).abs() / denom < tol,
                "{what}[{i}]: {x} vs {y}"
            );
        }
    }

    #[test]
    fn linear_backward_matches_fd() {
        let mut r = rng::stream(1, Purpose::Init);
        let x: Tensor<f64> = rng::normal_tensor(&mut r, &[3, 4]);
        let w: Tensor<f64> = rng::normal_tensor(&mut r, &[5, 4]);
        let b: Tensor<f64> = rng::normal_tensor(&mut r, &[5]);
        let c: Tensor<f64> = rng::normal_tensor(&mut r, &[3, 5]); // loss weights

        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            let y = linear_fwd(x, w, b);
            tensor::dot(y.data(), c.data())
        };

        let y = linear_fwd(&x, &w, &b);
        let dy = c.clone();
        let mut dw = Tensor::zeros(w.shape());
        let mut db = Tensor::zeros(b.shape());
        let dx = linear_bwd(&x, &w, &dy, &mut dw, &mut db);
        let _ = y;

        let fx = fd_grad(&x, &mut |t| loss(t, &w, &b), 1e-6);
        assert_close(dx.data(), &fx, 1e-7, "dx");
        let fw = fd_grad(&w, &mut |t| loss(&x, t, &b), 1e-6);
        assert_close(dw.data(), &fw, 1e-7, "dw");
        let fb = fd_grad(&b, &mut |t| loss(&x, &w, t), 1e-6);
        assert_close(db.data(), &fb, 1e-7, "db");
    }

    #[test]
    fn layernorm_backward_matches_fd() {
        let mut r = rng::stream(2, Purpose::Init);
        let x: Tensor<f64> = rng::normal_tensor(&mut r, &[4, 6]);
        let c: Tensor<f64> = rng::normal_tensor(&mut r, &[4, 6]);

        let loss = |x: &Tensor<f64>| {
            let (y, _) = layernorm_fwd(x);
            tensor::dot(y.data(), c.data())
        };
        let (y, rstd) = layernorm_fwd(&x);
        let dx = layernorm_bwd(&y, &rstd, &c);
        let fx = fd_grad(&x, &mut |t| loss(t), 1e-6);
        assert_close(dx.data(), &fx, 1e-6, "ln dx");
    }

    #[test]
    fn silu_backward_matches_fd() {
        let mut r = rng::stream(3, Purpose::Init);
        let x: Tensor<f64> = rng::normal_tensor(&mut r, &[30]);
        let c: Tensor<f64> = rng::normal_tensor(&mut r, &[30]);
        let dx = silu_bwd(&x, &c);
        let fx = fd_grad(&x, &mut |t| tensor::dot(silu_fwd(t).data(), c.data()), 1e-6);
        assert_close(dx.data(), &fx, 1e-6, "silu dx");
    }

    #[test]
    fn softmax_backward_matches_fd() {
        let mut r = rng::stream(4, Purpose::Init);
        let x: Tensor<f64> = rng::normal_tensor(&mut r, &[3, 5]);
        let c: Tensor<f64> = rng::normal_tensor(&mut r, &[3, 5]);
        let loss = |x: &Tensor<f64>| {
            let mut p = x.data().to_vec();
            softmax_rows(&mut p, 3, 5);
            tensor::dot(&p, c.data())
        };
        let mut p = x.data().to_vec();
        softmax_rows(&mut p, 3, 5);
        let dx = softmax_rows_bwd(&p, c.data(), 3, 5);
        let fx = fd_grad(&x, &mut |t| loss(t), 1e-6);
        assert_close(&dx, &fx, 1e-6, "softmax dx");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut r = rng::stream(5, Purpose::Init);
        let x: Tensor<f64> = rng::normal_tensor(&mut r, &[7, 9]);
        let mut p = x.data().to_vec();
        softmax_rows(&mut p, 7, 9);
        for row in p.chunks_exact(9) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn modulate_backward_matches_fd() {
        let mut r = rng::stream(6, Purpose::Init);
        let x: Tensor<f64> = rng::normal_tensor(&mut r, &[3, 4]);
        let g: Tensor<f64> = rng::normal_tensor(&mut r, &[4]);
        let b: Tensor<f64> = rng::normal_tensor(&mut r, &[4]);
        let c: Tensor<f64> = rng::normal_tensor(&mut r, &[3, 4]);

        let mut dg = vec![0.0; 4];
        let mut db = vec![0.0; 4];
        let dx = modulate_bwd(&x, g.data(), &c, &mut dg, &mut db);

        let fx = fd_grad(&x, &mut |t| tensor::dot(modulate(t, g.data(), b.data()).data(), c.data()), 1e-6);
        assert_close(dx.data(), &fx, 1e-7, "mod dx");
        let fg = fd_grad(&g, &mut |t| tensor::dot(modulate(&x, t.data(), b.data()).data(), c.data()), 1e-6);
        assert_close(&dg, &fg, 1e-7, "mod dgamma");
        let fb = fd_grad(&b, &mut |t| tensor::dot(modulate(&x, g.data(), t.data()).data(), c.data()), 1e-6);
        assert_close(&db, &fb, 1e-7, "mod dbeta");
    }

    #[test]
    fn modulation_identity_and_constant_cases() {
        let x = Tensor::from_vec(&[1, 2], vec![1.0f64, -1.0]).unwrap();
        let y = modulate(&x, &[1.0, 1.0], &[0.0, 0.0]);
        assert_eq!(y.data(), x.data());
        let y = modulate(&x, &[0.0, 0.0], &[3.0, 3.0]);
        assert_eq!(y.data(), &[3.0, 3.0]);
        let y = modulate(&x, &[2.0, 2.0], &[1.0, 1.0]);
        assert_eq!(y.data(), &[3.0, -1.0]);
    }

    #[test]
    fn sinusoidal_embeddings_shapes_and_determinism() {
        for dim in [32usize, 64, 768] {
            let a = sinusoidal_features(0.0f64, dim);
            let b = sinusoidal_features(0.0f64, dim);
            assert_eq!(a.len(), dim);
            assert_eq!(a, b);
        }
        let e1 = sinusoidal_features(100.0f64, 32);
        let e2 = sinusoidal_features(900.0f64, 32);
        let diff: f64 = e1.iter().zip(&e2).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!(diff > 0.0);

        let p2 = pos_embed_2d::<f64>(3, 5, 8);
        assert_eq!(p2.shape(), &[15, 8]);
        // distinct grid cells get distinct embeddings
        assert_ne!(p2.row(0), p2.row(7));
    }
}
