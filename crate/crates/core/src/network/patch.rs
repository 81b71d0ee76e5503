//! Patch layout: a [C, F, T] latent becomes (F/p)·(T/p) tokens of raw
//! dimension C·p·p, frequency-major then time, and back.

use alloc::format;

use crate::error::{invalid, shape as shape_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Flatten non-overlapping p×p patches into token rows.
pub fn patchify_raw<T: Real>(latent: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    if latent.shape().len() != 3 {
        return Err(shape_err(format!(
            "latent must be [C, F, T], got {:?}",
            latent.shape()
        )));
    }
    let (c, f, t) = (latent.shape()[0], latent.shape()[1], latent.shape()[2]);
    if p == 0 || f % p != 0 || t % p != 0 {
        return Err(invalid(format!(
            "patch size {p} must divide F={f} and T={t}"
        )));
    }
    let (fp, tp) = (f / p, t / p);
    let patch_dim = c * p * p;
    let mut out = Tensor::zeros(&[fp * tp, patch_dim]);
    let src = latent.data();
    for pf in 0..fp {
        for pt in 0..tp {
            let row = out.row_mut(pf * tp + pt);
            for ci in 0..c {
                for df in 0..p {
                    for dt in 0..p {
                        row[ci * p * p + df * p + dt] =
                            src[(ci * f + pf * p + df) * t + pt * p + dt];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of `patchify_raw` for token rows of dimension C·p·p.
pub fn unpatchify<T: Real>(
    tokens: &Tensor<T>,
    channels: usize,
    freq_bins: usize,
    time_frames: usize,
    p: usize,
) -> Result<Tensor<T>> {
    let (fp, tp) = (freq_bins / p, time_frames / p);
    let expect_tokens = fp * tp;
    let patch_dim = channels * p * p;
    if tokens.rows() != expect_tokens || tokens.cols() != patch_dim {
        return Err(shape_err(format!(
            "unpatchify: expected [{expect_tokens}, {patch_dim}] tokens, got {:?}",
            tokens.shape()
        )));
    }
    let mut out = Tensor::zeros(&[channels, freq_bins, time_frames]);
    let dst = out.data_mut();
    for pf in 0..fp {
        for pt in 0..tp {
            let row = tokens.row(pf * tp + pt);
            for ci in 0..channels {
                for df in 0..p {
                    for dt in 0..p {
                        dst[(ci * freq_bins + pf * p + df) * time_frames + pt * p + dt] =
                            row[ci * p * p + df * p + dt];
                    }
                }
            }
        }
    }
    Ok(out)
}
