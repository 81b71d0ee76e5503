//! Joint attention over the concatenated audio+visual token sequence.
//!
//! Each stream has its own fused Q/K/V projection and output projection; the
//! scaled-dot-product attention itself runs over the joint sequence (audio
//! rows first, then visual).

use alloc::format;
use alloc::string::String;
use alloc::vec;

use num_traits::Float;

use crate::error::{invalid, Result};
use crate::network::layers::{linear_bwd_into, linear_fwd, softmax_rows, softmax_rows_bwd};
use crate::params::ParameterStore;
use crate::scalar::Real;
use crate::tensor::{dot, scaled_add, Tensor};

pub struct AttnCache<T> {
    /// Joint projections, [L, D].
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    /// Attention probabilities, [heads·L, L].
    probs: Tensor<T>,
    /// Joint attention output before the per-stream output projections.
    o: Tensor<T>,
    audio_len: usize,
}

impl<T: Real> AttnCache<T> {
    /// Row sums of the softmax matrix (used by tests).
    pub fn prob_row_sums(&self) -> alloc::vec::Vec<T> {
        (0..self.probs.rows())
            .map(|i| crate::tensor::sum(self.probs.row(i)))
            .collect()
    }
}

fn name(prefix: &str, stream: &str, part: &str) -> String {
    format!("{prefix}.{stream}.attn.{part}")
}

fn copy_rows<T: Real>(dst: &mut Tensor<T>, dst_start: usize, src: &Tensor<T>) {
    for i in 0..src.rows() {
        dst.row_mut(dst_start + i).copy_from_slice(src.row(i));
    }
}

fn slice_rows<T: Real>(src: &Tensor<T>, r0: usize, r1: usize) -> Tensor<T> {
    let d = src.cols();
    let mut out = Tensor::zeros(&[r1 - r0, d]);
    for i in r0..r1 {
        out.row_mut(i - r0).copy_from_slice(src.row(i));
    }
    out
}

/// Split a fused [L, 3D] projection into its q/k/v thirds.
fn split_qkv<T: Real>(qkv: &Tensor<T>, d: usize) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let l = qkv.rows();
    let mut q = Tensor::zeros(&[l, d]);
    let mut k = Tensor::zeros(&[l, d]);
    let mut v = Tensor::zeros(&[l, d]);
    for i in 0..l {
        let row = qkv.row(i);
        q.row_mut(i).copy_from_slice(&row[0..d]);
        k.row_mut(i).copy_from_slice(&row[d..2 * d]);
        v.row_mut(i).copy_from_slice(&row[2 * d..3 * d]);
    }
    (q, k, v)
}

fn fuse_qkv<T: Real>(dq: &Tensor<T>, dk: &Tensor<T>, dv: &Tensor<T>) -> Tensor<T> {
    let (l, d) = (dq.rows(), dq.cols());
    let mut out = Tensor::zeros(&[l, 3 * d]);
    for i in 0..l {
        let row = out.row_mut(i);
        row[0..d].copy_from_slice(dq.row(i));
        row[d..2 * d].copy_from_slice(dk.row(i));
        row[2 * d..3 * d].copy_from_slice(dv.row(i));
    }
    out
}

/// Forward pass. Returns (audio out, visual out, cache).
pub fn joint_attention_fwd<T: Real>(
    xa: &Tensor<T>,
    xv: &Tensor<T>,
    params: &ParameterStore<T>,
    prefix: &str,
    heads: usize,
) -> Result<(Tensor<T>, Tensor<T>, AttnCache<T>)> {
    let d = xa.cols();
    if xv.rows() > 0 && xv.cols() != d {
        return Err(invalid("audio/visual hidden dims differ"));
    }
    if heads == 0 || d % heads != 0 {
        return Err(invalid(format!("heads {heads} must divide hidden {d}")));
    }
    let hd = d / heads;
    let (la, lv) = (xa.rows(), xv.rows());
    let l = la + lv;

    let qkv_a = linear_fwd(
        xa,
        params.get(&name(prefix, "audio", "qkv.w"))?,
        params.get(&name(prefix, "audio", "qkv.b"))?,
    );
    let qkv_v = linear_fwd(
        xv,
        params.get(&name(prefix, "visual", "qkv.w"))?,
        params.get(&name(prefix, "visual", "qkv.b"))?,
    );
    let (qa, ka, va) = split_qkv(&qkv_a, d);
    let (qv, kv, vv) = split_qkv(&qkv_v, d);

    let mut q = Tensor::zeros(&[l, d]);
    let mut k = Tensor::zeros(&[l, d]);
    let mut v = Tensor::zeros(&[l, d]);
    copy_rows(&mut q, 0, &qa);
    copy_rows(&mut q, la, &qv);
    copy_rows(&mut k, 0, &ka);
    copy_rows(&mut k, la, &kv);
    copy_rows(&mut v, 0, &va);
    copy_rows(&mut v, la, &vv);

    let scale = T::from_f64(1.0 / (hd as f64).sqrt());
    let mut probs = Tensor::zeros(&[heads * l, l]);
    for h in 0..heads {
        let off = h * hd;
        for i in 0..l {
            let qrow = &q.row(i)[off..off + hd];
            let srow = probs.row_mut(h * l + i);
            for (m, sv) in srow.iter_mut().enumerate() {
                *sv = scale * dot(qrow, &k.row(m)[off..off + hd]);
            }
        }
    }
    softmax_rows(probs.data_mut(), heads * l, l);

    let mut o = Tensor::zeros(&[l, d]);
    for h in 0..heads {
        let off = h * hd;
        for i in 0..l {
            let prow = probs.row(h * l + i);
            // borrow-friendly: accumulate into a scratch then copy
            let mut acc = vec![T::zero(); hd];
            for (m, &p) in prow.iter().enumerate() {
                scaled_add(&mut acc, p, &v.row(m)[off..off + hd]);
            }
            o.row_mut(i)[off..off + hd].copy_from_slice(&acc);
        }
    }

    let oa = slice_rows(&o, 0, la);
    let ov = slice_rows(&o, la, l);
    let ya = linear_fwd(
        &oa,
        params.get(&name(prefix, "audio", "out.w"))?,
        params.get(&name(prefix, "audio", "out.b"))?,
    );
    let yv = linear_fwd(
        &ov,
        params.get(&name(prefix, "visual", "out.w"))?,
        params.get(&name(prefix, "visual", "out.b"))?,
    );

    Ok((
        ya,
        yv,
        AttnCache {
            q,
            k,
            v,
            probs,
            o,
            audio_len: la,
        },
    ))
}

/// Backward pass. Returns (dxa, dxv); parameter gradients accumulate into
/// `grads` under the same names the forward read.
#[allow(clippy::too_many_arguments)]
pub fn joint_attention_bwd<T: Real>(
    cache: &AttnCache<T>,
    xa: &Tensor<T>,
    xv: &Tensor<T>,
    dya: &Tensor<T>,
    dyv: &Tensor<T>,
    params: &ParameterStore<T>,
    prefix: &str,
    heads: usize,
    grads: &mut ParameterStore<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = xa.cols();
    let hd = d / heads;
    let la = cache.audio_len;
    let l = cache.q.rows();
    let lv = l - la;
    let scale = T::from_f64(1.0 / (hd as f64).sqrt());

    // back through the per-stream output projections
    let oa = slice_rows(&cache.o, 0, la);
    let ov = slice_rows(&cache.o, la, l);
    let do_a = linear_bwd_into(
        &oa,
        dya,
        params,
        grads,
        &name(prefix, "audio", "out.w"),
        &name(prefix, "audio", "out.b"),
    )?;
    let do_v = linear_bwd_into(
        &ov,
        dyv,
        params,
        grads,
        &name(prefix, "visual", "out.w"),
        &name(prefix, "visual", "out.b"),
    )?;
    let mut d_o = Tensor::zeros(&[l, d]);
    copy_rows(&mut d_o, 0, &do_a);
    copy_rows(&mut d_o, la, &do_v);

    let mut dq = Tensor::zeros(&[l, d]);
    let mut dk = Tensor::zeros(&[l, d]);
    let mut dv = Tensor::zeros(&[l, d]);

    for h in 0..heads {
        let off = h * hd;
        // dP[i,m] = do_i · v_m ; dV[m] += Σ_i P[i,m]·do_i
        let mut dp = vec![T::zero(); l * l];
        for i in 0..l {
            let dor = &d_o.row(i)[off..off + hd];
            let prow = cache.probs.row(h * l + i);
            for m in 0..l {
                dp[i * l + m] = dot(dor, &cache.v.row(m)[off..off + hd]);
            }
            for (m, &p) in prow.iter().enumerate() {
                scaled_add(&mut dv.row_mut(m)[off..off + hd], p, dor);
            }
        }
        let phead = {
            let mut ph = vec![T::zero(); l * l];
            for i in 0..l {
                ph[i * l..(i + 1) * l].copy_from_slice(cache.probs.row(h * l + i));
            }
            ph
        };
        let ds = softmax_rows_bwd(&phead, &dp, l, l);
        // dQ[i] += scale·Σ_m dS[i,m]·K[m]; dK[m] += scale·Σ_i dS[i,m]·Q[i]
        for i in 0..l {
            let dsr = &ds[i * l..(i + 1) * l];
            {
                let mut acc = vec![T::zero(); hd];
                for (m, &s) in dsr.iter().enumerate() {
                    scaled_add(&mut acc, s, &cache.k.row(m)[off..off + hd]);
                }
                scaled_add(&mut dq.row_mut(i)[off..off + hd], scale, &acc);
            }
            let qrow = slice_to_vec(&cache.q.row(i)[off..off + hd]);
            for (m, &s) in dsr.iter().enumerate() {
                scaled_add(&mut dk.row_mut(m)[off..off + hd], scale * s, &qrow);
            }
        }
    }

    // fuse back and run the qkv projections backward
    let dqkv_a = fuse_qkv(
        &slice_rows(&dq, 0, la),
        &slice_rows(&dk, 0, la),
        &slice_rows(&dv, 0, la),
    );
    let dqkv_v = fuse_qkv(
        &slice_rows(&dq, la, l),
        &slice_rows(&dk, la, l),
        &slice_rows(&dv, la, l),
    );
    let _ = lv;

    let dxa = linear_bwd_into(
        xa,
        &dqkv_a,
        params,
        grads,
        &name(prefix, "audio", "qkv.w"),
        &name(prefix, "audio", "qkv.b"),
    )?;
    let dxv = linear_bwd_into(
        xv,
        &dqkv_v,
        params,
        grads,
        &name(prefix, "visual", "qkv.w"),
        &name(prefix, "visual", "qkv.b"),
    )?;

    Ok((dxa, dxv))
}

fn slice_to_vec<T: Real>(s: &[T]) -> alloc::vec::Vec<T> {
    s.to_vec()
}

#[cfg(test)]
mod tests {
    use alloc::vec::Vec;

    use super::*;
    use crate::rng::{self, Purpose};
    use crate::tensor::matmul_nt;

    fn attn_params(d: usize, seed: u64) -> ParameterStore<f64> {
        let mut store = ParameterStore::new();
        let mut r = rng::stream(seed, Purpose::Init);
        for stream in ["audio", "visual"] {
            for (part, shape) in [
                ("qkv.w", vec![3 * d, d]),
                ("qkv.b", vec![3 * d]),
                ("out.w", vec![d, d]),
                ("out.b", vec![d]),
            ] {
                let t = rng::normal_tensor::<f64>(&mut r, &shape).map(|v| v * 0.3);
                store.insert(&name("b", stream, part), t).unwrap();
            }
        }
        store
    }

    /// Straight-line single-stream attention used as the brute-force oracle.
    fn reference_single_stream(
        x: &Tensor<f64>,
        params: &ParameterStore<f64>,
        heads: usize,
    ) -> Tensor<f64> {
        let d = x.cols();
        let hd = d / heads;
        let l = x.rows();
        let qkv = linear_fwd(
            x,
            params.get(&name("b", "audio", "qkv.w")).unwrap(),
            params.get(&name("b", "audio", "qkv.b")).unwrap(),
        );
        let (q, k, v) = split_qkv(&qkv, d);
        let mut o = Tensor::zeros(&[l, d]);
        for h in 0..heads {
            let off = h * hd;
            for i in 0..l {
                let mut scores: Vec<f64> = (0..l)
                    .map(|m| {
                        let mut s = 0.0;
                        for c in 0..hd {
                            s += q.row(i)[off + c] * k.row(m)[off + c];
                        }
                        s / (hd as f64).sqrt()
                    })
                    .collect();
                let mx = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let mut z = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - mx).exp();
                    z += *s;
                }
                for (m, s) in scores.iter().enumerate() {
                    for c in 0..hd {
                        o.row_mut(i)[off + c] += s / z * v.row(m)[off + c];
                    }
                }
            }
        }
        let w = params.get(&name("b", "audio", "out.w")).unwrap();
        let b = params.get(&name("b", "audio", "out.b")).unwrap();
        let mut y = matmul_nt(o.data(), w.data(), l, d, d);
        for row in y.chunks_exact_mut(d) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        Tensor::from_vec(&[l, d], y).unwrap()
    }

    #[test]
    fn empty_visual_equals_single_stream() {
        let d = 8;
        let params = attn_params(d, 3);
        let mut r = rng::stream(4, Purpose::Data);
        let xa: Tensor<f64> = rng::normal_tensor(&mut r, &[5, d]);
        let xv = Tensor::<f64>::zeros(&[0, d]);
        let (ya, yv, _) = joint_attention_fwd(&xa, &xv, &params, "b", 2).unwrap();
        assert_eq!(yv.rows(), 0);
        let want = reference_single_stream(&xa, &params, 2);
        for (a, b) in ya.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn head_divisibility_enforced() {
        let d = 8;
        let params = attn_params(d, 3);
        let xa = Tensor::<f64>::zeros(&[2, d]);
        let xv = Tensor::<f64>::zeros(&[1, d]);
        assert!(joint_attention_fwd(&xa, &xv, &params, "b", 3).is_err());
        assert!(joint_attention_fwd(&xa, &xv, &params, "b", 0).is_err());
    }

    #[test]
    fn softmax_rows_normalize() {
        let d = 8;
        let params = attn_params(d, 5);
        let mut r = rng::stream(6, Purpose::Data);
        let xa: Tensor<f64> = rng::normal_tensor(&mut r, &[3, d]);
        let xv: Tensor<f64> = rng::normal_tensor(&mut r, &[2, d]);
        let (_, _, cache) = joint_attention_fwd(&xa, &xv, &params, "b", 2).unwrap();
        for s in cache.prob_row_sums() {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn visual_permutation_only_permutes_visual_outputs() {
        // 3 audio + 2 visual tokens: swapping the two visual tokens must leave
        // audio outputs numerically unchanged and swap the visual outputs.
        let d = 8;
        let params = attn_params(d, 7);
        let mut r = rng::stream(8, Purpose::Data);
        let xa: Tensor<f64> = rng::normal_tensor(&mut r, &[3, d]);
        let xv: Tensor<f64> = rng::normal_tensor(&mut r, &[2, d]);
        let mut xv_swapped = Tensor::<f64>::zeros(&[2, d]);
        xv_swapped.row_mut(0).copy_from_slice(xv.row(1));
        xv_swapped.row_mut(1).copy_from_slice(xv.row(0));

        let (ya1, yv1, _) = joint_attention_fwd(&xa, &xv, &params, "b", 2).unwrap();
        let (ya2, yv2, _) = joint_attention_fwd(&xa, &xv_swapped, &params, "b", 2).unwrap();

        for (a, b) in ya1.data().iter().zip(ya2.data()) {
            assert!((a - b).abs() < 1e-12, "audio changed under visual permutation");
        }
        for (a, b) in yv1.row(0).iter().zip(yv2.row(1)) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in yv1.row(1).iter().zip(yv2.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let d = 8;
        let heads = 2;
        let params = attn_params(d, 11);
        let mut r = rng::stream(12, Purpose::Data);
        let xa: Tensor<f64> = rng::normal_tensor(&mut r, &[3, d]);
        let xv: Tensor<f64> = rng::normal_tensor(&mut r, &[2, d]);
        let ca: Tensor<f64> = rng::normal_tensor(&mut r, &[3, d]);
        let cv: Tensor<f64> = rng::normal_tensor(&mut r, &[2, d]);

        let loss = |xa: &Tensor<f64>, xv: &Tensor<f64>, params: &ParameterStore<f64>| {
            let (ya, yv, _) = joint_attention_fwd(xa, xv, params, "b", heads).unwrap();
            crate::tensor::dot(ya.data(), ca.data()) + crate::tensor::dot(yv.data(), cv.data())
        };

        let (_, _, cache) = joint_attention_fwd(&xa, &xv, &params, "b", heads).unwrap();
        let mut grads = params.zeros_like();
        let (dxa, dxv) =
            joint_attention_bwd(&cache, &xa, &xv, &ca, &cv, &params, "b", heads, &mut grads)
                .unwrap();

        let h = 1e-6;
        let check = |got: f64, fd: f64, what: &str| {
            assert!(
                (got - fd).abs() / got.abs().max(fd.abs()).max(1e-7) < 1e-6,
                "{what}: {got} vs {fd}"
            );
        };

        for idx in [0usize, 5, 17] {
            let mut p = xa.clone();
            p.data_mut()[idx] += h;
            let mut m = xa.clone();
            m.data_mut()[idx] -= h;
            check(
                dxa.data()[idx],
                (loss(&p, &xv, &params) - loss(&m, &xv, &params)) / (2.0 * h),
                "dxa",
            );
        }
        for idx in [1usize, 9] {
            let mut p = xv.clone();
            p.data_mut()[idx] += h;
            let mut m = xv.clone();
            m.data_mut()[idx] -= h;
            check(
                dxv.data()[idx],
                (loss(&xa, &p, &params) - loss(&xa, &m, &params)) / (2.0 * h),
                "dxv",
            );
        }
        for pname in [
            name("b", "audio", "qkv.w"),
            name("b", "audio", "out.b"),
            name("b", "visual", "qkv.b"),
            name("b", "visual", "out.w"),
        ] {
            for idx in [0usize, 3] {
                let mut p = params.clone();
                p.get_mut(&pname).unwrap().data_mut()[idx] += h;
                let mut m = params.clone();
                m.get_mut(&pname).unwrap().data_mut()[idx] -= h;
                check(
                    grads.get(&pname).unwrap().data()[idx],
                    (loss(&xa, &xv, &p) - loss(&xa, &xv, &m)) / (2.0 * h),
                    &pname,
                );
            }
        }
    }
}
