//! Timestep-adaptive representation alignment: a frozen deterministic teacher
//! encoder, the trainable projection head, three sequence-length matchers,
//! and the weighted cosine alignment loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{invalid, shape as shape_err, Result};
use crate::interpolant::InterpolantSchedule;
use crate::network::layers::{linear_bwd_into, linear_fwd, silu_bwd, silu_fwd};
use crate::params::ParameterStore;
use crate::rng::{self, Purpose};
use crate::scalar::Real;
use crate::tensor::{dot, Tensor};

/// How the L_z-token projection is reconciled with the teacher's L_a rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatcherKind {
    /// Average both sides down to a single row.
    Pool,
    /// Linearly interpolate the projection rows to length L_a.
    Interp,
    /// Learned L_a×L_z mixing (a kernel-size-1 convolution over the sequence).
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherKind {
    FrozenRandom,
}

/// Frozen feature extractor standing in for a pretrained audio encoder.
///
/// The clean sample is split into `out_len` contiguous temporal chunks; each
/// chunk goes through the same fixed random map + tanh, a fixed mixing map to
/// `out_dim`, and row-wise L2 normalization. Nothing here ever trains.
#[derive(Debug, Clone)]
pub struct TeacherEncoder {
    pub kind: TeacherKind,
    pub seed: u64,
    pub out_len: usize,
    pub out_dim: usize,
    channels: usize,
    freq_bins: usize,
    time_frames: usize,
    chunk_frames: usize,
    chunk_w: Tensor<f64>,
    chunk_b: Tensor<f64>,
    mix_w: Tensor<f64>,
}

impl TeacherEncoder {
    pub fn frozen_random(
        seed: u64,
        out_len: usize,
        out_dim: usize,
        channels: usize,
        freq_bins: usize,
        time_frames: usize,
    ) -> Result<Self> {
        if out_len == 0 || out_dim == 0 {
            return Err(invalid("teacher out_len/out_dim must be positive"));
        }
        if time_frames % out_len != 0 {
            return Err(invalid(format!(
                "teacher out_len {out_len} must divide time_frames {time_frames}"
            )));
        }
        let chunk_frames = time_frames / out_len;
        let chunk_in = channels * freq_bins * chunk_frames;
        let hidden = 2 * out_dim;
        let mut r = rng::stream(seed, Purpose::Teacher);
        let scale_1 = 1.0 / (chunk_in as f64).sqrt();
        let chunk_w = rng::normal_tensor::<f64>(&mut r, &[hidden, chunk_in]).map(|v| v * scale_1);
        let chunk_b = rng::normal_tensor::<f64>(&mut r, &[hidden]).map(|v| v * 0.3);
        let scale_2 = 1.0 / (hidden as f64).sqrt();
        let mix_w = rng::normal_tensor::<f64>(&mut r, &[out_dim, hidden]).map(|v| v * scale_2);
        Ok(TeacherEncoder {
            kind: TeacherKind::FrozenRandom,
            seed,
            out_len,
            out_dim,
            channels,
            freq_bins,
            time_frames,
            chunk_frames,
            chunk_w,
            chunk_b,
            mix_w,
        })
    }

    /// Time frames covered by output row `k`: [start, end).
    pub fn chunk_span(&self, k: usize) -> (usize, usize) {
        (k * self.chunk_frames, (k + 1) * self.chunk_frames)
    }

    /// Deterministic alignment targets y_a, [out_len, out_dim], unit rows.
    pub fn encode<T: Real>(&self, x_star: &Tensor<T>) -> Result<Tensor<T>> {
        x_star.check_shape(
            &[self.channels, self.freq_bins, self.time_frames],
            "teacher input",
        )?;
        let hidden = self.chunk_w.shape()[0];
        let chunk_in = self.chunk_w.shape()[1];
        let mut out = Tensor::zeros(&[self.out_len, self.out_dim]);
        let src = x_star.data();
        for k in 0..self.out_len {
            let (t0, _t1) = self.chunk_span(k);
            let mut chunk = vec![0.0f64; chunk_in];
            for c in 0..self.channels {
                for f in 0..self.freq_bins {
                    for dt in 0..self.chunk_frames {
                        chunk[(c * self.freq_bins + f) * self.chunk_frames + dt] =
                            src[(c * self.freq_bins + f) * self.time_frames + t0 + dt].to_f64();
                    }
                }
            }
            let mut hid = vec![0.0f64; hidden];
            for (i, h) in hid.iter_mut().enumerate() {
                *h = (dot(self.chunk_w.row(i), &chunk) + self.chunk_b.data()[i]).tanh();
            }
            let row = out.row_mut(k);
            for (j, o) in row.iter_mut().enumerate() {
                *o = T::from_f64(dot(self.mix_w.row(j), &hid));
            }
            let norm = dot(row, row).sqrt().max(T::from_f64(1e-12));
            for o in row.iter_mut() {
                *o = *o / norm;
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// projection head
// ---------------------------------------------------------------------------

pub struct HeadCache<T> {
    tap: Tensor<T>,
    pre1: Tensor<T>,
    h1: Tensor<T>,
    pre2: Tensor<T>,
    h2: Tensor<T>,
}

/// Three-layer projection of the tapped hidden state into teacher space.
pub fn project_head_fwd<T: Real>(
    tap: &Tensor<T>,
    params: &ParameterStore<T>,
) -> Result<(Tensor<T>, HeadCache<T>)> {
    let pre1 = linear_fwd(
        tap,
        params.get("align.head.fc1.w")?,
        params.get("align.head.fc1.b")?,
    );
    let h1 = silu_fwd(&pre1);
    let pre2 = linear_fwd(
        &h1,
        params.get("align.head.fc2.w")?,
        params.get("align.head.fc2.b")?,
    );
    let h2 = silu_fwd(&pre2);
    let proj = linear_fwd(
        &h2,
        params.get("align.head.fc3.w")?,
        params.get("align.head.fc3.b")?,
    );
    Ok((
        proj,
        HeadCache {
            tap: tap.clone(),
            pre1,
            h1,
            pre2,
            h2,
        },
    ))
}

pub fn project_head<T: Real>(tap: &Tensor<T>, params: &ParameterStore<T>) -> Result<Tensor<T>> {
    Ok(project_head_fwd(tap, params)?.0)
}

fn project_head_bwd<T: Real>(
    cache: &HeadCache<T>,
    dproj: &Tensor<T>,
    params: &ParameterStore<T>,
    grads: &mut ParameterStore<T>,
) -> Result<Tensor<T>> {
    let dh2 = linear_bwd_into(
        &cache.h2,
        dproj,
        params,
        grads,
        "align.head.fc3.w",
        "align.head.fc3.b",
    )?;
    let dpre2 = silu_bwd(&cache.pre2, &dh2);
    let dh1 = linear_bwd_into(
        &cache.h1,
        &dpre2,
        params,
        grads,
        "align.head.fc2.w",
        "align.head.fc2.b",
    )?;
    let dpre1 = silu_bwd(&cache.pre1, &dh1);
    linear_bwd_into(
        &cache.tap,
        &dpre1,
        params,
        grads,
        "align.head.fc1.w",
        "align.head.fc1.b",
    )
}

// ---------------------------------------------------------------------------
// sequence matchers
// ---------------------------------------------------------------------------

/// Reconcile sequence lengths: returns (s, y) of equal length K.
pub fn match_sequence<T: Real>(
    kind: MatcherKind,
    proj: &Tensor<T>,
    y_a: &Tensor<T>,
    params: &ParameterStore<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if proj.shape().len() != 2 || y_a.shape().len() != 2 {
        return Err(shape_err("match_sequence wants 2-D inputs"));
    }
    if proj.cols() != y_a.cols() {
        return Err(shape_err(format!(
            "feature dims differ: proj {} vs teacher {}",
            proj.cols(),
            y_a.cols()
        )));
    }
    match kind {
        MatcherKind::Pool => Ok((column_mean(proj), column_mean(y_a))),
        MatcherKind::Interp => Ok((interp_rows(proj, y_a.rows()), y_a.clone())),
        MatcherKind::Conv => {
            let w = params.get("align.matcher.conv.w")?;
            let b = params.get("align.matcher.conv.b")?;
            let (k, lz) = (w.shape()[0], w.shape()[1]);
            if proj.rows() != lz || y_a.rows() != k {
                return Err(shape_err(format!(
                    "conv matcher is [{k}, {lz}], got proj rows {} and teacher rows {}",
                    proj.rows(),
                    y_a.rows()
                )));
            }
            let mut s = Tensor::zeros(&[k, proj.cols()]);
            for j in 0..k {
                let row = s.row_mut(j);
                for (i, &wv) in w.row(j).iter().enumerate() {
                    crate::tensor::scaled_add(row, wv, proj.row(i));
                }
                let bj = b.data()[j];
                for v in row.iter_mut() {
                    *v += bj;
                }
            }
            Ok((s, y_a.clone()))
        }
    }
}

fn column_mean<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (l, d) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[1, d]);
    for i in 0..l {
        crate::tensor::scaled_add(out.row_mut(0), T::one(), x.row(i));
    }
    let inv = T::one() / T::from_usize(l.max(1));
    out.scale(inv);
    out
}

/// Row positions used by the Interp matcher: j ↦ j·(L−1)/(K−1), endpoints to
/// endpoints.
fn interp_pos(j: usize, k: usize, l: usize) -> (usize, usize, f64) {
    if k <= 1 || l == 1 {
        return (0, 0, 0.0);
    }
    let pos = j as f64 * (l as f64 - 1.0) / (k as f64 - 1.0);
    let i0 = (pos.floor() as usize).min(l - 1);
    let i1 = (i0 + 1).min(l - 1);
    (i0, i1, pos - i0 as f64)
}

fn interp_rows<T: Real>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let (l, d) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[k, d]);
    for j in 0..k {
        let (i0, i1, frac) = interp_pos(j, k, l);
        let f = T::from_f64(frac);
        for ((o, &a), &b) in out.row_mut(j).iter_mut().zip(x.row(i0)).zip(x.row(i1)) {
            *o = (T::one() - f) * a + f * b;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// weighted alignment loss
// ---------------------------------------------------------------------------

const NORM_FLOOR: f64 = 1e-8;

pub struct AlignCache<T> {
    head: HeadCache<T>,
    s_norms: Vec<T>,
    s_hat: Tensor<T>,
    y_hat: Tensor<T>,
    cos: Vec<T>,
    weight: T,
    proj_rows: usize,
}

impl<T: Real> AlignCache<T> {
    /// Mean matched-row cosine similarity of this forward pass.
    pub fn mean_cosine(&self) -> T {
        crate::tensor::sum(&self.cos) / T::from_usize(self.cos.len().max(1))
    }
}

fn normalize_rows<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let (l, d) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[l, d]);
    let mut norms = vec![T::zero(); l];
    let floor = T::from_f64(NORM_FLOOR);
    for i in 0..l {
        let r = x.row(i);
        let n = dot(r, r).sqrt().max(floor);
        norms[i] = n;
        let inv = T::one() / n;
        for (o, &v) in out.row_mut(i).iter_mut().zip(r) {
            *o = v * inv;
        }
    }
    (out, norms)
}

/// w(t) · (1 − mean row cosine) between the matched projection and teacher
/// rows. Returns the scalar loss and the cache for `alignment_loss_bwd`.
pub fn alignment_loss_fwd<T: Real>(
    tap: &Tensor<T>,
    y_a: &Tensor<T>,
    t: T,
    schedule: &InterpolantSchedule,
    matcher: MatcherKind,
    params: &ParameterStore<T>,
) -> Result<(T, AlignCache<T>)> {
    if !tap.is_finite() || !y_a.is_finite() {
        return Err(invalid("alignment inputs must be finite"));
    }
    let weight = schedule.tra_weight(t)?;
    let (proj, head) = project_head_fwd(tap, params)?;
    let (s_m, y_m) = match_sequence(matcher, &proj, y_a, params)?;
    let (s_hat, s_norms) = normalize_rows(&s_m);
    let (y_hat, _) = normalize_rows(&y_m);
    let k = s_hat.rows();
    let mut cos = vec![T::zero(); k];
    let mut mean_cos = T::zero();
    for i in 0..k {
        cos[i] = dot(s_hat.row(i), y_hat.row(i));
        mean_cos += cos[i];
    }
    mean_cos = mean_cos / T::from_usize(k);
    let loss = weight * (T::one() - mean_cos);
    Ok((
        loss,
        AlignCache {
            head,
            s_norms,
            s_hat,
            y_hat,
            cos,
            weight,
            proj_rows: proj.rows(),
        },
    ))
}

/// Loss value only.
pub fn alignment_loss<T: Real>(
    tap: &Tensor<T>,
    y_a: &Tensor<T>,
    t: T,
    schedule: &InterpolantSchedule,
    matcher: MatcherKind,
    params: &ParameterStore<T>,
) -> Result<T> {
    Ok(alignment_loss_fwd(tap, y_a, t, schedule, matcher, params)?.0)
}

/// Backward pass: returns d(loss)/d(tap) scaled by `upstream`, accumulating
/// head and Conv-matcher gradients.
pub fn alignment_loss_bwd<T: Real>(
    cache: &AlignCache<T>,
    upstream: T,
    matcher: MatcherKind,
    params: &ParameterStore<T>,
    grads: &mut ParameterStore<T>,
) -> Result<Tensor<T>> {
    let k = cache.s_hat.rows();
    let d = cache.s_hat.cols();
    // d loss / d s_k = −(w/K) · (ŷ_k − cos_k·ŝ_k) / ‖s_k‖
    let coef = -(cache.weight * upstream) / T::from_usize(k);
    let mut ds = Tensor::zeros(&[k, d]);
    for i in 0..k {
        let inv_n = T::one() / cache.s_norms[i];
        let c = cache.cos[i];
        for ((o, &yv), &sv) in ds
            .row_mut(i)
            .iter_mut()
            .zip(cache.y_hat.row(i))
            .zip(cache.s_hat.row(i))
        {
            *o = coef * (yv - c * sv) * inv_n;
        }
    }

    // matcher backward → dproj
    let dproj = match matcher {
        MatcherKind::Pool => {
            let l = cache.proj_rows;
            let inv = T::one() / T::from_usize(l.max(1));
            let mut dp = Tensor::zeros(&[l, d]);
            for i in 0..l {
                crate::tensor::scaled_add(dp.row_mut(i), inv, ds.row(0));
            }
            dp
        }
        MatcherKind::Interp => {
            let l = cache.proj_rows;
            let mut dp = Tensor::zeros(&[l, d]);
            for j in 0..k {
                let (i0, i1, frac) = interp_pos(j, k, l);
                let f = T::from_f64(frac);
                crate::tensor::scaled_add(dp.row_mut(i0), T::one() - f, ds.row(j));
                if i1 != i0 {
                    crate::tensor::scaled_add(dp.row_mut(i1), f, ds.row(j));
                }
            }
            dp
        }
        MatcherKind::Conv => {
            let w = params.get("align.matcher.conv.w")?.clone();
            let l = cache.proj_rows;
            // rebuild proj from the cached last hidden layer
            let proj = linear_fwd(
                &cache.head.h2,
                params.get("align.head.fc3.w")?,
                params.get("align.head.fc3.b")?,
            );
            {
                let (dw, db) = grads.get_mut2("align.matcher.conv.w", "align.matcher.conv.b")?;
                for j in 0..k {
                    let dsr = ds.row(j);
                    for i in 0..l {
                        dw.row_mut(j)[i] += dot(dsr, proj.row(i));
                    }
                    db.data_mut()[j] += crate::tensor::sum(dsr);
                }
            }
            let mut dp = Tensor::zeros(&[l, d]);
            for j in 0..k {
                for (i, &wv) in w.row(j).iter().enumerate() {
                    crate::tensor::scaled_add(dp.row_mut(i), wv, ds.row(j));
                }
            }
            dp
        }
    };

    project_head_bwd(&cache.head, &dproj, params, grads)
}
