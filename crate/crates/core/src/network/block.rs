//! One dual-stream modulated transformer block.
//!
//! Per stream, the conditioning vector produces six modulation vectors
//! (γ1, β1, gate1, γ2, β2, gate2) through a linear map of silu(cond); the
//! gates start at zero so a freshly initialized block is the identity on both
//! streams.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::network::attention::{joint_attention_bwd, joint_attention_fwd, AttnCache};
use crate::network::layers::{
    gated_residual, layernorm_bwd, layernorm_fwd, linear_bwd_into, linear_fwd, modulate,
    modulate_bwd, silu_bwd, silu_fwd,
};
use crate::params::ParameterStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Adaptive layer norm: normalize rows, then scale/shift with vectors derived
/// from the conditioning signal. Returns the output with the cache needed for
/// the backward pass.
pub fn adaln_fwd<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let (y, rstd) = layernorm_fwd(x);
    let out = modulate(&y, gamma, beta);
    (out, y, rstd)
}

/// Convenience wrapper without cache, for callers that only need the value.
pub fn adaln<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> Tensor<T> {
    adaln_fwd(x, gamma, beta).0
}

pub struct StreamCache<T> {
    mod_vec: Tensor<T>, // [1, 6D]
    ln1_y: Tensor<T>,
    ln1_rstd: Vec<T>,
    attn_in: Tensor<T>,
    attn_out: Tensor<T>,
    x_mid: Tensor<T>,
    ln2_y: Tensor<T>,
    ln2_rstd: Vec<T>,
    mlp_in: Tensor<T>,
    mlp_pre1: Tensor<T>,
    mlp_h: Tensor<T>,
    mlp_out: Tensor<T>,
}

pub struct BlockCache<T> {
    pub audio: StreamCache<T>,
    pub visual: StreamCache<T>,
    pub attn: AttnCache<T>,
}

fn mod_slices<T: Real>(mod_vec: &Tensor<T>, d: usize) -> [&[T]; 6] {
    let m = mod_vec.row(0);
    [
        &m[0..d],
        &m[d..2 * d],
        &m[2 * d..3 * d],
        &m[3 * d..4 * d],
        &m[4 * d..5 * d],
        &m[5 * d..6 * d],
    ]
}

fn pname(prefix: &str, stream: &str, part: &str) -> String {
    format!("{prefix}.{stream}.{part}")
}

struct StreamPre<T> {
    mod_vec: Tensor<T>,
    ln1_y: Tensor<T>,
    ln1_rstd: Vec<T>,
    attn_in: Tensor<T>,
}

fn stream_pre_attn<T: Real>(
    x: &Tensor<T>,
    sc: &Tensor<T>,
    params: &ParameterStore<T>,
    prefix: &str,
    stream: &str,
) -> Result<StreamPre<T>> {
    let d = x.cols();
    let mod_vec = linear_fwd(
        sc,
        params.get(&pname(prefix, stream, "mod.w"))?,
        params.get(&pname(prefix, stream, "mod.b"))?,
    );
    let s = mod_slices(&mod_vec, d);
    let (attn_in, ln1_y, ln1_rstd) = adaln_fwd(x, s[0], s[1]);
    Ok(StreamPre {
        mod_vec,
        ln1_y,
        ln1_rstd,
        attn_in,
    })
}

#[allow(clippy::type_complexity)]
fn stream_post_attn<T: Real>(
    x: &Tensor<T>,
    pre: StreamPre<T>,
    attn_out: Tensor<T>,
    params: &ParameterStore<T>,
    prefix: &str,
    stream: &str,
) -> Result<(Tensor<T>, StreamCache<T>)> {
    let d = x.cols();
    let s = mod_slices(&pre.mod_vec, d);
    let x_mid = gated_residual(x, s[2], &attn_out);

    let (mlp_in, ln2_y, ln2_rstd) = adaln_fwd(&x_mid, s[3], s[4]);
    let mlp_pre1 = linear_fwd(
        &mlp_in,
        params.get(&pname(prefix, stream, "mlp.fc1.w"))?,
        params.get(&pname(prefix, stream, "mlp.fc1.b"))?,
    );
    let mlp_h = silu_fwd(&mlp_pre1);
    let mlp_out = linear_fwd(
        &mlp_h,
        params.get(&pname(prefix, stream, "mlp.fc2.w"))?,
        params.get(&pname(prefix, stream, "mlp.fc2.b"))?,
    );
    let x_out = gated_residual(&x_mid, s[5], &mlp_out);

    Ok((
        x_out,
        StreamCache {
            mod_vec: pre.mod_vec,
            ln1_y: pre.ln1_y,
            ln1_rstd: pre.ln1_rstd,
            attn_in: pre.attn_in,
            attn_out,
            x_mid,
            ln2_y,
            ln2_rstd,
            mlp_in,
            mlp_pre1,
            mlp_h,
            mlp_out,
        },
    ))
}

/// Block forward. `sc` is silu(cond) as a [1, D] tensor shared by both
/// streams; `prefix` names the block's parameters ("blocks.03").
pub fn block_fwd<T: Real>(
    audio: &Tensor<T>,
    visual: &Tensor<T>,
    sc: &Tensor<T>,
    params: &ParameterStore<T>,
    prefix: &str,
    heads: usize,
) -> Result<(Tensor<T>, Tensor<T>, BlockCache<T>)> {
    let pre_a = stream_pre_attn(audio, sc, params, prefix, "audio")?;
    let pre_v = stream_pre_attn(visual, sc, params, prefix, "visual")?;

    let (ya, yv, attn) =
        joint_attention_fwd(&pre_a.attn_in, &pre_v.attn_in, params, prefix, heads)?;

    let (out_a, cache_a) = stream_post_attn(audio, pre_a, ya, params, prefix, "audio")?;
    let (out_v, cache_v) = stream_post_attn(visual, pre_v, yv, params, prefix, "visual")?;

    Ok((
        out_a,
        out_v,
        BlockCache {
            audio: cache_a,
            visual: cache_v,
            attn,
        },
    ))
}

/// Gradient of the gated residual's gate: Σ_rows dy ⊙ branch.
fn gate_grad<T: Real>(dy: &Tensor<T>, branch: &Tensor<T>) -> Vec<T> {
    let d = dy.cols();
    let mut g = vec![T::zero(); d];
    for i in 0..dy.rows() {
        for (gv, (&dv, &bv)) in g.iter_mut().zip(dy.row(i).iter().zip(branch.row(i))) {
            *gv += dv * bv;
        }
    }
    g
}

struct StreamBwdMid<T> {
    dx_mid: Tensor<T>,
    d_attn_out: Tensor<T>,
    dmod: Tensor<T>, // [1, 6D], γ2/β2/g1/g2 parts filled
}

/// Backward through the MLP sublayer and the gates, down to the point where
/// the joint attention backward has to run.
fn stream_bwd_upper<T: Real>(
    cache: &StreamCache<T>,
    dx_out: &Tensor<T>,
    params: &ParameterStore<T>,
    prefix: &str,
    stream: &str,
    grads: &mut ParameterStore<T>,
) -> Result<StreamBwdMid<T>> {
    let d = dx_out.cols();
    let s = mod_slices(&cache.mod_vec, d);
    let mut dmod = Tensor::zeros(&[1, 6 * d]);

    // x_out = x_mid + g2 ⊙ mlp_out
    let dg2 = gate_grad(dx_out, &cache.mlp_out);
    let mut dmlp_out = Tensor::zeros(dx_out.shape());
    for i in 0..dx_out.rows() {
        for (o, (&dv, &g)) in dmlp_out
            .row_mut(i)
            .iter_mut()
            .zip(dx_out.row(i).iter().zip(s[5]))
        {
            *o = dv * g;
        }
    }

    let dh = linear_bwd_into(
        &cache.mlp_h,
        &dmlp_out,
        params,
        grads,
        &pname(prefix, stream, "mlp.fc2.w"),
        &pname(prefix, stream, "mlp.fc2.b"),
    )?;
    let dpre1 = silu_bwd(&cache.mlp_pre1, &dh);
    let dmlp_in = linear_bwd_into(
        &cache.mlp_in,
        &dpre1,
        params,
        grads,
        &pname(prefix, stream, "mlp.fc1.w"),
        &pname(prefix, stream, "mlp.fc1.b"),
    )?;

    let mut dx_mid = dx_out.clone();
    {
        let dm = dmod.row_mut(0);
        let (dgamma2, rest) = dm[3 * d..].split_at_mut(d);
        let (dbeta2, dgate2) = rest.split_at_mut(d);
        let dln2 = modulate_bwd(&cache.ln2_y, s[3], &dmlp_in, dgamma2, dbeta2);
        dgate2.copy_from_slice(&dg2);
        dx_mid.add_assign(&layernorm_bwd(&cache.ln2_y, &cache.ln2_rstd, &dln2));
    }

    // x_mid = x_in + g1 ⊙ attn_out
    let dg1 = gate_grad(&dx_mid, &cache.attn_out);
    let mut d_attn_out = Tensor::zeros(dx_mid.shape());
    for i in 0..dx_mid.rows() {
        for (o, (&dv, &g)) in d_attn_out
            .row_mut(i)
            .iter_mut()
            .zip(dx_mid.row(i).iter().zip(s[2]))
        {
            *o = dv * g;
        }
    }
    dmod.row_mut(0)[2 * d..3 * d].copy_from_slice(&dg1);

    Ok(StreamBwdMid {
        dx_mid,
        d_attn_out,
        dmod,
    })
}

/// Finish a stream's backward once d(attn_in) is known; returns dx_in and
/// accumulates the modulation-projection gradients and dsc.
#[allow(clippy::too_many_arguments)]
fn stream_bwd_lower<T: Real>(
    cache: &StreamCache<T>,
    mut mid: StreamBwdMid<T>,
    d_attn_in: &Tensor<T>,
    sc: &Tensor<T>,
    params: &ParameterStore<T>,
    prefix: &str,
    stream: &str,
    grads: &mut ParameterStore<T>,
    dsc: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let d = d_attn_in.cols();
    let s = mod_slices(&cache.mod_vec, d);

    let mut dx_in = mid.dx_mid.clone();
    {
        let dm = mid.dmod.row_mut(0);
        let (dgamma1, dbeta1) = dm[..2 * d].split_at_mut(d);
        let dln1 = modulate_bwd(&cache.ln1_y, s[0], d_attn_in, dgamma1, dbeta1);
        dx_in.add_assign(&layernorm_bwd(&cache.ln1_y, &cache.ln1_rstd, &dln1));
    }

    let dsc_part = linear_bwd_into(
        sc,
        &mid.dmod,
        params,
        grads,
        &pname(prefix, stream, "mod.w"),
        &pname(prefix, stream, "mod.b"),
    )?;
    dsc.add_assign(&dsc_part);

    Ok(dx_in)
}

/// Block backward. Returns (d_audio_in, d_visual_in); accumulates parameter
/// gradients and the gradient w.r.t. silu(cond) into `dsc` ([1, D]).
#[allow(clippy::too_many_arguments)]
pub fn block_bwd<T: Real>(
    cache: &BlockCache<T>,
    d_audio_out: &Tensor<T>,
    d_visual_out: &Tensor<T>,
    sc: &Tensor<T>,
    params: &ParameterStore<T>,
    prefix: &str,
    heads: usize,
    grads: &mut ParameterStore<T>,
    dsc: &mut Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mid_a = stream_bwd_upper(&cache.audio, d_audio_out, params, prefix, "audio", grads)?;
    let mid_v = stream_bwd_upper(&cache.visual, d_visual_out, params, prefix, "visual", grads)?;

    let (d_attn_in_a, d_attn_in_v) = joint_attention_bwd(
        &cache.attn,
        &cache.audio.attn_in,
        &cache.visual.attn_in,
        &mid_a.d_attn_out,
        &mid_v.d_attn_out,
        params,
        prefix,
        heads,
        grads,
    )?;

    let dxa = stream_bwd_lower(
        &cache.audio,
        mid_a,
        &d_attn_in_a,
        sc,
        params,
        prefix,
        "audio",
        grads,
        dsc,
    )?;
    let dxv = stream_bwd_lower(
        &cache.visual,
        mid_v,
        &d_attn_in_v,
        sc,
        params,
        prefix,
        "visual",
        grads,
        dsc,
    )?;

    Ok((dxa, dxv))
}
