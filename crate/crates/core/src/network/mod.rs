//! Dual-stream modulated transformer: patchify, timestep + onset
//! conditioning, N joint-attention blocks, a final modulated projection back
//! to the latent grid, and a hidden-state tap at the injection depth.

pub mod attention;
pub mod block;
pub mod layers;
pub mod patch;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::alignment::MatcherKind;
use crate::error::{invalid, Result};
use crate::params::ParameterStore;
use crate::rng::{self, Purpose};
use crate::scalar::Real;
use crate::tensor::Tensor;

use block::{adaln_fwd, block_bwd, block_fwd, BlockCache};
use layers::{
    layernorm_bwd, linear_bwd_into, linear_fwd, modulate_bwd, pos_embed_1d, pos_embed_2d,
    silu_bwd, silu_fwd, sinusoidal_features,
};
use patch::{patchify_raw, unpatchify};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Transformer depth N.
    pub depth: usize,
    /// Hidden width D_z.
    pub hidden: usize,
    pub heads: usize,
    /// Patch size p.
    pub patch: usize,
    pub latent_channels: usize,
    pub freq_bins: usize,
    pub time_frames: usize,
    pub visual_len: usize,
    pub visual_dim: usize,
    pub onset_len: usize,
    pub teacher_len: usize,
    pub teacher_dim: usize,
    /// 1-based block index whose audio output feeds the alignment head.
    pub injection_depth: usize,
    pub matcher: MatcherKind,
    pub lambda_align: f64,
    pub cfg_drop_prob: f64,
    pub mlp_ratio: f64,
}

impl ModelConfig {
    /// Desk-scale default configuration.
    pub fn desk() -> Self {
        ModelConfig {
            depth: 4,
            hidden: 64,
            heads: 4,
            patch: 2,
            latent_channels: 1,
            freq_bins: 16,
            time_frames: 64,
            visual_len: 16,
            visual_dim: 8,
            onset_len: 64,
            teacher_len: 8,
            teacher_dim: 16,
            injection_depth: 4,
            matcher: MatcherKind::Conv,
            lambda_align: 0.5,
            cfg_drop_prob: 0.1,
            mlp_ratio: 4.0,
        }
    }

    /// Smallest config the gradient oracle runs on.
    pub fn tiny() -> Self {
        ModelConfig {
            depth: 2,
            hidden: 16,
            heads: 1,
            patch: 2,
            latent_channels: 1,
            freq_bins: 8,
            time_frames: 8,
            visual_len: 2,
            visual_dim: 3,
            onset_len: 8,
            teacher_len: 2,
            teacher_dim: 6,
            injection_depth: 2,
            matcher: MatcherKind::Conv,
            lambda_align: 0.5,
            cfg_drop_prob: 0.1,
            mlp_ratio: 4.0,
        }
    }

    pub fn token_len(&self) -> usize {
        (self.freq_bins / self.patch) * (self.time_frames / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.latent_channels * self.patch * self.patch
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.hidden as f64) * self.mlp_ratio) as usize
    }

    /// Hidden width of the alignment projection head.
    pub fn align_head_hidden(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.hidden == 0 || self.patch == 0 || self.latent_channels == 0 {
            return Err(invalid("depth, hidden, patch, latent_channels must be positive"));
        }
        if self.hidden % 4 != 0 {
            return Err(invalid("hidden must be divisible by 4 (2-D position embedding)"));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(invalid(format!(
                "heads ({}) must divide hidden ({})",
                self.heads, self.hidden
            )));
        }
        if self.freq_bins % self.patch != 0 || self.time_frames % self.patch != 0 {
            return Err(invalid(format!(
                "patch {} must divide freq_bins {} and time_frames {}",
                self.patch, self.freq_bins, self.time_frames
            )));
        }
        if self.injection_depth < 1 || self.injection_depth > self.depth {
            return Err(invalid(format!(
                "injection_depth {} out of range [1, {}]",
                self.injection_depth, self.depth
            )));
        }
        if self.visual_dim == 0 || self.onset_len == 0 {
            return Err(invalid("visual_dim and onset_len must be positive"));
        }
        if self.teacher_len == 0 || self.teacher_dim == 0 {
            return Err(invalid("teacher_len and teacher_dim must be positive"));
        }
        if self.lambda_align < 0.0 {
            return Err(invalid("lambda_align must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.cfg_drop_prob) {
            return Err(invalid("cfg_drop_prob must lie in [0, 1]"));
        }
        if self.mlp_hidden() == 0 {
            return Err(invalid("mlp_ratio too small"));
        }
        Ok(())
    }
}

/// Per-sample conditioning: frame-level visual features plus the onset cue
/// vector. `dropped` marks the classifier-free unconditional branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionInputs<T> {
    /// [visual_len, visual_dim]
    pub c_v: Tensor<T>,
    /// [1, onset_len]
    pub c_o: Tensor<T>,
    pub dropped: bool,
}

impl<T: Real> ConditionInputs<T> {
    pub fn new(c_v: Tensor<T>, c_o: Tensor<T>) -> Self {
        ConditionInputs {
            c_v,
            c_o,
            dropped: false,
        }
    }

    /// The all-zero unconditional branch.
    pub fn zeroed(config: &ModelConfig) -> Self {
        ConditionInputs {
            c_v: Tensor::zeros(&[config.visual_len, config.visual_dim]),
            c_o: Tensor::zeros(&[1, config.onset_len]),
            dropped: true,
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        self.c_v
            .check_shape(&[config.visual_len, config.visual_dim], "c_v")?;
        self.c_o.check_shape(&[1, config.onset_len], "c_o")?;
        if !self.c_v.is_finite() || !self.c_o.is_finite() {
            return Err(invalid("conditioning inputs must be finite"));
        }
        if self.dropped {
            let zero = |t: &Tensor<T>| t.data().iter().all(|&x| x == T::zero());
            if !zero(&self.c_v) || !zero(&self.c_o) {
                return Err(invalid("dropped conditions must be all-zero"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Audio,
    Visual,
}

/// A sequence of hidden-state tokens tagged with its stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T> {
    pub tokens: Tensor<T>,
    pub stream: Stream,
}

// ---------------------------------------------------------------------------
// parameter layout
// ---------------------------------------------------------------------------

/// Names and shapes of every trainable array, as a pure function of the
/// config.
pub fn param_spec(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.hidden;
    let h = config.mlp_hidden();
    let dh = config.align_head_hidden();
    let mut spec: Vec<(String, Vec<usize>)> = vec![
        ("patch_embed.w".into(), vec![d, config.patch_dim()]),
        ("patch_embed.b".into(), vec![d]),
        ("visual_embed.w".into(), vec![d, config.visual_dim]),
        ("visual_embed.b".into(), vec![d]),
        ("time_embed.fc1.w".into(), vec![d, d]),
        ("time_embed.fc1.b".into(), vec![d]),
        ("time_embed.fc2.w".into(), vec![d, d]),
        ("time_embed.fc2.b".into(), vec![d]),
        ("onset_embed.fc1.w".into(), vec![d, config.onset_len]),
        ("onset_embed.fc1.b".into(), vec![d]),
        ("onset_embed.fc2.w".into(), vec![d, d]),
        ("onset_embed.fc2.b".into(), vec![d]),
        ("final.mod.w".into(), vec![2 * d, d]),
        ("final.mod.b".into(), vec![2 * d]),
        ("final.linear.w".into(), vec![config.patch_dim(), d]),
        ("final.linear.b".into(), vec![config.patch_dim()]),
        ("align.head.fc1.w".into(), vec![dh, d]),
        ("align.head.fc1.b".into(), vec![dh]),
        ("align.head.fc2.w".into(), vec![dh, dh]),
        ("align.head.fc2.b".into(), vec![dh]),
        ("align.head.fc3.w".into(), vec![config.teacher_dim, dh]),
        ("align.head.fc3.b".into(), vec![config.teacher_dim]),
    ];
    if config.matcher == MatcherKind::Conv {
        spec.push((
            "align.matcher.conv.w".into(),
            vec![config.teacher_len, config.token_len()],
        ));
        spec.push(("align.matcher.conv.b".into(), vec![config.teacher_len]));
    }
    for i in 0..config.depth {
        for stream in ["audio", "visual"] {
            let p = format!("blocks.{i:02}.{stream}");
            spec.push((format!("{p}.mod.w"), vec![6 * d, d]));
            spec.push((format!("{p}.mod.b"), vec![6 * d]));
            spec.push((format!("{p}.attn.qkv.w"), vec![3 * d, d]));
            spec.push((format!("{p}.attn.qkv.b"), vec![3 * d]));
            spec.push((format!("{p}.attn.out.w"), vec![d, d]));
            spec.push((format!("{p}.attn.out.b"), vec![d]));
            spec.push((format!("{p}.mlp.fc1.w"), vec![h, d]));
            spec.push((format!("{p}.mlp.fc1.b"), vec![h]));
            spec.push((format!("{p}.mlp.fc2.w"), vec![d, h]));
            spec.push((format!("{p}.mlp.fc2.b"), vec![d]));
        }
    }
    spec
}

/// Total trainable parameter count for a config.
pub fn param_count(config: &ModelConfig) -> usize {
    param_spec(config)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

const INIT_STD: f64 = 0.02;

fn trunc_normal<T: Real>(
    rng: &mut rand_chacha::ChaCha8Rng,
    shape: &[usize],
    std: f64,
) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mut z: f64 = rng::normal(rng);
            while z.abs() > 2.0 {
                z = rng::normal(rng);
            }
            T::from_f64(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

/// Transformer weights are truncated-normal (std 0.02); the alignment head
/// and Conv matcher use fan-in scaling so the projected features start at
/// unit scale. Biases, gates, the onset projection's last layer, and the
/// final output layer start at zero, which makes a fresh model the exact
/// identity-to-zero map.
pub fn init_params<T: Real>(config: &ModelConfig, seed: u64) -> Result<ParameterStore<T>> {
    config.validate()?;
    let mut rng = rng::stream(seed, Purpose::Init);
    let mut store = ParameterStore::new();
    let d = config.hidden;
    for (name, shape) in param_spec(config) {
        let zero_init = name.ends_with(".b")
            || name == "final.linear.w"
            || name == "onset_embed.fc2.w";
        let std = if name.starts_with("align.") {
            1.0 / (shape[shape.len() - 1] as f64).sqrt()
        } else {
            INIT_STD
        };
        let mut t = if zero_init {
            Tensor::zeros(&shape)
        } else {
            trunc_normal::<T>(&mut rng, &shape, std)
        };
        // gate rows of the block modulation projections stay zero
        if name.ends_with(".mod.w") && name.starts_with("blocks.") {
            for gate_block in [2 * d..3 * d, 5 * d..6 * d] {
                for r in gate_block {
                    for v in t.row_mut(r) {
                        *v = T::zero();
                    }
                }
            }
        }
        store.insert(&name, t)?;
    }
    Ok(store)
}

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

pub struct ForwardOutput<T> {
    /// Predicted velocity, [C, F, T].
    pub v_pred: Tensor<T>,
    /// Audio hidden state after the injection block, [L_z, D].
    pub tap: Tensor<T>,
}

pub struct ForwardCache<T> {
    raw_patches: Tensor<T>,
    c_v: Tensor<T>,
    t_feats: Tensor<T>,
    t_pre1: Tensor<T>,
    t_h: Tensor<T>,
    o_in: Tensor<T>,
    o_pre1: Tensor<T>,
    o_h: Tensor<T>,
    cond_vec: Tensor<T>,
    sc: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    final_mod: Tensor<T>,
    final_ln_y: Tensor<T>,
    final_ln_rstd: Vec<T>,
    final_x: Tensor<T>,
}

/// Sinusoidal timestep features through the learned two-layer map.
pub fn timestep_embed<T: Real>(
    t: T,
    params: &ParameterStore<T>,
    config: &ModelConfig,
) -> Result<Tensor<T>> {
    if !(t >= T::zero() && t <= T::one()) {
        return Err(invalid("timestep must lie in [0, 1]"));
    }
    let feats = Tensor::from_vec(
        &[1, config.hidden],
        sinusoidal_features(t * T::from_f64(1000.0), config.hidden),
    )?;
    let pre1 = linear_fwd(
        &feats,
        params.get("time_embed.fc1.w")?,
        params.get("time_embed.fc1.b")?,
    );
    let h = silu_fwd(&pre1);
    Ok(linear_fwd(
        &h,
        params.get("time_embed.fc2.w")?,
        params.get("time_embed.fc2.b")?,
    ))
}

/// Onset cue vector through the learned two-layer map.
pub fn onset_condition<T: Real>(
    c_o: &Tensor<T>,
    params: &ParameterStore<T>,
) -> Result<Tensor<T>> {
    if !c_o.is_finite() {
        return Err(invalid("onset cues must be finite"));
    }
    let pre1 = linear_fwd(
        c_o,
        params.get("onset_embed.fc1.w")?,
        params.get("onset_embed.fc1.b")?,
    );
    let h = silu_fwd(&pre1);
    Ok(linear_fwd(
        &h,
        params.get("onset_embed.fc2.w")?,
        params.get("onset_embed.fc2.b")?,
    ))
}

/// Project a latent into position-embedded audio tokens.
pub fn patchify<T: Real>(
    latent: &Tensor<T>,
    params: &ParameterStore<T>,
    config: &ModelConfig,
) -> Result<TokenSequence<T>> {
    let raw = patchify_raw(latent, config.patch)?;
    let tokens = embed_audio_tokens(&raw, params, config)?;
    Ok(TokenSequence {
        tokens,
        stream: Stream::Audio,
    })
}

/// Inverse of `patchify`'s layout for final-layer tokens of dim C·p·p.
pub fn unpatchify_tokens<T: Real>(
    tokens: &TokenSequence<T>,
    config: &ModelConfig,
) -> Result<Tensor<T>> {
    if tokens.stream != Stream::Audio {
        return Err(invalid("unpatchify expects the audio stream"));
    }
    unpatchify(
        &tokens.tokens,
        config.latent_channels,
        config.freq_bins,
        config.time_frames,
        config.patch,
    )
}

fn embed_audio_tokens<T: Real>(
    raw: &Tensor<T>,
    params: &ParameterStore<T>,
    config: &ModelConfig,
) -> Result<Tensor<T>> {
    let mut tokens = linear_fwd(raw, params.get("patch_embed.w")?, params.get("patch_embed.b")?);
    let pos = pos_embed_2d::<T>(
        config.freq_bins / config.patch,
        config.time_frames / config.patch,
        config.hidden,
    );
    tokens.add_assign(&pos);
    Ok(tokens)
}

/// Full model forward. Returns the prediction plus the cache `backward`
/// consumes; inference callers simply drop the cache.
pub fn forward<T: Real>(
    x_t: &Tensor<T>,
    t: T,
    cond: &ConditionInputs<T>,
    params: &ParameterStore<T>,
    config: &ModelConfig,
) -> Result<(ForwardOutput<T>, ForwardCache<T>)> {
    x_t.check_shape(
        &[config.latent_channels, config.freq_bins, config.time_frames],
        "x_t",
    )?;
    cond.validate(config)?;

    let raw = patchify_raw(x_t, config.patch)?;
    let mut audio = embed_audio_tokens(&raw, params, config)?;

    let mut visual = linear_fwd(
        &cond.c_v,
        params.get("visual_embed.w")?,
        params.get("visual_embed.b")?,
    );
    visual.add_assign(&pos_embed_1d::<T>(config.visual_len, config.hidden));

    // timestep branch
    let t_feats = Tensor::from_vec(
        &[1, config.hidden],
        sinusoidal_features(t * T::from_f64(1000.0), config.hidden),
    )?;
    let t_pre1 = linear_fwd(
        &t_feats,
        params.get("time_embed.fc1.w")?,
        params.get("time_embed.fc1.b")?,
    );
    let t_h = silu_fwd(&t_pre1);
    let t_emb = linear_fwd(
        &t_h,
        params.get("time_embed.fc2.w")?,
        params.get("time_embed.fc2.b")?,
    );

    // onset branch
    let o_in = cond.c_o.clone();
    let o_pre1 = linear_fwd(
        &o_in,
        params.get("onset_embed.fc1.w")?,
        params.get("onset_embed.fc1.b")?,
    );
    let o_h = silu_fwd(&o_pre1);
    let o_emb = linear_fwd(
        &o_h,
        params.get("onset_embed.fc2.w")?,
        params.get("onset_embed.fc2.b")?,
    );

    let mut cond_vec = t_emb;
    cond_vec.add_assign(&o_emb);
    let sc = silu_fwd(&cond_vec);

    let mut blocks = Vec::with_capacity(config.depth);
    let mut tap = None;
    for i in 0..config.depth {
        let prefix = format!("blocks.{i:02}");
        let (a, v, cache) = block_fwd(&audio, &visual, &sc, params, &prefix, config.heads)?;
        audio = a;
        visual = v;
        blocks.push(cache);
        if i + 1 == config.injection_depth {
            tap = Some(audio.clone());
        }
    }
    let tap = tap.expect("injection depth validated against depth");

    let final_mod = linear_fwd(&sc, params.get("final.mod.w")?, params.get("final.mod.b")?);
    let d = config.hidden;
    let (final_x, final_ln_y, final_ln_rstd) = adaln_fwd(
        &audio,
        &final_mod.row(0)[0..d],
        &final_mod.row(0)[d..2 * d],
    );
    let out_tokens = linear_fwd(
        &final_x,
        params.get("final.linear.w")?,
        params.get("final.linear.b")?,
    );
    let v_pred = unpatchify(
        &out_tokens,
        config.latent_channels,
        config.freq_bins,
        config.time_frames,
        config.patch,
    )?;

    Ok((
        ForwardOutput {
            v_pred,
            tap: tap.clone(),
        },
        ForwardCache {
            raw_patches: raw,
            c_v: cond.c_v.clone(),
            t_feats,
            t_pre1,
            t_h,
            o_in,
            o_pre1,
            o_h,
            cond_vec,
            sc,
            blocks,
            final_mod,
            final_ln_y,
            final_ln_rstd,
            final_x,
        },
    ))
}

/// Full model backward from (dv_pred, dtap). Parameter gradients accumulate
/// into `grads` (same names as the store).
pub fn backward<T: Real>(
    cache: &ForwardCache<T>,
    dv_pred: &Tensor<T>,
    dtap: &Tensor<T>,
    params: &ParameterStore<T>,
    config: &ModelConfig,
    grads: &mut ParameterStore<T>,
) -> Result<()> {
    let d = config.hidden;

    // unpatchify is a permutation; its adjoint is the patch gather
    let dout = patchify_raw(dv_pred, config.patch)?;
    let dfinal_x = linear_bwd_into(
        &cache.final_x,
        &dout,
        params,
        grads,
        "final.linear.w",
        "final.linear.b",
    )?;

    let mut dfinal_mod = Tensor::zeros(&[1, 2 * d]);
    let mut d_audio = {
        let gamma = &cache.final_mod.row(0)[0..d];
        let dm = dfinal_mod.row_mut(0);
        let (dgamma, dbeta) = dm.split_at_mut(d);
        let dln = modulate_bwd(&cache.final_ln_y, gamma, &dfinal_x, dgamma, dbeta);
        layernorm_bwd(&cache.final_ln_y, &cache.final_ln_rstd, &dln)
    };
    let mut dsc = linear_bwd_into(
        &cache.sc,
        &dfinal_mod,
        params,
        grads,
        "final.mod.w",
        "final.mod.b",
    )?;

    let mut d_visual = Tensor::zeros(&[config.visual_len, d]);
    for i in (0..config.depth).rev() {
        if i + 1 == config.injection_depth {
            d_audio.add_assign(dtap);
        }
        let prefix = format!("blocks.{i:02}");
        let (da, dv) = block_bwd(
            &cache.blocks[i],
            &d_audio,
            &d_visual,
            &cache.sc,
            params,
            &prefix,
            config.heads,
            grads,
            &mut dsc,
        )?;
        d_audio = da;
        d_visual = dv;
    }

    // conditioning vector
    let dcond = silu_bwd(&cache.cond_vec, &dsc);
    let dt_h = linear_bwd_into(
        &cache.t_h,
        &dcond,
        params,
        grads,
        "time_embed.fc2.w",
        "time_embed.fc2.b",
    )?;
    let dt_pre1 = silu_bwd(&cache.t_pre1, &dt_h);
    let _ = linear_bwd_into(
        &cache.t_feats,
        &dt_pre1,
        params,
        grads,
        "time_embed.fc1.w",
        "time_embed.fc1.b",
    )?;

    let do_h = linear_bwd_into(
        &cache.o_h,
        &dcond,
        params,
        grads,
        "onset_embed.fc2.w",
        "onset_embed.fc2.b",
    )?;
    let do_pre1 = silu_bwd(&cache.o_pre1, &do_h);
    let _ = linear_bwd_into(
        &cache.o_in,
        &do_pre1,
        params,
        grads,
        "onset_embed.fc1.w",
        "onset_embed.fc1.b",
    )?;

    // embeddings (position tables are fixed, gradients pass straight through)
    let _ = linear_bwd_into(
        &cache.c_v,
        &d_visual,
        params,
        grads,
        "visual_embed.w",
        "visual_embed.b",
    )?;
    let _ = linear_bwd_into(
        &cache.raw_patches,
        &d_audio,
        params,
        grads,
        "patch_embed.w",
        "patch_embed.b",
    )?;

    Ok(())
}
