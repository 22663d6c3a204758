use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{rmsnorm_backward, rmsnorm_into, silu, silu_grad, softmax_in_place, RopeTable};
use super::{
    matmul, matmul_a_bt, matmul_at_b, LayerParams, ModelConfig, Parameters, Scalar, Tensor,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardOptions {
    /// Enables dropout and NEFTune noise.
    pub training: bool,
    /// Seeds dropout masks (stream 0) and embedding noise (stream 1).
    pub seed: u64,
    /// NEFTune strength; 0 disables the noise.
    pub neftune_alpha: f64,
    /// Sequence length used to scale the noise; defaults to the input length.
    pub neftune_len: Option<usize>,
    pub keep_hidden: bool,
    pub keep_attention: bool,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self::default()
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    /// `[seq × vocab]`.
    pub logits: Tensor<T>,
    /// Output of the final RMSNorm, `[seq × d_model]`.
    pub final_hidden: Tensor<T>,
    /// Residual stream entering each layer plus the stream after the last
    /// layer, when requested.
    pub hidden_states: Option<Vec<Tensor<T>>>,
    /// Attention probabilities `[heads × seq × seq]` per layer, before
    /// dropout, when requested.
    pub attention: Option<Vec<Tensor<T>>>,
}

struct LayerCache<T> {
    x_in: Vec<T>,
    inv1: Vec<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    attn_mask: Option<Vec<T>>,
    o: Vec<T>,
    drop1: Option<Vec<T>>,
    x_mid: Vec<T>,
    inv2: Vec<T>,
    b: Vec<T>,
    u: Vec<T>,
    s: Vec<T>,
    drop2: Option<Vec<T>>,
}

/// Activations kept for the backward pass.
pub struct Cache<T> {
    tokens: Vec<u32>,
    layers: Vec<LayerCache<T>>,
    x_final: Vec<T>,
    inv_final: Vec<T>,
    f: Vec<T>,
    rope: RopeTable<T>,
}

fn dropout_mask<T: Scalar>(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: Option<&Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v = *v * k;
        }
    }
}

fn norm_rows<T: Scalar>(x: &[T], w: &[T], d: usize, eps: f64) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(rows);
    for r in 0..rows {
        inv.push(rmsnorm_into(
            &x[r * d..(r + 1) * d],
            w,
            eps,
            &mut y[r * d..(r + 1) * d],
        ));
    }
    (y, inv)
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Scaled dot-product attention over already-rotated `q` (`[L × d]`) and
/// `k`, `v` (`[L × kv_dim]`). Fills `probs` (`[H × L × L]`) and `o` (`[L × d]`).
#[allow(clippy::too_many_arguments)]
fn attend<T: Scalar>(
    cfg: &ModelConfig,
    len: usize,
    q: &[T],
    k: &[T],
    v: &[T],
    causal: bool,
    mask: Option<&Vec<T>>,
    probs: &mut [T],
    o: &mut [T],
) {
    let (d, hd, kvd) = (cfg.d_model, cfg.head_dim, cfg.kv_dim());
    let scale = T::lit(1.0 / (hd as f64).sqrt());
    for h in 0..cfg.n_heads {
        let g = cfg.kv_group_of(h);
        for i in 0..len {
            let visible = if causal { i + 1 } else { len };
            let base = h * len * len + i * len;
            let qi = &q[i * d + h * hd..i * d + (h + 1) * hd];
            let row = &mut probs[base..base + visible];
            for (j, p) in row.iter_mut().enumerate() {
                *p = dot(qi, &k[j * kvd + g * hd..j * kvd + (g + 1) * hd]) * scale;
            }
            softmax_in_place(row);
            let oi = &mut o[i * d + h * hd..i * d + (h + 1) * hd];
            for j in 0..visible {
                let mut p = probs[base + j];
                if let Some(m) = mask {
                    p = p * m[base + j];
                }
                if p == T::zero() {
                    continue;
                }
                for (dst, &vv) in oi
                    .iter_mut()
                    .zip(&v[j * kvd + g * hd..j * kvd + (g + 1) * hd])
                {
                    *dst = *dst + p * vv;
                }
            }
        }
    }
}

fn project_qkv<T: Scalar>(
    cfg: &ModelConfig,
    layer: &LayerParams<T>,
    a: &[T],
    len: usize,
    rope: &RopeTable<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (d, hd, kvd) = (cfg.d_model, cfg.head_dim, cfg.kv_dim());
    let mut q = matmul(a, layer.w_q.data(), len, d, d);
    let mut k = matmul(a, layer.w_k.data(), len, d, kvd);
    let v = matmul(a, layer.w_v.data(), len, d, kvd);
    for i in 0..len {
        for h in 0..cfg.n_heads {
            rope.rotate(&mut q[i * d + h * hd..i * d + (h + 1) * hd], i, false);
        }
        for g in 0..cfg.kv_groups {
            rope.rotate(&mut k[i * kvd + g * hd..i * kvd + (g + 1) * hd], i, false);
        }
    }
    (q, k, v)
}

/// Grouped-query self-attention of `hidden` (`[seq × d_model]`) through one
/// layer's projections, without normalization, dropout or residual.
pub fn attention_gqa<T: Scalar>(
    config: &ModelConfig,
    layer: &LayerParams<T>,
    hidden: &Tensor<T>,
    causal: bool,
) -> Result<Tensor<T>> {
    config.validate()?;
    let d = config.d_model;
    if hidden.cols() != d || !hidden.len().is_multiple_of(d) {
        return Err(Error::Shape(format!(
            "hidden {:?} does not have width {d}",
            hidden.shape()
        )));
    }
    let len = hidden.len() / d;
    if len > config.max_seq {
        return Err(Error::SequenceTooLong {
            len,
            max: config.max_seq,
        });
    }
    let rope = RopeTable::new(config.head_dim, len, config.rope_base)?;
    let (q, k, v) = project_qkv(config, layer, hidden.data(), len, &rope);
    let mut probs = vec![T::zero(); config.n_heads * len * len];
    let mut o = vec![T::zero(); len * d];
    attend(config, len, &q, &k, &v, causal, None, &mut probs, &mut o);
    Tensor::new(vec![len, d], matmul(&o, layer.w_o.data(), len, d, d))
}

fn check_tokens<T: Scalar>(params: &Parameters<T>, tokens: &[u32]) -> Result<()> {
    let cfg = &params.config;
    if tokens.is_empty() {
        return Err(Error::Shape("empty token sequence".into()));
    }
    if tokens.len() > cfg.max_seq {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: cfg.max_seq,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab: cfg.vocab_size,
        });
    }
    Ok(())
}

pub fn forward<T: Scalar>(
    params: &Parameters<T>,
    tokens: &[u32],
    opts: &ForwardOptions,
) -> Result<ForwardOutput<T>> {
    forward_cached(params, tokens, opts).map(|(out, _)| out)
}

/// Forward pass that also returns the activations needed by [`backward`].
pub fn forward_cached<T: Scalar>(
    params: &Parameters<T>,
    tokens: &[u32],
    opts: &ForwardOptions,
) -> Result<(ForwardOutput<T>, Cache<T>)> {
    check_tokens(params, tokens)?;
    let cfg = &params.config;
    let (len, d, ff, v) = (tokens.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let p = if opts.training { cfg.dropout_p } else { 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let rope = RopeTable::new(cfg.head_dim, len, cfg.rope_base)?;

    let scale = T::lit((d as f64).sqrt());
    let mut x: Vec<T> = tokens
        .iter()
        .flat_map(|&t| {
            params
                .token_embedding
                .row(t as usize)
                .iter()
                .map(move |&e| e * scale)
        })
        .collect();
    if opts.training && opts.neftune_alpha > 0.0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(opts.seed);
        noise_rng.set_stream(1);
        let l = opts.neftune_len.unwrap_or(len);
        crate::train::add_neftune_noise(&mut x, l, d, opts.neftune_alpha, &mut noise_rng);
    }

    let mut hidden = opts.keep_hidden.then(Vec::new);
    let mut attention = opts.keep_attention.then(Vec::new);
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for layer in &params.layers {
        if let Some(h) = hidden.as_mut() {
            h.push(Tensor::new(vec![len, d], x.clone())?);
        }
        let x_in = x.clone();
        let (a, inv1) = norm_rows(&x, layer.attn_norm.data(), d, cfg.norm_eps);
        let (q, k, vv) = project_qkv(cfg, layer, &a, len, &rope);
        let mut probs = vec![T::zero(); cfg.n_heads * len * len];
        let attn_mask = (p > 0.0).then(|| dropout_mask(probs.len(), p, &mut rng));
        let mut o = vec![T::zero(); len * d];
        attend(
            cfg,
            len,
            &q,
            &k,
            &vv,
            true,
            attn_mask.as_ref(),
            &mut probs,
            &mut o,
        );
        let mut attn_out = matmul(&o, layer.w_o.data(), len, d, d);
        let drop1 = (p > 0.0).then(|| dropout_mask(len * d, p, &mut rng));
        apply_mask(&mut attn_out, drop1.as_ref());
        for (xi, ai) in x.iter_mut().zip(&attn_out) {
            *xi = *xi + *ai;
        }

        let x_mid = x.clone();
        let (b, inv2) = norm_rows(&x, layer.mlp_norm.data(), d, cfg.norm_eps);
        let u = matmul(&b, layer.w_1.data(), len, d, ff);
        let s: Vec<T> = u.iter().map(|&t| silu(t)).collect();
        let mut m = matmul(&s, layer.w_2.data(), len, ff, d);
        let drop2 = (p > 0.0).then(|| dropout_mask(len * d, p, &mut rng));
        apply_mask(&mut m, drop2.as_ref());
        for (xi, mi) in x.iter_mut().zip(&m) {
            *xi = *xi + *mi;
        }

        if let Some(at) = attention.as_mut() {
            at.push(Tensor::new(vec![cfg.n_heads, len, len], probs.clone())?);
        }
        layers.push(LayerCache {
            x_in,
            inv1,
            a,
            q,
            k,
            v: vv,
            probs,
            attn_mask,
            o,
            drop1,
            x_mid,
            inv2,
            b,
            u,
            s,
            drop2,
        });
    }
    if let Some(h) = hidden.as_mut() {
        h.push(Tensor::new(vec![len, d], x.clone())?);
    }
    let (f, inv_final) = norm_rows(&x, params.final_norm.data(), d, cfg.norm_eps);
    let logits = matmul(&f, params.lm_head.data(), len, d, v);
    let out = ForwardOutput {
        logits: Tensor::new(vec![len, v], logits)?,
        final_hidden: Tensor::new(vec![len, d], f.clone())?,
        hidden_states: hidden,
        attention,
    };
    let cache = Cache {
        tokens: tokens.to_vec(),
        layers,
        x_final: x,
        inv_final,
        f,
        rope,
    };
    Ok((out, cache))
}

fn norm_rows_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    inv: &[T],
    dy: &[T],
    d: usize,
    dx: &mut [T],
    dw: &mut [T],
) {
    for (r, &iv) in inv.iter().enumerate() {
        let span = r * d..(r + 1) * d;
        rmsnorm_backward(
            &x[span.clone()],
            w,
            iv,
            &dy[span.clone()],
            &mut dx[span],
            dw,
        );
    }
}

/// Accumulates the gradient of a scalar loss into `grads`, given the loss
/// gradient with respect to the logits (`[seq × vocab]`).
pub fn backward<T: Scalar>(
    params: &Parameters<T>,
    cache: &Cache<T>,
    dlogits: &[T],
    grads: &mut Parameters<T>,
) {
    let cfg = &params.config;
    let len = cache.tokens.len();
    let (d, ff, v, hd, kvd) = (
        cfg.d_model,
        cfg.d_ff,
        cfg.vocab_size,
        cfg.head_dim,
        cfg.kv_dim(),
    );
    debug_assert_eq!(dlogits.len(), len * v);

    matmul_at_b(&cache.f, dlogits, len, d, v, grads.lm_head.data_mut());
    let df = matmul_a_bt(dlogits, params.lm_head.data(), len, v, d);
    let mut dx = vec![T::zero(); len * d];
    norm_rows_backward(
        &cache.x_final,
        params.final_norm.data(),
        &cache.inv_final,
        &df,
        d,
        &mut dx,
        grads.final_norm.data_mut(),
    );

    let scale = T::lit(1.0 / (hd as f64).sqrt());
    for (li, (layer, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let g = &mut grads.layers[li];

        let mut dm = dx.clone();
        apply_mask(&mut dm, lc.drop2.as_ref());
        matmul_at_b(&lc.s, &dm, len, ff, d, g.w_2.data_mut());
        let ds = matmul_a_bt(&dm, layer.w_2.data(), len, d, ff);
        let du: Vec<T> = ds
            .iter()
            .zip(&lc.u)
            .map(|(&a, &u)| a * silu_grad(u))
            .collect();
        matmul_at_b(&lc.b, &du, len, d, ff, g.w_1.data_mut());
        let db = matmul_a_bt(&du, layer.w_1.data(), len, ff, d);
        norm_rows_backward(
            &lc.x_mid,
            layer.mlp_norm.data(),
            &lc.inv2,
            &db,
            d,
            &mut dx,
            g.mlp_norm.data_mut(),
        );

        let mut dao = dx.clone();
        apply_mask(&mut dao, lc.drop1.as_ref());
        matmul_at_b(&lc.o, &dao, len, d, d, g.w_o.data_mut());
        let d_o = matmul_a_bt(&dao, layer.w_o.data(), len, d, d);

        let mut dq = vec![T::zero(); len * d];
        let mut dk = vec![T::zero(); len * kvd];
        let mut dv = vec![T::zero(); len * kvd];
        let mut dp = vec![T::zero(); len];
        for h in 0..cfg.n_heads {
            let gr = cfg.kv_group_of(h);
            for i in 0..len {
                let base = h * len * len + i * len;
                let doi = &d_o[i * d + h * hd..i * d + (h + 1) * hd];
                let mut sum = T::zero();
                for j in 0..=i {
                    let vj = j * kvd + gr * hd..j * kvd + (gr + 1) * hd;
                    let m = lc.attn_mask.as_ref().map_or(T::one(), |mk| mk[base + j]);
                    let pj = lc.probs[base + j];
                    let pd = pj * m;
                    if pd != T::zero() {
                        for (dst, &x) in dv[vj.clone()].iter_mut().zip(doi) {
                            *dst = *dst + pd * x;
                        }
                    }
                    dp[j] = dot(doi, &lc.v[vj]) * m;
                    sum = sum + dp[j] * pj;
                }
                let qi = i * d + h * hd..i * d + (h + 1) * hd;
                for j in 0..=i {
                    let dsj = lc.probs[base + j] * (dp[j] - sum) * scale;
                    if dsj == T::zero() {
                        continue;
                    }
                    let kj = j * kvd + gr * hd..j * kvd + (gr + 1) * hd;
                    for t in 0..hd {
                        dq[qi.start + t] = dq[qi.start + t] + dsj * lc.k[kj.start + t];
                        dk[kj.start + t] = dk[kj.start + t] + dsj * lc.q[qi.start + t];
                    }
                }
            }
        }
        for i in 0..len {
            for h in 0..cfg.n_heads {
                cache
                    .rope
                    .rotate(&mut dq[i * d + h * hd..i * d + (h + 1) * hd], i, true);
            }
            for gr in 0..cfg.kv_groups {
                cache
                    .rope
                    .rotate(&mut dk[i * kvd + gr * hd..i * kvd + (gr + 1) * hd], i, true);
            }
        }
        matmul_at_b(&lc.a, &dq, len, d, d, g.w_q.data_mut());
        matmul_at_b(&lc.a, &dk, len, d, kvd, g.w_k.data_mut());
        matmul_at_b(&lc.a, &dv, len, d, kvd, g.w_v.data_mut());
        let mut da = matmul_a_bt(&dq, layer.w_q.data(), len, d, d);
        for (acc, x) in da
            .iter_mut()
            .zip(matmul_a_bt(&dk, layer.w_k.data(), len, kvd, d))
        {
            *acc = *acc + x;
        }
        for (acc, x) in da
            .iter_mut()
            .zip(matmul_a_bt(&dv, layer.w_v.data(), len, kvd, d))
        {
            *acc = *acc + x;
        }
        norm_rows_backward(
            &lc.x_in,
            layer.attn_norm.data(),
            &lc.inv1,
            &da,
            d,
            &mut dx,
            g.attn_norm.data_mut(),
        );
    }

    let emb_scale = T::lit((d as f64).sqrt());
    for (i, &t) in cache.tokens.iter().enumerate() {
        let row = grads.token_embedding.row_mut(t as usize);
        for (dst, &x) in row.iter_mut().zip(&dx[i * d..(i + 1) * d]) {
            *dst = *dst + x * emb_scale;
        }
    }
}
