#![allow(dead_code)]

pub mod analysis;
pub mod clean;
pub mod forest;
pub mod grad;
pub mod metrics;
pub mod tok;
pub mod train;

use slm_core::model::{LayerParams, ModelConfig, Parameters};

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 16,
        d_ff: 64,
        head_dim: 4,
        n_heads: 4,
        kv_groups: 2,
        vocab_size: 32,
        max_seq: 16,
        dropout_p: 0.0,
        ..ModelConfig::default()
    }
}

fn row(m: &[f64], cols: usize, r: usize) -> &[f64] {
    &m[r * cols..(r + 1) * cols]
}

/// `x · W` for a row vector and a row-major `[rows × cols]` matrix.
pub fn vec_mat(x: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, &xi) in x.iter().enumerate() {
        for j in 0..cols {
            out[j] += xi * w[i * cols + j];
        }
    }
    out
}

pub fn rmsnorm(x: &[f64], w: &[f64], eps: f64) -> Vec<f64> {
    let mut ms = 0.0;
    for v in x {
        ms += v * v;
    }
    ms /= x.len() as f64;
    let r = (ms + eps).sqrt();
    x.iter().zip(w).map(|(v, g)| g * v / r).collect()
}

/// Rotation of interleaved pairs by `pos * base^(-2i/dim)`.
pub fn rope(v: &[f64], pos: usize, base: f64) -> Vec<f64> {
    let dim = v.len();
    let mut out = v.to_vec();
    for i in 0..dim / 2 {
        let angle = pos as f64 / base.powf(2.0 * i as f64 / dim as f64);
        let (s, c) = angle.sin_cos();
        out[2 * i] = v[2 * i] * c - v[2 * i + 1] * s;
        out[2 * i + 1] = v[2 * i] * s + v[2 * i + 1] * c;
    }
    out
}

pub fn silu(t: f64) -> f64 {
    t / (1.0 + (-t).exp())
}

/// Multi-head attention with one key/value head per query-head group,
/// computed position by position. Returns outputs (`len` rows of d_model)
/// and probabilities `[head][query][key]`.
pub fn attention(
    cfg: &ModelConfig,
    layer: &LayerParams<f64>,
    xs: &[Vec<f64>],
    causal: bool,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let (d, hd, kvd) = (cfg.d_model, cfg.head_dim, cfg.kv_groups * cfg.head_dim);
    let len = xs.len();
    let qs: Vec<Vec<f64>> = xs.iter().map(|x| vec_mat(x, layer.w_q.data(), d)).collect();
    let ks: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| vec_mat(x, layer.w_k.data(), kvd))
        .collect();
    let vs: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| vec_mat(x, layer.w_v.data(), kvd))
        .collect();
    let heads_per_group = cfg.n_heads / cfg.kv_groups;
    let mut concat = vec![vec![0.0; d]; len];
    let mut probs = vec![vec![vec![0.0; len]; len]; cfg.n_heads];
    for h in 0..cfg.n_heads {
        let g = h / heads_per_group;
        for i in 0..len {
            let q = rope(&qs[i][h * hd..(h + 1) * hd], i, cfg.rope_base);
            let last = if causal { i } else { len - 1 };
            let mut scores = Vec::new();
            for j in 0..=last {
                let k = rope(&ks[j][g * hd..(g + 1) * hd], j, cfg.rope_base);
                let s: f64 = q.iter().zip(&k).map(|(a, b)| a * b).sum();
                scores.push(s / (hd as f64).sqrt());
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for (j, s) in scores.iter().enumerate() {
                let p = (s - m).exp() / z;
                probs[h][i][j] = p;
                for t in 0..hd {
                    concat[i][h * hd + t] += p * vs[j][g * hd + t];
                }
            }
        }
    }
    let out = concat
        .iter()
        .map(|c| vec_mat(c, layer.w_o.data(), d))
        .collect();
    (out, probs)
}

/// Full forward pass without dropout; returns logits rows.
pub fn forward(params: &Parameters<f64>, tokens: &[u32]) -> Vec<Vec<f64>> {
    let cfg = &params.config;
    let d = cfg.d_model;
    let scale = (d as f64).sqrt();
    let mut xs: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| {
            row(params.token_embedding.data(), d, t as usize)
                .iter()
                .map(|e| e * scale)
                .collect()
        })
        .collect();
    for layer in &params.layers {
        let normed: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| rmsnorm(x, layer.attn_norm.data(), cfg.norm_eps))
            .collect();
        let (att, _) = attention(cfg, layer, &normed, true);
        for (x, a) in xs.iter_mut().zip(&att) {
            for (xi, ai) in x.iter_mut().zip(a) {
                *xi += ai;
            }
        }
        for x in xs.iter_mut() {
            let n = rmsnorm(x, layer.mlp_norm.data(), cfg.norm_eps);
            let u: Vec<f64> = vec_mat(&n, layer.w_1.data(), cfg.d_ff)
                .into_iter()
                .map(silu)
                .collect();
            let m = vec_mat(&u, layer.w_2.data(), d);
            for (xi, mi) in x.iter_mut().zip(&m) {
                *xi += mi;
            }
        }
    }
    xs.iter()
        .map(|x| {
            vec_mat(
                &rmsnorm(x, params.final_norm.data(), cfg.norm_eps),
                params.lm_head.data(),
                cfg.vocab_size,
            )
        })
        .collect()
}

pub fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
    row[t] - m - z.ln()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
