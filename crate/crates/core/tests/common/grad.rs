use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slm_core::model::{backward, forward, forward_cached, init_params, ForwardOptions, Parameters};
use slm_core::train::loss_and_grad;

pub fn random_tokens(rng: &mut impl Rng, n: usize, vocab: usize) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(0..vocab as u32)).collect()
}

fn perturb(params: &mut Parameters<f64>, t: usize, i: usize, delta: f64) {
    params.tensors_mut()[t].data_mut()[i] += delta;
}

fn loss(
    params: &Parameters<f64>,
    tokens: &[u32],
    targets: &[u32],
    mask: &[bool],
    opts: &ForwardOptions,
) -> f64 {
    let out = forward(params, tokens, opts).unwrap();
    loss_and_grad(&out.logits, targets, mask, None).unwrap().0
}

/// Worst `|g - fd| / (max(|g|, |fd|) + 1e-7)` over every parameter of the
/// tiny model, with central differences at `h = 1e-5`.
pub fn worst_grad_error(opts: ForwardOptions, dropout: f64) -> f64 {
    let mut cfg = super::tiny_config();
    cfg.dropout_p = dropout;
    let mut params = init_params::<f64>(&cfg, 4).unwrap();
    // move norms off 1 so their gradients are exercised
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let tokens = random_tokens(&mut rng, 6, cfg.vocab_size);
    let targets = random_tokens(&mut rng, 6, cfg.vocab_size);
    let mask = [true, true, false, true, true, true];

    let (out, cache) = forward_cached(&params, &tokens, &opts).unwrap();
    let (_, _, dl) = loss_and_grad(&out.logits, &targets, &mask, Some(1.0)).unwrap();
    let mut grads = params.zeros_like();
    backward(&params, &cache, &dl.unwrap(), &mut grads);

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for t in 0..params.tensors().len() {
        for i in 0..params.tensors()[t].len() {
            perturb(&mut params, t, i, h);
            let up = loss(&params, &tokens, &targets, &mask, &opts);
            perturb(&mut params, t, i, -2.0 * h);
            let down = loss(&params, &tokens, &targets, &mask, &opts);
            perturb(&mut params, t, i, h);
            let fd = (up - down) / (2.0 * h);
            let g = grads.tensors()[t].data()[i];
            worst = worst.max((g - fd).abs() / (g.abs().max(fd.abs()) + 1e-7));
        }
    }
    worst
}
