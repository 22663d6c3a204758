use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{is_norm_weight, Parameters, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

/// First and second moments shaped like the parameters, and the number of
/// updates applied so far.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Parameters<T>,
    pub v: Parameters<T>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &Parameters<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// Moments as named tensors, for checkpointing.
    pub fn to_named(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![(
            "adam.step".to_string(),
            Tensor::filled(&[1], T::lit(self.step as f64)),
        )];
        for (name, t) in self.m.named() {
            out.push((format!("adam.m.{name}"), t.clone()));
        }
        for (name, t) in self.v.named() {
            out.push((format!("adam.v.{name}"), t.clone()));
        }
        out
    }

    pub fn from_named(params: &Parameters<T>, named: &[(String, Tensor<T>)]) -> Result<Self> {
        let n = params.names().len();
        if named.len() != 1 + 2 * n || named[0].0 != "adam.step" {
            return Err(Error::ResumeMismatch(
                "checkpoint lacks optimizer state".into(),
            ));
        }
        let take = |off: usize, prefix: &str| -> Result<Parameters<T>> {
            let mut ts = Vec::with_capacity(n);
            for (name, (stored, t)) in params.names().iter().zip(&named[off..off + n]) {
                if *stored != format!("{prefix}{name}") {
                    return Err(Error::ResumeMismatch(format!(
                        "optimizer tensor {stored} where {prefix}{name} expected"
                    )));
                }
                ts.push(t.clone());
            }
            Parameters::from_tensors(params.config.clone(), ts, Default::default())
        };
        Ok(Self {
            step: named[0].1.data()[0].as_f64() as u64,
            m: take(1, "adam.m.")?,
            v: take(1 + n, "adam.v.")?,
        })
    }
}

/// One decoupled-weight-decay Adam update with bias correction. Norm
/// weights are not decayed. Fails without touching anything when a
/// gradient is non-finite.
pub fn adamw_step<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &Parameters<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
    cfg: &AdamW,
) -> Result<()> {
    let names = params.names();
    for (name, g) in names.iter().zip(grads.tensors()) {
        if !g.is_finite() {
            return Err(Error::NonFiniteGrad(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one, lr_t, eps) = (T::one(), T::lit(lr), T::lit(cfg.eps));
    let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
    let iter = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
        .zip(&names);
    for ((((p, g), m), v), name) in iter {
        let decay = if is_norm_weight(name) {
            0.0
        } else {
            cfg.weight_decay
        };
        let shrink = T::lit(1.0 - lr * decay);
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w = *w * shrink - lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
