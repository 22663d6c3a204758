use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{count_params, ModelConfig, Scalar, Tensor};
use crate::error::{Error, Result};

/// How a tensor was initialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Init {
    Small { std: f64 },
    Scaled { std: f64 },
    Xavier { std: f64 },
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub attn_norm: Tensor<T>,
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_o: Tensor<T>,
    pub mlp_norm: Tensor<T>,
    pub w_1: Tensor<T>,
    pub w_2: Tensor<T>,
}

const LAYER_TENSORS: [&str; 8] = [
    "attn_norm",
    "w_q",
    "w_k",
    "w_v",
    "w_o",
    "mlp_norm",
    "w_1",
    "w_2",
];

impl<T: Scalar> LayerParams<T> {
    fn tensors(&self) -> [&Tensor<T>; 8] {
        [
            &self.attn_norm,
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.mlp_norm,
            &self.w_1,
            &self.w_2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 8] {
        [
            &mut self.attn_norm,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.mlp_norm,
            &mut self.w_1,
            &mut self.w_2,
        ]
    }
}

/// Every trainable tensor of the decoder. Matrices are stored so that a
/// projection is `y = x · W` with `x` a row vector; `lm_head` is
/// `[d_model × vocab]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    pub config: ModelConfig,
    pub token_embedding: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: Tensor<T>,
    pub lm_head: Tensor<T>,
    pub provenance: BTreeMap<String, Init>,
}

/// Shapes of all tensors in canonical order.
pub(crate) fn tensor_shapes(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, kv, ff, v) = (c.d_model, c.kv_dim(), c.d_ff, c.vocab_size);
    let mut out = vec![("token_embedding".to_string(), vec![v, d])];
    for i in 0..c.n_layers {
        let shapes = [
            vec![d],
            vec![d, d],
            vec![d, kv],
            vec![d, kv],
            vec![d, d],
            vec![d],
            vec![d, ff],
            vec![ff, d],
        ];
        for (name, shape) in LAYER_TENSORS.iter().zip(shapes) {
            out.push((format!("layers.{i}.{name}"), shape));
        }
    }
    out.push(("final_norm".to_string(), vec![d]));
    out.push(("lm_head".to_string(), vec![d, v]));
    out
}

fn init_of(c: &ModelConfig, name: &str) -> Init {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    match leaf {
        "attn_norm" | "mlp_norm" | "final_norm" => Init::Ones,
        "w_o" | "w_2" => Init::Scaled {
            std: c.scaled_init_std(),
        },
        "lm_head" => Init::Xavier {
            std: c.xavier_std(),
        },
        _ => Init::Small {
            std: c.small_init_std(),
        },
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample<T: Scalar>(init: Init, n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let std = match init {
        Init::Ones => return vec![T::one(); n],
        Init::Small { std } | Init::Scaled { std } | Init::Xavier { std } => std,
    };
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| T::lit(normal.sample(rng))).collect()
}

/// Initializes all tensors. Each tensor draws from its own ChaCha8 stream,
/// so values depend only on the seed and the tensor's position.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Parameters<T>> {
    config.validate()?;
    let mut tensors = Vec::new();
    let mut provenance = BTreeMap::new();
    for (stream, (name, shape)) in tensor_shapes(config).into_iter().enumerate() {
        let init = init_of(config, &name);
        let n = shape.iter().product();
        let data = sample(init, n, &mut rng_for(seed, stream as u64));
        tensors.push(Tensor::new(shape, data)?);
        provenance.insert(name, init);
    }
    Parameters::from_tensors(config.clone(), tensors, provenance)
}

impl<T: Scalar> Parameters<T> {
    /// Assembles parameters from tensors in canonical order.
    pub fn from_tensors(
        config: ModelConfig,
        tensors: Vec<Tensor<T>>,
        provenance: BTreeMap<String, Init>,
    ) -> Result<Self> {
        let shapes = tensor_shapes(&config);
        if tensors.len() != shapes.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");
        let token_embedding = next();
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                attn_norm: next(),
                w_q: next(),
                w_k: next(),
                w_v: next(),
                w_o: next(),
                mlp_norm: next(),
                w_1: next(),
                w_2: next(),
            })
            .collect();
        let final_norm = next();
        let lm_head = next();
        Ok(Self {
            config,
            token_embedding,
            layers,
            final_norm,
            lm_head,
            provenance,
        })
    }

    pub fn names(&self) -> Vec<String> {
        tensor_shapes(&self.config)
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.token_embedding];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.push(&self.final_norm);
        out.push(&self.lm_head);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.token_embedding];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.push(&mut self.final_norm);
        out.push(&mut self.lm_head);
        out
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        self.names().into_iter().zip(self.tensors()).collect()
    }

    /// Same shapes, all zeros, no provenance.
    pub fn zeros_like(&self) -> Self {
        let tensors = self
            .tensors()
            .into_iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self::from_tensors(self.config.clone(), tensors, BTreeMap::new()).expect("same shapes")
    }

    pub fn num_scalars(&self) -> u64 {
        let n: usize = self.tensors().iter().map(|t| t.len()).sum();
        debug_assert_eq!(n as u64, count_params(&self.config));
        n as u64
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        let tensors = self.tensors().into_iter().map(|t| t.cast()).collect();
        Parameters::from_tensors(self.config.clone(), tensors, self.provenance.clone())
            .expect("same shapes")
    }

    /// Grows the vocabulary to `new_vocab`. Existing embedding rows and head
    /// columns are kept bit-exactly; new embedding rows get the small init
    /// and new head columns the Xavier init of the grown head.
    pub fn extend_vocab(&self, new_vocab: usize, seed: u64) -> Result<Self> {
        let old = self.config.vocab_size;
        if new_vocab < old {
            return Err(Error::Shape(format!(
                "cannot shrink vocabulary from {old} to {new_vocab}"
            )));
        }
        let mut config = self.config.clone();
        config.vocab_size = new_vocab;
        let d = config.d_model;
        let added = new_vocab - old;
        let n_tensors = tensor_shapes(&config).len() as u64;

        let emb_init = init_of(&config, "token_embedding");
        let mut emb = self.token_embedding.data().to_vec();
        emb.extend(sample::<T>(
            emb_init,
            added * d,
            &mut rng_for(seed, n_tensors),
        ));

        let head_init = init_of(&config, "lm_head");
        let fresh: Vec<T> = sample(head_init, added * d, &mut rng_for(seed, n_tensors + 1));
        let mut head = Vec::with_capacity(d * new_vocab);
        for r in 0..d {
            head.extend_from_slice(self.lm_head.row(r));
            head.extend_from_slice(&fresh[r * added..(r + 1) * added]);
        }

        let mut tensors: Vec<Tensor<T>> = self.tensors().into_iter().cloned().collect();
        let last = tensors.len() - 1;
        tensors[0] = Tensor::new(vec![new_vocab, d], emb)?;
        tensors[last] = Tensor::new(vec![d, new_vocab], head)?;
        let mut provenance = self.provenance.clone();
        provenance.insert("lm_head".into(), head_init);
        Self::from_tensors(config, tensors, provenance)
    }
}

/// Whether weight decay is skipped for the tensor called `name`.
pub fn is_norm_weight(name: &str) -> bool {
    name.ends_with("norm")
}
