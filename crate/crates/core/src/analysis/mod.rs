//! Embedding analogies and exports of embeddings and attention maps for
//! external plotting.

mod matrix;

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use matrix::{
    read_labels, read_matrix, write_labels, write_matrix, MATRIX_MAGIC, MATRIX_VERSION,
};

use crate::error::{Error, Result};
use crate::io::write_json_pretty;
use crate::model::{forward, ForwardOptions, Parameters, Scalar, Tensor};
use crate::tokenizer::{Entry, Vocabulary, EOS_ID};

/// Embedding rows as stored, without the forward-pass √d scale.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub labels: Vec<String>,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(labels: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} labels x {dim} columns but {} values",
                labels.len(),
                data.len()
            )));
        }
        Ok(Self { labels, dim, data })
    }

    pub fn from_params<T: Scalar>(params: &Parameters<T>, vocab: &Vocabulary) -> Result<Self> {
        let rows = params.token_embedding.shape()[0];
        if rows != vocab.size() {
            return Err(Error::DimensionMismatch {
                expected: vocab.size(),
                found: rows,
            });
        }
        let labels = vocab.entries().iter().map(entry_label).collect();
        let data = params
            .token_embedding
            .data()
            .iter()
            .map(|v| v.as_f64())
            .collect();
        Self::new(labels, params.config.d_model, data)
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == token)
    }

    /// Up to `n` labels closest to `token` by edit distance, ties by id.
    pub fn nearest_labels(&self, token: &str, n: usize) -> Vec<String> {
        let mut scored: Vec<(usize, usize)> = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (strsim::levenshtein(token, l), i))
            .collect();
        scored.sort();
        scored
            .into_iter()
            .take(n)
            .map(|(_, i)| self.labels[i].clone())
            .collect()
    }
}

fn entry_label(e: &Entry) -> String {
    match e {
        Entry::Special(s) => s.clone(),
        Entry::Piece { surface, .. } => surface.clone(),
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u32,
    pub token: String,
    pub cosine: f64,
}

/// Top `k` tokens by cosine to `v(a) - v(b) + v(c)`, excluding `a`, `b` and
/// `c` themselves. Equal cosines rank by id.
pub fn analogy(
    table: &EmbeddingTable,
    a: &str,
    b: &str,
    c: &str,
    k: usize,
) -> Result<Vec<Neighbor>> {
    analogy_with(table, a, b, c, k, true)
}

/// [`analogy`] with the exclusion of the query tokens made optional.
pub fn analogy_with(
    table: &EmbeddingTable,
    a: &str,
    b: &str,
    c: &str,
    k: usize,
    exclude_query: bool,
) -> Result<Vec<Neighbor>> {
    let lookup = |t: &str| {
        table.id_of(t).ok_or_else(|| Error::UnknownToken {
            token: t.to_string(),
            nearest: table.nearest_labels(t, 5),
        })
    };
    let (ia, ib, ic) = (lookup(a)?, lookup(b)?, lookup(c)?);
    let query: Vec<f64> = (0..table.dim)
        .map(|j| table.row(ia)[j] - table.row(ib)[j] + table.row(ic)[j])
        .collect();
    let mut scored: Vec<(f64, usize)> = (0..table.labels.len())
        .filter(|&i| !exclude_query || (i != ia && i != ib && i != ic))
        .map(|i| (cosine(&query, table.row(i)), i))
        .collect();
    scored.sort_by(|x, y| {
        y.0.partial_cmp(&x.0)
            .unwrap_or(Ordering::Equal)
            .then(x.1.cmp(&y.1))
    });
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(cosine, i)| Neighbor {
            id: i as u32,
            token: table.labels[i].clone(),
            cosine,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenFilter {
    All,
    SpecialsOnly,
    PiecesOnly,
    Ids(Vec<u32>),
}

impl TokenFilter {
    pub fn select(&self, vocab: &Vocabulary) -> Result<Vec<u32>> {
        let n = vocab.size() as u32;
        Ok(match self {
            TokenFilter::All => (0..n).collect(),
            TokenFilter::SpecialsOnly => vocab.special_ids(),
            TokenFilter::PiecesOnly => (0..n).filter(|&i| !vocab.is_special(i)).collect(),
            TokenFilter::Ids(ids) => {
                if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
                    return Err(Error::TokenOutOfRange {
                        id: bad,
                        vocab: vocab.size(),
                    });
                }
                ids.clone()
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingExport<T> {
    pub ids: Vec<u32>,
    pub labels: Vec<String>,
    pub cols: usize,
    pub data: Vec<T>,
}

pub fn export_embeddings<T: Scalar>(
    params: &Parameters<T>,
    vocab: &Vocabulary,
    filter: &TokenFilter,
) -> Result<EmbeddingExport<T>> {
    let rows = params.token_embedding.shape()[0];
    if rows != vocab.size() {
        return Err(Error::DimensionMismatch {
            expected: vocab.size(),
            found: rows,
        });
    }
    let ids = filter.select(vocab)?;
    if ids.is_empty() {
        return Err(Error::EmptySelection);
    }
    let cols = params.config.d_model;
    let mut data = Vec::with_capacity(ids.len() * cols);
    for &id in &ids {
        data.extend_from_slice(params.token_embedding.row(id as usize));
    }
    let labels = ids
        .iter()
        .map(|&id| entry_label(vocab.entry(id).unwrap()))
        .collect();
    Ok(EmbeddingExport {
        ids,
        labels,
        cols,
        data,
    })
}

/// Writes `<stem>.mat` and `<stem>.labels`.
pub fn write_embedding_export<T: Scalar>(
    dir: &Path,
    stem: &str,
    export: &EmbeddingExport<T>,
) -> Result<()> {
    write_matrix(
        &dir.join(format!("{stem}.mat")),
        export.ids.len(),
        export.cols,
        &export.data,
    )?;
    write_labels(
        &dir.join(format!("{stem}.labels")),
        &export.ids,
        &export.labels,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMeta {
    pub tokens: Vec<u32>,
    pub eos_positions: Vec<usize>,
    pub n_layers: usize,
    pub n_heads: usize,
    pub seq_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionExport<T> {
    pub meta: AttentionMeta,
    /// Per layer, `[heads × seq × seq]` softmax probabilities.
    pub layers: Vec<Tensor<T>>,
}

/// Attention probabilities of every layer for one block, dropout off.
pub fn export_attention<T: Scalar>(
    params: &Parameters<T>,
    tokens: &[u32],
) -> Result<AttentionExport<T>> {
    let opts = ForwardOptions {
        keep_attention: true,
        ..ForwardOptions::eval()
    };
    let out = forward(params, tokens, &opts)?;
    let layers = out.attention.unwrap_or_default();
    let meta = AttentionMeta {
        tokens: tokens.to_vec(),
        eos_positions: tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == EOS_ID)
            .map(|(i, _)| i)
            .collect(),
        n_layers: layers.len(),
        n_heads: params.config.n_heads,
        seq_len: tokens.len(),
    };
    Ok(AttentionExport { meta, layers })
}

/// Writes `attention.json` and one `layer-{i:02}.mat` of `heads·seq` rows
/// by `seq` columns per layer.
pub fn write_attention_export<T: Scalar>(dir: &Path, export: &AttentionExport<T>) -> Result<()> {
    write_json_pretty(&dir.join("attention.json"), &export.meta)?;
    let l = export.meta.seq_len;
    for (i, layer) in export.layers.iter().enumerate() {
        write_matrix(
            &dir.join(format!("layer-{i:02}.mat")),
            export.meta.n_heads * l,
            l,
            layer.data(),
        )?;
    }
    Ok(())
}
