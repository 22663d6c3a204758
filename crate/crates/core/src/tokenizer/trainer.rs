//! Unigram EM training with likelihood-based vocabulary pruning.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::lattice::Lattice;
use super::vocab::{Vocabulary, RESERVED_IDS};
use crate::corpus::META_SPACE;
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerParams {
    /// Final vocabulary size, counting the three base specials and the
    /// unknown piece.
    pub target_vocab: usize,
    pub shrink_factor: f64,
    pub max_piece_len: usize,
    pub sub_iterations: usize,
    /// Seed vocabulary is capped at this multiple of the piece budget.
    pub seed_vocab_multiplier: f64,
    /// Multi-character substrings below this corpus frequency are not seeded.
    pub min_substring_freq: u64,
}

impl Default for TrainerParams {
    fn default() -> Self {
        Self {
            target_vocab: 32768,
            shrink_factor: 0.75,
            max_piece_len: 16,
            sub_iterations: 8,
            seed_vocab_multiplier: 10.0,
            min_substring_freq: 2,
        }
    }
}

impl TrainerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(Error::Config(
                "tokenizer.shrink_factor must lie in (0, 1)".into(),
            ));
        }
        if self.max_piece_len < 1 {
            return Err(Error::Config("tokenizer.max_piece_len must be >= 1".into()));
        }
        if self.sub_iterations < 1 {
            return Err(Error::Config(
                "tokenizer.sub_iterations must be >= 1".into(),
            ));
        }
        if self.seed_vocab_multiplier < 1.0 {
            return Err(Error::Config(
                "tokenizer.seed_vocab_multiplier must be >= 1".into(),
            ));
        }
        Ok(())
    }

    fn piece_budget(&self) -> usize {
        self.target_vocab.saturating_sub(RESERVED_IDS)
    }
}

/// Training-time unigram model: pieces with log-probabilities, some of which
/// may be `-inf` after an EM round assigns them no mass.
#[derive(Clone, Debug, PartialEq)]
pub struct UnigramModel {
    pieces: Vec<(String, f64)>,
    index: HashMap<String, usize>,
    max_len: usize,
}

impl UnigramModel {
    pub fn new(pieces: Vec<(String, f64)>) -> Self {
        let index = pieces
            .iter()
            .enumerate()
            .map(|(i, (s, _))| (s.clone(), i))
            .collect();
        let max_len = pieces
            .iter()
            .map(|(s, _)| s.chars().count())
            .max()
            .unwrap_or(1);
        Self {
            pieces,
            index,
            max_len,
        }
    }

    pub fn pieces(&self) -> &[(String, f64)] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn log_prob(&self, piece: &str) -> Option<f64> {
        self.index.get(piece).map(|&i| self.pieces[i].1)
    }

    fn lattice<'a>(&self, word: &'a str) -> Lattice<'a> {
        Lattice::new(
            word,
            self.max_len,
            |s| self.index.get(s).map(|&i| (i, self.pieces[i].1)),
            None,
        )
    }

    /// Best segmentation of `word` as piece strings.
    pub fn segment(&self, word: &str) -> Option<Vec<String>> {
        let lat = self.lattice(word);
        let (path, _) = lat.viterbi()?;
        Some(
            path.iter()
                .map(|(s, e)| lat.surface(*s, e.end).to_string())
                .collect(),
        )
    }
}

fn is_single_char(s: &str) -> bool {
    let mut it = s.chars();
    it.next().is_some() && it.next().is_none()
}

fn normalize(pieces: &mut [(String, f64)]) {
    let m = pieces.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let lse = m + pieces.iter().map(|p| (p.1 - m).exp()).sum::<f64>().ln();
    for p in pieces.iter_mut() {
        p.1 -= lse;
    }
}

/// Seed pieces: every character plus the most frequent substrings up to
/// `max_piece_len` characters, scored by raw frequency. A meta-space may
/// only open a piece.
pub fn seed_pieces(words: &[(String, u64)], params: &TrainerParams) -> Vec<(String, f64)> {
    let mut chars: BTreeMap<char, u64> = BTreeMap::new();
    let mut subs: HashMap<&str, u64> = HashMap::new();
    for (word, count) in words {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let cs: Vec<char> = word.chars().collect();
        let n = cs.len();
        for (i, &c) in cs.iter().enumerate() {
            *chars.entry(c).or_default() += count;
            for end in i + 2..=n.min(i + params.max_piece_len) {
                if cs[end - 1] == META_SPACE {
                    break;
                }
                let sub = &word[bounds[i]..bounds[end]];
                *subs.entry(sub).or_default() += count;
            }
        }
    }
    let budget = (params.seed_vocab_multiplier * params.piece_budget() as f64).ceil() as usize;
    let mut candidates: Vec<(&str, u64)> = subs
        .into_iter()
        .filter(|(_, f)| *f >= params.min_substring_freq)
        .collect();
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    candidates.truncate(budget.saturating_sub(chars.len()));

    let mut pieces: Vec<(String, f64)> = chars
        .into_iter()
        .map(|(c, f)| (c.to_string(), f as f64))
        .collect();
    pieces.extend(
        candidates
            .into_iter()
            .map(|(s, f)| (s.to_string(), f as f64)),
    );
    let total: f64 = pieces.iter().map(|p| p.1).sum();
    for p in &mut pieces {
        p.1 = (p.1 / total).ln();
    }
    pieces
}

const E_STEP_CHUNKS: usize = 64;

/// Expected piece counts and the corpus log-likelihood under `model`.
/// Chunking depends only on the corpus size, so the reduction order is the
/// same for every execution mode and thread count.
pub fn e_step(model: &UnigramModel, words: &[(String, u64)], exec: Exec) -> (Vec<f64>, f64) {
    let chunk = words.len().div_ceil(E_STEP_CHUNKS).max(1);
    let partials = exec.map_chunks(words, chunk, |ws| {
        let mut expected = vec![0.0; model.len()];
        let mut loglik = 0.0;
        for (w, count) in ws {
            loglik += *count as f64
                * model
                    .lattice(w)
                    .accumulate_marginals(*count as f64, &mut expected);
        }
        (expected, loglik)
    });
    let mut expected = vec![0.0; model.len()];
    let mut loglik = 0.0;
    for (e, l) in partials {
        for (acc, x) in expected.iter_mut().zip(e) {
            *acc += x;
        }
        loglik += l;
    }
    (expected, loglik)
}

/// Maximum-likelihood re-estimation. Pieces with no expected mass get `-inf`.
pub fn m_step(model: &UnigramModel, expected: &[f64]) -> UnigramModel {
    let total: f64 = expected.iter().sum();
    let pieces = model
        .pieces
        .iter()
        .zip(expected)
        .map(|((s, _), &e)| {
            (
                s.clone(),
                if e > 0.0 {
                    (e / total).ln()
                } else {
                    f64::NEG_INFINITY
                },
            )
        })
        .collect();
    UnigramModel::new(pieces)
}

/// One EM round. Returns the updated model and the log-likelihood of the
/// corpus under the model passed in.
pub fn em_round(model: &UnigramModel, words: &[(String, u64)], exec: Exec) -> (UnigramModel, f64) {
    let (expected, loglik) = e_step(model, words, exec);
    (m_step(model, &expected), loglik)
}

pub fn corpus_log_likelihood(model: &UnigramModel, words: &[(String, u64)], exec: Exec) -> f64 {
    e_step(model, words, exec).1
}

/// Replaces `-inf` log-probabilities with a floor ten nats below the rarest
/// finite piece, drops unusable multi-character pieces, and renormalizes.
fn floor_and_normalize(pieces: Vec<(String, f64)>) -> Vec<(String, f64)> {
    let min = pieces
        .iter()
        .map(|p| p.1)
        .filter(|lp| lp.is_finite())
        .fold(0.0f64, f64::min);
    let mut out: Vec<(String, f64)> = pieces
        .into_iter()
        .filter_map(|(s, lp)| match (lp.is_finite(), is_single_char(&s)) {
            (true, _) => Some((s, lp)),
            (false, true) => Some((s, min - 10.0)),
            (false, false) => None,
        })
        .collect();
    normalize(&mut out);
    out
}

/// Keeps every single character plus the `new_size - #chars` multi-character
/// pieces whose removal would cost the most likelihood. The loss of piece
/// `i` is estimated from Viterbi frequencies: its mass is handed to its best
/// alternative segmentation and the change in log-probability is weighted
/// by how often words containing it occur. Ties break lexicographically.
pub fn prune(
    model: &UnigramModel,
    words: &[(String, u64)],
    new_size: usize,
    exec: Exec,
) -> UnigramModel {
    let floored = UnigramModel::new(floor_and_normalize(model.pieces.clone()));
    let n = floored.len();

    let segs = exec.map(words, |(w, _)| {
        let lat = floored.lattice(w);
        lat.viterbi()
            .map(|(p, _)| p.iter().map(|(_, e)| e.piece).collect::<Vec<_>>())
            .unwrap_or_default()
    });
    let mut freq = vec![0.0f64; n];
    let mut containing = vec![0.0f64; n];
    for ((_, count), seg) in words.iter().zip(&segs) {
        let c = *count as f64;
        for &p in seg {
            freq[p] += c;
        }
        let mut uniq = seg.clone();
        uniq.sort_unstable();
        uniq.dedup();
        for p in uniq {
            containing[p] += c;
        }
    }
    let sum: f64 = freq.iter().sum();
    let vsum: f64 = words.iter().map(|(_, c)| *c as f64).sum();

    let alternatives = exec.map_range(n, |i| {
        let s = &floored.pieces[i].0;
        if is_single_char(s) {
            return Vec::new();
        }
        let lat = Lattice::new(
            s,
            floored.max_len,
            |sub| {
                floored
                    .index
                    .get(sub)
                    .filter(|&&j| j != i)
                    .map(|&j| (j, floored.pieces[j].1))
            },
            None,
        );
        lat.viterbi()
            .map(|(p, _)| p.iter().map(|(_, e)| e.piece).collect())
            .unwrap_or_default()
    });

    let mut chars = Vec::new();
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for i in 0..n {
        if is_single_char(&floored.pieces[i].0) {
            chars.push(i);
            continue;
        }
        let f = freq[i];
        let alt = &alternatives[i];
        let loss = if f == 0.0 || alt.is_empty() {
            0.0
        } else {
            let logprob_sp = f.ln() - sum.ln();
            let logsum_alt = (sum + f * (alt.len() as f64 - 1.0)).ln();
            let logprob_alt: f64 =
                alt.iter().map(|&a| (freq[a] + f).ln()).sum::<f64>() - logsum_alt;
            (containing[i] / vsum) * (logprob_sp - logprob_alt)
        };
        scored.push((i, loss));
    }
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| floored.pieces[a.0].0.cmp(&floored.pieces[b.0].0))
    });
    scored.truncate(new_size.saturating_sub(chars.len()));
    let mut keep: Vec<usize> = chars
        .into_iter()
        .chain(scored.into_iter().map(|(i, _)| i))
        .collect();
    keep.sort_unstable();
    let mut pieces: Vec<(String, f64)> = keep
        .into_iter()
        .map(|i| floored.pieces[i].clone())
        .collect();
    normalize(&mut pieces);
    UnigramModel::new(pieces)
}

fn sorted_words(words: &BTreeMap<String, u64>) -> Vec<(String, u64)> {
    words
        .iter()
        .filter(|(w, c)| !w.is_empty() && **c > 0)
        .map(|(w, c)| (w.clone(), *c))
        .collect()
}

pub fn train_unigram(words: &BTreeMap<String, u64>, params: &TrainerParams) -> Result<Vocabulary> {
    train_unigram_with(words, params, Exec::default())
}

/// Trains a vocabulary from a word-frequency table. Rounds of
/// `sub_iterations` EM steps alternate with pruning to
/// `max(budget, shrink_factor * size)` until the piece count fits.
pub fn train_unigram_with(
    words: &BTreeMap<String, u64>,
    params: &TrainerParams,
    exec: Exec,
) -> Result<Vocabulary> {
    params.validate()?;
    let words = sorted_words(words);
    if words.is_empty() {
        return Err(Error::TrainingSet("tokenizer corpus is empty".into()));
    }
    let mut alphabet: Vec<char> = words.iter().flat_map(|(w, _)| w.chars()).collect();
    alphabet.sort_unstable();
    alphabet.dedup();
    let budget = params.piece_budget();
    if budget < alphabet.len() || budget == 0 {
        return Err(Error::VocabTooSmall {
            target: params.target_vocab,
            required: RESERVED_IDS + alphabet.len(),
        });
    }

    let mut model = UnigramModel::new(seed_pieces(&words, params));
    log::info!("seeded {} pieces from {} words", model.len(), words.len());
    loop {
        for _ in 0..params.sub_iterations {
            let (next, loglik) = em_round(&model, &words, exec);
            log::debug!("em: {} pieces, loglik {loglik:.4}", model.len());
            model = next;
        }
        if model.len() <= budget {
            break;
        }
        let shrunk = (model.len() as f64 * params.shrink_factor).floor() as usize;
        model = prune(&model, &words, shrunk.max(budget), exec);
        log::info!("pruned to {} pieces", model.len());
    }

    let mut pieces = floor_and_normalize(model.pieces);
    pieces.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_pieces(pieces)
}
