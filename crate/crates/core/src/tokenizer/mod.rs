//! Unigram subword tokenizer: training, Viterbi encoding and decoding.

mod lattice;
mod trainer;
mod vocab;

use std::collections::{BTreeMap, BTreeSet};

pub use trainer::{
    corpus_log_likelihood, e_step, em_round, m_step, prune, seed_pieces, train_unigram,
    train_unigram_with, TrainerParams, UnigramModel,
};
pub use vocab::{
    Entry, Vocabulary, ASSISTANT, BASE_SPECIALS, BEGIN_OF_TEXT, BOS_ID, CHAT_SPECIALS, END_OF_TEXT,
    EOS_ID, NEWLINE, NEWLINE_ID, RESERVED_IDS, SYSTEM, UNK, UNK_ID, USER,
};

use lattice::Lattice;

use crate::corpus::{CleanDocument, Cleaner, Source, META_SPACE};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::segment::Segmenter;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PreToken<'a> {
    Word(&'a str),
    Newline,
}

/// Splits cleaned text into words. A meta-space segment is glued onto the
/// word after it, so every word boundary that had white-space starts with
/// `▁`; newlines become separate tokens.
pub fn pretokenize<'a>(text: &'a str, segmenter: &dyn Segmenter) -> Vec<PreToken<'a>> {
    let mut out = Vec::new();
    let mut pending: Option<usize> = None;
    let mut offset = 0;
    for seg in segmenter.segment(text) {
        let start = offset;
        offset += seg.len();
        if seg.chars().all(|c| c == '\n') {
            if let Some(p) = pending.take() {
                out.push(PreToken::Word(&text[p..start]));
            }
            out.extend(seg.chars().map(|_| PreToken::Newline));
        } else if seg.chars().all(|c| c == META_SPACE) {
            if let Some(p) = pending.take() {
                out.push(PreToken::Word(&text[p..start]));
            }
            pending = Some(start);
        } else {
            let from = pending.take().unwrap_or(start);
            out.push(PreToken::Word(&text[from..offset]));
        }
    }
    if let Some(p) = pending {
        out.push(PreToken::Word(&text[p..]));
    }
    out
}

/// Word-frequency table for tokenizer training. When `sources` is given,
/// only documents from those sources are counted.
pub fn word_counts(
    docs: &[CleanDocument],
    segmenter: &dyn Segmenter,
    sources: Option<&BTreeSet<Source>>,
) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for doc in docs {
        if sources.is_some_and(|s| !s.contains(&doc.source)) {
            continue;
        }
        for tok in pretokenize(&doc.text, segmenter) {
            if let PreToken::Word(w) = tok {
                *counts.entry(w.to_string()).or_default() += 1;
            }
        }
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Drop bracketed special tokens instead of rendering them verbatim.
    /// `\n` is always rendered.
    pub strip_specials: bool,
    /// Render `▁` as an ASCII space. Off reproduces the cleaned text exactly.
    pub render_meta_space: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            strip_specials: false,
            render_meta_space: true,
        }
    }
}

/// Cleaning, segmentation and Viterbi encoding over a fixed vocabulary.
pub struct Tokenizer {
    cleaner: Cleaner,
    segmenter: Box<dyn Segmenter>,
    vocab: Vocabulary,
}

impl Tokenizer {
    pub fn new(cleaner: Cleaner, segmenter: Box<dyn Segmenter>, vocab: Vocabulary) -> Self {
        Self {
            cleaner,
            segmenter,
            vocab,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn cleaner(&self) -> &Cleaner {
        &self.cleaner
    }

    pub fn segmenter(&self) -> &dyn Segmenter {
        self.segmenter.as_ref()
    }

    pub fn with_vocab(self, vocab: Vocabulary) -> Self {
        Self { vocab, ..self }
    }

    /// Cleans `text` and encodes it.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_clean(&self.cleaner.clean(text))
    }

    /// Encodes text that is already clean.
    pub fn encode_clean(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for tok in pretokenize(text, self.segmenter.as_ref()) {
            match tok {
                PreToken::Newline => ids.push(NEWLINE_ID),
                PreToken::Word(w) => self.encode_word(w, &mut ids),
            }
        }
        ids
    }

    pub fn encode_batch(&self, texts: &[String], exec: Exec) -> Vec<Vec<u32>> {
        exec.map(texts, |t| self.encode(t))
    }

    fn encode_word(&self, word: &str, ids: &mut Vec<u32>) {
        let lat = Lattice::new(
            word,
            self.vocab.max_piece_chars(),
            |s| self.vocab.lookup(s),
            Some((UNK_ID as usize, self.vocab.unk_log_prob())),
        );
        let (path, _) = lat.viterbi().expect("unknown piece covers every character");
        ids.extend(path.iter().map(|(_, e)| e.piece as u32));
    }

    /// Piece surfaces for `ids`, for display.
    pub fn pieces_of(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.vocab
                    .surface(id)
                    .map(str::to_owned)
                    .ok_or(Error::TokenOutOfRange {
                        id,
                        vocab: self.vocab.size(),
                    })
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32], opts: DecodeOptions) -> Result<String> {
        decode(&self.vocab, ids, opts)
    }
}

pub fn decode(vocab: &Vocabulary, ids: &[u32], opts: DecodeOptions) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        let entry = vocab.entry(id).ok_or(Error::TokenOutOfRange {
            id,
            vocab: vocab.size(),
        })?;
        match entry {
            Entry::Special(s) if s == NEWLINE => out.push('\n'),
            Entry::Special(s) => {
                if !opts.strip_specials {
                    out.push_str(s);
                }
            }
            Entry::Piece { surface, .. } => out.push_str(surface),
        }
    }
    if opts.render_meta_space {
        out = out.replace(META_SPACE, " ");
    }
    Ok(out)
}
