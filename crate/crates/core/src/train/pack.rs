use serde::{Deserialize, Serialize};

use super::Example;
use crate::tokenizer::{BOS_ID, EOS_ID};

/// What to do with the final partial block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Remainder {
    #[default]
    Pad,
    Truncate,
}

/// Fixed-length training blocks cut from framed, concatenated documents.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PackedBatch {
    pub block_len: usize,
    pub blocks: Vec<Vec<u32>>,
    /// False at padding positions.
    pub valid: Vec<Vec<bool>>,
    /// Positions of document-closing `<|end_of_text|>` tokens per block.
    pub boundaries: Vec<Vec<usize>>,
    /// Tokens dropped by truncation.
    pub truncated: usize,
}

impl PackedBatch {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Non-padding tokens across all blocks.
    pub fn content_tokens(&self) -> usize {
        self.valid.iter().flatten().filter(|&&v| v).count()
    }

    /// Next-token examples; padding never appears as a target.
    pub fn examples(&self) -> Vec<Example> {
        self.blocks
            .iter()
            .zip(&self.valid)
            .map(|(b, v)| Example::next_token(b.clone(), v))
            .collect()
    }
}

pub fn pack_tokens(documents: &[Vec<u32>], block: usize) -> PackedBatch {
    pack_tokens_with(documents, block, Remainder::Pad)
}

/// Frames each document as `<|begin_of_text|> doc <|end_of_text|>`,
/// concatenates in order and cuts `block`-token blocks.
pub fn pack_tokens_with(documents: &[Vec<u32>], block: usize, remainder: Remainder) -> PackedBatch {
    assert!(block > 0, "block length must be positive");
    let mut stream = Vec::with_capacity(documents.iter().map(|d| d.len() + 2).sum());
    let mut ends = Vec::new();
    for doc in documents {
        stream.push(BOS_ID);
        stream.extend_from_slice(doc);
        ends.push(stream.len());
        stream.push(EOS_ID);
    }
    let mut out = PackedBatch {
        block_len: block,
        ..PackedBatch::default()
    };
    let mut ends = ends.into_iter().peekable();
    for (bi, chunk) in stream.chunks(block).enumerate() {
        if chunk.len() < block && remainder == Remainder::Truncate {
            out.truncated = chunk.len();
            break;
        }
        let mut tokens = chunk.to_vec();
        let mut valid = vec![true; chunk.len()];
        tokens.resize(block, EOS_ID);
        valid.resize(block, false);
        let start = bi * block;
        let mut bounds = Vec::new();
        while let Some(&e) = ends.peek() {
            if e >= start + chunk.len() {
                break;
            }
            bounds.push(e - start);
            ends.next();
        }
        out.blocks.push(tokens);
        out.valid.push(valid);
        out.boundaries.push(bounds);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_doc_fills_one_block() {
        let p = pack_tokens(&[vec![7; 2046]], 2048);
        assert_eq!(p.len(), 1);
        assert_eq!(p.content_tokens(), 2048);
        assert_eq!(p.boundaries[0], [2047]);
    }

    #[test]
    fn two_docs_and_padding() {
        let p = pack_tokens(&[vec![7; 1000], vec![8; 1000]], 2048);
        assert_eq!(p.len(), 1);
        assert_eq!(p.content_tokens(), 2004);
        assert_eq!(p.blocks[0][2004..], [EOS_ID; 44]);
        assert_eq!(p.boundaries[0], [1001, 2003]);
    }

    #[test]
    fn empty_and_truncated() {
        assert!(pack_tokens(&[], 2048).is_empty());
        let p = pack_tokens_with(&[vec![5; 10]], 4, Remainder::Truncate);
        assert_eq!(p.len(), 3);
        assert_eq!(p.truncated, 0);
        let p = pack_tokens_with(&[vec![5; 11]], 4, Remainder::Truncate);
        assert_eq!(p.truncated, 1);
        assert_eq!(p.len() * 4 + p.truncated, 11 + 2);
    }
}
