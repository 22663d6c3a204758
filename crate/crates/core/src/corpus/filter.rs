use serde::{Deserialize, Serialize};

use super::{CleanDocument, Cleaner, META_SPACE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Empty,
    BlockedTerm,
    IncompleteSentences,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Empty => "empty",
            RejectReason::BlockedTerm => "blocked_term",
            RejectReason::IncompleteSentences => "incomplete_sentences",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Reject(RejectReason),
}

/// NFKC folds ！？ to ASCII, so both forms count as terminal.
const TERMINALS: &[char] = &['。', '！', '？', '…', '!', '?'];
const CLOSERS: &[char] = &['」', '』', ')', ']', '"', '\''];

fn is_blank(c: char) -> bool {
    c == META_SPACE || c.is_whitespace()
}

fn line_is_complete(line: &str) -> bool {
    let body = line.trim_end_matches(is_blank).trim_end_matches(CLOSERS);
    body.ends_with(TERMINALS)
}

/// Fraction of non-blank lines lacking terminal punctuation.
pub(crate) fn incomplete_fraction(text: &str) -> f64 {
    let lines: Vec<&str> = text
        .split('\n')
        .filter(|l| !l.trim_matches(is_blank).is_empty())
        .collect();
    if lines.is_empty() {
        return 0.0;
    }
    let bad = lines.iter().filter(|l| !line_is_complete(l)).count();
    bad as f64 / lines.len() as f64
}

/// Checks, in order: empty text, blocked terms, incomplete sentences.
pub fn filter_document(doc: &CleanDocument, cleaner: &Cleaner) -> FilterDecision {
    if doc.text.trim_matches(is_blank).is_empty() {
        return FilterDecision::Reject(RejectReason::Empty);
    }
    if cleaner
        .blocked_terms()
        .iter()
        .any(|t| doc.text.contains(t.as_str()))
    {
        return FilterDecision::Reject(RejectReason::BlockedTerm);
    }
    if incomplete_fraction(&doc.text) > cleaner.config().incomplete_sentence_threshold {
        return FilterDecision::Reject(RejectReason::IncompleteSentences);
    }
    FilterDecision::Keep
}
