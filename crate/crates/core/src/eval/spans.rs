use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Character offsets, end exclusive.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub surface: String,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self {
            start,
            end,
            surface: String::new(),
        }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Non-overlapping spans sorted by start.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanSet {
    spans: Vec<Span>,
}

impl SpanSet {
    /// Checks `start < end`, `end <= doc_len` when given, and that no two spans overlap.
    pub fn new(mut spans: Vec<Span>, doc_len: Option<usize>) -> Result<Self> {
        for s in &spans {
            if s.start >= s.end || doc_len.is_some_and(|n| s.end > n) {
                return Err(Error::InvalidSpan {
                    start: s.start,
                    end: s.end,
                    len: doc_len.unwrap_or(usize::MAX),
                });
            }
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[0].overlaps(&w[1]) {
                return Err(Error::OverlappingSpans(
                    (w[0].start, w[0].end),
                    (w[1].start, w[1].end),
                ));
            }
        }
        Ok(Self { spans })
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Exact,
    /// At least one shared character.
    Partial,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when precision or recall had an empty denominator and was taken as 0.
    pub undefined: bool,
}

impl F1Score {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if gold == 0 {
            0.0
        } else {
            tp as f64 / gold as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            true_positives: tp,
            predicted,
            gold,
            precision,
            recall,
            f1,
            undefined: predicted == 0 || gold == 0,
        }
    }

    /// Micro-average: counts are summed before the ratios are taken.
    pub fn merge(self, other: F1Score) -> F1Score {
        F1Score::from_counts(
            self.true_positives + other.true_positives,
            self.predicted + other.predicted,
            self.gold + other.gold,
        )
    }
}

/// One-to-one greedy matching: predictions in document order each take the
/// first unmatched gold span they match.
pub fn ner_f1(pred: &SpanSet, gold: &SpanSet, mode: MatchMode) -> F1Score {
    let mut used = vec![false; gold.len()];
    let mut tp = 0;
    for p in pred.spans() {
        let hit = gold.spans().iter().enumerate().position(|(j, g)| {
            !used[j]
                && match mode {
                    MatchMode::Exact => g.start == p.start && g.end == p.end,
                    MatchMode::Partial => g.overlaps(p),
                }
        });
        if let Some(j) = hit {
            used[j] = true;
            tp += 1;
        }
    }
    F1Score::from_counts(tp, pred.len(), gold.len())
}

/// Locates predicted surface strings in `text`. Each surface takes its
/// first occurrence that does not overlap an earlier one; surfaces that
/// cannot be placed are dropped.
pub fn spans_from_surfaces(text: &str, surfaces: &[String]) -> SpanSet {
    let chars: Vec<char> = text.chars().collect();
    let mut placed: Vec<Span> = Vec::new();
    for s in surfaces {
        let needle: Vec<char> = s.chars().collect();
        if needle.is_empty() || needle.len() > chars.len() {
            continue;
        }
        for start in 0..=chars.len() - needle.len() {
            let cand = Span {
                start,
                end: start + needle.len(),
                surface: s.clone(),
            };
            if chars[start..cand.end] == needle[..] && !placed.iter().any(|p| p.overlaps(&cand)) {
                placed.push(cand);
                break;
            }
        }
    }
    SpanSet::new(placed, Some(chars.len())).expect("placed spans never overlap")
}
