use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CleanDocument, FilterReport, META_SPACE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    /// Sentences occurring more than this many times corpus-wide are dropped
    /// everywhere.
    pub sentence_max_occurrences: usize,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            sentence_max_occurrences: 2,
        }
    }
}

type Digest32 = [u8; 32];

fn digest(s: &str) -> Digest32 {
    Sha256::digest(s.as_bytes()).into()
}

/// Splits after each sentence terminal and after each newline. Concatenating
/// the pieces gives back the input.
fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if matches!(c, '。' | '!' | '?' | '！' | '？' | '\n') {
            let end = i + c.len_utf8();
            out.push(&text[start..end]);
            start = end;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn sentence_key(sentence: &str) -> Option<Digest32> {
    let core = sentence.trim_matches(|c: char| c == META_SPACE || c.is_whitespace());
    (!core.is_empty()).then(|| digest(core))
}

/// Exact-hash document dedup (first occurrence wins), then removal of
/// sentences repeated more than `sentence_max_occurrences` times. Documents
/// emptied by the sentence pass are dropped as `empty_after_dedup`.
pub fn dedup_corpus(
    docs: Vec<CleanDocument>,
    config: &DedupConfig,
) -> (Vec<CleanDocument>, FilterReport) {
    let mut report = FilterReport::default();
    let mut seen = HashSet::new();
    let mut unique = Vec::with_capacity(docs.len());
    for doc in docs {
        let bytes = doc.text.len() as u64;
        report.bytes_in += bytes;
        if seen.insert(digest(&doc.text)) {
            unique.push(doc);
        } else {
            report.reject("duplicate", bytes);
        }
    }

    let mut occurrences: HashMap<Digest32, usize> = HashMap::new();
    for doc in &unique {
        for s in split_sentences(&doc.text) {
            if let Some(k) = sentence_key(s) {
                *occurrences.entry(k).or_default() += 1;
            }
        }
    }

    let limit = config.sentence_max_occurrences;
    let mut kept = Vec::with_capacity(unique.len());
    for mut doc in unique {
        let mut removed = 0u64;
        let mut text = String::with_capacity(doc.text.len());
        for s in split_sentences(&doc.text) {
            match sentence_key(s) {
                Some(k) if occurrences[&k] > limit => removed += s.len() as u64,
                _ => text.push_str(s),
            }
        }
        report.remove_bytes("duplicate_sentence", removed);
        if removed > 0 && sentence_key(&text).is_none() {
            report.reject("empty_after_dedup", text.len() as u64);
            continue;
        }
        doc.text = text;
        report.kept += 1;
        report.bytes_out += doc.text.len() as u64;
        kept.push(doc);
    }
    report.bytes_removed.retain(|_, v| *v > 0);
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Source;

    fn doc(id: &str, text: &str) -> CleanDocument {
        CleanDocument {
            id: id.into(),
            source: Source::Web,
            text: text.into(),
            rule_counts: Default::default(),
        }
    }

    #[test]
    fn duplicate_documents_first_wins() {
        let docs = vec![doc("1", "甲。"), doc("2", "甲。"), doc("3", "乙。")];
        let (out, report) = dedup_corpus(docs, &DedupConfig::default());
        let ids: Vec<_> = out.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["1", "3"]);
        assert_eq!(report.rejected.get("duplicate"), Some(&1));
        assert_eq!(report.kept, 2);
        assert!(report.is_balanced());
    }

    #[test]
    fn empty_corpus() {
        let (out, report) = dedup_corpus(vec![], &DedupConfig::default());
        assert!(out.is_empty());
        assert_eq!(report, FilterReport::default());
    }

    #[test]
    fn sentence_in_five_docs_removed_everywhere() {
        let docs: Vec<_> = (0..5)
            .map(|i| {
                doc(
                    &i.to_string(),
                    &format!("共通の定型文です。固有の文{i}です。"),
                )
            })
            .collect();
        let (out, report) = dedup_corpus(
            docs,
            &DedupConfig {
                sentence_max_occurrences: 2,
            },
        );
        assert_eq!(out.len(), 5);
        for (i, d) in out.iter().enumerate() {
            assert_eq!(d.text, format!("固有の文{i}です。"));
        }
        assert_eq!(
            report.bytes_removed["duplicate_sentence"],
            5 * "共通の定型文です。".len() as u64
        );
        assert!(report.is_balanced());
    }

    #[test]
    fn sentence_at_limit_survives() {
        let docs = vec![doc("a", "定型。甲。"), doc("b", "定型。乙。")];
        let (out, _) = dedup_corpus(
            docs,
            &DedupConfig {
                sentence_max_occurrences: 2,
            },
        );
        assert_eq!(out[0].text, "定型。甲。");
    }

    #[test]
    fn doc_emptied_by_sentence_pass_is_rejected() {
        let docs = vec![
            doc("a", "定型。"),
            doc("b", "定型。\n"),
            doc("c", "定型。乙。"),
        ];
        let (out, report) = dedup_corpus(
            docs,
            &DedupConfig {
                sentence_max_occurrences: 1,
            },
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].text, "乙。");
        assert_eq!(report.rejected["empty_after_dedup"], 2);
        assert_eq!(report.input_count(), 3);
        assert!(report.is_balanced());
    }

    #[test]
    fn split_is_lossless() {
        let t = "一。二!三\n四";
        assert_eq!(split_sentences(t).concat(), t);
    }
}
