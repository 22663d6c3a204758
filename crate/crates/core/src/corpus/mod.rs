//! Corpus cleaning: normalization rules, document filters and deduplication.

mod clean;
mod dedup;
mod filter;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

pub use clean::{clean_text, Cleaner, CleaningConfig, Rule, META_SPACE, RULE_ORDER};
pub use dedup::{dedup_corpus, DedupConfig};
pub use filter::{filter_document, FilterDecision, RejectReason};

use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Wiki,
    Web,
    Textbook,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub source: Source,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub id: String,
    pub source: Source,
    pub text: String,
    #[serde(default)]
    pub rule_counts: BTreeMap<String, u64>,
}

/// Accounting for a filtering pass. `bytes_in == bytes_out + Σ bytes_removed`
/// and `kept + Σ rejected == input count` hold for every report this crate
/// produces.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: u64,
    pub rejected: BTreeMap<String, u64>,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub bytes_removed: BTreeMap<String, u64>,
}

impl FilterReport {
    pub fn input_count(&self) -> u64 {
        self.kept + self.rejected.values().sum::<u64>()
    }

    pub fn is_balanced(&self) -> bool {
        self.bytes_in == self.bytes_out + self.bytes_removed.values().sum::<u64>()
    }

    pub(crate) fn reject(&mut self, reason: &str, bytes: u64) {
        *self.rejected.entry(reason.to_string()).or_default() += 1;
        *self.bytes_removed.entry(reason.to_string()).or_default() += bytes;
    }

    pub(crate) fn remove_bytes(&mut self, reason: &str, bytes: u64) {
        *self.bytes_removed.entry(reason.to_string()).or_default() += bytes;
    }
}

/// Rejects corpora with repeated document ids.
pub fn check_unique_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::format(
                "corpus",
                format!("duplicate document id {id:?}"),
            ));
        }
    }
    Ok(())
}

/// Cleans and filters a raw corpus. Cleaning fans out per document; the
/// report is reduced in input order.
pub fn clean_corpus(
    docs: &[RawDocument],
    config: &CleaningConfig,
    exec: Exec,
) -> Result<(Vec<CleanDocument>, FilterReport)> {
    check_unique_ids(docs.iter().map(|d| d.id.as_str()))?;
    let cleaner = Cleaner::new(config)?;
    let cleaned = exec.map(docs, |d| cleaner.clean_document(d));
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for doc in cleaned {
        let bytes = doc.text.len() as u64;
        report.bytes_in += bytes;
        match filter_document(&doc, &cleaner) {
            FilterDecision::Keep => {
                report.kept += 1;
                report.bytes_out += bytes;
                kept.push(doc);
            }
            FilterDecision::Reject(reason) => report.reject(reason.as_str(), bytes),
        }
    }
    Ok((kept, report))
}
