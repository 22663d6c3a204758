//! Dictionary longest-match word segmentation with script-class fallback.
//!
//! Stands in for a morphological analyzer. Anything implementing
//! [`Segmenter`] can be plugged into the tokenizer pipeline.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::corpus::META_SPACE;
use crate::error::{Error, Result};

pub trait Segmenter: Send + Sync {
    /// Splits `text` into words whose concatenation is `text`.
    fn segment<'a>(&self, text: &'a str) -> Vec<&'a str>;
}

/// Immutable set of surface forms.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: HashSet<String>,
    max_entry_len: usize,
}

impl Lexicon {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries: HashSet<String> = entries
            .into_iter()
            .map(Into::into)
            .filter(|e: &String| !e.is_empty())
            .collect();
        let max_entry_len = entries.iter().map(|e| e.chars().count()).max().unwrap_or(0);
        Self {
            entries,
            max_entry_len,
        }
    }

    /// One UTF-8 surface form per line; blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::format("lexicon", format!("{}: {e}", path.display())))?;
        Ok(Self::new(
            text.lines().map(str::trim).filter(|l| !l.is_empty()),
        ))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_entry_len(&self) -> usize {
        self.max_entry_len
    }

    pub fn contains(&self, s: &str) -> bool {
        self.entries.contains(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Script {
    Hiragana,
    Katakana,
    Han,
    Latin,
    Digit,
    MetaSpace,
    Newline,
    Other,
}

pub fn script_of(c: char) -> Script {
    match c {
        '\n' => Script::Newline,
        META_SPACE => Script::MetaSpace,
        '\u{3041}'..='\u{309F}' => Script::Hiragana,
        '\u{30A0}'..='\u{30FF}' | '\u{31F0}'..='\u{31FF}' => Script::Katakana,
        '\u{3005}'..='\u{3007}' | '\u{3400}'..='\u{4DBF}' | '\u{4E00}'..='\u{9FFF}' => Script::Han,
        c if c.is_ascii_alphabetic() => Script::Latin,
        c if c.is_ascii_digit() => Script::Digit,
        _ => Script::Other,
    }
}

/// Greedy longest-match segmenter.
#[derive(Clone, Debug, Default)]
pub struct LongestMatch {
    lexicon: Lexicon,
}

impl LongestMatch {
    pub fn new(lexicon: Lexicon) -> Self {
        Self { lexicon }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// Byte length of the longest entry starting at `text[0..]`.
    fn longest_at(&self, text: &str) -> Option<usize> {
        if self.lexicon.is_empty() {
            return None;
        }
        let ends: Vec<usize> = text
            .char_indices()
            .skip(1)
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .take(self.lexicon.max_entry_len)
            .collect();
        ends.into_iter()
            .rev()
            .find(|&end| self.lexicon.contains(&text[..end]))
    }
}

fn push_script_runs<'a>(span: &'a str, out: &mut Vec<&'a str>) {
    let mut start = 0;
    let mut current: Option<Script> = None;
    for (i, c) in span.char_indices() {
        let s = script_of(c);
        if current.is_some_and(|cur| cur != s) {
            out.push(&span[start..i]);
            start = i;
        }
        current = Some(s);
    }
    if start < span.len() {
        out.push(&span[start..]);
    }
}

impl Segmenter for LongestMatch {
    fn segment<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        let mut pos = 0;
        let mut unmatched_from = 0;
        while pos < text.len() {
            match self.longest_at(&text[pos..]) {
                Some(len) => {
                    push_script_runs(&text[unmatched_from..pos], &mut out);
                    out.push(&text[pos..pos + len]);
                    pos += len;
                    unmatched_from = pos;
                }
                None => pos += text[pos..].chars().next().map_or(1, char::len_utf8),
            }
        }
        push_script_runs(&text[unmatched_from..], &mut out);
        out
    }
}

pub fn segment(text: &str, lexicon: &Lexicon) -> Vec<String> {
    LongestMatch::new(lexicon.clone())
        .segment(text)
        .into_iter()
        .map(str::to_owned)
        .collect()
}
