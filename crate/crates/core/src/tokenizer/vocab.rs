use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const BEGIN_OF_TEXT: &str = "<|begin_of_text|>";
pub const END_OF_TEXT: &str = "<|end_of_text|>";
pub const NEWLINE: &str = "\n";
pub const SYSTEM: &str = "<|system|>";
pub const USER: &str = "<|user|>";
pub const ASSISTANT: &str = "<|assistant|>";
pub const UNK: &str = "<unk>";

pub const BASE_SPECIALS: [&str; 3] = [BEGIN_OF_TEXT, END_OF_TEXT, NEWLINE];
pub const CHAT_SPECIALS: [&str; 3] = [SYSTEM, USER, ASSISTANT];

pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const NEWLINE_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

/// Number of ids that are not trained pieces in a base vocabulary.
pub const RESERVED_IDS: usize = BASE_SPECIALS.len() + 1;

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Special(String),
    Piece { surface: String, log_prob: f64 },
}

/// Pieces with log-probabilities plus special tokens at fixed ids:
/// `<|begin_of_text|>`=0, `<|end_of_text|>`=1, `\n`=2, the unknown piece at
/// 3, trained pieces after that, and chat specials appended at the end.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    entries: Vec<Entry>,
    piece_ids: HashMap<String, u32>,
    special_ids: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl Vocabulary {
    /// Builds a base vocabulary from trained pieces. The unknown piece gets a
    /// log-probability ten nats below the rarest piece.
    pub fn from_pieces(pieces: Vec<(String, f64)>) -> Result<Self> {
        let min = pieces.iter().map(|p| p.1).fold(0.0f64, f64::min);
        let mut entries: Vec<Entry> = BASE_SPECIALS
            .iter()
            .map(|s| Entry::Special(s.to_string()))
            .collect();
        entries.push(Entry::Piece {
            surface: UNK.to_string(),
            log_prob: min - 10.0,
        });
        entries.extend(
            pieces
                .into_iter()
                .map(|(surface, log_prob)| Entry::Piece { surface, log_prob }),
        );
        Self::from_entries(entries)
    }

    fn from_entries(entries: Vec<Entry>) -> Result<Self> {
        let mut piece_ids = HashMap::new();
        let mut special_ids = HashMap::new();
        let mut max_piece_chars = 0;
        for (id, e) in entries.iter().enumerate() {
            let id = id as u32;
            match e {
                Entry::Special(s) => {
                    if special_ids.insert(s.clone(), id).is_some() {
                        return Err(Error::DuplicateSpecial(s.clone()));
                    }
                }
                Entry::Piece { surface, log_prob } => {
                    if surface.is_empty() || !log_prob.is_finite() {
                        return Err(Error::format(
                            "vocabulary",
                            format!("bad piece {surface:?} ({log_prob})"),
                        ));
                    }
                    if piece_ids.insert(surface.clone(), id).is_some() {
                        return Err(Error::format(
                            "vocabulary",
                            format!("duplicate piece {surface:?}"),
                        ));
                    }
                    max_piece_chars = max_piece_chars.max(surface.chars().count());
                }
            }
        }
        for (i, s) in BASE_SPECIALS.iter().enumerate() {
            if special_ids.get(*s) != Some(&(i as u32)) {
                return Err(Error::format(
                    "vocabulary",
                    format!("special {s:?} must have id {i}"),
                ));
            }
        }
        if piece_ids.get(UNK) != Some(&UNK_ID) {
            return Err(Error::format(
                "vocabulary",
                format!("{UNK} must have id {UNK_ID}"),
            ));
        }
        Ok(Self {
            entries,
            piece_ids,
            special_ids,
            max_piece_chars,
        })
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, id: u32) -> Option<&Entry> {
        self.entries.get(id as usize)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.entry(id).map(|e| match e {
            Entry::Special(s) => s.as_str(),
            Entry::Piece { surface, .. } => surface.as_str(),
        })
    }

    pub fn piece_id(&self, surface: &str) -> Option<u32> {
        self.piece_ids.get(surface).copied()
    }

    pub fn special_id(&self, name: &str) -> Option<u32> {
        self.special_ids.get(name).copied()
    }

    /// Piece or special id for a surface form.
    pub fn id_of(&self, surface: &str) -> Option<u32> {
        self.piece_id(surface).or_else(|| self.special_id(surface))
    }

    pub fn is_special(&self, id: u32) -> bool {
        matches!(self.entry(id), Some(Entry::Special(_)))
    }

    pub fn special_ids(&self) -> Vec<u32> {
        (0..self.size() as u32)
            .filter(|&i| self.is_special(i))
            .collect()
    }

    pub fn max_piece_chars(&self) -> usize {
        self.max_piece_chars
    }

    /// Trained pieces (everything but specials and the unknown piece).
    pub fn pieces(&self) -> impl Iterator<Item = (u32, &str, f64)> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(id, e)| match e {
                Entry::Piece { surface, log_prob } if id as u32 != UNK_ID => {
                    Some((id as u32, surface.as_str(), *log_prob))
                }
                _ => None,
            })
    }

    pub(crate) fn lookup(&self, surface: &str) -> Option<(usize, f64)> {
        let id = *self.piece_ids.get(surface)?;
        if id == UNK_ID {
            return None;
        }
        match &self.entries[id as usize] {
            Entry::Piece { log_prob, .. } => Some((id as usize, *log_prob)),
            Entry::Special(_) => None,
        }
    }

    pub(crate) fn unk_log_prob(&self) -> f64 {
        match &self.entries[UNK_ID as usize] {
            Entry::Piece { log_prob, .. } => *log_prob,
            Entry::Special(_) => unreachable!("validated at construction"),
        }
    }

    /// Appends specials at the end; existing ids are untouched.
    pub fn extend_specials(&self, names: &[&str]) -> Result<Self> {
        let mut entries = self.entries.clone();
        for name in names {
            if self.special_ids.contains_key(*name) || self.piece_ids.contains_key(*name) {
                return Err(Error::DuplicateSpecial(name.to_string()));
            }
            entries.push(Entry::Special(name.to_string()));
        }
        Self::from_entries(entries)
    }

    /// Header lines (`#key<TAB>value`) then one `piece<TAB>log_prob` line per
    /// piece in id order. Specials are listed in the header with their ids.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let n_specials = self.special_ids.len();
        writeln!(out, "#slm-vocab\t{FORMAT_VERSION}").unwrap();
        writeln!(out, "#size\t{}", self.size()).unwrap();
        writeln!(out, "#pieces\t{}", self.size() - n_specials).unwrap();
        writeln!(out, "#specials\t{n_specials}").unwrap();
        for (id, e) in self.entries.iter().enumerate() {
            if let Entry::Special(s) = e {
                writeln!(out, "#special\t{id}\t{}", escape(s)).unwrap();
            }
        }
        writeln!(out, "#unk\t{UNK_ID}").unwrap();
        for e in &self.entries {
            if let Entry::Piece { surface, log_prob } = e {
                writeln!(out, "{}\t{log_prob}", escape(surface)).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::format("vocabulary file", msg);
        let mut lines = text.lines().enumerate().peekable();
        let mut size = None;
        let mut pieces_count = None;
        let mut specials: HashMap<usize, String> = HashMap::new();
        let mut version = None;
        while let Some((_, line)) = lines.peek() {
            let Some(rest) = line.strip_prefix('#') else {
                break;
            };
            let fields: Vec<&str> = rest.split('\t').collect();
            match fields.as_slice() {
                ["slm-vocab", v] => {
                    version = Some(v.parse::<u32>().map_err(|e| bad(e.to_string()))?)
                }
                ["size", v] => size = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                ["pieces", v] => {
                    pieces_count = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?)
                }
                ["specials", _] | ["unk", _] => {}
                ["special", id, s] => {
                    specials.insert(
                        id.parse()
                            .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                        unescape(s),
                    );
                }
                _ => return Err(bad(format!("unknown header line {line:?}"))),
            }
            lines.next();
        }
        match version {
            Some(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::UnsupportedVersion {
                    what: "vocabulary",
                    found: v,
                    supported: FORMAT_VERSION,
                })
            }
            None => return Err(bad("missing #slm-vocab header".into())),
        }
        let size = size.ok_or_else(|| bad("missing #size".into()))?;
        let mut entries = Vec::with_capacity(size);
        for id in 0..size {
            if let Some(s) = specials.remove(&id) {
                entries.push(Entry::Special(s));
                continue;
            }
            let (lineno, line) = lines
                .next()
                .ok_or_else(|| bad(format!("missing piece for id {id}")))?;
            let (surface, lp) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad(format!("line {}: expected piece<TAB>log_prob", lineno + 1)))?;
            let log_prob: f64 = lp
                .parse()
                .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?;
            entries.push(Entry::Piece {
                surface: unescape(surface),
                log_prob,
            });
        }
        if lines.next().is_some() || !specials.is_empty() {
            return Err(bad("entry count does not match #size".into()));
        }
        let vocab = Self::from_entries(entries)?;
        if pieces_count.is_some_and(|p| p != size - vocab.special_ids.len()) {
            return Err(bad("#pieces does not match body".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::ensure_parent(path)?;
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}
