use std::collections::{BTreeMap, HashSet};

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::{CleanDocument, RawDocument};
use crate::error::{Error, Result};

/// U+2581, the meta-space that stands in for white-space after cleaning.
pub const META_SPACE: char = '\u{2581}';

const MAX_PASSES: usize = 8;

/// One step of the cleaning pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rule {
    FullWidthPunctuation,
    Nfkc,
    SpellingVariants,
    Restore,
    PersonalInfo,
    WebNotation,
    SymbolUnification,
    Charset,
    SqueezeRuns,
    MetaSpace,
}

/// The pinned rule order. Full-width punctuation must be rewritten before
/// NFKC folds it to ASCII, and the ellipsis/degree restorations must run
/// after NFKC decomposes them.
pub const RULE_ORDER: [Rule; 10] = [
    Rule::FullWidthPunctuation,
    Rule::Nfkc,
    Rule::SpellingVariants,
    Rule::Restore,
    Rule::PersonalInfo,
    Rule::WebNotation,
    Rule::SymbolUnification,
    Rule::Charset,
    Rule::SqueezeRuns,
    Rule::MetaSpace,
];

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::FullWidthPunctuation => "full_width_punctuation",
            Rule::Nfkc => "nfkc",
            Rule::SpellingVariants => "spelling_variants",
            Rule::Restore => "restore",
            Rule::PersonalInfo => "personal_info",
            Rule::WebNotation => "web_notation",
            Rule::SymbolUnification => "symbol_unification",
            Rule::Charset => "charset",
            Rule::SqueezeRuns => "squeeze_runs",
            Rule::MetaSpace => "meta_space",
        }
    }
}

/// Cleaning parameters. The term lists, variant tables and patterns shipped
/// as defaults are sample placeholders; real deployments replace them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    /// Inclusive code point ranges of allowed characters.
    pub charset_ranges: Vec<(u32, u32)>,
    /// Individually allowed characters (punctuation and symbols).
    pub charset_extra: String,
    pub blocked_terms: Vec<String>,
    pub max_repeat_run: usize,
    pub incomplete_sentence_threshold: f64,
    /// Hyphen, chōonpu and tilde variants, applied right after NFKC.
    pub spelling_variants: Vec<(String, String)>,
    pub symbol_unification_map: Vec<(String, String)>,
    pub pii_patterns: Vec<String>,
    pub web_patterns: Vec<String>,
    /// Bumped whenever the shipped pattern lists change.
    pub pattern_version: u32,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        let pairs = |xs: &[(&str, &str)]| {
            xs.iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect::<Vec<_>>()
        };
        Self {
            charset_ranges: vec![
                (0x30, 0x39),     // digits
                (0x41, 0x5A),     // A-Z
                (0x61, 0x7A),     // a-z
                (0x3041, 0x309F), // hiragana
                (0x30A0, 0x30FF), // katakana
                (0x31F0, 0x31FF), // katakana phonetic extensions
                (0x3005, 0x3007), // 々〆〇
                (0x3400, 0x4DBF), // CJK extension A
                (0x4E00, 0x9FFF), // CJK unified ideographs
            ],
            charset_extra: "。、「」『』・…℃〜!?.,:;'\"()[]-+*/%&=_±×→".to_string(),
            blocked_terms: vec![
                "無断転載".into(),
                "転載禁止".into(),
                "All rights reserved".into(),
                "アダルト".into(),
                "出会い系".into(),
            ],
            max_repeat_run: 3,
            incomplete_sentence_threshold: 0.5,
            spelling_variants: pairs(&[
                ("\u{2010}", "-"),
                ("\u{2011}", "-"),
                ("\u{2012}", "-"),
                ("\u{2013}", "-"),
                ("\u{2043}", "-"),
                ("\u{2212}", "-"),
                ("\u{FE63}", "-"),
                ("\u{2014}", "ー"),
                ("\u{2015}", "ー"),
                ("\u{2500}", "ー"),
                ("\u{2501}", "ー"),
                ("~", "〜"),
                ("\u{223C}", "〜"),
                ("\u{223E}", "〜"),
                ("\u{3030}", "〜"),
            ]),
            symbol_unification_map: pairs(&[
                ("\u{201C}", "\""),
                ("\u{201D}", "\""),
                ("\u{2018}", "'"),
                ("\u{2019}", "'"),
                ("【", "["),
                ("】", "]"),
                ("〔", "("),
                ("〕", ")"),
                ("〈", "「"),
                ("〉", "」"),
                ("《", "『"),
                ("》", "』"),
            ]),
            pii_patterns: vec![
                r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)+".into(),
                r"(?-u:\b)(?:\+81[\- ]?|0)\d{1,4}[\- ]?\d{1,4}[\- ]?\d{3,4}(?-u:\b)".into(),
            ],
            web_patterns: vec![
                r"(?:https?|ftp)://[!-~]+".into(),
                r"www\.[!-~]+".into(),
                r"@[A-Za-z0-9_]+".into(),
                r"#[\p{L}\p{N}_]+".into(),
            ],
            pattern_version: 1,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_repeat_run < 1 {
            return Err(Error::Config("clean.max_repeat_run must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.incomplete_sentence_threshold) {
            return Err(Error::Config(
                "clean.incomplete_sentence_threshold must lie in [0, 1]".into(),
            ));
        }
        for &(lo, hi) in &self.charset_ranges {
            if lo > hi || char::from_u32(lo).is_none() || char::from_u32(hi).is_none() {
                return Err(Error::Config(format!("bad charset range {lo:#x}-{hi:#x}")));
            }
        }
        Ok(())
    }
}

/// A compiled [`CleaningConfig`].
#[derive(Debug)]
pub struct Cleaner {
    config: CleaningConfig,
    ranges: Vec<(char, char)>,
    extra: HashSet<char>,
    variants: Vec<(String, String)>,
    symbols: Vec<(String, String)>,
    pii: Vec<Regex>,
    web: Vec<Regex>,
    blocked: Vec<String>,
}

/// Resolves each target through the whole map so one sequential pass lands on
/// a fixed point. A map whose targets never settle is cyclic.
fn resolve_map(map: &[(String, String)], what: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::with_capacity(map.len());
    for (from, to) in map {
        if from.is_empty() {
            return Err(Error::Config(format!("{what}: empty source string")));
        }
        let mut cur = to.clone();
        let mut settled = false;
        for _ in 0..=map.len() {
            let next = map
                .iter()
                .fold(cur.clone(), |s, (f, t)| s.replace(f.as_str(), t));
            if next == cur {
                settled = true;
                break;
            }
            cur = next;
        }
        if !settled || cur.contains(from.as_str()) {
            return Err(Error::Config(format!(
                "{what}: mapping for {from:?} is cyclic"
            )));
        }
        out.push((from.clone(), cur));
    }
    Ok(out)
}

fn compile(patterns: &[String]) -> Result<Vec<Regex>> {
    patterns
        .iter()
        .map(|p| Regex::new(p).map_err(|e| Error::Config(format!("bad pattern {p:?}: {e}"))))
        .collect()
}

fn replace_all_counted(text: &str, map: &[(String, String)], count: &mut u64) -> String {
    let mut cur = text.to_string();
    for (from, to) in map {
        let n = cur.matches(from.as_str()).count();
        if n > 0 {
            *count += n as u64;
            cur = cur.replace(from.as_str(), to);
        }
    }
    cur
}

fn remove_matches(text: &str, patterns: &[Regex], count: &mut u64) -> String {
    let mut cur = text.to_string();
    for re in patterns {
        let n = re.find_iter(&cur).count();
        if n > 0 {
            *count += n as u64;
            cur = re.replace_all(&cur, "").into_owned();
        }
    }
    cur
}

impl Cleaner {
    pub fn new(config: &CleaningConfig) -> Result<Self> {
        config.validate()?;
        let mut ranges: Vec<(char, char)> = config
            .charset_ranges
            .iter()
            .map(|&(lo, hi)| (char::from_u32(lo).unwrap(), char::from_u32(hi).unwrap()))
            .collect();
        ranges.sort();
        let mut cleaner = Self {
            config: config.clone(),
            ranges,
            extra: config.charset_extra.chars().collect(),
            variants: resolve_map(&config.spelling_variants, "clean.spelling_variants")?,
            symbols: resolve_map(
                &config.symbol_unification_map,
                "clean.symbol_unification_map",
            )?,
            pii: compile(&config.pii_patterns)?,
            web: compile(&config.web_patterns)?,
            blocked: Vec::new(),
        };
        // Terms are matched against cleaned text, so they go through the same rules.
        cleaner.blocked = config
            .blocked_terms
            .iter()
            .map(|t| cleaner.clean(t))
            .filter(|t| !t.is_empty())
            .collect();
        Ok(cleaner)
    }

    pub fn config(&self) -> &CleaningConfig {
        &self.config
    }

    pub fn blocked_terms(&self) -> &[String] {
        &self.blocked
    }

    /// Whether `c` may appear in cleaned text.
    pub fn allows(&self, c: char) -> bool {
        c == META_SPACE
            || c == '\n'
            || self.extra.contains(&c)
            || self.ranges.iter().any(|&(lo, hi)| lo <= c && c <= hi)
    }

    pub fn clean(&self, text: &str) -> String {
        self.clean_with_counts(text).0
    }

    /// Runs the pinned pipeline until the text stops changing. Deletions can
    /// splice fragments into a new match for an earlier rule, so a single
    /// pass is not always a fixed point. Counts cover the first pass only.
    pub fn clean_with_counts(&self, text: &str) -> (String, BTreeMap<String, u64>) {
        let mut counts = BTreeMap::new();
        let mut cur = self.apply_rules(text, &RULE_ORDER, &mut counts);
        for _ in 1..MAX_PASSES {
            let next = self.apply_rules(&cur, &RULE_ORDER, &mut BTreeMap::new());
            if next == cur {
                return (cur, counts);
            }
            cur = next;
        }
        log::warn!("cleaning did not settle after {MAX_PASSES} passes");
        (cur, counts)
    }

    pub fn clean_document(&self, doc: &RawDocument) -> CleanDocument {
        let (text, rule_counts) = self.clean_with_counts(&doc.text);
        CleanDocument {
            id: doc.id.clone(),
            source: doc.source,
            text,
            rule_counts,
        }
    }

    /// One pass over `rules` in the given order. Exposed so rule-order
    /// regressions can be reproduced.
    pub fn apply_rules(
        &self,
        text: &str,
        rules: &[Rule],
        counts: &mut BTreeMap<String, u64>,
    ) -> String {
        let mut cur = text.to_string();
        for &rule in rules {
            let mut n = 0u64;
            cur = self.apply_rule(rule, &cur, &mut n);
            if n > 0 {
                *counts.entry(rule.name().to_string()).or_default() += n;
            }
        }
        cur
    }

    fn apply_rule(&self, rule: Rule, text: &str, n: &mut u64) -> String {
        match rule {
            Rule::FullWidthPunctuation => {
                let out: String = text
                    .chars()
                    .map(|c| match c {
                        '．' => {
                            *n += 1;
                            '。'
                        }
                        '，' => {
                            *n += 1;
                            '、'
                        }
                        c => c,
                    })
                    .collect();
                out
            }
            Rule::Nfkc => {
                let out: String = text.nfkc().collect();
                if out != text {
                    *n += 1;
                }
                out
            }
            Rule::SpellingVariants => replace_all_counted(text, &self.variants, n),
            Rule::Restore => {
                let restore = [
                    ("...".to_string(), "…".to_string()),
                    ("°C".to_string(), "℃".to_string()),
                ];
                replace_all_counted(text, &restore, n)
            }
            Rule::PersonalInfo => remove_matches(text, &self.pii, n),
            Rule::WebNotation => remove_matches(text, &self.web, n),
            Rule::SymbolUnification => replace_all_counted(text, &self.symbols, n),
            Rule::Charset => text
                .chars()
                .filter(|&c| {
                    let keep = c.is_whitespace() || self.allows(c);
                    if !keep {
                        *n += 1;
                    }
                    keep
                })
                .collect(),
            Rule::SqueezeRuns => {
                let max = self.config.max_repeat_run;
                let mut out = String::with_capacity(text.len());
                let mut prev = None;
                let mut run = 0usize;
                for c in text.chars() {
                    if Some(c) == prev {
                        run += 1;
                    } else {
                        prev = Some(c);
                        run = 1;
                    }
                    if run > max && !c.is_ascii_digit() {
                        *n += 1;
                        continue;
                    }
                    out.push(c);
                }
                out
            }
            Rule::MetaSpace => {
                let text = text.replace("\r\n", "\n").replace('\r', "\n");
                let mut out = String::with_capacity(text.len());
                let mut in_space = false;
                for c in text.chars() {
                    if c != '\n' && c.is_whitespace() {
                        if !in_space {
                            *n += 1;
                            out.push(META_SPACE);
                        }
                        in_space = true;
                    } else {
                        in_space = false;
                        out.push(c);
                    }
                }
                out
            }
        }
    }
}

/// Cleans a single string. Compiles the config on every call; use
/// [`Cleaner`] for bulk work.
pub fn clean_text(text: &str, config: &CleaningConfig) -> Result<String> {
    Ok(Cleaner::new(config)?.clean(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cleaner() -> Cleaner {
        Cleaner::new(&CleaningConfig::default()).unwrap()
    }

    #[test]
    fn full_width_period_becomes_kuten() {
        assert_eq!(cleaner().clean("血圧が高い．"), "血圧が高い。");
        assert_eq!(cleaner().clean("はい，いいえ"), "はい、いいえ");
    }

    #[test]
    fn ellipsis_and_celsius_restored() {
        assert_eq!(cleaner().clean("37°C..."), "37℃…");
        // ℃ and … survive a second pass through NFKC
        assert_eq!(cleaner().clean("37℃…"), "37℃…");
    }

    #[test]
    fn white_space_becomes_meta_space() {
        assert_eq!(cleaner().clean("投与 量"), "投与▁量");
        assert_eq!(cleaner().clean("投与\u{3000}\t量"), "投与▁量");
        assert_eq!(
            cleaner().clean("一行目。\r\n二行目。"),
            "一行目。\n二行目。"
        );
    }

    #[test]
    fn email_and_phone_removed() {
        assert_eq!(cleaner().clean("連絡: a@b.jp まで"), "連絡:▁まで");
        assert_eq!(cleaner().clean("電話03-1234-5678へ"), "電話へ");
        assert_eq!(cleaner().clean("用量は0.5mg"), "用量は0.5mg");
    }

    #[test]
    fn web_notation_removed() {
        assert_eq!(
            cleaner().clean("詳細はhttps://example.com/x?a=1を参照"),
            "詳細はを参照"
        );
        assert_eq!(cleaner().clean("@doctor_x さん"), "▁さん");
        assert_eq!(cleaner().clean("今日は #医療 の話"), "今日は▁の話");
    }

    #[test]
    fn variants_symbols_and_charset() {
        assert_eq!(cleaner().clean("東京〜大阪"), "東京〜大阪");
        assert_eq!(cleaner().clean("東京～大阪"), "東京〜大阪");
        assert_eq!(cleaner().clean("ｺｰﾋｰ"), "コーヒー");
        assert_eq!(cleaner().clean("【重要】"), "[重要]");
        assert_eq!(cleaner().clean("心臓♥病"), "心臓病");
        assert_eq!(cleaner().clean("<|end_of_text|>"), "end_of_text");
    }

    #[test]
    fn runs_squeezed_but_digits_kept() {
        assert_eq!(cleaner().clean("すごーーーーい!!!!!"), "すごーーーい!!!");
        assert_eq!(cleaner().clean("10000000円"), "10000000円");
    }

    #[test]
    fn rule_counts_recorded() {
        let (_, counts) = cleaner().clean_with_counts("血圧が高い． 連絡 a@b.jp");
        assert_eq!(counts.get("full_width_punctuation"), Some(&1));
        assert_eq!(counts.get("personal_info"), Some(&1));
        assert!(counts.get("meta_space").copied().unwrap_or(0) >= 1);
    }

    #[test]
    fn swapping_first_two_rules_is_detectable() {
        let c = cleaner();
        let mut swapped = RULE_ORDER;
        swapped.swap(0, 1);
        let pinned = c.apply_rules("血圧が高い．", &RULE_ORDER, &mut BTreeMap::new());
        let wrong = c.apply_rules("血圧が高い．", &swapped, &mut BTreeMap::new());
        assert_eq!(pinned, "血圧が高い。");
        assert_eq!(wrong, "血圧が高い.");
    }

    #[test]
    fn restoring_before_nfkc_loses_it() {
        let c = cleaner();
        let mut order = RULE_ORDER.to_vec();
        let restore = order.remove(3);
        order.insert(1, restore);
        assert_eq!(c.apply_rules("37℃", &order, &mut BTreeMap::new()), "37C");
    }

    #[test]
    fn cyclic_map_rejected() {
        let cfg = CleaningConfig {
            symbol_unification_map: vec![("a".into(), "b".into()), ("b".into(), "a".into())],
            ..CleaningConfig::default()
        };
        assert!(matches!(Cleaner::new(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn chained_map_resolved_to_fixed_point() {
        let cfg = CleaningConfig {
            symbol_unification_map: vec![("x".into(), "y".into()), ("y".into(), "z".into())],
            ..CleaningConfig::default()
        };
        let c = Cleaner::new(&cfg).unwrap();
        assert_eq!(c.clean("xyz"), "zzz");
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = CleaningConfig {
            max_repeat_run: 0,
            ..CleaningConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = CleaningConfig {
            incomplete_sentence_threshold: 1.5,
            ..CleaningConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
