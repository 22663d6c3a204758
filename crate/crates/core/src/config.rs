//! Run configuration: one TOML file for every subcommand. Missing keys take
//! the published defaults, so an empty file describes the full 1.2B run.

use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{CleaningConfig, DedupConfig};
use crate::error::{Error, Result};
use crate::eval::TaskSpec;
use crate::exec::Exec;
use crate::model::ModelConfig;
use crate::quality::RfParams;
use crate::tokenizer::TrainerParams;
use crate::train::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    #[default]
    Parallel,
    Sequential,
}

impl From<ExecMode> for Exec {
    fn from(m: ExecMode) -> Exec {
        match m {
            ExecMode::Parallel => Exec::Parallel,
            ExecMode::Sequential => Exec::Sequential,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    /// One word per line; relative paths are resolved against the config file.
    pub lexicon: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tasks: Vec<TaskSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub exec: ExecMode,
    /// Worker threads, 0 for one per core.
    pub workers: usize,
    pub cleaning: CleaningConfig,
    pub dedup: DedupConfig,
    pub segmenter: SegmenterConfig,
    pub tokenizer: TrainerParams,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub quality: RfParams,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            exec: ExecMode::default(),
            workers: 0,
            cleaning: CleaningConfig::default(),
            dedup: DedupConfig::default(),
            segmenter: SegmenterConfig::default(),
            tokenizer: TrainerParams::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig::pretrain(),
            finetune: TrainConfig::finetune(),
            quality: RfParams::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Sets `dotted.key` to a TOML literal, or to a string when `raw` does not
/// parse as one.
fn set_path(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {p} is not a table")))?;
        cur = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    cur.as_table_mut()
        .ok_or_else(|| Error::Config(format!("{key}: parent is not a table")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Closest candidate by edit distance, if it is close enough to be a typo.
pub fn suggest<'a>(key: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<String> {
    let (d, best) = candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(key, c), c))
        .min()?;
    (d <= (key.chars().count() / 2).max(2)).then(|| best.to_string())
}

fn translate(err: toml::de::Error) -> Error {
    let msg = err.message().to_string();
    let re = Regex::new(r"unknown field `([^`]*)`, expected (.*)").expect("static regex");
    if let Some(c) = re.captures(&msg) {
        let key = c[1].to_string();
        let tick = Regex::new(r"`([^`]*)`").expect("static regex");
        let expected: Vec<String> = tick
            .captures_iter(&c[2])
            .map(|m| m[1].to_string())
            .collect();
        let suggestion = suggest(&key, expected.iter().map(String::as_str));
        return Error::UnknownKey { key, suggestion };
    }
    Error::Config(msg.trim().to_string())
}

impl Config {
    /// Parses `text` over the defaults, then applies `key=value` overrides.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Value = toml::from_str(text).map_err(translate)?;
        if let Some(found) = user.get("schema_version") {
            let found = found
                .as_integer()
                .ok_or_else(|| Error::Config("schema_version must be an integer".into()))?;
            if found != SCHEMA_VERSION as i64 {
                return Err(Error::SchemaVersion {
                    expected: SCHEMA_VERSION,
                    found: found as u32,
                });
            }
        }
        let mut value =
            toml::Value::try_from(Config::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut value, user);
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_path(&mut value, k.trim(), v.trim())?;
        }
        let cfg: Config = value.try_into().map_err(translate)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: SCHEMA_VERSION,
                found: cfg.schema_version,
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it are made relative to
    /// the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(l) = self.segmenter.lexicon.as_mut() {
            fix(l);
        }
        for t in &mut self.eval.tasks {
            fix(&mut t.data);
            fix(&mut t.predictions);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cleaning.validate()?;
        self.tokenizer.validate()?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        Ok(())
    }

    /// Sets every seed in the file.
    pub fn set_seed(&mut self, seed: u64) {
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
        self.quality.seed = seed;
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn exec(&self) -> Exec {
        self.exec.into()
    }
}
