//! The `slm` command line. Every subcommand that writes files also writes a
//! manifest next to its main output; `slm replay` re-runs one and checks the
//! output digests.

mod commands;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use slm_core::config::Config;
use slm_core::exec::with_workers;
use slm_core::manifest::Manifest;
use slm_core::{Error, Result};

/// Relative output paths are placed under this directory when it is set.
pub const ARTIFACT_ROOT_ENV: &str = "SLM_ARTIFACT_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "slm",
    version,
    about = "Small Japanese language model pipeline"
)]
pub struct Cli {
    /// TOML config; missing keys take the published defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set pretrain.peak_lr=3e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Replace every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Where to write the run manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Clean and filter a raw corpus ({id, source, text} lines).
    Clean {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Drop duplicate documents and over-frequent sentences.
    Dedup {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Quality classifier over final hidden states.
    #[command(subcommand)]
    Quality(QualityCommand),
    /// Train, apply or invert the Unigram tokenizer.
    #[command(subcommand)]
    Tokenizer(TokenizerCommand),
    /// Causal-LM pre-training on a cleaned corpus.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override `pretrain.total_steps`.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Instruction tuning from a pre-trained checkpoint.
    Finetune {
        #[arg(long)]
        base: PathBuf,
        /// Vocabulary of the base model; chat specials are appended.
        #[arg(long)]
        vocab: PathBuf,
        /// Chat lines {system, user, assistant}.
        #[arg(long)]
        chats: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Score the tasks listed under `[eval]` and, optionally, perplexity.
    Eval(EvalArgs),
    /// Token analogies, embedding and attention-map exports.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Re-run a manifest and check that its outputs match.
    Replay { manifest: PathBuf },
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QualityCommand {
    /// Fit a random forest on labelled documents.
    Train {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Cleaned documents.
        #[arg(long)]
        docs: PathBuf,
        /// Label lines {id, label}.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Predict a quality label for each document.
    Apply {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        forest: PathBuf,
        #[arg(long)]
        docs: PathBuf,
        /// Predictions {id, label, probability}.
        #[arg(long)]
        output: PathBuf,
        /// Also write the documents predicted high.
        #[arg(long)]
        kept: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerCommand {
    /// Train a Unigram vocabulary on a cleaned corpus.
    Train {
        /// Cleaned documents.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print token ids of `text`, one line per input line.
    Encode {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        text: Option<String>,
        #[arg(long, conflicts_with = "text")]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Turn token ids back into text.
    Decode {
        #[arg(long)]
        vocab: PathBuf,
        /// Space-separated ids.
        #[arg(long)]
        ids: String,
        #[arg(long)]
        strip_specials: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// JSON report; a Markdown table is written beside it.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, requires_all = ["vocab", "text"])]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Cleaned documents to score for perplexity.
    #[arg(long)]
    pub text: Option<PathBuf>,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyzeCommand {
    /// Nearest tokens to v(a) - v(b) + v(c).
    Analogy {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        a: String,
        b: String,
        c: String,
        #[arg(short, default_value_t = 10)]
        k: usize,
        /// Keep the three query tokens among the candidates.
        #[arg(long)]
        #[serde(default)]
        include_query: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write token embedding rows and their labels.
    EmbedExport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// all, specials, pieces, or comma-separated ids.
        #[arg(long, default_value = "all")]
        filter: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-layer attention maps for one sequence.
    AttnExport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Raw text to encode; otherwise a packed block of `--corpus`.
        #[arg(long)]
        text: Option<String>,
        #[arg(long, conflicts_with = "text")]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        block: usize,
        /// Keep only the first `len` tokens.
        #[arg(long)]
        len: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn artifact_path(p: &Path) -> PathBuf {
    match std::env::var_os(ARTIFACT_ROOT_ENV) {
        Some(root) if p.is_relative() => Path::new(&root).join(p),
        _ => p.to_path_buf(),
    }
}

impl Command {
    /// Places relative output paths under the artifact root.
    fn resolve_outputs(&mut self) {
        let fix = |p: &mut PathBuf| *p = artifact_path(p);
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                *p = artifact_path(p);
            }
        };
        match self {
            Command::Clean { output, report, .. } | Command::Dedup { output, report, .. } => {
                fix(output);
                fix_opt(report);
            }
            Command::Quality(QualityCommand::Train { output, .. }) => fix(output),
            Command::Quality(QualityCommand::Apply { output, kept, .. }) => {
                fix(output);
                fix_opt(kept);
            }
            Command::Tokenizer(TokenizerCommand::Train { output, .. }) => fix(output),
            Command::Tokenizer(TokenizerCommand::Encode { output, .. })
            | Command::Tokenizer(TokenizerCommand::Decode { output, .. }) => fix_opt(output),
            Command::Pretrain { out, .. } | Command::Finetune { out, .. } => fix(out),
            Command::Eval(a) => fix(&mut a.output),
            Command::Analyze(AnalyzeCommand::Analogy { output, .. }) => fix_opt(output),
            Command::Analyze(AnalyzeCommand::EmbedExport { out, .. })
            | Command::Analyze(AnalyzeCommand::AttnExport { out, .. }) => fix(out),
            Command::Replay { .. } => {}
        }
    }

    /// Default manifest location: inside output directories, beside output files.
    fn default_manifest(&self) -> Option<PathBuf> {
        let beside = |p: &Path| {
            let mut s = p.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        };
        match self {
            Command::Clean { output, .. } | Command::Dedup { output, .. } => Some(beside(output)),
            Command::Quality(QualityCommand::Train { output, .. })
            | Command::Quality(QualityCommand::Apply { output, .. })
            | Command::Tokenizer(TokenizerCommand::Train { output, .. }) => Some(beside(output)),
            Command::Tokenizer(TokenizerCommand::Encode { output, .. })
            | Command::Tokenizer(TokenizerCommand::Decode { output, .. })
            | Command::Analyze(AnalyzeCommand::Analogy { output, .. }) => {
                output.as_deref().map(beside)
            }
            Command::Pretrain { out, .. } | Command::Finetune { out, .. } => {
                Some(out.join("manifest.json"))
            }
            Command::Analyze(AnalyzeCommand::EmbedExport { out, .. })
            | Command::Analyze(AnalyzeCommand::AttnExport { out, .. }) => {
                Some(out.join("manifest.json"))
            }
            Command::Eval(a) => Some(beside(&a.output)),
            Command::Replay { .. } => None,
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p, &cli.overrides)?,
        None => Config::from_toml_str("", &cli.overrides)?,
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

/// Runs `command` under `cfg` and returns the manifest of what it touched.
pub fn execute(command: &Command, cfg: &Config) -> Result<Manifest> {
    let config_text = cfg.to_toml()?;
    let mut manifest = Manifest::new(
        serde_json::to_value(command).map_err(|e| Error::format("command", e.to_string()))?,
        config_text,
    );
    manifest.exec = format!("{:?}", cfg.exec).to_lowercase();
    manifest.workers = cfg.workers;
    for (k, v) in [
        ("pretrain", cfg.pretrain.seed),
        ("finetune", cfg.finetune.seed),
        ("quality", cfg.quality.seed),
    ] {
        manifest.seeds.insert(k.into(), v);
    }
    with_workers(cfg.workers, || {
        commands::dispatch(command, cfg, &mut manifest)
    })?;
    Ok(manifest)
}

/// Re-runs a recorded command with its recorded config. Inputs must be
/// unchanged; outputs must come out with the recorded digests.
pub fn replay(path: &Path) -> Result<Manifest> {
    let recorded = Manifest::load(path)?;
    recorded.check_inputs()?;
    let command: Command = serde_json::from_value(recorded.command.clone())
        .map_err(|e| Error::format("manifest", format!("command: {e}")))?;
    let cfg = Config::from_toml_str(&recorded.config, &[])?;
    let fresh = execute(&command, &cfg)?;
    recorded.check_outputs()?;
    if fresh.outputs.len() != recorded.outputs.len() {
        return Err(Error::ReplayMismatch {
            path: path.display().to_string(),
            expected: format!("{} outputs", recorded.outputs.len()),
            found: format!("{} outputs", fresh.outputs.len()),
        });
    }
    log::info!(
        "replay of {} reproduced {} outputs",
        path.display(),
        fresh.outputs.len()
    );
    Ok(fresh)
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Replay { manifest } = &cli.command {
        replay(manifest)?;
        return Ok(());
    }
    let cfg = load_config(&cli)?;
    let mut command = cli.command.clone();
    command.resolve_outputs();
    let manifest = execute(&command, &cfg)?;
    let target = cli
        .manifest
        .clone()
        .map(|p| artifact_path(&p))
        .or_else(|| command.default_manifest());
    if let Some(path) = target {
        if !manifest.outputs.is_empty() {
            manifest.save(&path)?;
            log::info!("manifest written to {}", path.display());
        }
    }
    Ok(())
}
