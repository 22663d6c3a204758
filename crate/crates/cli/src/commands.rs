use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use slm_core::analysis::{
    analogy_with, export_attention, export_embeddings, write_attention_export,
    write_embedding_export, EmbeddingTable, TokenFilter,
};
use slm_core::config::Config;
use slm_core::corpus::{clean_corpus, dedup_corpus, CleanDocument, Cleaner, RawDocument};
use slm_core::eval::{format_report, perplexity, run_task, TaskResult};
use slm_core::exec::with_workers;
use slm_core::io::{read_jsonl, write_json_pretty, write_jsonl};
use slm_core::manifest::Manifest;
use slm_core::model::{
    init_params, load_checkpoint, read_checkpoint_header, Parameters, Precision, Scalar,
};
use slm_core::quality::{
    extract_feature, load_forest, rf_predict, rf_train, save_forest, LabelRecord, QualityLabel,
    QualityPrediction,
};
use slm_core::segment::{Lexicon, LongestMatch, Segmenter};
use slm_core::tokenizer::{word_counts, DecodeOptions, Tokenizer, Vocabulary, CHAT_SPECIALS};
use slm_core::train::{
    finetune, pack_tokens_with, pretrain, render_chat, resume_state, ChatExample, Phase,
    RenderOptions, RunOutput, TrainConfig, TrainOutcome, TrainState,
};
use slm_core::{Error, Exec, Result};

use crate::{AnalyzeCommand, Command, EvalArgs, QualityCommand, TokenizerCommand};

pub(crate) fn dispatch(command: &Command, cfg: &Config, m: &mut Manifest) -> Result<()> {
    let exec = cfg.exec();
    match command {
        Command::Clean {
            input,
            output,
            report,
        } => {
            let docs: Vec<RawDocument> = read_jsonl(input)?;
            m.add_input(input)?;
            let (kept, rep) = clean_corpus(&docs, &cfg.cleaning, exec)?;
            log::info!(
                "clean: kept {} of {} documents",
                rep.kept,
                rep.input_count()
            );
            write_jsonl(output, &kept)?;
            m.add_output(output)?;
            if let Some(r) = report {
                write_json_pretty(r, &rep)?;
                m.add_output(r)?;
            }
        }
        Command::Dedup {
            input,
            output,
            report,
        } => {
            let docs: Vec<CleanDocument> = read_jsonl(input)?;
            m.add_input(input)?;
            let (kept, rep) = dedup_corpus(docs, &cfg.dedup);
            log::info!(
                "dedup: kept {} of {} documents",
                rep.kept,
                rep.input_count()
            );
            write_jsonl(output, &kept)?;
            m.add_output(output)?;
            if let Some(r) = report {
                write_json_pretty(r, &rep)?;
                m.add_output(r)?;
            }
        }
        Command::Tokenizer(t) => tokenizer(t, cfg, m)?,
        Command::Pretrain {
            corpus,
            vocab,
            out,
            resume,
            steps,
        } => {
            let mut tc = cfg.pretrain.clone();
            if let Some(s) = steps {
                tc.total_steps = *s;
            }
            let p = match resume {
                Some(r) => checkpoint_precision(r)?,
                None => cfg.model.precision,
            };
            let run = || match p {
                Precision::F32 => {
                    pretrain_run::<f32>(cfg, &tc, corpus, vocab, out, resume.as_deref(), m)
                }
                Precision::F64 => {
                    pretrain_run::<f64>(cfg, &tc, corpus, vocab, out, resume.as_deref(), m)
                }
            };
            with_workers(tc.workers, run)?;
        }
        Command::Finetune {
            base,
            vocab,
            chats,
            out,
            resume,
            steps,
        } => {
            let mut tc = cfg.finetune.clone();
            if let Some(s) = steps {
                tc.total_steps = *s;
            }
            let job = FinetuneJob {
                base,
                vocab,
                chats,
                out,
                resume: resume.as_deref(),
            };
            let run = || match checkpoint_precision(resume.as_deref().unwrap_or(base))? {
                Precision::F32 => finetune_run::<f32>(cfg, &tc, &job, m),
                Precision::F64 => finetune_run::<f64>(cfg, &tc, &job, m),
            };
            with_workers(tc.workers, run)?;
        }
        Command::Quality(q) => {
            let ckpt = match q {
                QualityCommand::Train { checkpoint, .. }
                | QualityCommand::Apply { checkpoint, .. } => checkpoint,
            };
            match checkpoint_precision(ckpt)? {
                Precision::F32 => quality::<f32>(q, cfg, m)?,
                Precision::F64 => quality::<f64>(q, cfg, m)?,
            }
        }
        Command::Eval(args) => eval(args, cfg, m)?,
        Command::Analyze(a) => {
            let ckpt = match a {
                AnalyzeCommand::Analogy { checkpoint, .. }
                | AnalyzeCommand::EmbedExport { checkpoint, .. }
                | AnalyzeCommand::AttnExport { checkpoint, .. } => checkpoint,
            };
            match checkpoint_precision(ckpt)? {
                Precision::F32 => analyze::<f32>(a, cfg, m)?,
                Precision::F64 => analyze::<f64>(a, cfg, m)?,
            }
        }
        Command::Replay { .. } => return Err(Error::Config("replay cannot be nested".into())),
    }
    Ok(())
}

fn checkpoint_precision(path: &Path) -> Result<Precision> {
    match read_checkpoint_header(path)?.dtype.as_str() {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(Error::format(
            "checkpoint",
            format!("unknown dtype {other}"),
        )),
    }
}

fn segmenter(cfg: &Config, m: &mut Manifest) -> Result<Box<dyn Segmenter>> {
    Ok(match &cfg.segmenter.lexicon {
        Some(p) => {
            m.add_input(p)?;
            Box::new(LongestMatch::new(Lexicon::load(p)?))
        }
        None => Box::new(LongestMatch::default()),
    })
}

fn load_vocab(path: &Path, m: &mut Manifest) -> Result<Vocabulary> {
    m.add_input(path)?;
    Vocabulary::load(path)
}

fn build_tokenizer(cfg: &Config, vocab: Vocabulary, m: &mut Manifest) -> Result<Tokenizer> {
    Ok(Tokenizer::new(
        Cleaner::new(&cfg.cleaning)?,
        segmenter(cfg, m)?,
        vocab,
    ))
}

fn load_params<T: Scalar>(
    path: &Path,
    vocab: &Vocabulary,
    m: &mut Manifest,
) -> Result<Parameters<T>> {
    m.add_input(path)?;
    let params = load_checkpoint::<T>(path)?.params;
    if params.config.vocab_size != vocab.size() {
        return Err(Error::DimensionMismatch {
            expected: vocab.size(),
            found: params.config.vocab_size,
        });
    }
    Ok(params)
}

fn write_text(path: &Path, text: &str, m: &mut Manifest) -> Result<()> {
    slm_core::io::ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    m.add_output(path)
}

fn tokenizer(t: &TokenizerCommand, cfg: &Config, m: &mut Manifest) -> Result<()> {
    match t {
        TokenizerCommand::Train { corpus, output } => {
            let docs: Vec<CleanDocument> = read_jsonl(corpus)?;
            m.add_input(corpus)?;
            let seg = segmenter(cfg, m)?;
            let words = word_counts(&docs, seg.as_ref(), None);
            log::info!("tokenizer: {} distinct words", words.len());
            let vocab =
                slm_core::tokenizer::train_unigram_with(&words, &cfg.tokenizer, cfg.exec())?;
            log::info!("tokenizer: vocabulary of {}", vocab.size());
            vocab.save(output)?;
            m.add_output(output)?;
        }
        TokenizerCommand::Encode {
            vocab,
            text,
            input,
            output,
        } => {
            let tok = build_tokenizer(cfg, load_vocab(vocab, m)?, m)?;
            let lines: Vec<String> = match (text, input) {
                (Some(t), _) => vec![t.clone()],
                (None, Some(p)) => {
                    m.add_input(p)?;
                    fs::read_to_string(p)
                        .map_err(|e| Error::io(p, e))?
                        .lines()
                        .map(String::from)
                        .collect()
                }
                (None, None) => return Err(Error::Config("encode needs --text or --input".into())),
            };
            let mut out = String::new();
            for ids in tok.encode_batch(&lines, cfg.exec()) {
                let s: Vec<String> = ids.iter().map(u32::to_string).collect();
                out.push_str(&s.join(" "));
                out.push('\n');
            }
            match output {
                Some(p) => write_text(p, &out, m)?,
                None => print!("{out}"),
            }
        }
        TokenizerCommand::Decode {
            vocab,
            ids,
            strip_specials,
            output,
        } => {
            let v = load_vocab(vocab, m)?;
            let ids: Vec<u32> = ids
                .split_whitespace()
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::format("token ids", format!("{s:?} is not an id")))
                })
                .collect::<Result<_>>()?;
            let opts = DecodeOptions {
                strip_specials: *strip_specials,
                ..DecodeOptions::default()
            };
            let text = slm_core::tokenizer::decode(&v, &ids, opts)?;
            match output {
                Some(p) => write_text(p, &text, m)?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}

fn record_outcome<T>(outcome: &TrainOutcome<T>, out: &RunOutput, m: &mut Manifest) -> Result<()> {
    m.add_output(&out.loss_log())?;
    for c in &outcome.checkpoints {
        m.add_output(c)?;
    }
    if let Some(last) = outcome.log.last() {
        log::info!("finished at step {} with loss {:.4}", last.step, last.loss);
    }
    Ok(())
}

fn pretrain_run<T: Scalar>(
    cfg: &Config,
    tc: &TrainConfig,
    corpus: &Path,
    vocab: &Path,
    out: &Path,
    resume: Option<&Path>,
    m: &mut Manifest,
) -> Result<()> {
    let tok = build_tokenizer(cfg, load_vocab(vocab, m)?, m)?;
    let docs: Vec<CleanDocument> = read_jsonl(corpus)?;
    m.add_input(corpus)?;
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let ids = cfg.exec().map(&texts, |t| tok.encode_clean(t));
    let blocks = pack_tokens_with(&ids, tc.block_len, tc.remainder);
    log::info!(
        "pretrain: {} documents, {} blocks of {}",
        docs.len(),
        blocks.len(),
        tc.block_len
    );
    let mut mc = cfg.model.clone();
    if mc.vocab_size != tok.vocab().size() {
        log::warn!(
            "model.vocab_size {} replaced by the vocabulary size {}",
            mc.vocab_size,
            tok.vocab().size()
        );
        mc.vocab_size = tok.vocab().size();
    }
    if tc.block_len > mc.max_seq {
        return Err(Error::Config(format!(
            "block_len {} exceeds model.max_seq {}",
            tc.block_len, mc.max_seq
        )));
    }
    let state = match resume {
        Some(r) => {
            m.add_input(r)?;
            resume_state::<T>(r, Phase::Pretrain, tc)?
        }
        None => TrainState::fresh(init_params::<T>(&mc, tc.seed)?),
    };
    let run = RunOutput {
        dir: out.to_path_buf(),
    };
    let outcome = pretrain(state, &blocks, tc, Some(&run), cfg.exec())?;
    record_outcome(&outcome, &run, m)
}

struct FinetuneJob<'a> {
    base: &'a Path,
    vocab: &'a Path,
    chats: &'a Path,
    out: &'a Path,
    resume: Option<&'a Path>,
}

fn finetune_run<T: Scalar>(
    cfg: &Config,
    tc: &TrainConfig,
    job: &FinetuneJob,
    m: &mut Manifest,
) -> Result<()> {
    let base_vocab = load_vocab(job.vocab, m)?;
    let vocab = base_vocab.extend_specials(&CHAT_SPECIALS)?;
    let vocab_out = job.out.join("vocab.txt");
    vocab.save(&vocab_out)?;
    m.add_output(&vocab_out)?;
    let tok = build_tokenizer(cfg, vocab, m)?;
    let chats: Vec<ChatExample> = read_jsonl(job.chats)?;
    m.add_input(job.chats)?;
    let rendered = chats
        .iter()
        .map(|c| render_chat(c, &tok, RenderOptions::default()))
        .collect::<Result<Vec<_>>>()?;
    let state = match job.resume {
        Some(r) => {
            m.add_input(r)?;
            resume_state::<T>(r, Phase::Finetune, tc)?
        }
        None => {
            let base = load_params::<T>(job.base, &base_vocab, m)?;
            TrainState::fresh(base.extend_vocab(tok.vocab().size(), tc.seed)?)
        }
    };
    let run = RunOutput {
        dir: job.out.to_path_buf(),
    };
    let outcome = finetune(state, &rendered, tc, Some(&run), cfg.exec())?;
    record_outcome(&outcome, &run, m)
}

fn features<T: Scalar>(
    params: &Parameters<T>,
    tok: &Tokenizer,
    docs: &[&CleanDocument],
    exec: Exec,
) -> Result<Vec<Vec<f64>>> {
    exec.map(docs, |d| {
        extract_feature(params, &tok.encode_clean(&d.text))
            .map_err(|e| Error::format("document", format!("{}: {e}", d.id)))
    })
    .into_iter()
    .collect()
}

fn quality<T: Scalar>(q: &QualityCommand, cfg: &Config, m: &mut Manifest) -> Result<()> {
    let exec = cfg.exec();
    match q {
        QualityCommand::Train {
            checkpoint,
            vocab,
            docs,
            labels,
            output,
        } => {
            let tok = build_tokenizer(cfg, load_vocab(vocab, m)?, m)?;
            let params = load_params::<T>(checkpoint, tok.vocab(), m)?;
            let all: Vec<CleanDocument> = read_jsonl(docs)?;
            m.add_input(docs)?;
            let records: Vec<LabelRecord> = read_jsonl(labels)?;
            m.add_input(labels)?;
            let by_id: HashMap<&str, &CleanDocument> =
                all.iter().map(|d| (d.id.as_str(), d)).collect();
            let selected = records
                .iter()
                .map(|r| {
                    by_id.get(r.id.as_str()).copied().ok_or_else(|| {
                        Error::format("label file", format!("no document with id {:?}", r.id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let x = features(&params, &tok, &selected, exec)?;
            let y: Vec<QualityLabel> = records.iter().map(|r| r.label).collect();
            let forest = rf_train(&x, &y, &cfg.quality, exec)?;
            save_forest(output, &forest)?;
            m.add_output(output)?;
        }
        QualityCommand::Apply {
            checkpoint,
            vocab,
            forest,
            docs,
            output,
            kept,
        } => {
            let tok = build_tokenizer(cfg, load_vocab(vocab, m)?, m)?;
            let params = load_params::<T>(checkpoint, tok.vocab(), m)?;
            m.add_input(forest)?;
            let forest = load_forest(forest)?;
            let all: Vec<CleanDocument> = read_jsonl(docs)?;
            m.add_input(docs)?;
            let refs: Vec<&CleanDocument> = all.iter().collect();
            let x = features(&params, &tok, &refs, exec)?;
            let mut preds = Vec::with_capacity(all.len());
            for (d, v) in all.iter().zip(&x) {
                let (label, probability) = rf_predict(&forest, v)?;
                preds.push(QualityPrediction {
                    id: d.id.clone(),
                    label,
                    probability,
                });
            }
            let n_high = preds
                .iter()
                .filter(|p| p.label == QualityLabel::High)
                .count();
            log::info!(
                "quality: {n_high} of {} documents predicted high",
                preds.len()
            );
            write_jsonl(output, &preds)?;
            m.add_output(output)?;
            if let Some(k) = kept {
                let keep: Vec<&CleanDocument> = all
                    .iter()
                    .zip(&preds)
                    .filter(|(_, p)| p.label == QualityLabel::High)
                    .map(|(d, _)| d)
                    .collect();
                write_jsonl(k, &keep)?;
                m.add_output(k)?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct DocPerplexity {
    id: String,
    tokens: usize,
    perplexity: f64,
}

#[derive(Serialize)]
struct PerplexityReport {
    documents: Vec<DocPerplexity>,
    /// Token-weighted over all documents.
    aggregate: f64,
}

#[derive(Serialize)]
struct EvalReport {
    tasks: Vec<TaskResult>,
    perplexity: Option<PerplexityReport>,
}

fn perplexity_report<T: Scalar>(
    cfg: &Config,
    ckpt: &Path,
    vocab: &Path,
    text: &Path,
    m: &mut Manifest,
) -> Result<PerplexityReport> {
    let tok = build_tokenizer(cfg, load_vocab(vocab, m)?, m)?;
    let params = load_params::<T>(ckpt, tok.vocab(), m)?;
    let docs: Vec<CleanDocument> = read_jsonl(text)?;
    m.add_input(text)?;
    let scored = cfg.exec().map(&docs, |d| {
        let ids = tok.encode_clean(&d.text);
        perplexity(&params, &ids).map(|p| DocPerplexity {
            id: d.id.clone(),
            tokens: ids.len(),
            perplexity: p,
        })
    });
    let documents = scored.into_iter().collect::<Result<Vec<_>>>()?;
    let predicted: usize = documents.iter().map(|d| d.tokens - 1).sum();
    let log_sum: f64 = documents
        .iter()
        .map(|d| d.perplexity.ln() * (d.tokens - 1) as f64)
        .sum();
    Ok(PerplexityReport {
        aggregate: (log_sum / predicted as f64).exp(),
        documents,
    })
}

fn eval(args: &EvalArgs, cfg: &Config, m: &mut Manifest) -> Result<()> {
    let mut tasks = Vec::new();
    for spec in &cfg.eval.tasks {
        m.add_input(&spec.data)?;
        m.add_input(&spec.predictions)?;
        tasks.push(run_task(spec)?);
    }
    let perplexity = match (&args.checkpoint, &args.vocab, &args.text) {
        (Some(c), Some(v), Some(t)) => Some(match checkpoint_precision(c)? {
            Precision::F32 => perplexity_report::<f32>(cfg, c, v, t, m)?,
            Precision::F64 => perplexity_report::<f64>(cfg, c, v, t, m)?,
        }),
        _ => None,
    };
    let mut table = format_report(&tasks);
    if let Some(p) = &perplexity {
        table.push_str(&format!("\nperplexity: {:.3}\n", p.aggregate));
    }
    print!("{table}");
    write_json_pretty(&args.output, &EvalReport { tasks, perplexity })?;
    m.add_output(&args.output)?;
    write_text(&args.output.with_extension("md"), &table, m)
}

fn parse_filter(s: &str) -> Result<TokenFilter> {
    Ok(match s {
        "all" => TokenFilter::All,
        "specials" => TokenFilter::SpecialsOnly,
        "pieces" => TokenFilter::PiecesOnly,
        ids => TokenFilter::Ids(
            ids.split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad token filter {s:?}")))
                })
                .collect::<Result<_>>()?,
        ),
    })
}

fn analyze<T: Scalar>(a: &AnalyzeCommand, cfg: &Config, m: &mut Manifest) -> Result<()> {
    match a {
        AnalyzeCommand::Analogy {
            checkpoint,
            vocab,
            a,
            b,
            c,
            k,
            include_query,
            output,
        } => {
            let v = load_vocab(vocab, m)?;
            let params = load_params::<T>(checkpoint, &v, m)?;
            let table = EmbeddingTable::from_params(&params, &v)?;
            let top = analogy_with(&table, a, b, c, *k, !include_query)?;
            for n in &top {
                println!("{}\t{:.4}", n.token, n.cosine);
            }
            if let Some(p) = output {
                write_json_pretty(p, &top)?;
                m.add_output(p)?;
            }
        }
        AnalyzeCommand::EmbedExport {
            checkpoint,
            vocab,
            filter,
            out,
        } => {
            let v = load_vocab(vocab, m)?;
            let params = load_params::<T>(checkpoint, &v, m)?;
            let export = export_embeddings(&params, &v, &parse_filter(filter)?)?;
            write_embedding_export(out, "embeddings", &export)?;
            for f in ["embeddings.mat", "embeddings.labels"] {
                m.add_output(&out.join(f))?;
            }
        }
        AnalyzeCommand::AttnExport {
            checkpoint,
            vocab,
            text,
            corpus,
            block,
            len,
            out,
        } => {
            let tok = build_tokenizer(cfg, load_vocab(vocab, m)?, m)?;
            let params = load_params::<T>(checkpoint, tok.vocab(), m)?;
            let mut tokens = match (text, corpus) {
                (Some(t), _) => tok.encode(t),
                (None, Some(p)) => {
                    let docs: Vec<CleanDocument> = read_jsonl(p)?;
                    m.add_input(p)?;
                    let ids: Vec<Vec<u32>> =
                        docs.iter().map(|d| tok.encode_clean(&d.text)).collect();
                    let packed =
                        pack_tokens_with(&ids, cfg.pretrain.block_len, cfg.pretrain.remainder);
                    packed.blocks.get(*block).cloned().ok_or_else(|| {
                        Error::Config(format!("block {block} of {} requested", packed.len()))
                    })?
                }
                (None, None) => {
                    return Err(Error::Config("attn-export needs --text or --corpus".into()))
                }
            };
            if let Some(l) = len {
                tokens.truncate(*l);
            }
            let export = export_attention(&params, &tokens)?;
            write_attention_export(out, &export)?;
            m.add_output(&out.join("attention.json"))?;
            for i in 0..export.layers.len() {
                m.add_output(&out.join(format!("layer-{i:02}.mat")))?;
            }
        }
    }
    Ok(())
}
