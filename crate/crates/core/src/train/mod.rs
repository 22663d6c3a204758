//! Pre-training and instruction tuning: packing, schedule, AdamW, masked
//! loss, NEFTune and the training loop.

mod chat;
mod loss;
mod neftune;
mod optim;
mod pack;
mod schedule;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use chat::{render_chat, render_chat_ids, ChatExample, RenderOptions, RenderedChat};
pub(crate) use loss::nll;
pub use loss::{lm_loss, loss_and_grad};
pub(crate) use neftune::add_neftune_noise;
pub use neftune::{neftune_bound, neftune_epsilon, neftune_noise};
pub use optim::{adamw_step, AdamW, OptimizerState};
pub use pack::{pack_tokens, pack_tokens_with, PackedBatch, Remainder};
pub use schedule::{lr_at, Schedule};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{
    backward, forward, forward_cached, save_checkpoint, Checkpoint, ForwardOptions, Parameters,
    Scalar,
};

/// One training sequence: model inputs, next-token targets and the loss mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub targets: Vec<u32>,
    pub mask: Vec<bool>,
}

impl Example {
    /// Position `i` predicts `ids[i + 1]` when `is_target[i + 1]` is set;
    /// the last position predicts nothing.
    pub fn next_token(ids: Vec<u32>, is_target: &[bool]) -> Self {
        let n = ids.len();
        let mut targets = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for i in 0..n {
            if i + 1 < n {
                targets.push(ids[i + 1]);
                mask.push(is_target[i + 1]);
            } else {
                targets.push(0);
                mask.push(false);
            }
        }
        Self {
            tokens: ids,
            targets,
            mask,
        }
    }

    pub fn from_chat(chat: &RenderedChat) -> Self {
        Self::next_token(chat.ids.clone(), &chat.targets)
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub effective_batch: usize,
    pub micro_batch: usize,
    pub grad_accum_steps: usize,
    /// Data-parallel replicas of the original run; here they are folded
    /// into sequential accumulation.
    pub data_shards: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
    pub block_len: usize,
    pub remainder: Remainder,
    /// NEFTune strength; 0 turns it off.
    pub neftune_alpha: f64,
    /// Worker threads, 0 for the default pool.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self {
            total_steps: 24000,
            checkpoint_every: 3200,
            effective_batch: 1024,
            micro_batch: 8,
            grad_accum_steps: 32,
            data_shards: 4,
            peak_lr: 1e-3,
            warmup_steps: 750,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 0.1,
            dropout: 0.1,
            seed: 0,
            block_len: 2048,
            remainder: Remainder::Pad,
            neftune_alpha: 0.0,
            workers: 0,
        }
    }

    pub fn finetune() -> Self {
        Self {
            total_steps: 890,
            checkpoint_every: 890,
            effective_batch: 256,
            data_shards: 1,
            peak_lr: 1e-4,
            warmup_steps: 50,
            weight_decay: 0.01,
            neftune_alpha: 5.0,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if self.micro_batch == 0 || self.grad_accum_steps == 0 || self.data_shards == 0 {
            return bad("micro_batch, grad_accum_steps and data_shards must be positive".into());
        }
        let product = self.micro_batch * self.grad_accum_steps * self.data_shards;
        if self.effective_batch != product {
            return bad(format!(
                "effective_batch {} != micro_batch {} x grad_accum_steps {} x data_shards {}",
                self.effective_batch, self.micro_batch, self.grad_accum_steps, self.data_shards
            ));
        }
        if self.total_steps == 0 || self.warmup_steps >= self.total_steps {
            return bad(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if self.checkpoint_every == 0 || self.block_len == 0 {
            return bad("checkpoint_every and block_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || self.neftune_alpha < 0.0 {
            return bad("dropout must lie in [0, 1) and neftune_alpha be non-negative".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            peak_lr: self.peak_lr,
            warmup_steps: self.warmup_steps,
            total_steps: self.total_steps,
        }
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Tokens the model sees over the whole run at full block length.
    pub fn planned_tokens(&self) -> u64 {
        self.total_steps * self.effective_batch as u64 * self.block_len as u64
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-example seed for dropout and noise.
fn example_seed(seed: u64, step: u64, index: usize) -> u64 {
    splitmix(splitmix(seed ^ splitmix(step)) ^ index as u64)
}

const GRAD_CHUNK: usize = 2;

/// Summed loss, counted positions and the gradient of `loss_sum / normalizer`
/// over `examples`. Per-chunk gradients are reduced in input order, so the
/// result does not depend on the execution mode.
pub fn batch_gradients<T: Scalar>(
    params: &Parameters<T>,
    examples: &[&Example],
    normalizer: f64,
    opts: &[ForwardOptions],
    exec: Exec,
) -> Result<(f64, usize, Parameters<T>)> {
    debug_assert_eq!(examples.len(), opts.len());
    let idx: Vec<usize> = (0..examples.len()).collect();
    let partials = exec.map_chunks(
        &idx,
        GRAD_CHUNK,
        |chunk| -> Result<(f64, usize, Parameters<T>)> {
            let mut grads = params.zeros_like();
            let mut sum = 0.0;
            let mut count = 0;
            for &i in chunk {
                let ex = examples[i];
                let (out, cache) = forward_cached(params, &ex.tokens, &opts[i])?;
                let (s, c, dl) =
                    loss_and_grad(&out.logits, &ex.targets, &ex.mask, Some(normalizer))?;
                sum += s;
                count += c;
                if c > 0 {
                    backward(params, &cache, &dl.expect("normalizer given"), &mut grads);
                }
            }
            Ok((sum, count, grads))
        },
    );
    let mut total = params.zeros_like();
    let (mut sum, mut count) = (0.0, 0);
    for p in partials {
        let (s, c, g) = p?;
        sum += s;
        count += c;
        total.add_assign(&g);
    }
    Ok((sum, count, total))
}

/// Mean masked loss with dropout and noise off.
pub fn eval_loss<T: Scalar>(
    params: &Parameters<T>,
    examples: &[Example],
    exec: Exec,
) -> Result<f64> {
    let parts = exec.map(examples, |ex| -> Result<(f64, usize)> {
        let out = forward(params, &ex.tokens, &ForwardOptions::eval())?;
        let (s, c, _) = loss_and_grad(&out.logits, &ex.targets, &ex.mask, None)?;
        Ok((s, c))
    });
    let (mut sum, mut count) = (0.0, 0);
    for p in parts {
        let (s, c) = p?;
        sum += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub seen_tokens: u64,
    pub lr: f64,
    pub loss: f64,
}

pub const LOSS_LOG_HEADER: &str = "step\tseen_tokens\tlr\tloss";

impl StepLog {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{:e}\t{:.6}",
            self.step, self.seen_tokens, self.lr, self.loss
        )
    }
}

/// Parameters, optimizer state and progress of a run.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub params: Parameters<T>,
    pub optimizer: OptimizerState<T>,
    pub step: u64,
    pub seen_tokens: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn fresh(params: Parameters<T>) -> Self {
        let optimizer = OptimizerState::new(&params);
        Self {
            params,
            optimizer,
            step: 0,
            seen_tokens: 0,
        }
    }

    pub fn to_checkpoint(&self, phase: Phase, cfg: &TrainConfig) -> Checkpoint<T> {
        let mut meta = BTreeMap::new();
        meta.insert("phase".into(), serde_json::to_value(phase).expect("enum"));
        meta.insert("seen_tokens".into(), self.seen_tokens.into());
        meta.insert(
            "train_config".into(),
            serde_json::to_value(cfg.fingerprint()).expect("config"),
        );
        Checkpoint {
            seed: cfg.seed,
            step: self.step,
            meta,
            params: self.params.clone(),
            extra: self.optimizer.to_named(),
        }
    }

    /// Restores a run from a checkpoint written by [`train_loop`] under the
    /// same training config.
    pub fn from_checkpoint(ckpt: Checkpoint<T>, phase: Phase, cfg: &TrainConfig) -> Result<Self> {
        let stored_phase = ckpt
            .meta
            .get("phase")
            .cloned()
            .map(serde_json::from_value::<Phase>);
        if !matches!(stored_phase, Some(Ok(p)) if p == phase) {
            return Err(Error::ResumeMismatch(format!(
                "checkpoint is not a {phase:?} checkpoint"
            )));
        }
        if ckpt.seed != cfg.seed {
            return Err(Error::ResumeMismatch(format!(
                "seed {} != {}",
                ckpt.seed, cfg.seed
            )));
        }
        let expected = serde_json::to_value(cfg.fingerprint()).expect("config");
        if ckpt.meta.get("train_config") != Some(&expected) {
            return Err(Error::ResumeMismatch(
                "training config differs from the checkpointed run".into(),
            ));
        }
        if ckpt.step > cfg.total_steps {
            return Err(Error::ResumeMismatch(format!(
                "checkpoint step {} beyond total_steps {}",
                ckpt.step, cfg.total_steps
            )));
        }
        let optimizer = OptimizerState::from_named(&ckpt.params, &ckpt.extra)?;
        if optimizer.step != ckpt.step {
            return Err(Error::ResumeMismatch(
                "optimizer step disagrees with checkpoint step".into(),
            ));
        }
        let seen_tokens = ckpt
            .meta
            .get("seen_tokens")
            .and_then(|v| v.as_u64())
            .unwrap_or(0);
        Ok(Self {
            params: ckpt.params,
            optimizer,
            step: ckpt.step,
            seen_tokens,
        })
    }
}

impl TrainConfig {
    /// The config with fields that do not affect results cleared.
    fn fingerprint(&self) -> TrainConfig {
        TrainConfig {
            workers: 0,
            checkpoint_every: 0,
            ..self.clone()
        }
    }
}

/// Deterministic epoch-wise shuffled sample order.
struct Sampler {
    n: usize,
    seed: u64,
    epoch: Option<usize>,
    order: Vec<usize>,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            epoch: None,
            order: Vec::new(),
        }
    }

    fn get(&mut self, k: u64) -> usize {
        let epoch = (k / self.n as u64) as usize;
        if self.epoch != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch as u64 + 2);
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut rng);
            self.epoch = Some(epoch);
        }
        self.order[(k % self.n as u64) as usize]
    }
}

/// Where a run writes its loss log and checkpoints.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
}

impl RunOutput {
    pub fn loss_log(&self) -> PathBuf {
        self.dir.join("loss.tsv")
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.dir.join(format!("step-{step:06}.ckpt"))
    }

    fn open_log(&self, resume_step: u64) -> Result<fs::File> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.loss_log();
        let mut kept = String::from(LOSS_LOG_HEADER);
        kept.push('\n');
        if resume_step > 0 {
            if let Ok(old) = fs::read_to_string(&path) {
                for line in old.lines().skip(1) {
                    let step: u64 = line
                        .split('\t')
                        .next()
                        .and_then(|s| s.parse().ok())
                        .unwrap_or(u64::MAX);
                    if step <= resume_step {
                        kept.push_str(line);
                        kept.push('\n');
                    }
                }
            }
        }
        fs::write(&path, kept).map_err(|e| Error::io(&path, e))?;
        fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub state: TrainState<T>,
    pub log: Vec<StepLog>,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs optimizer steps `state.step + 1 ..= total_steps`. Each step draws
/// `effective_batch` examples from a seeded per-epoch shuffle, accumulates
/// gradients over micro-batches normalized by the step's total target
/// count, and applies AdamW at `lr_at(step)`. Checkpoints are written every
/// `checkpoint_every` steps and at the last step.
pub fn train_loop<T: Scalar>(
    mut state: TrainState<T>,
    examples: &[Example],
    cfg: &TrainConfig,
    phase: Phase,
    out: Option<&RunOutput>,
    exec: Exec,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::TrainingSet("no training examples".into()));
    }
    if examples.iter().all(|e| e.count() == 0) {
        return Err(Error::EmptyLoss);
    }
    state.params.config.dropout_p = cfg.dropout;
    state.params.config.validate()?;
    let schedule = cfg.schedule();
    let adamw = cfg.adamw();
    let mut sampler = Sampler::new(examples.len(), cfg.seed);
    let mut log_file = match out {
        Some(o) => Some(o.open_log(state.step)?),
        None => None,
    };
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();

    while state.step < cfg.total_steps {
        let step = state.step + 1;
        let first = state.step * cfg.effective_batch as u64;
        let batch: Vec<&Example> = (0..cfg.effective_batch as u64)
            .map(|k| &examples[sampler.get(first + k)])
            .collect();
        let normalizer = batch.iter().map(|e| e.count()).sum::<usize>();
        let mut grads = state.params.zeros_like();
        let (mut loss_sum, mut count) = (0.0, 0usize);
        if normalizer > 0 {
            for (mi, micro) in batch.chunks(cfg.micro_batch).enumerate() {
                let padded = micro.iter().map(|e| e.tokens.len()).max().unwrap_or(0);
                let opts: Vec<ForwardOptions> = (0..micro.len())
                    .map(|j| ForwardOptions {
                        training: true,
                        seed: example_seed(cfg.seed, step, mi * cfg.micro_batch + j),
                        neftune_alpha: cfg.neftune_alpha,
                        neftune_len: Some(padded),
                        ..ForwardOptions::default()
                    })
                    .collect();
                let (s, c, g) =
                    batch_gradients(&state.params, micro, normalizer as f64, &opts, exec)?;
                loss_sum += s;
                count += c;
                grads.add_assign(&g);
            }
        }
        let lr = lr_at(step, &schedule)?;
        let loss = if count > 0 {
            loss_sum / count as f64
        } else {
            f64::NAN
        };
        if count > 0 && !loss.is_finite() {
            return Err(Error::NonFiniteGrad(format!("loss at step {step}")));
        }
        adamw_step(&mut state.params, &grads, &mut state.optimizer, lr, &adamw)?;
        state.step = step;
        state.seen_tokens += batch.iter().map(|e| e.tokens.len() as u64).sum::<u64>();

        let entry = StepLog {
            step,
            seen_tokens: state.seen_tokens,
            lr,
            loss,
        };
        if step.is_multiple_of(10) || step == cfg.total_steps {
            log::info!("{phase:?} step {step}: loss {loss:.4} lr {lr:.3e}");
        } else {
            log::debug!("{phase:?} step {step}: loss {loss:.4} lr {lr:.3e}");
        }
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", entry.to_tsv())
                .map_err(|e| Error::io(out.expect("open").loss_log(), e))?;
        }
        log.push(entry);

        if let Some(o) = out {
            if step.is_multiple_of(cfg.checkpoint_every) || step == cfg.total_steps {
                let path = o.checkpoint(step);
                save_checkpoint(&path, &state.to_checkpoint(phase, cfg))?;
                checkpoints.push(path);
            }
        }
    }
    Ok(TrainOutcome {
        state,
        log,
        checkpoints,
    })
}

/// Causal-LM pre-training over packed blocks.
pub fn pretrain<T: Scalar>(
    state: TrainState<T>,
    blocks: &PackedBatch,
    cfg: &TrainConfig,
    out: Option<&RunOutput>,
    exec: Exec,
) -> Result<TrainOutcome<T>> {
    train_loop(state, &blocks.examples(), cfg, Phase::Pretrain, out, exec)
}

/// Instruction tuning on rendered chats with assistant-only loss.
pub fn finetune<T: Scalar>(
    state: TrainState<T>,
    chats: &[RenderedChat],
    cfg: &TrainConfig,
    out: Option<&RunOutput>,
    exec: Exec,
) -> Result<TrainOutcome<T>> {
    let examples: Vec<Example> = chats.iter().map(Example::from_chat).collect();
    train_loop(state, &examples, cfg, Phase::Finetune, out, exec)
}

/// Loads the checkpoint at `path` for resuming.
pub fn resume_state<T: Scalar>(
    path: &Path,
    phase: Phase,
    cfg: &TrainConfig,
) -> Result<TrainState<T>> {
    TrainState::from_checkpoint(crate::model::load_checkpoint(path)?, phase, cfg)
}
