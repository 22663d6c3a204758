use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slm_core::model::{init_params, ModelConfig, Precision};
use slm_core::train::{train_loop, Example, Phase, TrainConfig, TrainState};
use slm_core::Exec;

/// Schedule value written out directly.
pub fn cosine_lr(step: u64, peak: f64, warmup: u64, total: u64) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let t = (step - warmup) as f64 / (total - warmup) as f64;
    peak * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
}

pub fn overfit_model() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 32,
        d_ff: 128,
        head_dim: 8,
        n_heads: 4,
        kv_groups: 2,
        vocab_size: 64,
        max_seq: 32,
        dropout_p: 0.0,
        precision: Precision::F32,
        ..ModelConfig::default()
    }
}

/// 32 random 32-token blocks with distinct first tokens, every position a
/// target.
pub fn memorization_blocks(seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut firsts: Vec<u32> = (0..64).collect();
    firsts.shuffle(&mut rng);
    (0..32)
        .map(|b| {
            let mut ids = vec![firsts[b]];
            ids.extend((1..32).map(|_| rng.random_range(0..64u32)));
            Example::next_token(ids, &[true; 32])
        })
        .collect()
}

pub fn overfit_train_config(steps: u64) -> TrainConfig {
    TrainConfig {
        total_steps: steps,
        checkpoint_every: steps,
        effective_batch: 32,
        micro_batch: 32,
        grad_accum_steps: 1,
        data_shards: 1,
        peak_lr: 1e-2,
        warmup_steps: 20,
        weight_decay: 0.0,
        dropout: 0.0,
        seed: 5,
        block_len: 32,
        neftune_alpha: 0.0,
        ..TrainConfig::pretrain()
    }
}

/// Per-step training losses of the memorization run.
pub fn overfit_losses(steps: u64) -> Vec<f64> {
    let params = init_params::<f32>(&overfit_model(), 3).unwrap();
    let out = train_loop(
        TrainState::fresh(params),
        &memorization_blocks(9),
        &overfit_train_config(steps),
        Phase::Pretrain,
        None,
        Exec::default(),
    )
    .unwrap();
    out.log.iter().map(|l| l.loss).collect()
}

pub mod chat {
    use slm_core::corpus::{Cleaner, CleaningConfig};
    use slm_core::segment::{Lexicon, LongestMatch};
    use slm_core::tokenizer::{Tokenizer, Vocabulary, CHAT_SPECIALS};
    use slm_core::train::ChatExample;

    /// Five single-character pieces: あ=4 い=5 う=6 え=7 お=8; then
    /// <|system|>=9 <|user|>=10 <|assistant|>=11.
    pub fn tokenizer() -> Tokenizer {
        let pieces = "あいうえお"
            .chars()
            .map(|c| (c.to_string(), -1.6))
            .collect();
        let vocab = Vocabulary::from_pieces(pieces)
            .unwrap()
            .extend_specials(&CHAT_SPECIALS)
            .unwrap();
        Tokenizer::new(
            Cleaner::new(&CleaningConfig::default()).unwrap(),
            Box::new(LongestMatch::new(Lexicon::default())),
            vocab,
        )
    }

    pub fn examples() -> Vec<ChatExample> {
        vec![
            ChatExample {
                system: "あ".into(),
                user: "いう".into(),
                assistant: "えお".into(),
            },
            ChatExample {
                system: String::new(),
                user: "おおい".into(),
                assistant: "う".into(),
            },
        ]
    }

    /// Token ids and the index of the first assistant token, laid out by hand.
    pub fn expected() -> Vec<(Vec<u32>, usize)> {
        vec![
            (vec![0, 9, 4, 10, 5, 6, 11, 7, 8, 1], 7),
            (vec![0, 9, 10, 8, 8, 5, 11, 6, 1], 7),
        ]
    }
}
