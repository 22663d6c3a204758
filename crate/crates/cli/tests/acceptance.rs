#[path = "common/mod.rs"]
mod cli_support;
#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slm_core::analysis::{export_attention, read_matrix, write_attention_export};
use slm_core::corpus::{clean_text, Cleaner, CleaningConfig};
use slm_core::eval::{
    accuracy, cohen_kappa, ner_f1, score_exam, ConfusionTable, Denominator, ExamQuestion, Gold,
    MatchMode,
};
use slm_core::manifest::Manifest;
use slm_core::model::ops::rope_apply;
use slm_core::model::{
    attention_gqa, count_params, forward, init_params, load_checkpoint, save_checkpoint,
    ForwardOptions, ModelConfig, Tensor,
};
use slm_core::tokenizer::{
    em_round, seed_pieces, DecodeOptions, TrainerParams, UnigramModel, Vocabulary, UNK_ID,
};
use slm_core::train::{
    lm_loss, loss_and_grad, lr_at, neftune_bound, neftune_epsilon, neftune_noise, render_chat,
    Example, RenderOptions, TrainConfig,
};
use slm_core::Exec;

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn c01_param_count() -> Result<String, String> {
    let cfg = ModelConfig::default();
    let n = count_params(&cfg);
    let (v, d, l, ff) = (cfg.vocab_size, cfg.d_model, cfg.n_layers, cfg.d_ff);
    let (q, kv) = (cfg.n_heads * cfg.head_dim, cfg.kv_groups * cfg.head_dim);
    let hand = (2 * v * d + l * (2 * d * q + 2 * d * kv + 2 * d * ff + 2 * d) + d) as u64;
    ensure!(n == 1_191_282_688, "count_params = {n}");
    ensure!(hand == n, "hand formula {hand} != {n}");
    ensure!(
        format!("{:.1}", n as f64 / 1e9) == "1.2",
        "{n} does not round to 1.2B"
    );
    Ok(format!("{n}"))
}

fn c02_seen_tokens() -> Result<String, String> {
    let tokens = TrainConfig::pretrain().planned_tokens();
    ensure!(tokens == 24_000 * 1024 * 2048, "planned {tokens}");
    ensure!(tokens == 50_331_648_000, "planned {tokens}");
    ensure!(
        format!("{:.0}", tokens as f64 / 1e9) == "50",
        "not about 50B"
    );
    let epochs = 50.33 / 8.99;
    ensure!(format!("{epochs:.1}") == "5.6", "epochs {epochs}");
    ensure!((epochs - 5.5f64).abs() <= 0.1, "epochs {epochs} vs 5.5");
    Ok(format!("{tokens} tokens, {epochs:.3} epochs"))
}

fn c03_schedule() -> Result<String, String> {
    let s = TrainConfig::pretrain().schedule();
    let mut worst = 0.0f64;
    for (step, want) in [(0, 0.0), (750, 1e-3), (12375, 5e-4), (24000, 0.0)] {
        let got = lr_at(step, &s).map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs());
        ensure!((got - want).abs() <= 1e-12, "lr({step}) = {got}");
    }
    Ok(format!("max err {worst:.1e}"))
}

fn c04_grad_check() -> Result<String, String> {
    let worst = common::grad::worst_grad_error(ForwardOptions::eval(), 0.0);
    ensure!(worst <= 1e-3, "worst relative error {worst:.3e}");
    Ok(format!("worst rel err {worst:.2e}"))
}

fn c05_gqa_is_mha() -> Result<String, String> {
    let cfg = ModelConfig {
        kv_groups: 4,
        ..common::tiny_config()
    };
    let params = init_params::<f64>(&cfg, 2).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for len in [1, 5, 16] {
        let rows: Vec<Vec<f64>> = (0..len)
            .map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let hidden = Tensor::new(vec![len, 16], rows.concat()).map_err(|e| e.to_string())?;
        for layer in &params.layers {
            let fast = attention_gqa(&cfg, layer, &hidden, true).map_err(|e| e.to_string())?;
            let (slow, _) = common::attention(&cfg, layer, &rows, true);
            worst = worst.max(common::max_abs_diff(fast.data(), &slow.concat()));
        }
    }
    ensure!(worst <= 1e-5, "max abs diff {worst:.3e}");
    Ok(format!("max abs diff {worst:.1e}"))
}

fn c06_rope() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let rope = |x: &[f64], p: usize| rope_apply(x, x.len(), &[p], 10000.0).unwrap();
    let (mut iso, mut shift) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let dim = 2 * rng.random_range(1..=32);
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let k: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (m, n, s) = (
            rng.random_range(0..2048),
            rng.random_range(0..2048),
            rng.random_range(0..2048),
        );
        let rq = rope(&q, m);
        iso = iso.max((norm(&rq) - norm(&q)).abs() / norm(&q));
        let a = dot(&rq, &rope(&k, n));
        let b = dot(&rope(&q, m + s), &rope(&k, n + s));
        shift = shift.max((a - b).abs());
    }
    ensure!(iso <= 1e-6, "isometry rel err {iso:.3e}");
    ensure!(shift <= 1e-5, "shift err {shift:.3e}");
    Ok(format!("isometry {iso:.1e}, shift {shift:.1e}"))
}

fn c07_causality() -> Result<String, String> {
    let cfg = common::tiny_config();
    let params = init_params::<f64>(&cfg, 5).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tokens = common::grad::random_tokens(&mut rng, cfg.max_seq, cfg.vocab_size);
    let base = forward(&params, &tokens, &ForwardOptions::eval()).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for j in 1..tokens.len() {
        for delta in [1, 7] {
            let mut t2 = tokens.clone();
            t2[j] = (t2[j] + delta) % cfg.vocab_size as u32;
            let other =
                forward(&params, &t2, &ForwardOptions::eval()).map_err(|e| e.to_string())?;
            for i in 0..j {
                ensure!(
                    base.logits.row(i) == other.logits.row(i),
                    "logits at {i} changed by token {j}"
                );
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} past rows unchanged"))
}

fn c08_tokenizer_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pieces = common::tok::toy_pieces(&mut rng);
    let model = UnigramModel::new(pieces.clone());
    let mut ties = 0;
    for _ in 0..1000 {
        let word = common::tok::random_word(&mut rng, 12);
        let (best, score, second) = common::tok::exhaustive_best(&word, &pieces);
        let got = model.segment(&word).ok_or("no segmentation")?;
        let got_score: f64 = got.iter().map(|p| model.log_prob(p).unwrap()).sum();
        ensure!(
            (got_score - score).abs() < 1e-9,
            "{word}: score {got_score} vs {score}"
        );
        if score - second > 1e-9 {
            ensure!(got == best, "{word}: {got:?} vs {best:?}");
        } else {
            ties += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let words = common::tok::em_corpus(&mut rng);
    let params = TrainerParams {
        max_piece_len: 6,
        min_substring_freq: 1,
        ..TrainerParams::default()
    };
    let mut model = UnigramModel::new(seed_pieces(&words, &params));
    let mut lls = Vec::new();
    for _ in 0..20 {
        let (next, ll) = em_round(&model, &words, Exec::default());
        lls.push(ll);
        model = next;
    }
    for (r, w) in lls.windows(2).enumerate() {
        ensure!(
            w[1] >= w[0] - 1e-9 * w[0].abs(),
            "EM round {}: {} < {}",
            r + 1,
            w[1],
            w[0]
        );
    }
    Ok(format!(
        "1000 words ({ties} ties), EM {:.3} -> {:.3}",
        lls[0], lls[19]
    ))
}

fn c09_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs: Vec<String> = (0..10_000)
        .map(|_| common::tok::fuzz_string(&mut rng))
        .collect();
    let tok = common::tok::roundtrip_tokenizer(&inputs);
    let opts = DecodeOptions {
        strip_specials: false,
        render_meta_space: false,
    };
    for x in &inputs {
        let ids = tok.encode(x);
        ensure!(!ids.contains(&UNK_ID), "{x:?} hit <unk>");
        let back = tok.decode(&ids, opts).map_err(|e| e.to_string())?;
        ensure!(back == tok.cleaner().clean(x), "{x:?} decoded to {back:?}");
    }
    Ok(format!(
        "{} strings, vocab {}",
        inputs.len(),
        tok.vocab().size()
    ))
}

fn c10_cleaning() -> Result<String, String> {
    let cfg = CleaningConfig::default();
    for (input, expected) in common::clean::FIXTURES {
        let got = clean_text(input, &cfg).map_err(|e| e.to_string())?;
        ensure!(got == *expected, "{input:?} -> {got:?}, want {expected:?}");
    }
    let cleaner = Cleaner::new(&cfg).map_err(|e| e.to_string())?;
    let chars: Vec<char> = common::clean::FUZZ_ALPHABET.chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..5000 {
        let text: String = (0..rng.random_range(0..60))
            .map(|_| *chars.choose(&mut rng).unwrap())
            .collect();
        let once = cleaner.clean(&text);
        ensure!(cleaner.clean(&once) == once, "not idempotent on {text:?}");
    }
    Ok(format!(
        "{} fixtures, 5000 fuzz strings",
        common::clean::FIXTURES.len()
    ))
}

fn c11_masked_loss() -> Result<String, String> {
    let tok = common::train::chat::tokenizer();
    let params = init_params::<f64>(&common::tiny_config(), 21).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut zero_rows = 0;
    for (ex, (ids, first)) in common::train::chat::examples()
        .iter()
        .zip(common::train::chat::expected())
    {
        let rendered =
            render_chat(ex, &tok, RenderOptions::default()).map_err(|e| e.to_string())?;
        ensure!(rendered.ids == ids, "rendered {:?}", rendered.ids);
        let logits = common::forward(&params, &ids);
        let mut hand = 0.0;
        for i in first - 1..ids.len() - 1 {
            hand -= common::log_softmax_at(&logits[i], ids[i + 1] as usize);
        }
        hand /= (ids.len() - first) as f64;

        let example = Example::from_chat(&rendered);
        let out = forward(&params, &example.tokens, &ForwardOptions::eval())
            .map_err(|e| e.to_string())?;
        let lib =
            lm_loss(&out.logits, &example.targets, &example.mask).map_err(|e| e.to_string())?;
        worst = worst.max((lib - hand).abs());
        ensure!((lib - hand).abs() <= 1e-10, "loss {lib} vs hand {hand}");

        let (_, _, grad) = loss_and_grad(&out.logits, &example.targets, &example.mask, Some(1.0))
            .map_err(|e| e.to_string())?;
        let grad = grad.ok_or("no gradient")?;
        let v = out.logits.cols();
        for (i, &m) in example.mask.iter().enumerate() {
            if !m {
                ensure!(
                    grad[i * v..(i + 1) * v].iter().all(|&g| g == 0.0),
                    "masked row {i} has gradient"
                );
                zero_rows += 1;
            }
        }
    }
    Ok(format!(
        "loss err {worst:.1e}, {zero_rows} masked rows exactly 0"
    ))
}

fn c12_neftune() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut n = 0;
    for &(len, dim, alpha) in &[
        (1, 1, 5.0),
        (7, 16, 5.0),
        (128, 64, 15.0),
        (2048, 2048, 5.0),
        (9, 3, 0.5),
    ] {
        let bound = alpha / ((len * dim) as f64).sqrt();
        ensure!(
            neftune_bound(len, dim, alpha) == bound,
            "bound for {len}x{dim}"
        );
        let eps = neftune_epsilon(100_000, len, dim, alpha, &mut rng);
        ensure!(eps.iter().all(|e| e.abs() <= bound), "noise above {bound}");
        n += eps.len();
        let x: Vec<f64> = (0..(len * dim).min(4096))
            .map(|i| i as f64 * 0.25)
            .collect();
        ensure!(
            neftune_noise(&x, len, dim, 0.0, 9) == x,
            "alpha 0 changed embeddings"
        );
    }
    Ok(format!("{n} draws within bound"))
}

fn c13_metrics() -> Result<String, String> {
    let t = ConfusionTable::new(
        vec!["a".into(), "b".into()],
        vec![vec![20, 5], vec![10, 15]],
    )
    .map_err(|e| e.to_string())?;
    let po = 35.0 / 50.0;
    let pe = 0.5 * 0.6 + 0.5 * 0.4;
    let (kappa, acc) = (
        cohen_kappa(&t).map_err(|e| e.to_string())?,
        accuracy(&t).map_err(|e| e.to_string())?,
    );
    ensure!(
        (kappa - (po - pe) / (1.0 - pe)).abs() <= 1e-12,
        "kappa {kappa}"
    );
    ensure!((acc - po).abs() <= 1e-12, "accuracy {acc}");

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..1000 {
        let len = rng.random_range(2..40);
        let gold = common::metrics::random_spans(&mut rng, len, 6);
        let pred = common::metrics::random_spans(&mut rng, len, 6);
        let exact = ner_f1(&pred, &gold, MatchMode::Exact).f1;
        let partial = ner_f1(&pred, &gold, MatchMode::Partial).f1;
        ensure!(partial >= exact, "partial {partial} < exact {exact}");
    }

    let questions: Vec<ExamQuestion> = (0..499)
        .map(|i| ExamQuestion {
            id: format!("q{i}"),
            stem: String::new(),
            choices: (0..5).map(|c| c.to_string()).collect(),
            gold: Gold::One(0),
            points: 1,
        })
        .collect();
    let preds: BTreeMap<String, BTreeSet<usize>> = (0..499)
        .map(|i| (format!("q{i}"), BTreeSet::from([usize::from(i >= 382)])))
        .collect();
    let s = score_exam(&questions, &preds, Denominator::Problems).map_err(|e| e.to_string())?;
    let pct = format!("{:.1}", s.percentage);
    ensure!(pct == "76.6", "382/499 -> {pct}");
    Ok(format!(
        "kappa {kappa:.3} acc {acc:.3}, 1000 span sets, 382/499 = {pct}%"
    ))
}

fn c14_overfit() -> Result<String, String> {
    let losses = common::train::overfit_losses(500);
    let hit = losses.iter().position(|&l| l < 0.1);
    let worst_rise = losses.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    ensure!(losses.iter().all(|l| l.is_finite()), "non-finite loss");
    ensure!(worst_rise <= 0.5, "loss rose by {worst_rise}");
    let step = hit.ok_or_else(|| format!("final loss {}", losses.last().unwrap()))?;
    Ok(format!(
        "{:.3} -> <0.1 at step {}, max rise {worst_rise:.3}",
        losses[0],
        step + 1
    ))
}

fn c15_attention_export() -> Result<String, String> {
    let cfg = common::tiny_config();
    let params = init_params::<f32>(&cfg, 10).map_err(|e| e.to_string())?;
    let tokens = [0u32, 5, 9, 1, 0, 7, 7, 2, 30, 1, 4, 4, 11, 12, 13, 1];
    let export = export_attention(&params, &tokens).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_attention_export(dir.path(), &export).map_err(|e| e.to_string())?;
    let (mut sum_err, mut upper) = (0.0f64, 0.0f64);
    for l in 0..cfg.n_layers {
        let (rows, cols, data) = read_matrix::<f32>(&dir.path().join(format!("layer-{l:02}.mat")))
            .map_err(|e| e.to_string())?;
        ensure!(
            (rows, cols) == (cfg.n_heads * tokens.len(), tokens.len()),
            "shape {rows}x{cols}"
        );
        let wide: Vec<f64> = data.iter().map(|&x| x as f64).collect();
        let (s, u) = common::analysis::attention_invariants(&wide, cfg.n_heads, tokens.len());
        sum_err = sum_err.max(s);
        upper = upper.max(u);
    }
    ensure!(sum_err <= 1e-6, "row sum err {sum_err:.3e}");
    ensure!(upper == 0.0, "upper triangle {upper}");
    Ok(format!("row sum err {sum_err:.1e}, upper triangle 0"))
}

fn c16_round_trips() -> Result<String, String> {
    use cli_support::{build_vocab, s, slm};
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let vocab_path = build_vocab(d, "parallel");
    let vocab = Vocabulary::load(&vocab_path).map_err(|e| e.to_string())?;
    let resaved = d.join("resaved.txt");
    vocab.save(&resaved).map_err(|e| e.to_string())?;
    ensure!(
        std::fs::read(&vocab_path).ok() == std::fs::read(&resaved).ok(),
        "vocab re-save differs"
    );

    let run = d.join("pre");
    let out = slm(
        d,
        &[
            "pretrain",
            "--corpus",
            s(&d.join("dedup.jsonl")),
            "--vocab",
            s(&vocab_path),
            "--out",
            s(&run),
            "--steps",
            "8",
        ],
    );
    ensure!(
        out.status.success(),
        "pretrain failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ckpt_path = run.join("step-000008.ckpt");
    let ckpt = load_checkpoint::<f32>(&ckpt_path).map_err(|e| e.to_string())?;
    let again = d.join("again.ckpt");
    save_checkpoint(&again, &ckpt).map_err(|e| e.to_string())?;
    ensure!(
        std::fs::read(&ckpt_path).ok() == std::fs::read(&again).ok(),
        "checkpoint re-save differs"
    );

    let manifests = [d.join("vocab.txt.manifest.json"), run.join("manifest.json")];
    for m in &manifests {
        Manifest::load(m)
            .map_err(|e| e.to_string())?
            .check_outputs()
            .map_err(|e| e.to_string())?;
        let out = slm(d, &["replay", s(m)]);
        ensure!(
            out.status.success(),
            "replay {} failed: {}",
            m.display(),
            String::from_utf8_lossy(&out.stderr)
        );
    }
    Ok(format!(
        "vocab {} pieces, checkpoint step {}, {} manifests replayed",
        vocab.size(),
        ckpt.step,
        manifests.len()
    ))
}

const CHECKS: [(&str, Check, u64); 16] = [
    ("parameter count", c01_param_count, 1),
    ("seen-token arithmetic", c02_seen_tokens, 1),
    ("lr schedule", c03_schedule, 1),
    ("gradient check", c04_grad_check, 60),
    ("GQA equals MHA", c05_gqa_is_mha, 5),
    ("RoPE isometry and shift", c06_rope, 5),
    ("causality", c07_causality, 10),
    ("tokenizer oracle", c08_tokenizer_oracle, 60),
    ("encode/decode round trip", c09_round_trip, 30),
    ("cleaning fixtures and idempotence", c10_cleaning, 10),
    ("masked fine-tuning loss", c11_masked_loss, 10),
    ("NEFTune bound", c12_neftune, 1),
    ("metric oracles", c13_metrics, 10),
    ("overfit sanity", c14_overfit, 600),
    ("attention map invariants", c15_attention_export, 10),
    ("checkpoint/vocab/manifest round trips", c16_round_trips, 30),
];

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check, budget)) in CHECKS.iter().enumerate() {
        let label = format!("{:02} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > Duration::from_secs(*budget) => {
                Err(format!("{detail}; over the {budget}s budget"))
            }
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS {label}: {detail} ({:.2}s)", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {label}: {why} ({:.2}s)", took.as_secs_f64());
            }
        }
    }
    println!("{} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
