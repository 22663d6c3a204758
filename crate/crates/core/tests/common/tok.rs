use rand::seq::IndexedRandom;
use rand::Rng;

pub const TOY_ALPHABET: [char; 8] = ['あ', 'い', 'う', 'え', 'お', 'か', 'き', 'く'];

/// 50 pieces: every letter plus 42 random multi-letter strings, with random
/// scores.
pub fn toy_pieces(rng: &mut impl Rng) -> Vec<(String, f64)> {
    let mut pieces: Vec<(String, f64)> = TOY_ALPHABET
        .iter()
        .map(|c| (c.to_string(), rng.random_range(-8.0..-1.0)))
        .collect();
    while pieces.len() < 50 {
        let len = rng.random_range(2..=4);
        let s: String = (0..len)
            .map(|_| *TOY_ALPHABET.choose(rng).unwrap())
            .collect();
        if pieces.iter().all(|p| p.0 != s) {
            pieces.push((s, rng.random_range(-8.0..-1.0)));
        }
    }
    pieces
}

pub fn random_word(rng: &mut impl Rng, max_len: usize) -> String {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| *TOY_ALPHABET.choose(rng).unwrap())
        .collect()
}

/// Every segmentation of `word` into known pieces, scored by summed log
/// probability; returns the best one and the runner-up score.
pub fn exhaustive_best(word: &str, pieces: &[(String, f64)]) -> (Vec<String>, f64, f64) {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    let mut best: (Vec<String>, f64) = (Vec::new(), f64::NEG_INFINITY);
    let mut second = f64::NEG_INFINITY;
    // bit i set: a cut after character i
    for mask in 0u32..(1 << (n - 1)) {
        let mut parts = Vec::new();
        let mut start = 0;
        for i in 0..n {
            if i == n - 1 || mask & (1 << i) != 0 {
                parts.push(chars[start..=i].iter().collect::<String>());
                start = i + 1;
            }
        }
        let mut score = 0.0;
        let mut ok = true;
        for p in &parts {
            match pieces.iter().find(|q| &q.0 == p) {
                Some(q) => score += q.1,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        if score > best.1 {
            second = best.1;
            best = (parts, score);
        } else if score > second {
            second = score;
        }
    }
    (best.0, best.1, second)
}

/// Word-frequency table drawn from a small skewed generator.
pub fn em_corpus(rng: &mut impl Rng) -> Vec<(String, u64)> {
    let stems = ["かきく", "あい", "おう", "えかき", "くう"];
    let mut words: Vec<(String, u64)> = Vec::new();
    for _ in 0..60 {
        let mut w = stems.choose(rng).unwrap().to_string();
        if rng.random_bool(0.6) {
            w.push_str(stems.choose(rng).unwrap());
        }
        if rng.random_bool(0.3) {
            w.push(*TOY_ALPHABET.choose(rng).unwrap());
        }
        let count = rng.random_range(1..20);
        match words.iter_mut().find(|(s, _)| *s == w) {
            Some(e) => e.1 += count,
            None => words.push((w, count)),
        }
    }
    words.sort();
    words
}

/// Whitelisted characters used by the round-trip fuzzer, plus spaces and
/// newlines.
pub const FUZZ_CHARS: &str = "あいうえおかきくけこさしすせそたちつてとなにぬねのはまやらわをんアイウエオカキクケコサシスセソーヴ血圧心臓病院医師薬日本東京大阪々〇abcdefgxyzABCZ0123456789。、「」『』・…℃〜!?.,:;()[]-+=%";

pub fn fuzz_string(rng: &mut impl Rng) -> String {
    let chars: Vec<char> = FUZZ_CHARS.chars().collect();
    let len = rng.random_range(0..40);
    (0..len)
        .map(|_| match rng.random_range(0..20) {
            0 => ' ',
            1 => '\n',
            _ => *chars.choose(rng).unwrap(),
        })
        .collect()
}

/// Tokenizer trained on the cleaned fuzz inputs plus one document holding
/// every fuzz character, so no input needs the unknown piece.
pub fn roundtrip_tokenizer(inputs: &[String]) -> slm_core::tokenizer::Tokenizer {
    use slm_core::corpus::{CleanDocument, Cleaner, CleaningConfig, Source};
    use slm_core::segment::{Lexicon, LongestMatch};
    use slm_core::tokenizer::{train_unigram_with, word_counts, Tokenizer, TrainerParams};

    let cleaner = Cleaner::new(&CleaningConfig::default()).unwrap();
    let doc = |id: String, text: &str| CleanDocument {
        id,
        source: Source::Web,
        text: cleaner.clean(text),
        rule_counts: Default::default(),
    };
    let mut docs: Vec<CleanDocument> = inputs
        .iter()
        .take(2000)
        .enumerate()
        .map(|(i, t)| doc(format!("d{i}"), t))
        .collect();
    let alphabet: String = FUZZ_CHARS.chars().map(|c| format!("{c} ")).collect();
    docs.push(doc("alphabet".into(), &alphabet));
    let seg = LongestMatch::new(Lexicon::default());
    let params = TrainerParams {
        target_vocab: 400,
        max_piece_len: 4,
        sub_iterations: 2,
        ..TrainerParams::default()
    };
    let vocab = train_unigram_with(
        &word_counts(&docs, &seg, None),
        &params,
        slm_core::Exec::default(),
    )
    .unwrap();
    Tokenizer::new(cleaner, Box::new(seg), vocab)
}
