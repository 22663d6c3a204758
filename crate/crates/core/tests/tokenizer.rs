mod common;

use common::tok::{
    em_corpus, exhaustive_best, fuzz_string, random_word, roundtrip_tokenizer, toy_pieces,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slm_core::corpus::{Cleaner, CleaningConfig};
use slm_core::segment::Segmenter;
use slm_core::tokenizer::{
    em_round, seed_pieces, DecodeOptions, Tokenizer, TrainerParams, UnigramModel, Vocabulary,
    UNK_ID,
};
use slm_core::Exec;

struct Whole;

impl Segmenter for Whole {
    fn segment<'a>(&self, text: &'a str) -> Vec<&'a str> {
        if text.is_empty() {
            vec![]
        } else {
            vec![text]
        }
    }
}

#[test]
fn viterbi_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pieces = toy_pieces(&mut rng);
    let model = UnigramModel::new(pieces.clone());
    let vocab = Vocabulary::from_pieces(pieces.clone()).unwrap();
    let tok = Tokenizer::new(
        Cleaner::new(&CleaningConfig::default()).unwrap(),
        Box::new(Whole),
        vocab,
    );
    for _ in 0..1000 {
        let word = random_word(&mut rng, 12);
        let (best, score, second) = exhaustive_best(&word, &pieces);
        let got = model.segment(&word).unwrap();
        let got_score: f64 = got.iter().map(|p| model.log_prob(p).unwrap()).sum();
        assert!(
            (got_score - score).abs() < 1e-9,
            "{word}: {got:?} vs {best:?}"
        );
        let via_vocab = tok.pieces_of(&tok.encode_clean(&word)).unwrap();
        if score - second > 1e-9 {
            assert_eq!(got, best, "{word}");
            assert_eq!(via_vocab, best, "{word}");
        }
    }
}

#[test]
fn em_log_likelihood_never_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let words = em_corpus(&mut rng);
    let params = TrainerParams {
        max_piece_len: 6,
        min_substring_freq: 1,
        ..TrainerParams::default()
    };
    let mut model = UnigramModel::new(seed_pieces(&words, &params));
    let mut prev = f64::NEG_INFINITY;
    for round in 0..20 {
        let (next, ll) = em_round(&model, &words, Exec::Sequential);
        assert!(ll >= prev - 1e-9 * ll.abs(), "round {round}: {ll} < {prev}");
        prev = ll;
        model = next;
    }
}

#[test]
fn em_is_identical_across_exec_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let words = em_corpus(&mut rng);
    let model = UnigramModel::new(seed_pieces(&words, &TrainerParams::default()));
    let (a, la) = em_round(&model, &words, Exec::Sequential);
    let (b, lb) = em_round(&model, &words, Exec::Parallel);
    assert_eq!(la, lb);
    assert_eq!(a, b);
}

#[test]
fn decode_inverts_encode_on_clean_text() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs: Vec<String> = (0..10_000).map(|_| fuzz_string(&mut rng)).collect();
    let tok = roundtrip_tokenizer(&inputs);
    let opts = DecodeOptions {
        strip_specials: false,
        render_meta_space: false,
    };
    for x in &inputs {
        let ids = tok.encode(x);
        assert!(!ids.contains(&UNK_ID), "{x:?}");
        assert_eq!(
            tok.decode(&ids, opts).unwrap(),
            tok.cleaner().clean(x),
            "{x:?}"
        );
    }
}

#[test]
fn vocabulary_text_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab = Vocabulary::from_pieces(toy_pieces(&mut rng)).unwrap();
    let extended = vocab
        .extend_specials(&slm_core::tokenizer::CHAT_SPECIALS)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    extended.save(&path).unwrap();
    let back = Vocabulary::load(&path).unwrap();
    assert_eq!(back, extended);
    assert_eq!(back.to_text(), extended.to_text());
}
