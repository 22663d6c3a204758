use rand::Rng;
use slm_core::eval::{Span, SpanSet};

/// Kappa and accuracy straight from (gold, predicted) pairs.
pub fn kappa_from_pairs(pairs: &[(usize, usize)], k: usize) -> (f64, f64) {
    let n = pairs.len() as f64;
    let agree = pairs.iter().filter(|(g, p)| g == p).count() as f64 / n;
    let mut chance = 0.0;
    for c in 0..k {
        let g = pairs.iter().filter(|(x, _)| *x == c).count() as f64 / n;
        let p = pairs.iter().filter(|(_, x)| *x == c).count() as f64 / n;
        chance += g * p;
    }
    ((agree - chance) / (1.0 - chance), agree)
}

/// Up to `max` non-overlapping spans inside `[0, len)`.
pub fn random_spans(rng: &mut impl Rng, len: usize, max: usize) -> SpanSet {
    let mut spans: Vec<Span> = Vec::new();
    for _ in 0..rng.random_range(0..=max) {
        let start = rng.random_range(0..len - 1);
        let end = rng.random_range(start + 1..=len.min(start + 6));
        let s = Span::new(start, end);
        if !spans.iter().any(|o| o.overlaps(&s)) {
            spans.push(s);
        }
    }
    SpanSet::new(spans, Some(len)).unwrap()
}
