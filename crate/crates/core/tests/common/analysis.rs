/// Labels ranked by cosine to `a - b + c` with the query words removed,
/// best first; ties by position.
pub fn brute_force_analogy(
    labels: &[&str],
    vecs: &[Vec<f64>],
    a: usize,
    b: usize,
    c: usize,
) -> Vec<String> {
    let q: Vec<f64> = (0..vecs[0].len())
        .map(|j| vecs[a][j] - vecs[b][j] + vecs[c][j])
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for (i, v) in vecs.iter().enumerate() {
        if i == a || i == b || i == c {
            continue;
        }
        let dot: f64 = q.iter().zip(v).map(|(x, y)| x * y).sum();
        scored.push((dot / (norm(&q) * norm(v)), i));
    }
    scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    scored
        .into_iter()
        .map(|(_, i)| labels[i].to_string())
        .collect()
}

/// Worst row-sum error and largest strictly-upper-triangular magnitude over
/// `heads·seq` rows of `seq` probabilities.
pub fn attention_invariants(data: &[f64], heads: usize, seq: usize) -> (f64, f64) {
    let mut sum_err: f64 = 0.0;
    let mut upper: f64 = 0.0;
    for h in 0..heads {
        for i in 0..seq {
            let row = &data[(h * seq + i) * seq..(h * seq + i + 1) * seq];
            sum_err = sum_err.max((row.iter().sum::<f64>() - 1.0).abs());
            for &p in &row[i + 1..] {
                upper = upper.max(p.abs());
            }
        }
    }
    (sum_err, upper)
}
