use serde_json::Value;

/// Lowest weighted child Gini over every feature and every cut between
/// adjacent distinct values.
pub fn best_split_score(x: &[Vec<f64>], y: &[usize]) -> Option<f64> {
    let gini = |idx: &[usize]| {
        if idx.is_empty() {
            return 0.0;
        }
        let n = idx.len() as f64;
        let p = idx.iter().filter(|&&i| y[i] == 0).count() as f64 / n;
        n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
    };
    let all: Vec<usize> = (0..x.len()).collect();
    let mut best: Option<f64> = None;
    for f in 0..x[0].len() {
        let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[i][f] <= t);
            let s = gini(&l) + gini(&r);
            if best.is_none_or(|b| s < b) {
                best = Some(s);
            }
        }
    }
    best
}

/// Weighted child Gini of the split stored at the root of `tree`.
pub fn root_split_score(tree: &Value, x: &[Vec<f64>], y: &[usize]) -> f64 {
    let root = &tree["nodes"][0];
    assert_eq!(root["kind"], "split");
    let f = root["feature"].as_u64().unwrap() as usize;
    let t = root["threshold"].as_f64().unwrap();
    let mut score = 0.0;
    for side in [true, false] {
        let idx: Vec<usize> = (0..x.len()).filter(|&i| (x[i][f] <= t) == side).collect();
        let n = idx.len() as f64;
        if n > 0.0 {
            let p = idx.iter().filter(|&&i| y[i] == 0).count() as f64 / n;
            score += n * (1.0 - p * p - (1.0 - p) * (1.0 - p));
        }
    }
    score
}

/// Walks a serialized tree and returns the class index voted for.
pub fn walk(tree: &Value, v: &[f64]) -> usize {
    let nodes = tree["nodes"].as_array().unwrap();
    let mut i = 0;
    loop {
        let n = &nodes[i];
        if n["kind"] == "leaf" {
            let c = n["counts"].as_array().unwrap();
            let (high, low) = (c[0].as_u64().unwrap(), c[1].as_u64().unwrap());
            return usize::from(low > high);
        }
        let f = n["feature"].as_u64().unwrap() as usize;
        let t = n["threshold"].as_f64().unwrap();
        let next = if v[f] <= t { &n["left"] } else { &n["right"] };
        i = next.as_u64().unwrap() as usize;
    }
}

/// Label index and vote fraction by walking every serialized tree.
pub fn forest_vote(forest: &Value, v: &[f64]) -> (usize, f64) {
    let trees = forest["trees"].as_array().unwrap();
    let low = trees.iter().filter(|t| walk(t, v) == 1).count();
    let high = trees.len() - low;
    if low > high {
        (1, low as f64 / trees.len() as f64)
    } else {
        (0, high as f64 / trees.len() as f64)
    }
}
