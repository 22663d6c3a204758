//! Segmentation lattice over the characters of one word.

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Edge {
    /// Character index one past the end of the piece.
    pub end: usize,
    pub piece: usize,
    pub log_prob: f64,
}

pub(crate) struct Lattice<'a> {
    word: &'a str,
    /// Byte offsets of character boundaries, including the end.
    bounds: Vec<usize>,
    /// Edges by start position, in ascending length.
    starts: Vec<Vec<Edge>>,
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

impl<'a> Lattice<'a> {
    /// `lookup` maps a substring to `(piece, log_prob)`; edges with
    /// non-finite log-probability are left out. When `unk` is given, every
    /// position lacking a single-character edge gets one for the unknown piece.
    pub fn new<F>(word: &'a str, max_len: usize, lookup: F, unk: Option<(usize, f64)>) -> Self
    where
        F: Fn(&str) -> Option<(usize, f64)>,
    {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let n = bounds.len() - 1;
        let mut starts = Vec::with_capacity(n);
        for i in 0..n {
            let mut edges = Vec::new();
            for end in i + 1..=n.min(i + max_len) {
                if let Some((piece, log_prob)) = lookup(&word[bounds[i]..bounds[end]]) {
                    if log_prob.is_finite() {
                        edges.push(Edge {
                            end,
                            piece,
                            log_prob,
                        });
                    }
                }
            }
            if let Some((piece, log_prob)) = unk {
                if edges.first().is_none_or(|e| e.end != i + 1) {
                    edges.insert(
                        0,
                        Edge {
                            end: i + 1,
                            piece,
                            log_prob,
                        },
                    );
                }
            }
            starts.push(edges);
        }
        Self {
            word,
            bounds,
            starts,
        }
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn surface(&self, from: usize, to: usize) -> &'a str {
        &self.word[self.bounds[from]..self.bounds[to]]
    }

    /// Best segmentation as `(start, edge)` pairs and its score. `None` when
    /// no complete path exists. Ties keep the first candidate found scanning
    /// starts left to right and lengths shortest first.
    pub fn viterbi(&self) -> Option<(Vec<(usize, Edge)>, f64)> {
        let n = self.len();
        let mut best = vec![f64::NEG_INFINITY; n + 1];
        let mut back: Vec<Option<(usize, Edge)>> = vec![None; n + 1];
        best[0] = 0.0;
        for i in 0..n {
            if best[i] == f64::NEG_INFINITY {
                continue;
            }
            for e in &self.starts[i] {
                let cand = best[i] + e.log_prob;
                if cand > best[e.end] {
                    best[e.end] = cand;
                    back[e.end] = Some((i, *e));
                }
            }
        }
        if n > 0 && back[n].is_none() {
            return None;
        }
        let mut path = Vec::new();
        let mut pos = n;
        while pos > 0 {
            let (start, e) = back[pos].expect("reachable");
            path.push((start, e));
            pos = start;
        }
        path.reverse();
        Some((path, best[n]))
    }

    /// Forward-backward. Adds `weight` times each piece's posterior expected
    /// count into `expected` and returns the log marginal likelihood.
    pub fn accumulate_marginals(&self, weight: f64, expected: &mut [f64]) -> f64 {
        let n = self.len();
        let mut alpha = vec![f64::NEG_INFINITY; n + 1];
        alpha[0] = 0.0;
        for i in 0..n {
            if alpha[i] == f64::NEG_INFINITY {
                continue;
            }
            for e in &self.starts[i] {
                alpha[e.end] = log_add(alpha[e.end], alpha[i] + e.log_prob);
            }
        }
        let z = alpha[n];
        if z == f64::NEG_INFINITY {
            return z;
        }
        let mut beta = vec![f64::NEG_INFINITY; n + 1];
        beta[n] = 0.0;
        for i in (0..n).rev() {
            for e in &self.starts[i] {
                beta[i] = log_add(beta[i], e.log_prob + beta[e.end]);
            }
        }
        for i in 0..n {
            for e in &self.starts[i] {
                let post = (alpha[i] + e.log_prob + beta[e.end] - z).exp();
                expected[e.piece] += weight * post;
            }
        }
        z
    }
}
