//! CART classification trees with Gini splits, bagged into a forest.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::QualityLabel;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::io::{read_json, write_json_pretty};

pub const FOREST_FORMAT: &str = "slm-random-forest";
pub const FOREST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfParams {
    pub n_trees: usize,
    /// `None` grows until nodes are pure or unsplittable.
    pub max_depth: Option<usize>,
    /// `None` uses ⌈√d⌉.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// Samples with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class counts indexed high, low.
    Leaf { counts: [u32; 2] },
}

/// Nodes in creation order; the root is node 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_counts(&self, v: &[f64]) -> [u32; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return *counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if v[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    /// Majority class at the reached leaf; ties go to high.
    pub fn predict(&self, v: &[f64]) -> QualityLabel {
        let c = self.leaf_counts(v);
        if c[1] > c[0] {
            QualityLabel::Low
        } else {
            QualityLabel::High
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub params: RfParams,
    pub features_per_split: usize,
    pub trees: Vec<Tree>,
}

impl RandomForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

fn gini(c: [u32; 2]) -> f64 {
    let n = (c[0] + c[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p, q) = (c[0] as f64 / n, c[1] as f64 / n);
    1.0 - p * p - q * q
}

struct Best {
    score: f64,
    feature: usize,
    threshold: f64,
}

/// Threshold strictly between two adjacent distinct values.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    dim: usize,
    k: usize,
    max_depth: Option<usize>,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> [u32; 2] {
        let mut c = [0u32; 2];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best split on `feature` by weighted child Gini (lower is better).
    fn scan(&self, idx: &[usize], feature: usize, total: [u32; 2], best: &mut Option<Best>) {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| {
            self.x[a][feature]
                .total_cmp(&self.x[b][feature])
                .then(a.cmp(&b))
        });
        let mut left = [0u32; 2];
        for w in 0..order.len() - 1 {
            left[self.y[order[w]]] += 1;
            let (a, b) = (self.x[order[w]][feature], self.x[order[w + 1]][feature]);
            if a == b {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let nl = (left[0] + left[1]) as f64;
            let nr = (right[0] + right[1]) as f64;
            let score = nl * gini(left) + nr * gini(right);
            if best.as_ref().is_none_or(|b| score < b.score) {
                *best = Some(Best {
                    score,
                    feature,
                    threshold: midpoint(a, b),
                });
            }
        }
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(&idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts });
        let pure = counts[0] == 0 || counts[1] == 0;
        if pure || self.max_depth.is_some_and(|m| depth >= m) {
            return id;
        }
        let chosen = sample(rng, self.dim, self.k).into_vec();
        let mut best = None;
        for &f in &chosen {
            self.scan(&idx, f, counts, &mut best);
        }
        if best.is_none() {
            // every sampled feature is constant here; look at the rest
            for f in (0..self.dim).filter(|f| !chosen.contains(f)) {
                self.scan(&idx, f, counts, &mut best);
            }
        }
        let Some(best) = best else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[i][best.feature] <= best.threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }
}

fn validate(features: &[Vec<f64>], labels: &[QualityLabel], params: &RfParams) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::TrainingSet(format!(
            "{} feature vectors but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.len() < 2 {
        return Err(Error::TrainingSet(format!(
            "need at least 2 examples, got {}",
            features.len()
        )));
    }
    if params.n_trees == 0 {
        return Err(Error::Config("n_trees must be at least 1".into()));
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(Error::TrainingSet("feature vectors are empty".into()));
    }
    for (i, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingSet(format!(
                "feature vector {i} has a non-finite entry"
            )));
        }
    }
    Ok(dim)
}

/// Trains `n_trees` trees, tree `t` drawing from ChaCha8 stream `t` of
/// `params.seed`. Bootstrap indices refer to the input order, so the same
/// examples in a different order give a different forest.
pub fn rf_train(
    features: &[Vec<f64>],
    labels: &[QualityLabel],
    params: &RfParams,
    exec: Exec,
) -> Result<RandomForest> {
    let dim = validate(features, labels, params)?;
    let y: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    if y.iter().all(|&c| c == y[0]) {
        log::warn!(
            "quality training set has only {:?} labels; the forest always predicts it",
            QualityLabel::from_index(y[0]).as_str()
        );
    }
    let k = params
        .features_per_split
        .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
        .clamp(1, dim);
    let n = features.len();
    let trees = exec.map_range(params.n_trees, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(t as u64);
        let idx: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut b = Builder {
            x: features,
            y: &y,
            dim,
            k,
            max_depth: params.max_depth,
            nodes: Vec::new(),
        };
        b.grow(idx, 0, &mut rng);
        Tree { nodes: b.nodes }
    });
    Ok(RandomForest {
        format: FOREST_FORMAT.into(),
        version: FOREST_VERSION,
        dim,
        params: params.clone(),
        features_per_split: k,
        trees,
    })
}

/// Votes per class, indexed high, low.
pub fn votes(forest: &RandomForest, v: &[f64]) -> Result<[usize; 2]> {
    if v.len() != forest.dim {
        return Err(Error::DimensionMismatch {
            expected: forest.dim,
            found: v.len(),
        });
    }
    let mut out = [0usize; 2];
    for t in &forest.trees {
        out[t.predict(v).index()] += 1;
    }
    Ok(out)
}

/// Majority vote and its vote fraction. A tied vote predicts high.
pub fn rf_predict(forest: &RandomForest, v: &[f64]) -> Result<(QualityLabel, f64)> {
    let [high, low] = votes(forest, v)?;
    let n = forest.n_trees() as f64;
    Ok(if low > high {
        (QualityLabel::Low, low as f64 / n)
    } else {
        (QualityLabel::High, high as f64 / n)
    })
}

pub fn save_forest(path: &Path, forest: &RandomForest) -> Result<()> {
    write_json_pretty(path, forest)
}

pub fn load_forest(path: &Path) -> Result<RandomForest> {
    let v: serde_json::Value = read_json(path)?;
    if v.get("format").and_then(|f| f.as_str()) != Some(FOREST_FORMAT) {
        return Err(Error::format(
            "forest",
            format!("{}: not a forest file", path.display()),
        ));
    }
    let version = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
    if version != FOREST_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "forest",
            found: version,
            supported: FOREST_VERSION,
        });
    }
    let forest: RandomForest = serde_json::from_value(v)
        .map_err(|e| Error::format("forest", format!("{}: {e}", path.display())))?;
    for (t, tree) in forest.trees.iter().enumerate() {
        let n = tree.nodes.len();
        let ok = n > 0
            && tree.nodes.iter().enumerate().all(|(i, node)| match node {
                Node::Split {
                    feature,
                    left,
                    right,
                    ..
                } => *feature < forest.dim && *left > i && *right > i && *left < n && *right < n,
                Node::Leaf { counts } => counts[0] + counts[1] > 0,
            });
        if !ok {
            return Err(Error::format("forest", format!("tree {t} is malformed")));
        }
    }
    Ok(forest)
}
