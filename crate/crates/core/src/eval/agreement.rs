use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kappa reported when chance agreement is 1 (both raters always used one
/// and the same label).
pub const KAPPA_DEGENERATE: f64 = 1.0;

/// `counts[i][j]`: items with gold label `labels[i]` predicted as `labels[j]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionTable {
    pub fn new(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Shape(format!("confusion table must be {k}x{k}")));
        }
        Ok(Self { labels, counts })
    }

    /// Table over the sorted union of labels seen in `pairs` of (gold, predicted).
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> Self {
        let set: BTreeSet<&str> = pairs
            .iter()
            .flat_map(|(g, p)| [g.as_ref(), p.as_ref()])
            .collect();
        let labels: Vec<String> = set.iter().map(|s| s.to_string()).collect();
        let index = |s: &str| labels.iter().position(|l| l == s).unwrap();
        let mut counts = vec![vec![0; labels.len()]; labels.len()];
        for (g, p) in pairs {
            counts[index(g.as_ref())][index(p.as_ref())] += 1;
        }
        Self { labels, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn diagonal(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Same table with labels reordered by `perm` (new position `i` holds old label `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let labels = perm.iter().map(|&i| self.labels[i].clone()).collect();
        let counts = perm
            .iter()
            .map(|&i| perm.iter().map(|&j| self.counts[i][j]).collect())
            .collect();
        Self { labels, counts }
    }
}

pub fn accuracy(table: &ConfusionTable) -> Result<f64> {
    let n = table.total();
    if n == 0 {
        return Err(Error::EmptyTable);
    }
    Ok(table.diagonal() as f64 / n as f64)
}

/// `(p_o - p_e) / (1 - p_e)` with marginal chance agreement `p_e`.
pub fn cohen_kappa(table: &ConfusionTable) -> Result<f64> {
    let n = table.total();
    if n == 0 {
        return Err(Error::EmptyTable);
    }
    let n = n as f64;
    let k = table.counts.len();
    let po = table.diagonal() as f64 / n;
    let mut pe = 0.0;
    for i in 0..k {
        let row: u64 = table.counts[i].iter().sum();
        let col: u64 = table.counts.iter().map(|r| r[i]).sum();
        pe += (row as f64 / n) * (col as f64 / n);
    }
    if pe >= 1.0 {
        return Ok(KAPPA_DEGENERATE);
    }
    Ok((po - pe) / (1.0 - pe))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_single_cell() {
        let t = ConfusionTable::new(vec!["a".into()], vec![vec![0]]).unwrap();
        assert!(matches!(cohen_kappa(&t), Err(Error::EmptyTable)));
        let t = ConfusionTable::new(vec!["a".into(), "b".into()], vec![vec![4, 0], vec![0, 0]])
            .unwrap();
        assert_eq!(cohen_kappa(&t).unwrap(), KAPPA_DEGENERATE);
        assert_eq!(accuracy(&t).unwrap(), 1.0);
    }

    #[test]
    fn from_pairs_counts() {
        let t = ConfusionTable::from_pairs(&[("yes", "yes"), ("yes", "no"), ("no", "no")]);
        assert_eq!(t.labels, ["no", "yes"]);
        assert_eq!(t.counts, [[1, 0], [1, 1]]);
    }
}
