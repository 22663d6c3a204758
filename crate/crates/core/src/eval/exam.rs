use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One answer index or a set of them (all must be chosen).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    One(usize),
    Many(BTreeSet<usize>),
}

impl Gold {
    pub fn as_set(&self) -> BTreeSet<usize> {
        match self {
            Gold::One(i) => BTreeSet::from([*i]),
            Gold::Many(s) => s.clone(),
        }
    }
}

fn one_point() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamQuestion {
    pub id: String,
    #[serde(default)]
    pub stem: String,
    pub choices: Vec<String>,
    pub gold: Gold,
    #[serde(default = "one_point")]
    pub points: u32,
}

impl ExamQuestion {
    pub fn validate(&self) -> Result<()> {
        let gold = self.gold.as_set();
        if self.points == 0 {
            return Err(Error::format(
                "exam question",
                format!("{}: points must be positive", self.id),
            ));
        }
        if gold.is_empty() || gold.iter().any(|&g| g >= self.choices.len()) {
            return Err(Error::format(
                "exam question",
                format!("{}: gold index out of range", self.id),
            ));
        }
        Ok(())
    }
}

/// What the percentage is taken over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Denominator {
    /// Number of problems, the convention of published exam tables.
    #[default]
    Problems,
    /// Sum of available points.
    Points,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExamScore {
    pub points: u64,
    pub available_points: u64,
    pub problems: usize,
    pub correct: usize,
    /// Question ids without a prediction; scored as wrong.
    pub missing: Vec<String>,
    pub percentage: f64,
}

/// Reads choice letters (`a`, `B`, `a,c`, `ce`) from a model answer.
/// Falls back to an exact match against the choice texts.
pub fn parse_choices(output: &str, n_choices: usize) -> Option<BTreeSet<usize>> {
    let trimmed = output.trim();
    let letters: String = trimmed
        .chars()
        .filter(|c| !(c.is_whitespace() || matches!(c, ',' | '、' | '，' | '.' | '。')))
        .collect();
    if !letters.is_empty() && letters.chars().all(|c| c.is_ascii_alphabetic()) {
        let set: BTreeSet<usize> = letters
            .chars()
            .map(|c| (c.to_ascii_lowercase() as u8 - b'a') as usize)
            .collect();
        if set.iter().all(|&i| i < n_choices) {
            return Some(set);
        }
    }
    None
}

/// A question is correct when the predicted set equals the gold set.
pub fn score_exam(
    questions: &[ExamQuestion],
    predictions: &BTreeMap<String, BTreeSet<usize>>,
    denominator: Denominator,
) -> Result<ExamScore> {
    let mut points = 0u64;
    let mut available = 0u64;
    let mut correct = 0;
    let mut missing = Vec::new();
    for q in questions {
        q.validate()?;
        available += q.points as u64;
        match predictions.get(&q.id) {
            Some(p) if *p == q.gold.as_set() => {
                points += q.points as u64;
                correct += 1;
            }
            Some(_) => {}
            None => missing.push(q.id.clone()),
        }
    }
    let denom = match denominator {
        Denominator::Problems => questions.len() as u64,
        Denominator::Points => available,
    };
    let percentage = if denom == 0 {
        0.0
    } else {
        100.0 * points as f64 / denom as f64
    };
    Ok(ExamScore {
        points,
        available_points: available,
        problems: questions.len(),
        correct,
        missing,
        percentage,
    })
}
