use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    accuracy, cohen_kappa, ner_f1, parse_choices, score_exam, spans_from_surfaces, ConfusionTable,
    Denominator, ExamQuestion, ExamScore, F1Score, MatchMode, Span, SpanSet,
};
use crate::error::{Error, Result};
use crate::io::read_jsonl;

/// One line of a prediction file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub output: String,
}

/// Gold record of a pairwise or single-text classification task. Extra
/// fields (the texts themselves) are ignored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationItem {
    pub id: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanItem {
    pub id: String,
    pub text: String,
    pub spans: Vec<Span>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    MultipleChoice,
    Classification,
    Spans,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub data: PathBuf,
    pub predictions: PathBuf,
    #[serde(default)]
    pub denominator: Denominator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskResult {
    MultipleChoice {
        name: String,
        score: ExamScore,
    },
    Classification {
        name: String,
        kappa: f64,
        accuracy: f64,
        table: ConfusionTable,
        missing: Vec<String>,
    },
    Spans {
        name: String,
        partial: F1Score,
        exact: F1Score,
        missing: Vec<String>,
    },
}

/// Label used for items that have no prediction; it never equals a gold label.
const MISSING_LABEL: &str = "<missing>";

pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, String>> {
    let preds: Vec<Prediction> = read_jsonl(path)?;
    let mut out = BTreeMap::new();
    for p in preds {
        if out.insert(p.id.clone(), p.output).is_some() {
            return Err(Error::format(
                "prediction file",
                format!("duplicate id {:?}", p.id),
            ));
        }
    }
    Ok(out)
}

fn surfaces(output: &str) -> Vec<String> {
    if let Ok(list) = serde_json::from_str::<Vec<String>>(output) {
        return list;
    }
    output
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

pub fn run_task(spec: &TaskSpec) -> Result<TaskResult> {
    let preds = read_predictions(&spec.predictions)?;
    let name = spec.name.clone();
    match spec.kind {
        TaskKind::MultipleChoice => {
            let questions: Vec<ExamQuestion> = read_jsonl(&spec.data)?;
            let parsed: BTreeMap<String, BTreeSet<usize>> = questions
                .iter()
                .filter_map(|q| {
                    let out = preds.get(&q.id)?;
                    // an unparseable answer is wrong, not missing
                    Some((
                        q.id.clone(),
                        parse_choices(out, q.choices.len()).unwrap_or_default(),
                    ))
                })
                .collect();
            let score = score_exam(&questions, &parsed, spec.denominator)?;
            Ok(TaskResult::MultipleChoice { name, score })
        }
        TaskKind::Classification => {
            let items: Vec<ClassificationItem> = read_jsonl(&spec.data)?;
            let mut missing = Vec::new();
            let pairs: Vec<(String, String)> = items
                .iter()
                .map(|it| {
                    let p = match preds.get(&it.id) {
                        Some(p) => p.trim().to_string(),
                        None => {
                            missing.push(it.id.clone());
                            MISSING_LABEL.to_string()
                        }
                    };
                    (it.label.clone(), p)
                })
                .collect();
            let table = ConfusionTable::from_pairs(&pairs);
            Ok(TaskResult::Classification {
                name,
                kappa: cohen_kappa(&table)?,
                accuracy: accuracy(&table)?,
                table,
                missing,
            })
        }
        TaskKind::Spans => {
            let items: Vec<SpanItem> = read_jsonl(&spec.data)?;
            let mut partial = F1Score::default();
            let mut exact = F1Score::default();
            let mut missing = Vec::new();
            for it in &items {
                let len = it.text.chars().count();
                let gold = SpanSet::new(it.spans.clone(), Some(len))?;
                let pred = match preds.get(&it.id) {
                    Some(out) => spans_from_surfaces(&it.text, &surfaces(out)),
                    None => {
                        missing.push(it.id.clone());
                        SpanSet::default()
                    }
                };
                partial = partial.merge(ner_f1(&pred, &gold, MatchMode::Partial));
                exact = exact.merge(ner_f1(&pred, &gold, MatchMode::Exact));
            }
            Ok(TaskResult::Spans {
                name,
                partial,
                exact,
                missing,
            })
        }
    }
}

/// Markdown table: exams as `points (pct%)`, classification as
/// `κ(accuracy)`, spans as `partial(exact)` F1.
pub fn format_report(results: &[TaskResult]) -> String {
    let mut s = String::from("| task | metric | score |\n|---|---|---|\n");
    for r in results {
        let _ = match r {
            TaskResult::MultipleChoice { name, score } => writeln!(
                s,
                "| {name} | points (%) | {} ({:.1}%) |",
                score.points, score.percentage
            ),
            TaskResult::Classification {
                name,
                kappa,
                accuracy,
                ..
            } => writeln!(
                s,
                "| {name} | kappa(accuracy) | {kappa:.2}({accuracy:.2}) |"
            ),
            TaskResult::Spans {
                name,
                partial,
                exact,
                ..
            } => writeln!(
                s,
                "| {name} | partial(exact) F1 | {:.2}({:.2}) |",
                partial.f1, exact.f1
            ),
        };
    }
    s
}
