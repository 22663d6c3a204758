//! Evaluation: perplexity, exam scoring, agreement statistics, span F1 and
//! the task-file adapters that feed them.

mod agreement;
mod exam;
mod spans;
mod tasks;

pub use agreement::{accuracy, cohen_kappa, ConfusionTable, KAPPA_DEGENERATE};
pub use exam::{parse_choices, score_exam, Denominator, ExamQuestion, ExamScore, Gold};
pub use spans::{ner_f1, spans_from_surfaces, F1Score, MatchMode, Span, SpanSet};
pub use tasks::{
    format_report, read_predictions, run_task, ClassificationItem, Prediction, SpanItem, TaskKind,
    TaskResult, TaskSpec,
};

use crate::error::{Error, Result};
use crate::model::{forward, ForwardOptions, Parameters, Scalar};
use crate::train::nll;

/// `exp` of the mean next-token negative log-likelihood. Sequences longer
/// than the context are scored in windows that overlap by one token, so
/// every token after the first is predicted exactly once.
pub fn perplexity<T: Scalar>(params: &Parameters<T>, tokens: &[u32]) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::TooFewTokens(tokens.len()));
    }
    let window = params.config.max_seq.max(2);
    let mut total = 0.0;
    let mut start = 0;
    while start + 1 < tokens.len() {
        let end = (start + window).min(tokens.len());
        let out = forward(params, &tokens[start..end], &ForwardOptions::eval())?;
        for i in 0..end - start - 1 {
            total += nll(out.logits.row(i), tokens[start + i + 1] as usize);
        }
        start = end - 1;
    }
    Ok((total / (tokens.len() - 1) as f64).exp())
}
