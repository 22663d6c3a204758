//! Document quality classification: a hidden-state feature per document and
//! a random forest over those features.

mod forest;

use serde::{Deserialize, Serialize};

pub use forest::{
    load_forest, rf_predict, rf_train, save_forest, votes, Node, RandomForest, RfParams, Tree,
    FOREST_FORMAT, FOREST_VERSION,
};

use crate::error::{Error, Result};
use crate::model::{forward, ForwardOptions, Parameters, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityLabel {
    High,
    Low,
}

impl QualityLabel {
    pub(crate) fn index(self) -> usize {
        match self {
            QualityLabel::High => 0,
            QualityLabel::Low => 1,
        }
    }

    pub(crate) fn from_index(i: usize) -> Self {
        if i == 0 {
            QualityLabel::High
        } else {
            QualityLabel::Low
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QualityLabel::High => "high",
            QualityLabel::Low => "low",
        }
    }
}

/// One line of a label file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub label: QualityLabel,
}

/// One line of `quality apply` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityPrediction {
    pub id: String,
    pub label: QualityLabel,
    pub probability: f64,
}

/// Final-layer hidden state (after the final norm) at the last position.
/// Documents longer than the context keep only their final window.
pub fn extract_feature<T: Scalar>(params: &Parameters<T>, tokens: &[u32]) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let start = tokens.len().saturating_sub(params.config.max_seq);
    let out = forward(params, &tokens[start..], &ForwardOptions::eval())?;
    let last = out.final_hidden.shape()[0] - 1;
    Ok(out
        .final_hidden
        .row(last)
        .iter()
        .map(|v| v.as_f64())
        .collect())
}
