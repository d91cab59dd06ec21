//! Answer and citation scoring, multi-trial aggregation and robustness
//! statistics.

mod correlation;

pub use correlation::{
    correlation, kendall_tau_b, pearson, ranks, spearman, CorrelationMethod, CorrelationResult, PermutationConfig,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no reference answers")]
    EmptyGolds,
    #[error("no gold supporting documents")]
    EmptySupporting,
    #[error("no trials to aggregate")]
    NoTrials,
    #[error("trial {trial} has {found} predictions, expected {expected}")]
    RaggedTrials { trial: usize, expected: usize, found: usize },
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("undefined correlation")]
    Undefined,
}

fn is_article(word: &str) -> bool {
    matches!(word, "a" | "an" | "the")
}

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !is_article(w))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(pred: &str, golds: &[String]) -> Result<u8, MetricError> {
    if golds.is_empty() {
        return Err(MetricError::EmptyGolds);
    }
    let pred = normalize_answer(pred);
    Ok(golds.iter().any(|g| normalize_answer(g) == pred) as u8)
}

fn f1_single(pred_tokens: &[&str], gold: &str) -> f64 {
    let gold_norm = normalize_answer(gold);
    let gold_tokens: Vec<&str> = gold_norm.split_whitespace().collect();
    match (pred_tokens.is_empty(), gold_tokens.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut bag: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &gold_tokens {
        *bag.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred_tokens {
        if let Some(n) = bag.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_tokens.len() as f64;
    let recall = overlap as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-bag F1 against each reference; the maximum is returned.
pub fn f1(pred: &str, golds: &[String]) -> Result<f64, MetricError> {
    if golds.is_empty() {
        return Err(MetricError::EmptyGolds);
    }
    let pred_norm = normalize_answer(pred);
    let pred_tokens: Vec<&str> = pred_norm.split_whitespace().collect();
    Ok(golds
        .iter()
        .map(|g| f1_single(&pred_tokens, g))
        .fold(0.0, f64::max))
}

/// Set-overlap precision and recall of predicted citations against the gold
/// supporting documents. Precision is 0 when nothing was cited.
pub fn citation_scores(predicted: &[u32], gold_supporting: &BTreeSet<u32>) -> Result<(f64, f64), MetricError> {
    if gold_supporting.is_empty() {
        return Err(MetricError::EmptySupporting);
    }
    let pred: BTreeSet<u32> = predicted.iter().copied().collect();
    let hits = pred.intersection(gold_supporting).count() as f64;
    let precision = if pred.is_empty() { 0.0 } else { hits / pred.len() as f64 };
    Ok((precision, hits / gold_supporting.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub id: String,
    pub em: u8,
    pub f1: f64,
    pub citation_precision: Option<f64>,
    pub citation_recall: Option<f64>,
    /// Number of reference answers the scores were maximized over.
    pub references_used: usize,
}

/// Scores one prediction. Citation scores are computed only when
/// `predicted_citations` is given (an attributed answer format).
pub fn score_prediction(
    id: &str,
    predicted_answer: &str,
    golds: &[String],
    predicted_citations: Option<&[u32]>,
    gold_supporting: &BTreeSet<u32>,
) -> Result<ScoredPrediction, MetricError> {
    let (citation_precision, citation_recall) = match predicted_citations {
        Some(cites) if !gold_supporting.is_empty() => {
            let (p, r) = citation_scores(cites, gold_supporting)?;
            (Some(p), Some(r))
        }
        _ => (None, None),
    };
    Ok(ScoredPrediction {
        id: id.to_string(),
        em: exact_match(predicted_answer, golds)?,
        f1: f1(predicted_answer, golds)?,
        citation_precision,
        citation_recall,
        references_used: golds.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub predictions: usize,
    pub em: f64,
    pub f1: f64,
    pub citation_precision: Option<f64>,
    pub citation_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mean_em: f64,
    pub mean_f1: f64,
    pub mean_citation_precision: Option<f64>,
    pub mean_citation_recall: Option<f64>,
    pub per_trial: Vec<TrialSummary>,
    /// max - min of mean EM over a sweep dimension, when one was tagged.
    pub performance_range: Option<f64>,
}

/// Order-independent mean: values are sorted before summation.
fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize(trial: &[ScoredPrediction]) -> TrialSummary {
    TrialSummary {
        predictions: trial.len(),
        em: mean(trial.iter().map(|p| p.em as f64)).unwrap_or(0.0),
        f1: mean(trial.iter().map(|p| p.f1)).unwrap_or(0.0),
        citation_precision: mean(trial.iter().filter_map(|p| p.citation_precision)),
        citation_recall: mean(trial.iter().filter_map(|p| p.citation_recall)),
    }
}

/// Mean over predictions within each trial, then over trials.
pub fn aggregate(trials: &[Vec<ScoredPrediction>]) -> Result<MetricReport, MetricError> {
    let first = trials.first().ok_or(MetricError::NoTrials)?;
    for (i, t) in trials.iter().enumerate() {
        if t.len() != first.len() {
            return Err(MetricError::RaggedTrials {
                trial: i,
                expected: first.len(),
                found: t.len(),
            });
        }
    }
    let per_trial: Vec<TrialSummary> = trials.iter().map(|t| summarize(t)).collect();
    // trial means are averaged in trial order
    let avg = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    Ok(MetricReport {
        mean_em: avg(per_trial.iter().map(|t| t.em).collect()).unwrap_or(0.0),
        mean_f1: avg(per_trial.iter().map(|t| t.f1).collect()).unwrap_or(0.0),
        mean_citation_precision: avg(per_trial.iter().filter_map(|t| t.citation_precision).collect()),
        mean_citation_recall: avg(per_trial.iter().filter_map(|t| t.citation_recall).collect()),
        per_trial,
        performance_range: None,
    })
}

/// max - min over the values observed along a sweep.
pub fn performance_range(values: &[f64]) -> Option<f64> {
    let max = values.iter().copied().reduce(f64::max)?;
    let min = values.iter().copied().reduce(f64::min)?;
    Some(max - min)
}
