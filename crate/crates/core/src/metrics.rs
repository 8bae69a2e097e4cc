//! Retrieval precision/recall/F and runtime summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::align::TimeInterval;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Totals over all queries.
    #[default]
    Micro,
    /// Mean of per-query precision and recall.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub id: String,
    pub prediction: TimeInterval,
    pub overlap: f64,
    pub best_ground_truth: TimeInterval,
}

impl QueryScore {
    pub fn precision(&self) -> f64 {
        ratio(self.overlap, self.prediction.duration())
    }

    pub fn recall(&self) -> f64 {
        ratio(self.overlap, self.best_ground_truth.duration())
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub mean_seconds: f64,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub averaging: Averaging,
    pub queries: Vec<QueryScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runtime: Vec<StageTime>,
}

/// Scores each prediction against the ground-truth interval it overlaps most.
pub fn compute_metrics(
    predictions: &BTreeMap<String, TimeInterval>,
    ground_truth: &BTreeMap<String, Vec<TimeInterval>>,
    averaging: Averaging,
) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::Evaluation("no predictions".into()));
    }
    let missing: Vec<&String> = predictions
        .keys()
        .filter(|k| !ground_truth.contains_key(*k))
        .chain(ground_truth.keys().filter(|k| !predictions.contains_key(*k)))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Evaluation(format!("unmatched query ids: {missing:?}")));
    }
    let mut queries = Vec::with_capacity(predictions.len());
    for (id, pred) in predictions {
        let gts = &ground_truth[id];
        let mut best: Option<(f64, TimeInterval)> = None;
        for gt in gts {
            let ov = pred.overlap(gt);
            if best.is_none_or(|(b, _)| ov > b) {
                best = Some((ov, *gt));
            }
        }
        let (overlap, best_ground_truth) =
            best.ok_or_else(|| Error::Evaluation(format!("query {id} has no ground-truth interval")))?;
        queries.push(QueryScore {
            id: id.clone(),
            prediction: *pred,
            overlap,
            best_ground_truth,
        });
    }
    let (precision, recall) = match averaging {
        Averaging::Micro => {
            let overlap: f64 = queries.iter().map(|q| q.overlap).sum();
            let predicted: f64 = queries.iter().map(|q| q.prediction.duration()).sum();
            let truth: f64 = queries.iter().map(|q| q.best_ground_truth.duration()).sum();
            (ratio(overlap, predicted), ratio(overlap, truth))
        }
        Averaging::Macro => {
            let n = queries.len() as f64;
            (
                queries.iter().map(QueryScore::precision).sum::<f64>() / n,
                queries.iter().map(QueryScore::recall).sum::<f64>() / n,
            )
        }
    };
    Ok(MetricsReport {
        precision,
        recall,
        f_measure: f_measure(precision, recall),
        averaging,
        queries,
        runtime: Vec::new(),
    })
}

/// Mean per-stage time and share of the total over several runs, keeping
/// the stage order of the first run.
pub fn summarize_runtime(runs: &[Vec<(String, f64)>]) -> Vec<StageTime> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let means: Vec<(String, f64)> = first
        .iter()
        .map(|(stage, _)| {
            let total: f64 = runs
                .iter()
                .flat_map(|r| r.iter().filter(|(s, _)| s == stage).map(|(_, t)| t))
                .sum();
            (stage.clone(), total / runs.len() as f64)
        })
        .collect();
    let total: f64 = means.iter().map(|(_, t)| t).sum();
    means
        .into_iter()
        .map(|(stage, mean_seconds)| StageTime {
            stage,
            mean_seconds,
            percentage: if total > 0.0 { 100.0 * mean_seconds / total } else { 0.0 },
        })
        .collect()
}
