//! Batch evaluation over a JSONL manifest of (image, MIDI, ground truth).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::TimeInterval;
use crate::config::HyperParams;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, summarize_runtime, Averaging, MetricsReport};
use crate::par;
use crate::pipeline::{run_query, QueryResult, Reference};

/// One line of an evaluation manifest. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub midi: PathBuf,
    pub intervals: Vec<TimeInterval>,
}

/// Parses a manifest, resolving paths against its directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry = serde_json::from_str(line)
            .map_err(|e| Error::Evaluation(format!("{}:{}: {e}", path.display(), i + 1)))?;
        entry.image = base.join(&entry.image);
        entry.midi = base.join(&entry.midi);
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::Evaluation(format!("{} lists no queries", path.display())));
    }
    let mut seen = std::collections::BTreeSet::new();
    for e in &entries {
        if !seen.insert(&e.id) {
            return Err(Error::Evaluation(format!("duplicate query id {}", e.id)));
        }
    }
    Ok(entries)
}

/// Every referenced file that does not exist, in manifest order.
pub fn missing_files(entries: &[ManifestEntry]) -> Vec<PathBuf> {
    entries
        .iter()
        .flat_map(|e| [&e.image, &e.midi])
        .filter(|p| !p.is_file())
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(flatten)]
    pub metrics: MetricsReport,
    /// Queries that produced no match, with the reason.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub no_match: BTreeMap<String, String>,
    /// Referenced files that were not found; their queries count as no-match.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_files: Vec<PathBuf>,
}

/// Runs every query of the manifest and scores the predictions. Queries
/// whose files are missing or unreadable are scored as no-match and the
/// run continues.
pub fn evaluate(entries: &[ManifestEntry], params: &HyperParams, averaging: Averaging) -> Result<EvaluationReport> {
    if entries.is_empty() {
        return Err(Error::Evaluation("no queries to evaluate".into()));
    }
    let missing = missing_files(entries);
    for path in &missing {
        log::warn!("missing file {}", path.display());
    }
    let results = par::map(entries, |e| -> Result<Option<QueryResult>> {
        if !e.image.is_file() || !e.midi.is_file() {
            return Ok(None);
        }
        let image = std::fs::read(&e.image)?;
        let midi = std::fs::read(&e.midi)?;
        run_query(&image, Reference::Midi(&midi), params).map(Some)
    });
    let mut predictions = BTreeMap::new();
    let mut truth = BTreeMap::new();
    let mut no_match = BTreeMap::new();
    let mut runs = Vec::with_capacity(entries.len());
    for (e, r) in entries.iter().zip(results) {
        truth.insert(e.id.clone(), e.intervals.clone());
        let r = match r {
            Ok(Some(r)) => r,
            failed => {
                let reason = match failed {
                    Err(err) => err.to_string(),
                    _ => "missing input file".to_string(),
                };
                log::warn!("query {}: {reason}", e.id);
                no_match.insert(e.id.clone(), reason);
                predictions.insert(e.id.clone(), TimeInterval::zero());
                continue;
            }
        };
        if let Some(reason) = r.no_match {
            no_match.insert(e.id.clone(), reason);
        }
        predictions.insert(e.id.clone(), r.interval);
        runs.push(r.timings.stages);
    }
    let mut metrics = compute_metrics(&predictions, &truth, averaging)?;
    metrics.runtime = summarize_runtime(&runs);
    Ok(EvaluationReport {
        metrics,
        no_match,
        missing_files: missing,
    })
}
