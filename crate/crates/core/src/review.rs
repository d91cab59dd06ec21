//! Human faithfulness assessment: annotation log, summaries and the sample
//! views served to reviewers.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::AttributionChain;
use crate::corpus::{Document, QaInstance};
use crate::curation::CuratedRecord;
use crate::text;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown sample {0}")]
    NotFound(String),
    #[error("invalid annotation: {0}")]
    Invalid(String),
    #[error("no annotations yet")]
    NoAnnotations,
    #[error("annotation log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("duplicate sample id {0}")]
    DuplicateSample(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorCategory {
    DisorderedSteps,
    MissingSteps,
    IncorrectSteps,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sample_id: String,
    pub faithful: bool,
    #[serde(default)]
    pub error_category: Option<ErrorCategory>,
    #[serde(default)]
    pub shortcut: bool,
    pub annotator_id: String,
    /// Filled in by the log when absent.
    #[serde(default)]
    pub timestamp: String,
}

impl Annotation {
    pub fn validate(&self) -> Result<(), ReviewError> {
        if self.annotator_id.trim().is_empty() {
            return Err(ReviewError::Invalid("annotator_id is empty".into()));
        }
        match (self.faithful, self.error_category) {
            (true, Some(_)) => Err(ReviewError::Invalid("error_category given for a faithful chain".into())),
            (false, None) => Err(ReviewError::Invalid("error_category required for an unfaithful chain".into())),
            _ => Ok(()),
        }
    }
}

/// Append-only annotation store. The latest submission per
/// (sample, annotator) supersedes earlier ones.
pub struct AnnotationLog {
    path: Option<PathBuf>,
    inner: Mutex<LogState>,
}

struct LogState {
    entries: Vec<Annotation>,
    file: Option<File>,
}

impl AnnotationLog {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(LogState {
                entries: Vec::new(),
                file: None,
            }),
        }
    }

    pub fn open(path: &Path) -> Result<Self, ReviewError> {
        let mut entries = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                entries.push(serde_json::from_str(&line).map_err(|e| ReviewError::Log {
                    line: i + 1,
                    message: e.to_string(),
                })?);
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(LogState { entries, file: None }),
        })
    }

    pub fn append(&self, mut annotation: Annotation) -> Result<Annotation, ReviewError> {
        annotation.validate()?;
        if annotation.timestamp.is_empty() {
            annotation.timestamp = chrono::Utc::now().to_rfc3339();
        }
        let mut state = self.inner.lock().expect("annotation log");
        if let Some(path) = &self.path {
            if state.file.is_none() {
                state.file = Some(OpenOptions::new().create(true).append(true).open(path)?);
            }
            let mut line = serde_json::to_string(&annotation).map_err(std::io::Error::from)?;
            line.push('\n');
            let file = state.file.as_mut().expect("file opened");
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        state.entries.push(annotation.clone());
        Ok(annotation)
    }

    pub fn entries(&self) -> Vec<Annotation> {
        self.inner.lock().expect("annotation log").entries.clone()
    }

    /// Latest annotation per (sample_id, annotator_id), in key order.
    pub fn latest(&self) -> Vec<Annotation> {
        latest(&self.entries())
    }
}

pub fn latest(entries: &[Annotation]) -> Vec<Annotation> {
    let mut by_key: BTreeMap<(String, String), Annotation> = BTreeMap::new();
    for a in entries {
        by_key.insert((a.sample_id.clone(), a.annotator_id.clone()), a.clone());
    }
    by_key.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentSummary {
    pub annotations: usize,
    pub unfaithful_fraction: f64,
    /// Share of unfaithful annotations per category; empty when none.
    pub category_split: BTreeMap<ErrorCategory, f64>,
    pub shortcut_fraction: f64,
    /// Fraction unfaithful among annotations of each hop count.
    pub per_hop_unfaithful: BTreeMap<u8, f64>,
}

/// Summary over the latest annotations. A sample flagged both as shortcut
/// and unfaithful counts in both statistics.
pub fn summarize(entries: &[Annotation], hop_of: &dyn Fn(&str) -> Option<u8>) -> Result<AssessmentSummary, ReviewError> {
    let current = latest(entries);
    if current.is_empty() {
        return Err(ReviewError::NoAnnotations);
    }
    let n = current.len() as f64;
    let unfaithful: Vec<&Annotation> = current.iter().filter(|a| !a.faithful).collect();
    let mut category_counts: BTreeMap<ErrorCategory, usize> = BTreeMap::new();
    for a in &unfaithful {
        if let Some(c) = a.error_category {
            *category_counts.entry(c).or_default() += 1;
        }
    }
    let category_split = category_counts
        .into_iter()
        .map(|(c, k)| (c, k as f64 / unfaithful.len() as f64))
        .collect();
    let mut per_hop: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    for a in &current {
        if let Some(h) = hop_of(&a.sample_id) {
            let slot = per_hop.entry(h).or_default();
            slot.0 += usize::from(!a.faithful);
            slot.1 += 1;
        }
    }
    Ok(AssessmentSummary {
        annotations: current.len(),
        unfaithful_fraction: unfaithful.len() as f64 / n,
        category_split,
        shortcut_fraction: current.iter().filter(|a| a.shortcut).count() as f64 / n,
        per_hop_unfaithful: per_hop.into_iter().map(|(h, (u, t))| (h, u as f64 / t as f64)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuoteView {
    pub text: String,
    pub doc: u32,
    /// Char offsets `[start, end)` into the document body; absent when the
    /// quote cannot be located.
    pub start: Option<usize>,
    pub end: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepView {
    pub claim: String,
    pub citations: Vec<u32>,
    pub quotes: Vec<QuoteView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePayload {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub hop_count: u8,
    pub documents: Vec<Document>,
    pub steps: Vec<StepView>,
    pub predicted_answer: String,
}

pub fn sample_payload(instance: &QaInstance, chain: &AttributionChain) -> SamplePayload {
    let steps = chain
        .steps
        .iter()
        .map(|s| StepView {
            claim: s.claim.clone(),
            citations: s.citations.clone(),
            quotes: s
                .quotes
                .iter()
                .map(|q| {
                    let span = instance
                        .document(q.doc)
                        .and_then(|d| text::locate_quote(&d.body, &q.text).filter(|&(_, e)| e <= d.body.chars().count()));
                    QuoteView {
                        text: q.text.clone(),
                        doc: q.doc,
                        start: span.map(|s| s.0),
                        end: span.map(|s| s.1),
                    }
                })
                .collect(),
        })
        .collect();
    SamplePayload {
        id: instance.id.clone(),
        question: instance.question.clone(),
        answer: instance.answer.clone(),
        hop_count: instance.hop_count,
        documents: instance.documents.clone(),
        steps,
        predicted_answer: chain.answer.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusFilter {
    Annotated,
    Unannotated,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleQuery {
    pub hop: Option<u8>,
    pub status: Option<StatusFilter>,
    pub annotator: Option<String>,
    /// 1-based.
    pub page: Option<usize>,
    pub page_size: Option<usize>,
}

pub const DEFAULT_PAGE_SIZE: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub id: String,
    pub question: String,
    pub hop_count: u8,
    /// Whether the querying annotator (or anyone, without one) has annotated it.
    pub annotated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePage {
    pub items: Vec<SampleSummary>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
}

/// Curated samples plus their annotation log.
pub struct ReviewStore {
    samples: Vec<(QaInstance, AttributionChain)>,
    by_id: HashMap<String, usize>,
    log: AnnotationLog,
}

impl ReviewStore {
    pub fn new(records: Vec<CuratedRecord>, log: AnnotationLog) -> Result<Self, ReviewError> {
        let mut samples: Vec<(QaInstance, AttributionChain)> = records.into_iter().map(CuratedRecord::into_pair).collect();
        samples.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        let mut by_id = HashMap::new();
        for (i, (inst, _)) in samples.iter().enumerate() {
            if by_id.insert(inst.id.clone(), i).is_some() {
                return Err(ReviewError::DuplicateSample(inst.id.clone()));
            }
        }
        Ok(Self { samples, by_id, log })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn list(&self, query: &SampleQuery) -> SamplePage {
        let current = self.log.latest();
        let annotated = |id: &str| {
            current
                .iter()
                .any(|a| a.sample_id == id && query.annotator.as_ref().is_none_or(|who| &a.annotator_id == who))
        };
        let matching: Vec<SampleSummary> = self
            .samples
            .iter()
            .filter(|(inst, _)| query.hop.is_none_or(|h| inst.hop_count == h))
            .map(|(inst, _)| SampleSummary {
                id: inst.id.clone(),
                question: inst.question.clone(),
                hop_count: inst.hop_count,
                annotated: annotated(&inst.id),
            })
            .filter(|s| match query.status {
                Some(StatusFilter::Annotated) => s.annotated,
                Some(StatusFilter::Unannotated) => !s.annotated,
                None => true,
            })
            .collect();
        let page_size = query.page_size.unwrap_or(DEFAULT_PAGE_SIZE).max(1);
        let page = query.page.unwrap_or(1).max(1);
        let total = matching.len();
        let items = matching.into_iter().skip((page - 1) * page_size).take(page_size).collect();
        SamplePage {
            items,
            page,
            page_size,
            total,
        }
    }

    pub fn get(&self, id: &str) -> Result<SamplePayload, ReviewError> {
        let &i = self.by_id.get(id).ok_or_else(|| ReviewError::NotFound(id.to_string()))?;
        let (inst, chain) = &self.samples[i];
        Ok(sample_payload(inst, chain))
    }

    pub fn submit(&self, annotation: Annotation) -> Result<Annotation, ReviewError> {
        if !self.by_id.contains_key(&annotation.sample_id) {
            return Err(ReviewError::NotFound(annotation.sample_id));
        }
        self.log.append(annotation)
    }

    pub fn summary(&self) -> Result<AssessmentSummary, ReviewError> {
        let hop_of = |id: &str| self.by_id.get(id).map(|&i| self.samples[i].0.hop_count);
        summarize(&self.log.entries(), &hop_of)
    }
}
