//! Rule-based filtering of annotated CoQ generations.
//!
//! Five checks run on every sample; a sample is kept only if all pass. The
//! incidence report counts failures two ways: the fraction of all samples
//! that exhibit each kind, and the distribution of the first failing kind
//! (in [`FailureKind::ORDER`]) among rejected samples.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::AttributionChain;
use crate::corpus::{Document, QaInstance};
use crate::metrics::normalize_answer;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureKind {
    IncorrectAnswer,
    NonExistentAttribution,
    IncorrectCitation,
    RepeatedCitation,
    ExtremeQuote,
}

impl FailureKind {
    pub const ORDER: [FailureKind; 5] = [
        Self::IncorrectAnswer,
        Self::NonExistentAttribution,
        Self::IncorrectCitation,
        Self::RepeatedCitation,
        Self::ExtremeQuote,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::IncorrectAnswer => "Incorrect Answer",
            Self::NonExistentAttribution => "Non-Existent Attributions",
            Self::IncorrectCitation => "Incorrect Citations",
            Self::RepeatedCitation => "Repeated Citations",
            Self::ExtremeQuote => "Extreme Quotes",
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CheckOutcome {
    pub reasons: Vec<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.reasons.is_empty()
    }

    fn from_reasons(reasons: Vec<String>) -> Self {
        Self { reasons }
    }
}

pub fn check_answer(chain: &AttributionChain, answer: &str, aliases: &[String]) -> CheckOutcome {
    let predicted = normalize_answer(&chain.answer);
    let matches = std::iter::once(answer)
        .chain(aliases.iter().map(String::as_str))
        .any(|gold| normalize_answer(gold) == predicted);
    if matches {
        CheckOutcome::default()
    } else {
        CheckOutcome::from_reasons(vec![format!(
            "answer {:?} does not match gold {:?}",
            chain.answer, answer
        )])
    }
}

fn doc_by_index(documents: &[Document], index: u32) -> Option<&Document> {
    documents.iter().find(|d| d.index == index)
}

pub fn check_attribution_existence(chain: &AttributionChain, documents: &[Document]) -> CheckOutcome {
    let mut reasons = Vec::new();
    let mut reported = BTreeSet::new();
    for c in chain.citations() {
        if doc_by_index(documents, c).is_none() && reported.insert(c) {
            reasons.push(format!("citation {c} does not exist"));
        }
    }
    for q in chain.quotes() {
        match doc_by_index(documents, q.doc) {
            None => {
                if reported.insert(q.doc) {
                    reasons.push(format!("citation {} does not exist", q.doc));
                }
            }
            Some(doc) => {
                if !text::contains_collapsed(&doc.body, &q.text) {
                    reasons.push(format!("quote {:?} not found in document {}", q.text, q.doc));
                }
            }
        }
    }
    CheckOutcome::from_reasons(reasons)
}

pub fn check_citation_correctness(chain: &AttributionChain, supporting_ids: &BTreeSet<u32>) -> CheckOutcome {
    let mut bad: Vec<u32> = chain.citations().filter(|c| !supporting_ids.contains(c)).collect();
    bad.dedup();
    CheckOutcome::from_reasons(
        bad.into_iter()
            .map(|c| format!("citation {c} is not a supporting document"))
            .collect(),
    )
}

/// Fails if any document is cited more than once, within or across steps.
pub fn check_repeated_citations(chain: &AttributionChain) -> CheckOutcome {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for c in chain.citations() {
        *counts.entry(c).or_default() += 1;
    }
    CheckOutcome::from_reasons(
        counts
            .into_iter()
            .filter(|&(_, n)| n > 1)
            .map(|(c, n)| format!("document {c} cited {n} times"))
            .collect(),
    )
}

pub const MIN_QUOTE_WORDS_EXCLUSIVE: usize = 5;

/// Quotes must have more than five words and must not span the whole cited
/// document.
pub fn check_quote_lengths(chain: &AttributionChain, documents: &[Document]) -> CheckOutcome {
    let mut reasons = Vec::new();
    for q in chain.quotes() {
        let words = text::word_count(&q.text);
        if words <= MIN_QUOTE_WORDS_EXCLUSIVE {
            reasons.push(format!("quote {:?} has {words} words", q.text));
        }
        if let Some(doc) = doc_by_index(documents, q.doc) {
            if text::collapse_whitespace(&q.text) == text::collapse_whitespace(&doc.body) {
                reasons.push(format!("quote spans all of document {}", q.doc));
            }
        }
    }
    CheckOutcome::from_reasons(reasons)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationVerdict {
    pub sample_id: String,
    pub failures: BTreeSet<FailureKind>,
    pub details: Vec<String>,
}

impl CurationVerdict {
    pub fn kept(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn first_failure(&self) -> Option<FailureKind> {
        self.failures.iter().next().copied()
    }
}

pub fn judge(instance: &QaInstance, chain: &AttributionChain) -> CurationVerdict {
    let supporting = instance.supporting_ids();
    let checks = [
        (
            FailureKind::IncorrectAnswer,
            check_answer(chain, &instance.answer, &instance.answer_aliases),
        ),
        (
            FailureKind::NonExistentAttribution,
            check_attribution_existence(chain, &instance.documents),
        ),
        (
            FailureKind::IncorrectCitation,
            check_citation_correctness(chain, &supporting),
        ),
        (FailureKind::RepeatedCitation, check_repeated_citations(chain)),
        (FailureKind::ExtremeQuote, check_quote_lengths(chain, &instance.documents)),
    ];
    let mut failures = BTreeSet::new();
    let mut details = Vec::new();
    for (kind, outcome) in checks {
        if !outcome.passed() {
            failures.insert(kind);
            details.extend(outcome.reasons.into_iter().map(|r| format!("{kind}: {r}")));
        }
    }
    CurationVerdict {
        sample_id: instance.id.clone(),
        failures,
        details,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub total_in: usize,
    pub total_kept: usize,
    pub total_rejected: usize,
    /// Fraction of all samples exhibiting each kind.
    pub incidence_any: BTreeMap<FailureKind, f64>,
    /// Fraction of rejected samples whose first failure is each kind.
    pub incidence_among_rejected: BTreeMap<FailureKind, f64>,
    /// Samples with no citations at all; they pass the citation check
    /// vacuously.
    pub no_citation_samples: usize,
}

impl CurationReport {
    pub fn from_verdicts(verdicts: &[CurationVerdict], no_citation_samples: usize) -> Self {
        let total_in = verdicts.len();
        let rejected: Vec<&CurationVerdict> = verdicts.iter().filter(|v| !v.kept()).collect();
        let frac = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let incidence_any = FailureKind::ORDER
            .iter()
            .map(|&k| {
                let n = verdicts.iter().filter(|v| v.failures.contains(&k)).count();
                (k, frac(n, total_in))
            })
            .collect();
        let incidence_among_rejected = FailureKind::ORDER
            .iter()
            .map(|&k| {
                let n = rejected.iter().filter(|v| v.first_failure() == Some(k)).count();
                (k, frac(n, rejected.len()))
            })
            .collect();
        Self {
            total_in,
            total_kept: total_in - rejected.len(),
            total_rejected: rejected.len(),
            incidence_any,
            incidence_among_rejected,
            no_citation_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curation {
    pub kept: Vec<(QaInstance, AttributionChain)>,
    pub verdicts: Vec<CurationVerdict>,
    pub report: CurationReport,
}

/// Runs every check on every sample. Verdicts are evaluated in parallel and
/// folded in input order.
pub fn curate(samples: &[(QaInstance, AttributionChain)]) -> Curation {
    let verdicts: Vec<CurationVerdict> = samples.par_iter().map(|(inst, chain)| judge(inst, chain)).collect();
    let no_citation = samples.iter().filter(|(_, c)| c.citations().next().is_none()).count();
    let kept = samples
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| v.kept())
        .map(|(s, _)| s.clone())
        .collect();
    let report = CurationReport::from_verdicts(&verdicts, no_citation);
    Curation {
        kept,
        verdicts,
        report,
    }
}

/// A curated sample as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedRecord {
    pub instance: crate::corpus::InternalRecord,
    pub chain: AttributionChain,
}

impl CuratedRecord {
    pub fn new(instance: &QaInstance, chain: &AttributionChain) -> Self {
        Self {
            instance: instance.into(),
            chain: chain.clone(),
        }
    }

    pub fn into_pair(self) -> (QaInstance, AttributionChain) {
        (self.instance.into(), self.chain)
    }
}
