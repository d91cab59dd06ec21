//! Multi-hop QA corpora in one normalized schema: loading from the native
//! dataset layouts, validation, seeded subsampling and summary statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::chains::AttributionChain;
use crate::prompting::{self, PromptMode};
use crate::seed;
use crate::text;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("unknown corpus format {0:?} (expected musique, twowiki, hotpot or internal)")]
    UnknownFormat(String),
    #[error("cannot take {requested} samples from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("{chains} chains supplied for {instances} instances")]
    ChainCountMismatch { instances: usize, chains: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    /// 1-based position in the rendered context.
    pub index: u32,
    pub title: String,
    pub body: String,
    pub is_supporting: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaInstance {
    pub id: String,
    pub question: String,
    pub documents: Vec<Document>,
    pub answer: String,
    pub answer_aliases: Vec<String>,
    pub hop_count: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Vec<String>>,
}

impl QaInstance {
    pub fn supporting_ids(&self) -> BTreeSet<u32> {
        self.documents
            .iter()
            .filter(|d| d.is_supporting)
            .map(|d| d.index)
            .collect()
    }

    /// Gold answer followed by any distinct aliases.
    pub fn references(&self) -> Vec<String> {
        let mut refs = vec![self.answer.clone()];
        for alias in &self.answer_aliases {
            if !refs.contains(alias) {
                refs.push(alias.clone());
            }
        }
        refs
    }

    pub fn document(&self, index: u32) -> Option<&Document> {
        self.documents.iter().find(|d| d.index == index)
    }
}

/// Assigns 1-based indices by position.
pub fn reindex(documents: &mut [Document]) {
    for (i, doc) in documents.iter_mut().enumerate() {
        doc.index = i as u32 + 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Musique,
    Twowiki,
    Hotpot,
    Internal,
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "musique" => Ok(Self::Musique),
            "twowiki" | "2wiki" => Ok(Self::Twowiki),
            "hotpot" | "hotpotqa" => Ok(Self::Hotpot),
            "internal" => Ok(Self::Internal),
            _ => Err(CorpusError::UnknownFormat(s.to_string())),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Musique => "musique",
            Self::Twowiki => "twowiki",
            Self::Hotpot => "hotpot",
            Self::Internal => "internal",
        })
    }
}

/// On-disk layout of the internal format. Indices are implicit (by position).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalRecord {
    pub id: String,
    pub question: String,
    pub documents: Vec<InternalDocument>,
    pub answer: String,
    pub answer_aliases: Vec<String>,
    pub hop_count: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalDocument {
    pub title: String,
    pub body: String,
    pub is_supporting: bool,
}

impl From<&QaInstance> for InternalRecord {
    fn from(inst: &QaInstance) -> Self {
        Self {
            id: inst.id.clone(),
            question: inst.question.clone(),
            documents: inst
                .documents
                .iter()
                .map(|d| InternalDocument {
                    title: d.title.clone(),
                    body: d.body.clone(),
                    is_supporting: d.is_supporting,
                })
                .collect(),
            answer: inst.answer.clone(),
            answer_aliases: inst.answer_aliases.clone(),
            hop_count: inst.hop_count,
            decomposition: inst.decomposition.clone(),
        }
    }
}

impl From<InternalRecord> for QaInstance {
    fn from(rec: InternalRecord) -> Self {
        let documents = rec
            .documents
            .into_iter()
            .enumerate()
            .map(|(i, d)| Document {
                index: i as u32 + 1,
                title: d.title,
                body: d.body,
                is_supporting: d.is_supporting,
            })
            .collect();
        Self {
            id: rec.id,
            question: rec.question,
            documents,
            answer: rec.answer,
            answer_aliases: rec.answer_aliases,
            hop_count: rec.hop_count,
            decomposition: rec.decomposition,
        }
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<QaInstance>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_corpus(BufReader::new(file), format).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

/// Reads one record per non-blank line.
pub fn read_corpus<R: BufRead>(reader: R, format: CorpusFormat) -> Result<Vec<QaInstance>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec_err = |message: String| CorpusError::Record {
            line: line_no,
            message,
        };
        let value: Value = serde_json::from_str(&line).map_err(|e| rec_err(format!("invalid json: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| rec_err("record is not a json object".into()))?;
        let instance = match format {
            CorpusFormat::Internal => parse_internal(obj),
            CorpusFormat::Musique => parse_musique(obj),
            CorpusFormat::Twowiki => parse_wiki_style(obj, false),
            CorpusFormat::Hotpot => parse_wiki_style(obj, true),
        }
        .map_err(rec_err)?;
        let report = validate_instance(&instance);
        if !report.is_valid() {
            return Err(rec_err(format!("invalid instance: {}", report.violations.join("; "))));
        }
        out.push(instance);
    }
    Ok(out)
}

pub fn write_internal<W: Write>(corpus: &[QaInstance], mut writer: W) -> std::io::Result<()> {
    for inst in corpus {
        let line = serde_json::to_string(&InternalRecord::from(inst)).map_err(std::io::Error::other)?;
        writeln!(writer, "{line}")?;
    }
    writer.flush()
}

type FieldResult<T> = Result<T, String>;

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> FieldResult<&'a Value> {
    obj.get(name)
        .filter(|v| !v.is_null())
        .ok_or_else(|| format!("missing field: {name}"))
}

fn str_field(obj: &Map<String, Value>, name: &str) -> FieldResult<String> {
    match field(obj, name)? {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(format!("field {name} is not a string")),
    }
}

fn array_field<'a>(obj: &'a Map<String, Value>, name: &str) -> FieldResult<&'a Vec<Value>> {
    field(obj, name)?
        .as_array()
        .ok_or_else(|| format!("field {name} is not an array"))
}

fn string_list(value: &Value, name: &str) -> FieldResult<Vec<String>> {
    value
        .as_array()
        .ok_or_else(|| format!("field {name} is not an array"))?
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| format!("field {name} contains a non-string"))
        })
        .collect()
}

fn aliases_or_answer(obj: &Map<String, Value>, answer: &str) -> FieldResult<Vec<String>> {
    match obj.get("answer_aliases").filter(|v| !v.is_null()) {
        Some(v) => string_list(v, "answer_aliases"),
        None => Ok(vec![answer.to_string()]),
    }
}

fn hop_from_id(id: &str) -> Option<u8> {
    let (prefix, _) = id.split_once("hop")?;
    prefix.parse().ok()
}

fn parse_internal(obj: &Map<String, Value>) -> FieldResult<QaInstance> {
    let id = str_field(obj, "id")?;
    let question = str_field(obj, "question")?;
    let docs = array_field(obj, "documents")?;
    let answer = str_field(obj, "answer")?;
    let answer_aliases = aliases_or_answer(obj, &answer)?;
    let hop_count = field(obj, "hop_count")?
        .as_u64()
        .ok_or("field hop_count is not an integer")? as u8;
    let decomposition = match obj.get("decomposition").filter(|v| !v.is_null()) {
        Some(v) => Some(string_list(v, "decomposition")?),
        None => None,
    };
    let mut documents = Vec::with_capacity(docs.len());
    for (i, d) in docs.iter().enumerate() {
        let d = d.as_object().ok_or("document is not an object")?;
        documents.push(Document {
            index: i as u32 + 1,
            title: str_field(d, "title").map_err(|e| format!("document {}: {e}", i + 1))?,
            body: str_field(d, "body").map_err(|e| format!("document {}: {e}", i + 1))?,
            is_supporting: d.get("is_supporting").and_then(Value::as_bool).unwrap_or(false),
        });
    }
    Ok(QaInstance {
        id,
        question,
        documents,
        answer,
        answer_aliases,
        hop_count,
        decomposition,
    })
}

fn parse_musique(obj: &Map<String, Value>) -> FieldResult<QaInstance> {
    let id = str_field(obj, "id")?;
    let question = str_field(obj, "question")?;
    let paragraphs = array_field(obj, "paragraphs")?;
    let answer = str_field(obj, "answer")?;
    let answer_aliases = aliases_or_answer(obj, &answer)?;
    let decomposition = match obj.get("question_decomposition").and_then(Value::as_array) {
        Some(steps) => Some(
            steps
                .iter()
                .map(|s| {
                    s.get("question")
                        .and_then(Value::as_str)
                        .map(str::to_string)
                        .ok_or_else(|| "question_decomposition entry lacks question".to_string())
                })
                .collect::<FieldResult<Vec<_>>>()?,
        ),
        None => None,
    };
    let hop_count = decomposition
        .as_ref()
        .map(|d| d.len() as u8)
        .filter(|n| (2..=4).contains(n))
        .or_else(|| hop_from_id(&id))
        .ok_or("cannot determine hop count")?;
    let mut documents = Vec::with_capacity(paragraphs.len());
    for (i, p) in paragraphs.iter().enumerate() {
        let p = p.as_object().ok_or("paragraph is not an object")?;
        documents.push(Document {
            index: i as u32 + 1,
            title: str_field(p, "title").map_err(|e| format!("paragraph {}: {e}", i + 1))?,
            body: str_field(p, "paragraph_text").map_err(|e| format!("paragraph {}: {e}", i + 1))?,
            is_supporting: p.get("is_supporting").and_then(Value::as_bool).unwrap_or(false),
        });
    }
    Ok(QaInstance {
        id,
        question,
        documents,
        answer,
        answer_aliases,
        hop_count,
        decomposition,
    })
}

/// 2WikiMultihopQA and HotpotQA share `context: [[title, [sentences]]]` and
/// `supporting_facts: [[title, sentence_idx]]`.
fn parse_wiki_style(obj: &Map<String, Value>, hotpot: bool) -> FieldResult<QaInstance> {
    let id = str_field(obj, "_id").or_else(|_| str_field(obj, "id"))?;
    let question = str_field(obj, "question")?;
    let context = array_field(obj, "context")?;
    let answer = str_field(obj, "answer")?;
    let answer_aliases = aliases_or_answer(obj, &answer)?;
    let supporting: BTreeSet<String> = array_field(obj, "supporting_facts")?
        .iter()
        .filter_map(|f| f.get(0).and_then(Value::as_str).map(str::to_string))
        .collect();
    let mut documents = Vec::with_capacity(context.len());
    for (i, entry) in context.iter().enumerate() {
        let title = entry
            .get(0)
            .and_then(Value::as_str)
            .ok_or_else(|| format!("context entry {} lacks a title", i + 1))?;
        let sentences = entry
            .get(1)
            .and_then(Value::as_array)
            .ok_or_else(|| format!("context entry {} lacks sentences", i + 1))?;
        let body = sentences
            .iter()
            .filter_map(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        documents.push(Document {
            index: i as u32 + 1,
            title: title.to_string(),
            body,
            is_supporting: supporting.contains(title),
        });
    }
    let hop_count = if hotpot {
        2
    } else {
        supporting.len().clamp(2, 4) as u8
    };
    Ok(QaInstance {
        id,
        question,
        documents,
        answer,
        answer_aliases,
        hop_count,
        decomposition: None,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_instance(instance: &QaInstance) -> ValidationReport {
    let mut v = Vec::new();
    if instance.id.trim().is_empty() {
        v.push("empty id".to_string());
    }
    if instance.question.trim().is_empty() {
        v.push("empty question".to_string());
    }
    if instance.answer.trim().is_empty() {
        v.push("empty answer".to_string());
    }
    if !(2..=4).contains(&instance.hop_count) {
        v.push(format!("hop_count {} outside {{2,3,4}}", instance.hop_count));
    }
    if !instance.documents.iter().any(|d| d.is_supporting) {
        v.push("no supporting document".to_string());
    }
    let mut seen = BTreeSet::new();
    for doc in &instance.documents {
        if doc.index < 1 {
            v.push(format!("index {} below 1", doc.index));
        }
        if !seen.insert(doc.index) {
            v.push(format!("duplicate index {}", doc.index));
        }
        if doc.title.trim().is_empty() {
            v.push(format!("empty title at index {}", doc.index));
        }
        if doc.body.trim().is_empty() {
            v.push(format!("empty body at index {}", doc.index));
        }
    }
    let n = instance.documents.len() as u32;
    if seen.len() == instance.documents.len() && !seen.iter().copied().eq(1..=n) {
        v.push("indices not contiguous from 1".to_string());
    }
    ValidationReport { violations: v }
}

/// Draws `n` distinct instances in a seed-determined order.
pub fn subsample(corpus: &[QaInstance], n: usize, seed: u64) -> Result<Vec<QaInstance>, CorpusError> {
    if n > corpus.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: corpus.len(),
        });
    }
    let mut rng = seed::rng(seed);
    Ok(index::sample(&mut rng, corpus.len(), n)
        .into_iter()
        .map(|i| corpus[i].clone())
        .collect())
}

pub const WORD_COUNT_BASIS: &str = "rendered training sample: context lines, question block and target response; \
whitespace tokens with edge punctuation stripped";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_samples: usize,
    pub max_words_per_sample: usize,
    pub mean_words_per_sample: f64,
    pub hop_distribution: BTreeMap<u8, f64>,
    pub mean_words_per_step: Option<f64>,
    pub mean_words_per_quote: Option<f64>,
    pub word_count_basis: String,
}

/// The text a training sample is counted over: the CoQ-style user turn and
/// the target (the chain's raw text when available, else the gold answer).
pub fn rendered_sample(instance: &QaInstance, chain: Option<&AttributionChain>) -> String {
    let user = prompting::render_user(&instance.documents, &instance.question, PromptMode::Coq);
    let target = chain.map_or(instance.answer.as_str(), |c| c.raw.as_str());
    format!("{user}\n{target}")
}

pub fn corpus_stats(
    corpus: &[QaInstance],
    chains: Option<&[AttributionChain]>,
) -> Result<CorpusStats, CorpusError> {
    if let Some(chains) = chains {
        if chains.len() != corpus.len() {
            return Err(CorpusError::ChainCountMismatch {
                instances: corpus.len(),
                chains: chains.len(),
            });
        }
    }
    let sample_words: Vec<usize> = corpus
        .iter()
        .enumerate()
        .map(|(i, inst)| text::word_count(&rendered_sample(inst, chains.map(|c| &c[i]))))
        .collect();
    let total = corpus.len();
    let mut hop_counts: BTreeMap<u8, usize> = BTreeMap::new();
    for inst in corpus {
        *hop_counts.entry(inst.hop_count).or_default() += 1;
    }
    let hop_distribution = hop_counts
        .into_iter()
        .map(|(h, c)| (h, c as f64 / total as f64))
        .collect();

    let mean = |xs: &[usize]| -> Option<f64> {
        (!xs.is_empty()).then(|| xs.iter().sum::<usize>() as f64 / xs.len() as f64)
    };
    let (step_words, quote_words): (Vec<usize>, Vec<usize>) = match chains {
        Some(chains) => (
            chains
                .iter()
                .flat_map(|c| c.steps.iter().map(|s| text::word_count(&s.claim)))
                .collect(),
            chains
                .iter()
                .flat_map(|c| c.steps.iter().flat_map(|s| s.quotes.iter().map(|q| text::word_count(&q.text))))
                .collect(),
        ),
        None => (Vec::new(), Vec::new()),
    };

    Ok(CorpusStats {
        total_samples: total,
        max_words_per_sample: sample_words.iter().copied().max().unwrap_or(0),
        mean_words_per_sample: mean(&sample_words).unwrap_or(0.0),
        hop_distribution,
        mean_words_per_step: mean(&step_words),
        mean_words_per_quote: mean(&quote_words),
        word_count_basis: WORD_COUNT_BASIS.to_string(),
    })
}
