//! Multi-task training data: LA, AP, CG and QI examples, context
//! augmentation, evaluation noise and instruction-tuning export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::{convert, parse_chain, remap_citations, render_chain, AttributionChain, ChainError};
use crate::corpus::{reindex, Document, QaInstance};
use crate::prompting::{build_instruction, quote_listing_instruction, render_user, PromptMode};
use crate::seed;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("chain has no quotes")]
    MissingQuotes,
    #[error("supporting document {0} missing from context")]
    MissingSupporting(u32),
    #[error("invalid augment policy: {0}")]
    InvalidPolicy(String),
    #[error("noise ratio {0} outside 0..=100")]
    InvalidRatio(u32),
    #[error("mixin has {found} records, expected {expected}")]
    MixinSize { expected: usize, found: usize },
    #[error("unknown task: {0}")]
    UnknownTask(String),
    #[error("malformed target: {0}")]
    Target(String),
    #[error("mixin line {line}: {message}")]
    MixinRecord { line: usize, message: String },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "LA")]
    La,
    #[serde(rename = "AP")]
    Ap,
    #[serde(rename = "CG")]
    Cg,
    #[serde(rename = "QI")]
    Qi,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [Self::La, Self::Ap, Self::Cg, Self::Qi];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::La => "LA",
            Self::Ap => "AP",
            Self::Cg => "CG",
            Self::Qi => "QI",
        }
    }

    /// Mode used for the question block; QI carries no step-by-step suffix.
    fn question_mode(self) -> PromptMode {
        match self {
            Self::La => PromptMode::Coc,
            Self::Cg => PromptMode::Cot,
            Self::Ap | Self::Qi => PromptMode::Ao,
        }
    }

    pub fn instruction(self) -> &'static str {
        match self {
            Self::La => build_instruction(PromptMode::Coc),
            Self::Cg => build_instruction(PromptMode::Cot),
            Self::Ap => build_instruction(PromptMode::Ao),
            Self::Qi => quote_listing_instruction(),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "la" => Ok(Self::La),
            "ap" => Ok(Self::Ap),
            "cg" => Ok(Self::Cg),
            "qi" => Ok(Self::Qi),
            other => Err(TaskError::UnknownTask(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExample {
    pub id: String,
    pub task: TaskKind,
    pub instruction: String,
    pub context_documents: Vec<Document>,
    pub question: String,
    pub target: String,
}

impl TaskExample {
    pub fn input(&self) -> String {
        render_user(&self.context_documents, &self.question, self.task.question_mode())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub min_distractors: usize,
    /// `None` means all available distractors.
    pub max_distractors: Option<usize>,
    pub shuffle: bool,
    pub copies: usize,
}

impl AugmentPolicy {
    /// Keeps every document in its place.
    pub const IDENTITY: AugmentPolicy = AugmentPolicy {
        min_distractors: usize::MAX,
        max_distractors: None,
        shuffle: false,
        copies: 1,
    };

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.copies == 0 {
            return Err(TaskError::InvalidPolicy("copies must be at least 1".into()));
        }
        if let Some(max) = self.max_distractors {
            if self.min_distractors > max {
                return Err(TaskError::InvalidPolicy(format!(
                    "min_distractors {} exceeds max_distractors {max}",
                    self.min_distractors
                )));
            }
        }
        Ok(())
    }
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            min_distractors: 0,
            max_distractors: None,
            shuffle: true,
            copies: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub ratio_percent: u32,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(ratio_percent: u32, seed: u64) -> Result<Self, TaskError> {
        if ratio_percent > 100 {
            return Err(TaskError::InvalidRatio(ratio_percent));
        }
        Ok(Self { ratio_percent, seed })
    }
}

fn render_quote_lines(chain: &AttributionChain) -> String {
    chain
        .quotes()
        .map(|q| format!("\"{}\" [{}]", q.text, q.doc))
        .collect::<Vec<_>>()
        .join("\n")
}

fn parse_quote_line(line: &str) -> Result<(&str, u32), TaskError> {
    let bad = || TaskError::Target(line.to_string());
    let open = line.rfind(" [").ok_or_else(bad)?;
    let index = line[open + 2..].strip_suffix(']').ok_or_else(bad)?;
    let doc = index.parse().map_err(|_| bad())?;
    Ok((&line[..open], doc))
}

pub fn build_example(instance: &QaInstance, chain: &AttributionChain, task: TaskKind) -> Result<TaskExample, TaskError> {
    let target = match task {
        TaskKind::La => render_chain(&convert(chain, PromptMode::Coc)?, PromptMode::Coc)?,
        TaskKind::Cg => render_chain(&convert(chain, PromptMode::Cot)?, PromptMode::Cot)?,
        TaskKind::Ap => chain.answer.clone(),
        TaskKind::Qi => {
            if chain.quotes().next().is_none() {
                return Err(TaskError::MissingQuotes);
            }
            render_quote_lines(chain)
        }
    };
    Ok(TaskExample {
        id: format!("{}:{}", instance.id, task),
        task,
        instruction: task.instruction().to_string(),
        context_documents: instance.documents.clone(),
        question: instance.question.clone(),
        target,
    })
}

fn remap_target(example: &TaskExample, map: &BTreeMap<u32, u32>) -> Result<String, TaskError> {
    match example.task {
        TaskKind::La => {
            let chain = parse_chain(&example.target, PromptMode::Coc)?;
            Ok(render_chain(&remap_citations(&chain, map)?, PromptMode::Coc)?)
        }
        TaskKind::Ap | TaskKind::Cg => Ok(example.target.clone()),
        TaskKind::Qi => {
            let lines = example
                .target
                .lines()
                .map(|line| {
                    let (quote, doc) = parse_quote_line(line)?;
                    let new = map.get(&doc).ok_or(ChainError::UnmappedCitation(doc))?;
                    Ok(format!("{quote} [{new}]"))
                })
                .collect::<Result<Vec<_>, TaskError>>()?;
            Ok(lines.join("\n"))
        }
    }
}

/// Selects `keep` distractors at random, keeps all supporting documents,
/// optionally shuffles, and re-indexes. Returns the new context and the
/// old-to-new index map over retained documents. Without shuffling the
/// original relative order is preserved.
fn resample_context<R: Rng>(
    documents: &[Document],
    supporting: &BTreeSet<u32>,
    keep: usize,
    shuffle: bool,
    rng: &mut R,
) -> (Vec<Document>, BTreeMap<u32, u32>) {
    let mut distractors: Vec<&Document> = documents.iter().filter(|d| !supporting.contains(&d.index)).collect();
    distractors.shuffle(rng);
    let chosen: BTreeSet<u32> = distractors.iter().take(keep).map(|d| d.index).collect();
    let mut kept: Vec<Document> = documents
        .iter()
        .filter(|d| supporting.contains(&d.index) || chosen.contains(&d.index))
        .cloned()
        .collect();
    if shuffle {
        kept.shuffle(rng);
    }
    let old: Vec<u32> = kept.iter().map(|d| d.index).collect();
    reindex(&mut kept);
    let map = old.into_iter().zip(kept.iter().map(|d| d.index)).collect();
    (kept, map)
}

fn check_supporting(documents: &[Document], supporting: &BTreeSet<u32>) -> Result<(), TaskError> {
    for &s in supporting {
        if !documents.iter().any(|d| d.index == s) {
            return Err(TaskError::MissingSupporting(s));
        }
    }
    Ok(())
}

/// Produces `policy.copies` resampled variants of `example`, each with its
/// target citations rewritten to follow the moved documents.
pub fn augment(
    example: &TaskExample,
    supporting_ids: &BTreeSet<u32>,
    policy: &AugmentPolicy,
    master_seed: u64,
) -> Result<Vec<TaskExample>, TaskError> {
    policy.validate()?;
    check_supporting(&example.context_documents, supporting_ids)?;
    let available = example.context_documents.len() - supporting_ids.len();
    let max = policy.max_distractors.unwrap_or(available).min(available);
    let min = policy.min_distractors.min(max);
    (0..policy.copies)
        .map(|copy| {
            let copy_label = copy.to_string();
            let mut rng = seed::derived_rng(master_seed, &[&example.id, &copy_label]);
            let keep = rng.gen_range(min..=max);
            let (context, map) =
                resample_context(&example.context_documents, supporting_ids, keep, policy.shuffle, &mut rng);
            Ok(TaskExample {
                id: format!("{}:{copy}", example.id),
                task: example.task,
                instruction: example.instruction.clone(),
                context_documents: context,
                question: example.question.clone(),
                target: remap_target(example, &map)?,
            })
        })
        .collect()
}

/// Number of distractors kept at `ratio_percent` of `available`, rounding
/// half up.
pub fn noise_keep_count(ratio_percent: u32, available: usize) -> usize {
    (ratio_percent as usize * available + 50) / 100
}

/// Like [`apply_noise`], also returning the old-to-new index map.
pub fn apply_noise_with_map(instance: &QaInstance, spec: &NoiseSpec) -> (QaInstance, BTreeMap<u32, u32>) {
    let supporting = instance.supporting_ids();
    let available = instance.documents.len() - supporting.len();
    let keep = noise_keep_count(spec.ratio_percent.min(100), available);
    // Same stream for every ratio, so lower ratios keep a subset of the
    // distractors kept by higher ones.
    let mut rng = seed::derived_rng(spec.seed, &[&instance.id, "noise"]);
    let (documents, map) = resample_context(&instance.documents, &supporting, keep, true, &mut rng);
    let mut out = instance.clone();
    out.documents = documents;
    (out, map)
}

pub fn apply_noise(instance: &QaInstance, spec: &NoiseSpec) -> QaInstance {
    apply_noise_with_map(instance, spec).0
}

/// Generic instruction-following record used for mixing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    #[serde(default)]
    pub id: String,
    pub instruction: String,
    #[serde(default)]
    pub input: String,
    pub output: String,
}

impl From<&TaskExample> for InstructionRecord {
    fn from(ex: &TaskExample) -> Self {
        Self {
            id: ex.id.clone(),
            instruction: ex.instruction.clone(),
            input: ex.input(),
            output: ex.target.clone(),
        }
    }
}

pub fn read_instruction_records<R: BufRead>(reader: R) -> Result<Vec<InstructionRecord>, TaskError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: InstructionRecord = serde_json::from_str(&line).map_err(|e| TaskError::MixinRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.id.is_empty() {
            rec.id = format!("mixin-{}", out.len() + 1);
        }
        out.push(rec);
    }
    Ok(out)
}

/// Orders the reasoning records together with the mixin under `seed`.
pub fn export_records(
    examples: &[TaskExample],
    mixin: Option<&[InstructionRecord]>,
    seed_value: u64,
) -> Result<Vec<InstructionRecord>, TaskError> {
    let mut records: Vec<InstructionRecord> = examples.iter().map(InstructionRecord::from).collect();
    if let Some(mixin) = mixin {
        if mixin.len() != examples.len() {
            return Err(TaskError::MixinSize {
                expected: examples.len(),
                found: mixin.len(),
            });
        }
        records.extend(mixin.iter().cloned());
    }
    records.shuffle(&mut seed::derived_rng(seed_value, &["export"]));
    Ok(records)
}

pub fn export<W: Write>(
    examples: &[TaskExample],
    mixin: Option<&[InstructionRecord]>,
    seed_value: u64,
    mut writer: W,
) -> Result<usize, TaskError> {
    let records = export_records(examples, mixin, seed_value)?;
    for rec in &records {
        serde_json::to_writer(&mut writer, rec).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(records.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub tasks: Vec<TaskKind>,
    pub policy: AugmentPolicy,
    /// Tasks emitted once with their original context.
    pub no_augment: BTreeSet<TaskKind>,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            tasks: TaskKind::ALL.to_vec(),
            policy: AugmentPolicy::default(),
            no_augment: BTreeSet::from([TaskKind::Qi]),
            seed: 0,
        }
    }
}

/// Builds every requested task for every curated sample. Work runs in
/// parallel; the output order is sample, then task, then copy.
pub fn build_tasks(samples: &[(QaInstance, AttributionChain)], config: &BuildConfig) -> Result<Vec<TaskExample>, TaskError> {
    config.policy.validate()?;
    let nested: Vec<Vec<TaskExample>> = samples
        .par_iter()
        .map(|(instance, chain)| {
            let supporting = instance.supporting_ids();
            let mut out = Vec::new();
            for &task in &config.tasks {
                let example = build_example(instance, chain, task)?;
                if config.no_augment.contains(&task) {
                    out.push(example);
                } else {
                    out.extend(augment(&example, &supporting, &config.policy, config.seed)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_, TaskError>>()?;
    Ok(nested.into_iter().flatten().collect())
}
