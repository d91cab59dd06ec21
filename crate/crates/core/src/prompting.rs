//! Prompt construction for the four answer formats: instructions, context
//! rendering, demonstrations as dialogue turns, and fitting to a token budget.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chains::{self, ChainError};
use crate::corpus::{Document, InternalRecord, QaInstance};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("document indices are not contiguous from 1 (found {found} at position {position})")]
    NonContiguous { position: usize, found: u32 },
    #[error("prompt without demonstrations needs {needed} tokens, budget is {budget} (over by {overflow})")]
    Overflow { needed: usize, budget: usize, overflow: usize },
    #[error("demonstration {id} does not match {mode}: {source}")]
    Demonstration {
        id: String,
        mode: PromptMode,
        #[source]
        source: ChainError,
    },
    #[error("unknown prompt mode {0:?} (expected ao, cot, coc or coq)")]
    UnknownMode(String),
    #[error("demonstration file line {line}: {message}")]
    DemoRecord { line: usize, message: String },
}

/// Answer format requested from the model, ordered by how much attribution
/// detail it carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Ao,
    Cot,
    Coc,
    Coq,
}

impl PromptMode {
    pub const ALL: [PromptMode; 4] = [Self::Ao, Self::Cot, Self::Coc, Self::Coq];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ao => "ao",
            Self::Cot => "cot",
            Self::Coc => "coc",
            Self::Coq => "coq",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ao => "AO",
            Self::Cot => "CoT",
            Self::Coc => "CoC",
            Self::Coq => "CoQ",
        })
    }
}

impl FromStr for PromptMode {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ao" => Ok(Self::Ao),
            "cot" => Ok(Self::Cot),
            "coc" => Ok(Self::Coc),
            "coq" => Ok(Self::Coq),
            _ => Err(PromptError::UnknownMode(s.to_string())),
        }
    }
}

pub const TEMPLATE_VERSION: &str = "v1";

const AO_TEMPLATE: &str = include_str!("../templates/v1/ao.txt");
const COT_TEMPLATE: &str = include_str!("../templates/v1/cot.txt");
const COC_TEMPLATE: &str = include_str!("../templates/v1/coc.txt");
const COQ_TEMPLATE: &str = include_str!("../templates/v1/coq.txt");
const QI_TEMPLATE: &str = include_str!("../templates/v1/qi.txt");

/// Strips `# ` header lines and the trailing newline from a template file.
fn template_body(raw: &str) -> &str {
    let mut rest = raw;
    while rest.starts_with('#') {
        rest = rest.split_once('\n').map_or("", |(_, tail)| tail);
    }
    rest.trim_end_matches(['\n', '\r'])
}

pub fn build_instruction(mode: PromptMode) -> &'static str {
    template_body(match mode {
        PromptMode::Ao => AO_TEMPLATE,
        PromptMode::Cot => COT_TEMPLATE,
        PromptMode::Coc => COC_TEMPLATE,
        PromptMode::Coq => COQ_TEMPLATE,
    })
}

/// Instruction for the quote-identification training task.
pub fn quote_listing_instruction() -> &'static str {
    template_body(QI_TEMPLATE)
}

pub const STEP_BY_STEP: &str = "Think step-by-step.";

fn context_lines(documents: &[Document]) -> String {
    documents
        .iter()
        .map(|d| format!("Document [{}](Title: {}): {}", d.index, d.title, d.body))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_context(documents: &[Document]) -> Result<String, PromptError> {
    for (position, doc) in documents.iter().enumerate() {
        if doc.index as usize != position + 1 {
            return Err(PromptError::NonContiguous {
                position: position + 1,
                found: doc.index,
            });
        }
    }
    Ok(context_lines(documents))
}

/// Question with the step-by-step suffix for the reasoning formats.
pub fn question_text(question: &str, mode: PromptMode) -> String {
    match mode {
        PromptMode::Ao => question.to_string(),
        _ => format!("{question} {STEP_BY_STEP}"),
    }
}

/// Context lines, a blank line, `Question: <q>`, a blank line, `Answer:`.
pub fn render_user(documents: &[Document], question: &str, mode: PromptMode) -> String {
    let block = format!("Question: {}\n\nAnswer:", question_text(question, mode));
    if documents.is_empty() {
        block
    } else {
        format!("{}\n\n{block}", context_lines(documents))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub instance: QaInstance,
    /// Gold response in the active format.
    pub target_text: String,
}

/// A stored demonstration: an instance plus a gold response written in
/// `mode`. It can be served in any format it carries enough detail for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub instance: InternalRecord,
    pub target: String,
    pub mode: PromptMode,
}

impl DemoRecord {
    pub fn to_demonstration(&self, mode: PromptMode) -> Result<Demonstration, PromptError> {
        let instance = QaInstance::from(self.instance.clone());
        let wrap = |source| PromptError::Demonstration {
            id: instance.id.clone(),
            mode,
            source,
        };
        let chain = chains::parse_chain(&self.target, self.mode).map_err(wrap)?;
        let converted = chains::convert(&chain, mode).map_err(wrap)?;
        Ok(Demonstration {
            instance,
            target_text: converted.raw,
        })
    }
}

pub fn read_demo_records<R: BufRead>(reader: R) -> Result<Vec<DemoRecord>, PromptError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PromptError::DemoRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PromptError::DemoRecord {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn render_demo(demo: &Demonstration, mode: PromptMode) -> Result<(String, String), PromptError> {
    let wrap = |source| PromptError::Demonstration {
        id: demo.instance.id.clone(),
        mode,
        source,
    };
    let chain = chains::parse_chain(&demo.target_text, mode).map_err(wrap)?;
    chains::render_chain(&chain, mode).map_err(wrap)?;
    let user = render_user(&demo.instance.documents, &demo.instance.question, mode);
    Ok((user, demo.target_text.clone()))
}

pub trait TokenCounter {
    fn count(&self, text: &str) -> usize;
}

impl<F: Fn(&str) -> usize> TokenCounter for F {
    fn count(&self, text: &str) -> usize {
        self(text)
    }
}

/// Whitespace words x 1.3, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordHeuristic;

impl TokenCounter for WordHeuristic {
    fn count(&self, text: &str) -> usize {
        (text.split_whitespace().count() * 13).div_ceil(10)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_or_instruction: String,
    pub turns: Vec<(String, String)>,
    pub final_user: String,
    pub demos_kept: usize,
    pub estimated_tokens: usize,
}

pub fn build_prompt(
    instance: &QaInstance,
    mode: PromptMode,
    demos: &[Demonstration],
    budget: usize,
    counter: &dyn TokenCounter,
) -> Result<PromptBundle, PromptError> {
    let system = build_instruction(mode).to_string();
    let final_user = render_user(&instance.documents, &instance.question, mode);
    let mut turns = demos
        .iter()
        .map(|d| render_demo(d, mode))
        .collect::<Result<Vec<_>, _>>()?;
    let turn_costs: Vec<usize> = turns.iter().map(|(u, a)| counter.count(u) + counter.count(a)).collect();

    let base = counter.count(&system) + counter.count(&final_user);
    if base > budget {
        return Err(PromptError::Overflow {
            needed: base,
            budget,
            overflow: base - budget,
        });
    }
    let mut total = base + turn_costs.iter().sum::<usize>();
    while total > budget {
        turns.pop();
        total -= turn_costs[turns.len()];
    }
    Ok(PromptBundle {
        system_or_instruction: system,
        demos_kept: turns.len(),
        turns,
        final_user,
        estimated_tokens: total,
    })
}
