//! Attribution chains: parsing model output into claim/citation/quote steps,
//! rendering chains back to each surface format, converting between formats
//! and remapping citation indices.
//!
//! Surface grammar, shared with the prompt builder:
//!
//! ```text
//! CoT  The Crush Tour is performed by the band Bon Jovi. ... The answer is: jazz
//! CoC  The Crush Tour is performed by the band Bon Jovi [8]. ... The answer is: jazz
//! CoQ  The Crush Tour is performed by the band Bon Jovi ("The Crush Tour is a third concert" [8]). ...
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::PromptMode;

pub const ANSWER_MARKER: &str = "The answer is:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("no answer marker")]
    NoAnswerMarker,
    #[error("empty answer")]
    EmptyAnswer,
    #[error("conversion from {from} to {to} would add information")]
    InformationAdding { from: PromptMode, to: PromptMode },
    #[error("chain cannot be rendered as {mode}: {missing}")]
    MissingFields { mode: PromptMode, missing: &'static str },
    #[error("unmapped citation {0}")]
    UnmappedCitation(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quote {
    pub text: String,
    pub doc: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub claim: String,
    pub citations: Vec<u32>,
    pub quotes: Vec<Quote>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionChain {
    pub steps: Vec<ReasoningStep>,
    pub answer: String,
    /// Source text the chain was parsed from (or rendered to).
    pub raw: String,
}

/// Line-delimited chain record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub id: String,
    #[serde(flatten)]
    pub chain: AttributionChain,
}

impl AttributionChain {
    pub fn citations(&self) -> impl Iterator<Item = u32> + '_ {
        self.steps.iter().flat_map(|s| s.citations.iter().copied())
    }

    pub fn quotes(&self) -> impl Iterator<Item = &Quote> + '_ {
        self.steps.iter().flat_map(|s| s.quotes.iter())
    }

    /// The richest surface format this chain carries enough fields for.
    pub fn level(&self) -> PromptMode {
        if self.quotes().next().is_some() {
            PromptMode::Coq
        } else if self.citations().next().is_some() {
            PromptMode::Coc
        } else if !self.steps.is_empty() {
            PromptMode::Cot
        } else {
            PromptMode::Ao
        }
    }
}

fn clean_answer(tail: &str) -> String {
    let t = tail.trim();
    t.strip_suffix('.').unwrap_or(t).trim_end().to_string()
}

/// Text after the last answer marker, or the whole trimmed text when no
/// marker is present.
pub fn extract_answer(text: &str) -> String {
    match text.rfind(ANSWER_MARKER) {
        Some(pos) => clean_answer(&text[pos + ANSWER_MARKER.len()..]),
        None => text.trim().to_string(),
    }
}

pub fn parse_chain(text: &str, mode: PromptMode) -> Result<AttributionChain, ChainError> {
    if mode == PromptMode::Ao {
        let answer = extract_answer(text);
        if answer.is_empty() {
            return Err(ChainError::EmptyAnswer);
        }
        return Ok(AttributionChain {
            steps: Vec::new(),
            answer,
            raw: text.to_string(),
        });
    }
    let pos = text.rfind(ANSWER_MARKER).ok_or(ChainError::NoAnswerMarker)?;
    let answer = clean_answer(&text[pos + ANSWER_MARKER.len()..]);
    if answer.is_empty() {
        return Err(ChainError::EmptyAnswer);
    }
    Ok(AttributionChain {
        steps: parse_steps(&text[..pos]),
        answer,
        raw: text.to_string(),
    })
}

fn parse_steps(body: &str) -> Vec<ReasoningStep> {
    let mut steps: Vec<ReasoningStep> = Vec::new();
    let mut pending = ReasoningStep {
        claim: String::new(),
        citations: Vec::new(),
        quotes: Vec::new(),
    };
    for mut sentence in split_sentences(body) {
        // "[2] Next claim" after "Claim." belongs to the sentence before it
        if let Some(prev) = steps.last_mut() {
            if let Some((group, used)) = parse_citation_group(sentence) {
                prev.citations.extend(group);
                sentence = sentence[used..].trim_start();
                if sentence.is_empty() {
                    continue;
                }
            }
        }
        let step = parse_sentence(sentence);
        if step.claim.is_empty() {
            // a citation group that trails its sentence's period
            match steps.last_mut() {
                Some(prev) => {
                    prev.citations.extend(step.citations);
                    prev.quotes.extend(step.quotes);
                }
                None => {
                    pending.citations.extend(step.citations);
                    pending.quotes.extend(step.quotes);
                }
            }
        } else {
            let mut step = step;
            if !pending.citations.is_empty() || !pending.quotes.is_empty() {
                let mut citations = std::mem::take(&mut pending.citations);
                citations.extend(step.citations);
                step.citations = citations;
                let mut quotes = std::mem::take(&mut pending.quotes);
                quotes.extend(step.quotes);
                step.quotes = quotes;
            }
            steps.push(step);
        }
    }
    steps
}

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "st", "jr", "sr", "vs", "inc", "ltd", "co", "corp", "no", "mt", "ft", "gen", "col",
    "lt", "sgt", "capt", "prof", "rev", "gov", "sen", "rep", "est", "approx", "etc", "jan", "feb", "mar", "apr",
    "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
];

fn is_abbreviation(before: &str) -> bool {
    let token = before
        .rsplit(|c: char| c.is_whitespace() || c == '(')
        .next()
        .unwrap_or("");
    if token.is_empty() {
        return false;
    }
    // "U.S", "e.g"
    if token.contains('.') && token.chars().any(char::is_alphabetic) {
        return true;
    }
    let mut chars = token.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if c.is_uppercase() {
            return true;
        }
    }
    ABBREVIATIONS.contains(&token.to_ascii_lowercase().as_str())
}

/// Splits on sentence-ending periods that sit outside quotes and parentheses.
/// The terminating period is not part of the returned slice.
fn split_sentences(body: &str) -> Vec<&str> {
    let track_straight = body.matches('"').count().is_multiple_of(2);
    let mut out = Vec::new();
    let mut start = 0;
    let mut depth: i32 = 0;
    let mut in_straight = false;
    let mut curly: i32 = 0;
    let mut chars = body.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '"' if track_straight => in_straight = !in_straight,
            '\u{201C}' => curly += 1,
            '\u{201D}' => curly = (curly - 1).max(0),
            '(' if !in_straight && curly == 0 => depth += 1,
            ')' if !in_straight && curly == 0 => depth = (depth - 1).max(0),
            '.' if depth == 0 && !in_straight && curly == 0 => {
                let next = chars.peek().map(|&(_, n)| n);
                let at_boundary = next.is_none_or(char::is_whitespace);
                if !at_boundary {
                    continue;
                }
                let before = &body[start..i];
                let after_citation = before.trim_end().ends_with(']');
                let next_word_lower = body[i + 1..]
                    .trim_start()
                    .chars()
                    .next()
                    .is_some_and(char::is_lowercase);
                if after_citation || !(is_abbreviation(before) || next_word_lower) {
                    out.push(before);
                    start = i + 1;
                }
            }
            _ => {}
        }
    }
    out.push(&body[start..]);
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Parses `[n]`, `[n, m]` and adjacent groups `[n][m]` starting at `s[0]`.
/// Returns the indices and the number of bytes consumed.
fn parse_citation_group(s: &str) -> Option<(Vec<u32>, usize)> {
    let mut indices = Vec::new();
    let mut consumed = 0;
    let mut rest = s;
    while let Some(inner_start) = rest.strip_prefix('[') {
        let close = inner_start.find(']')?;
        let inner = &inner_start[..close];
        let mut group: Vec<u32> = Vec::new();
        for part in inner.split(',') {
            let part = part.trim();
            if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
                return if indices.is_empty() { None } else { Some((indices, consumed)) };
            }
            group.push(part.parse().ok()?);
        }
        indices.extend(group);
        consumed += close + 2;
        rest = &s[consumed..];
    }
    (!indices.is_empty()).then_some((indices, consumed))
}

fn closing_quote(open: char) -> Option<char> {
    match open {
        '"' => Some('"'),
        '\u{201C}' => Some('\u{201D}'),
        _ => None,
    }
}

/// Parses a quoted span at `s[0]`; returns the quote text and bytes consumed.
fn parse_quoted(s: &str) -> Option<(&str, usize)> {
    let open = s.chars().next()?;
    let close = closing_quote(open)?;
    let body = &s[open.len_utf8()..];
    let end = body.find(close)?;
    Some((&body[..end], open.len_utf8() + end + close.len_utf8()))
}

/// Interprets the inside of a parenthesized group as a sequence of quoted
/// spans, each optionally followed by a citation group. Returns `None` if the
/// group holds anything else.
fn parse_quote_group(inner: &str) -> Option<Vec<(String, Vec<u32>)>> {
    let mut items = Vec::new();
    let mut rest = inner.trim_start();
    while !rest.is_empty() {
        let (text, used) = parse_quoted(rest)?;
        rest = rest[used..].trim_start();
        let cites = match parse_citation_group(rest) {
            Some((c, used)) => {
                rest = rest[used..].trim_start();
                c
            }
            None => Vec::new(),
        };
        items.push((text.to_string(), cites));
        rest = rest.trim_start_matches([';', ',']).trim_start();
    }
    (!items.is_empty()).then_some(items)
}

fn matching_paren(s: &str) -> Option<usize> {
    let mut depth = 0;
    let mut quote: Option<char> = None;
    for (i, c) in s.char_indices() {
        if let Some(close) = quote {
            if c == close {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\u{201C}' => quote = closing_quote(c),
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_sentence(sentence: &str) -> ReasoningStep {
    let mut claim = String::new();
    let mut citations = Vec::new();
    let mut quotes = Vec::new();
    let mut i = 0;
    while i < sentence.len() {
        let rest = &sentence[i..];
        let c = rest.chars().next().expect("non-empty");
        if c == '[' {
            if let Some((group, used)) = parse_citation_group(rest) {
                trim_end_in_place(&mut claim);
                citations.extend(group);
                i += used;
                continue;
            }
        }
        if c == '(' {
            if let Some(close) = matching_paren(rest) {
                if let Some(items) = parse_quote_group(&rest[1..close]) {
                    let mut used = close + 1;
                    let all_cited = items.iter().all(|(_, cites)| !cites.is_empty());
                    let mut trailing = None;
                    if !all_cited {
                        // ("quote") [8]
                        let after = &rest[used..];
                        let ws = after.len() - after.trim_start().len();
                        if let Some((group, g_used)) = parse_citation_group(after.trim_start()) {
                            trailing = Some(group);
                            used += ws + g_used;
                        }
                    }
                    if all_cited || trailing.is_some() {
                        trim_end_in_place(&mut claim);
                        let fallback = trailing.unwrap_or_default();
                        for (text, cites) in items {
                            let cites = if cites.is_empty() { fallback.clone() } else { cites };
                            if let Some(&doc) = cites.first() {
                                quotes.push(Quote { text, doc });
                            }
                            citations.extend(cites);
                        }
                        i += used;
                        continue;
                    }
                }
            }
        }
        claim.push(c);
        i += c.len_utf8();
    }
    ReasoningStep {
        claim: crate::text::collapse_whitespace(&claim),
        citations,
        quotes,
    }
}

fn trim_end_in_place(s: &mut String) {
    let len = s.trim_end().len();
    s.truncate(len);
}

fn check_renderable(chain: &AttributionChain, mode: PromptMode) -> Result<(), ChainError> {
    if chain.answer.trim().is_empty() {
        return Err(ChainError::EmptyAnswer);
    }
    match mode {
        PromptMode::Ao | PromptMode::Cot => Ok(()),
        PromptMode::Coc if chain.citations().next().is_none() => Err(ChainError::MissingFields {
            mode,
            missing: "citations",
        }),
        PromptMode::Coq if chain.quotes().next().is_none() => Err(ChainError::MissingFields {
            mode,
            missing: "quotes",
        }),
        _ => Ok(()),
    }
}

fn render_citations(out: &mut String, citations: &[u32]) {
    if citations.is_empty() {
        return;
    }
    out.push(' ');
    for c in citations {
        out.push_str(&format!("[{c}]"));
    }
}

fn render_step(step: &ReasoningStep, mode: PromptMode) -> String {
    let mut out = step.claim.clone();
    match mode {
        PromptMode::Ao | PromptMode::Cot => {}
        PromptMode::Coc => render_citations(&mut out, &step.citations),
        PromptMode::Coq => {
            // citations not consumed by a quote are emitted bare, before the quotes
            let mut unbound = step.citations.clone();
            for q in &step.quotes {
                if let Some(pos) = unbound.iter().rposition(|&c| c == q.doc) {
                    unbound.remove(pos);
                }
            }
            render_citations(&mut out, &unbound);
            if !step.quotes.is_empty() {
                let quotes: Vec<String> = step
                    .quotes
                    .iter()
                    .map(|q| format!("\"{}\" [{}]", q.text, q.doc))
                    .collect();
                out.push_str(&format!(" ({})", quotes.join("; ")));
            }
        }
    }
    out.push('.');
    out
}

pub fn render_chain(chain: &AttributionChain, mode: PromptMode) -> Result<String, ChainError> {
    check_renderable(chain, mode)?;
    if mode == PromptMode::Ao {
        return Ok(chain.answer.clone());
    }
    let mut parts: Vec<String> = chain.steps.iter().map(|s| render_step(s, mode)).collect();
    parts.push(format!("{ANSWER_MARKER} {}", chain.answer));
    Ok(parts.join(" "))
}

/// Drops fields down to `target`. Only information-removing conversions are
/// allowed (CoQ -> CoC -> CoT -> AO).
pub fn convert(chain: &AttributionChain, target: PromptMode) -> Result<AttributionChain, ChainError> {
    let from = chain.level();
    if target > from {
        return Err(ChainError::InformationAdding { from, to: target });
    }
    let steps = match target {
        PromptMode::Ao => Vec::new(),
        PromptMode::Cot => chain
            .steps
            .iter()
            .map(|s| ReasoningStep {
                claim: s.claim.clone(),
                citations: Vec::new(),
                quotes: Vec::new(),
            })
            .collect(),
        PromptMode::Coc => chain
            .steps
            .iter()
            .map(|s| ReasoningStep {
                claim: s.claim.clone(),
                citations: s.citations.clone(),
                quotes: Vec::new(),
            })
            .collect(),
        PromptMode::Coq => chain.steps.clone(),
    };
    let mut out = AttributionChain {
        steps,
        answer: chain.answer.clone(),
        raw: String::new(),
    };
    out.raw = render_chain(&out, target)?;
    Ok(out)
}

/// Rewrites every citation and quote binding through `index_map`. `raw` keeps
/// the source text.
pub fn remap_citations(
    chain: &AttributionChain,
    index_map: &BTreeMap<u32, u32>,
) -> Result<AttributionChain, ChainError> {
    let map = |c: u32| index_map.get(&c).copied().ok_or(ChainError::UnmappedCitation(c));
    let steps = chain
        .steps
        .iter()
        .map(|s| {
            Ok(ReasoningStep {
                claim: s.claim.clone(),
                citations: s.citations.iter().map(|&c| map(c)).collect::<Result<_, _>>()?,
                quotes: s
                    .quotes
                    .iter()
                    .map(|q| {
                        Ok(Quote {
                            text: q.text.clone(),
                            doc: map(q.doc)?,
                        })
                    })
                    .collect::<Result<_, ChainError>>()?,
            })
        })
        .collect::<Result<_, ChainError>>()?;
    Ok(AttributionChain {
        steps,
        answer: chain.answer.clone(),
        raw: chain.raw.clone(),
    })
}
