//! Word counting and whitespace handling shared by statistics, curation and
//! the review payloads.

/// Characters stripped from token edges before a token is counted as a word.
fn is_edge_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2013}' | '\u{2014}' | '\u{2026}'
        )
}

/// Splits on whitespace and strips leading/trailing punctuation from each
/// token. Tokens that are pure punctuation do not count.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
        .map(|tok| tok.trim_matches(is_edge_punct))
        .filter(|tok| !tok.is_empty())
}

pub fn word_count(text: &str) -> usize {
    words(text).count()
}

/// Collapses every whitespace run to a single space and trims both ends.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for (i, tok) in text.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// Whitespace-collapsed containment test used for quote grounding.
pub fn contains_collapsed(haystack: &str, needle: &str) -> bool {
    let needle = collapse_whitespace(needle);
    !needle.is_empty() && collapse_whitespace(haystack).contains(&needle)
}

/// Locates `quote` inside `body` under whitespace collapsing and returns the
/// matching span as char offsets `[start, end)` into the original `body`.
pub fn locate_quote(body: &str, quote: &str) -> Option<(usize, usize)> {
    let needle = collapse_whitespace(quote);
    if needle.is_empty() {
        return None;
    }
    // collapsed text plus, for each collapsed char, its char offset in `body`
    let mut collapsed = String::with_capacity(body.len());
    let mut origin: Vec<usize> = Vec::with_capacity(body.len());
    let mut pending_space: Option<usize> = None;
    for (pos, c) in body.chars().enumerate() {
        if c.is_whitespace() {
            if !collapsed.is_empty() && pending_space.is_none() {
                pending_space = Some(pos);
            }
            continue;
        }
        if let Some(sp) = pending_space.take() {
            collapsed.push(' ');
            origin.push(sp);
        }
        collapsed.push(c);
        origin.push(pos);
    }
    let byte_start = collapsed.find(&needle)?;
    let char_start = collapsed[..byte_start].chars().count();
    let char_len = needle.chars().count();
    let start = origin[char_start];
    let end = origin[char_start + char_len - 1] + 1;
    Some((start, end))
}
