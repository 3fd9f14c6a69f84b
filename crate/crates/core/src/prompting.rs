//! Tag-style prompts for the candidate generator and the parser for its
//! tagged output.
//!
//! A prompt is the target sentence followed by one `<C>None</C>` block per
//! source span, in source order. The generator answers by filling each block
//! with the words of the target sentence that realize that span.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CategoryMap, ParallelPair};
use crate::error::ConfigError;

/// Placeholder the generator is trained to replace.
pub const PLACEHOLDER: &str = "None";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub index: usize,
    pub category: String,
    /// Index into the source sentence's span list.
    pub source_span: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagPrompt {
    pub text: String,
    pub slots: Vec<Slot>,
}

impl TagPrompt {
    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.category.as_str())
    }
}

/// What a generator put inside one slot of one beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotOutput {
    pub slot: usize,
    pub candidate_text: String,
    pub beam_logprob: f64,
}

/// A beam whose tags do not nest as flat, closed, matching pairs.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MalformedBeam {
    #[error("tag <{inner}> opened inside <{outer}>")]
    Nested { outer: String, inner: String },
    #[error("closing tag </{close}> does not match <{open}>")]
    Crossed { open: String, close: String },
    #[error("closing tag </{0}> without an opening tag")]
    StrayClose(String),
    #[error("tag <{0}> is never closed")]
    Unclosed(String),
}

fn tag_block(category: &str) -> String {
    format!("<{category}>{PLACEHOLDER}</{category}>")
}

/// Builds the generation prompt for a pair: the target sentence followed by a
/// placeholder block per source span. Repeated categories repeat the block.
pub fn build_prompt(pair: &ParallelPair, map: &CategoryMap) -> Result<TagPrompt, ConfigError> {
    let mut text = pair.target_text();
    let mut slots = Vec::with_capacity(pair.source.spans.len());
    for (i, span) in pair.source.spans.iter().enumerate() {
        if !map.contains_name(&span.category) {
            return Err(ConfigError::UnknownCategory(span.category.clone()));
        }
        text.push(' ');
        text.push_str(&tag_block(&span.category));
        slots.push(Slot {
            index: i,
            category: span.category.clone(),
            source_span: i,
        });
    }
    Ok(TagPrompt { text, slots })
}

#[derive(Debug, PartialEq)]
enum Piece<'a> {
    Open(&'a str),
    Close(&'a str),
    Text(&'a str),
}

/// Recognizes `<Name>` / `</Name>` where Name has no whitespace or angle
/// brackets. Everything else is text.
fn lex(s: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    let bytes = s.as_bytes();
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let rest = &s[i + 1..];
            let (closing, name_start) = match rest.strip_prefix('/') {
                Some(_) => (true, i + 2),
                None => (false, i + 1),
            };
            let name_len = s[name_start..]
                .find(|c: char| c == '>' || c == '<' || c.is_whitespace())
                .filter(|&n| n > 0 && s[name_start + n..].starts_with('>'));
            if let Some(n) = name_len {
                if text_start < i {
                    pieces.push(Piece::Text(&s[text_start..i]));
                }
                let name = &s[name_start..name_start + n];
                pieces.push(if closing { Piece::Close(name) } else { Piece::Open(name) });
                i = name_start + n + 1;
                text_start = i;
                continue;
            }
        }
        i += 1;
    }
    if text_start < s.len() {
        pieces.push(Piece::Text(&s[text_start..]));
    }
    pieces
}

/// Extracts the flat `(category, content)` tag pairs of a decoded beam.
pub fn extract_tag_pairs(output: &str) -> Result<Vec<(String, String)>, MalformedBeam> {
    let mut pairs = Vec::new();
    let mut open: Option<(&str, String)> = None;
    for piece in lex(output) {
        match piece {
            Piece::Open(name) => {
                if let Some((outer, _)) = &open {
                    return Err(MalformedBeam::Nested {
                        outer: outer.to_string(),
                        inner: name.to_string(),
                    });
                }
                open = Some((name, String::new()));
            }
            Piece::Close(name) => match open.take() {
                Some((o, content)) if o == name => pairs.push((name.to_string(), content)),
                Some((o, _)) => {
                    return Err(MalformedBeam::Crossed {
                        open: o.to_string(),
                        close: name.to_string(),
                    })
                }
                None => return Err(MalformedBeam::StrayClose(name.to_string())),
            },
            Piece::Text(t) => {
                if let Some((_, content)) = &mut open {
                    content.push_str(t);
                }
            }
        }
    }
    match open {
        Some((name, _)) => Err(MalformedBeam::Unclosed(name.to_string())),
        None => Ok(pairs),
    }
}

/// Parses one decoded beam against the prompt's slots.
///
/// The i-th tag pair fills the i-th slot while categories keep matching; a
/// beam with fewer (or diverging) pairs fills only the leading slots.
pub fn parse_beam(output: &str, prompt: &TagPrompt, beam_logprob: f64) -> Result<Vec<SlotOutput>, MalformedBeam> {
    let pairs = extract_tag_pairs(output)?;
    Ok(prompt
        .slots
        .iter()
        .zip(pairs)
        .take_while(|(slot, (cat, _))| slot.category == *cat)
        .map(|(slot, (_, content))| SlotOutput {
            slot: slot.index,
            candidate_text: content.split_whitespace().collect::<Vec<_>>().join(" "),
            beam_logprob,
        })
        .collect())
}

/// Renders slot fillers the way a generator would emit them.
pub fn render_output(prompt: &TagPrompt, fillers: &[&str]) -> String {
    prompt
        .slots
        .iter()
        .zip(fillers)
        .map(|(slot, f)| format!("<{c}>{f}</{c}>", c = slot.category))
        .collect::<Vec<_>>()
        .join(" ")
}
