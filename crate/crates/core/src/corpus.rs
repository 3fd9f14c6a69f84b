//! Labeled corpora: spans, sentences, parallel pairs, and the CoNLL / JSONL
//! formats they are read from and written to.
//!
//! Spans are half-open token ranges `[start, end)`. A sentence keeps its spans
//! sorted by start and pairwise disjoint; every constructor checks this.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, FormatError};

/// A categorized, contiguous token range of a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub category: String,
    /// The covered tokens joined by single spaces.
    pub surface: String,
}

impl Span {
    pub fn new(tokens: &[String], start: usize, end: usize, category: impl Into<String>) -> Result<Self, FormatError> {
        if start >= end || end > tokens.len() {
            return Err(FormatError::SpanBounds {
                start,
                end,
                len: tokens.len(),
            });
        }
        Ok(Span {
            start,
            end,
            category: category.into(),
            surface: tokens[start..end].join(" "),
        })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn range(&self) -> TokenRange {
        TokenRange::new(self.start, self.end)
    }
}

/// A bare half-open token range, used for candidate occurrences and assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenRange {
    pub start: usize,
    pub end: usize,
}

impl TokenRange {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start < end, "empty token range [{start}, {end})");
        TokenRange { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &TokenRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// A tokenized sentence with its categorized spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub spans: Vec<Span>,
}

impl LabeledSentence {
    /// Builds a sentence, checking that spans are in bounds, sorted, and disjoint.
    pub fn new(id: impl Into<String>, tokens: Vec<String>, spans: Vec<Span>) -> Result<Self, FormatError> {
        for span in &spans {
            if span.start >= span.end || span.end > tokens.len() {
                return Err(FormatError::SpanBounds {
                    start: span.start,
                    end: span.end,
                    len: tokens.len(),
                });
            }
            if span.surface != tokens[span.start..span.end].join(" ") {
                return Err(FormatError::Other(format!(
                    "span surface {:?} does not match tokens [{}, {})",
                    span.surface, span.start, span.end
                )));
            }
        }
        for w in spans.windows(2) {
            if w[0].end > w[1].start {
                return Err(FormatError::SpanOrder {
                    a_start: w[0].start,
                    a_end: w[0].end,
                    b_start: w[1].start,
                    b_end: w[1].end,
                });
            }
        }
        Ok(LabeledSentence {
            id: id.into(),
            tokens,
            spans,
        })
    }

    /// Like [`LabeledSentence::new`] but sorts the spans first.
    pub fn from_unsorted(
        id: impl Into<String>,
        tokens: Vec<String>,
        mut spans: Vec<Span>,
    ) -> Result<Self, FormatError> {
        spans.sort_by_key(|a| (a.start, a.end));
        Self::new(id, tokens, spans)
    }

    pub fn unlabeled(id: impl Into<String>, tokens: Vec<String>) -> Self {
        LabeledSentence {
            id: id.into(),
            tokens,
            spans: Vec::new(),
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// A labeled source sentence bound to its unlabeled target translation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub id: String,
    pub source: LabeledSentence,
    pub target_tokens: Vec<String>,
}

impl ParallelPair {
    pub fn new(mut source: LabeledSentence, target_tokens: Vec<String>) -> Result<Self, FormatError> {
        let id = source.id.clone();
        if target_tokens.is_empty() {
            return Err(FormatError::EmptyTarget { id });
        }
        source.id = id.clone();
        Ok(ParallelPair {
            id,
            source,
            target_tokens,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self.source.id = self.id.clone();
        self
    }

    pub fn target_text(&self) -> String {
        self.target_tokens.join(" ")
    }
}

/// Raw tag (e.g. `PER`) to verbalized category name (e.g. `Person`).
///
/// Tags missing from the map verbalize to themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMap {
    entries: BTreeMap<String, String>,
}

impl CategoryMap {
    pub fn new<I, K, V>(entries: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut map = CategoryMap::default();
        for (raw, name) in entries {
            map.insert(raw.into(), name.into())?;
        }
        Ok(map)
    }

    /// Adds one entry, rejecting names that would break the tag syntax or
    /// collide with an existing verbalization.
    pub fn insert(&mut self, raw: String, name: String) -> Result<(), ConfigError> {
        if name.is_empty() || name.contains(['<', '>']) || name.chars().any(char::is_whitespace) {
            return Err(ConfigError::BadCategoryName(name));
        }
        if let Some((other, _)) = self.entries.iter().find(|(r, n)| **n == name && **r != raw) {
            return Err(ConfigError::NotInjective {
                first: other.clone(),
                second: raw,
                name,
            });
        }
        self.entries.insert(raw, name);
        Ok(())
    }

    /// Parses either a JSON object (`{"PER": "Person"}`) or whitespace
    /// separated `RAW NAME` lines (`#` starts a comment).
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            let entries: BTreeMap<String, String> =
                serde_json::from_str(trimmed).map_err(|e| ConfigError::MapSyntax {
                    line: e.line(),
                    message: e.to_string(),
                })?;
            return Self::new(entries);
        }
        let mut map = CategoryMap::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(ConfigError::MapSyntax {
                    line: i + 1,
                    message: format!("expected `RAW NAME`, got {line:?}"),
                });
            }
            map.insert(cols[0].to_string(), cols[1].to_string())?;
        }
        Ok(map)
    }

    /// Adds identity entries for every raw tag not already mapped.
    pub fn extend_identity<'a>(&mut self, raw_tags: impl IntoIterator<Item = &'a str>) -> Result<(), ConfigError> {
        for raw in raw_tags {
            if !self.entries.contains_key(raw) {
                self.insert(raw.to_string(), raw.to_string())?;
            }
        }
        Ok(())
    }

    pub fn verbalize<'a>(&'a self, raw: &'a str) -> &'a str {
        self.entries.get(raw).map(String::as_str).unwrap_or(raw)
    }

    /// Inverse lookup; names that are not in the map are returned unchanged.
    pub fn raw_tag<'a>(&'a self, name: &'a str) -> &'a str {
        self.entries
            .iter()
            .find(|(_, n)| *n == name)
            .map(|(r, _)| r.as_str())
            .unwrap_or(name)
    }

    pub fn contains_name(&self, name: &str) -> bool {
        self.entries.values().any(|n| n == name)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(r, n)| (r.as_str(), n.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag(tag: &str) -> Option<Bio<'_>> {
    if tag == "O" {
        return Some(Bio::Outside);
    }
    let (prefix, cat) = tag.split_once('-')?;
    if cat.is_empty() {
        return None;
    }
    match prefix {
        "B" => Some(Bio::Begin(cat)),
        "I" => Some(Bio::Inside(cat)),
        _ => None,
    }
}

/// Counters gathered while reading a CoNLL stream.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseStats {
    pub sentences: usize,
    pub docstart_lines: usize,
    /// `I-` tags that opened a new span because no matching span was open.
    pub repaired_tags: usize,
}

fn is_docstart(first_col: &str) -> bool {
    first_col == "-DOCSTART-"
}

/// Splits CoNLL text into sentences of whitespace-split rows, with 1-based
/// line numbers. `-DOCSTART-` rows are dropped.
fn conll_blocks<'a>(text: &'a str, stats: &mut ParseStats) -> Vec<Vec<(usize, Vec<&'a str>)>> {
    let mut blocks = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continue;
        }
        if is_docstart(cols[0]) {
            stats.docstart_lines += 1;
            continue;
        }
        current.push((i + 1, cols));
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    blocks
}

/// Reads a labeled CoNLL stream: token in the first column, BIO tag in the
/// last, blank lines between sentences. Categories are verbalized through
/// `map`. Sentence ids are their zero-based positions.
pub fn parse_conll(text: &str, map: &CategoryMap) -> Result<Vec<LabeledSentence>, FormatError> {
    parse_conll_with_stats(text, map).map(|(s, _)| s)
}

pub fn parse_conll_with_stats(
    text: &str,
    map: &CategoryMap,
) -> Result<(Vec<LabeledSentence>, ParseStats), FormatError> {
    let mut stats = ParseStats::default();
    let blocks = conll_blocks(text, &mut stats);
    let mut sentences = Vec::with_capacity(blocks.len());
    for (index, block) in blocks.into_iter().enumerate() {
        let mut tokens = Vec::with_capacity(block.len());
        let mut tags = Vec::with_capacity(block.len());
        for (line, cols) in &block {
            if cols.len() < 2 {
                return Err(FormatError::InvalidTag {
                    line: *line,
                    tag: String::new(),
                });
            }
            let tag = cols[cols.len() - 1];
            let parsed = parse_tag(tag).ok_or_else(|| FormatError::InvalidTag {
                line: *line,
                tag: tag.to_string(),
            })?;
            tokens.push(cols[0].to_string());
            tags.push(parsed);
        }
        let (raw_spans, repaired) = bio_to_raw_spans(&tags);
        stats.repaired_tags += repaired;
        let spans = raw_spans
            .into_iter()
            .map(|(s, e, cat)| Span::new(&tokens, s, e, map.verbalize(cat)))
            .collect::<Result<Vec<_>, _>>()?;
        sentences.push(LabeledSentence::new(index.to_string(), tokens, spans)?);
    }
    stats.sentences = sentences.len();
    Ok((sentences, stats))
}

/// Decodes tags into `(start, end, category)` runs. An `I-X` that does not
/// continue an open `X` run starts a new one.
fn bio_to_raw_spans<'a>(tags: &[Bio<'a>]) -> (Vec<(usize, usize, &'a str)>, usize) {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    let mut repaired = 0;
    for (i, tag) in tags.iter().enumerate() {
        match *tag {
            Bio::Outside => {
                if let Some((s, c)) = open.take() {
                    spans.push((s, i, c));
                }
            }
            Bio::Begin(cat) => {
                if let Some((s, c)) = open.take() {
                    spans.push((s, i, c));
                }
                open = Some((i, cat));
            }
            Bio::Inside(cat) => match open {
                Some((_, c)) if c == cat => {}
                _ => {
                    repaired += 1;
                    if let Some((s, c)) = open.take() {
                        spans.push((s, i, c));
                    }
                    open = Some((i, cat));
                }
            },
        }
    }
    if let Some((s, c)) = open {
        spans.push((s, tags.len(), c));
    }
    (spans, repaired)
}

/// Reads only the token column of a CoNLL stream (tags, if any, are ignored).
pub fn parse_conll_tokens(text: &str) -> Vec<Vec<String>> {
    let mut stats = ParseStats::default();
    conll_blocks(text, &mut stats)
        .into_iter()
        .map(|b| b.into_iter().map(|(_, cols)| cols[0].to_string()).collect())
        .collect()
}

#[derive(Debug, Deserialize)]
struct JsonlRecord {
    tokens: Vec<String>,
    #[serde(default)]
    id: Option<serde_json::Value>,
}

/// A tokenized sentence with its optional id.
pub type IdTokens = (Option<String>, Vec<String>);

/// One tokenized sentence per line: `{"tokens": [...], "id": ...}`.
pub fn parse_jsonl_tokens(text: &str) -> Result<Vec<IdTokens>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(line).map_err(|e| FormatError::Jsonl {
            line: i + 1,
            message: e.to_string(),
        })?;
        let id = rec.id.map(|v| match v {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        });
        out.push((id, rec.tokens));
    }
    Ok(out)
}

fn looks_like_jsonl(text: &str) -> bool {
    text.lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim_start().starts_with('{'))
}

/// Zips a labeled source corpus with its target sentences. The target may be
/// CoNLL (tags ignored) or JSONL with a pre-tokenized `tokens` field.
pub fn load_parallel(
    source_text: &str,
    target_text: &str,
    map: &CategoryMap,
) -> Result<Vec<ParallelPair>, FormatError> {
    let sources = parse_conll(source_text, map)?;
    zip_parallel(sources, parse_targets(target_text)?)
}

/// Target sentences from CoNLL (tags ignored) or JSONL, detected from the
/// first non-empty line.
pub fn parse_targets(text: &str) -> Result<Vec<IdTokens>, FormatError> {
    if looks_like_jsonl(text) {
        parse_jsonl_tokens(text)
    } else {
        Ok(parse_conll_tokens(text).into_iter().map(|t| (None, t)).collect())
    }
}

pub fn zip_parallel(sources: Vec<LabeledSentence>, targets: Vec<IdTokens>) -> Result<Vec<ParallelPair>, FormatError> {
    if sources.len() != targets.len() {
        return Err(FormatError::CountMismatch {
            source_count: sources.len(),
            target_count: targets.len(),
        });
    }
    sources
        .into_iter()
        .zip(targets)
        .map(|(source, (id, tokens))| {
            let pair = ParallelPair::new(source, tokens)?;
            Ok(match id {
                Some(id) => pair.with_id(id),
                None => pair,
            })
        })
        .collect()
}

/// BIO tags for a sentence, using each span's category as the tag suffix.
pub fn spans_to_bio(sentence: &LabeledSentence) -> Vec<String> {
    spans_to_bio_with(sentence, |c| c)
}

/// BIO tags with the category rewritten by `tag_of` (e.g. back to raw tags).
pub fn spans_to_bio_with<'a, F>(sentence: &'a LabeledSentence, tag_of: F) -> Vec<String>
where
    F: Fn(&'a str) -> &'a str,
{
    let mut tags = vec!["O".to_string(); sentence.tokens.len()];
    for span in &sentence.spans {
        let tag = tag_of(&span.category);
        tags[span.start] = format!("B-{tag}");
        for t in &mut tags[span.start + 1..span.end] {
            *t = format!("I-{tag}");
        }
    }
    tags
}

/// Serializes sentences as two-column CoNLL: `token tag` per line, one blank
/// line between sentences.
pub fn write_conll<'a, F>(sentences: &'a [LabeledSentence], tag_of: F) -> String
where
    F: Fn(&'a str) -> &'a str + Copy,
{
    let mut out = String::new();
    for (i, sentence) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let tags = spans_to_bio_with(sentence, tag_of);
        for (tok, tag) in sentence.tokens.iter().zip(&tags) {
            let _ = writeln!(out, "{tok} {tag}");
        }
    }
    out
}
