//! Projection through word alignments in Pharaoh `i-j` format.
//!
//! Each source span maps to the contiguous hull of the target tokens aligned
//! to it. When hulls collide, the span backed by more links keeps the
//! contested tokens and the other shrinks to its best remaining free segment.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Span, TokenRange};
use crate::error::FormatError;
use crate::selection::{AssignedSpan, Assignment, Pick, UnassignedReason};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMap {
    /// `(source index, target index)` links.
    pub links: BTreeSet<(usize, usize)>,
}

impl AlignmentMap {
    pub fn new(links: impl IntoIterator<Item = (usize, usize)>) -> Self {
        AlignmentMap {
            links: links.into_iter().collect(),
        }
    }

    pub fn validate(&self, source_len: usize, target_len: usize) -> Result<(), FormatError> {
        match self.links.iter().find(|(s, t)| *s >= source_len || *t >= target_len) {
            Some((s, t)) => Err(FormatError::Other(format!(
                "alignment link {s}-{t} outside a {source_len}x{target_len} sentence pair"
            ))),
            None => Ok(()),
        }
    }

    pub fn to_pharaoh(&self) -> String {
        self.links
            .iter()
            .map(|(s, t)| format!("{s}-{t}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Parses one line of whitespace-separated `i-j` items.
pub fn parse_pharaoh(line: &str) -> Result<AlignmentMap, FormatError> {
    let mut links = BTreeSet::new();
    let mut offset = 0;
    for item in line.split_inclusive(char::is_whitespace) {
        let start = offset;
        offset += item.len();
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let bad = || FormatError::Pharaoh {
            item: item.to_string(),
            offset: start,
        };
        let (s, t) = item.split_once('-').ok_or_else(bad)?;
        let s: usize = s.parse().map_err(|_| bad())?;
        let t: usize = t.parse().map_err(|_| bad())?;
        links.insert((s, t));
    }
    Ok(AlignmentMap { links })
}

/// One alignment per line, in corpus order.
pub fn parse_pharaoh_file(text: &str) -> Result<Vec<AlignmentMap>, FormatError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            parse_pharaoh(l).map_err(|e| match e {
                FormatError::Pharaoh { item, offset } => FormatError::Other(format!(
                    "alignment line {}: item {item:?} at offset {offset} is not of the form i-j",
                    i + 1
                )),
                other => other,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HullDiagnostic {
    pub source_span: usize,
    pub hull: TokenRange,
    /// Distinct target indices aligned to the span.
    pub aligned: usize,
    pub links: usize,
    /// Hull wider than twice the aligned count.
    pub wide: bool,
    /// The hull lost tokens to a better supported span.
    pub truncated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentProjection {
    pub assignment: Assignment,
    pub diagnostics: Vec<HullDiagnostic>,
}

struct Support {
    index: usize,
    aligned: Vec<usize>,
    links: usize,
    hull: TokenRange,
}

/// Contiguous runs of `hull` not covered by `taken`.
fn free_segments(hull: TokenRange, taken: &[TokenRange]) -> Vec<TokenRange> {
    let mut segs = Vec::new();
    let mut start = None;
    for pos in hull.start..hull.end {
        let blocked = taken.iter().any(|t| t.start <= pos && pos < t.end);
        match (blocked, start) {
            (false, None) => start = Some(pos),
            (true, Some(s)) => {
                segs.push(TokenRange::new(s, pos));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        segs.push(TokenRange::new(s, hull.end));
    }
    segs
}

/// Projects source spans through an alignment onto a target of `target_len`
/// tokens.
pub fn project_via_alignments(
    spans: &[Span],
    alignment: &AlignmentMap,
    target_len: usize,
) -> Result<AlignmentProjection, FormatError> {
    if let Some((_, t)) = alignment.links.iter().find(|(_, t)| *t >= target_len) {
        return Err(FormatError::Other(format!(
            "alignment target index {t} outside a {target_len}-token sentence"
        )));
    }
    let mut out = AlignmentProjection::default();
    let mut supported = Vec::new();
    for (i, span) in spans.iter().enumerate() {
        let linked: Vec<&(usize, usize)> = alignment
            .links
            .iter()
            .filter(|(s, _)| span.start <= *s && *s < span.end)
            .collect();
        let aligned: BTreeSet<usize> = linked.iter().map(|(_, t)| *t).collect();
        let (Some(&lo), Some(&hi)) = (aligned.first(), aligned.last()) else {
            out.assignment.unassigned.push((i, UnassignedReason::NoAlignment));
            continue;
        };
        supported.push(Support {
            index: i,
            aligned: aligned.into_iter().collect(),
            links: linked.len(),
            hull: TokenRange::new(lo, hi + 1),
        });
    }

    supported.sort_by(|a, b| b.links.cmp(&a.links).then(a.index.cmp(&b.index)));
    let mut taken: Vec<TokenRange> = Vec::new();
    for sup in &supported {
        let best = free_segments(sup.hull, &taken)
            .into_iter()
            .map(|seg| {
                let inside = sup.aligned.iter().filter(|&&t| seg.start <= t && t < seg.end).count();
                (inside, seg)
            })
            .filter(|(inside, _)| *inside > 0)
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.start.cmp(&a.1.start)));
        out.diagnostics.push(HullDiagnostic {
            source_span: sup.index,
            hull: sup.hull,
            aligned: sup.aligned.len(),
            links: sup.links,
            wide: sup.hull.len() > 2 * sup.aligned.len(),
            truncated: best.is_none_or(|(_, seg)| seg != sup.hull),
        });
        match best {
            Some((_, seg)) => {
                taken.push(seg);
                out.assignment.assigned.push(AssignedSpan {
                    source_span: sup.index,
                    target: seg,
                    text: String::new(),
                    score: None,
                    pick: Pick::Alignment,
                });
            }
            None => out.assignment.unassigned.push((sup.index, UnassignedReason::Conflict)),
        }
    }
    out.assignment.assigned.sort_by_key(|a| a.source_span);
    out.assignment.unassigned.sort();
    out.diagnostics.sort_by_key(|d| d.source_span);
    Ok(out)
}
