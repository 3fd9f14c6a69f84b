//! Choosing one target occurrence per source span.
//!
//! [`select_greedy`] walks the source spans left to right, takes the best
//! scored candidate that still has an unblocked occurrence, and blocks every
//! target position it covers. The baselines (most probable beam, span
//! translation) and the oracle upper bound produce the same [`Assignment`].

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::Translator;
use crate::corpus::{LabeledSentence, ParallelPair, Span, TokenRange};
use crate::error::{BackendError, FormatError};
use crate::generation::{find_occurrences, group_for, CandidateGroup, GenerationOutput};
use crate::scoring::{Cell, ScoreTable, Similarity};

/// Which procedure produced an assigned span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pick {
    Greedy,
    Oracle,
    MostProbable,
    SpanTranslation,
    Alignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnassignedReason {
    /// Every candidate of the category was invalid or blocked.
    Exhausted,
    /// No candidate text matched an unblocked target position.
    NoMatch,
    /// The chosen beam did not fill this span's slot.
    MissingSlot,
    /// The generator returned no well-formed beam.
    NoBeam,
    /// No source token of the span has an alignment link.
    NoAlignment,
    /// The projected span lost all its tokens to a better supported span.
    Conflict,
    /// Removed to make room for an oracle pick.
    Displaced,
    /// Scores for the span's category could not be computed.
    Degenerate,
}

impl fmt::Display for UnassignedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            UnassignedReason::Exhausted => "exhausted",
            UnassignedReason::NoMatch => "no-match",
            UnassignedReason::MissingSlot => "missing-slot",
            UnassignedReason::NoBeam => "no-beam",
            UnassignedReason::NoAlignment => "no-alignment",
            UnassignedReason::Conflict => "conflict",
            UnassignedReason::Displaced => "displaced",
            UnassignedReason::Degenerate => "degenerate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedSpan {
    pub source_span: usize,
    pub target: TokenRange,
    pub text: String,
    pub score: Option<Similarity>,
    pub pick: Pick,
}

/// The outcome of projecting one sentence: every source span is either
/// assigned a target range or listed as unassigned with a reason.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub assigned: Vec<AssignedSpan>,
    pub unassigned: Vec<(usize, UnassignedReason)>,
}

impl Assignment {
    fn push(&mut self, a: AssignedSpan) {
        self.assigned.push(a);
    }

    fn skip(&mut self, source_span: usize, reason: UnassignedReason) {
        self.unassigned.push((source_span, reason));
    }

    fn normalize(mut self) -> Self {
        self.assigned.sort_by_key(|a| a.source_span);
        self.unassigned.sort();
        self
    }

    pub fn ranges(&self) -> impl Iterator<Item = TokenRange> + '_ {
        self.assigned.iter().map(|a| a.target)
    }

    /// Checks that target ranges are disjoint and in bounds and that each of
    /// the `n_source` spans is accounted for exactly once.
    pub fn check(&self, n_source: usize, target_len: usize) -> Result<(), String> {
        let mut seen = vec![false; n_source];
        let ids = self
            .assigned
            .iter()
            .map(|a| a.source_span)
            .chain(self.unassigned.iter().map(|u| u.0));
        for id in ids {
            match seen.get_mut(id) {
                Some(s) if !*s => *s = true,
                Some(_) => return Err(format!("source span {id} accounted for twice")),
                None => return Err(format!("source span {id} out of range")),
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(format!("source span {missing} not accounted for"));
        }
        for (i, a) in self.assigned.iter().enumerate() {
            if a.target.is_empty() || a.target.end > target_len {
                return Err(format!("target range {:?} out of bounds", a.target));
            }
            for b in &self.assigned[i + 1..] {
                if a.target.overlaps(&b.target) {
                    return Err(format!("target ranges {:?} and {:?} overlap", a.target, b.target));
                }
            }
        }
        Ok(())
    }

    /// The projected target sentence: assigned ranges labeled with their
    /// source span's category.
    pub fn to_sentence(&self, pair: &ParallelPair) -> Result<LabeledSentence, FormatError> {
        let spans = self
            .assigned
            .iter()
            .map(|a| {
                Span::new(
                    &pair.target_tokens,
                    a.target.start,
                    a.target.end,
                    pair.source.spans[a.source_span].category.clone(),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        LabeledSentence::from_unsorted(pair.id.clone(), pair.target_tokens.clone(), spans)
    }

    pub fn reason_counts(&self) -> BTreeMap<UnassignedReason, usize> {
        let mut m = BTreeMap::new();
        for (_, r) in &self.unassigned {
            *m.entry(*r).or_insert(0) += 1;
        }
        m
    }
}

fn leftmost_free(occurrences: &[TokenRange], taken: &[TokenRange]) -> Option<TokenRange> {
    occurrences
        .iter()
        .copied()
        .filter(|o| !taken.iter().any(|t| t.overlaps(o)))
        .min()
}

struct Choice<'a> {
    score: f64,
    logprob: f64,
    occurrence: TokenRange,
    text: &'a str,
    similarity: Option<Similarity>,
}

/// Higher score, then higher beam logprob, then leftmost occurrence, then
/// shorter candidate, then text.
fn rank(a: &Choice<'_>, b: &Choice<'_>) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.logprob.total_cmp(&a.logprob))
        .then(a.occurrence.start.cmp(&b.occurrence.start))
        .then(a.occurrence.len().cmp(&b.occurrence.len()))
        .then(a.text.cmp(b.text))
}

/// Greedy selection with overlap removal over precomputed score tables.
pub fn select_greedy(spans: &[Span], tables: &[ScoreTable], groups: &[CandidateGroup]) -> Assignment {
    let mut taken: Vec<TokenRange> = Vec::new();
    let mut out = Assignment::default();
    for (i, span) in spans.iter().enumerate() {
        let table = tables.iter().find(|t| t.category == span.category);
        let (Some(table), Some(group)) = (table, group_for(groups, &span.category)) else {
            out.skip(i, UnassignedReason::Exhausted);
            continue;
        };
        let Some(row) = table.row(i) else {
            out.skip(i, UnassignedReason::Exhausted);
            continue;
        };
        let best = table
            .candidates
            .iter()
            .zip(row)
            .filter_map(|(text, cell)| {
                let score = cell.score()?;
                let cand = group.candidates.iter().find(|c| c.text == *text)?;
                let occurrence = leftmost_free(&cand.occurrences, &taken)?;
                let similarity = match cell {
                    Cell::Valid(s) => Some(*s),
                    Cell::Invalid(_) => None,
                };
                Some(Choice {
                    score,
                    logprob: cand.best_beam_logprob,
                    occurrence,
                    text,
                    similarity,
                })
            })
            .min_by(rank);
        match best {
            Some(b) => {
                taken.push(b.occurrence);
                out.push(AssignedSpan {
                    source_span: i,
                    target: b.occurrence,
                    text: b.text.to_string(),
                    score: b.similarity,
                    pick: Pick::Greedy,
                });
            }
            None => out.skip(i, UnassignedReason::Exhausted),
        }
    }
    out.normalize()
}

/// Uses only the most probable well-formed beam: each slot's text is matched
/// against the target and placed at its leftmost unblocked occurrence.
pub fn select_most_probable(spans: &[Span], generation: &GenerationOutput, target: &[String]) -> Assignment {
    let mut out = Assignment::default();
    let best = generation
        .beams
        .iter()
        .min_by(|a, b| b.logprob.total_cmp(&a.logprob).then(a.beam_index.cmp(&b.beam_index)));
    let Some(beam) = best else {
        for i in 0..spans.len() {
            out.skip(i, UnassignedReason::NoBeam);
        }
        return out;
    };
    let mut taken = Vec::new();
    for i in 0..spans.len() {
        let Some(slot) = beam.slots.iter().find(|s| s.slot == i) else {
            out.skip(i, UnassignedReason::MissingSlot);
            continue;
        };
        let (occ, _) = find_occurrences(&slot.candidate_text, target);
        match leftmost_free(&occ, &taken) {
            Some(o) => {
                taken.push(o);
                out.push(AssignedSpan {
                    source_span: i,
                    target: o,
                    text: slot.candidate_text.clone(),
                    score: None,
                    pick: Pick::MostProbable,
                });
            }
            None => out.skip(i, UnassignedReason::NoMatch),
        }
    }
    out.normalize()
}

/// Upper bound on selection quality: a span whose gold projection is among
/// its category's candidate occurrences is given that gold projection.
///
/// Starts from the greedy assignment. Greedy picks that already hit gold are
/// kept; remaining gold projections that some candidate covers go, leftmost
/// first, to the other spans of the same category in source order; greedy
/// picks that overlap a newly placed gold projection are dropped. Everything
/// else keeps its greedy outcome.
pub fn oracle_upper_bound(
    spans: &[Span],
    tables: &[ScoreTable],
    groups: &[CandidateGroup],
    gold: &LabeledSentence,
) -> Assignment {
    let greedy = select_greedy(spans, tables, groups);
    let is_gold = |a: &AssignedSpan| {
        gold.spans
            .iter()
            .any(|g| g.range() == a.target && g.category == spans[a.source_span].category)
    };

    let mut assigned: BTreeMap<usize, AssignedSpan> = BTreeMap::new();
    let mut unassigned: BTreeMap<usize, UnassignedReason> = greedy.unassigned.iter().copied().collect();
    let mut hits: Vec<TokenRange> = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    for a in greedy.assigned {
        if is_gold(&a) {
            hits.push(a.target);
        } else {
            open.push(a.source_span);
        }
        assigned.insert(a.source_span, a);
    }
    open.extend(unassigned.keys().copied());
    open.sort();

    // gold ranges covered by a candidate of the right category, not yet hit
    let mut available: BTreeMap<&str, Vec<(TokenRange, &str)>> = BTreeMap::new();
    for g in &gold.spans {
        if hits.contains(&g.range()) {
            continue;
        }
        let covering = group_for(groups, &g.category).and_then(|grp| {
            grp.candidates
                .iter()
                .filter(|c| c.occurrences.contains(&g.range()))
                .min_by_key(|c| c.case_folded)
        });
        if let Some(c) = covering {
            available.entry(&g.category).or_default().push((g.range(), &c.text));
        }
    }

    let mut placed = Vec::new();
    for i in open {
        let Some(queue) = available.get_mut(spans[i].category.as_str()) else {
            continue;
        };
        if queue.is_empty() {
            continue;
        }
        let (range, text) = queue.remove(0);
        let score = tables.iter().find(|t| t.category == spans[i].category).and_then(|t| {
            let col = t.candidates.iter().position(|c| c == text)?;
            match &t.row(i)?[col] {
                Cell::Valid(s) => Some(*s),
                Cell::Invalid(_) => None,
            }
        });
        unassigned.remove(&i);
        assigned.insert(
            i,
            AssignedSpan {
                source_span: i,
                target: range,
                text: text.to_string(),
                score,
                pick: Pick::Oracle,
            },
        );
        placed.push((i, range));
    }

    let displaced: Vec<usize> = assigned
        .values()
        .filter(|a| a.pick != Pick::Oracle && !hits.contains(&a.target))
        .filter(|a| placed.iter().any(|(j, r)| *j != a.source_span && r.overlaps(&a.target)))
        .map(|a| a.source_span)
        .collect();
    for i in displaced {
        assigned.remove(&i);
        unassigned.insert(i, UnassignedReason::Displaced);
    }

    Assignment {
        assigned: assigned.into_values().collect(),
        unassigned: unassigned.into_iter().collect(),
    }
    .normalize()
}

/// Span-translation baseline: each source span is translated on its own and
/// the most probable translation found in the target is assigned.
pub fn project_via_span_translation(
    pair: &ParallelPair,
    translator: &dyn Translator,
    n_beams: usize,
    src_lang: &str,
    tgt_lang: &str,
) -> Result<Assignment, BackendError> {
    let mut out = Assignment::default();
    let mut taken = Vec::new();
    for (i, span) in pair.source.spans.iter().enumerate() {
        let mut beams = translator.translate(&span.surface, src_lang, tgt_lang, n_beams)?;
        beams.truncate(n_beams);
        beams.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
        let hit = beams.iter().find_map(|b| {
            let (occ, _) = find_occurrences(&b.text, &pair.target_tokens);
            leftmost_free(&occ, &taken).map(|o| (o, b.text.clone()))
        });
        match hit {
            Some((o, text)) => {
                taken.push(o);
                out.push(AssignedSpan {
                    source_span: i,
                    target: o,
                    text: text.split_whitespace().collect::<Vec<_>>().join(" "),
                    score: None,
                    pick: Pick::SpanTranslation,
                });
            }
            None => out.skip(i, UnassignedReason::NoMatch),
        }
    }
    Ok(out.normalize())
}
