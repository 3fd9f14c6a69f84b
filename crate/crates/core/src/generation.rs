//! Projection candidates: decoding them from a beam generator or enumerating
//! target n-grams, then keeping only those that occur in the target sentence.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::backend::{GenerateRequest, Generator};
use crate::corpus::TokenRange;
use crate::error::{ConfigError, Error};
use crate::prompting::{parse_beam, SlotOutput, TagPrompt};

/// Log-probability carried by candidates that no generator scored.
pub const UNSCORED_LOGPROB: f64 = 0.0;

/// Slot fillers of one well-formed beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamSlots {
    /// Rank of the beam in the generator's response (0 = most probable).
    pub beam_index: usize,
    pub logprob: f64,
    pub slots: Vec<SlotOutput>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub beams: Vec<BeamSlots>,
    /// Number of beams discarded because their tags did not parse.
    pub malformed: usize,
    /// Beams the generator returned, at most the requested count.
    pub requested: usize,
}

impl GenerationOutput {
    /// The output that a request for only the top `k` beams would have produced.
    pub fn truncated(&self, k: usize) -> GenerationOutput {
        let beams: Vec<BeamSlots> = self.beams.iter().filter(|b| b.beam_index < k).cloned().collect();
        let kept_ranks = k.min(self.requested);
        GenerationOutput {
            malformed: kept_ranks - beams.len(),
            beams,
            requested: kept_ranks,
        }
    }
}

/// Asks the generator for `n_beams` beams and parses each one against the
/// prompt's slots. Malformed beams are counted and dropped.
pub fn generate_candidates(
    prompt: &TagPrompt,
    generator: &dyn Generator,
    n_beams: usize,
    max_new_tokens: usize,
) -> Result<GenerationOutput, Error> {
    if n_beams == 0 {
        return Err(ConfigError::Invalid("n_beams must be at least 1".into()).into());
    }
    if prompt.slots.is_empty() {
        return Ok(GenerationOutput::default());
    }
    let mut response = generator.generate(&GenerateRequest {
        prompt: prompt.text.clone(),
        n_beams,
        max_new_tokens,
    })?;
    response.truncate(n_beams);
    // Stable: equal logprobs keep the generator's order.
    response.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));

    let mut out = GenerationOutput {
        requested: response.len(),
        ..Default::default()
    };
    for (beam_index, beam) in response.iter().enumerate() {
        match parse_beam(&beam.text, prompt, beam.logprob) {
            Ok(slots) => out.beams.push(BeamSlots {
                beam_index,
                logprob: beam.logprob,
                slots,
            }),
            Err(_) => out.malformed += 1,
        }
    }
    Ok(out)
}

/// A candidate string before matching against the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCandidate {
    pub text: String,
    pub category: String,
    pub logprob: f64,
}

/// Flattens parsed beams into per-category candidate strings.
pub fn raw_from_beams(output: &GenerationOutput, prompt: &TagPrompt) -> Vec<RawCandidate> {
    output
        .beams
        .iter()
        .flat_map(|b| &b.slots)
        .map(|s| RawCandidate {
            text: s.candidate_text.clone(),
            category: prompt.slots[s.slot].category.clone(),
            logprob: s.beam_logprob,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub category: String,
    pub best_beam_logprob: f64,
    /// Where the text occurs in the target, left to right.
    pub occurrences: Vec<TokenRange>,
    /// The occurrences were found only after lowercasing.
    pub case_folded: bool,
}

impl Candidate {
    pub fn token_len(&self) -> usize {
        self.occurrences.first().map_or(0, TokenRange::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGroup {
    pub category: String,
    /// Unique by text, sorted by text.
    pub candidates: Vec<Candidate>,
}

impl CandidateGroup {
    pub fn to_raw(&self) -> impl Iterator<Item = RawCandidate> + '_ {
        self.candidates.iter().map(|c| RawCandidate {
            text: c.text.clone(),
            category: c.category.clone(),
            logprob: c.best_beam_logprob,
        })
    }
}

/// Finds the group of a category in a list of groups.
pub fn group_for<'a>(groups: &'a [CandidateGroup], category: &str) -> Option<&'a CandidateGroup> {
    groups.iter().find(|g| g.category == category)
}

fn windows_equal<F: Fn(&str, &str) -> bool>(needle: &[&str], target: &[String], eq: F) -> Vec<TokenRange> {
    if needle.is_empty() || needle.len() > target.len() {
        return Vec::new();
    }
    (0..=target.len() - needle.len())
        .filter(|&s| needle.iter().zip(&target[s..]).all(|(a, b)| eq(a, b)))
        .map(|s| TokenRange::new(s, s + needle.len()))
        .collect()
}

/// Occurrences of a whitespace-tokenized text in the target: exact matches,
/// or case-insensitive ones when there is no exact match.
pub fn find_occurrences(text: &str, target: &[String]) -> (Vec<TokenRange>, bool) {
    let needle: Vec<&str> = text.split_whitespace().collect();
    let exact = windows_equal(&needle, target, |a, b| a == b);
    if !exact.is_empty() {
        return (exact, false);
    }
    let folded = windows_equal(&needle, target, |a, b| a.to_lowercase() == b.to_lowercase());
    let found = !folded.is_empty();
    (folded, found)
}

/// Keeps candidates that occur as contiguous token runs of the target, merges
/// duplicates (same category and text) keeping the best logprob, and groups
/// them by category.
pub fn match_and_filter<I>(raw: I, target: &[String]) -> Vec<CandidateGroup>
where
    I: IntoIterator<Item = RawCandidate>,
{
    let mut best: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in raw {
        let text = r.text.split_whitespace().collect::<Vec<_>>().join(" ");
        if text.is_empty() {
            continue;
        }
        let entry = best
            .entry(r.category)
            .or_default()
            .entry(text)
            .or_insert(f64::NEG_INFINITY);
        *entry = entry.max(r.logprob);
    }
    let mut occurrence_cache: HashMap<String, (Vec<TokenRange>, bool)> = HashMap::new();
    best.into_iter()
        .filter_map(|(category, texts)| {
            let candidates: Vec<Candidate> = texts
                .into_iter()
                .filter_map(|(text, lp)| {
                    let (occ, folded) = occurrence_cache
                        .entry(text.clone())
                        .or_insert_with(|| find_occurrences(&text, target))
                        .clone();
                    (!occ.is_empty()).then(|| Candidate {
                        text,
                        category: category.clone(),
                        best_beam_logprob: lp,
                        occurrences: occ,
                        case_folded: folded,
                    })
                })
                .collect();
            (!candidates.is_empty()).then_some(CandidateGroup { category, candidates })
        })
        .collect()
}

/// Every contiguous token run of the target, as a candidate of every
/// requested category. Candidates are unscored.
pub fn ngram_candidates<'a, I>(target: &[String], categories: I) -> Vec<CandidateGroup>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut by_text: BTreeMap<String, Vec<TokenRange>> = BTreeMap::new();
    for start in 0..target.len() {
        for end in start + 1..=target.len() {
            by_text
                .entry(target[start..end].join(" "))
                .or_default()
                .push(TokenRange::new(start, end));
        }
    }
    for occ in by_text.values_mut() {
        occ.sort();
    }
    let categories: BTreeSet<&str> = categories.into_iter().collect();
    categories
        .into_iter()
        .map(|category| CandidateGroup {
            category: category.to_string(),
            candidates: by_text
                .iter()
                .map(|(text, occ)| Candidate {
                    text: text.clone(),
                    category: category.to_string(),
                    best_beam_logprob: UNSCORED_LOGPROB,
                    occurrences: occ.clone(),
                    case_folded: false,
                })
                .collect(),
        })
        .collect()
}
