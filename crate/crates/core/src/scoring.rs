//! Translation-equivalence scores between source spans and target candidates.
//!
//! `p(A|B)` is the length-normalized probability that a translation model
//! emits `A` given `B`: the geometric mean of its per-token probabilities.
//! It is normalized by `p(A|A)` and averaged over both directions:
//!
//! ```text
//! sim(A|B) = p(A|B) / p(A|A)
//! sim(A,B) = (sim(A|B) + sim(B|A)) / 2
//! ```
//!
//! Everything is carried in log space and exponentiated once per ratio.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::{ScoreRequest, ScorerBackend};
use crate::corpus::Span;
use crate::error::{BackendError, ScoreError};
use crate::generation::CandidateGroup;

pub const DEFAULT_BATCH_SIZE: usize = 32;

/// A text together with its language code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Text<'a> {
    pub text: &'a str,
    pub lang: &'a str,
}

impl<'a> Text<'a> {
    pub fn new(text: &'a str, lang: &'a str) -> Self {
        Text { text, lang }
    }
}

fn request(scored: Text<'_>, condition: Text<'_>) -> ScoreRequest {
    ScoreRequest {
        condition_text: condition.text.to_string(),
        scored_text: scored.text.to_string(),
        src_lang: condition.lang.to_string(),
        tgt_lang: scored.lang.to_string(),
    }
}

/// Arithmetic mean of per-token log-probabilities, i.e. the log of their
/// geometric mean.
pub fn mean_logprob(token_logprobs: &[f64]) -> Result<f64, ScoreError> {
    if token_logprobs.is_empty() {
        return Err(ScoreError::Degenerate(
            "backend returned no token log-probabilities".into(),
        ));
    }
    if let Some(bad) = token_logprobs
        .iter()
        .find(|lp| lp.is_nan() || **lp > 0.0 && lp.is_infinite())
    {
        return Err(ScoreError::Degenerate(format!("invalid token log-probability {bad}")));
    }
    Ok(token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64)
}

/// `log p(A|B)`.
pub fn translation_logprob(a: Text<'_>, b: Text<'_>, backend: &dyn ScorerBackend) -> Result<f64, ScoreError> {
    if a.text.trim().is_empty() {
        return Err(ScoreError::EmptyText);
    }
    mean_logprob(&backend.token_logprobs(&request(a, b))?)
}

/// `p(A|B)`, the length-normalized translation probability.
pub fn translation_prob(a: Text<'_>, b: Text<'_>, backend: &dyn ScorerBackend) -> Result<f64, ScoreError> {
    translation_logprob(a, b, backend).map(f64::exp)
}

/// `exp(log_ab - log_aa)`, rejecting a zero or undefined normalizer.
pub fn ratio_from_logs(log_ab: f64, log_aa: f64) -> Result<f64, ScoreError> {
    if !log_aa.is_finite() {
        return Err(ScoreError::Degenerate(format!("self-probability is {}", log_aa.exp())));
    }
    if log_ab.is_nan() {
        return Err(ScoreError::Degenerate("conditional log-probability is NaN".into()));
    }
    let r = (log_ab - log_aa).exp();
    if r.is_finite() {
        Ok(r)
    } else {
        Err(ScoreError::Degenerate("similarity ratio overflows".into()))
    }
}

/// `sim(A|B) = p(A|B) / p(A|A)`; can exceed 1.
pub fn normalized_sim(a: Text<'_>, b: Text<'_>, backend: &dyn ScorerBackend) -> Result<f64, ScoreError> {
    let log_ab = translation_logprob(a, b, backend)?;
    let log_aa = translation_logprob(a, a, backend)?;
    ratio_from_logs(log_ab, log_aa)
}

/// Symmetrized similarity with its four component probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimScore {
    pub value: f64,
    pub p_a_given_b: f64,
    pub p_b_given_a: f64,
    pub p_a_given_a: f64,
    pub p_b_given_b: f64,
}

impl SimScore {
    /// Combines the four directional log-probabilities.
    pub fn from_logs(log_ab: f64, log_ba: f64, log_aa: f64, log_bb: f64) -> Result<Self, ScoreError> {
        let sim_ab = ratio_from_logs(log_ab, log_aa)?;
        let sim_ba = ratio_from_logs(log_ba, log_bb)?;
        let value = 0.5 * sim_ab + 0.5 * sim_ba;
        if !value.is_finite() {
            return Err(ScoreError::Degenerate("similarity overflows".into()));
        }
        Ok(SimScore {
            value,
            p_a_given_b: log_ab.exp(),
            p_b_given_a: log_ba.exp(),
            p_a_given_a: log_aa.exp(),
            p_b_given_b: log_bb.exp(),
        })
    }
}

/// `sim(A,B) = ½ sim(A|B) + ½ sim(B|A)`.
pub fn sym_sim(a: Text<'_>, b: Text<'_>, backend: &dyn ScorerBackend) -> Result<SimScore, ScoreError> {
    SimScore::from_logs(
        translation_logprob(a, b, backend)?,
        translation_logprob(b, a, backend)?,
        translation_logprob(a, a, backend)?,
        translation_logprob(b, b, backend)?,
    )
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, ScoreError> {
    if u.len() != v.len() {
        return Err(ScoreError::Degenerate(format!(
            "embedding dimensions differ ({} vs {})",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(ScoreError::Degenerate("zero embedding vector".into()));
    }
    let c = dot / (nu * nv);
    if c.is_finite() {
        Ok(c.clamp(-1.0, 1.0))
    } else {
        Err(ScoreError::Degenerate("non-finite cosine".into()))
    }
}

/// Cosine similarity of sentence embeddings.
pub fn embedding_sim(a: Text<'_>, b: Text<'_>, backend: &dyn ScorerBackend) -> Result<f64, ScoreError> {
    if !backend.capabilities().embeddings {
        return Err(BackendError::Unsupported("embeddings").into());
    }
    cosine(&backend.embed(a.text, a.lang)?, &backend.embed(b.text, b.lang)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Similarity {
    Translation(SimScore),
    Cosine { value: f64 },
}

impl Similarity {
    pub fn value(&self) -> f64 {
        match self {
            Similarity::Translation(s) => s.value,
            Similarity::Cosine { value } => *value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Valid(Similarity),
    Invalid(String),
}

impl Cell {
    pub fn score(&self) -> Option<f64> {
        match self {
            Cell::Valid(s) => Some(s.value()),
            Cell::Invalid(_) => None,
        }
    }
}

/// Span × candidate similarity matrix for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub category: String,
    /// Indices into the source sentence's spans, in row order.
    pub span_indices: Vec<usize>,
    /// Candidate texts in column order (the group's order).
    pub candidates: Vec<String>,
    pub cells: Vec<Vec<Cell>>,
}

impl ScoreTable {
    pub fn row(&self, span_index: usize) -> Option<&[Cell]> {
        self.span_indices
            .iter()
            .position(|&i| i == span_index)
            .map(|r| self.cells[r].as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMethod {
    #[default]
    Translation,
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: u64,
    pub lookups: u64,
}

/// Self-probabilities `log p(X|X)` per (language, text), shared by all workers.
#[derive(Debug, Default)]
pub struct SelfProbCache {
    map: Mutex<HashMap<(String, String), f64>>,
    lookups: AtomicU64,
}

impl SelfProbCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get(&self, lang: &str, text: &str) -> Option<f64> {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        self.map
            .lock()
            .expect("cache lock poisoned")
            .get(&(lang.to_string(), text.to_string()))
            .copied()
    }

    fn insert(&self, lang: &str, text: &str, logprob: f64) {
        self.map
            .lock()
            .expect("cache lock poisoned")
            .insert((lang.to_string(), text.to_string()), logprob);
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            entries: self.map.lock().expect("cache lock poisoned").len() as u64,
            lookups: self.lookups.load(Ordering::Relaxed),
        }
    }

    /// Finite entries sorted by (language, text), for persisting.
    pub fn snapshot(&self) -> Vec<(String, String, f64)> {
        let map = self.map.lock().expect("cache lock poisoned");
        let mut v: Vec<_> = map
            .iter()
            .filter(|(_, lp)| lp.is_finite())
            .map(|((l, t), lp)| (l.clone(), t.clone(), *lp))
            .collect();
        v.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        v
    }

    pub fn load(&self, entries: impl IntoIterator<Item = (String, String, f64)>) {
        let mut map = self.map.lock().expect("cache lock poisoned");
        for (l, t, lp) in entries {
            map.insert((l, t), lp);
        }
    }
}

/// Scores span/candidate tables against a backend, batching requests and
/// caching self-probabilities.
pub struct Scorer<'a> {
    backend: &'a dyn ScorerBackend,
    pub src_lang: String,
    pub tgt_lang: String,
    pub method: ScoringMethod,
    pub batch_size: usize,
    cache: Option<&'a SelfProbCache>,
}

/// Log-probability of one request, or why it is unusable.
type LogOutcome = Result<f64, String>;

impl<'a> Scorer<'a> {
    pub fn new(backend: &'a dyn ScorerBackend, src_lang: &str, tgt_lang: &str) -> Self {
        Scorer {
            backend,
            src_lang: src_lang.to_string(),
            tgt_lang: tgt_lang.to_string(),
            method: ScoringMethod::Translation,
            batch_size: DEFAULT_BATCH_SIZE,
            cache: None,
        }
    }

    pub fn with_cache(mut self, cache: &'a SelfProbCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_method(mut self, method: ScoringMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn backend(&self) -> &dyn ScorerBackend {
        self.backend
    }

    fn run_batched(&self, requests: Vec<ScoreRequest>) -> Result<HashMap<ScoreRequest, LogOutcome>, BackendError> {
        let mut out = HashMap::with_capacity(requests.len());
        for chunk in requests.chunks(self.batch_size) {
            let responses = self.backend.token_logprobs_batch(chunk)?;
            if responses.len() != chunk.len() {
                return Err(BackendError::Rejected(format!(
                    "batch of {} requests answered with {} responses",
                    chunk.len(),
                    responses.len()
                )));
            }
            for (req, lps) in chunk.iter().zip(responses) {
                let outcome = mean_logprob(&lps).map_err(|e| e.to_string());
                out.insert(req.clone(), outcome);
            }
        }
        Ok(out)
    }

    /// Scores every category of one pair. `groups` supplies the candidates;
    /// spans whose category has no group get no table.
    pub fn score_pair(&self, spans: &[Span], groups: &[CandidateGroup]) -> Result<Vec<ScoreTable>, BackendError> {
        match self.method {
            ScoringMethod::Translation => self.translation_tables(spans, groups),
            ScoringMethod::Embedding => self.embedding_tables(spans, groups),
        }
    }

    /// The table for one category's spans against that category's group.
    pub fn score_table(&self, spans: &[Span], group: &CandidateGroup) -> Result<ScoreTable, BackendError> {
        let mut tables = self.score_pair(spans, std::slice::from_ref(group))?;
        Ok(tables.pop().unwrap_or_else(|| ScoreTable {
            category: group.category.clone(),
            span_indices: Vec::new(),
            candidates: group.candidates.iter().map(|c| c.text.clone()).collect(),
            cells: Vec::new(),
        }))
    }

    fn layout<'s>(spans: &'s [Span], groups: &'s [CandidateGroup]) -> Vec<(&'s CandidateGroup, Vec<usize>)> {
        groups
            .iter()
            .map(|g| {
                let rows = spans
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.category == g.category)
                    .map(|(i, _)| i)
                    .collect::<Vec<_>>();
                (g, rows)
            })
            .filter(|(_, rows)| !rows.is_empty())
            .collect()
    }

    fn translation_tables(&self, spans: &[Span], groups: &[CandidateGroup]) -> Result<Vec<ScoreTable>, BackendError> {
        let (src, tgt) = (self.src_lang.as_str(), self.tgt_lang.as_str());
        let layout = Self::layout(spans, groups);

        let mut self_texts: BTreeSet<(&str, &str)> = BTreeSet::new();
        let mut cross: BTreeSet<(&str, &str)> = BTreeSet::new();
        for (g, rows) in &layout {
            for &r in rows {
                self_texts.insert((src, &spans[r].surface));
                for c in &g.candidates {
                    self_texts.insert((tgt, &c.text));
                    cross.insert((&spans[r].surface, &c.text));
                }
            }
        }

        let mut self_logs: HashMap<(&str, &str), LogOutcome> = HashMap::new();
        let mut requests = Vec::new();
        for &(lang, text) in &self_texts {
            match self.cache.and_then(|c| c.get(lang, text)) {
                Some(lp) => {
                    self_logs.insert((lang, text), Ok(lp));
                }
                None => requests.push(request(Text::new(text, lang), Text::new(text, lang))),
            }
        }
        for &(s, c) in &cross {
            requests.push(request(Text::new(s, src), Text::new(c, tgt)));
            requests.push(request(Text::new(c, tgt), Text::new(s, src)));
        }
        let results = self.run_batched(requests)?;

        for &(lang, text) in &self_texts {
            if self_logs.contains_key(&(lang, text)) {
                continue;
            }
            let outcome = results[&request(Text::new(text, lang), Text::new(text, lang))].clone();
            if let (Some(cache), Ok(lp)) = (self.cache, &outcome) {
                cache.insert(lang, text, *lp);
            }
            self_logs.insert((lang, text), outcome);
        }

        let cell = |surface: &str, cand: &str| -> Cell {
            let get = |scored: Text<'_>, cond: Text<'_>| results[&request(scored, cond)].clone();
            let parts = (|| {
                let ab = get(Text::new(surface, src), Text::new(cand, tgt))?;
                let ba = get(Text::new(cand, tgt), Text::new(surface, src))?;
                let aa = self_logs[&(src, surface)].clone()?;
                let bb = self_logs[&(tgt, cand)].clone()?;
                SimScore::from_logs(ab, ba, aa, bb).map_err(|e| e.to_string())
            })();
            match parts {
                Ok(s) => Cell::Valid(Similarity::Translation(s)),
                Err(reason) => Cell::Invalid(reason),
            }
        };

        Ok(layout
            .into_iter()
            .map(|(g, rows)| ScoreTable {
                category: g.category.clone(),
                cells: rows
                    .iter()
                    .map(|&r| g.candidates.iter().map(|c| cell(&spans[r].surface, &c.text)).collect())
                    .collect(),
                span_indices: rows,
                candidates: g.candidates.iter().map(|c| c.text.clone()).collect(),
            })
            .collect())
    }

    fn embedding_tables(&self, spans: &[Span], groups: &[CandidateGroup]) -> Result<Vec<ScoreTable>, BackendError> {
        if !self.backend.capabilities().embeddings {
            return Err(BackendError::Unsupported("embeddings"));
        }
        let layout = Self::layout(spans, groups);
        let mut vectors: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
        for (g, rows) in &layout {
            for &r in rows {
                let key = (self.src_lang.as_str(), spans[r].surface.as_str());
                if let std::collections::btree_map::Entry::Vacant(e) = vectors.entry(key) {
                    e.insert(self.backend.embed(key.1, key.0)?);
                }
            }
            for c in &g.candidates {
                let key = (self.tgt_lang.as_str(), c.text.as_str());
                if let std::collections::btree_map::Entry::Vacant(e) = vectors.entry(key) {
                    e.insert(self.backend.embed(key.1, key.0)?);
                }
            }
        }
        Ok(layout
            .into_iter()
            .map(|(g, rows)| {
                let cells = rows
                    .iter()
                    .map(|&r| {
                        let u = &vectors[&(self.src_lang.as_str(), spans[r].surface.as_str())];
                        g.candidates
                            .iter()
                            .map(
                                |c| match cosine(u, &vectors[&(self.tgt_lang.as_str(), c.text.as_str())]) {
                                    Ok(value) => Cell::Valid(Similarity::Cosine { value }),
                                    Err(e) => Cell::Invalid(e.to_string()),
                                },
                            )
                            .collect()
                    })
                    .collect();
                ScoreTable {
                    category: g.category.clone(),
                    span_indices: rows,
                    candidates: g.candidates.iter().map(|c| c.text.clone()).collect(),
                    cells,
                }
            })
            .collect())
    }
}
