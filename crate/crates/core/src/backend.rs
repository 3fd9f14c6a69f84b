//! Contracts for the neural side of the pipeline (beam generator, conditional
//! scorer, sentence embedder) plus deterministic in-process implementations
//! used for tests, demos and offline runs.

use std::collections::{BTreeMap, HashMap};
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{BackendError, FormatError};

/// One decoded sequence with its sequence log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub text: String,
    pub logprob: f64,
}

impl Beam {
    pub fn new(text: impl Into<String>, logprob: f64) -> Self {
        Beam {
            text: text.into(),
            logprob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub n_beams: usize,
    pub max_new_tokens: usize,
}

/// Beam-search text generator. Responses are ordered by descending logprob.
pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerateRequest) -> Result<Vec<Beam>, BackendError>;

    fn identity(&self) -> String;
}

/// Request for the per-token log-probabilities of `scored_text` when
/// translating from `condition_text`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub condition_text: String,
    pub scored_text: String,
    /// Language of `condition_text`.
    pub src_lang: String,
    /// Language of `scored_text`.
    pub tgt_lang: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub conditional_logprobs: bool,
    pub embeddings: bool,
}

/// Conditional probability model and, optionally, a sentence embedder.
///
/// `token_logprobs` returns one log-probability per model token of the scored
/// text; the model owns tokenization.
pub trait ScorerBackend: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    fn token_logprobs(&self, request: &ScoreRequest) -> Result<Vec<f64>, BackendError>;

    fn token_logprobs_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<Vec<f64>>, BackendError> {
        requests.iter().map(|r| self.token_logprobs(r)).collect()
    }

    fn embed(&self, _text: &str, _lang: &str) -> Result<Vec<f64>, BackendError> {
        Err(BackendError::Unsupported("embeddings"))
    }

    fn identity(&self) -> String;
}

/// Produces translations of a short text (used by the span-translation baseline).
pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, src_lang: &str, tgt_lang: &str, n_beams: usize) -> Result<Vec<Beam>, BackendError>;
}

/// Uses a generator as a translator by prompting it with the bare span text.
pub struct GeneratorTranslator<'a> {
    pub generator: &'a dyn Generator,
    pub max_new_tokens: usize,
}

impl Translator for GeneratorTranslator<'_> {
    fn translate(&self, text: &str, _src: &str, _tgt: &str, n_beams: usize) -> Result<Vec<Beam>, BackendError> {
        self.generator.generate(&GenerateRequest {
            prompt: text.to_string(),
            n_beams,
            max_new_tokens: self.max_new_tokens,
        })
    }
}

#[derive(Debug, Deserialize)]
struct ScriptLine {
    prompt: String,
    beams: Vec<Beam>,
}

/// Replays fixed beams per prompt. Unknown prompts yield no beams.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    script: HashMap<String, Vec<Beam>>,
}

impl ScriptedGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: impl Into<String>, beams: Vec<Beam>) {
        self.script.insert(prompt.into(), beams);
    }

    /// Reads `{"prompt": "...", "beams": [{"text": "...", "logprob": -1.0}]}` lines.
    pub fn from_jsonl(text: &str) -> Result<Self, FormatError> {
        let mut g = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScriptLine = serde_json::from_str(line).map_err(|e| FormatError::Jsonl {
                line: i + 1,
                message: e.to_string(),
            })?;
            g.insert(rec.prompt, rec.beams);
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, request: &GenerateRequest) -> Result<Vec<Beam>, BackendError> {
        let mut beams = self.script.get(&request.prompt).cloned().unwrap_or_default();
        beams.truncate(request.n_beams);
        Ok(beams)
    }

    fn identity(&self) -> String {
        format!("scripted-generator({} prompts)", self.script.len())
    }
}

/// Token-overlap translation model over a bilingual word list.
///
/// A scored token is "explained" by the condition text when it occurs in it
/// (case-insensitively) or is linked to one of its tokens by the lexicon.
/// Explained tokens get probability `hit`, others `miss`. Embeddings are
/// hashed bags of lexicon concepts.
#[derive(Debug, Clone)]
pub struct LexiconScorer {
    links: HashMap<String, Vec<String>>,
    concept: HashMap<String, String>,
    hit: f64,
    miss: f64,
    dims: usize,
}

impl LexiconScorer {
    pub const DEFAULT_HIT: f64 = 0.9;
    pub const DEFAULT_MISS: f64 = 0.01;
    pub const EMBEDDING_DIMS: usize = 64;

    pub fn new<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let mut links: HashMap<String, Vec<String>> = HashMap::new();
        for (a, b) in pairs {
            let (a, b) = (a.as_ref().to_lowercase(), b.as_ref().to_lowercase());
            links.entry(a.clone()).or_default().push(b.clone());
            links.entry(b).or_default().push(a);
        }
        for v in links.values_mut() {
            v.sort();
            v.dedup();
        }
        let concept = Self::components(&links);
        LexiconScorer {
            links,
            concept,
            hit: Self::DEFAULT_HIT,
            miss: Self::DEFAULT_MISS,
            dims: Self::EMBEDDING_DIMS,
        }
    }

    pub fn with_probabilities(mut self, hit: f64, miss: f64) -> Self {
        self.hit = hit;
        self.miss = miss;
        self
    }

    /// Tab- or space-separated `source target` word pairs, one per line.
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(FormatError::Other(format!(
                    "lexicon line {}: expected two words, got {line:?}",
                    i + 1
                )));
            }
            pairs.push((cols[0].to_string(), cols[1].to_string()));
        }
        Ok(Self::new(pairs))
    }

    /// Smallest word of each connected component of the link graph.
    fn components(links: &HashMap<String, Vec<String>>) -> HashMap<String, String> {
        let mut concept = HashMap::new();
        let mut words: Vec<&String> = links.keys().collect();
        words.sort();
        for w in words {
            if concept.contains_key(w) {
                continue;
            }
            let mut stack = vec![w.clone()];
            let mut members = Vec::new();
            while let Some(x) = stack.pop() {
                if concept.contains_key(&x) || members.contains(&x) {
                    continue;
                }
                for y in links.get(&x).into_iter().flatten() {
                    stack.push(y.clone());
                }
                members.push(x);
            }
            let root = members.iter().min().cloned().unwrap_or_else(|| w.clone());
            for m in members {
                concept.insert(m, root.clone());
            }
        }
        concept
    }

    fn explained(&self, token: &str, condition: &[String]) -> bool {
        let token = token.to_lowercase();
        condition
            .iter()
            .any(|c| *c == token || self.links.get(&token).is_some_and(|l| l.binary_search(c).is_ok()))
    }
}

impl ScorerBackend for LexiconScorer {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            conditional_logprobs: true,
            embeddings: true,
        }
    }

    fn token_logprobs(&self, request: &ScoreRequest) -> Result<Vec<f64>, BackendError> {
        let condition: Vec<String> = request
            .condition_text
            .split_whitespace()
            .map(str::to_lowercase)
            .collect();
        let (hit, miss) = (self.hit.ln(), self.miss.ln());
        Ok(request
            .scored_text
            .split_whitespace()
            .map(|t| if self.explained(t, &condition) { hit } else { miss })
            .collect())
    }

    fn embed(&self, text: &str, _lang: &str) -> Result<Vec<f64>, BackendError> {
        let mut v = vec![0.0; self.dims];
        for tok in text.split_whitespace() {
            let tok = tok.to_lowercase();
            let key = self.concept.get(&tok).unwrap_or(&tok);
            let mut h = std::collections::hash_map::DefaultHasher::new();
            key.hash(&mut h);
            v[(h.finish() % self.dims as u64) as usize] += 1.0;
        }
        Ok(v)
    }

    fn identity(&self) -> String {
        format!(
            "lexicon-scorer({} words, hit={}, miss={})",
            self.links.len(),
            self.hit,
            self.miss
        )
    }
}

/// Fixed per-token probabilities looked up by `(scored, condition)` text.
/// Missing entries fall back to `default` per whitespace token.
#[derive(Debug, Clone, Default)]
pub struct TableScorer {
    table: BTreeMap<(String, String), Vec<f64>>,
    default: Option<f64>,
}

impl TableScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_default(mut self, p: f64) -> Self {
        self.default = Some(p);
        self
    }

    /// Records `p(scored | condition)` as per-token probabilities.
    pub fn set(&mut self, scored: &str, condition: &str, token_probs: &[f64]) {
        self.table.insert(
            (scored.to_string(), condition.to_string()),
            token_probs.iter().map(|p| p.ln()).collect(),
        );
    }
}

impl ScorerBackend for TableScorer {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            conditional_logprobs: true,
            embeddings: false,
        }
    }

    fn token_logprobs(&self, request: &ScoreRequest) -> Result<Vec<f64>, BackendError> {
        let key = (request.scored_text.clone(), request.condition_text.clone());
        match (self.table.get(&key), self.default) {
            (Some(lp), _) => Ok(lp.clone()),
            (None, Some(p)) => Ok(request.scored_text.split_whitespace().map(|_| p.ln()).collect()),
            (None, None) => Err(BackendError::Rejected(format!(
                "no entry for p({:?} | {:?})",
                request.scored_text, request.condition_text
            ))),
        }
    }

    fn identity(&self) -> String {
        format!("table-scorer({} entries)", self.table.len())
    }
}
