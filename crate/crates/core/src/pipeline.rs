//! End-to-end projection of parallel pairs with a chosen method.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alignment::{project_via_alignments, AlignmentMap, HullDiagnostic};
use crate::backend::{Generator, GeneratorTranslator, ScorerBackend};
use crate::corpus::{CategoryMap, LabeledSentence, ParallelPair};
use crate::error::{ConfigError, Error};
use crate::eval::{span_f1, validate_counts, EvalReport, SweepRow};
use crate::generation::{
    generate_candidates, match_and_filter, ngram_candidates, raw_from_beams, CandidateGroup, GenerationOutput,
};
use crate::prompting::build_prompt;
use crate::scoring::{Scorer, ScoringMethod, SelfProbCache, DEFAULT_BATCH_SIZE};
use crate::selection::{
    oracle_upper_bound, project_via_span_translation, select_greedy, select_most_probable, Assignment,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Generated candidates ranked by translation similarity.
    #[serde(rename = "tprojection")]
    TProjection,
    /// Every target n-gram ranked by translation similarity.
    #[serde(rename = "ngram+select")]
    NgramSelect,
    /// The top beam's slot fillers, unranked.
    #[serde(rename = "most-probable")]
    MostProbable,
    /// Gold projection whenever the candidates contain it.
    #[serde(rename = "oracle")]
    Oracle,
    /// Hulls of externally computed word alignments.
    #[serde(rename = "alignment")]
    Alignment,
    /// Each span translated alone and matched in the target.
    #[serde(rename = "span-translation")]
    SpanTranslation,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::TProjection,
        Method::NgramSelect,
        Method::MostProbable,
        Method::Oracle,
        Method::Alignment,
        Method::SpanTranslation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::TProjection => "tprojection",
            Method::NgramSelect => "ngram+select",
            Method::MostProbable => "most-probable",
            Method::Oracle => "oracle",
            Method::Alignment => "alignment",
            Method::SpanTranslation => "span-translation",
        }
    }

    pub fn needs_generator(&self, candidates: CandidateSource) -> bool {
        match self {
            Method::TProjection | Method::MostProbable | Method::SpanTranslation => true,
            Method::Oracle => candidates == CandidateSource::Generator,
            Method::NgramSelect | Method::Alignment => false,
        }
    }

    pub fn needs_scorer(&self) -> bool {
        matches!(self, Method::TProjection | Method::NgramSelect | Method::Oracle)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            ConfigError::Invalid(format!(
                "unknown method {s:?} (expected one of: {})",
                Method::ALL.map(|m| m.as_str()).join(", ")
            ))
        })
    }
}

/// Where the oracle and the ranking methods take their candidates from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateSource {
    #[default]
    Generator,
    Ngram,
}

impl FromStr for CandidateSource {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generator" => Ok(CandidateSource::Generator),
            "ngram" => Ok(CandidateSource::Ngram),
            other => Err(ConfigError::Invalid(format!(
                "unknown candidate source {other:?} (expected generator or ngram)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: Method,
    pub n_beams: usize,
    pub max_new_tokens: usize,
    pub batch_size: usize,
    pub src_lang: String,
    pub tgt_lang: String,
    pub scoring: ScoringMethod,
    /// Candidate source for the oracle method.
    pub candidates: CandidateSource,
    /// Use n-gram candidates for a pair when no beam parses.
    pub ngram_fallback: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            method: Method::TProjection,
            n_beams: 100,
            max_new_tokens: 64,
            batch_size: DEFAULT_BATCH_SIZE,
            src_lang: "en".into(),
            tgt_lang: "es".into(),
            scoring: ScoringMethod::Translation,
            candidates: CandidateSource::Generator,
            ngram_fallback: false,
        }
    }
}

/// Per-pair extra inputs some methods need.
#[derive(Debug, Clone, Copy, Default)]
pub struct PairInputs<'a> {
    pub gold: Option<&'a LabeledSentence>,
    pub alignment: Option<&'a AlignmentMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub id: String,
    pub projected: LabeledSentence,
    pub assignment: Assignment,
    pub malformed_beams: usize,
    pub used_ngram_fallback: bool,
    pub hull_diagnostics: Vec<HullDiagnostic>,
}

/// Holds the backends and configuration for projecting pairs.
pub struct Projector<'a> {
    pub config: PipelineConfig,
    pub categories: &'a CategoryMap,
    generator: Option<&'a dyn Generator>,
    scorer: Option<&'a dyn ScorerBackend>,
    cache: Option<&'a SelfProbCache>,
}

impl<'a> Projector<'a> {
    pub fn new(config: PipelineConfig, categories: &'a CategoryMap) -> Self {
        Projector {
            config,
            categories,
            generator: None,
            scorer: None,
            cache: None,
        }
    }

    pub fn with_generator(mut self, generator: &'a dyn Generator) -> Self {
        self.generator = Some(generator);
        self
    }

    pub fn with_scorer(mut self, scorer: &'a dyn ScorerBackend) -> Self {
        self.scorer = Some(scorer);
        self
    }

    pub fn with_cache(mut self, cache: &'a SelfProbCache) -> Self {
        self.cache = Some(cache);
        self
    }

    fn generator(&self) -> Result<&'a dyn Generator, Error> {
        self.generator.ok_or_else(|| {
            ConfigError::Invalid(format!("method {} needs a generator backend", self.config.method)).into()
        })
    }

    fn scorer(&self) -> Result<Scorer<'a>, Error> {
        let backend = self.scorer.ok_or_else(|| {
            Error::from(ConfigError::Invalid(format!(
                "method {} needs a scorer backend",
                self.config.method
            )))
        })?;
        let mut s = Scorer::new(backend, &self.config.src_lang, &self.config.tgt_lang)
            .with_method(self.config.scoring)
            .with_batch_size(self.config.batch_size);
        if let Some(c) = self.cache {
            s = s.with_cache(c);
        }
        Ok(s)
    }

    /// Runs the generator for a pair (methods that use one), at `n_beams`.
    pub fn generate(&self, pair: &ParallelPair, n_beams: usize) -> Result<Option<GenerationOutput>, Error> {
        if !self.config.method.needs_generator(self.config.candidates) || self.config.method == Method::SpanTranslation
        {
            return Ok(None);
        }
        let prompt = build_prompt(pair, self.categories)?;
        generate_candidates(&prompt, self.generator()?, n_beams, self.config.max_new_tokens).map(Some)
    }

    /// Projects one pair, generating candidates if needed.
    pub fn project(&self, pair: &ParallelPair, inputs: PairInputs<'_>) -> Result<PairResult, Error> {
        let generation = self.generate(pair, self.config.n_beams)?;
        self.project_with(pair, inputs, generation.as_ref(), self.config.n_beams)
    }

    /// Projects one pair from an already computed generation output.
    pub fn project_with(
        &self,
        pair: &ParallelPair,
        inputs: PairInputs<'_>,
        generation: Option<&GenerationOutput>,
        n_beams: usize,
    ) -> Result<PairResult, Error> {
        let spans = &pair.source.spans;
        let mut malformed = 0;
        let mut used_fallback = false;
        let mut diagnostics = Vec::new();

        let categories = || spans.iter().map(|s| s.category.as_str());
        let generated_groups = |g: &GenerationOutput| -> Result<Vec<CandidateGroup>, Error> {
            let prompt = build_prompt(pair, self.categories)?;
            Ok(match_and_filter(raw_from_beams(g, &prompt), &pair.target_tokens))
        };

        let assignment = match self.config.method {
            Method::TProjection | Method::NgramSelect | Method::Oracle => {
                let use_ngrams = self.config.method == Method::NgramSelect
                    || (self.config.method == Method::Oracle && self.config.candidates == CandidateSource::Ngram);
                let groups = if use_ngrams || spans.is_empty() {
                    ngram_candidates(&pair.target_tokens, categories())
                } else {
                    let g = generation.ok_or_else(|| ConfigError::Invalid("missing generation output".into()))?;
                    malformed = g.malformed;
                    if g.beams.is_empty() && self.config.ngram_fallback {
                        used_fallback = true;
                        ngram_candidates(&pair.target_tokens, categories())
                    } else {
                        generated_groups(g)?
                    }
                };
                let tables = if spans.is_empty() {
                    Vec::new()
                } else {
                    self.scorer()?.score_pair(spans, &groups)?
                };
                if self.config.method == Method::Oracle {
                    let gold = inputs
                        .gold
                        .ok_or_else(|| ConfigError::Invalid(format!("oracle needs gold for pair {}", pair.id)))?;
                    oracle_upper_bound(spans, &tables, &groups, gold)
                } else {
                    select_greedy(spans, &tables, &groups)
                }
            }
            Method::MostProbable => {
                let g = generation.ok_or_else(|| ConfigError::Invalid("missing generation output".into()))?;
                malformed = g.malformed;
                select_most_probable(spans, g, &pair.target_tokens)
            }
            Method::Alignment => {
                let alignment = inputs.alignment.ok_or_else(|| {
                    ConfigError::Invalid(format!("alignment method needs an alignment for pair {}", pair.id))
                })?;
                alignment.validate(pair.source.tokens.len(), pair.target_tokens.len())?;
                let mut p = project_via_alignments(spans, alignment, pair.target_tokens.len())?;
                for a in &mut p.assignment.assigned {
                    a.text = pair.target_tokens[a.target.start..a.target.end].join(" ");
                }
                diagnostics = p.diagnostics;
                p.assignment
            }
            Method::SpanTranslation => {
                let translator = GeneratorTranslator {
                    generator: self.generator()?,
                    max_new_tokens: self.config.max_new_tokens,
                };
                project_via_span_translation(pair, &translator, n_beams, &self.config.src_lang, &self.config.tgt_lang)?
            }
        };

        if let Err(e) = assignment.check(spans.len(), pair.target_tokens.len()) {
            panic!("projection of pair {} violated assignment invariants: {e}", pair.id);
        }
        Ok(PairResult {
            id: pair.id.clone(),
            projected: assignment.to_sentence(pair)?,
            assignment,
            malformed_beams: malformed,
            used_ngram_fallback: used_fallback,
            hull_diagnostics: diagnostics,
        })
    }
}

/// Scores projections against gold target annotations and tallies the
/// unassigned reasons.
pub fn evaluate_results(results: &[PairResult], gold: &[LabeledSentence]) -> Result<EvalReport, Error> {
    let predicted: Vec<LabeledSentence> = results.iter().map(|r| r.projected.clone()).collect();
    let mut report = span_f1(&predicted, gold)?;
    for r in results {
        for (_, reason) in &r.assignment.unassigned {
            *report.unassigned.entry(reason.to_string()).or_default() += 1;
        }
    }
    Ok(report)
}

/// Runs the projector once per candidate count, generating once at the
/// largest count and truncating to each smaller one.
pub fn sweep_candidate_counts(
    projector: &Projector<'_>,
    counts: &[usize],
    pairs: &[ParallelPair],
    gold: &[LabeledSentence],
) -> Result<Vec<SweepRow>, Error> {
    validate_counts(counts)?;
    let max = *counts.last().expect("validated non-empty");
    let generations = pairs
        .iter()
        .map(|p| projector.generate(p, max))
        .collect::<Result<Vec<_>, _>>()?;
    counts
        .iter()
        .map(|&k| {
            let results = pairs
                .iter()
                .zip(&generations)
                .zip(gold)
                .map(|((pair, g), gold)| {
                    let truncated = g.as_ref().map(|g| g.truncated(k));
                    let inputs = PairInputs {
                        gold: Some(gold),
                        alignment: None,
                    };
                    projector.project_with(pair, inputs, truncated.as_ref(), k)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let report = evaluate_results(&results, gold)?;
            Ok(SweepRow {
                count: k,
                micro_f1: report.micro_f1(),
                report,
            })
        })
        .collect()
}
