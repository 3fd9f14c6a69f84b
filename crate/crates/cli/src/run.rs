//! The `project`, `sweep`, `evaluate` and `serve-check` commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use anyhow::anyhow;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use spanproj::alignment::{parse_pharaoh_file, AlignmentMap};
use spanproj::backend::{Generator, LexiconScorer, ScorerBackend, ScriptedGenerator};
use spanproj::corpus::{parse_conll, parse_conll_with_stats, parse_targets, write_conll, zip_parallel, ParseStats};
use spanproj::eval::{span_f1, sweep_table, validate_counts, SweepRow};
use spanproj::pipeline::{evaluate_results, CandidateSource, PairInputs, PairResult, Projector};
use spanproj::scoring::{ScoringMethod, SelfProbCache};
use spanproj::{CategoryMap, LabeledSentence, Method, ParallelPair};

use crate::args::{Endpoint, EvaluateArgs, RunConfig, ServeCheckArgs};
use crate::http::{HttpBackend, RetryPolicy};
use crate::Failure;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(anyhow!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Other(anyhow!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Other(anyhow!("{}: {e}", path.display())))
}

fn input_err(path: &Path) -> impl Fn(spanproj::FormatError) -> Failure + '_ {
    move |e| Failure::Input(anyhow!("{}: {e}", path.display()))
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

struct Inputs {
    map: CategoryMap,
    pairs: Vec<ParallelPair>,
    gold: Option<Vec<LabeledSentence>>,
    alignments: Option<Vec<AlignmentMap>>,
    stats: ParseStats,
}

fn load_map(path: Option<&Path>) -> Result<CategoryMap, Failure> {
    match path {
        Some(p) => CategoryMap::parse(&read(p)?).map_err(|e| Failure::Config(vec![format!("--categories: {e}")])),
        None => Ok(CategoryMap::default()),
    }
}

/// Raw tags without a map entry are used as their own category names.
fn extend_with_unmapped(map: &mut CategoryMap, sentences: &[LabeledSentence]) -> Result<(), Failure> {
    let unmapped: Vec<String> = sentences
        .iter()
        .flat_map(|s| &s.spans)
        .map(|s| s.category.clone())
        .filter(|c| !map.contains_name(c))
        .collect();
    map.extend_identity(unmapped.iter().map(String::as_str))
        .map_err(|e| Failure::Config(vec![format!("--categories: {e}")]))
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs, Failure> {
    let mut map = load_map(cfg.categories.as_deref())?;
    let (sources, stats) = parse_conll_with_stats(&read(&cfg.source)?, &map).map_err(input_err(&cfg.source))?;
    extend_with_unmapped(&mut map, &sources)?;
    let targets = parse_targets(&read(&cfg.target)?).map_err(input_err(&cfg.target))?;
    let pairs = zip_parallel(sources, targets)
        .map_err(|e| Failure::Input(anyhow!("{} / {}: {e}", cfg.source.display(), cfg.target.display())))?;

    let gold = match &cfg.gold {
        Some(path) => {
            let mut gold = parse_conll(&read(path)?, &map).map_err(input_err(path))?;
            if gold.len() != pairs.len() {
                return Err(Failure::Input(anyhow!(
                    "{}: {} gold sentences for {} sentence pairs",
                    path.display(),
                    gold.len(),
                    pairs.len()
                )));
            }
            for (i, (g, p)) in gold.iter_mut().zip(&pairs).enumerate() {
                if g.tokens != p.target_tokens {
                    return Err(Failure::Input(anyhow!(
                        "{}: sentence {i} tokens differ from the target sentence",
                        path.display()
                    )));
                }
                g.id = p.id.clone();
            }
            Some(gold)
        }
        None => None,
    };

    let alignments = match &cfg.alignments {
        Some(path) => {
            let a = parse_pharaoh_file(&read(path)?).map_err(input_err(path))?;
            if a.len() != pairs.len() {
                return Err(Failure::Input(anyhow!(
                    "{}: {} alignment lines for {} sentence pairs",
                    path.display(),
                    a.len(),
                    pairs.len()
                )));
            }
            Some(a)
        }
        None => None,
    };
    Ok(Inputs {
        map,
        pairs,
        gold,
        alignments,
        stats,
    })
}

/// Backends owned for the duration of a run.
enum Backends {
    None,
    Mock {
        generator: Option<ScriptedGenerator>,
        scorer: Option<LexiconScorer>,
    },
    Http(HttpBackend),
}

impl Backends {
    fn generator(&self) -> Option<&dyn Generator> {
        match self {
            Backends::None => None,
            Backends::Mock { generator, .. } => generator.as_ref().map(|g| g as &dyn Generator),
            Backends::Http(h) => Some(h),
        }
    }

    fn scorer(&self) -> Option<&dyn ScorerBackend> {
        match self {
            Backends::None => None,
            Backends::Mock { scorer, .. } => scorer.as_ref().map(|s| s as &dyn ScorerBackend),
            Backends::Http(h) => Some(h),
        }
    }
}

/// Capabilities a method needs from the backend.
fn required_capabilities(method: Method, candidates: CandidateSource, scoring: ScoringMethod) -> Vec<&'static str> {
    let mut caps = Vec::new();
    if method.needs_generator(candidates) {
        caps.push("generate");
    }
    if method.needs_scorer() {
        caps.push(match scoring {
            ScoringMethod::Translation => "score",
            ScoringMethod::Embedding => "embed",
        });
    }
    caps
}

fn open_backends(cfg: &RunConfig) -> Result<Backends, Failure> {
    let method = cfg.pipeline.method;
    match &cfg.endpoint {
        Endpoint::None => Ok(Backends::None),
        Endpoint::Mock => {
            let generator = match &cfg.beam_script {
                Some(p) => Some(ScriptedGenerator::from_jsonl(&read(p)?).map_err(input_err(p))?),
                None => None,
            };
            let scorer = match &cfg.lexicon {
                Some(p) => Some(LexiconScorer::parse(&read(p)?).map_err(input_err(p))?),
                None => None,
            };
            Ok(Backends::Mock { generator, scorer })
        }
        Endpoint::Http(url) => {
            let backend = HttpBackend::new(url, Duration::from_secs(cfg.timeout_secs), RetryPolicy::default());
            let health = backend
                .health()
                .map_err(|e| Failure::Backend(anyhow!("{url}: health check failed: {e}")))?;
            let missing: Vec<&str> = required_capabilities(method, cfg.pipeline.candidates, cfg.pipeline.scoring)
                .into_iter()
                .filter(|c| !health.has(c))
                .collect();
            if !missing.is_empty() {
                return Err(Failure::Backend(anyhow!(
                    "{url} lacks capabilities needed by --method {method}: {}",
                    missing.join(", ")
                )));
            }
            Ok(Backends::Http(backend))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    scorer: String,
    entries: Vec<(String, String, f64)>,
}

const CACHE_FILE: &str = "self-probabilities.json";

/// Loads persisted self-probabilities recorded for the same scorer.
fn load_cache(dir: &Path, scorer: &str, cache: &SelfProbCache) -> Result<usize, Failure> {
    let path = dir.join(CACHE_FILE);
    if !path.exists() {
        return Ok(0);
    }
    let file: CacheFile =
        serde_json::from_str(&read(&path)?).map_err(|e| Failure::Input(anyhow!("{}: {e}", path.display())))?;
    if file.scorer != scorer {
        return Ok(0);
    }
    let n = file.entries.len();
    cache.load(file.entries);
    Ok(n)
}

fn save_cache(dir: &Path, scorer: &str, cache: &SelfProbCache) -> Result<(), Failure> {
    let file = CacheFile {
        scorer: scorer.to_string(),
        entries: cache.snapshot(),
    };
    write(
        &dir.join(CACHE_FILE),
        &serde_json::to_string(&file).expect("serializable"),
    )
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Failure::Other(anyhow!("thread pool: {e}")))
}

fn pair_inputs<'a>(inputs: &'a Inputs, i: usize) -> PairInputs<'a> {
    PairInputs {
        gold: inputs.gold.as_ref().map(|g| &g[i]),
        alignment: inputs.alignments.as_ref().map(|a| &a[i]),
    }
}

fn pipeline_failure(pair: &ParallelPair, e: spanproj::Error) -> Failure {
    let err = anyhow!("pair {}: {e}", pair.id);
    match e {
        spanproj::Error::Backend(_) => Failure::Backend(err),
        spanproj::Error::Config(_) => Failure::Config(vec![err.to_string()]),
        _ => Failure::Input(err),
    }
}

struct Session {
    inputs: Inputs,
    backends: Backends,
    cache: SelfProbCache,
    cache_loaded: usize,
}

impl Session {
    fn open(cfg: &RunConfig) -> Result<Session, Failure> {
        let inputs = load_inputs(cfg)?;
        let backends = open_backends(cfg)?;
        let cache = SelfProbCache::new();
        let mut cache_loaded = 0;
        if let (Some(dir), Some(scorer)) = (&cfg.cache_dir, backends.scorer()) {
            cache_loaded = load_cache(dir, &scorer.identity(), &cache)?;
        }
        Ok(Session {
            inputs,
            backends,
            cache,
            cache_loaded,
        })
    }

    fn projector(&self, cfg: &RunConfig) -> Projector<'_> {
        let mut p = Projector::new(cfg.pipeline.clone(), &self.inputs.map).with_cache(&self.cache);
        if let Some(g) = self.backends.generator() {
            p = p.with_generator(g);
        }
        if let Some(s) = self.backends.scorer() {
            p = p.with_scorer(s);
        }
        p
    }

    fn persist_cache(&self, cfg: &RunConfig) -> Result<(), Failure> {
        match (&cfg.cache_dir, self.backends.scorer()) {
            (Some(dir), Some(scorer)) => save_cache(dir, &scorer.identity(), &self.cache),
            _ => Ok(()),
        }
    }
}

pub fn project(cfg: RunConfig) -> Result<(), Failure> {
    let session = Session::open(&cfg)?;
    let projector = session.projector(&cfg);
    let inputs = &session.inputs;
    let results: Vec<PairResult> = pool(cfg.threads)?.install(|| {
        inputs
            .pairs
            .par_iter()
            .enumerate()
            .map(|(i, pair)| {
                projector
                    .project(pair, pair_inputs(inputs, i))
                    .map_err(|e| pipeline_failure(pair, e))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    session.persist_cache(&cfg)?;

    let projected: Vec<LabeledSentence> = results.iter().map(|r| r.projected.clone()).collect();
    let out = cfg.out.as_deref().expect("validated");
    write(out, &write_conll(&projected, |c| inputs.map.raw_tag(c)))?;

    let mut unassigned: BTreeMap<String, usize> = BTreeMap::new();
    for r in &results {
        for (reason, n) in r.assignment.reason_counts() {
            *unassigned.entry(reason.to_string()).or_default() += n;
        }
    }
    let source_spans: usize = inputs.pairs.iter().map(|p| p.source.spans.len()).sum();
    let projected_spans: usize = projected.iter().map(|s| s.spans.len()).sum();
    let stats = session.cache.stats();
    let metadata = json!({
        "tool": format!("spanproj {}", env!("CARGO_PKG_VERSION")),
        "config": cfg,
        "backend": {
            "generator": session.backends.generator().map(|g| g.identity()),
            "scorer": session.backends.scorer().map(|s| s.identity()),
        },
        "inputs": {
            "pairs": inputs.pairs.len(),
            "source_spans": source_spans,
            "docstart_lines": inputs.stats.docstart_lines,
            "repaired_tags": inputs.stats.repaired_tags,
            "categories": inputs.map.iter().collect::<BTreeMap<_, _>>(),
        },
        "self_probabilities": {
            "source_spans": format!("conditioned on themselves in {}", cfg.pipeline.src_lang),
            "candidates": format!("conditioned on themselves in {}", cfg.pipeline.tgt_lang),
        },
        "cache": {
            "loaded": session.cache_loaded,
            "entries": stats.entries,
            "lookups": stats.lookups,
        },
        "projected_spans": projected_spans,
        "unassigned": unassigned,
        "malformed_beams": results.iter().map(|r| r.malformed_beams).sum::<usize>(),
        "ngram_fallback_pairs": results.iter().filter(|r| r.used_ngram_fallback).count(),
        "wide_hulls": results.iter().flat_map(|r| &r.hull_diagnostics).filter(|d| d.wide).count(),
        "truncated_hulls": results.iter().flat_map(|r| &r.hull_diagnostics).filter(|d| d.truncated).count(),
    });
    if let Some(path) = &cfg.metadata {
        write(path, &pretty(&metadata))?;
    }

    eprintln!(
        "projected {projected_spans} of {source_spans} spans over {} sentence pairs",
        inputs.pairs.len()
    );
    if let Some(gold) = &inputs.gold {
        let report = evaluate_results(&results, gold).map_err(|e| Failure::Input(anyhow!("{e}")))?;
        print!("{}", report.to_table());
        if let Some(path) = &cfg.report_json {
            write(path, &pretty(&report.to_json()))?;
        }
    }
    Ok(())
}

pub fn sweep(cfg: RunConfig) -> Result<(), Failure> {
    validate_counts(&cfg.counts).map_err(|e| Failure::Config(vec![e.to_string()]))?;
    let session = Session::open(&cfg)?;
    let projector = session.projector(&cfg);
    let inputs = &session.inputs;
    let gold = inputs.gold.as_ref().expect("validated");
    let max = *cfg.counts.last().expect("validated");
    let pool = pool(cfg.threads)?;

    let generations = pool.install(|| {
        inputs
            .pairs
            .par_iter()
            .map(|pair| projector.generate(pair, max).map_err(|e| pipeline_failure(pair, e)))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut rows = Vec::new();
    for &k in &cfg.counts {
        let results = pool.install(|| {
            inputs
                .pairs
                .par_iter()
                .zip(&generations)
                .enumerate()
                .map(|(i, (pair, g))| {
                    let truncated = g.as_ref().map(|g| g.truncated(k));
                    projector
                        .project_with(pair, pair_inputs(inputs, i), truncated.as_ref(), k)
                        .map_err(|e| pipeline_failure(pair, e))
                })
                .collect::<Result<Vec<_>, _>>()
        })?;
        let report = evaluate_results(&results, gold).map_err(|e| Failure::Input(anyhow!("{e}")))?;
        rows.push(SweepRow {
            count: k,
            micro_f1: report.micro_f1(),
            report,
        });
    }
    session.persist_cache(&cfg)?;

    print!("{}", sweep_table(&rows));
    // `--out` and `--report-json` both take the sweep table as JSON.
    let targets: Vec<&Path> = cfg.out.iter().chain(&cfg.report_json).map(|p| p.as_path()).collect();
    if !targets.is_empty() {
        let doc = json!({
            "method": cfg.pipeline.method,
            "rows": rows.iter().map(|r| json!({
                "count": r.count,
                "micro_f1": r.micro_f1,
                "report": r.report.to_json(),
            })).collect::<Vec<_>>(),
        });
        for path in targets {
            write(path, &pretty(&doc))?;
        }
    }
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let mut map = load_map(args.categories.as_deref())?;
    let gold = parse_conll(&read(&args.gold)?, &map).map_err(input_err(&args.gold))?;
    extend_with_unmapped(&mut map, &gold)?;
    let pred = parse_conll(&read(&args.pred)?, &map).map_err(input_err(&args.pred))?;
    if pred.len() != gold.len() {
        return Err(Failure::Input(anyhow!(
            "{} has {} sentences, {} has {}",
            args.pred.display(),
            pred.len(),
            args.gold.display(),
            gold.len()
        )));
    }
    if let Some(i) = pred.iter().zip(&gold).position(|(p, g)| p.tokens != g.tokens) {
        return Err(Failure::Input(anyhow!(
            "sentence {i}: predicted and gold tokens differ"
        )));
    }
    let report = span_f1(&pred, &gold).map_err(|e| Failure::Input(anyhow!("{e}")))?;
    print!("{}", report.to_table());
    if let Some(path) = &args.report_json {
        write(path, &pretty(&report.to_json()))?;
    }
    Ok(())
}

pub fn serve_check(args: ServeCheckArgs) -> Result<(), Failure> {
    let endpoint = Endpoint::parse(&args.endpoint).map_err(|e| Failure::Config(vec![e]))?;
    let method = args
        .method
        .as_deref()
        .map(str::parse::<Method>)
        .transpose()
        .map_err(|e| Failure::Config(vec![format!("--method: {e}")]))?;
    let scoring = match args.scoring.as_str() {
        "translation" => ScoringMethod::Translation,
        "embedding" => ScoringMethod::Embedding,
        other => return Err(Failure::Config(vec![format!("--scoring: unknown value {other:?}")])),
    };
    let url = match endpoint {
        Endpoint::Mock => {
            println!("endpoint: mock");
            println!("capabilities: generate, score, embed");
            return Ok(());
        }
        Endpoint::Http(url) => url,
        Endpoint::None => unreachable!("parse never yields None"),
    };
    let backend = HttpBackend::new(
        &url,
        Duration::from_secs(args.timeout_secs),
        RetryPolicy {
            attempts: 1,
            ..Default::default()
        },
    );
    let health = backend.health().map_err(|e| Failure::Backend(anyhow!("{url}: {e}")))?;
    println!("endpoint: {}", backend.endpoint());
    println!("capabilities: {}", health.capabilities.join(", "));
    if let Some(d) = health.dims {
        println!("embedding dims: {d}");
    }
    for (role, id) in &health.model_ids {
        println!("model {role}: {id}");
    }
    if let Some(method) = method {
        let missing: Vec<&str> = required_capabilities(method, CandidateSource::Generator, scoring)
            .into_iter()
            .filter(|c| !health.has(c))
            .collect();
        if !missing.is_empty() {
            return Err(Failure::Backend(anyhow!(
                "--method {method} needs: {}",
                missing.join(", ")
            )));
        }
        println!("method {method}: ok");
    }
    Ok(())
}
