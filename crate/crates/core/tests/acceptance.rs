//! Acceptance checks. Runs every criterion and prints one PASS/FAIL line each.
//!
//! Run with `cargo test -p spanproj --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spanproj::alignment::{project_via_alignments, AlignmentMap};
use spanproj::backend::{Beam, LexiconScorer, ScriptedGenerator, TableScorer};
use spanproj::corpus::{parse_conll, write_conll, CategoryMap, LabeledSentence, ParallelPair, Span, TokenRange};
use spanproj::eval::span_f1;
use spanproj::generation::{match_and_filter, ngram_candidates, RawCandidate};
use spanproj::pipeline::{evaluate_results, CandidateSource, PairInputs, PairResult, PipelineConfig, Projector};
use spanproj::prompting::{build_prompt, render_output};
use spanproj::scoring::{normalized_sim, sym_sim, translation_prob, Cell, ScoreTable, SelfProbCache, Similarity, Text};
use spanproj::selection::{oracle_upper_bound, select_greedy, Assignment};
use spanproj::Method;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// ---------------------------------------------------------------- scoring math

fn geo_mean(probs: &[f64]) -> f64 {
    probs.iter().product::<f64>().powf(1.0 / probs.len() as f64)
}

fn scoring_math() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut max_err: f64 = 0.0;
    for k in 0..1000 {
        let (la, lb) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let a = words(&format!("a{k}_"), la).join(" ");
        let b = words(&format!("b{k}_"), lb).join(" ");
        let mut probs = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(0.05..=1.0)).collect() };
        let (p_ab, p_ba, p_aa, p_bb) = (probs(la), probs(lb), probs(la), probs(lb));
        let mut table = TableScorer::new();
        table.set(&a, &b, &p_ab);
        table.set(&b, &a, &p_ba);
        table.set(&a, &a, &p_aa);
        table.set(&b, &b, &p_bb);

        let oracle_p = geo_mean(&p_ab);
        let oracle_sim_ab = geo_mean(&p_ab) / geo_mean(&p_aa);
        let oracle_sim_ba = geo_mean(&p_ba) / geo_mean(&p_bb);
        let oracle_sym = (oracle_sim_ab + oracle_sim_ba) / 2.0;

        let (ta, tb) = (Text::new(&a, "en"), Text::new(&b, "de"));
        let got_p = translation_prob(ta, tb, &table).map_err(|e| e.to_string())?;
        let got_sim = normalized_sim(ta, tb, &table).map_err(|e| e.to_string())?;
        let got_sym = sym_sim(ta, tb, &table).map_err(|e| e.to_string())?.value;
        for (what, got, want) in [
            ("p", got_p, oracle_p),
            ("sim", got_sim, oracle_sim_ab),
            ("sym", got_sym, oracle_sym),
        ] {
            let err = (got - want).abs();
            max_err = max_err.max(err);
            ensure(err <= 1e-12, || format!("table {k}: {what} = {got}, oracle {want}"))?;
        }

        let self_sym = sym_sim(ta, ta, &table).map_err(|e| e.to_string())?.value;
        ensure(self_sym == 1.0, || format!("table {k}: sym(A,A) = {self_sym}"))?;
        let reverse = sym_sim(tb, ta, &table).map_err(|e| e.to_string())?.value;
        ensure(reverse == got_sym, || {
            format!("table {k}: sym(A,B) = {got_sym}, sym(B,A) = {reverse}")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {}", secs(elapsed)))?;
    Ok(format!(
        "1000 tables, max |err| {max_err:.1e}, sym(A,A)=1 and symmetry exact, {}",
        secs(elapsed)
    ))
}

fn constant_probability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut max_err: f64 = 0.0;
    for len in 1..=50 {
        for _ in 0..20 {
            let q: f64 = rng.random_range(1e-4..=1.0);
            let text = words("t", len).join(" ");
            let cond = words("c", rng.random_range(1..=50)).join(" ");
            let backend = TableScorer::new().with_default(q);
            let p = translation_prob(Text::new(&text, "en"), Text::new(&cond, "de"), &backend)
                .map_err(|e| e.to_string())?;
            let err = (p - q).abs();
            max_err = max_err.max(err);
            ensure(err <= 1e-12, || format!("length {len}, q={q}: p={p}"))?;
        }
    }
    Ok(format!("lengths 1..50 x 20 values of q, max |p-q| {max_err:.1e}"))
}

// ----------------------------------------------------------- synthetic corpus

struct Synthetic {
    map: CategoryMap,
    pairs: Vec<ParallelPair>,
    gold: Vec<LabeledSentence>,
    lexicon: LexiconScorer,
}

const CATEGORIES: [&str; 3] = ["Person", "Location", "Organization"];

/// Targets substitute `s<i>` with `t<i>` word by word. Words are distinct
/// within a sentence so the true substitution is the only perfect match.
fn synthetic_corpus(n: usize, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = 5000;
    let map = CategoryMap::new([("PER", "Person"), ("LOC", "Location"), ("ORG", "Organization")]).unwrap();
    let mut pairs = Vec::new();
    let mut gold = Vec::new();
    let mut used = BTreeSet::new();
    for i in 0..n {
        let len = rng.random_range(4..=12);
        let ids: Vec<usize> = sample(&mut rng, vocab, len).into_vec();
        used.extend(ids.iter().copied());
        let src: Vec<String> = ids.iter().map(|w| format!("s{w}")).collect();
        let tgt: Vec<String> = ids.iter().map(|w| format!("t{w}")).collect();
        let mut spans = Vec::new();
        let mut pos = 0;
        while pos < len {
            if rng.random_bool(0.35) {
                let l = rng.random_range(1..=3).min(len - pos);
                spans.push((pos, pos + l, CATEGORIES[rng.random_range(0..3)]));
                pos += l;
            }
            pos += 1;
        }
        let make = |tokens: &Vec<String>| {
            let s = spans
                .iter()
                .map(|&(a, b, c)| Span::new(tokens, a, b, c).unwrap())
                .collect();
            LabeledSentence::new(i.to_string(), tokens.clone(), s).unwrap()
        };
        pairs.push(ParallelPair::new(make(&src), tgt.clone()).unwrap());
        gold.push(make(&tgt));
    }
    let lexicon = LexiconScorer::new(used.iter().map(|w| (format!("s{w}"), format!("t{w}"))));
    Synthetic {
        map,
        pairs,
        gold,
        lexicon,
    }
}

/// Top beam fills every slot with the true substitution plus a neighbouring
/// token; the second beam is correct.
fn adversarial_generator(corpus: &Synthetic) -> ScriptedGenerator {
    let mut g = ScriptedGenerator::new();
    for (pair, gold) in corpus.pairs.iter().zip(&corpus.gold) {
        let prompt = build_prompt(pair, &corpus.map).unwrap();
        let n = pair.target_tokens.len();
        let correct: Vec<String> = gold.spans.iter().map(|s| s.surface.clone()).collect();
        let wrong: Vec<String> = gold
            .spans
            .iter()
            .map(|s| {
                let (a, b) = if s.end < n {
                    (s.start, s.end + 1)
                } else {
                    (s.start - 1, s.end)
                };
                pair.target_tokens[a..b].join(" ")
            })
            .collect();
        g.insert(
            prompt.text.clone(),
            vec![
                Beam::new(render_output(&prompt, &as_refs(&wrong)), -0.1),
                Beam::new(render_output(&prompt, &as_refs(&correct)), -0.7),
            ],
        );
    }
    g
}

fn as_refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn run_method(corpus: &Synthetic, method: Method, generator: &ScriptedGenerator) -> Result<Vec<PairResult>, String> {
    let cfg = PipelineConfig {
        method,
        n_beams: 8,
        candidates: CandidateSource::Ngram,
        ..Default::default()
    };
    let cache = SelfProbCache::new();
    let projector = Projector::new(cfg, &corpus.map)
        .with_generator(generator)
        .with_scorer(&corpus.lexicon)
        .with_cache(&cache);
    corpus
        .pairs
        .iter()
        .zip(&corpus.gold)
        .map(|(p, g)| {
            projector
                .project(
                    p,
                    PairInputs {
                        gold: Some(g),
                        alignment: None,
                    },
                )
                .map_err(|e| format!("{method} on pair {}: {e}", p.id))
        })
        .collect()
}

fn micro_f1(corpus: &Synthetic, results: &[PairResult]) -> Result<f64, String> {
    Ok(evaluate_results(results, &corpus.gold)
        .map_err(|e| e.to_string())?
        .micro_f1())
}

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let corpus = synthetic_corpus(500, 21);
    let generator = adversarial_generator(&corpus);
    let ngram = micro_f1(&corpus, &run_method(&corpus, Method::NgramSelect, &generator)?)?;
    let oracle = micro_f1(&corpus, &run_method(&corpus, Method::Oracle, &generator)?)?;
    let most_probable = micro_f1(&corpus, &run_method(&corpus, Method::MostProbable, &generator)?)?;
    let elapsed = start.elapsed();
    ensure(ngram == 1.0, || format!("ngram+select F1 = {ngram}"))?;
    ensure(oracle == 1.0, || format!("oracle F1 = {oracle}"))?;
    ensure(most_probable < ngram, || {
        format!("most-probable F1 = {most_probable}, not below {ngram}")
    })?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {}", secs(elapsed)))?;
    Ok(format!(
        "500 pairs: ngram+select {ngram:.4}, oracle {oracle:.4}, most-probable {most_probable:.4}, {}",
        secs(elapsed)
    ))
}

fn determinism() -> Outcome {
    let corpus = synthetic_corpus(60, 22);
    let generator = adversarial_generator(&corpus);
    let render = |method| -> Result<(String, String), String> {
        let results = run_method(&corpus, method, &generator)?;
        let projected: Vec<LabeledSentence> = results.iter().map(|r| r.projected.clone()).collect();
        let conll = write_conll(&projected, |c| corpus.map.raw_tag(c));
        let report = evaluate_results(&results, &corpus.gold).map_err(|e| e.to_string())?;
        Ok((conll, serde_json::to_string_pretty(&report.to_json()).unwrap()))
    };
    for method in [Method::TProjection, Method::NgramSelect, Method::MostProbable] {
        let first = render(method)?;
        let second = render(method)?;
        ensure(first == second, || format!("{method}: outputs differ between runs"))?;
    }
    Ok("pipeline CoNLL and report bytes identical across runs (binary-level check in the CLI tests)".into())
}

// ------------------------------------------------------------------ selection

fn cross_f1_ge(a: &Assignment, b: &Assignment, spans: &[Span], gold: &LabeledSentence) -> bool {
    let stats = |x: &Assignment| {
        let tp = x
            .assigned
            .iter()
            .filter(|s| {
                gold.spans
                    .iter()
                    .any(|g| g.range() == s.target && g.category == spans[s.source_span].category)
            })
            .count();
        (tp, x.assigned.len())
    };
    let g = gold.spans.len();
    let ((tp_a, p_a), (tp_b, p_b)) = (stats(a), stats(b));
    // F1 = 2tp / (P + G); compare by cross-multiplication.
    tp_a * (p_b + g) >= tp_b * (p_a + g)
}

fn independent_checks(a: &Assignment, n_spans: usize, target_len: usize) -> Result<(), String> {
    let mut counts = vec![0; n_spans];
    for s in &a.assigned {
        counts[s.source_span] += 1;
    }
    for (s, _) in &a.unassigned {
        counts[*s] += 1;
    }
    if let Some(i) = counts.iter().position(|&c| c != 1) {
        return Err(format!("source span {i} appears {} times", counts[i]));
    }
    let mut covered = vec![false; target_len];
    for s in &a.assigned {
        for c in &mut covered[s.target.start..s.target.end] {
            if *c {
                return Err(format!("overlap at {:?}", s.target));
            }
            *c = true;
        }
    }
    Ok(())
}

/// Greedy selection restated over all (candidate, free occurrence) pairs.
fn naive_greedy(
    spans: &[Span],
    tables: &[ScoreTable],
    groups: &[spanproj::generation::CandidateGroup],
) -> Vec<(usize, TokenRange, String)> {
    let mut taken: Vec<TokenRange> = Vec::new();
    let mut out = Vec::new();
    for (i, span) in spans.iter().enumerate() {
        let Some(table) = tables.iter().find(|t| t.category == span.category) else {
            continue;
        };
        let Some(group) = groups.iter().find(|g| g.category == span.category) else {
            continue;
        };
        let row = table.span_indices.iter().position(|&s| s == i).unwrap();
        let mut options = Vec::new();
        for (j, text) in table.candidates.iter().enumerate() {
            let Cell::Valid(sim) = &table.cells[row][j] else {
                continue;
            };
            let cand = group.candidates.iter().find(|c| &c.text == text).unwrap();
            for occ in &cand.occurrences {
                if taken.iter().all(|t| occ.end <= t.start || t.end <= occ.start) {
                    options.push((sim.value(), cand.best_beam_logprob, *occ, text.clone()));
                }
            }
        }
        options.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.total_cmp(&a.1))
                .then(a.2.start.cmp(&b.2.start))
                .then(a.2.len().cmp(&b.2.len()))
                .then(a.3.cmp(&b.3))
        });
        if let Some((_, _, occ, text)) = options.into_iter().next() {
            taken.push(occ);
            out.push((i, occ, text));
        }
    }
    out
}

fn selection_safety() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let vocab = ["a", "b", "c", "d"];
    let cats = ["X", "Y"];
    let mut strict = 0;
    for inst in 0..10_000 {
        let n = rng.random_range(1..=10);
        let target: Vec<String> = (0..n).map(|_| vocab[rng.random_range(0..4)].to_string()).collect();
        let spans: Vec<Span> = (0..rng.random_range(1..=5))
            .map(|_| Span {
                start: 0,
                end: 1,
                category: cats[rng.random_range(0..2)].into(),
                surface: String::new(),
            })
            .collect();

        let mut raw = Vec::new();
        for cat in cats {
            for _ in 0..rng.random_range(0..=6) {
                let s = rng.random_range(0..n);
                let e = rng.random_range(s + 1..=n.min(s + 3));
                raw.push(RawCandidate {
                    text: target[s..e].join(" "),
                    category: cat.into(),
                    logprob: -(rng.random_range(0..3) as f64),
                });
            }
            if rng.random_bool(0.2) {
                raw.push(RawCandidate {
                    text: "zz".into(),
                    category: cat.into(),
                    logprob: 0.0,
                });
            }
        }
        let groups = match_and_filter(raw, &target);
        let tables: Vec<ScoreTable> = groups
            .iter()
            .map(|g| {
                let span_indices: Vec<usize> = (0..spans.len()).filter(|&i| spans[i].category == g.category).collect();
                let cells = span_indices
                    .iter()
                    .map(|_| {
                        g.candidates
                            .iter()
                            .map(|_| {
                                if rng.random_bool(0.1) {
                                    Cell::Invalid("degenerate".into())
                                } else {
                                    Cell::Valid(Similarity::Cosine {
                                        value: [0.2, 0.5, 0.8][rng.random_range(0..3)],
                                    })
                                }
                            })
                            .collect()
                    })
                    .collect();
                ScoreTable {
                    category: g.category.clone(),
                    span_indices,
                    candidates: g.candidates.iter().map(|c| c.text.clone()).collect(),
                    cells,
                }
            })
            .collect();

        let mut gold_spans: Vec<Span> = Vec::new();
        for _ in 0..rng.random_range(0..=4) {
            let range = match groups.get(rng.random_range(0..groups.len().max(1))) {
                Some(g) if !g.candidates.is_empty() && rng.random_bool(0.7) => {
                    let c = &g.candidates[rng.random_range(0..g.candidates.len())];
                    c.occurrences[rng.random_range(0..c.occurrences.len())]
                }
                _ => {
                    let s = rng.random_range(0..n);
                    TokenRange::new(s, rng.random_range(s + 1..=n))
                }
            };
            if gold_spans.iter().all(|g| !g.range().overlaps(&range)) {
                gold_spans.push(Span::new(&target, range.start, range.end, cats[rng.random_range(0..2)]).unwrap());
            }
        }
        let gold = LabeledSentence::from_unsorted("g", target.clone(), gold_spans).unwrap();

        let greedy = select_greedy(&spans, &tables, &groups);
        let oracle = oracle_upper_bound(&spans, &tables, &groups, &gold);
        for (name, a) in [("greedy", &greedy), ("oracle", &oracle)] {
            independent_checks(a, spans.len(), n).map_err(|e| format!("instance {inst}, {name}: {e}"))?;
            a.check(spans.len(), n)
                .map_err(|e| format!("instance {inst}, {name}: {e}"))?;
        }
        let got: Vec<(usize, TokenRange, String)> = greedy
            .assigned
            .iter()
            .map(|a| (a.source_span, a.target, a.text.clone()))
            .collect();
        let want = naive_greedy(&spans, &tables, &groups);
        ensure(got == want, || {
            format!("instance {inst}: greedy {got:?}, restated {want:?}")
        })?;
        ensure(cross_f1_ge(&oracle, &greedy, &spans, &gold), || {
            format!("instance {inst}: oracle F1 below greedy")
        })?;
        if !cross_f1_ge(&greedy, &oracle, &spans, &gold) {
            strict += 1;
        }
    }
    Ok(format!(
        "10000 instances: no overlap, no double assignment, greedy equals restated rule, oracle >= greedy (strictly on {strict}), {}",
        secs(start.elapsed())
    ))
}

fn ngram_completeness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for inst in 0..1000 {
        let n = rng.random_range(1..=20);
        let v = rng.random_range(2..=8);
        let tokens: Vec<String> = (0..n).map(|_| format!("w{}", rng.random_range(0..v))).collect();
        let groups = ngram_candidates(&tokens, ["X"]);
        let group = &groups[0];
        let windows: usize = group.candidates.iter().map(|c| c.occurrences.len()).sum();
        ensure(windows == n * (n + 1) / 2, || {
            format!("sentence {inst}: {windows} windows, expected {}", n * (n + 1) / 2)
        })?;
        for s in 0..n {
            for e in s + 1..=n {
                let surface = tokens[s..e].join(" ");
                let hits: Vec<_> = group
                    .candidates
                    .iter()
                    .filter(|c| c.occurrences.contains(&TokenRange::new(s, e)))
                    .collect();
                ensure(hits.len() == 1 && hits[0].text == surface, || {
                    format!(
                        "sentence {inst}: window [{s},{e}) {surface:?} found {} times",
                        hits.len()
                    )
                })?;
            }
        }
    }
    Ok("1000 sentences: every window present exactly once, n(n+1)/2 occurrences each".into())
}

// ------------------------------------------------------------- BIO and span F1

const RAW_TAGS: [&str; 3] = ["PER", "LOC", "MISC"];

fn random_bio(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut tags: Vec<String> = Vec::with_capacity(n);
    for i in 0..n {
        let prev = tags.last().and_then(|t: &String| t.get(2..)).map(str::to_string);
        let r = rng.random_range(0..10);
        let tag = match (r, prev) {
            (0..=4, _) => "O".to_string(),
            (5..=7, Some(cat)) if i > 0 => format!("I-{cat}"),
            _ => format!("B-{}", RAW_TAGS[rng.random_range(0..3)]),
        };
        tags.push(tag);
    }
    tags
}

fn bio_text(tokens: &[String], tags: &[String]) -> String {
    tokens.iter().zip(tags).map(|(t, g)| format!("{t} {g}\n")).collect()
}

/// Chunks `(start, end, type)` of a well-formed BIO sequence.
fn chunks(tags: &[String]) -> BTreeSet<(usize, usize, String)> {
    let mut out = BTreeSet::new();
    let mut open: Option<(usize, String)> = None;
    for (i, tag) in tags.iter().chain(std::iter::once(&"O".to_string())).enumerate() {
        let continues = matches!((&open, tag.strip_prefix("I-")), (Some((_, c)), Some(t)) if c == t);
        if !continues {
            if let Some((s, c)) = open.take() {
                out.insert((s, i, c));
            }
            if let Some(t) = tag.strip_prefix("B-") {
                open = Some((i, t.to_string()));
            }
        }
    }
    out
}

fn bio_roundtrip_and_f1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let map = CategoryMap::new(RAW_TAGS.map(|t| (t, t))).unwrap();
    let mut text = String::new();
    let mut pred_text = String::new();
    let mut bio_counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for i in 0..1000 {
        let n = rng.random_range(1..=15);
        let tokens: Vec<String> = (0..n).map(|j| format!("tok{}_{j}", rng.random_range(0..50))).collect();
        let gold_tags = random_bio(&mut rng, n);
        let pred_tags = random_bio(&mut rng, n);
        if i > 0 {
            text.push('\n');
            pred_text.push('\n');
        }
        text.push_str(&bio_text(&tokens, &gold_tags));
        pred_text.push_str(&bio_text(&tokens, &pred_tags));

        let (g, p) = (chunks(&gold_tags), chunks(&pred_tags));
        for c in p.iter() {
            let e = bio_counts.entry(c.2.clone()).or_default();
            if g.contains(c) {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
        for c in g.difference(&p) {
            bio_counts.entry(c.2.clone()).or_default().2 += 1;
        }
    }
    let gold = parse_conll(&text, &map).map_err(|e| e.to_string())?;
    let pred = parse_conll(&pred_text, &map).map_err(|e| e.to_string())?;
    ensure(gold.len() == 1000, || format!("parsed {} sentences", gold.len()))?;
    let written = write_conll(&gold, |c| map.raw_tag(c));
    ensure(written == text, || {
        "gold CoNLL does not round-trip byte for byte".into()
    })?;
    let reparsed = parse_conll(&written, &map).map_err(|e| e.to_string())?;
    ensure(reparsed == gold, || "reparsed sentences differ".into())?;

    let report = span_f1(&pred, &gold).map_err(|e| e.to_string())?;
    let ours: BTreeMap<String, (usize, usize, usize)> = report
        .categories
        .iter()
        .map(|(c, n)| (c.clone(), (n.tp, n.fp, n.fn_)))
        .collect();
    ensure(ours == bio_counts, || {
        format!("span_f1 {ours:?} vs BIO scorer {bio_counts:?}")
    })?;
    let m = report.micro();
    Ok(format!(
        "1000 sentences round-trip byte-exact; tp/fp/fn equal to chunk-level scorer (micro {}/{}/{})",
        m.tp, m.fp, m.fn_
    ))
}

// ------------------------------------------------------------------ alignment

fn alignment_hulls() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for inst in 0..1000 {
        let (ns, nt) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let links: BTreeSet<(usize, usize)> = (0..rng.random_range(0..=2 * ns))
            .map(|_| (rng.random_range(0..ns), rng.random_range(0..nt)))
            .collect();
        let mut spans = Vec::new();
        let mut pos = 0;
        while pos < ns {
            let l = rng.random_range(1..=3).min(ns - pos);
            if rng.random_bool(0.5) {
                spans.push(Span {
                    start: pos,
                    end: pos + l,
                    category: "X".into(),
                    surface: String::new(),
                });
            }
            pos += l;
        }
        let map = AlignmentMap::new(links.iter().copied());
        let p = project_via_alignments(&spans, &map, nt).map_err(|e| e.to_string())?;
        independent_checks(&p.assignment, spans.len(), nt).map_err(|e| format!("link set {inst}: {e}"))?;
        for (i, span) in spans.iter().enumerate() {
            let mut lo = usize::MAX;
            let mut hi = 0;
            let mut hit = BTreeSet::new();
            for &(s, t) in &links {
                if span.start <= s && s < span.end {
                    lo = lo.min(t);
                    hi = hi.max(t + 1);
                    hit.insert(t);
                }
            }
            let diag = p.diagnostics.iter().find(|d| d.source_span == i);
            let assigned = p.assignment.assigned.iter().find(|a| a.source_span == i);
            if hit.is_empty() {
                ensure(diag.is_none() && assigned.is_none(), || {
                    format!("link set {inst}: span {i} has no links")
                })?;
                continue;
            }
            let diag = diag.ok_or_else(|| format!("link set {inst}: span {i} has no diagnostic"))?;
            ensure(diag.hull == TokenRange::new(lo, hi), || {
                format!(
                    "link set {inst}: span {i} hull {:?}, brute force [{lo},{hi})",
                    diag.hull
                )
            })?;
            ensure(diag.wide == (hi - lo > 2 * hit.len()), || {
                format!("link set {inst}: wide flag")
            })?;
            if let Some(a) = assigned {
                ensure(lo <= a.target.start && a.target.end <= hi, || {
                    format!("link set {inst}: span {i} assigned outside its hull")
                })?;
            }
            if spans.len() == 1 {
                ensure(assigned.map(|a| a.target) == Some(diag.hull), || {
                    format!("link set {inst}: single span not projected to its hull")
                })?;
            }
        }
    }
    for inst in 0..200 {
        let n = rng.random_range(1..=20);
        let tokens = words("x", n);
        let mut spans = Vec::new();
        let mut pos = 0;
        while pos < n {
            let l = rng.random_range(1..=4).min(n - pos);
            if rng.random_bool(0.6) {
                spans.push(Span::new(&tokens, pos, pos + l, "X").unwrap());
            }
            pos += l;
        }
        let map = AlignmentMap::new((0..n).map(|i| (i, i)));
        let p = project_via_alignments(&spans, &map, n).map_err(|e| e.to_string())?;
        let got: Vec<TokenRange> = p.assignment.ranges().collect();
        let want: Vec<TokenRange> = spans.iter().map(Span::range).collect();
        ensure(got == want && p.assignment.unassigned.is_empty(), || {
            format!("identity {inst}: {got:?} vs {want:?}")
        })?;
    }
    Ok("1000 random link sets match min/max hulls; 200 identity alignments project exactly".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 8] = [
        ("scoring math vs linear-space oracle", scoring_math),
        ("constant token probability invariance", constant_probability),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("selection safety and oracle dominance", selection_safety),
        ("n-gram completeness", ngram_completeness),
        ("BIO round-trip and span F1 oracle", bio_roundtrip_and_f1),
        ("alignment hulls", alignment_hulls),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
