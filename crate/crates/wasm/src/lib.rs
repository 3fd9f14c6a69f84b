//! Browser bindings for the demo page in `www/`.
//!
//! Every export takes plain strings (or number arrays) and returns a JSON
//! string. The `*_json` functions hold the logic so they can be tested
//! natively; the `#[wasm_bindgen]` wrappers only convert errors.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use spanproj::backend::LexiconScorer;
use spanproj::corpus::{parse_conll, write_conll};
use spanproj::generation::{find_occurrences, ngram_candidates};
use spanproj::prompting::{build_prompt, parse_beam};
use spanproj::scoring::{mean_logprob, Scorer, SimScore};
use spanproj::selection::select_greedy;
use spanproj::{CategoryMap, ParallelPair};

const SRC_LANG: &str = "src";
const TGT_LANG: &str = "tgt";
const TOP_CANDIDATES: usize = 5;

fn load_pair(source_conll: &str, target: &str, categories: &str) -> Result<(CategoryMap, ParallelPair), String> {
    let mut map = if categories.trim().is_empty() {
        CategoryMap::default()
    } else {
        CategoryMap::parse(categories).map_err(|e| e.to_string())?
    };
    let mut sentences = parse_conll(source_conll, &map).map_err(|e| e.to_string())?;
    if sentences.len() != 1 {
        return Err(format!("expected one source sentence, got {}", sentences.len()));
    }
    let source = sentences.remove(0);
    let unmapped: Vec<String> = source
        .spans
        .iter()
        .map(|s| s.category.clone())
        .filter(|c| !map.contains_name(c))
        .collect();
    map.extend_identity(unmapped.iter().map(String::as_str))
        .map_err(|e| e.to_string())?;
    let tokens = target.split_whitespace().map(String::from).collect();
    let pair = ParallelPair::new(source, tokens).map_err(|e| e.to_string())?;
    Ok((map, pair))
}

/// The generator prompt for a source sentence (CoNLL) and its translation.
pub fn prompt_json(source_conll: &str, target: &str, categories: &str) -> Result<String, String> {
    let (map, pair) = load_pair(source_conll, target, categories)?;
    let prompt = build_prompt(&pair, &map).map_err(|e| e.to_string())?;
    let slots: Vec<Value> = prompt
        .slots
        .iter()
        .map(|s| {
            json!({
                "slot": s.index,
                "category": s.category,
                "source": pair.source.spans[s.source_span].surface,
            })
        })
        .collect();
    Ok(json!({ "prompt": prompt.text, "slots": slots }).to_string())
}

/// Parses one generated output against the prompt's slots and locates each
/// filler in the target.
pub fn parse_beam_json(source_conll: &str, target: &str, categories: &str, beam: &str) -> Result<String, String> {
    let (map, pair) = load_pair(source_conll, target, categories)?;
    let prompt = build_prompt(&pair, &map).map_err(|e| e.to_string())?;
    let slots = parse_beam(beam, &prompt, 0.0).map_err(|e| format!("malformed output: {e}"))?;
    let filled: Vec<Value> = slots
        .iter()
        .map(|s| {
            let (occ, folded) = find_occurrences(&s.candidate_text, &pair.target_tokens);
            json!({
                "slot": s.slot,
                "category": prompt.slots[s.slot].category,
                "text": s.candidate_text,
                "occurrences": occ.iter().map(|o| [o.start, o.end]).collect::<Vec<_>>(),
                "case_folded": folded,
            })
        })
        .collect();
    Ok(json!({ "slots": filled }).to_string())
}

/// N-gram candidates ranked with a word-list scorer, then greedy selection.
pub fn project_json(source_conll: &str, target: &str, categories: &str, lexicon: &str) -> Result<String, String> {
    let (map, pair) = load_pair(source_conll, target, categories)?;
    let lexicon = LexiconScorer::parse(lexicon).map_err(|e| e.to_string())?;
    let spans = &pair.source.spans;
    let groups = ngram_candidates(&pair.target_tokens, spans.iter().map(|s| s.category.as_str()));
    let tables = Scorer::new(&lexicon, SRC_LANG, TGT_LANG)
        .score_pair(spans, &groups)
        .map_err(|e| e.to_string())?;
    let assignment = select_greedy(spans, &tables, &groups);
    let projected = assignment.to_sentence(&pair).map_err(|e| e.to_string())?;

    let ranked: Vec<Value> = spans
        .iter()
        .enumerate()
        .map(|(i, span)| {
            let mut row: Vec<(&str, f64)> = tables
                .iter()
                .find(|t| t.category == span.category)
                .and_then(|t| Some(t.candidates.iter().map(String::as_str).zip(t.row(i)?.iter())))
                .into_iter()
                .flatten()
                .filter_map(|(text, cell)| Some((text, cell.score()?)))
                .collect();
            row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
            row.truncate(TOP_CANDIDATES);
            json!({
                "span": i,
                "category": span.category,
                "source": span.surface,
                "top": row.iter().map(|(t, s)| json!({"text": t, "score": s})).collect::<Vec<_>>(),
            })
        })
        .collect();
    let assigned: Vec<Value> = assignment
        .assigned
        .iter()
        .map(|a| {
            json!({
                "span": a.source_span,
                "target": [a.target.start, a.target.end],
                "text": a.text,
                "score": a.score.map(|s| s.value()),
            })
        })
        .collect();
    let unassigned: Vec<Value> = assignment
        .unassigned
        .iter()
        .map(|(i, reason)| json!({"span": i, "reason": reason.to_string()}))
        .collect();
    Ok(json!({
        "conll": write_conll(std::slice::from_ref(&projected), |c| map.raw_tag(c)),
        "assigned": assigned,
        "unassigned": unassigned,
        "candidates": ranked,
    })
    .to_string())
}

/// Symmetric similarity from per-token probabilities of the four directions.
pub fn sym_sim_json(p_ab: &[f64], p_ba: &[f64], p_aa: &[f64], p_bb: &[f64]) -> Result<String, String> {
    let log = |name: &str, probs: &[f64]| -> Result<f64, String> {
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(format!("{name}: token probability {p} outside (0, 1]"));
        }
        let lps: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        mean_logprob(&lps).map_err(|e| format!("{name}: {e}"))
    };
    let (ab, ba, aa, bb) = (
        log("p(A|B)", p_ab)?,
        log("p(B|A)", p_ba)?,
        log("p(A|A)", p_aa)?,
        log("p(B|B)", p_bb)?,
    );
    let s = SimScore::from_logs(ab, ba, aa, bb).map_err(|e| e.to_string())?;
    Ok(json!({
        "p_a_given_b": s.p_a_given_b,
        "p_b_given_a": s.p_b_given_a,
        "p_a_given_a": s.p_a_given_a,
        "p_b_given_b": s.p_b_given_b,
        "sim_a_given_b": (ab - aa).exp(),
        "sim_b_given_a": (ba - bb).exp(),
        "value": s.value,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn prompt(source_conll: &str, target: &str, categories: &str) -> Result<String, JsError> {
    prompt_json(source_conll, target, categories).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = parseBeam)]
pub fn parse_beam_js(source_conll: &str, target: &str, categories: &str, beam: &str) -> Result<String, JsError> {
    parse_beam_json(source_conll, target, categories, beam).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn project(source_conll: &str, target: &str, categories: &str, lexicon: &str) -> Result<String, JsError> {
    project_json(source_conll, target, categories, lexicon).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = symSim)]
pub fn sym_sim_js(p_ab: &[f64], p_ba: &[f64], p_aa: &[f64], p_bb: &[f64]) -> Result<String, JsError> {
    sym_sim_json(p_ab, p_ba, p_aa, p_bb).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SOURCE: &str = "Obama B-PER\nwent O\nto O\nNew B-LOC\nYork I-LOC\n";
    const TARGET: &str = "Obama fue a Nueva York";
    const MAP: &str = "PER Person\nLOC Location\n";

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn prompt_has_one_block_per_span() {
        let v = parse(&prompt_json(SOURCE, TARGET, MAP).unwrap());
        assert_eq!(
            v["prompt"],
            "Obama fue a Nueva York <Person>None</Person> <Location>None</Location>"
        );
        assert_eq!(v["slots"][1]["source"], "New York");
    }

    #[test]
    fn beam_is_parsed_and_located() {
        let beam = "<Person>Obama</Person> <Location>nueva york</Location>";
        let v = parse(&parse_beam_json(SOURCE, TARGET, MAP, beam).unwrap());
        assert_eq!(v["slots"][1]["occurrences"][0], json!([3, 5]));
        assert_eq!(v["slots"][1]["case_folded"], true);
        let err = parse_beam_json(SOURCE, TARGET, MAP, "<Person><Location>x</Location></Person>").unwrap_err();
        assert!(err.starts_with("malformed"));
    }

    #[test]
    fn projection_with_lexicon() {
        let lexicon = "obama obama\nnew nueva\nyork york\n";
        let v = parse(&project_json(SOURCE, TARGET, MAP, lexicon).unwrap());
        assert_eq!(v["conll"], "Obama B-PER\nfue O\na O\nNueva B-LOC\nYork I-LOC\n");
        assert_eq!(v["candidates"][1]["top"][0]["text"], "Nueva York");
        assert_eq!(v["candidates"][1]["top"][0]["score"], 1.0);
    }

    #[test]
    fn identity_map_when_none_given() {
        let v = parse(&prompt_json(SOURCE, TARGET, "").unwrap());
        assert!(v["prompt"]
            .as_str()
            .unwrap()
            .ends_with("<PER>None</PER> <LOC>None</LOC>"));
    }

    #[test]
    fn sym_sim_components() {
        let v = parse(&sym_sim_json(&[0.5, 0.5], &[0.3], &[1.0, 1.0], &[0.6]).unwrap());
        assert!((v["sim_a_given_b"].as_f64().unwrap() - 0.5).abs() < 1e-12);
        assert!((v["sim_b_given_a"].as_f64().unwrap() - 0.5).abs() < 1e-12);
        assert!((v["value"].as_f64().unwrap() - 0.5).abs() < 1e-12);
        assert!(sym_sim_json(&[0.0], &[1.0], &[1.0], &[1.0]).is_err());
        assert!(sym_sim_json(&[], &[1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn errors_are_messages() {
        assert!(prompt_json("", TARGET, MAP)
            .unwrap_err()
            .contains("one source sentence"));
        assert!(prompt_json(SOURCE, "", MAP).is_err());
    }
}
