//! Exact-match span precision / recall / F1.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::LabeledSentence;
use crate::error::EvalError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// One row of the report, as emitted in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub category: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl ScoreRow {
    fn new(category: &str, c: Counts) -> Self {
        ScoreRow {
            category: category.to_string(),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            p: c.precision(),
            r: c.recall(),
            f1: c.f1(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub categories: BTreeMap<String, Counts>,
    pub sentences: usize,
    /// Unassigned source spans by reason, when the predictions come from a
    /// projection run.
    pub unassigned: BTreeMap<String, usize>,
}

impl EvalReport {
    pub fn micro(&self) -> Counts {
        let mut total = Counts::default();
        for c in self.categories.values() {
            total.add(*c);
        }
        total
    }

    pub fn micro_f1(&self) -> f64 {
        self.micro().f1()
    }

    /// Combines reports over disjoint sets of sentences.
    pub fn merge(&mut self, other: &EvalReport) {
        for (cat, c) in &other.categories {
            self.categories.entry(cat.clone()).or_default().add(*c);
        }
        self.sentences += other.sentences;
        for (reason, n) in &other.unassigned {
            *self.unassigned.entry(reason.clone()).or_default() += n;
        }
    }

    pub fn rows(&self) -> Vec<ScoreRow> {
        let mut rows: Vec<ScoreRow> = self.categories.iter().map(|(cat, c)| ScoreRow::new(cat, *c)).collect();
        rows.push(ScoreRow::new("micro", self.micro()));
        rows
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "categories": self.rows().into_iter().filter(|r| r.category != "micro").collect::<Vec<_>>(),
            "micro": ScoreRow::new("micro", self.micro()),
            "sentences": self.sentences,
            "unassigned": self.unassigned,
        })
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self.categories.keys().map(String::len).max().unwrap_or(0).max(8);
        let _ = writeln!(
            out,
            "{:<width$} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7}",
            "category", "tp", "fp", "fn", "p", "r", "f1"
        );
        for row in self.rows() {
            let _ = writeln!(
                out,
                "{:<width$} {:>6} {:>6} {:>6} {:>7.4} {:>7.4} {:>7.4}",
                row.category, row.tp, row.fp, row.fn_, row.p, row.r, row.f1
            );
        }
        let _ = writeln!(out, "sentences: {}", self.sentences);
        for (reason, n) in &self.unassigned {
            let _ = writeln!(out, "unassigned {reason}: {n}");
        }
        out
    }
}

/// Span-level scores: a predicted span is a true positive iff a gold span
/// has the same start, end and category.
pub fn span_f1(predicted: &[LabeledSentence], gold: &[LabeledSentence]) -> Result<EvalReport, EvalError> {
    if predicted.len() != gold.len() {
        return Err(EvalError::CountMismatch {
            predicted: predicted.len(),
            gold: gold.len(),
        });
    }
    let mut report = EvalReport {
        sentences: gold.len(),
        ..Default::default()
    };
    for (index, (p, g)) in predicted.iter().zip(gold).enumerate() {
        if p.id != g.id {
            return Err(EvalError::IdMismatch {
                index,
                predicted: p.id.clone(),
                gold: g.id.clone(),
            });
        }
        let gold_set: HashSet<(usize, usize, &str)> =
            g.spans.iter().map(|s| (s.start, s.end, s.category.as_str())).collect();
        let pred_set: HashSet<(usize, usize, &str)> =
            p.spans.iter().map(|s| (s.start, s.end, s.category.as_str())).collect();
        for s in &p.spans {
            let c = report.categories.entry(s.category.clone()).or_default();
            if gold_set.contains(&(s.start, s.end, s.category.as_str())) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for s in &g.spans {
            let c = report.categories.entry(s.category.clone()).or_default();
            if !pred_set.contains(&(s.start, s.end, s.category.as_str())) {
                c.fn_ += 1;
            }
        }
    }
    Ok(report)
}

/// Candidate counts for a sweep must be positive, strictly ascending.
pub fn validate_counts(counts: &[usize]) -> Result<(), EvalError> {
    let ok = !counts.is_empty() && counts[0] > 0 && counts.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(EvalError::BadCounts(counts.to_vec()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub count: usize,
    pub micro_f1: f64,
    pub report: EvalReport,
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("candidates  micro_f1\n");
    for r in rows {
        let _ = writeln!(out, "{:>10}  {:.4}", r.count, r.micro_f1);
    }
    out
}
