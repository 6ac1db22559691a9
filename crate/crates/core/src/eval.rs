//! Exact-match and sub-token F1 metrics.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Out-of-vocabulary label marker.
pub const UNK: &str = "<UNK>";
const UNK_SUBTOKEN: &str = "<unk>";

/// Lowercases and drops every non-alphabetic character.
pub fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Normalized equality; a gold label containing `<UNK>` never matches.
pub fn exact_match(pred: &str, gold: &str) -> bool {
    if gold.contains(UNK) || pred.contains(UNK) {
        return false;
    }
    normalize(pred) == normalize(gold)
}

/// Splits a name at underscores, digits, other non-letters and case
/// boundaries (`parseHTTPResponse` -> parse, http, response). `<UNK>` stays a
/// single opaque piece.
pub fn subtokens(name: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (i, chunk) in name.split(UNK).enumerate() {
        if i > 0 {
            out.push(UNK_SUBTOKEN.to_string());
        }
        split_chunk(chunk, &mut out);
    }
    out
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let mut current = String::new();
    let flush = |current: &mut String, out: &mut Vec<String>| {
        if !current.is_empty() {
            out.push(current.to_lowercase());
            current.clear();
        }
    };
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphabetic() {
            flush(&mut current, out);
            continue;
        }
        if c.is_uppercase() && !current.is_empty() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev.is_lowercase() || (prev.is_uppercase() && next_lower) {
                flush(&mut current, out);
            }
        }
        current.push(c);
    }
    flush(&mut current, out);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Multiset precision/recall/F1 over sub-tokens. Gold `<UNK>` pieces are
/// never matched.
pub fn subtoken_f1(pred: &str, gold: &str) -> F1 {
    let pred = subtokens(pred);
    let gold = subtokens(gold);
    let mut available: HashMap<&str, usize> = HashMap::new();
    for g in gold.iter().filter(|g| *g != UNK_SUBTOKEN) {
        *available.entry(g.as_str()).or_default() += 1;
    }
    let mut matched = 0usize;
    for p in &pred {
        if let Some(n) = available.get_mut(p.as_str()) {
            if *n > 0 {
                *n -= 1;
                matched += 1;
            }
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(matched, pred.len());
    let recall = ratio(matched, gold.len());
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    F1 {
        precision,
        recall,
        f1,
    }
}

/// Aggregate over instances. Precision, recall and F1 are per-instance means.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub exact_matches: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub unk_gold: usize,
    /// Instances with no prediction at all (no evidence); counted as misses.
    pub no_prediction: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Evaluator {
    total: usize,
    exact: usize,
    precision: f64,
    recall: f64,
    f1: f64,
    unk_gold: usize,
    no_prediction: usize,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one instance. `pred = None` is an automatic miss.
    pub fn add(&mut self, pred: Option<&str>, gold: &str) -> bool {
        self.total += 1;
        if gold.contains(UNK) {
            self.unk_gold += 1;
        }
        let Some(pred) = pred else {
            self.no_prediction += 1;
            return false;
        };
        let hit = exact_match(pred, gold);
        if hit {
            self.exact += 1;
        }
        let scores = subtoken_f1(pred, gold);
        self.precision += scores.precision;
        self.recall += scores.recall;
        self.f1 += scores.f1;
        hit
    }

    pub fn report(&self) -> EvalReport {
        let mean = |x: f64| if self.total == 0 { 0.0 } else { x / self.total as f64 };
        EvalReport {
            total: self.total,
            exact_matches: self.exact,
            accuracy: mean(self.exact as f64),
            precision: mean(self.precision),
            recall: mean(self.recall),
            f1: mean(self.f1),
            unk_gold: self.unk_gold,
            no_prediction: self.no_prediction,
        }
    }
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        format!(
            "total\texact_matches\taccuracy\tprecision\trecall\tf1\tunk_gold\tno_prediction\n{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\n",
            self.total,
            self.exact_matches,
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.unk_gold,
            self.no_prediction
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "instances      {}", self.total)?;
        writeln!(
            f,
            "exact match    {} ({:.2}%)",
            self.exact_matches,
            100.0 * self.accuracy
        )?;
        writeln!(
            f,
            "sub-token P/R/F1  {:.4} / {:.4} / {:.4}",
            self.precision, self.recall, self.f1
        )?;
        writeln!(f, "UNK gold       {}", self.unk_gold)?;
        write!(f, "no prediction  {}", self.no_prediction)
    }
}
