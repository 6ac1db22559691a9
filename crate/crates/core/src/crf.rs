//! CRF-style structured prediction over merged program elements.
//!
//! Factors are keyed by abstract paths. A path between two different elements
//! is a pairwise factor, a path between two occurrences of one element is a
//! unary factor. Factor scores are smoothed log-frequencies:
//!
//! ```text
//! pair(ls, p, lf) = ln(count(ls, p, lf) + k) - ln(count(p) + k |W|^2)
//! unary(l, p)     = ln(count(l, p) + k)      - ln(count(p) + k |W|)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::abstraction::{abstract_path, AbstractionKind};
use crate::escape::{escape_value, unescape};
use crate::eval::UNK;
use crate::paths::PathContext;
use crate::tasks::{targets, ElementId, TaskError, TaskKind};
use crate::tree::{NodeId, SyntaxTree};

/// Largest assignment space exact inference will enumerate.
pub const EXACT_LIMIT: u64 = 1_000_000;
pub const MAX_SWEEPS: usize = 100;
pub const FALLBACK_CANDIDATES: usize = 100;
/// Score differences up to this size count as ties.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CrfError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("context references node {0}, which is not in the tree")]
    UnknownNode(NodeId),
    #[error("no labeled variables to train on")]
    EmptyTraining,
    #[error("no label for element {0}")]
    MissingLabel(ElementId),
    #[error("element {0} is not a variable of the graph")]
    UnknownElement(ElementId),
    #[error("exact inference over {0} assignments exceeds the limit")]
    TooLarge(u128),
    #[error("label vocabulary is empty")]
    EmptyVocabulary,
    #[error("scores file line {line}: {problem}")]
    Format { line: usize, problem: String },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct PairwiseFactor {
    pub a: ElementId,
    pub b: ElementId,
    pub path: String,
    /// The path reads the same in both directions, so the endpoint labels are
    /// unordered.
    pub symmetric: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct UnaryFactor {
    pub element: ElementId,
    pub path: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FactorGraph {
    pub variables: Vec<ElementId>,
    pub known: BTreeMap<ElementId, String>,
    pub pairwise: Vec<PairwiseFactor>,
    pub unary: Vec<UnaryFactor>,
    /// Gold labels of the variables, when known.
    pub gold: BTreeMap<ElementId, String>,
}

pub type Labeling = BTreeMap<ElementId, String>;

impl FactorGraph {
    pub fn is_variable(&self, e: ElementId) -> bool {
        self.variables.binary_search(&e).is_ok()
    }

    fn label_of<'a>(&'a self, e: ElementId, y: &'a Labeling) -> Result<&'a str, CrfError> {
        self.known
            .get(&e)
            .or_else(|| y.get(&e))
            .map(String::as_str)
            .ok_or(CrfError::MissingLabel(e))
    }
}

/// Puts a pairwise factor in canonical orientation: the smaller of the two
/// path encodings reads from `a` to `b`.
fn canonical_pair(a: ElementId, b: ElementId, forward: String, backward: String) -> PairwiseFactor {
    match forward.cmp(&backward) {
        std::cmp::Ordering::Less => PairwiseFactor { a, b, path: forward, symmetric: false },
        std::cmp::Ordering::Greater => PairwiseFactor { a: b, b: a, path: backward, symmetric: false },
        std::cmp::Ordering::Equal => PairwiseFactor { a, b, path: forward, symmetric: true },
    }
}

/// Builds the factor graph of one tree. Target elements of `task` become
/// variables; every other terminal is a known element labeled by its value.
/// Contexts ending at a nonterminal that is not a target (semi-paths) become
/// unary factors on their start element.
pub fn build_graph(
    tree: &SyntaxTree,
    contexts: &[PathContext],
    task: TaskKind,
    kind: AbstractionKind,
) -> Result<FactorGraph, CrfError> {
    let targets = targets(tree, task)?;
    let mut graph = FactorGraph {
        variables: targets.elements().collect(),
        gold: targets.gold.clone(),
        ..Default::default()
    };
    let element = |n: NodeId| -> Option<ElementId> {
        targets
            .element_of(n)
            .or_else(|| tree.is_terminal(n).then_some(ElementId::Node(n)))
    };
    for ctx in contexts {
        let (s, e) = (ctx.start_node(), ctx.end_node());
        for n in [s, e] {
            if !tree.contains(n) {
                return Err(CrfError::UnknownNode(n));
            }
        }
        let forward = abstract_path(tree, &ctx.path, kind).into_string();
        match (element(s), element(e)) {
            (Some(a), Some(b)) if a == b => {
                let backward = abstract_path(tree, &ctx.path.reversed(), kind).into_string();
                graph.unary.push(UnaryFactor {
                    element: a,
                    path: forward.min(backward),
                });
            }
            (Some(a), Some(b)) => {
                if !graph.is_variable(a) && !graph.is_variable(b) {
                    continue;
                }
                for (x, n) in [(a, s), (b, e)] {
                    if !graph.is_variable(x) {
                        graph
                            .known
                            .insert(x, tree.value(n).unwrap_or_default().to_string());
                    }
                }
                let backward = abstract_path(tree, &ctx.path.reversed(), kind).into_string();
                graph.pairwise.push(canonical_pair(a, b, forward, backward));
            }
            (Some(a), None) if graph.is_variable(a) => {
                graph.unary.push(UnaryFactor {
                    element: a,
                    path: format!("{forward}:{}", escape_value(&ctx.end_value)),
                });
            }
            _ => {}
        }
    }
    Ok(graph)
}

#[derive(Clone, Debug, Default)]
struct Interner {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(s.to_string());
        self.ids.insert(s.to_string(), id);
        id
    }

    fn get(&self, s: &str) -> Option<u32> {
        self.ids.get(s).copied()
    }

    fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }
}

/// Trained factor scores. Immutable after training.
#[derive(Clone, Debug)]
pub struct FactorScores {
    labels: Interner,
    paths: Interner,
    pair: HashMap<(u32, u32, u32), f64>,
    unary: HashMap<(u32, u32), f64>,
    pair_fallback: HashMap<u32, f64>,
    unary_fallback: HashMap<u32, f64>,
    pair_default: f64,
    unary_default: f64,
    /// The candidate vocabulary W, sorted by label text.
    vocab: Vec<u32>,
    label_counts: HashMap<u32, u64>,
    path_candidates: HashMap<u32, Vec<u32>>,
    fallback_candidates: Vec<u32>,
    pub kappa: f64,
    offset: f64,
}

fn ordered(labels: &Interner, l1: u32, l2: u32, symmetric: bool) -> (u32, u32) {
    if symmetric && labels.name(l2) < labels.name(l1) {
        (l2, l1)
    } else {
        (l1, l2)
    }
}

/// Estimates factor scores from graphs whose variables carry gold labels.
pub fn train_scores(graphs: &[FactorGraph], kappa: f64) -> Result<FactorScores, CrfError> {
    let mut labels = Interner::default();
    let mut paths = Interner::default();
    let mut label_counts: HashMap<u32, u64> = HashMap::new();
    for g in graphs {
        for v in &g.variables {
            let gold = g.gold.get(v).ok_or(CrfError::MissingLabel(*v))?;
            if gold != UNK {
                *label_counts.entry(labels.intern(gold)).or_default() += 1;
            }
        }
    }
    if label_counts.is_empty() {
        return Err(CrfError::EmptyTraining);
    }
    let mut vocab: Vec<u32> = label_counts.keys().copied().collect();
    vocab.sort_by(|&a, &b| labels.name(a).cmp(labels.name(b)));
    let w = vocab.len() as f64;

    let mut pair_counts: HashMap<(u32, u32, u32), u64> = HashMap::new();
    let mut pair_totals: HashMap<u32, u64> = HashMap::new();
    let mut unary_counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut unary_totals: HashMap<u32, u64> = HashMap::new();
    let mut candidates: HashMap<u32, BTreeSet<u32>> = HashMap::new();
    for g in graphs {
        let label = |e: ElementId| g.known.get(&e).or_else(|| g.gold.get(&e));
        for f in &g.pairwise {
            let (Some(la), Some(lb)) = (label(f.a), label(f.b)) else {
                continue;
            };
            let p = paths.intern(&f.path);
            let (la, lb) = (labels.intern(la), labels.intern(lb));
            let (la, lb) = ordered(&labels, la, lb, f.symmetric);
            *pair_counts.entry((la, p, lb)).or_default() += 1;
            *pair_totals.entry(p).or_default() += 1;
            let cands = candidates.entry(p).or_default();
            for l in [la, lb] {
                if label_counts.contains_key(&l) {
                    cands.insert(l);
                }
            }
        }
        for f in &g.unary {
            let Some(l) = g.gold.get(&f.element) else {
                continue;
            };
            let p = paths.intern(&f.path);
            let l = labels.intern(l);
            *unary_counts.entry((l, p)).or_default() += 1;
            *unary_totals.entry(p).or_default() += 1;
            if label_counts.contains_key(&l) {
                candidates.entry(p).or_default().insert(l);
            }
        }
    }

    let pair_norm = |p: u32| (pair_totals.get(&p).copied().unwrap_or(0) as f64 + kappa * w * w).ln();
    let unary_norm = |p: u32| (unary_totals.get(&p).copied().unwrap_or(0) as f64 + kappa * w).ln();
    let pair = pair_counts
        .iter()
        .map(|(&(a, p, b), &c)| ((a, p, b), (c as f64 + kappa).ln() - pair_norm(p)))
        .collect();
    let unary = unary_counts
        .iter()
        .map(|(&(l, p), &c)| ((l, p), (c as f64 + kappa).ln() - unary_norm(p)))
        .collect();
    let pair_fallback = pair_totals.keys().map(|&p| (p, kappa.ln() - pair_norm(p))).collect();
    let unary_fallback = unary_totals.keys().map(|&p| (p, kappa.ln() - unary_norm(p))).collect();

    let mut scores = FactorScores {
        labels,
        paths,
        pair,
        unary,
        pair_fallback,
        unary_fallback,
        pair_default: kappa.ln() - (kappa * w * w).ln(),
        unary_default: kappa.ln() - (kappa * w).ln(),
        vocab,
        label_counts,
        path_candidates: HashMap::new(),
        fallback_candidates: Vec::new(),
        kappa,
        offset: 0.0,
    };
    scores.path_candidates = candidates
        .into_iter()
        .map(|(p, set)| (p, scores.sorted_by_name(set)))
        .collect();
    scores.fallback_candidates = scores.top_labels(FALLBACK_CANDIDATES);
    Ok(scores)
}

impl FactorScores {
    fn sorted_by_name(&self, ids: impl IntoIterator<Item = u32>) -> Vec<u32> {
        let mut v: Vec<u32> = ids.into_iter().collect();
        v.sort_by(|&a, &b| self.labels.name(a).cmp(self.labels.name(b)));
        v
    }

    fn top_labels(&self, k: usize) -> Vec<u32> {
        let mut v = self.vocab.clone();
        v.sort_by(|&a, &b| {
            self.label_counts[&b]
                .cmp(&self.label_counts[&a])
                .then_with(|| self.labels.name(a).cmp(self.labels.name(b)))
        });
        v.truncate(k);
        self.sorted_by_name(v)
    }

    /// The candidate vocabulary, sorted.
    pub fn vocab(&self) -> Vec<&str> {
        self.vocab.iter().map(|&l| self.labels.name(l)).collect()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn label_count(&self, label: &str) -> u64 {
        self.labels
            .get(label)
            .and_then(|l| self.label_counts.get(&l))
            .copied()
            .unwrap_or(0)
    }

    /// A copy with `c` added to every factor score.
    pub fn shifted(&self, c: f64) -> FactorScores {
        FactorScores {
            offset: self.offset + c,
            ..self.clone()
        }
    }

    fn pair_ids(&self, la: Option<u32>, p: Option<u32>, lb: Option<u32>, symmetric: bool) -> f64 {
        let Some(p) = p else {
            return self.pair_default + self.offset;
        };
        let hit = match (la, lb) {
            (Some(la), Some(lb)) => {
                let (la, lb) = ordered(&self.labels, la, lb, symmetric);
                self.pair.get(&(la, p, lb)).copied()
            }
            _ => None,
        };
        hit.or_else(|| self.pair_fallback.get(&p).copied())
            .unwrap_or(self.pair_default)
            + self.offset
    }

    fn unary_ids(&self, l: Option<u32>, p: Option<u32>) -> f64 {
        let Some(p) = p else {
            return self.unary_default + self.offset;
        };
        l.and_then(|l| self.unary.get(&(l, p)).copied())
            .or_else(|| self.unary_fallback.get(&p).copied())
            .unwrap_or(self.unary_default)
            + self.offset
    }

    /// Score of a pairwise factor whose path reads from `label_s` to `label_f`.
    pub fn pair_score(&self, label_s: &str, path: &str, label_f: &str, symmetric: bool) -> f64 {
        self.pair_ids(
            self.labels.get(label_s),
            self.paths.get(path),
            self.labels.get(label_f),
            symmetric,
        )
    }

    pub fn unary_score(&self, label: &str, path: &str) -> f64 {
        self.unary_ids(self.labels.get(label), self.paths.get(path))
    }
}

/// Unnormalized log-score of a full labeling: the sum of all factor scores.
pub fn score_assignment(graph: &FactorGraph, scores: &FactorScores, y: &Labeling) -> Result<f64, CrfError> {
    for v in &graph.variables {
        if !y.contains_key(v) {
            return Err(CrfError::MissingLabel(*v));
        }
    }
    let mut total = 0.0;
    for f in &graph.pairwise {
        total += scores.pair_score(graph.label_of(f.a, y)?, &f.path, graph.label_of(f.b, y)?, f.symmetric);
    }
    for f in &graph.unary {
        total += scores.unary_score(graph.label_of(f.element, y)?, &f.path);
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferenceMode {
    Exact,
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub labeling: Labeling,
    pub score: f64,
    /// Greedy mode: score after initialization, then after every sweep.
    pub trace: Vec<f64>,
}

/// A factor touching a variable, seen from that variable.
#[derive(Clone, Copy, Debug)]
enum Local {
    Unary { path: Option<u32> },
    Known { path: Option<u32>, other: Option<u32>, var_first: bool, symmetric: bool },
    Pair { path: Option<u32>, other: usize, var_first: bool, symmetric: bool },
}

/// The graph with labels and paths resolved to score-table ids.
struct Compiled<'a> {
    scores: &'a FactorScores,
    factors: Vec<Vec<Local>>,
}

impl<'a> Compiled<'a> {
    fn new(graph: &FactorGraph, scores: &'a FactorScores) -> Compiled<'a> {
        let index: HashMap<ElementId, usize> =
            graph.variables.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut factors = vec![Vec::new(); graph.variables.len()];
        for f in &graph.unary {
            if let Some(&i) = index.get(&f.element) {
                factors[i].push(Local::Unary {
                    path: scores.paths.get(&f.path),
                });
            }
        }
        for f in &graph.pairwise {
            let path = scores.paths.get(&f.path);
            let symmetric = f.symmetric;
            match (index.get(&f.a), index.get(&f.b)) {
                (Some(&i), Some(&j)) => {
                    factors[i].push(Local::Pair { path, other: j, var_first: true, symmetric });
                    factors[j].push(Local::Pair { path, other: i, var_first: false, symmetric });
                }
                (Some(&i), None) => factors[i].push(Local::Known {
                    path,
                    other: graph.known.get(&f.b).and_then(|l| scores.labels.get(l)),
                    var_first: true,
                    symmetric,
                }),
                (None, Some(&j)) => factors[j].push(Local::Known {
                    path,
                    other: graph.known.get(&f.a).and_then(|l| scores.labels.get(l)),
                    var_first: false,
                    symmetric,
                }),
                (None, None) => {}
            }
        }
        Compiled { scores, factors }
    }

    fn pair(&self, own: u32, other: Option<u32>, path: Option<u32>, var_first: bool, symmetric: bool) -> f64 {
        if var_first {
            self.scores.pair_ids(Some(own), path, other, symmetric)
        } else {
            self.scores.pair_ids(other, path, Some(own), symmetric)
        }
    }

    /// Score of the factors touching variable `i` labeled `label`, with
    /// neighbors read from `current`. `None` neighbors are skipped.
    fn local(&self, i: usize, label: u32, current: &[Option<u32>]) -> f64 {
        let mut s = 0.0;
        for f in &self.factors[i] {
            s += match *f {
                Local::Unary { path } => self.scores.unary_ids(Some(label), path),
                Local::Known { path, other, var_first, symmetric } => {
                    self.pair(label, other, path, var_first, symmetric)
                }
                Local::Pair { path, other, var_first, symmetric } => match current[other] {
                    Some(o) => self.pair(label, Some(o), path, var_first, symmetric),
                    None => continue,
                },
            };
        }
        s
    }

    fn candidates(&self, i: usize) -> Vec<u32> {
        let mut set = BTreeSet::new();
        for f in &self.factors[i] {
            let path = match *f {
                Local::Unary { path } | Local::Known { path, .. } | Local::Pair { path, .. } => path,
            };
            if let Some(c) = path.and_then(|p| self.scores.path_candidates.get(&p)) {
                set.extend(c.iter().copied());
            }
        }
        if set.is_empty() {
            self.scores.fallback_candidates.clone()
        } else {
            self.scores.sorted_by_name(set)
        }
    }
}

fn best_of(cands: &[u32], mut score: impl FnMut(u32) -> f64) -> (u32, f64) {
    let mut best = (cands[0], score(cands[0]));
    for &c in &cands[1..] {
        let s = score(c);
        if s > best.1 + TIE_TOLERANCE {
            best = (c, s);
        }
    }
    best
}

fn to_labeling(graph: &FactorGraph, scores: &FactorScores, ids: &[u32]) -> Labeling {
    graph
        .variables
        .iter()
        .zip(ids)
        .map(|(&v, &l)| (v, scores.labels.name(l).to_string()))
        .collect()
}

/// Most probable labeling of the graph's variables.
///
/// `Exact` enumerates every labeling over the full vocabulary in lexicographic
/// order and keeps the first best, up to [`TIE_TOLERANCE`]. `Greedy` starts each variable at its best
/// label under unary and known-neighbor factors, then runs iterated
/// conditional modes in variable order until a sweep changes nothing.
pub fn infer_map(graph: &FactorGraph, scores: &FactorScores, mode: InferenceMode) -> Result<MapResult, CrfError> {
    if scores.vocab.is_empty() {
        return Err(CrfError::EmptyVocabulary);
    }
    match mode {
        InferenceMode::Exact => infer_exact(graph, scores),
        InferenceMode::Greedy => infer_greedy(graph, scores),
    }
}

fn infer_exact(graph: &FactorGraph, scores: &FactorScores) -> Result<MapResult, CrfError> {
    let n = graph.variables.len();
    let w = scores.vocab.len();
    let space = (w as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if space > EXACT_LIMIT as u128 {
        return Err(CrfError::TooLarge(space));
    }
    let mut digits = vec![0usize; n];
    let mut best: Option<(Vec<u32>, f64)> = None;
    loop {
        let ids: Vec<u32> = digits.iter().map(|&d| scores.vocab[d]).collect();
        let s = score_assignment(graph, scores, &to_labeling(graph, scores, &ids))?;
        if best.as_ref().is_none_or(|(_, b)| s > *b + TIE_TOLERANCE) {
            best = Some((ids, s));
        }
        let mut k = n;
        loop {
            if k == 0 {
                let (ids, score) = best.expect("at least one labeling");
                return Ok(MapResult {
                    labeling: to_labeling(graph, scores, &ids),
                    score,
                    trace: Vec::new(),
                });
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < w {
                break;
            }
            digits[k] = 0;
        }
    }
}

fn infer_greedy(graph: &FactorGraph, scores: &FactorScores) -> Result<MapResult, CrfError> {
    let c = Compiled::new(graph, scores);
    let n = graph.variables.len();
    let cands: Vec<Vec<u32>> = (0..n).map(|i| c.candidates(i)).collect();
    let none = vec![None; n];
    let mut current: Vec<Option<u32>> = (0..n)
        .map(|i| Some(best_of(&cands[i], |l| c.local(i, l, &none)).0))
        .collect();
    let total = |cur: &[Option<u32>]| {
        let ids: Vec<u32> = cur.iter().map(|l| l.expect("assigned")).collect();
        score_assignment(graph, scores, &to_labeling(graph, scores, &ids))
    };
    let mut trace = vec![total(&current)?];
    for _ in 0..MAX_SWEEPS {
        let mut changed = false;
        for i in 0..n {
            let own = current[i].expect("assigned");
            let here = c.local(i, own, &current);
            let (label, s) = best_of(&cands[i], |l| c.local(i, l, &current));
            if label != own && s > here + TIE_TOLERANCE {
                current[i] = Some(label);
                changed = true;
            }
        }
        if !changed {
            break;
        }
        trace.push(total(&current)?);
    }
    let ids: Vec<u32> = current.iter().map(|l| l.expect("assigned")).collect();
    Ok(MapResult {
        labeling: to_labeling(graph, scores, &ids),
        score: *trace.last().expect("non-empty trace"),
        trace,
    })
}

/// Ranks the vocabulary for `elem` with every other variable held at `base`.
/// Scores are full labeling scores. Ties keep the base label first, then the
/// element's candidates, then the rest of the vocabulary by label.
pub fn top_k_candidates(
    graph: &FactorGraph,
    scores: &FactorScores,
    base: &Labeling,
    elem: ElementId,
    k: usize,
) -> Result<Vec<(String, f64)>, CrfError> {
    let i = graph
        .variables
        .binary_search(&elem)
        .map_err(|_| CrfError::UnknownElement(elem))?;
    let c = Compiled::new(graph, scores);
    let mut current = Vec::with_capacity(graph.variables.len());
    for v in &graph.variables {
        let l = base.get(v).ok_or(CrfError::MissingLabel(*v))?;
        current.push(scores.labels.get(l));
    }
    let rest = score_assignment(graph, scores, base)? - full_local(&c, scores, i, base[&elem].as_str(), &current);
    let own = scores.labels.get(&base[&elem]);
    let cands = c.candidates(i);
    let mut order: Vec<u32> = own.into_iter().filter(|l| scores.label_counts.contains_key(l)).collect();
    order.extend(cands.iter().filter(|&&l| Some(l) != own));
    order.extend(scores.vocab.iter().filter(|&&l| Some(l) != own && !cands.contains(&l)));
    let own_score = own.map(|l| rest + c.local(i, l, &current));
    let mut ranked: Vec<(String, f64)> = order
        .into_iter()
        .map(|l| {
            let mut s = rest + c.local(i, l, &current);
            // Gains below the ICM threshold do not outrank the base label.
            if let Some(o) = own_score {
                if s > o && s <= o + TIE_TOLERANCE {
                    s = o;
                }
            }
            (scores.labels.name(l).to_string(), s)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(k);
    Ok(ranked)
}

/// Local score of `label`, which may be outside the trained label set.
fn full_local(c: &Compiled, scores: &FactorScores, i: usize, label: &str, current: &[Option<u32>]) -> f64 {
    match scores.labels.get(label) {
        Some(l) => c.local(i, l, current),
        None => c.factors[i]
            .iter()
            .map(|f| match *f {
                Local::Unary { path } => scores.unary_ids(None, path),
                Local::Known { path, other, var_first, symmetric } => {
                    if var_first {
                        scores.pair_ids(None, path, other, symmetric)
                    } else {
                        scores.pair_ids(other, path, None, symmetric)
                    }
                }
                Local::Pair { path, .. } => scores.pair_ids(None, path, None, false),
            })
            .sum(),
    }
}

impl FactorScores {
    /// Sorted rows `kind<TAB>label_s<TAB>path<TAB>label_f<TAB>score`. `pair*`
    /// and `unary*` rows hold the score of unseen labels on a known path;
    /// `meta` rows hold the smoothing constant and the unseen-path scores.
    pub fn to_tsv(&self) -> String {
        let l = |id: u32| escape_value(self.labels.name(id));
        let p = |id: u32| self.paths.name(id).to_string();
        let mut rows: Vec<String> = Vec::new();
        for (&(a, path, b), s) in &self.pair {
            rows.push(format!("pair\t{}\t{}\t{}\t{s:?}", l(a), p(path), l(b)));
        }
        for (&(a, path), s) in &self.unary {
            rows.push(format!("unary\t{}\t{}\t\t{s:?}", l(a), p(path)));
        }
        for (&path, s) in &self.pair_fallback {
            rows.push(format!("pair*\t\t{}\t\t{s:?}", p(path)));
        }
        for (&path, s) in &self.unary_fallback {
            rows.push(format!("unary*\t\t{}\t\t{s:?}", p(path)));
        }
        rows.push(format!("meta\tkappa\t\t\t{:?}", self.kappa));
        rows.push(format!("meta\tpair-default\t\t\t{:?}", self.pair_default));
        rows.push(format!("meta\tunary-default\t\t\t{:?}", self.unary_default));
        rows.sort_unstable();
        let mut out = String::from("kind\tlabel_s\tpath\tlabel_f\tscore\n");
        for r in rows {
            out.push_str(&r);
            out.push('\n');
        }
        out
    }

    /// `label<TAB>count` for the vocabulary W, sorted by label.
    pub fn vocab_tsv(&self) -> String {
        let mut out = String::new();
        for &l in &self.vocab {
            out.push_str(&format!(
                "{}\t{}\n",
                escape_value(self.labels.name(l)),
                self.label_counts[&l]
            ));
        }
        out
    }

    pub fn from_tsv(scores: &str, vocab: &str) -> Result<FactorScores, CrfError> {
        let bad = |line: usize, problem: &str| CrfError::Format {
            line,
            problem: problem.to_string(),
        };
        let mut labels = Interner::default();
        let mut paths = Interner::default();
        let mut label_counts = HashMap::new();
        let mut vocab_ids = Vec::new();
        for (i, row) in vocab.lines().enumerate() {
            let (label, count) = row.split_once('\t').ok_or_else(|| bad(i + 1, "expected label and count"))?;
            let count: u64 = count.parse().map_err(|_| bad(i + 1, "bad count"))?;
            let id = labels.intern(&unescape(label));
            label_counts.insert(id, count);
            vocab_ids.push(id);
        }
        if vocab_ids.is_empty() {
            return Err(CrfError::EmptyVocabulary);
        }
        let mut s = FactorScores {
            labels,
            paths: Interner::default(),
            pair: HashMap::new(),
            unary: HashMap::new(),
            pair_fallback: HashMap::new(),
            unary_fallback: HashMap::new(),
            pair_default: f64::NAN,
            unary_default: f64::NAN,
            vocab: Vec::new(),
            label_counts,
            path_candidates: HashMap::new(),
            fallback_candidates: Vec::new(),
            kappa: f64::NAN,
            offset: 0.0,
        };
        s.vocab = s.sorted_by_name(vocab_ids);
        let mut candidates: HashMap<u32, BTreeSet<u32>> = HashMap::new();
        for (i, row) in scores.lines().enumerate().skip(1) {
            let cols: Vec<&str> = row.split('\t').collect();
            let [kind, ls, path, lf, score] = cols[..] else {
                return Err(bad(i + 1, "expected five columns"));
            };
            let score: f64 = score.parse().map_err(|_| bad(i + 1, "bad score"))?;
            if !score.is_finite() {
                return Err(bad(i + 1, "score is not finite"));
            }
            let mut label = |raw: &str, cands: &mut BTreeSet<u32>| {
                let id = s.labels.intern(&unescape(raw));
                if s.label_counts.contains_key(&id) {
                    cands.insert(id);
                }
                id
            };
            match kind {
                "pair" => {
                    let p = paths.intern(path);
                    let c = candidates.entry(p).or_default();
                    let key = (label(ls, c), p, label(lf, c));
                    s.pair.insert(key, score);
                }
                "unary" => {
                    let p = paths.intern(path);
                    let c = candidates.entry(p).or_default();
                    let key = (label(ls, c), p);
                    s.unary.insert(key, score);
                }
                "pair*" => {
                    s.pair_fallback.insert(paths.intern(path), score);
                }
                "unary*" => {
                    s.unary_fallback.insert(paths.intern(path), score);
                }
                "meta" => match ls {
                    "kappa" => s.kappa = score,
                    "pair-default" => s.pair_default = score,
                    "unary-default" => s.unary_default = score,
                    other => return Err(bad(i + 1, &format!("unknown meta key `{other}`"))),
                },
                other => return Err(bad(i + 1, &format!("unknown row kind `{other}`"))),
            }
        }
        if s.kappa.is_nan() || s.pair_default.is_nan() || s.unary_default.is_nan() {
            return Err(bad(0, "missing meta rows"));
        }
        s.paths = paths;
        s.path_candidates = candidates
            .into_iter()
            .map(|(p, set)| (p, s.sorted_by_name(set)))
            .collect();
        s.fallback_candidates = s.top_labels(FALLBACK_CANDIDATES);
        Ok(s)
    }
}
