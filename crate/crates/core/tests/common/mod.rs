#![allow(dead_code)]

use std::collections::BTreeMap;

use astpath::crf::{FactorGraph, Labeling, PairwiseFactor, UnaryFactor};
use astpath::tasks::ElementId;
use astpath::tree::{NodeId, SyntaxTree, TargetRole, TreeBuilder};
use rand::Rng;

/// Root-to-node chain, root first.
pub fn root_chain(tree: &SyntaxTree, n: NodeId) -> Vec<NodeId> {
    let mut chain = vec![n];
    let mut cur = n;
    while let Some(p) = tree.parent(cur).unwrap() {
        chain.push(p);
        cur = p;
    }
    chain.reverse();
    chain
}

/// Oracle path between `a` and `b`: node sequence, length and width, computed
/// by splicing root chains at their last common node.
pub struct OraclePath {
    pub nodes: Vec<NodeId>,
    pub ups: usize,
    pub length: usize,
    pub width: usize,
}

pub fn oracle_path(tree: &SyntaxTree, a: NodeId, b: NodeId) -> OraclePath {
    let ca = root_chain(tree, a);
    let cb = root_chain(tree, b);
    let mut k = 0;
    while k + 1 < ca.len() && k + 1 < cb.len() && ca[k + 1] == cb[k + 1] {
        k += 1;
    }
    let mut nodes: Vec<NodeId> = ca[k..].iter().rev().copied().collect();
    nodes.extend(&cb[k + 1..]);
    let ups = ca.len() - 1 - k;
    let downs = cb.len() - 1 - k;
    let width = if ups == 0 || downs == 0 {
        0
    } else {
        let i = tree.child_index(ca[k + 1]) as i64;
        let j = tree.child_index(cb[k + 1]) as i64;
        (i - j).unsigned_abs() as usize
    };
    OraclePath {
        nodes,
        ups,
        length: ups + downs,
        width,
    }
}

/// All terminal pairs (earlier first) whose oracle path is within limits.
pub fn oracle_leafwise(tree: &SyntaxTree, max_length: usize, max_width: usize) -> Vec<Vec<NodeId>> {
    let terms = tree.terminals();
    let mut out = Vec::new();
    for i in 0..terms.len() {
        for j in i + 1..terms.len() {
            let p = oracle_path(tree, terms[i], terms[j]);
            if p.length <= max_length && p.width <= max_width {
                out.push(p.nodes);
            }
        }
    }
    out.sort();
    out
}

/// `var a, b, c, d;`
pub fn var_abcd() -> SyntaxTree {
    let mut b = TreeBuilder::new();
    let defs: Vec<NodeId> = ["a", "b", "c", "d"]
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let s = b.symbol("SymbolVar", name, i as u64, Some(TargetRole::VariableName));
            b.nonterminal("VarDef", vec![s])
        })
        .collect();
    let var = b.nonterminal("Var", defs);
    b.finish(var).unwrap()
}

/// `var item = array[i];`
pub fn item_array_i() -> SyntaxTree {
    let mut b = TreeBuilder::new();
    let item = b.symbol("SymbolVar", "item", 1, Some(TargetRole::VariableName));
    let array = b.symbol("SymbolRef", "array", 2, Some(TargetRole::VariableName));
    let i = b.symbol("SymbolRef", "i", 3, Some(TargetRole::VariableName));
    let sub = b.nonterminal("Sub", vec![array, i]);
    let def = b.nonterminal("VarDef", vec![item, sub]);
    let var = b.nonterminal("Var", vec![def]);
    b.finish(var).unwrap()
}

pub fn find_terminal(tree: &SyntaxTree, value: &str) -> NodeId {
    *tree
        .terminals()
        .iter()
        .find(|&&t| tree.value(t) == Some(value))
        .expect("terminal present")
}

/// Random factor graph over `n` variables with labels and paths from the
/// given pools; two known elements are attached.
pub fn random_graph(rng: &mut impl Rng, n: usize, labels: &[&str], paths: &[&str]) -> FactorGraph {
    let variables: Vec<ElementId> = (0..n as u64).map(ElementId::Symbol).collect();
    let known: BTreeMap<ElementId, String> = (0..2u32)
        .map(|i| (ElementId::Node(NodeId(i)), labels[rng.gen_range(0..labels.len())].to_string()))
        .collect();
    let gold = variables
        .iter()
        .map(|&v| (v, labels[rng.gen_range(0..labels.len())].to_string()))
        .collect();
    let all: Vec<ElementId> = variables.iter().chain(known.keys()).copied().collect();
    let mut pairwise = Vec::new();
    for _ in 0..rng.gen_range(0..=2 * n + 2) {
        let a = variables[rng.gen_range(0..n)];
        let b = loop {
            let b = all[rng.gen_range(0..all.len())];
            if b != a {
                break b;
            }
        };
        let (a, b) = if rng.gen() { (a, b) } else { (b, a) };
        pairwise.push(PairwiseFactor {
            a,
            b,
            path: paths[rng.gen_range(0..paths.len())].to_string(),
            symmetric: rng.gen_bool(0.2),
        });
    }
    let unary = (0..rng.gen_range(0..=n))
        .map(|_| UnaryFactor {
            element: variables[rng.gen_range(0..n)],
            path: paths[rng.gen_range(0..paths.len())].to_string(),
        })
        .collect();
    FactorGraph {
        variables,
        known,
        pairwise,
        unary,
        gold,
    }
}

/// Every labeling of the graph's variables over `vocab`, lexicographic.
pub fn all_labelings(graph: &FactorGraph, vocab: &[&str]) -> Vec<Labeling> {
    let mut out = vec![Labeling::new()];
    for &v in &graph.variables {
        out = out
            .into_iter()
            .flat_map(|y| {
                vocab.iter().map(move |l| {
                    let mut y = y.clone();
                    y.insert(v, l.to_string());
                    y
                })
            })
            .collect();
    }
    out
}

/// Spearman rank correlation, average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
