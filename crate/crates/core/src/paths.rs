//! AST paths between nodes, their length and width, and extraction of
//! leafwise paths, semi-paths and terminal-to-target paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{NodeId, SyntaxTree, TreeError};

/// End value used for paths that end at a target nonterminal.
pub const TARGET_PLACEHOLDER: &str = "<TARGET>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn flipped(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PathError {
    #[error("degenerate path: start and end are both node {0}")]
    Degenerate(NodeId),
    #[error("target node {0} is a terminal")]
    TargetIsTerminal(NodeId),
    #[error("invalid path: {0}")]
    Invalid(String),
    #[error("invalid extraction config: {0}")]
    Config(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A sequence of nodes joined by up/down moves.
///
/// Directions always form a run of `Up` moves followed by a run of `Down`
/// moves, as every simple path in a tree does.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AstPath {
    nodes: Vec<NodeId>,
    directions: Vec<Direction>,
}

impl AstPath {
    /// Checks the movement constraints against `tree`.
    pub fn new(tree: &SyntaxTree, nodes: Vec<NodeId>, directions: Vec<Direction>) -> Result<Self, PathError> {
        if nodes.len() < 2 || directions.len() + 1 != nodes.len() {
            return Err(PathError::Invalid(format!(
                "{} nodes with {} directions",
                nodes.len(),
                directions.len()
            )));
        }
        let mut seen_down = false;
        for (i, &dir) in directions.iter().enumerate() {
            let (from, to) = (nodes[i], nodes[i + 1]);
            let ok = match dir {
                Direction::Up => !seen_down && tree.parent(from)? == Some(to),
                Direction::Down => {
                    seen_down = true;
                    tree.parent(to)? == Some(from)
                }
            };
            if !ok {
                return Err(PathError::Invalid(format!("bad move {dir:?} from {from} to {to}")));
            }
        }
        Ok(AstPath { nodes, directions })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn start(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn end(&self) -> NodeId {
        self.nodes[self.nodes.len() - 1]
    }

    /// Number of moves, `k`.
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Index into [`Self::nodes`] of the highest node on the path.
    pub fn top_index(&self) -> usize {
        self.directions.iter().take_while(|&&d| d == Direction::Up).count()
    }

    pub fn top(&self) -> NodeId {
        self.nodes[self.top_index()]
    }

    /// True for pure-up or pure-down paths.
    pub fn is_monotone(&self) -> bool {
        let top = self.top_index();
        top == 0 || top == self.directions.len()
    }

    /// The same path walked from end to start.
    pub fn reversed(&self) -> AstPath {
        AstPath {
            nodes: self.nodes.iter().rev().copied().collect(),
            directions: self.directions.iter().rev().map(|d| d.flipped()).collect(),
        }
    }
}

/// A path together with the values at its two ends.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PathContext {
    pub start_value: String,
    pub path: AstPath,
    pub end_value: String,
}

impl PathContext {
    pub fn start_node(&self) -> NodeId {
        self.path.start()
    }

    pub fn end_node(&self) -> NodeId {
        self.path.end()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub max_length: usize,
    pub max_width: usize,
    pub include_semi_paths: bool,
    /// Probability of keeping each extracted occurrence.
    pub keep_prob: f64,
    pub seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            max_length: 7,
            max_width: 3,
            include_semi_paths: false,
            keep_prob: 1.0,
            seed: 0,
        }
    }
}

impl ExtractionConfig {
    pub fn new(max_length: usize, max_width: usize) -> Self {
        ExtractionConfig {
            max_length,
            max_width,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), PathError> {
        if self.max_length < 1 {
            return Err(PathError::Config("max_length must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.keep_prob) {
            return Err(PathError::Config(format!(
                "keep_prob {} outside [0, 1]",
                self.keep_prob
            )));
        }
        Ok(())
    }
}

/// The unique simple path from `a` to `b`: up to the lowest common ancestor,
/// then down.
pub fn path_between(tree: &SyntaxTree, a: NodeId, b: NodeId) -> Result<AstPath, PathError> {
    tree.node(a)?;
    tree.node(b)?;
    if a == b {
        return Err(PathError::Degenerate(a));
    }
    let mut up = vec![a];
    let mut down = vec![b];
    let (mut x, mut y) = (a, b);
    while tree.depth(x) > tree.depth(y) {
        x = tree.parent(x)?.expect("deeper node has a parent");
        up.push(x);
    }
    while tree.depth(y) > tree.depth(x) {
        y = tree.parent(y)?.expect("deeper node has a parent");
        down.push(y);
    }
    while x != y {
        x = tree.parent(x)?.expect("nodes in one tree share the root");
        y = tree.parent(y)?.expect("nodes in one tree share the root");
        up.push(x);
        down.push(y);
    }
    // `y` (== x) sits at the end of both lists.
    down.pop();
    let ups = up.len() - 1;
    let downs = down.len();
    let mut nodes = up;
    nodes.extend(down.into_iter().rev());
    let mut directions = vec![Direction::Up; ups];
    directions.extend(std::iter::repeat_n(Direction::Down, downs));
    Ok(AstPath { nodes, directions })
}

pub fn path_length(path: &AstPath) -> usize {
    path.len()
}

/// Sibling spread at the turning node; 0 for monotone paths.
pub fn path_width(tree: &SyntaxTree, path: &AstPath) -> usize {
    if path.is_monotone() {
        return 0;
    }
    let top = path.top_index();
    let left = tree.child_index(path.nodes[top - 1]);
    let right = tree.child_index(path.nodes[top + 1]);
    left.abs_diff(right) as usize
}

/// Paths between every pair of terminals within the length and width limits.
///
/// Each unordered pair is emitted once, starting at the terminal that comes
/// first in depth-first order. Output is sorted by (start, end) terminal
/// position.
pub fn extract_leafwise(tree: &SyntaxTree, cfg: &ExtractionConfig) -> Vec<PathContext> {
    let terminals = tree.terminals();
    let mut position = vec![usize::MAX; tree.len()];
    for (i, t) in terminals.iter().enumerate() {
        position[t.index()] = i;
    }

    let mut out = Vec::new();
    let mut found: Vec<(usize, NodeId, NodeId)> = Vec::new();
    let mut stack: Vec<(NodeId, usize)> = Vec::new();
    for &a in terminals {
        found.clear();
        let mut below = a;
        let mut up = 0;
        while let Some(turn) = tree.parent(below).ok().flatten() {
            up += 1;
            if up >= cfg.max_length {
                break;
            }
            let budget = cfg.max_length - up;
            let children = &tree.nodes()[turn.index()].children;
            let from = tree.child_index(below) as usize;
            let last = (from + cfg.max_width).min(children.len().saturating_sub(1));
            for &sibling in children.iter().take(last + 1).skip(from + 1) {
                stack.push((sibling, 1));
                while let Some((node, dist)) = stack.pop() {
                    if tree.is_terminal(node) {
                        found.push((position[node.index()], node, turn));
                        continue;
                    }
                    if dist < budget {
                        for &child in tree.nodes()[node.index()].children.iter().rev() {
                            stack.push((child, dist + 1));
                        }
                    }
                }
            }
            below = turn;
        }
        found.sort_unstable_by_key(|&(pos, _, _)| pos);
        for &(_, b, turn) in &found {
            out.push(PathContext {
                start_value: tree.value(a).unwrap_or_default().to_string(),
                path: splice(tree, a, turn, b),
                end_value: tree.value(b).unwrap_or_default().to_string(),
            });
        }
    }
    out
}

/// Path a → turn → b where `turn` is known to be the lowest common ancestor.
fn splice(tree: &SyntaxTree, a: NodeId, turn: NodeId, b: NodeId) -> AstPath {
    let mut nodes = vec![a];
    nodes.extend(tree.ancestors(a).take_while(|&n| n != turn));
    nodes.push(turn);
    let ups = nodes.len() - 1;
    let mut down = vec![b];
    down.extend(tree.ancestors(b).take_while(|&n| n != turn));
    let downs = down.len();
    nodes.extend(down.into_iter().rev());
    let mut directions = vec![Direction::Up; ups];
    directions.extend(std::iter::repeat_n(Direction::Down, downs));
    AstPath { nodes, directions }
}

/// Paths from each terminal up to each of its ancestors within `max_length`.
/// The end value is the ancestor's kind label.
pub fn extract_semi(tree: &SyntaxTree, cfg: &ExtractionConfig) -> Vec<PathContext> {
    let mut out = Vec::new();
    for &t in tree.terminals() {
        let mut nodes = vec![t];
        for ancestor in tree.ancestors(t).take(cfg.max_length) {
            nodes.push(ancestor);
            out.push(PathContext {
                start_value: tree.value(t).unwrap_or_default().to_string(),
                path: AstPath {
                    directions: vec![Direction::Up; nodes.len() - 1],
                    nodes: nodes.clone(),
                },
                end_value: tree.kind(ancestor).to_string(),
            });
        }
    }
    out
}

/// Paths from every terminal to the nonterminal `target`, ending in
/// [`TARGET_PLACEHOLDER`].
pub fn extract_to_target(
    tree: &SyntaxTree,
    target: NodeId,
    cfg: &ExtractionConfig,
) -> Result<Vec<PathContext>, PathError> {
    if tree.node(target)?.is_terminal() {
        return Err(PathError::TargetIsTerminal(target));
    }
    let mut out = Vec::new();
    for &t in tree.terminals() {
        let path = path_between(tree, t, target)?;
        if path_length(&path) <= cfg.max_length && path_width(tree, &path) <= cfg.max_width {
            out.push(PathContext {
                start_value: tree.value(t).unwrap_or_default().to_string(),
                path,
                end_value: TARGET_PLACEHOLDER.to_string(),
            });
        }
    }
    Ok(out)
}

/// Keeps each occurrence independently with probability `keep_prob`.
///
/// The i-th occurrence's fate is the i-th draw of a generator seeded with
/// `seed`, so the result is reproducible.
pub fn downsample<T>(items: Vec<T>, keep_prob: f64, seed: u64) -> Vec<T> {
    if keep_prob >= 1.0 {
        return items;
    }
    if keep_prob <= 0.0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items
        .into_iter()
        .filter(|_| rng.gen::<f64>() < keep_prob)
        .collect()
}

/// Leafwise paths plus (when configured) semi-paths, before downsampling.
pub fn extract_all(tree: &SyntaxTree, cfg: &ExtractionConfig) -> Vec<PathContext> {
    let mut contexts = extract_leafwise(tree, cfg);
    if cfg.include_semi_paths {
        contexts.extend(extract_semi(tree, cfg));
    }
    contexts
}
