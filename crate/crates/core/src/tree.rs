//! The syntax tree model: nodes, terminals, the parent function, and the
//! `.ast.json` serialized tree format.
//!
//! A document is `{"root": <node>}` where every node is
//! `{"id", "kind", "value"?, "children", "symbol_id"?, "target_role"?, "gold_label"?}`.
//! Node ids must be dense (`0..n`); a node that shows up twice in the document
//! is rejected, which is how "listed under two parents" manifests in a nested
//! encoding.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Marks a node as the target of one of the prediction tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetRole {
    VariableName,
    MethodName,
    MethodInvocation,
    TypeExpression,
}

impl TargetRole {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetRole::VariableName => "variable-name",
            TargetRole::MethodName => "method-name",
            TargetRole::MethodInvocation => "method-invocation",
            TargetRole::TypeExpression => "type-expression",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    /// Node type label. Operators are fused into it (`Assign=`, `UnaryPrefix!`).
    pub kind: String,
    /// Present iff the node is a terminal.
    pub value: Option<String>,
    pub children: Vec<NodeId>,
    /// Occurrence group: terminals naming the same program element share it.
    pub symbol_id: Option<u64>,
    pub target_role: Option<TargetRole>,
    /// Gold label for targets whose label is not the terminal value
    /// (full types, anonymized names).
    pub gold_label: Option<String>,
}

impl Node {
    pub fn is_terminal(&self) -> bool {
        self.value.is_some()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("structural error at node {node}: {problem}")]
    Structure { node: NodeId, problem: String },
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("empty tree")]
    Empty,
}

fn structure(node: NodeId, problem: impl Into<String>) -> TreeError {
    TreeError::Structure {
        node,
        problem: problem.into(),
    }
}

/// A validated, immutable AST.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntaxTree {
    nodes: Vec<Node>,
    root: NodeId,
    parents: Vec<Option<NodeId>>,
    child_index: Vec<u32>,
    depth: Vec<u32>,
    terminals: Vec<NodeId>,
    preorder: Vec<NodeId>,
}

impl SyntaxTree {
    /// Builds a tree from nodes indexed by id and checks every structural
    /// invariant.
    pub fn from_nodes(nodes: Vec<Node>, root: NodeId) -> Result<Self, TreeError> {
        if nodes.is_empty() {
            return Err(TreeError::Empty);
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id.index() != i {
                return Err(structure(node.id, format!("node stored at slot {i}")));
            }
            if node.value.is_some() && !node.children.is_empty() {
                return Err(structure(node.id, "terminal with children (valued nonterminal)"));
            }
            if node.symbol_id.is_some()
                && !node.is_terminal()
                && node.target_role != Some(TargetRole::TypeExpression)
            {
                return Err(structure(
                    node.id,
                    "symbol_id on a nonterminal that is not a type-expression target",
                ));
            }
        }
        if root.index() >= nodes.len() {
            return Err(TreeError::UnknownNode(root));
        }

        let n = nodes.len();
        let mut parents: Vec<Option<NodeId>> = vec![None; n];
        let mut child_index = vec![0u32; n];
        let mut seen = vec![false; n];
        for node in &nodes {
            for (pos, &child) in node.children.iter().enumerate() {
                if child.index() >= n {
                    return Err(TreeError::UnknownNode(child));
                }
                if child == root {
                    return Err(structure(child, "root listed as a child (cycle)"));
                }
                if seen[child.index()] {
                    return Err(structure(child, "node listed under more than one parent"));
                }
                seen[child.index()] = true;
                parents[child.index()] = Some(node.id);
                child_index[child.index()] = pos as u32;
            }
        }

        // Every non-root node has exactly one parent; reachability from the
        // root rules out detached cycles.
        let mut depth = vec![0u32; n];
        let mut preorder = Vec::with_capacity(n);
        let mut terminals = Vec::new();
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            preorder.push(id);
            let node = &nodes[id.index()];
            if node.is_terminal() {
                terminals.push(id);
            }
            for &child in node.children.iter().rev() {
                depth[child.index()] = depth[id.index()] + 1;
                stack.push(child);
            }
        }
        if preorder.len() != n {
            let unreachable = (0..n)
                .find(|&i| {
                    let id = NodeId(i as u32);
                    id != root && !preorder.contains(&id)
                })
                .map(|i| NodeId(i as u32))
                .unwrap_or(root);
            return Err(structure(unreachable, "node not reachable from the root"));
        }

        Ok(SyntaxTree {
            nodes,
            root,
            parents,
            child_index,
            depth,
            terminals,
            preorder,
        })
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, TreeError> {
        self.nodes.get(id.index()).ok_or(TreeError::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    /// The parent function. `None` for the root.
    pub fn parent(&self, id: NodeId) -> Result<Option<NodeId>, TreeError> {
        self.parents
            .get(id.index())
            .copied()
            .ok_or(TreeError::UnknownNode(id))
    }

    /// Position of `id` in its parent's child list (0 for the root).
    pub fn child_index(&self, id: NodeId) -> u32 {
        self.child_index[id.index()]
    }

    /// Distance from the root.
    pub fn depth(&self, id: NodeId) -> u32 {
        self.depth[id.index()]
    }

    pub fn kind(&self, id: NodeId) -> &str {
        &self.nodes[id.index()].kind
    }

    pub fn value(&self, id: NodeId) -> Option<&str> {
        self.nodes[id.index()].value.as_deref()
    }

    pub fn is_terminal(&self, id: NodeId) -> bool {
        self.nodes[id.index()].is_terminal()
    }

    /// Terminals in depth-first, left-to-right order.
    pub fn terminals(&self) -> &[NodeId] {
        &self.terminals
    }

    /// All nodes in depth-first pre-order.
    pub fn preorder(&self) -> &[NodeId] {
        &self.preorder
    }

    /// Ancestors of `id`, nearest first, excluding `id` itself.
    pub fn ancestors(&self, id: NodeId) -> Ancestors<'_> {
        Ancestors {
            tree: self,
            next: self.parents[id.index()],
        }
    }

    pub fn is_ancestor(&self, ancestor: NodeId, of: NodeId) -> bool {
        self.ancestors(of).any(|a| a == ancestor)
    }

    /// Copies the subtree rooted at `id` into a new tree with dense pre-order
    /// ids. The returned vector maps new ids to the original ones.
    pub fn subtree(&self, id: NodeId) -> Result<(SyntaxTree, Vec<NodeId>), TreeError> {
        self.node(id)?;
        let mut order = Vec::new();
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            order.push(cur);
            for &child in self.nodes[cur.index()].children.iter().rev() {
                stack.push(child);
            }
        }
        let mut remap = vec![u32::MAX; self.nodes.len()];
        for (new, old) in order.iter().enumerate() {
            remap[old.index()] = new as u32;
        }
        let nodes = order
            .iter()
            .enumerate()
            .map(|(new, old)| {
                let src = &self.nodes[old.index()];
                Node {
                    id: NodeId(new as u32),
                    children: src
                        .children
                        .iter()
                        .map(|c| NodeId(remap[c.index()]))
                        .collect(),
                    ..src.clone()
                }
            })
            .collect();
        Ok((SyntaxTree::from_nodes(nodes, NodeId(0))?, order))
    }

    /// Serializes to the `.ast.json` document format (compact, deterministic).
    pub fn to_json(&self) -> String {
        enum Step {
            Open(NodeId),
            Close,
            Comma,
        }
        let mut out = String::from("{\"root\":");
        let mut stack = vec![Step::Open(self.root)];
        while let Some(step) = stack.pop() {
            match step {
                Step::Comma => out.push(','),
                Step::Close => out.push_str("]}"),
                Step::Open(id) => {
                    let node = &self.nodes[id.index()];
                    let _ = write!(out, "{{\"id\":{},\"kind\":{}", id.0, json_str(&node.kind));
                    if let Some(value) = &node.value {
                        let _ = write!(out, ",\"value\":{}", json_str(value));
                    }
                    if let Some(symbol) = node.symbol_id {
                        let _ = write!(out, ",\"symbol_id\":{symbol}");
                    }
                    if let Some(role) = node.target_role {
                        let _ = write!(out, ",\"target_role\":\"{}\"", role.as_str());
                    }
                    if let Some(gold) = &node.gold_label {
                        let _ = write!(out, ",\"gold_label\":{}", json_str(gold));
                    }
                    out.push_str(",\"children\":[");
                    stack.push(Step::Close);
                    for (i, &child) in node.children.iter().enumerate().rev() {
                        stack.push(Step::Open(child));
                        if i > 0 {
                            stack.push(Step::Comma);
                        }
                    }
                }
            }
        }
        out.push('}');
        out
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

pub struct Ancestors<'a> {
    tree: &'a SyntaxTree,
    next: Option<NodeId>,
}

impl Iterator for Ancestors<'_> {
    type Item = NodeId;

    fn next(&mut self) -> Option<NodeId> {
        let cur = self.next?;
        self.next = self.tree.parents[cur.index()];
        Some(cur)
    }
}

#[derive(Deserialize)]
struct RawDocument {
    root: RawNode,
}

#[derive(Deserialize)]
struct RawNode {
    id: u32,
    kind: String,
    #[serde(default)]
    value: Option<String>,
    #[serde(default)]
    children: Vec<RawNode>,
    #[serde(default)]
    symbol_id: Option<u64>,
    #[serde(default)]
    target_role: Option<TargetRole>,
    #[serde(default)]
    gold_label: Option<String>,
}

fn byte_offset(document: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    let mut line_start = 0;
    for (i, &b) in document.iter().enumerate() {
        if current == line {
            break;
        }
        if b == b'\n' {
            current += 1;
            line_start = i + 1;
        }
    }
    (line_start + column.saturating_sub(1)).min(document.len())
}

/// Parses and validates one serialized tree document.
pub fn parse_tree(document: &[u8]) -> Result<SyntaxTree, TreeError> {
    let mut de = serde_json::Deserializer::from_slice(document);
    de.disable_recursion_limit();
    let parse_error = |e: serde_json::Error| TreeError::Parse {
        offset: byte_offset(document, e.line(), e.column()),
        message: e.to_string(),
    };
    let raw = RawDocument::deserialize(serde_stacker::Deserializer::new(&mut de)).map_err(parse_error)?;
    de.end().map_err(parse_error)?;
    from_raw(raw.root)
}

fn from_raw(root: RawNode) -> Result<SyntaxTree, TreeError> {
    let root_id = NodeId(root.id);
    let mut flat: Vec<Option<Node>> = Vec::new();
    let mut stack = vec![root];
    while let Some(mut raw) = stack.pop() {
        let id = NodeId(raw.id);
        let children = std::mem::take(&mut raw.children);
        if raw.value.is_some() && !children.is_empty() {
            return Err(structure(id, "node has both a value and children"));
        }
        let node = Node {
            id,
            kind: raw.kind,
            value: raw.value,
            children: children.iter().map(|c| NodeId(c.id)).collect(),
            symbol_id: raw.symbol_id,
            target_role: raw.target_role,
            gold_label: raw.gold_label,
        };
        if flat.len() <= id.index() {
            if id.index() > 50_000_000 {
                return Err(structure(id, "node id out of range"));
            }
            flat.resize(id.index() + 1, None);
        }
        if flat[id.index()].is_some() {
            return Err(structure(id, "node listed under more than one parent"));
        }
        flat[id.index()] = Some(node);
        stack.extend(children.into_iter().rev());
    }
    let mut nodes = Vec::with_capacity(flat.len());
    for (i, slot) in flat.into_iter().enumerate() {
        match slot {
            Some(node) => nodes.push(node),
            None => {
                return Err(structure(
                    NodeId(i as u32),
                    "missing node id; ids must be dense 0..n",
                ))
            }
        }
    }
    SyntaxTree::from_nodes(nodes, root_id)
}

/// Splits a newline-delimited corpus stream into documents and parses each.
/// Blank lines are skipped.
pub fn parse_stream(stream: &[u8]) -> Vec<Result<SyntaxTree, TreeError>> {
    stream
        .split(|&b| b == b'\n')
        .filter(|line| line.iter().any(|b| !b.is_ascii_whitespace()))
        .map(parse_tree)
        .collect()
}

/// Convenience constructor for trees assembled in code (tests, synthetic
/// corpora). Ids are renumbered into dense pre-order by [`TreeBuilder::finish`].
#[derive(Default)]
pub struct TreeBuilder {
    nodes: Vec<Node>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn terminal(&mut self, kind: &str, value: &str) -> NodeId {
        self.push(kind, Some(value.to_string()), Vec::new())
    }

    pub fn nonterminal(&mut self, kind: &str, children: Vec<NodeId>) -> NodeId {
        self.push(kind, None, children)
    }

    /// A terminal that is an occurrence of a program element.
    pub fn symbol(&mut self, kind: &str, value: &str, symbol: u64, role: Option<TargetRole>) -> NodeId {
        let id = self.terminal(kind, value);
        let node = &mut self.nodes[id.index()];
        node.symbol_id = Some(symbol);
        node.target_role = role;
        id
    }

    pub fn mark(&mut self, id: NodeId, role: TargetRole, gold: Option<&str>) {
        let node = &mut self.nodes[id.index()];
        node.target_role = Some(role);
        node.gold_label = gold.map(str::to_string);
    }

    fn push(&mut self, kind: &str, value: Option<String>, children: Vec<NodeId>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            id,
            kind: kind.to_string(),
            value,
            children,
            symbol_id: None,
            target_role: None,
            gold_label: None,
        });
        id
    }

    pub fn finish(self, root: NodeId) -> Result<SyntaxTree, TreeError> {
        let tree = SyntaxTree::from_nodes(self.nodes, root)?;
        if tree.root() == NodeId(0) && tree.preorder().iter().enumerate().all(|(i, id)| id.index() == i) {
            return Ok(tree);
        }
        tree.subtree(root).map(|(t, _)| t)
    }
}
