//! Prediction tasks: which nodes are targets, and the bag of abstract
//! path-contexts each target element participates in.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{abstract_path, AbstractionKind};
use crate::escape::{escape_value, unescape};
use crate::paths::{extract_to_target, ExtractionConfig, PathContext, PathError};
use crate::tree::{NodeId, SyntaxTree, TargetRole, TreeError};

/// Stands in for the other endpoint when it is an occurrence of the same element.
pub const SELF_TOKEN: &str = "<SELF>";
/// Stands in for the other endpoint when it is a different target element,
/// whose name is unknown at prediction time.
pub const VAR_TOKEN: &str = "<VAR>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    VariableNames,
    MethodNames,
    FullTypes,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::VariableNames => "variable-names",
            TaskKind::MethodNames => "method-names",
            TaskKind::FullTypes => "full-types",
        }
    }

    /// Default (max_length, max_width) for the task.
    pub fn default_limits(self) -> (usize, usize) {
        match self {
            TaskKind::FullTypes => (4, 1),
            TaskKind::VariableNames | TaskKind::MethodNames => (7, 3),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "variable-names" | "variables" => Ok(TaskKind::VariableNames),
            "method-names" | "methods" => Ok(TaskKind::MethodNames),
            "full-types" | "types" => Ok(TaskKind::FullTypes),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// A program element: a group of terminal occurrences sharing a symbol id, or
/// a single node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementId {
    Symbol(u64),
    Node(NodeId),
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementId::Symbol(s) => write!(f, "s{s}"),
            ElementId::Node(n) => write!(f, "n{n}"),
        }
    }
}

impl FromStr for ElementId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |rest: &str| rest.parse::<u64>().map_err(|e| format!("bad element id `{s}`: {e}"));
        match s.split_at_checked(1) {
            Some(("s", rest)) => Ok(ElementId::Symbol(parse(rest)?)),
            Some(("n", rest)) => Ok(ElementId::Node(NodeId(parse(rest)? as u32))),
            _ => Err(format!("bad element id `{s}`")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("target node {0} has no symbol_id")]
    MissingSymbol(NodeId),
    #[error("type-expression target {0} is a terminal")]
    TargetIsTerminal(NodeId),
    #[error("type-expression target {0} has no gold_label")]
    MissingGold(NodeId),
    #[error("context references node {0}, which is not in the tree")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("gold sidecar line {line}: {problem}")]
    Sidecar { line: usize, problem: String },
}

/// Target elements of one tree for one task.
#[derive(Clone, Debug, Default)]
pub struct Targets {
    element_of: HashMap<NodeId, ElementId>,
    /// Gold label per element, in element order.
    pub gold: BTreeMap<ElementId, String>,
    /// Target occurrences per element, in document order.
    pub occurrences: BTreeMap<ElementId, Vec<NodeId>>,
}

impl Targets {
    pub fn element_of(&self, node: NodeId) -> Option<ElementId> {
        self.element_of.get(&node).copied()
    }

    pub fn elements(&self) -> impl Iterator<Item = ElementId> + '_ {
        self.gold.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    fn add(&mut self, node: NodeId, element: ElementId, gold: impl FnOnce() -> String) {
        self.element_of.insert(node, element);
        self.occurrences.entry(element).or_default().push(node);
        self.gold.entry(element).or_insert_with(gold);
    }
}

/// Resolves the target elements of `task` in `tree`.
pub fn targets(tree: &SyntaxTree, task: TaskKind) -> Result<Targets, TaskError> {
    let mut out = Targets::default();
    let label = |id: NodeId| {
        let node = &tree.nodes()[id.index()];
        node.gold_label
            .clone()
            .or_else(|| node.value.clone())
            .unwrap_or_default()
    };
    match task {
        TaskKind::VariableNames => {
            for &id in tree.preorder() {
                let node = &tree.nodes()[id.index()];
                if node.target_role == Some(TargetRole::VariableName) && node.is_terminal() {
                    let sym = node.symbol_id.ok_or(TaskError::MissingSymbol(id))?;
                    out.add(id, ElementId::Symbol(sym), || label(id));
                }
            }
        }
        TaskKind::MethodNames => {
            let mut declared = BTreeMap::new();
            for &id in tree.preorder() {
                let node = &tree.nodes()[id.index()];
                if node.target_role == Some(TargetRole::MethodName) {
                    let sym = node.symbol_id.ok_or(TaskError::MissingSymbol(id))?;
                    declared.entry(sym).or_insert_with(|| label(id));
                }
            }
            for &id in tree.preorder() {
                let node = &tree.nodes()[id.index()];
                if matches!(
                    node.target_role,
                    Some(TargetRole::MethodName | TargetRole::MethodInvocation)
                ) {
                    // Calls to methods declared elsewhere stay ordinary terminals.
                    if let Some(gold) = node.symbol_id.and_then(|s| declared.get(&s)) {
                        let sym = node.symbol_id.expect("checked above");
                        out.add(id, ElementId::Symbol(sym), || gold.clone());
                    }
                }
            }
        }
        TaskKind::FullTypes => {
            for &id in tree.preorder() {
                let node = &tree.nodes()[id.index()];
                if node.target_role == Some(TargetRole::TypeExpression) {
                    if node.is_terminal() {
                        return Err(TaskError::TargetIsTerminal(id));
                    }
                    let gold = node.gold_label.clone().ok_or(TaskError::MissingGold(id))?;
                    out.add(id, ElementId::Node(id), || gold);
                }
            }
        }
    }
    Ok(out)
}

/// One prediction unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskInstance {
    pub element: ElementId,
    pub gold_label: String,
    pub contexts: Vec<String>,
    pub internal_only: bool,
}

impl TaskInstance {
    /// Instances without contexts are kept (and counted as misses when
    /// evaluated) but are not trainable.
    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    /// `element_id<TAB>gold_label<TAB>ctx ctx ...`
    pub fn to_line(&self, element_key: &str) -> String {
        format!(
            "{element_key}\t{}\t{}",
            escape_value(&self.gold_label),
            self.contexts.join(" ")
        )
    }

    /// Parses a line written by [`Self::to_line`], returning the element key.
    pub fn from_line(line: &str) -> Result<(String, TaskInstance), String> {
        let mut cols = line.splitn(3, '\t');
        let (Some(key), Some(gold), Some(ctx)) = (cols.next(), cols.next(), cols.next()) else {
            return Err(format!("malformed instance line `{line}`"));
        };
        let element = key
            .rsplit(':')
            .next()
            .unwrap_or(key)
            .parse()
            .unwrap_or(ElementId::Symbol(0));
        Ok((
            key.to_string(),
            TaskInstance {
                element,
                gold_label: unescape(gold),
                contexts: ctx.split(' ').filter(|c| !c.is_empty()).map(str::to_string).collect(),
                internal_only: false,
            },
        ))
    }
}

/// Which endpoint of a context belongs to the element being described.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Start,
    End,
}

/// The token a context contributes to the element sitting at `ours`: the
/// abstract path fused with the other endpoint's value (`path:value` when the
/// element is at the start, `value:path` when it is at the end). Other target
/// occurrences are replaced by [`SELF_TOKEN`] or [`VAR_TOKEN`].
pub fn context_token(
    tree: &SyntaxTree,
    ctx: &PathContext,
    kind: AbstractionKind,
    targets: &Targets,
    ours: Endpoint,
) -> String {
    let path = abstract_path(tree, &ctx.path, kind);
    let (own_node, other_node, other_value) = match ours {
        Endpoint::Start => (ctx.start_node(), ctx.end_node(), &ctx.end_value),
        Endpoint::End => (ctx.end_node(), ctx.start_node(), &ctx.start_value),
    };
    let other = match (targets.element_of(own_node), targets.element_of(other_node)) {
        (Some(a), Some(b)) if a == b => SELF_TOKEN.to_string(),
        (_, Some(_)) => VAR_TOKEN.to_string(),
        (_, None) => escape_value(other_value),
    };
    match ours {
        Endpoint::Start => format!("{path}:{other}"),
        Endpoint::End => format!("{other}:{path}"),
    }
}

fn check_nodes(tree: &SyntaxTree, contexts: &[PathContext]) -> Result<(), TaskError> {
    for ctx in contexts {
        for node in [ctx.start_node(), ctx.end_node()] {
            if !tree.contains(node) {
                return Err(TaskError::UnknownNode(node));
            }
        }
    }
    Ok(())
}

fn empty_instances(targets: &Targets, internal_only: bool) -> BTreeMap<ElementId, TaskInstance> {
    targets
        .gold
        .iter()
        .map(|(&element, gold)| {
            (
                element,
                TaskInstance {
                    element,
                    gold_label: gold.clone(),
                    contexts: Vec::new(),
                    internal_only,
                },
            )
        })
        .collect()
}

/// One instance per variable; its bag holds every context touching one of its
/// occurrences. A context between two occurrences of the same variable is
/// added once, with a [`SELF_TOKEN`] endpoint.
pub fn make_variable_instances(
    tree: &SyntaxTree,
    contexts: &[PathContext],
    kind: AbstractionKind,
) -> Result<Vec<TaskInstance>, TaskError> {
    check_nodes(tree, contexts)?;
    let targets = targets(tree, TaskKind::VariableNames)?;
    let mut instances = empty_instances(&targets, false);
    for ctx in contexts {
        let start = targets.element_of(ctx.start_node());
        let end = targets.element_of(ctx.end_node());
        if let Some(s) = start {
            let token = context_token(tree, ctx, kind, &targets, Endpoint::Start);
            instances.get_mut(&s).expect("known element").contexts.push(token);
        }
        if let Some(e) = end {
            if start != Some(e) {
                let token = context_token(tree, ctx, kind, &targets, Endpoint::End);
                instances.get_mut(&e).expect("known element").contexts.push(token);
            }
        }
    }
    Ok(instances.into_values().collect())
}

/// Root of the method declaration owning the name terminal `name`.
pub fn method_scope(tree: &SyntaxTree, name: NodeId) -> NodeId {
    tree.parent(name).ok().flatten().unwrap_or(name)
}

/// One instance per method declared in the tree. The bag holds contexts from
/// the declaration's name to nodes inside the declaration and, unless
/// `internal_only`, contexts around each in-file invocation.
pub fn make_method_instances(
    tree: &SyntaxTree,
    contexts: &[PathContext],
    kind: AbstractionKind,
    internal_only: bool,
) -> Result<Vec<TaskInstance>, TaskError> {
    check_nodes(tree, contexts)?;
    let targets = targets(tree, TaskKind::MethodNames)?;
    let mut instances = empty_instances(&targets, internal_only);
    let is_decl = |n: NodeId| tree.nodes()[n.index()].target_role == Some(TargetRole::MethodName);
    let inside = |decl: NodeId, other: NodeId| {
        let scope = method_scope(tree, decl);
        other == scope || tree.is_ancestor(scope, other)
    };
    for ctx in contexts {
        let (s, e) = (ctx.start_node(), ctx.end_node());
        let qualifies = |own: NodeId, other: NodeId| {
            targets.element_of(own).is_some() && if is_decl(own) { inside(own, other) } else { !internal_only }
        };
        let start_ok = qualifies(s, e);
        let end_ok = qualifies(e, s);
        let same = targets.element_of(s).is_some() && targets.element_of(s) == targets.element_of(e);
        if start_ok {
            let token = context_token(tree, ctx, kind, &targets, Endpoint::Start);
            let el = targets.element_of(s).expect("qualified");
            instances.get_mut(&el).expect("known element").contexts.push(token);
        }
        if end_ok && !(same && start_ok) {
            let token = context_token(tree, ctx, kind, &targets, Endpoint::End);
            let el = targets.element_of(e).expect("qualified");
            instances.get_mut(&el).expect("known element").contexts.push(token);
        }
    }
    Ok(instances.into_values().collect())
}

/// One instance per type-expression target, from terminal-to-target paths.
pub fn make_type_instances(
    tree: &SyntaxTree,
    cfg: &ExtractionConfig,
    kind: AbstractionKind,
) -> Result<Vec<TaskInstance>, TaskError> {
    let contexts = type_contexts(tree, cfg)?;
    make_type_instances_from(tree, &contexts, kind)
}

/// Type instances from contexts produced by [`type_contexts`], possibly
/// downsampled. Every target gets an instance, with or without contexts.
pub fn make_type_instances_from(
    tree: &SyntaxTree,
    contexts: &[PathContext],
    kind: AbstractionKind,
) -> Result<Vec<TaskInstance>, TaskError> {
    check_nodes(tree, contexts)?;
    let targets = targets(tree, TaskKind::FullTypes)?;
    let mut instances = empty_instances(&targets, false);
    for ctx in contexts {
        if let Some(e) = targets.element_of(ctx.end_node()) {
            let token = context_token(tree, ctx, kind, &targets, Endpoint::End);
            instances.get_mut(&e).expect("known element").contexts.push(token);
        }
    }
    Ok(instances.into_values().collect())
}

/// Contexts from every terminal to every type target of the tree.
pub fn type_contexts(tree: &SyntaxTree, cfg: &ExtractionConfig) -> Result<Vec<PathContext>, TaskError> {
    let targets = targets(tree, TaskKind::FullTypes)?;
    let mut out = Vec::new();
    for element in targets.elements() {
        if let ElementId::Node(node) = element {
            out.extend(extract_to_target(tree, node, cfg)?);
        }
    }
    Ok(out)
}

/// Applies an `element_id<TAB>gold_label` sidecar: each label is stored on
/// every node of its element. Blank lines are ignored.
pub fn apply_gold_sidecar(tree: &SyntaxTree, sidecar: &str) -> Result<SyntaxTree, TaskError> {
    let mut nodes = tree.nodes().to_vec();
    for (i, line) in sidecar.lines().enumerate() {
        let bad = |problem: String| TaskError::Sidecar { line: i + 1, problem };
        if line.trim().is_empty() {
            continue;
        }
        let (id, gold) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected element_id<TAB>gold_label".into()))?;
        let gold = unescape(gold);
        let mut hit = false;
        match id.parse::<ElementId>().map_err(bad)? {
            ElementId::Symbol(sym) => {
                for node in nodes.iter_mut().filter(|n| n.symbol_id == Some(sym)) {
                    node.gold_label = Some(gold.clone());
                    hit = true;
                }
            }
            ElementId::Node(n) => {
                if let Some(node) = nodes.get_mut(n.index()) {
                    node.gold_label = Some(gold.clone());
                    hit = true;
                }
            }
        }
        if !hit {
            return Err(bad(format!("element `{id}` is not in the tree")));
        }
    }
    Ok(SyntaxTree::from_nodes(nodes, tree.root())?)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::tree::{SyntaxTree, TargetRole, TreeBuilder};

    /// ```text
    /// var d = false;
    /// while (!d) {
    ///     doSomething();
    ///     if (someCondition()) {
    ///         d = true;
    ///     }
    /// }
    /// ```
    pub fn done_loop() -> SyntaxTree {
        let var = Some(TargetRole::VariableName);
        let mut b = TreeBuilder::new();
        let d0 = b.symbol("SymbolVar", "d", 1, var);
        let f = b.terminal("False", "false");
        let var_def = b.nonterminal("VarDef", vec![d0, f]);
        let decl = b.nonterminal("Var", vec![var_def]);

        let d1 = b.symbol("SymbolRef", "d", 1, var);
        let not = b.nonterminal("UnaryPrefix!", vec![d1]);

        let work = b.terminal("SymbolRef", "doSomething");
        let call_work = b.nonterminal("Call", vec![work]);
        let stmt_work = b.nonterminal("SimpleStatement", vec![call_work]);

        let cond = b.terminal("SymbolRef", "someCondition");
        let call_cond = b.nonterminal("Call", vec![cond]);
        let d2 = b.symbol("SymbolRef", "d", 1, var);
        let t = b.terminal("True", "true");
        let assign = b.nonterminal("Assign=", vec![d2, t]);
        let if_node = b.nonterminal("If", vec![call_cond, assign]);

        let while_node = b.nonterminal("While", vec![not, stmt_work, if_node]);
        let top = b.nonterminal("Toplevel", vec![decl, while_node]);
        b.finish(top).unwrap()
    }
}
