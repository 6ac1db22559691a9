//! Generated inputs: random trees, and a corpus of small programs whose
//! variable names are decided by the shape of the code around them.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::tree::{NodeId, SyntaxTree, TargetRole, TreeBuilder};

const KINDS: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

/// A random tree of at most `max_nodes` nodes (at least 2). Terminals get
/// random values; about a third of them are variable occurrences spread over
/// three symbols.
pub fn random_tree(rng: &mut impl Rng, max_nodes: usize) -> SyntaxTree {
    let n = rng.gen_range(2..=max_nodes.max(2));
    // Parent of node i is some earlier node; ids are in creation order.
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 1..n {
        let p = rng.gen_range(0..i);
        children[p].push(i);
    }
    let mut b = TreeBuilder::new();
    let mut ids = vec![NodeId(0); n];
    for i in (0..n).rev() {
        let kind = KINDS[rng.gen_range(0..KINDS.len())];
        ids[i] = if children[i].is_empty() {
            let value = format!("v{}", rng.gen_range(0..5));
            if rng.gen_bool(0.3) {
                let sym = rng.gen_range(0..3);
                b.symbol(kind, &value, sym, Some(TargetRole::VariableName))
            } else {
                b.terminal(kind, &value)
            }
        } else {
            b.nonterminal(kind, children[i].iter().map(|&c| ids[c]).collect())
        };
    }
    b.finish(ids[0]).expect("generated trees are well formed")
}

/// Names of the separability templates, indexed by template.
pub const TEMPLATE_NAMES: [&str; 4] = ["done", "found", "count", "result"];

const POOL: [&str; 12] = [
    "a", "b", "c", "e", "f", "g", "h", "k", "m", "n", "p", "q",
];

struct Program<'r, R: Rng> {
    b: TreeBuilder,
    rng: &'r mut R,
}

impl<R: Rng> Program<'_, R> {
    fn any(&mut self, kind: &str) -> NodeId {
        let v = POOL[self.rng.gen_range(0..POOL.len())];
        self.b.terminal(kind, v)
    }

    fn var(&mut self, kind: &str, name: &str, sym: u64) -> NodeId {
        self.b.symbol(kind, name, sym, Some(TargetRole::VariableName))
    }

    fn node(&mut self, kind: &str, children: Vec<NodeId>) -> NodeId {
        self.b.nonterminal(kind, children)
    }

    fn call_stmt(&mut self) -> NodeId {
        let f = self.any("SymbolRef");
        let call = self.node("Call", vec![f]);
        self.node("SimpleStatement", vec![call])
    }

    fn declare(&mut self, name: &str, sym: u64) -> NodeId {
        let v = self.var("SymbolVar", name, sym);
        let init = self.any("Atom");
        let def = self.node("VarDef", vec![v, init]);
        self.node("Var", vec![def])
    }

    /// Statements for one variable following template `t`. Every template
    /// uses three occurrences and draws all other values from one pool.
    fn template(&mut self, t: usize, sym: u64) -> Vec<NodeId> {
        let name = TEMPLATE_NAMES[t];
        match t {
            0 => {
                // var d = _; while (!d) { f(); if (g()) { d = _; } }
                let decl = self.declare(name, sym);
                let r = self.var("SymbolRef", name, sym);
                let not = self.node("UnaryPrefix!", vec![r]);
                let work = self.call_stmt();
                let f = self.any("SymbolRef");
                let cond = self.node("Call", vec![f]);
                let w = self.var("SymbolRef", name, sym);
                let val = self.any("Atom");
                let assign = self.node("Assign=", vec![w, val]);
                let stmt = self.node("SimpleStatement", vec![assign]);
                let body_if = self.node("If", vec![cond, stmt]);
                let body = self.node("BlockStatement", vec![work, body_if]);
                vec![decl, self.node("While", vec![not, body])]
            }
            1 => {
                // var d = _; for (x in y) { if (x === z) d = _; } return d;
                let decl = self.declare(name, sym);
                let x = self.any("SymbolRef");
                let y = self.any("SymbolRef");
                let l = self.any("SymbolRef");
                let r = self.any("SymbolRef");
                let test = self.node("Binary===", vec![l, r]);
                let w = self.var("SymbolRef", name, sym);
                let val = self.any("Atom");
                let assign = self.node("Assign=", vec![w, val]);
                let stmt = self.node("SimpleStatement", vec![assign]);
                let body_if = self.node("If", vec![test, stmt]);
                let for_in = self.node("ForIn", vec![x, y, body_if]);
                let ret = self.var("SymbolRef", name, sym);
                vec![decl, for_in, self.node("Return", vec![ret])]
            }
            2 => {
                // var d = _; while (d < x) { f(); d++; }
                let decl = self.declare(name, sym);
                let l = self.var("SymbolRef", name, sym);
                let bound = self.any("SymbolRef");
                let test = self.node("Binary<", vec![l, bound]);
                let work = self.call_stmt();
                let w = self.var("SymbolRef", name, sym);
                let inc = self.node("UnaryPostfix++", vec![w]);
                let step = self.node("SimpleStatement", vec![inc]);
                let body = self.node("BlockStatement", vec![work, step]);
                vec![decl, self.node("While", vec![test, body])]
            }
            _ => {
                // var d = f(x); if (d) return d;
                let v = self.var("SymbolVar", name, sym);
                let f = self.any("SymbolRef");
                let x = self.any("SymbolRef");
                let call = self.node("Call", vec![f, x]);
                let def = self.node("VarDef", vec![v, call]);
                let decl = self.node("Var", vec![def]);
                let test = self.var("SymbolRef", name, sym);
                let ret_v = self.var("SymbolRef", name, sym);
                let ret = self.node("Return", vec![ret_v]);
                vec![decl, self.node("If", vec![test, ret])]
            }
        }
    }
}

/// One program: a function whose body declares one to three variables, each
/// used according to a distinct template, with unrelated calls mixed in.
pub fn separable_program(rng: &mut impl Rng) -> SyntaxTree {
    let mut p = Program {
        b: TreeBuilder::new(),
        rng,
    };
    let mut templates = [0, 1, 2, 3];
    templates.shuffle(p.rng);
    let count = p.rng.gen_range(1..=3);
    let mut stmts = Vec::new();
    for (sym, &t) in templates[..count].iter().enumerate() {
        if p.rng.gen_bool(0.5) {
            stmts.push(p.call_stmt());
        }
        stmts.extend(p.template(t, sym as u64));
    }
    if p.rng.gen_bool(0.5) {
        stmts.push(p.call_stmt());
    }
    let name = p.any("SymbolDefun");
    let block = p.node("BlockStatement", stmts);
    let defun = p.node("Defun", vec![name, block]);
    let top = p.node("Toplevel", vec![defun]);
    p.b.finish(top).expect("generated programs are well formed")
}

pub fn separable_corpus(rng: &mut impl Rng, n: usize) -> Vec<SyntaxTree> {
    (0..n).map(|_| separable_program(rng)).collect()
}

/// (name, context) pairs with strongly varying association: `words` names,
/// `contexts` contexts, and each cell's count drawn between 1 and `max`.
pub fn cooccurrence_pairs(rng: &mut impl Rng, words: usize, contexts: usize, max: u32) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for w in 0..words {
        for c in 0..contexts {
            let u: f64 = rng.gen();
            let n = 1 + (u.powi(3) * (max - 1) as f64).round() as u32;
            for _ in 0..n {
                out.push((format!("w{w}"), format!("c{c}")));
            }
        }
    }
    out.shuffle(rng);
    out
}
