//! Exact-match comparison of SQL ASTs.
//!
//! Order-insensitive components are sorted by their canonical text before
//! comparison: select items (`SelList` chains), conjuncts (`Conj` chains),
//! and the tables and join conditions of a `From`. Value placeholders always
//! compare equal. Nonterminals are looked up by name, so a custom grammar
//! without these names is compared purely structurally.

use super::{Action, Ast, Grammar, NodeKind, Symbol};

struct Names {
    sel_list: Option<usize>,
    conj: Option<usize>,
    from: Option<usize>,
    join_cond: Option<usize>,
}

/// Canonical comparison key of a complete AST.
pub fn canonical_key(grammar: &Grammar, ast: &Ast) -> String {
    let names = Names {
        sel_list: grammar.nonterminal("SelList"),
        conj: grammar.nonterminal("Conj"),
        from: grammar.nonterminal("From"),
        join_cond: grammar.nonterminal("JoinCond"),
    };
    key(grammar, ast, &names, ast.root())
}

/// True iff the canonical keys of `a` and `b` are equal.
pub fn exact_match(grammar: &Grammar, a: &Ast, b: &Ast) -> bool {
    canonical_key(grammar, a) == canonical_key(grammar, b)
}

fn chain_items(ast: &Ast, node: usize, list_kind: NodeKind, out: &mut Vec<usize>) {
    for &c in ast.children(node) {
        if ast.node(c).kind == list_kind {
            chain_items(ast, c, list_kind, out);
        } else {
            out.push(c);
        }
    }
}

fn key(grammar: &Grammar, ast: &Ast, names: &Names, node: usize) -> String {
    let n = ast.node(node);
    let action = match n.action {
        Some(a) => a,
        None => return "?".into(),
    };
    let rule = match action {
        Action::ApplyRule(r) => r,
        Action::SelectTable(t) => return format!("t{t}"),
        Action::SelectColumn(c) => return format!("c{c}"),
        Action::EmitValue => return "VALUE".into(),
    };
    let kind = n.kind;
    let is = |o: Option<usize>| o.map(NodeKind::Nonterminal) == Some(kind);

    if is(names.sel_list) || is(names.conj) {
        let mut items = Vec::new();
        chain_items(ast, node, kind, &mut items);
        let mut keys: Vec<String> = items.iter().map(|&i| key(grammar, ast, names, i)).collect();
        keys.sort();
        let sep = if is(names.conj) { " AND " } else { ", " };
        return format!("{{{}}}", keys.join(sep));
    }
    if is(names.from) {
        let mut keys: Vec<String> = ast.children(node).iter().map(|&i| key(grammar, ast, names, i)).collect();
        keys.sort();
        return format!("FROM{{{}}}", keys.join(" "));
    }
    if is(names.join_cond) {
        let mut sides: Vec<String> = ast.children(node).iter().map(|&i| key(grammar, ast, names, i)).collect();
        sides.sort();
        return format!("({})", sides.join(" = "));
    }

    let mut kids = ast.children(node).iter();
    let mut parts = Vec::new();
    for sym in &grammar.rule(rule).rhs {
        match sym {
            Symbol::Keyword(k) => parts.push(k.to_ascii_uppercase()),
            _ => {
                if let Some(&c) = kids.next() {
                    parts.push(key(grammar, ast, names, c));
                }
            }
        }
    }
    format!("[{}]", parts.join(" "))
}
