//! SQL text to [`Ast`], driven by the loaded grammar.
//!
//! Parsing is grammar-generic: every alternative of a nonterminal is tried and
//! all complete derivations are memoized per (nonterminal, position), so any
//! grammar without left recursion works. Literal constants become `<value>`
//! placeholders. Identifiers are resolved against the schema after parsing:
//! a nonterminal whose rule starts with the `SELECT` keyword opens a scope
//! holding the tables of its subtree (nested scopes excluded), and column
//! references resolve innermost scope first.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use super::{Action, Ast, Grammar, NodeKind, Symbol, TerminalKind};
use crate::schema::Schema;

/// Byte range into the SQL text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SqlError {
    #[error("unsupported construct at {span}: `{text}`")]
    Unsupported { span: Span, text: String },
    #[error("ambiguous parse under the grammar")]
    AmbiguousParse,
    #[error("unresolvable table `{name}` at {span}")]
    UnknownTable { name: String, span: Span },
    #[error("unresolvable column `{name}` at {span}")]
    UnknownColumn { name: String, span: Span },
    #[error("ambiguous column `{name}` at {span}")]
    AmbiguousColumn { name: String, span: Span },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Number,
    Str,
    Punct(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
}

const PUNCT: [&str; 14] = ["<=", ">=", "!=", "<>", "(", ")", ",", ".", "*", "=", "<", ">", ";", "-"];

fn lex(text: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Word(text[start..i].to_string()), span: Span { start, end: i } });
        } else if c.is_ascii_digit() {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            out.push(Token { tok: Tok::Number, span: Span { start, end: i } });
        } else if c == '\'' || c == '"' {
            i += 1;
            while i < bytes.len() && bytes[i] as char != c {
                i += 1;
            }
            if i == bytes.len() {
                return Err(SqlError::Unsupported { span: Span { start, end: i }, text: text[start..].to_string() });
            }
            i += 1;
            out.push(Token { tok: Tok::Str, span: Span { start, end: i } });
        } else if let Some(p) = PUNCT.iter().find(|p| text[i..].starts_with(**p)) {
            i += p.len();
            let p: &'static str = if *p == "<>" { "!=" } else { p };
            out.push(Token { tok: Tok::Punct(p), span: Span { start, end: i } });
        } else {
            let end = start + c.len_utf8();
            return Err(SqlError::Unsupported { span: Span { start, end }, text: text[start..end].to_string() });
        }
    }
    // A negative number literal is a single value.
    let mut merged: Vec<Token> = Vec::with_capacity(out.len());
    for t in out {
        if t.tok == Tok::Number {
            if let Some(prev) = merged.last() {
                if prev.tok == Tok::Punct("-") && prev.span.end == t.span.start {
                    let start = prev.span.start;
                    merged.pop();
                    merged.push(Token { tok: Tok::Number, span: Span { start, end: t.span.end } });
                    continue;
                }
            }
        }
        merged.push(t);
    }
    if matches!(merged.last(), Some(Token { tok: Tok::Punct(";"), .. })) {
        merged.pop();
    }
    Ok(merged)
}

#[derive(Debug, Clone)]
enum Leaf {
    Table { name: String, alias: Option<String>, span: Span },
    Column { qualifier: Option<String>, name: String, span: Span },
    Value,
}

#[derive(Debug, Clone)]
enum Child {
    Node(Rc<RawNode>),
    Leaf(Leaf),
}

#[derive(Debug)]
struct RawNode {
    rule: usize,
    children: Vec<Child>,
}

type Derivations = Rc<Vec<(usize, Rc<RawNode>)>>;

struct Parser<'a> {
    grammar: &'a Grammar,
    tokens: &'a [Token],
    text: &'a str,
    keywords: Vec<String>,
    memo: HashMap<(usize, usize), Derivations>,
    active: Vec<(usize, usize)>,
    furthest: usize,
}

impl<'a> Parser<'a> {
    fn word_at(&self, pos: usize) -> Option<&str> {
        match self.tokens.get(pos).map(|t| &t.tok) {
            Some(Tok::Word(w)) => Some(w.as_str()),
            _ => None,
        }
    }

    fn is_keyword(&self, word: &str) -> bool {
        self.keywords.iter().any(|k| k.eq_ignore_ascii_case(word))
    }

    fn identifier_at(&self, pos: usize) -> Option<String> {
        let w = self.word_at(pos)?;
        if self.is_keyword(w) || w.eq_ignore_ascii_case("value") || w.eq_ignore_ascii_case("as") {
            None
        } else {
            Some(w.to_ascii_lowercase())
        }
    }

    fn fail(&mut self, pos: usize) {
        self.furthest = self.furthest.max(pos);
    }

    fn match_keyword(&mut self, kw: &str, pos: usize) -> Option<usize> {
        let ok = match self.tokens.get(pos).map(|t| &t.tok) {
            Some(Tok::Word(w)) => w.eq_ignore_ascii_case(kw),
            Some(Tok::Punct(p)) => *p == kw,
            _ => false,
        };
        if ok {
            Some(pos + 1)
        } else {
            self.fail(pos);
            None
        }
    }

    fn match_terminal(&mut self, kind: TerminalKind, pos: usize) -> Option<(usize, Leaf)> {
        let r = match kind {
            TerminalKind::Value => match self.tokens.get(pos).map(|t| &t.tok) {
                Some(Tok::Number) | Some(Tok::Str) => Some((pos + 1, Leaf::Value)),
                Some(Tok::Word(w)) if w.eq_ignore_ascii_case("value") => Some((pos + 1, Leaf::Value)),
                _ => None,
            },
            TerminalKind::Table => self.identifier_at(pos).map(|name| {
                let span = self.tokens[pos].span;
                match self.word_at(pos + 1) {
                    Some(w) if w.eq_ignore_ascii_case("as") => match self.identifier_at(pos + 2) {
                        Some(alias) => (pos + 3, Leaf::Table { name, alias: Some(alias), span }),
                        None => (pos + 1, Leaf::Table { name, alias: None, span }),
                    },
                    _ => (pos + 1, Leaf::Table { name, alias: None, span }),
                }
            }),
            TerminalKind::Column => self.identifier_at(pos).map(|first| {
                let dotted = matches!(self.tokens.get(pos + 1).map(|t| &t.tok), Some(Tok::Punct(".")));
                match (dotted, self.identifier_at(pos + 2)) {
                    (true, Some(name)) => {
                        let span = Span { start: self.tokens[pos].span.start, end: self.tokens[pos + 2].span.end };
                        (pos + 3, Leaf::Column { qualifier: Some(first), name, span })
                    }
                    _ => (pos + 1, Leaf::Column { qualifier: None, name: first, span: self.tokens[pos].span }),
                }
            }),
        };
        if r.is_none() {
            self.fail(pos);
        }
        r
    }

    fn parse_nonterminal(&mut self, nt: usize, pos: usize) -> Derivations {
        if let Some(d) = self.memo.get(&(nt, pos)) {
            return d.clone();
        }
        if self.active.contains(&(nt, pos)) {
            return Rc::new(Vec::new());
        }
        self.active.push((nt, pos));
        let mut results = Vec::new();
        for &rid in self.grammar.rules_for(nt) {
            let rhs = self.grammar.rule(rid).rhs.clone();
            let mut partial: Vec<(usize, Vec<Child>)> = vec![(pos, Vec::new())];
            for sym in &rhs {
                let mut next = Vec::new();
                for (p, kids) in &partial {
                    match sym {
                        Symbol::Keyword(k) => {
                            if let Some(q) = self.match_keyword(k, *p) {
                                next.push((q, kids.clone()));
                            }
                        }
                        Symbol::Terminal(t) => {
                            if let Some((q, leaf)) = self.match_terminal(*t, *p) {
                                let mut k2 = kids.clone();
                                k2.push(Child::Leaf(leaf));
                                next.push((q, k2));
                            }
                        }
                        Symbol::Nonterminal(n) => {
                            let subs = self.parse_nonterminal(*n, *p);
                            for (q, node) in subs.iter() {
                                let mut k2 = kids.clone();
                                k2.push(Child::Node(node.clone()));
                                next.push((*q, k2));
                            }
                        }
                    }
                }
                partial = next;
                if partial.is_empty() {
                    break;
                }
            }
            for (end, children) in partial {
                results.push((end, Rc::new(RawNode { rule: rid, children })));
            }
        }
        self.active.pop();
        let d = Rc::new(results);
        self.memo.insert((nt, pos), d.clone());
        d
    }

    fn unsupported_at(&self, pos: usize) -> SqlError {
        match self.tokens.get(pos) {
            Some(t) => SqlError::Unsupported { span: t.span, text: self.text[t.span.start..t.span.end].to_string() },
            None => SqlError::Unsupported {
                span: Span { start: self.text.len(), end: self.text.len() },
                text: "<end of input>".into(),
            },
        }
    }
}

/// Parses `sql` into a complete AST bound to `schema`.
pub fn parse_sql(grammar: &Grammar, sql: &str, schema: &Schema) -> Result<Ast, SqlError> {
    let tokens = lex(sql)?;
    let mut parser = Parser {
        grammar,
        tokens: &tokens,
        text: sql,
        keywords: grammar.keywords().into_iter().map(str::to_string).collect(),
        memo: HashMap::new(),
        active: Vec::new(),
        furthest: 0,
    };
    let derivations = parser.parse_nonterminal(grammar.start(), 0);
    let complete: Vec<&Rc<RawNode>> =
        derivations.iter().filter(|(end, _)| *end == tokens.len()).map(|(_, n)| n).collect();
    let raw = match complete.as_slice() {
        [] => {
            let longest = derivations.iter().map(|(e, _)| *e).max().unwrap_or(0);
            return Err(parser.unsupported_at(parser.furthest.max(longest)));
        }
        [one] => (*one).clone(),
        _ => return Err(SqlError::AmbiguousParse),
    };
    build_ast(grammar, &raw, schema)
}

fn build_ast(grammar: &Grammar, raw: &Rc<RawNode>, schema: &Schema) -> Result<Ast, SqlError> {
    let mut ast = Ast::new(grammar);
    let mut leaves: Vec<(usize, Leaf)> = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    queue.push_back((0usize, raw.clone()));
    while let Some((id, node)) = queue.pop_front() {
        let kids = ast.expand(id, Action::ApplyRule(node.rule), grammar).expect("derivation follows the grammar");
        for (kid, child) in kids.into_iter().zip(node.children.iter()) {
            match child {
                Child::Node(n) => queue.push_back((kid, n.clone())),
                Child::Leaf(l) => leaves.push((kid, l.clone())),
            }
        }
    }

    // Scope nodes: rules whose right-hand side begins with SELECT.
    let is_scope = |i: usize| match ast.node(i).action {
        Some(Action::ApplyRule(r)) => matches!(
            grammar.rule(r).rhs.first(),
            Some(Symbol::Keyword(k)) if k.eq_ignore_ascii_case("SELECT")
        ),
        _ => false,
    };
    let enclosing_scopes = |mut i: usize| {
        let mut out = Vec::new();
        while let Some(p) = ast.parent(i) {
            if is_scope(p) {
                out.push(p);
            }
            i = p;
        }
        out
    };

    let mut tables: HashMap<usize, usize> = HashMap::new();
    let mut scope_entries: HashMap<usize, Vec<(String, usize)>> = HashMap::new();
    for (id, leaf) in &leaves {
        if let Leaf::Table { name, alias, span } = leaf {
            let t =
                schema.table_index(name).ok_or_else(|| SqlError::UnknownTable { name: name.clone(), span: *span })?;
            tables.insert(*id, t);
            if let Some(&scope) = enclosing_scopes(*id).first() {
                let entries = scope_entries.entry(scope).or_default();
                entries.push((name.clone(), t));
                if let Some(a) = alias {
                    entries.push((a.clone(), t));
                }
            }
        }
    }

    let mut resolved: Vec<(usize, Action)> = Vec::new();
    for (id, leaf) in &leaves {
        let action = match leaf {
            Leaf::Value => Action::EmitValue,
            Leaf::Table { .. } => Action::SelectTable(tables[id]),
            Leaf::Column { qualifier, name, span } => Action::SelectColumn(resolve_column(
                schema,
                &enclosing_scopes(*id),
                &scope_entries,
                qualifier.as_deref(),
                name,
                *span,
            )?),
        };
        resolved.push((*id, action));
    }
    for (id, action) in resolved {
        ast.expand(id, action, grammar).expect("terminal kinds match");
    }
    debug_assert!(ast.node(ast.root()).kind == NodeKind::Nonterminal(grammar.start()));
    Ok(ast)
}

fn resolve_column(
    schema: &Schema,
    scopes: &[usize],
    entries: &HashMap<usize, Vec<(String, usize)>>,
    qualifier: Option<&str>,
    name: &str,
    span: Span,
) -> Result<usize, SqlError> {
    let unknown = || SqlError::UnknownColumn {
        name: match qualifier {
            Some(q) => format!("{q}.{name}"),
            None => name.to_string(),
        },
        span,
    };
    let empty = Vec::new();
    match qualifier {
        Some(q) => {
            let table = scopes
                .iter()
                .find_map(|s| entries.get(s).unwrap_or(&empty).iter().find(|(n, _)| n == q).map(|&(_, t)| t))
                .or_else(|| schema.table_index(q))
                .ok_or_else(unknown)?;
            schema.column_index(table, name).ok_or_else(unknown)
        }
        None => {
            for s in scopes {
                let mut candidates: Vec<usize> = entries.get(s).unwrap_or(&empty).iter().map(|&(_, t)| t).collect();
                candidates.sort_unstable();
                candidates.dedup();
                let hits: Vec<usize> = candidates.iter().filter_map(|&t| schema.column_index(t, name)).collect();
                match hits.len() {
                    0 => continue,
                    1 => return Ok(hits[0]),
                    _ => return Err(SqlError::AmbiguousColumn { name: name.to_string(), span }),
                }
            }
            if scopes.is_empty() {
                let hits: Vec<usize> = (0..schema.num_tables()).filter_map(|t| schema.column_index(t, name)).collect();
                return match hits.len() {
                    0 => Err(unknown()),
                    1 => Ok(hits[0]),
                    _ => Err(SqlError::AmbiguousColumn { name: name.to_string(), span }),
                };
            }
            Err(unknown())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::scientists_schema;

    fn parse(sql: &str) -> Result<Ast, SqlError> {
        parse_sql(Grammar::builtin(), sql, &scientists_schema())
    }

    fn rule_lhs_names(ast: &Ast) -> Vec<String> {
        let g = Grammar::builtin();
        ast.nodes().iter().map(|n| g.kind_name(n.kind).to_string()).collect()
    }

    #[test]
    fn count_star_structure() {
        let g = Grammar::builtin();
        let ast = parse("SELECT count(*) FROM scientists").unwrap();
        ast.validate(g, Some(&scientists_schema())).unwrap();
        // Derivation by hand: Root -> Query -> Select -> (Distinct SelList From Where GroupBy OrderBy),
        // SelList -> ColUnit -> COUNT(*), From -> <table_id>.
        assert_eq!(
            rule_lhs_names(&ast),
            vec![
                "Root", "Query", "Select", "Distinct", "SelList", "From", "Where", "GroupBy", "OrderBy", "ColUnit",
                "table_id"
            ]
        );
        let star = g.rules().iter().find(|r| g.describe_rule(r) == "ColUnit := \"COUNT\" \"(\" \"*\" \")\"").unwrap();
        assert_eq!(ast.node(9).action, Some(Action::ApplyRule(star.id)));
        assert_eq!(ast.node(10).action, Some(Action::SelectTable(0)));
    }

    #[test]
    fn literal_becomes_placeholder() {
        let ast = parse("SELECT name FROM scientists WHERE ssn = 5").unwrap();
        let values: Vec<_> = ast.nodes().iter().filter(|n| n.kind == NodeKind::Terminal(TerminalKind::Value)).collect();
        assert_eq!(values.len(), 1);
        assert_eq!(values[0].action, Some(Action::EmitValue));
        let cols: Vec<_> = ast
            .nodes()
            .iter()
            .filter_map(|n| match n.action {
                Some(Action::SelectColumn(c)) => Some(c),
                _ => None,
            })
            .collect();
        assert_eq!(cols, vec![1, 0]);
    }

    #[test]
    fn window_is_unsupported() {
        let err = parse("SELECT x FROM t WINDOW w AS (PARTITION BY y)").unwrap_err();
        match err {
            SqlError::Unsupported { text, span } => {
                assert_eq!(text, "WINDOW");
                assert_eq!(span, Span { start: 16, end: 22 });
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_names() {
        assert!(matches!(parse("SELECT name FROM nobody"), Err(SqlError::UnknownTable { .. })));
        assert!(matches!(parse("SELECT nothing FROM scientists"), Err(SqlError::UnknownColumn { .. })));
    }

    #[test]
    fn ambiguous_unqualified_column() {
        let err = parse(
            "SELECT name FROM scientists JOIN assigned_to ON scientists.ssn = assigned_to.scientist \
             JOIN projects ON assigned_to.project = projects.code",
        )
        .unwrap_err();
        assert!(matches!(err, SqlError::AmbiguousColumn { ref name, .. } if name == "name"));
    }

    #[test]
    fn aliases_resolve() {
        let ast =
            parse("SELECT T1.name FROM scientists AS T1 JOIN assigned_to AS T2 ON T1.ssn = T2.scientist").unwrap();
        let cols: Vec<_> = ast
            .nodes()
            .iter()
            .filter_map(|n| match n.action {
                Some(Action::SelectColumn(c)) => Some(c),
                _ => None,
            })
            .collect();
        assert_eq!(cols, vec![1, 0, 5]);
    }

    #[test]
    fn nested_scope_prefers_inner_tables() {
        let ast =
            parse("SELECT name FROM scientists WHERE ssn IN (SELECT scientist FROM assigned_to WHERE project = 'x')")
                .unwrap();
        ast.validate(Grammar::builtin(), Some(&scientists_schema())).unwrap();
    }

    #[test]
    fn trailing_semicolon_and_case() {
        let a = parse("select NAME from Scientists;").unwrap();
        let b = parse("SELECT name FROM scientists").unwrap();
        assert!(a.structurally_equal(&b));
    }

    #[test]
    fn string_and_negative_literals() {
        parse("SELECT name FROM scientists WHERE name LIKE '%a%'").unwrap();
        parse("SELECT name FROM scientists WHERE ssn > -3").unwrap();
        parse("SELECT name FROM scientists WHERE ssn BETWEEN 1 AND 2 AND name = \"bob\"").unwrap();
    }

    #[test]
    fn unterminated_string() {
        assert!(matches!(parse("SELECT name FROM scientists WHERE name = 'oops"), Err(SqlError::Unsupported { .. })));
    }
}
