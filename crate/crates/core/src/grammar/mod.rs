//! SQL context-free grammar, abstract syntax trees over it, and the text
//! front end (parser, renderer, exact-match canonicalization).

mod ast;
mod canon;
mod render;
mod sample;
mod sql;

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use thiserror::Error;

pub use ast::{Action, Ast, AstError, AstNode};
pub use canon::{canonical_key, exact_match};
pub use render::{render_sql, RenderError};
pub use sample::{sample_ast, AstSampler};
pub use sql::{parse_sql, Span, SqlError};

const DEFAULT_GRAMMAR: &str = include_str!("default.grammar");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("empty grammar")]
    Empty,
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("undefined nonterminal `{0}`")]
    UndefinedNonterminal(String),
    #[error("duplicate rule `{0}`")]
    DuplicateRule(String),
}

/// Terminal node kinds; their payload is bound to the schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TerminalKind {
    Table,
    Column,
    Value,
}

impl TerminalKind {
    pub const ALL: [TerminalKind; 3] = [TerminalKind::Table, TerminalKind::Column, TerminalKind::Value];

    pub fn as_str(self) -> &'static str {
        match self {
            TerminalKind::Table => "table_id",
            TerminalKind::Column => "column_id",
            TerminalKind::Value => "value",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Symbol {
    Nonterminal(usize),
    Terminal(TerminalKind),
    Keyword(String),
}

/// Type of an AST node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Nonterminal(usize),
    Terminal(TerminalKind),
}

impl NodeKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, NodeKind::Terminal(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarRule {
    pub id: usize,
    pub lhs: usize,
    pub rhs: Vec<Symbol>,
}

impl GrammarRule {
    /// Kinds of the children a node expanded by this rule has, in order.
    pub fn child_kinds(&self) -> impl Iterator<Item = NodeKind> + '_ {
        self.rhs.iter().filter_map(|s| match s {
            Symbol::Nonterminal(n) => Some(NodeKind::Nonterminal(*n)),
            Symbol::Terminal(t) => Some(NodeKind::Terminal(*t)),
            Symbol::Keyword(_) => None,
        })
    }

    pub fn arity(&self) -> usize {
        self.child_kinds().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    nonterminals: Vec<String>,
    rules: Vec<GrammarRule>,
    by_lhs: Vec<Vec<usize>>,
}

impl Grammar {
    /// Parses the line-oriented `Lhs := sym ... | ...` format.
    pub fn load(text: &str) -> Result<Grammar, GrammarError> {
        let mut alternatives: Vec<(String, Vec<RawSym>)> = Vec::new();
        let mut current: Option<String> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw_line).trim();
            if line.is_empty() {
                continue;
            }
            let (lhs, rest) = if let Some(rest) = line.strip_prefix('|') {
                let lhs = current.clone().ok_or_else(|| GrammarError::Syntax {
                    line: line_no,
                    msg: "continuation without a left-hand side".into(),
                })?;
                (lhs, rest.to_string())
            } else {
                let (lhs, rest) = line
                    .split_once(":=")
                    .ok_or_else(|| GrammarError::Syntax { line: line_no, msg: "expected `:=`".into() })?;
                let lhs = lhs.trim();
                if !is_identifier(lhs) {
                    return Err(GrammarError::Syntax {
                        line: line_no,
                        msg: format!("invalid nonterminal name `{lhs}`"),
                    });
                }
                current = Some(lhs.to_string());
                (lhs.to_string(), rest.to_string())
            };
            for alt in split_alternatives(&rest, line_no)? {
                let syms = tokenize_alternative(&alt, line_no)?;
                alternatives.push((lhs.clone(), syms));
            }
        }
        if alternatives.is_empty() {
            return Err(GrammarError::Empty);
        }

        let mut nonterminals: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (lhs, _) in &alternatives {
            if !index.contains_key(lhs) {
                index.insert(lhs.clone(), nonterminals.len());
                nonterminals.push(lhs.clone());
            }
        }

        let mut rules: Vec<GrammarRule> = Vec::with_capacity(alternatives.len());
        for (lhs, syms) in alternatives {
            let mut rhs = Vec::with_capacity(syms.len());
            for s in syms {
                rhs.push(match s {
                    RawSym::Name(n) => {
                        Symbol::Nonterminal(*index.get(&n).ok_or(GrammarError::UndefinedNonterminal(n))?)
                    }
                    RawSym::Terminal(t) => Symbol::Terminal(t),
                    RawSym::Keyword(k) => Symbol::Keyword(k),
                });
            }
            let rule = GrammarRule { id: rules.len(), lhs: index[&lhs], rhs };
            if rules.iter().any(|r| r.lhs == rule.lhs && r.rhs == rule.rhs) {
                let g = Grammar { nonterminals: nonterminals.clone(), rules: Vec::new(), by_lhs: Vec::new() };
                return Err(GrammarError::DuplicateRule(g.describe_rule(&rule)));
            }
            rules.push(rule);
        }

        let mut by_lhs = vec![Vec::new(); nonterminals.len()];
        for r in &rules {
            by_lhs[r.lhs].push(r.id);
        }
        Ok(Grammar { nonterminals, rules, by_lhs })
    }

    /// The shipped grammar, parsed once.
    pub fn builtin() -> &'static Grammar {
        static BUILTIN: OnceLock<Grammar> = OnceLock::new();
        BUILTIN.get_or_init(|| Grammar::load(DEFAULT_GRAMMAR).expect("default grammar is valid"))
    }

    pub fn default_text() -> &'static str {
        DEFAULT_GRAMMAR
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn rules(&self) -> &[GrammarRule] {
        &self.rules
    }

    pub fn rule(&self, id: usize) -> &GrammarRule {
        &self.rules[id]
    }

    pub fn num_rules(&self) -> usize {
        self.rules.len()
    }

    pub fn rules_for(&self, nonterminal: usize) -> &[usize] {
        &self.by_lhs[nonterminal]
    }

    pub fn num_nonterminals(&self) -> usize {
        self.nonterminals.len()
    }

    pub fn nonterminal_name(&self, n: usize) -> &str {
        &self.nonterminals[n]
    }

    pub fn nonterminal(&self, name: &str) -> Option<usize> {
        self.nonterminals.iter().position(|n| n == name)
    }

    /// |V|: nonterminals plus the three terminal kinds.
    pub fn num_kinds(&self) -> usize {
        self.nonterminals.len() + TerminalKind::ALL.len()
    }

    /// Dense index of a node kind in `0..num_kinds()`.
    pub fn kind_index(&self, kind: NodeKind) -> usize {
        match kind {
            NodeKind::Nonterminal(n) => n,
            NodeKind::Terminal(t) => self.nonterminals.len() + TerminalKind::ALL.iter().position(|&x| x == t).unwrap(),
        }
    }

    pub fn kind_name(&self, kind: NodeKind) -> &str {
        match kind {
            NodeKind::Nonterminal(n) => &self.nonterminals[n],
            NodeKind::Terminal(t) => t.as_str(),
        }
    }

    /// Every keyword appearing in any rule, uppercase.
    pub fn keywords(&self) -> Vec<&str> {
        let mut kws: Vec<&str> = self
            .rules
            .iter()
            .flat_map(|r| r.rhs.iter())
            .filter_map(|s| match s {
                Symbol::Keyword(k) => Some(k.as_str()),
                _ => None,
            })
            .collect();
        kws.sort_unstable();
        kws.dedup();
        kws
    }

    pub fn describe_rule(&self, rule: &GrammarRule) -> String {
        let mut out = format!("{} :=", self.nonterminals[rule.lhs]);
        if rule.rhs.is_empty() {
            out.push_str(" %empty");
        }
        for s in &rule.rhs {
            out.push(' ');
            match s {
                Symbol::Nonterminal(n) => out.push_str(&self.nonterminals[*n]),
                Symbol::Terminal(t) => {
                    out.push('<');
                    out.push_str(t.as_str());
                    out.push('>');
                }
                Symbol::Keyword(k) => {
                    out.push('"');
                    out.push_str(k);
                    out.push('"');
                }
            }
        }
        out
    }

    /// Minimum derivation height of each nonterminal (a terminal has height 0,
    /// a node whose rule has no children has height 1).
    pub fn min_heights(&self) -> Vec<usize> {
        let mut h = vec![usize::MAX; self.nonterminals.len()];
        loop {
            let mut changed = false;
            for r in &self.rules {
                let mut best = 0usize;
                let mut ok = true;
                for k in r.child_kinds() {
                    let ch = match k {
                        NodeKind::Terminal(_) => 0,
                        NodeKind::Nonterminal(n) => h[n],
                    };
                    if ch == usize::MAX {
                        ok = false;
                        break;
                    }
                    best = best.max(ch);
                }
                if ok && best + 1 < h[r.lhs] {
                    h[r.lhs] = best + 1;
                    changed = true;
                }
            }
            if !changed {
                return h;
            }
        }
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rules {
            writeln!(f, "{:>3}  {}", r.id, self.describe_rule(r))?;
        }
        Ok(())
    }
}

enum RawSym {
    Name(String),
    Terminal(TerminalKind),
    Keyword(String),
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '#' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic()) && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn split_alternatives(rest: &str, line: usize) -> Result<Vec<String>, GrammarError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_quote = false;
    for c in rest.chars() {
        match c {
            '"' => {
                in_quote = !in_quote;
                cur.push(c);
            }
            '|' if !in_quote => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    if in_quote {
        return Err(GrammarError::Syntax { line, msg: "unterminated keyword quote".into() });
    }
    out.push(cur);
    Ok(out)
}

fn tokenize_alternative(alt: &str, line: usize) -> Result<Vec<RawSym>, GrammarError> {
    let err = |msg: String| GrammarError::Syntax { line, msg };
    let mut syms = Vec::new();
    let mut saw_empty = false;
    let mut rest = alt.trim_start();
    while !rest.is_empty() {
        if let Some(stripped) = rest.strip_prefix('"') {
            let end = stripped.find('"').ok_or_else(|| err("unterminated keyword quote".into()))?;
            let kw = &stripped[..end];
            if kw.is_empty() || kw.contains(char::is_whitespace) {
                return Err(err(format!("invalid keyword `{kw}`")));
            }
            syms.push(RawSym::Keyword(kw.to_string()));
            rest = stripped[end + 1..].trim_start();
            continue;
        }
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let word = &rest[..end];
        rest = rest[end..].trim_start();
        match word {
            "%empty" => saw_empty = true,
            "<table_id>" => syms.push(RawSym::Terminal(TerminalKind::Table)),
            "<column_id>" => syms.push(RawSym::Terminal(TerminalKind::Column)),
            "<value>" => syms.push(RawSym::Terminal(TerminalKind::Value)),
            w if is_identifier(w) => syms.push(RawSym::Name(w.to_string())),
            w => return Err(err(format!("unexpected symbol `{w}`"))),
        }
    }
    if saw_empty && !syms.is_empty() {
        return Err(err("%empty must stand alone".into()));
    }
    if !saw_empty && syms.is_empty() {
        return Err(err("empty alternative (write %empty)".into()));
    }
    Ok(syms)
}
