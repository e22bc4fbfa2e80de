use thiserror::Error;

use super::{Action, Ast, AstError, Grammar, Symbol};
use crate::schema::Schema;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error(transparent)]
    Invalid(#[from] AstError),
}

/// Canonical SQL text: uppercase keywords, lowercase `table.column`
/// identifiers, `VALUE` placeholders, single spaces, no trailing semicolon.
pub fn render_sql(grammar: &Grammar, ast: &Ast, schema: &Schema) -> Result<String, RenderError> {
    ast.validate(grammar, Some(schema))?;
    let mut tokens = Vec::new();
    emit(grammar, ast, schema, ast.root(), &mut tokens);
    Ok(join_tokens(&tokens))
}

pub(crate) fn emit(grammar: &Grammar, ast: &Ast, schema: &Schema, node: usize, out: &mut Vec<String>) {
    match ast.node(node).action.expect("validated") {
        Action::ApplyRule(r) => {
            let mut kids = ast.children(node).iter();
            for sym in &grammar.rule(r).rhs {
                match sym {
                    Symbol::Keyword(k) => out.push(k.to_ascii_uppercase()),
                    _ => emit(grammar, ast, schema, *kids.next().expect("validated"), out),
                }
            }
        }
        Action::SelectTable(t) => out.push(schema.table_name(t).to_string()),
        Action::SelectColumn(c) => out.push(schema.qualified_column_name(c)),
        Action::EmitValue => out.push("VALUE".to_string()),
    }
}

const CALLS: [&str; 5] = ["MAX", "MIN", "COUNT", "SUM", "AVG"];

pub(crate) fn join_tokens(tokens: &[String]) -> String {
    let mut out = String::new();
    let mut prev: Option<&str> = None;
    for t in tokens {
        let glue = match prev {
            None => true,
            Some(p) => p == "(" || t == ")" || t == "," || (t == "(" && CALLS.contains(&p)),
        };
        if !glue {
            out.push(' ');
        }
        out.push_str(t);
        prev = Some(t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_sql;
    use crate::schema::scientists_schema;

    fn canon(sql: &str) -> String {
        let g = Grammar::builtin();
        let s = scientists_schema();
        render_sql(g, &parse_sql(g, sql, &s).unwrap(), &s).unwrap()
    }

    #[test]
    fn count_star() {
        assert_eq!(canon("SELECT count(*) FROM scientists"), "SELECT COUNT(*) FROM scientists");
    }

    #[test]
    fn canonical_text_is_a_fixed_point() {
        let cases = [
            "select name from scientists where ssn = 5",
            "SELECT T1.name, count(*) FROM scientists AS T1 JOIN assigned_to AS T2 ON T1.ssn = T2.scientist \
             GROUP BY T1.name HAVING count(*) > 2 ORDER BY count(*) DESC LIMIT 3",
            "SELECT name FROM projects WHERE hours > (SELECT avg(hours) FROM projects)",
            "SELECT name FROM scientists UNION SELECT name FROM projects",
            "SELECT DISTINCT name FROM projects WHERE NOT hours < 3 OR (code = 'a' AND hours BETWEEN 1 AND 9)",
        ];
        for c in cases {
            let once = canon(c);
            assert_eq!(canon(&once), once, "not a fixed point: {c}");
        }
        assert_eq!(
            canon("select name from scientists where ssn = 5"),
            "SELECT scientists.name FROM scientists WHERE scientists.ssn = VALUE"
        );
    }

    #[test]
    fn where_conjunction_has_one_and() {
        let text = canon("SELECT name FROM scientists WHERE ssn = 1 AND name = 'x'");
        assert_eq!(text.matches(" AND ").count(), 1);
        assert_eq!(
            text,
            "SELECT scientists.name FROM scientists WHERE scientists.ssn = VALUE AND scientists.name = VALUE"
        );
    }

    #[test]
    fn order_and_subquery_spacing() {
        assert_eq!(
            canon("SELECT name FROM projects WHERE code IN (SELECT project FROM assigned_to) ORDER BY hours ASC"),
            "SELECT projects.name FROM projects WHERE projects.code IN (SELECT assigned_to.project FROM assigned_to) \
             ORDER BY projects.hours ASC"
        );
    }

    #[test]
    fn incomplete_ast_is_rejected() {
        let g = Grammar::builtin();
        let ast = Ast::new(g);
        assert_eq!(render_sql(g, &ast, &scientists_schema()), Err(RenderError::Invalid(AstError::Incomplete(0))));
    }
}
