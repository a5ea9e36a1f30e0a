//! Boolean s-expression query language.
//!
//! Grammar: `expr := atom | '(' op expr+ ')'` with `op ∈ {and, or}` and
//! `atom := prefix ':' value`. Execution has exact set semantics over the
//! inverted index and reports a deterministic CPU-cost proxy (posting-list
//! elements advanced plus term lookups), which the rewriter's budget check
//! relies on.

mod exec;
mod parser;

pub use exec::{cost_of, execute, CostReport, ExecutionResult};
pub use parser::{parse, ParseError, ParseErrorKind};

use crate::index::Term;

/// Query AST. Operator children are never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SExpr {
    Term(Term),
    And(Vec<SExpr>),
    Or(Vec<SExpr>),
}

impl SExpr {
    /// Builds an `and` node. Panics on empty children; callers construct
    /// operator bodies from known-non-empty lists.
    pub fn and(children: Vec<SExpr>) -> SExpr {
        assert!(!children.is_empty(), "and requires at least one child");
        SExpr::And(children)
    }

    /// Builds an `or` node. Panics on empty children.
    pub fn or(children: Vec<SExpr>) -> SExpr {
        assert!(!children.is_empty(), "or requires at least one child");
        SExpr::Or(children)
    }

    /// Canonical rendering; `parse` inverts it exactly.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out);
        out
    }

    fn render_into(&self, out: &mut String) {
        match self {
            SExpr::Term(t) => out.push_str(&t.canonical()),
            SExpr::And(children) | SExpr::Or(children) => {
                out.push('(');
                out.push_str(if matches!(self, SExpr::And(_)) {
                    "and"
                } else {
                    "or"
                });
                for c in children {
                    out.push(' ');
                    c.render_into(out);
                }
                out.push(')');
            }
        }
    }
}

impl std::fmt::Display for SExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.render())
    }
}
