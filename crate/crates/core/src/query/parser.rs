//! Recursive-descent parser for the s-expression query grammar.
//!
//! Errors carry the byte offset of the offending token so callers can
//! point at the exact position in the input string.

use thiserror::Error;

use super::SExpr;
use crate::index::{Term, TermPrefix};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    /// Unexpected `)` or a `(` that is never closed.
    UnbalancedParen,
    /// Operator with no children, e.g. `(and)`.
    EmptyOperatorBody,
    UnknownOperator(String),
    UnknownPrefix(String),
    /// Atom without a `:` separator.
    MissingColon(String),
    /// Atom with an empty or whitespace value.
    EmptyValue(String),
    /// Social prefix whose value is not a decimal node id.
    InvalidNodeId(String),
    /// Input continues after a complete expression.
    TrailingInput,
    /// Input ended where an expression was required.
    UnexpectedEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: {kind:?}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
}

impl ParseError {
    fn new(kind: ParseErrorKind, offset: usize) -> Self {
        ParseError { kind, offset }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token<'a> {
    LParen,
    RParen,
    Atom(&'a str),
}

fn lex(input: &str) -> Vec<(Token<'_>, usize)> {
    let mut tokens = Vec::new();
    let bytes = input.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c == b'(' {
            tokens.push((Token::LParen, i));
            i += 1;
        } else if c == b')' {
            tokens.push((Token::RParen, i));
            i += 1;
        } else {
            let start = i;
            while i < bytes.len()
                && !bytes[i].is_ascii_whitespace()
                && bytes[i] != b'('
                && bytes[i] != b')'
            {
                i += 1;
            }
            tokens.push((Token::Atom(&input[start..i]), start));
        }
    }
    tokens
}

fn parse_atom(atom: &str, offset: usize) -> Result<Term, ParseError> {
    let Some((name, value)) = atom.split_once(':') else {
        return Err(ParseError::new(
            ParseErrorKind::MissingColon(atom.to_string()),
            offset,
        ));
    };
    let Some(prefix) = TermPrefix::from_name(name) else {
        return Err(ParseError::new(
            ParseErrorKind::UnknownPrefix(name.to_string()),
            offset,
        ));
    };
    if value.is_empty() {
        return Err(ParseError::new(
            ParseErrorKind::EmptyValue(atom.to_string()),
            offset,
        ));
    }
    match prefix {
        TermPrefix::Text => Term::text(value).map_err(|_| {
            ParseError::new(ParseErrorKind::EmptyValue(atom.to_string()), offset)
        }),
        _ => {
            let id: u64 = value.parse().map_err(|_| {
                ParseError::new(ParseErrorKind::InvalidNodeId(value.to_string()), offset)
            })?;
            Ok(Term::social(prefix, crate::graph::NodeId(id)).unwrap())
        }
    }
}

struct Parser<'a> {
    tokens: Vec<(Token<'a>, usize)>,
    pos: usize,
    input_len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<(Token<'a>, usize)> {
        self.tokens.get(self.pos).copied()
    }

    fn parse_expr(&mut self) -> Result<SExpr, ParseError> {
        match self.peek() {
            None => Err(ParseError::new(
                ParseErrorKind::UnexpectedEnd,
                self.input_len,
            )),
            Some((Token::RParen, off)) => {
                Err(ParseError::new(ParseErrorKind::UnbalancedParen, off))
            }
            Some((Token::Atom(a), off)) => {
                self.pos += 1;
                Ok(SExpr::Term(parse_atom(a, off)?))
            }
            Some((Token::LParen, open_off)) => {
                self.pos += 1;
                let (op_is_and, _op_off) = match self.peek() {
                    Some((Token::Atom("and"), off)) => (true, off),
                    Some((Token::Atom("or"), off)) => (false, off),
                    Some((Token::Atom(other), off)) => {
                        return Err(ParseError::new(
                            ParseErrorKind::UnknownOperator(other.to_string()),
                            off,
                        ))
                    }
                    Some((_, off)) => {
                        return Err(ParseError::new(ParseErrorKind::UnbalancedParen, off))
                    }
                    None => {
                        return Err(ParseError::new(
                            ParseErrorKind::UnexpectedEnd,
                            self.input_len,
                        ))
                    }
                };
                self.pos += 1;
                let mut children = Vec::new();
                loop {
                    match self.peek() {
                        Some((Token::RParen, _)) => {
                            self.pos += 1;
                            break;
                        }
                        None => {
                            return Err(ParseError::new(
                                ParseErrorKind::UnbalancedParen,
                                self.input_len,
                            ))
                        }
                        Some(_) => children.push(self.parse_expr()?),
                    }
                }
                if children.is_empty() {
                    return Err(ParseError::new(
                        ParseErrorKind::EmptyOperatorBody,
                        open_off,
                    ));
                }
                Ok(if op_is_and {
                    SExpr::And(children)
                } else {
                    SExpr::Or(children)
                })
            }
        }
    }
}

/// Parses a query string into its AST.
pub fn parse(input: &str) -> Result<SExpr, ParseError> {
    let mut p = Parser {
        tokens: lex(input),
        pos: 0,
        input_len: input.len(),
    };
    let expr = p.parse_expr()?;
    if let Some((_, off)) = p.peek() {
        return Err(ParseError::new(ParseErrorKind::TrailingInput, off));
    }
    Ok(expr)
}
