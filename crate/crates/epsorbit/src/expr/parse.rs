//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! expr   := term { ("+" | "-") term }
//! term   := unary { ("*" | "/") unary }
//! unary  := "-" unary | power
//! power  := atom [ "^" unary ]          (exponent must fold to a constant)
//! atom   := number | ident | "(" expr ")"
//! ident  := variable | parameter
//!         | "log" "(" expr ")" | "exp" "(" expr ")"
//!         | "omega" "(" expr "," expr ")"   (second argument constant)
//! ```
//!
//! `log(u)` is represented as `-(-log u)` so the tree stays inside the fixed
//! grammar. Errors report the byte offset of the offending token.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use super::{c_add, c_const, c_div, c_mul, c_pow, const_value, Expression, Node};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        offset,
        message: message.into(),
    })
}

#[derive(Debug, Clone)]
pub(crate) struct ParseOptions {
    pub vars: Vec<String>,
    pub params: HashMap<String, f64>,
    pub allow_log: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            vars: vec!["x".to_string()],
            params: HashMap::new(),
            allow_log: true,
        }
    }
}

/// Parse a univariate expression in the variable `x`.
pub fn parse(src: &str) -> Result<Expression, ParseError> {
    let root = parse_root(src, &ParseOptions::default())?;
    Ok(Expression::from_root(root))
}

pub(crate) fn parse_root(src: &str, opts: &ParseOptions) -> Result<Arc<Node>, ParseError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
        opts,
    };
    let node = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return err(p.pos, "unexpected trailing input");
    }
    Ok(node)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    opts: &'a ParseOptions,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, ch: u8) -> Result<(), ParseError> {
        if self.peek() == Some(ch) {
            self.pos += 1;
            Ok(())
        } else {
            err(self.pos, format!("expected '{}'", ch as char))
        }
    }

    fn expr(&mut self) -> Result<Arc<Node>, ParseError> {
        let mut node = self.term()?;
        while let Some(op) = self.peek() {
            match op {
                b'+' => {
                    self.pos += 1;
                    node = c_add(node, self.term()?);
                }
                b'-' => {
                    self.pos += 1;
                    node = c_add(node, c_mul(c_const(-1.0), self.term()?));
                }
                _ => break,
            }
        }
        Ok(node)
    }

    fn term(&mut self) -> Result<Arc<Node>, ParseError> {
        let mut node = self.unary()?;
        while let Some(op) = self.peek() {
            match op {
                b'*' => {
                    self.pos += 1;
                    node = c_mul(node, self.unary()?);
                }
                b'/' => {
                    self.pos += 1;
                    node = c_div(node, self.unary()?);
                }
                _ => break,
            }
        }
        Ok(node)
    }

    fn unary(&mut self) -> Result<Arc<Node>, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(c_mul(c_const(-1.0), inner));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Arc<Node>, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            let caret = self.pos;
            self.pos += 1;
            let exp_node = self.unary()?;
            let Some(p) = const_value(&exp_node) else {
                return err(caret, "exponent must be a constant");
            };
            return Ok(c_pow(base, p));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Arc<Node>, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let node = self.expr()?;
                self.expect(b')')?;
                Ok(node)
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(c) => err(self.pos, format!("unexpected character '{}'", c as char)),
            None => err(self.pos, "unexpected end of input"),
        }
    }

    fn number(&mut self) -> Result<Arc<Node>, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if matches!(self.src.get(self.pos), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // not an exponent suffix after all (e.g. "2*exp(x)")
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match text.parse::<f64>() {
            Ok(v) => Ok(c_const(v)),
            Err(_) => err(start, format!("invalid number '{text}'")),
        }
    }

    fn ident(&mut self) -> Result<Arc<Node>, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if let Some(idx) = self.opts.vars.iter().position(|v| v == name) {
            return Ok(Arc::new(Node::Var(idx)));
        }
        match name {
            "log" => {
                if !self.opts.allow_log {
                    return err(start, "log is not allowed in this grammar");
                }
                self.expect(b'(')?;
                let arg = self.expr()?;
                self.expect(b')')?;
                // log u = -(-log u)
                Ok(c_mul(c_const(-1.0), Arc::new(Node::NegLog(arg))))
            }
            "exp" => {
                self.expect(b'(')?;
                let arg = self.expr()?;
                self.expect(b')')?;
                Ok(Arc::new(Node::Exp(arg)))
            }
            "omega" => {
                if !self.opts.allow_log {
                    return err(start, "omega is not allowed in this grammar");
                }
                self.expect(b'(')?;
                let arg = self.expr()?;
                self.expect(b',')?;
                self.skip_ws();
                let alpha_at = self.pos;
                let alpha_node = self.expr()?;
                self.expect(b')')?;
                let Some(alpha) = const_value(&alpha_node) else {
                    return err(alpha_at, "omega parameter must be a constant");
                };
                Ok(Arc::new(Node::Omega(arg, alpha)))
            }
            _ => {
                if let Some(v) = self.opts.params.get(name) {
                    return Ok(c_const(*v));
                }
                err(start, format!("unknown identifier '{name}'"))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parses_spec_syntax() {
        for src in ["x^2*(-log(x))", "omega(x,0.3)", "exp(-1/(3*x))"] {
            parse(src).unwrap();
        }
    }

    #[test]
    fn precedence_and_values() {
        let e = parse("1 + 2*x^2").unwrap();
        assert_relative_eq!(e.eval(0.5).unwrap(), 1.5);
        let e = parse("x^(3/2)").unwrap();
        assert_relative_eq!(e.eval(0.25).unwrap(), 0.125);
        let e = parse("-x + 1").unwrap();
        assert_relative_eq!(e.eval(0.25).unwrap(), 0.75);
        let e = parse("2e-1*x").unwrap();
        assert_relative_eq!(e.eval(0.5).unwrap(), 0.1);
    }

    #[test]
    fn double_negation_folds() {
        // "-log(x)" comes in as -( -(-log x) ) and must fold back to -log x
        let e = parse("-log(x)").unwrap();
        assert_relative_eq!(e.eval(0.1).unwrap(), std::f64::consts::LN_10);
    }

    #[test]
    fn errors_carry_byte_offsets() {
        let e = parse("x^").unwrap_err();
        assert_eq!(e.offset, 2);
        let e = parse("x + foo").unwrap_err();
        assert_eq!(e.offset, 4);
        let e = parse("x^x").unwrap_err();
        assert_eq!(e.offset, 1);
        assert!(e.message.contains("constant"));
        let e = parse("2x").unwrap_err();
        assert_eq!(e.offset, 1);
        let e = parse("omega(x, x)").unwrap_err();
        assert_eq!(e.offset, 9);
    }

    #[test]
    fn field_options_reject_log() {
        let opts = ParseOptions {
            vars: vec!["x".into(), "y".into()],
            params: [("eta".to_string(), 0.5)].into_iter().collect(),
            allow_log: false,
        };
        assert!(parse_root("x*y + eta*x", &opts).is_ok());
        assert!(parse_root("-log(x)", &opts).is_err());
        assert!(parse_root("omega(x,1)", &opts).is_err());
    }
}
