//! Recursive-descent parser for the closed expression grammar.

use super::{AstNode, BinaryOp, Expression, ParseLimits, UnaryOp};
use std::fmt;
use thiserror::Error;

/// What went wrong while parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    /// Malformed syntax: unbalanced parentheses, stray tokens, bad literals.
    Syntax,
    /// Identifier outside the closed operator set and the declared variables.
    UnknownSymbol,
    /// A function called with the wrong number of arguments.
    Arity,
    /// Depth or node-count limit exceeded.
    DepthExceeded,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParseErrorKind::Syntax => "syntax",
            ParseErrorKind::UnknownSymbol => "unknown_symbol",
            ParseErrorKind::Arity => "arity",
            ParseErrorKind::DepthExceeded => "depth_exceeded",
        };
        f.write_str(s)
    }
}

/// Parse failure with the character offset of the offending token.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error ({kind}) at position {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

impl ParseError {
    fn new(position: usize, kind: ParseErrorKind, message: impl Into<String>) -> Self {
        ParseError { position, kind, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn tokenize(source: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = source.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let pos = i;
        let tok = match c {
            '(' => {
                i += 1;
                Tok::LParen
            }
            ')' => {
                i += 1;
                Tok::RParen
            }
            '[' => {
                i += 1;
                Tok::LBracket
            }
            ']' => {
                i += 1;
                Tok::RBracket
            }
            ',' => {
                i += 1;
                Tok::Comma
            }
            '+' => {
                i += 1;
                Tok::Plus
            }
            '-' => {
                i += 1;
                Tok::Minus
            }
            '*' => {
                // "**" is a common model slip; keep the grammar strict.
                i += 1;
                Tok::Star
            }
            '/' => {
                i += 1;
                Tok::Slash
            }
            '^' => {
                i += 1;
                Tok::Caret
            }
            '0'..='9' => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                    // otherwise the 'e' starts an identifier token
                }
                let text: String = chars[start..i].iter().collect();
                let value: f64 = text.parse().map_err(|_| {
                    ParseError::new(start, ParseErrorKind::Syntax, format!("bad numeric literal `{text}`"))
                })?;
                if !value.is_finite() {
                    return Err(ParseError::new(
                        start,
                        ParseErrorKind::Syntax,
                        format!("numeric literal `{text}` is out of range"),
                    ));
                }
                Tok::Num(value)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                Tok::Ident(chars[start..i].iter().collect())
            }
            other => {
                return Err(ParseError::new(
                    pos,
                    ParseErrorKind::Syntax,
                    format!("unexpected character `{other}`"),
                ))
            }
        };
        toks.push(Token { tok, pos });
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
    limits: ParseLimits,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_pos(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.pos).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(ParseError::new(
                self.peek_pos(),
                ParseErrorKind::Syntax,
                format!("expected {what}"),
            )),
        }
    }

    fn guard(&self, depth: usize) -> Result<(), ParseError> {
        // Stack guard. The grammar descends up to six frames per AST level
        // (expr/term/unary/power/atom plus a paren re-entry), so a tree
        // within max_depth stays under this bound; the exact AST-depth check
        // happens after parsing.
        if depth > 6 * (self.limits.max_depth + 8) {
            return Err(ParseError::new(
                self.peek_pos(),
                ParseErrorKind::DepthExceeded,
                format!("nesting exceeds maximum depth {}", self.limits.max_depth),
            ));
        }
        Ok(())
    }

    fn parse_expr(&mut self, depth: usize) -> Result<AstNode, ParseError> {
        self.guard(depth)?;
        let mut node = self.parse_term(depth + 1)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinaryOp::Add,
                Some(Tok::Minus) => BinaryOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.parse_term(depth + 1)?;
            node = AstNode::Binary(op, Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn parse_term(&mut self, depth: usize) -> Result<AstNode, ParseError> {
        self.guard(depth)?;
        let mut node = self.parse_unary(depth + 1)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinaryOp::Mul,
                Some(Tok::Slash) => BinaryOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.parse_unary(depth + 1)?;
            node = AstNode::Binary(op, Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn parse_unary(&mut self, depth: usize) -> Result<AstNode, ParseError> {
        self.guard(depth)?;
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.pos += 1;
            let child = self.parse_unary(depth + 1)?;
            return Ok(AstNode::Unary(UnaryOp::Neg, Box::new(child)));
        }
        self.parse_power(depth + 1)
    }

    fn parse_power(&mut self, depth: usize) -> Result<AstNode, ParseError> {
        self.guard(depth)?;
        let base = self.parse_atom(depth + 1)?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.pos += 1;
            // right-associative; the exponent may carry a sign
            let exp = self.parse_unary(depth + 1)?;
            return Ok(AstNode::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self, depth: usize) -> Result<AstNode, ParseError> {
        self.guard(depth)?;
        let Some(token) = self.bump() else {
            return Err(ParseError::new(
                self.end,
                ParseErrorKind::Syntax,
                "unexpected end of input",
            ));
        };
        match token.tok {
            Tok::Num(v) => Ok(AstNode::Constant(v)),
            Tok::LParen => {
                let inner = self.parse_expr(depth + 1)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) if name == "params" => {
                self.expect(Tok::LBracket, "`[` after `params`")?;
                let idx_pos = self.peek_pos();
                let idx = match self.bump().map(|t| t.tok) {
                    Some(Tok::Num(v)) if v.fract() == 0.0 && (0.0..=1e6).contains(&v) => v as usize,
                    _ => {
                        return Err(ParseError::new(
                            idx_pos,
                            ParseErrorKind::Syntax,
                            "parameter index must be a non-negative integer",
                        ))
                    }
                };
                self.expect(Tok::RBracket, "`]`")?;
                Ok(AstNode::Param(idx))
            }
            Tok::Ident(name) => {
                if matches!(self.peek(), Some(Tok::LParen)) {
                    self.pos += 1;
                    return self.parse_call(&name, token.pos, depth + 1);
                }
                if self.vars.contains(&name.as_str()) {
                    Ok(AstNode::Variable(name))
                } else {
                    Err(ParseError::new(
                        token.pos,
                        ParseErrorKind::UnknownSymbol,
                        format!("unknown variable `{name}`"),
                    ))
                }
            }
            other => Err(ParseError::new(
                token.pos,
                ParseErrorKind::Syntax,
                format!("expected expression, found {}", tok_name(&other)),
            )),
        }
    }

    fn parse_call(&mut self, name: &str, name_pos: usize, depth: usize) -> Result<AstNode, ParseError> {
        if name == "pow" {
            let base = self.parse_expr(depth + 1)?;
            if !matches!(self.peek(), Some(Tok::Comma)) {
                return Err(ParseError::new(
                    self.peek_pos(),
                    ParseErrorKind::Arity,
                    "pow takes exactly 2 arguments",
                ));
            }
            self.pos += 1;
            let exp = self.parse_expr(depth + 1)?;
            if matches!(self.peek(), Some(Tok::Comma)) {
                return Err(ParseError::new(
                    self.peek_pos(),
                    ParseErrorKind::Arity,
                    "pow takes exactly 2 arguments",
                ));
            }
            self.expect(Tok::RParen, "`)`")?;
            return Ok(AstNode::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)));
        }
        let Some(op) = UnaryOp::from_name(name) else {
            return Err(ParseError::new(
                name_pos,
                ParseErrorKind::UnknownSymbol,
                format!("unknown function `{name}`"),
            ));
        };
        let arg = self.parse_expr(depth + 1)?;
        if matches!(self.peek(), Some(Tok::Comma)) {
            return Err(ParseError::new(
                self.peek_pos(),
                ParseErrorKind::Arity,
                format!("{name} takes exactly 1 argument"),
            ));
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(AstNode::Unary(op, Box::new(arg)))
    }
}

fn tok_name(tok: &Tok) -> String {
    match tok {
        Tok::Num(v) => format!("number `{v}`"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::LBracket => "`[`".into(),
        Tok::RBracket => "`]`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
    }
}

/// Parse `source` against the declared variable names with default limits.
///
/// `allowed_variables` must be non-empty and distinct.
pub fn parse(source: &str, allowed_variables: &[&str]) -> Result<Expression, ParseError> {
    parse_with_limits(source, allowed_variables, ParseLimits::default())
}

/// [`parse`] with explicit structural limits.
pub fn parse_with_limits(
    source: &str,
    allowed_variables: &[&str],
    limits: ParseLimits,
) -> Result<Expression, ParseError> {
    assert!(!allowed_variables.is_empty(), "allowed_variables must be non-empty");
    for (i, a) in allowed_variables.iter().enumerate() {
        assert!(
            !allowed_variables[..i].contains(a),
            "allowed_variables must be distinct, `{a}` repeats"
        );
    }
    let end = source.chars().count();
    if source.trim().is_empty() {
        return Err(ParseError::new(0, ParseErrorKind::Syntax, "empty expression"));
    }
    let toks = tokenize(source)?;
    let mut parser = Parser { toks, pos: 0, vars: allowed_variables, limits, end };
    let root = parser.parse_expr(0)?;
    if parser.pos < parser.toks.len() {
        let t = &parser.toks[parser.pos];
        return Err(ParseError::new(
            t.pos,
            ParseErrorKind::Syntax,
            format!("unexpected token after expression: {}", tok_name(&t.tok)),
        ));
    }
    let depth = root.depth();
    if depth > limits.max_depth {
        return Err(ParseError::new(
            0,
            ParseErrorKind::DepthExceeded,
            format!("expression depth {depth} exceeds maximum {}", limits.max_depth),
        ));
    }
    let nodes = root.node_count();
    if nodes > limits.max_nodes {
        return Err(ParseError::new(
            0,
            ParseErrorKind::DepthExceeded,
            format!("expression has {nodes} nodes, maximum is {}", limits.max_nodes),
        ));
    }
    Ok(Expression::from_ast(root))
}

#[cfg(test)]
mod tests {
    use super::*;

    const XV: &[&str] = &["x", "v"];

    #[test]
    fn parses_skeleton_with_params() {
        let e = parse("params[0]*sin(x) - params[1]*x*v", XV).unwrap();
        assert_eq!(e.param_count(), 2);
        assert_eq!(e.variables_used(), &["x".to_string(), "v".to_string()]);
    }

    #[test]
    fn param_count_is_one_past_max_index() {
        let e = parse("params[3] + x", XV).unwrap();
        assert_eq!(e.param_count(), 4);
        let e = parse("x + v", XV).unwrap();
        assert_eq!(e.param_count(), 0);
    }

    #[test]
    fn unbalanced_paren_is_syntax_error() {
        let err = parse("sin(", &["x"]).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Syntax);
        assert!(err.position <= 4);
    }

    #[test]
    fn operator_set_is_closed() {
        let err = parse("params[0]*sigmoid(x)", &["x"]).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownSymbol);
        assert_eq!(err.position, 10);
    }

    #[test]
    fn undeclared_variable_rejected() {
        let err = parse("x + y", &["x"]).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownSymbol);
        assert_eq!(err.position, 4);
    }

    #[test]
    fn arity_errors() {
        assert_eq!(parse("sin(x, v)", XV).unwrap_err().kind, ParseErrorKind::Arity);
        assert_eq!(parse("pow(x)", XV).unwrap_err().kind, ParseErrorKind::Arity);
        assert_eq!(parse("pow(x, v, x)", XV).unwrap_err().kind, ParseErrorKind::Arity);
    }

    #[test]
    fn pow_forms_are_equivalent() {
        let a = parse("x^3", XV).unwrap();
        let b = parse("pow(x, 3)", XV).unwrap();
        assert_eq!(a.root(), b.root());
    }

    #[test]
    fn pow_is_right_associative_and_binds_tighter_than_neg() {
        let e = parse("-x^2", XV).unwrap();
        assert_eq!(e.render(), "(-(x ^ 2))");
        let e = parse("2^3^2", XV).unwrap();
        assert_eq!(e.render(), "(2 ^ (3 ^ 2))");
    }

    #[test]
    fn precedence_is_conventional() {
        let e = parse("x + v * x", XV).unwrap();
        assert_eq!(e.render(), "(x + (v * x))");
        let e = parse("x - v - x", XV).unwrap();
        assert_eq!(e.render(), "((x - v) - x)");
    }

    #[test]
    fn scientific_literals() {
        let e = parse("1.5e-3 * x", XV).unwrap();
        assert_eq!(e.render(), "(0.0015 * x)");
        let err = parse("1e999 * x", XV).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Syntax);
    }

    #[test]
    fn trailing_tokens_rejected() {
        let err = parse("x v", XV).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Syntax);
        assert_eq!(err.position, 2);
    }

    #[test]
    fn depth_limit_enforced() {
        let deep = format!("{}x{}", "sin(".repeat(30), ")".repeat(30));
        let err = parse(&deep, &["x"]).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DepthExceeded);
    }

    #[test]
    fn node_limit_enforced() {
        let wide = vec!["x"; 150].join(" + ");
        let err = parse_with_limits(&wide, &["x"], ParseLimits { max_depth: 1000, max_nodes: 200 })
            .unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DepthExceeded);
    }

    #[test]
    fn bad_param_indices() {
        assert_eq!(parse("params[1.5]", XV).unwrap_err().kind, ParseErrorKind::Syntax);
        assert_eq!(parse("params[-1]", XV).unwrap_err().kind, ParseErrorKind::Syntax);
        assert_eq!(parse("params[x]", XV).unwrap_err().kind, ParseErrorKind::Syntax);
        assert_eq!(parse("params", XV).unwrap_err().kind, ParseErrorKind::Syntax);
    }

    #[test]
    fn error_position_within_input() {
        for src in ["sin(", "x +", "(((x))", "params[", "1e999"] {
            if let Err(e) = parse(src, &["x"]) {
                assert!(e.position <= src.chars().count(), "{src}: {e:?}");
            }
        }
    }
}
