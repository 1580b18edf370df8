//! Equation-skeleton grammar: typed AST, parser, renderer, batch evaluator.
//!
//! Candidate equations arrive as text emitted by a language model and are
//! parsed into a closed-grammar AST over named variables, numeric literals,
//! and indexed learnable parameters written `params[i]`. The operator set is
//! fixed; anything outside it fails to parse and flows into the invalid
//! channel of the search loop. Evaluation is sandboxed: domain violations
//! (log of a non-positive value, division by a near-zero denominator, ...)
//! surface as typed errors at evaluation time, never as NaN propagation.
//!
//! The concrete grammar is documented in `docs/grammar.ebnf`, which is also
//! quoted verbatim inside generation prompts.
//!
//! Canonical form: parser output never contains negative constant literals —
//! a leading minus always parses to the `neg` operator. Programmatic ASTs
//! should follow the same convention; otherwise `parse(render(e))` yields the
//! neg-wrapped equivalent rather than a structurally identical tree.

mod eval;
mod parse;

pub use eval::{evaluate, CompiledExpr, EvalError, EvalErrorKind, InputMatrix};
pub use parse::{parse, parse_with_limits, ParseError, ParseErrorKind};

use std::fmt;

/// Unary operators of the closed grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
        }
    }

    pub(crate) fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "neg" => UnaryOp::Neg,
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "tan" => UnaryOp::Tan,
            "tanh" => UnaryOp::Tanh,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            _ => return None,
        })
    }
}

/// Binary operators of the closed grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

/// One node of an equation skeleton.
#[derive(Debug, Clone, PartialEq)]
pub enum AstNode {
    Variable(String),
    Constant(f64),
    Param(usize),
    Unary(UnaryOp, Box<AstNode>),
    Binary(BinaryOp, Box<AstNode>, Box<AstNode>),
}

impl AstNode {
    /// Total node count of the subtree.
    pub fn node_count(&self) -> usize {
        match self {
            AstNode::Variable(_) | AstNode::Constant(_) | AstNode::Param(_) => 1,
            AstNode::Unary(_, c) => 1 + c.node_count(),
            AstNode::Binary(_, l, r) => 1 + l.node_count() + r.node_count(),
        }
    }

    /// Depth of the subtree; a leaf has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            AstNode::Variable(_) | AstNode::Constant(_) | AstNode::Param(_) => 1,
            AstNode::Unary(_, c) => 1 + c.depth(),
            AstNode::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    fn visit(&self, f: &mut impl FnMut(&AstNode)) {
        f(self);
        match self {
            AstNode::Unary(_, c) => c.visit(f),
            AstNode::Binary(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
            _ => {}
        }
    }
}

/// Structural size limits enforced by the parser.
#[derive(Debug, Clone, Copy)]
pub struct ParseLimits {
    pub max_depth: usize,
    pub max_nodes: usize,
}

impl Default for ParseLimits {
    fn default() -> Self {
        ParseLimits { max_depth: 20, max_nodes: 200 }
    }
}

/// A parsed equation skeleton: an AST plus derived metadata.
///
/// `param_count` is one past the highest `params[i]` index referenced, and
/// `variables_used` lists variable names in first-occurrence order.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: AstNode,
    param_count: usize,
    variables_used: Vec<String>,
}

impl Expression {
    /// Wrap a programmatically built AST. The caller is responsible for
    /// staying within the size limits the parser would enforce.
    pub fn from_ast(root: AstNode) -> Self {
        let mut param_count = 0usize;
        let mut variables = Vec::new();
        root.visit(&mut |n| match n {
            AstNode::Param(i) => param_count = param_count.max(i + 1),
            AstNode::Variable(name) if !variables.contains(name) => {
                variables.push(name.clone());
            }
            _ => {}
        });
        Expression { root, param_count, variables_used: variables }
    }

    pub fn root(&self) -> &AstNode {
        &self.root
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn variables_used(&self) -> &[String] {
        &self.variables_used
    }

    /// Total AST node count, used for logging and tie-breaking.
    pub fn complexity(&self) -> usize {
        self.root.node_count()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Canonical, fully parenthesized text form. `parse(render(e))`
    /// round-trips to a structurally equal expression.
    pub fn render(&self) -> String {
        let mut out = String::new();
        render_node(&self.root, &mut out);
        out
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn render_node(node: &AstNode, out: &mut String) {
    use std::fmt::Write;
    match node {
        AstNode::Variable(name) => out.push_str(name),
        // f64 Display is the shortest digit string that round-trips
        AstNode::Constant(c) => write!(out, "{c}").unwrap(),
        AstNode::Param(i) => write!(out, "params[{i}]").unwrap(),
        AstNode::Unary(UnaryOp::Neg, c) => {
            out.push_str("(-");
            render_node(c, out);
            out.push(')');
        }
        AstNode::Unary(op, c) => {
            out.push_str(op.name());
            out.push('(');
            render_node(c, out);
            out.push(')');
        }
        AstNode::Binary(op, l, r) => {
            out.push('(');
            render_node(l, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            render_node(r, out);
            out.push(')');
        }
    }
}

/// Names that the grammar reserves and therefore cannot be variable names.
pub const RESERVED_WORDS: &[&str] = &[
    "params", "pow", "neg", "sin", "cos", "tan", "tanh", "exp", "log", "sqrt", "abs",
];

/// Whether `name` can be used as a dataset variable in the grammar: a valid
/// identifier that does not collide with a reserved word.
pub fn is_valid_variable_name(name: &str) -> bool {
    let mut chars = name.chars();
    let Some(first) = chars.next() else { return false };
    if !(first.is_ascii_alphabetic() || first == '_') {
        return false;
    }
    if !chars.all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return false;
    }
    !RESERVED_WORDS.contains(&name)
}

/// The grammar reference shipped with the crate and quoted inside prompts.
pub const GRAMMAR_EBNF: &str = include_str!("../../docs/grammar.ebnf");

#[cfg(test)]
mod tests {
    use super::*;

    fn var(n: &str) -> AstNode {
        AstNode::Variable(n.to_string())
    }

    #[test]
    fn render_matches_canonical_forms() {
        let e = Expression::from_ast(AstNode::Binary(
            BinaryOp::Mul,
            Box::new(AstNode::Param(0)),
            Box::new(var("x")),
        ));
        assert_eq!(e.render(), "(params[0] * x)");

        let c = Expression::from_ast(AstNode::Constant(0.5));
        assert_eq!(c.render(), "0.5");

        let s = Expression::from_ast(AstNode::Unary(
            UnaryOp::Sin,
            Box::new(AstNode::Binary(
                BinaryOp::Mul,
                Box::new(AstNode::Param(0)),
                Box::new(var("x")),
            )),
        ));
        assert_eq!(s.render(), "sin((params[0] * x))");
    }

    #[test]
    fn complexity_counts_nodes() {
        assert_eq!(Expression::from_ast(AstNode::Constant(1.0)).complexity(), 1);
        let e = Expression::from_ast(AstNode::Binary(
            BinaryOp::Add,
            Box::new(AstNode::Param(0)),
            Box::new(var("x")),
        ));
        assert_eq!(e.complexity(), 3);
    }

    #[test]
    fn metadata_derivation() {
        let e = Expression::from_ast(AstNode::Binary(
            BinaryOp::Add,
            Box::new(AstNode::Param(3)),
            Box::new(AstNode::Binary(BinaryOp::Mul, Box::new(var("v")), Box::new(var("x")))),
        ));
        assert_eq!(e.param_count(), 4);
        assert_eq!(e.variables_used(), &["v".to_string(), "x".to_string()]);
    }

    #[test]
    fn variable_name_validity() {
        assert!(is_valid_variable_name("x"));
        assert!(is_valid_variable_name("E_n"));
        assert!(is_valid_variable_name("pH"));
        assert!(!is_valid_variable_name("2x"));
        assert!(!is_valid_variable_name("x-y"));
        assert!(!is_valid_variable_name("sin"));
        assert!(!is_valid_variable_name("params"));
        assert!(!is_valid_variable_name(""));
    }
}
