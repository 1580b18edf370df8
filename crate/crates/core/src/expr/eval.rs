//! Sandboxed batch evaluation of parsed expressions.
//!
//! Expressions compile to a flat postfix program executed by a small stack
//! machine, one row at a time. Every operation is checked: domain violations
//! and non-finite intermediates stop evaluation with a typed error naming the
//! first offending row and operation, so NaN and infinity never leak into
//! scores.

use super::{AstNode, BinaryOp, Expression, UnaryOp};
use thiserror::Error;

/// Denominators smaller than this in absolute value count as division by zero.
pub const DIV_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalErrorKind {
    /// log of a non-positive value, sqrt of a negative value, division by a
    /// near-zero denominator, or a negative base raised to a non-integer power.
    Domain,
    /// An operation produced an infinite value.
    Overflow,
    /// An operation produced NaN, or a parameter value was not finite.
    NonFinite,
}

impl std::fmt::Display for EvalErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EvalErrorKind::Domain => "domain",
            EvalErrorKind::Overflow => "overflow",
            EvalErrorKind::NonFinite => "non_finite",
        };
        f.write_str(s)
    }
}

/// Evaluation failure at a specific row and operation.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} error at row {row} in `{op}`: {message}")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub row: usize,
    pub op: &'static str,
    pub message: String,
}

impl EvalError {
    fn new(kind: EvalErrorKind, row: usize, op: &'static str, message: impl Into<String>) -> Self {
        EvalError { kind, row, op, message: message.into() }
    }
}

/// Row-major input matrix: `rows` observations of `cols` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl InputMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows * cols");
        InputMatrix { data, rows, cols }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            assert_eq!(r.len(), d, "ragged rows");
            data.extend_from_slice(r);
        }
        InputMatrix { data, rows: n, cols: d }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Select a subset of rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> InputMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        InputMatrix { data, rows: indices.len(), cols: self.cols }
    }
}

#[derive(Debug, Clone, Copy)]
enum Instr {
    Const(f64),
    Var(usize),
    Param(usize),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

/// An expression compiled against a fixed variable ordering, ready for
/// repeated evaluation. Compiling once and reusing the program is the fast
/// path for parameter fitting.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    program: Vec<Instr>,
    param_count: usize,
    stack_need: usize,
}

impl CompiledExpr {
    /// Compile `expr` against `variable_order` (the column layout of the
    /// input matrix).
    ///
    /// Panics if a used variable is missing from `variable_order`; callers
    /// are expected to pass the dataset's declared ordering.
    pub fn compile(expr: &Expression, variable_order: &[&str]) -> Self {
        let mut program = Vec::with_capacity(expr.complexity());
        emit(expr.root(), variable_order, &mut program);
        let stack_need = max_stack(&program);
        CompiledExpr { program, param_count: expr.param_count(), stack_need }
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Evaluate one row. `row` must follow the compile-time variable order.
    pub fn eval_row(&self, row: &[f64], params: &[f64], row_index: usize) -> Result<f64, EvalError> {
        let mut stack = Vec::with_capacity(self.stack_need);
        self.eval_onto(row, params, row_index, &mut stack)
    }

    /// Evaluate every row of `inputs`; stops at the first failing row.
    pub fn eval_batch(&self, inputs: &InputMatrix, params: &[f64]) -> Result<Vec<f64>, EvalError> {
        assert_eq!(params.len(), self.param_count, "params length must equal param_count");
        let mut out = Vec::with_capacity(inputs.rows());
        let mut stack = Vec::with_capacity(self.stack_need);
        for i in 0..inputs.rows() {
            out.push(self.eval_onto(inputs.row(i), params, i, &mut stack)?);
        }
        Ok(out)
    }

    fn eval_onto(
        &self,
        row: &[f64],
        params: &[f64],
        row_index: usize,
        stack: &mut Vec<f64>,
    ) -> Result<f64, EvalError> {
        stack.clear();
        for instr in &self.program {
            match *instr {
                Instr::Const(v) => stack.push(v),
                Instr::Var(col) => stack.push(row[col]),
                Instr::Param(i) => {
                    let v = params[i];
                    if !v.is_finite() {
                        return Err(EvalError::new(
                            EvalErrorKind::NonFinite,
                            row_index,
                            "params",
                            format!("params[{i}] is {v}"),
                        ));
                    }
                    stack.push(v);
                }
                Instr::Unary(op) => {
                    let a = stack.pop().expect("stack underflow");
                    let v = apply_unary(op, a, row_index)?;
                    stack.push(check(v, op.name(), row_index)?);
                }
                Instr::Binary(op) => {
                    let b = stack.pop().expect("stack underflow");
                    let a = stack.pop().expect("stack underflow");
                    let v = apply_binary(op, a, b, row_index)?;
                    stack.push(check(v, binary_name(op), row_index)?);
                }
            }
        }
        Ok(stack.pop().expect("empty program"))
    }
}

fn binary_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
        BinaryOp::Pow => "pow",
    }
}

fn apply_unary(op: UnaryOp, a: f64, row: usize) -> Result<f64, EvalError> {
    Ok(match op {
        UnaryOp::Neg => -a,
        UnaryOp::Sin => a.sin(),
        UnaryOp::Cos => a.cos(),
        UnaryOp::Tan => a.tan(),
        UnaryOp::Tanh => a.tanh(),
        UnaryOp::Exp => a.exp(),
        UnaryOp::Log => {
            if a <= 0.0 {
                return Err(EvalError::new(
                    EvalErrorKind::Domain,
                    row,
                    "log",
                    format!("log of non-positive value {a}"),
                ));
            }
            a.ln()
        }
        UnaryOp::Sqrt => {
            if a < 0.0 {
                return Err(EvalError::new(
                    EvalErrorKind::Domain,
                    row,
                    "sqrt",
                    format!("sqrt of negative value {a}"),
                ));
            }
            a.sqrt()
        }
        UnaryOp::Abs => a.abs(),
    })
}

fn apply_binary(op: BinaryOp, a: f64, b: f64, row: usize) -> Result<f64, EvalError> {
    Ok(match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => {
            if b.abs() < DIV_TOLERANCE {
                return Err(EvalError::new(
                    EvalErrorKind::Domain,
                    row,
                    "div",
                    format!("denominator {b} is within {DIV_TOLERANCE} of zero"),
                ));
            }
            a / b
        }
        BinaryOp::Pow => {
            if a < 0.0 && b.fract() != 0.0 {
                return Err(EvalError::new(
                    EvalErrorKind::Domain,
                    row,
                    "pow",
                    format!("negative base {a} with non-integer exponent {b}"),
                ));
            }
            a.powf(b)
        }
    })
}

fn check(v: f64, op: &'static str, row: usize) -> Result<f64, EvalError> {
    if v.is_nan() {
        Err(EvalError::new(EvalErrorKind::NonFinite, row, op, "result is NaN"))
    } else if v.is_infinite() {
        Err(EvalError::new(EvalErrorKind::Overflow, row, op, "result is infinite"))
    } else {
        Ok(v)
    }
}

fn emit(node: &AstNode, variable_order: &[&str], out: &mut Vec<Instr>) {
    match node {
        AstNode::Constant(v) => out.push(Instr::Const(*v)),
        AstNode::Param(i) => out.push(Instr::Param(*i)),
        AstNode::Variable(name) => {
            let col = variable_order
                .iter()
                .position(|v| v == name)
                .unwrap_or_else(|| panic!("variable `{name}` missing from variable_order"));
            out.push(Instr::Var(col));
        }
        AstNode::Unary(op, c) => {
            emit(c, variable_order, out);
            out.push(Instr::Unary(*op));
        }
        AstNode::Binary(op, l, r) => {
            emit(l, variable_order, out);
            emit(r, variable_order, out);
            out.push(Instr::Binary(*op));
        }
    }
}

fn max_stack(program: &[Instr]) -> usize {
    let mut depth = 0usize;
    let mut max = 0usize;
    for instr in program {
        match instr {
            Instr::Const(_) | Instr::Var(_) | Instr::Param(_) => depth += 1,
            Instr::Unary(_) => {}
            Instr::Binary(_) => depth -= 1,
        }
        max = max.max(depth);
    }
    max
}

/// Evaluate `e` over every row of `inputs`.
///
/// `params` must have length `e.param_count()`, `variable_order` must cover
/// `e.variables_used()`, and `inputs` must have one column per entry of
/// `variable_order`. Violations of those contracts panic; data-dependent
/// failures return an [`EvalError`] naming the first offending row.
pub fn evaluate(
    e: &Expression,
    params: &[f64],
    inputs: &InputMatrix,
    variable_order: &[&str],
) -> Result<Vec<f64>, EvalError> {
    assert_eq!(
        inputs.cols(),
        variable_order.len(),
        "input column count must match variable_order"
    );
    let compiled = CompiledExpr::compile(e, variable_order);
    compiled.eval_batch(inputs, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn single_col(values: &[f64]) -> InputMatrix {
        InputMatrix::new(values.len(), 1, values.to_vec())
    }

    #[test]
    fn evaluates_scaled_sine() {
        let e = parse("params[0]*sin(x)", &["x"]).unwrap();
        let inputs = single_col(&[0.0, std::f64::consts::FRAC_PI_2]);
        let out = evaluate(&e, &[0.8], &inputs, &["x"]).unwrap();
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn log_domain_error_names_row_and_op() {
        let e = parse("log(x)", &["x"]).unwrap();
        let err = evaluate(&e, &[], &single_col(&[1.0, -1.0]), &["x"]).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::Domain);
        assert_eq!(err.row, 1);
        assert_eq!(err.op, "log");
    }

    #[test]
    fn sqrt_and_div_and_pow_domain_errors() {
        let e = parse("sqrt(x)", &["x"]).unwrap();
        let err = evaluate(&e, &[], &single_col(&[-4.0]), &["x"]).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::Domain);

        let e = parse("1/x", &["x"]).unwrap();
        let err = evaluate(&e, &[], &single_col(&[1e-13]), &["x"]).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::Domain);
        assert_eq!(err.op, "div");

        let e = parse("x^0.5", &["x"]).unwrap();
        let err = evaluate(&e, &[], &single_col(&[-2.0]), &["x"]).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::Domain);
        // integer exponents on negative bases are fine
        let e = parse("x^3", &["x"]).unwrap();
        let out = evaluate(&e, &[], &single_col(&[-2.0]), &["x"]).unwrap();
        assert_eq!(out[0], -8.0);
    }

    #[test]
    fn overflow_and_non_finite() {
        let e = parse("exp(x)", &["x"]).unwrap();
        let err = evaluate(&e, &[], &single_col(&[1e4]), &["x"]).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::Overflow);

        let e = parse("params[0]*x", &["x"]).unwrap();
        let err = evaluate(&e, &[f64::NAN], &single_col(&[1.0]), &["x"]).unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::NonFinite);
    }

    #[test]
    fn batch_matches_scalar() {
        let e = parse("params[0]*x^2 - tanh(x)/1.5 + abs(x)", &["x"]).unwrap();
        let values = [-2.0, -0.5, 0.0, 0.7, 3.0];
        let batch = evaluate(&e, &[1.3], &single_col(&values), &["x"]).unwrap();
        let compiled = CompiledExpr::compile(&e, &["x"]);
        for (i, &x) in values.iter().enumerate() {
            let one = compiled.eval_row(&[x], &[1.3], i).unwrap();
            assert_eq!(one, batch[i]);
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let e = parse("sin(x)*cos(x) + params[0]^2 / (x + 10)", &["x"]).unwrap();
        let inputs = single_col(&[0.1, 0.2, 0.3]);
        let a = evaluate(&e, &[1.7], &inputs, &["x"]).unwrap();
        let b = evaluate(&e, &[1.7], &inputs, &["x"]).unwrap();
        assert_eq!(a, b); // bitwise
    }

    #[test]
    fn variable_order_maps_columns() {
        let e = parse("x - v", &["x", "v"]).unwrap();
        // columns supplied as (v, x)
        let inputs = InputMatrix::new(1, 2, vec![3.0, 10.0]);
        let out = evaluate(&e, &[], &inputs, &["v", "x"]).unwrap();
        assert_eq!(out[0], 7.0);
    }

    #[test]
    #[should_panic(expected = "params length")]
    fn wrong_param_len_panics() {
        let e = parse("params[0]*x", &["x"]).unwrap();
        let _ = evaluate(&e, &[], &single_col(&[1.0]), &["x"]);
    }
}
