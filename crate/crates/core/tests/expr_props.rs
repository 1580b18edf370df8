//! Property tests for the expression grammar: render/parse round-trip,
//! operator closure, batch/scalar agreement, evaluation purity.

use eqsearch_core::expr::{
    evaluate, parse, AstNode, BinaryOp, CompiledExpr, EvalErrorKind, Expression, InputMatrix,
    UnaryOp,
};
use proptest::prelude::*;

const VARS: [&str; 3] = ["x", "v", "t"];

fn leaf() -> impl Strategy<Value = AstNode> {
    prop_oneof![
        (0usize..3).prop_map(|i| AstNode::Variable(VARS[i].to_string())),
        (0usize..4).prop_map(AstNode::Param),
        // canonical constants: non-negative and finite (negation is `neg`)
        (0.0f64..1e6).prop_map(AstNode::Constant),
        Just(AstNode::Constant(0.0)),
    ]
}

fn ast() -> impl Strategy<Value = AstNode> {
    leaf().prop_recursive(6, 48, 8, |inner| {
        prop_oneof![
            (any::<u8>(), inner.clone()).prop_map(|(op, child)| {
                let op = match op % 9 {
                    0 => UnaryOp::Neg,
                    1 => UnaryOp::Sin,
                    2 => UnaryOp::Cos,
                    3 => UnaryOp::Tan,
                    4 => UnaryOp::Tanh,
                    5 => UnaryOp::Exp,
                    6 => UnaryOp::Log,
                    7 => UnaryOp::Sqrt,
                    _ => UnaryOp::Abs,
                };
                AstNode::Unary(op, Box::new(child))
            }),
            (any::<u8>(), inner.clone(), inner).prop_map(|(op, l, r)| {
                let op = match op % 5 {
                    0 => BinaryOp::Add,
                    1 => BinaryOp::Sub,
                    2 => BinaryOp::Mul,
                    3 => BinaryOp::Div,
                    _ => BinaryOp::Pow,
                };
                AstNode::Binary(op, Box::new(l), Box::new(r))
            }),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn render_parse_round_trips(root in ast()) {
        let e = Expression::from_ast(root);
        prop_assume!(e.depth() <= 20 && e.complexity() <= 200);
        let rendered = e.render();
        let back = parse(&rendered, &VARS).unwrap_or_else(|err| {
            panic!("rendered form failed to parse: `{rendered}`: {err}")
        });
        prop_assert_eq!(&e, &back, "round-trip mismatch for `{}`", rendered);
    }

    #[test]
    fn batch_equals_scalar(root in ast(), rows in prop::collection::vec(
        prop::collection::vec(-3.0f64..3.0, 3), 1..12)) {
        let e = Expression::from_ast(root);
        prop_assume!(e.depth() <= 20 && e.complexity() <= 200);
        let params: Vec<f64> = (0..e.param_count()).map(|i| 0.3 + i as f64 * 0.4).collect();
        let matrix = InputMatrix::from_rows(&rows);
        let compiled = CompiledExpr::compile(&e, &VARS);
        match compiled.eval_batch(&matrix, &params) {
            Ok(batch) => {
                for (i, row) in rows.iter().enumerate() {
                    let single = compiled.eval_row(row, &params, i).unwrap();
                    prop_assert_eq!(single, batch[i]);
                }
            }
            Err(err) => {
                // the batch stops at the first failing row; that row must
                // fail identically in isolation, earlier rows must succeed
                for (i, row) in rows.iter().enumerate().take(err.row) {
                    prop_assert!(compiled.eval_row(row, &params, i).is_ok());
                }
                let single = compiled.eval_row(&rows[err.row], &params, err.row).unwrap_err();
                prop_assert_eq!(single.kind, err.kind);
            }
        }
    }

    #[test]
    fn evaluation_is_pure(root in ast(), row in prop::collection::vec(-2.0f64..2.0, 3)) {
        let e = Expression::from_ast(root);
        prop_assume!(e.depth() <= 20 && e.complexity() <= 200);
        let params: Vec<f64> = (0..e.param_count()).map(|i| 1.0 + i as f64).collect();
        let m = InputMatrix::from_rows(&[row]);
        let a = evaluate(&e, &params, &m, &VARS);
        let b = evaluate(&e, &params, &m, &VARS);
        match (a, b) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
            (Err(x), Err(y)) => prop_assert_eq!(x, y),
            _ => prop_assert!(false, "purity violated: one call failed"),
        }
    }

    #[test]
    fn unknown_functions_never_parse(name in "[a-z]{2,8}") {
        prop_assume!(!matches!(
            name.as_str(),
            "sin" | "cos" | "tan" | "tanh" | "exp" | "log" | "sqrt" | "abs" | "neg" | "pow"
        ));
        let src = format!("{name}(x)");
        let err = parse(&src, &VARS).unwrap_err();
        prop_assert_eq!(err.kind, eqsearch_core::expr::ParseErrorKind::UnknownSymbol);
    }
}

#[test]
fn eval_error_kinds_are_reachable() {
    let one = |src: &str, x: f64| {
        let e = parse(src, &["x"]).unwrap();
        evaluate(&e, &[], &InputMatrix::new(1, 1, vec![x]), &["x"]).unwrap_err()
    };
    assert_eq!(one("log(x)", -1.0).kind, EvalErrorKind::Domain);
    assert_eq!(one("sqrt(x)", -1.0).kind, EvalErrorKind::Domain);
    assert_eq!(one("1/x", 0.0).kind, EvalErrorKind::Domain);
    assert_eq!(one("x^1.5", -1.0).kind, EvalErrorKind::Domain);
    assert_eq!(one("exp(x)", 1e5).kind, EvalErrorKind::Overflow);

    let e = parse("params[0]+x", &["x"]).unwrap();
    let err = evaluate(&e, &[f64::INFINITY], &InputMatrix::new(1, 1, vec![0.0]), &["x"])
        .unwrap_err();
    assert_eq!(err.kind, EvalErrorKind::NonFinite);
}
