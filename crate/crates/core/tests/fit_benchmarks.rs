//! Parameter recovery on generated benchmark data.

use eqsearch_core::data::{generate, Benchmark, GeneratorSpec};
use eqsearch_core::expr::parse;
use eqsearch_core::fit::{fit, FitConfig};

/// The oscillator's governing skeleton with all five constants learnable,
/// including the frequency inside the sine. Nonconvex in the frequency, so
/// the restart budget is raised above the default.
#[test]
fn oscillator1_full_skeleton_recovers_constants() {
    let mut spec = GeneratorSpec::new(Benchmark::Oscillator1, 5);
    spec.n_train = 400;
    spec.n_id = 100;
    spec.n_ood = 100;
    let data = generate(&spec).unwrap();

    let skeleton =
        "params[0]*sin(params[4]*x) - params[1]*v^3 - params[2]*x^3 - params[3]*x*v - x*cos(x)";
    let e = parse(skeleton, &data.variable_names()).unwrap();
    let cfg = FitConfig { restarts: 12, max_iters_per_restart: 400, ..FitConfig::default() };
    let result = fit(&e, &data, &cfg, 42).unwrap();

    let expected = [0.8, 0.5, 0.2, 0.5, 1.0];
    for (i, (got, want)) in result.params.iter().zip(&expected).enumerate() {
        assert!(
            (got - want).abs() < 1e-3,
            "param {i}: got {got}, want {want} (mse {})",
            result.mse
        );
    }
    assert!(result.mse < 1e-10, "mse {}", result.mse);
}
