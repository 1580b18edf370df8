//! Parameter fitting: BFGS with central-difference gradients and seeded
//! multi-restart.
//!
//! Skeletons are black boxes here, so gradients come from central finite
//! differences with a per-coordinate step `grad_step * max(1, |theta_j|)`.
//! Non-finite objective values during the line search are treated as +inf
//! and backtracked over; skeletons with `log`/`div` are routinely probed
//! outside their domain and must not kill the restart.
//!
//! Restart initializations are drawn from nested seed streams: restart `r`
//! depends only on `(seed, r)`, so raising the restart count re-runs the same
//! prefix of starts and the best MSE is non-increasing in the count.

use crate::data::{Dataset, Split};
use crate::expr::{CompiledExpr, EvalError, EvalErrorKind, Expression, InputMatrix};
use crate::seeding::mix_seed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How restart starting points are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitDistribution {
    /// Independent standard-normal draws per restart, from the fit seed.
    StandardNormal,
    /// Explicit starting vectors supplied by the caller; one restart each.
    UserSupplied(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_iters_per_restart: usize,
    /// Base finite-difference step, scaled by `max(1, |theta_j|)` per coordinate.
    pub grad_step: f64,
    /// Convergence threshold on the Euclidean gradient norm.
    pub tolerance: f64,
    /// Skeletons referencing more parameters than this are rejected.
    pub max_params: usize,
    pub init: InitDistribution,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            restarts: 5,
            max_iters_per_restart: 200,
            grad_step: f64::EPSILON.sqrt(),
            tolerance: 1e-9,
            max_params: 10,
            init: InitDistribution::StandardNormal,
        }
    }
}

/// Best fit found across restarts. `score` is exactly `-mse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<f64>,
    pub score: f64,
    pub mse: f64,
    pub converged: bool,
    pub restarts_used: usize,
    pub evals: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("skeleton references {count} parameters, maximum is {max}")]
    TooManyParams { count: usize, max: usize },
}

/// Fit `e` against the train split of `data`.
pub fn fit(e: &Expression, data: &Dataset, cfg: &FitConfig, seed: u64) -> Result<FitResult, FitError> {
    let names = data.variable_names();
    let inputs = data.inputs(Split::Train);
    let targets = data.targets(Split::Train);
    fit_to(e, &inputs, &targets, &names, cfg, seed)
}

/// Fit `e` against an explicit input matrix and target vector.
pub fn fit_to(
    e: &Expression,
    inputs: &InputMatrix,
    targets: &[f64],
    variable_order: &[&str],
    cfg: &FitConfig,
    seed: u64,
) -> Result<FitResult, FitError> {
    assert_eq!(inputs.rows(), targets.len(), "inputs and targets disagree on row count");
    assert!(!targets.is_empty(), "cannot fit against an empty split");
    let p = e.param_count();
    if p > cfg.max_params {
        return Err(FitError::TooManyParams { count: p, max: cfg.max_params });
    }

    let compiled = CompiledExpr::compile(e, variable_order);
    let mut evals = 0usize;
    let mut first_err: Option<EvalError> = None;
    let mut objective = |theta: &[f64]| -> f64 {
        evals += 1;
        match compiled.eval_batch(inputs, theta).and_then(|preds| mse_checked(&preds, targets)) {
            Ok(m) => m,
            Err(err) => {
                first_err.get_or_insert(err);
                f64::INFINITY
            }
        }
    };

    if p == 0 {
        let m = objective(&[]);
        if !m.is_finite() {
            return Err(first_err.expect("non-finite objective without an eval error").into());
        }
        return Ok(FitResult {
            params: Vec::new(),
            score: -m,
            mse: m,
            converged: true,
            restarts_used: 1,
            evals,
        });
    }

    let starts: Vec<Vec<f64>> = match &cfg.init {
        InitDistribution::StandardNormal => (0..cfg.restarts.max(1))
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "fit_restart", &[r as u64]));
                (0..p).map(|_| StandardNormal.sample(&mut rng)).collect()
            })
            .collect(),
        InitDistribution::UserSupplied(seeds) => {
            assert!(!seeds.is_empty(), "user-supplied init needs at least one start");
            for s in seeds {
                assert_eq!(s.len(), p, "user-supplied start has wrong length");
            }
            seeds.clone()
        }
    };
    let restarts_used = starts.len();

    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    for start in starts {
        let outcome = bfgs(&mut objective, start, cfg);
        let better = match &best {
            None => true,
            Some((bf, _, _)) => outcome.f < *bf,
        };
        if better {
            best = Some((outcome.f, outcome.x, outcome.converged));
        }
    }

    let (mse, params, converged) = best.expect("at least one restart ran");
    if !mse.is_finite() {
        let err = first_err.unwrap_or(EvalError {
            kind: EvalErrorKind::Overflow,
            row: 0,
            op: "mse",
            message: "objective overflowed".to_string(),
        });
        return Err(err.into());
    }
    Ok(FitResult { params, score: -mse, mse, converged, restarts_used, evals })
}

/// Negative mean squared error of `e` with fixed `params` on one split.
pub fn score(e: &Expression, params: &[f64], data: &Dataset, split: Split) -> Result<f64, EvalError> {
    let names = data.variable_names();
    let inputs = data.inputs(split);
    let targets = data.targets(split);
    let compiled = CompiledExpr::compile(e, &names);
    let preds = compiled.eval_batch(&inputs, params)?;
    Ok(-mse_checked(&preds, &targets)?)
}

/// Mean of squared residuals, rejecting overflow into non-finite territory.
fn mse_checked(preds: &[f64], targets: &[f64]) -> Result<f64, EvalError> {
    debug_assert_eq!(preds.len(), targets.len());
    let mut acc = 0.0f64;
    for (i, (p, y)) in preds.iter().zip(targets).enumerate() {
        let r = p - y;
        let r2 = r * r;
        if !r2.is_finite() {
            return Err(EvalError {
                kind: EvalErrorKind::Overflow,
                row: i,
                op: "score",
                message: format!("squared residual overflowed (residual {r})"),
            });
        }
        acc += r2;
    }
    let m = acc / preds.len() as f64;
    if !m.is_finite() {
        return Err(EvalError {
            kind: EvalErrorKind::Overflow,
            row: 0,
            op: "score",
            message: "mean squared error overflowed".to_string(),
        });
    }
    Ok(m)
}

struct BfgsOutcome {
    x: Vec<f64>,
    f: f64,
    converged: bool,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn bfgs(obj: &mut impl FnMut(&[f64]) -> f64, x0: Vec<f64>, cfg: &FitConfig) -> BfgsOutcome {
    let p = x0.len();
    let mut x = x0;
    let mut fx = obj(&x);
    if !fx.is_finite() {
        return BfgsOutcome { x, f: f64::INFINITY, converged: false };
    }
    let Some(mut g) = gradient(obj, &x, cfg.grad_step) else {
        return BfgsOutcome { x, f: fx, converged: false };
    };

    // inverse-Hessian approximation, row-major p*p
    let mut h = identity(p);
    let mut converged = false;

    for _ in 0..cfg.max_iters_per_restart {
        if norm2(&g) <= cfg.tolerance {
            converged = true;
            break;
        }

        let mut d = mat_vec_neg(&h, &g);
        let mut gd = dot(&g, &d);
        if gd.is_nan() || gd >= 0.0 {
            // not a descent direction; reset to steepest descent
            h = identity(p);
            d = g.iter().map(|v| -v).collect();
            gd = -dot(&g, &g);
            if gd == 0.0 {
                converged = true;
                break;
            }
        }

        // backtracking Armijo line search; non-finite trial values backtrack
        let mut alpha = 1.0f64;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let ft = obj(&xt);
            if ft.is_finite() && ft <= fx + ARMIJO_C1 * alpha * gd {
                accepted = Some((xt, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };

        let Some(g_new) = gradient(obj, &x_new, cfg.grad_step) else {
            x = x_new;
            fx = f_new;
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm2(&s) * norm2(&y) {
            bfgs_update(&mut h, &s, &y, 1.0 / sy);
        }

        let step = alpha * norm2(&d);
        x = x_new;
        fx = f_new;
        g = g_new;
        if step < 1e-16 * (1.0 + norm2(&x)) {
            break;
        }
    }

    if norm2(&g) <= cfg.tolerance {
        converged = true;
    }
    BfgsOutcome { x, f: fx, converged }
}

/// Central finite differences with per-coordinate step scaling. Returns None
/// when any probe is non-finite.
fn gradient(obj: &mut impl FnMut(&[f64]) -> f64, x: &[f64], grad_step: f64) -> Option<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let h = grad_step * x[j].abs().max(1.0);
        let orig = x[j];
        probe[j] = orig + h;
        let fp = obj(&probe);
        probe[j] = orig - h;
        let fm = obj(&probe);
        probe[j] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return None;
        }
        g[j] = (fp - fm) / (2.0 * h);
    }
    Some(g)
}

/// H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T, in place.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], rho: f64) {
    let p = s.len();
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..p {
        for j in 0..p {
            h[i * p + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn identity(p: usize) -> Vec<f64> {
    let mut h = vec![0.0; p * p];
    for i in 0..p {
        h[i * p + i] = 1.0;
    }
    h
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let p = v.len();
    (0..p).map(|i| (0..p).map(|j| m[i * p + j] * v[j]).sum()).collect()
}

fn mat_vec_neg(m: &[f64], v: &[f64]) -> Vec<f64> {
    mat_vec(m, v).into_iter().map(|x| -x).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
