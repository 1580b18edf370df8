//! Benchmark dataset definitions and the generator.
//!
//! Trajectory tasks (the two driven nonlinear oscillators and the reaction
//! kinetics task) integrate their governing ODE with fixed-step RK4 and
//! sample rows along the trajectory; the target of each row is the governing
//! right-hand side evaluated at the sampled state. Direct-evaluation tasks
//! (bacterial growth, the two transformed wave/thermodynamics problems) draw
//! inputs uniformly from fixed ranges. The tensile stress task wraps a
//! real-world CSV and has no known ground-truth expression.

use super::ode::rk4;
use super::{
    load_csv, DataError, Dataset, DatasetMeta, SplitIndices, SplitPolicy, Variable,
};
use crate::expr::InputMatrix;
use crate::seeding::mix_seed;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Simulated time horizon for the oscillator and kinetics trajectories.
pub const OSCILLATOR_T_MAX: f64 = 50.0;

/// Fraction of a trajectory (by time) available to train/ID sampling; the
/// remainder is the out-of-distribution region.
const ID_TIME_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Benchmark {
    #[serde(rename = "oscillator1")]
    Oscillator1,
    #[serde(rename = "oscillator2")]
    Oscillator2,
    #[serde(rename = "ecoli_growth")]
    EcoliGrowth,
    #[serde(rename = "stress_strain_csv")]
    StressStrainCsv,
    #[serde(rename = "lsr_transform_I_37_4")]
    LsrTransformI374,
    #[serde(rename = "lsr_transform_III_4_33")]
    LsrTransformIii433,
    #[serde(rename = "lsr_synth_crk0")]
    LsrSynthCrk0,
}

impl Benchmark {
    pub fn id(self) -> &'static str {
        match self {
            Benchmark::Oscillator1 => "oscillator1",
            Benchmark::Oscillator2 => "oscillator2",
            Benchmark::EcoliGrowth => "ecoli_growth",
            Benchmark::StressStrainCsv => "stress_strain_csv",
            Benchmark::LsrTransformI374 => "lsr_transform_I_37_4",
            Benchmark::LsrTransformIii433 => "lsr_transform_III_4_33",
            Benchmark::LsrSynthCrk0 => "lsr_synth_crk0",
        }
    }

    /// Default relative-error threshold used for tolerance accuracy.
    pub fn default_tau(self) -> f64 {
        match self {
            Benchmark::Oscillator1 | Benchmark::Oscillator2 => 0.001,
            _ => 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OdeMethod {
    #[serde(rename = "RK4")]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeSettings {
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_method")]
    pub method: OdeMethod,
}

fn default_step_size() -> f64 {
    0.005
}

fn default_method() -> OdeMethod {
    OdeMethod::Rk4
}

impl Default for OdeSettings {
    fn default() -> Self {
        OdeSettings { step_size: default_step_size(), method: default_method() }
    }
}

/// Constants of the bacterial growth equation. The benchmark fixes the
/// functional form; these values are conventions of this artifact and can be
/// overridden in the generator spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EcoliParams {
    pub mu_max: f64,
    pub k_s: f64,
    pub k: f64,
    pub x0: f64,
    pub c: f64,
    pub x_decay: f64,
    pub ph_opt: f64,
    pub ph_min: f64,
    pub ph_max: f64,
}

impl Default for EcoliParams {
    fn default() -> Self {
        EcoliParams {
            mu_max: 1.0,
            k_s: 2.0,
            k: 0.3,
            x0: 20.0,
            c: 1e-5,
            x_decay: 40.0,
            ph_opt: 7.0,
            ph_min: 4.0,
            ph_max: 10.0,
        }
    }
}

/// Everything needed to generate one benchmark dataset deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub benchmark: Benchmark,
    pub seed: u64,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_id")]
    pub n_id: usize,
    #[serde(default = "default_n_ood")]
    pub n_ood: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub ode: OdeSettings,
    /// Source file for the tensile stress benchmark.
    #[serde(default)]
    pub csv: Option<PathBuf>,
    /// Saturation-term coefficient of the kinetics task.
    #[serde(default = "default_crk0_coefficient")]
    pub crk0_coefficient: f64,
    #[serde(default)]
    pub ecoli: EcoliParams,
}

fn default_n_train() -> usize {
    500
}

fn default_n_id() -> usize {
    250
}

fn default_n_ood() -> usize {
    250
}

fn default_crk0_coefficient() -> f64 {
    0.1899
}

impl GeneratorSpec {
    pub fn new(benchmark: Benchmark, seed: u64) -> Self {
        GeneratorSpec {
            benchmark,
            seed,
            n_train: default_n_train(),
            n_id: default_n_id(),
            n_ood: default_n_ood(),
            noise_sigma: 0.0,
            ode: OdeSettings::default(),
            csv: None,
            crk0_coefficient: default_crk0_coefficient(),
            ecoli: EcoliParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_train == 0 || self.n_id == 0 || self.n_ood == 0 {
            return Err(DataError::Invalid("split sizes must be positive".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(DataError::Invalid("noise_sigma must be non-negative".into()));
        }
        if self.ode.step_size.is_nan() || self.ode.step_size <= 0.0 {
            return Err(DataError::Invalid("ode.step_size must be positive".into()));
        }
        if self.benchmark == Benchmark::StressStrainCsv && self.csv.is_none() {
            return Err(DataError::Invalid("stress_strain_csv requires a csv path".into()));
        }
        Ok(())
    }
}

// ── governing equations ────────────────────────────────────────────

/// Driven oscillator with cubic damping and a position-cosine force term.
pub fn oscillator1_rhs(x: f64, v: f64) -> f64 {
    0.8 * (1.0 * x).sin() - 0.5 * v.powi(3) - 0.2 * x.powi(3) - 0.5 * x * v - x * x.cos()
}

/// Time-driven oscillator with cubic damping and exponential stiffening.
pub fn oscillator2_rhs(t: f64, x: f64, v: f64) -> f64 {
    0.3 * (1.0 * t).sin() - 0.5 * v.powi(3) - 1.0 * x * v - 5.0 * x * (0.5 * x).exp()
}

/// Bacterial growth rate under substrate, temperature, and pH modulation.
pub fn ecoli_rhs(p: &EcoliParams, b: f64, s: f64, t: f64, ph: f64) -> f64 {
    p.mu_max
        * b
        * (s / (p.k_s + s))
        * ((p.k * (t - p.x0)).tanh() / (1.0 + p.c * (t - p.x_decay).powi(4)))
        * (-(ph - p.ph_opt).abs()).exp()
        * ((ph - p.ph_min) * std::f64::consts::PI / (p.ph_max - p.ph_min)).sin().powi(2)
}

/// Resultant intensity of two interfering wave sources.
pub fn wave_intensity_rhs(i2: f64, int: f64, delta: f64) -> f64 {
    2.0 * i2 * delta.cos().powi(2)
        + i2
        + int
        + 2.0 * (i2 * (i2 * delta.cos().powi(2) + i2 + int)).sqrt() * delta.cos()
}

/// Temperature of a quantized oscillator mode given its energy.
pub fn oscillator_mode_temperature_rhs(h: f64, omega: f64, kb: f64, e_n: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    h * omega / (two_pi * kb * (1.0 + h * omega / (two_pi * e_n)).ln())
}

/// Reaction rate: second-order decay plus a saturating production term.
/// `z` is the saturation-term coefficient (0.1899 by convention).
pub fn crk0_rhs(z: f64, a: f64) -> f64 {
    -0.1899 * a.powi(2) + z * a.powi(2) / (0.7498 * a.powi(4) + 1.0)
}

/// Canonical grammar rendering of a benchmark's governing equation, when one
/// exists. The tensile stress task is empirical and returns `None`.
pub fn ground_truth_expression(spec: &GeneratorSpec) -> Option<String> {
    let pi = std::f64::consts::PI;
    match spec.benchmark {
        Benchmark::Oscillator1 => {
            Some("0.8*sin(x) - 0.5*v^3 - 0.2*x^3 - 0.5*x*v - x*cos(x)".to_string())
        }
        Benchmark::Oscillator2 => {
            Some("0.3*sin(t) - 0.5*v^3 - 1*x*v - 5*x*exp(0.5*x)".to_string())
        }
        Benchmark::EcoliGrowth => {
            let p = &spec.ecoli;
            Some(format!(
                "{mu}*B*(S/({ks} + S))*(tanh({k}*(T - {x0}))/(1 + {c}*(T - {xd})^4))*exp(-abs(pH - {po}))*sin((pH - {pmin})*{pi}/({pmax} - {pmin}))^2",
                mu = p.mu_max,
                ks = p.k_s,
                k = p.k,
                x0 = p.x0,
                c = p.c,
                xd = p.x_decay,
                po = p.ph_opt,
                pmin = p.ph_min,
                pmax = p.ph_max,
            ))
        }
        Benchmark::StressStrainCsv => None,
        Benchmark::LsrTransformI374 => Some(
            "2*I2*cos(delta)^2 + I2 + Int + 2*sqrt(I2*(I2*cos(delta)^2 + I2 + Int))*cos(delta)"
                .to_string(),
        ),
        Benchmark::LsrTransformIii433 => Some(format!(
            "h*omega/(2*{pi}*kb*log(1 + h*omega/(2*{pi}*E_n)))"
        )),
        Benchmark::LsrSynthCrk0 => Some(format!(
            "-0.1899*A^2 + {z}*A^2/(0.7498*A^4 + 1)",
            z = spec.crk0_coefficient
        )),
    }
}

// ── generation ─────────────────────────────────────────────────────

/// Generate the dataset described by `spec`. Deterministic given the seed.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    match spec.benchmark {
        Benchmark::Oscillator1 => {
            let traj = oscillator_trajectory(spec, |t, s| {
                let _ = t;
                vec![s[1], oscillator1_rhs(s[0], s[1])]
            })?;
            let vars = vec![
                Variable::new("x", "m", "displacement"),
                Variable::new("v", "m/s", "velocity"),
            ];
            trajectory_dataset(spec, &traj.0, &traj.1, vars, "v_dot", |t, s| {
                let _ = t;
                (vec![s[0], s[1]], oscillator1_rhs(s[0], s[1]))
            })
        }
        Benchmark::Oscillator2 => {
            let traj = oscillator_trajectory(spec, |t, s| {
                vec![s[1], oscillator2_rhs(t, s[0], s[1])]
            })?;
            let vars = vec![
                Variable::new("x", "m", "displacement"),
                Variable::new("v", "m/s", "velocity"),
                Variable::new("t", "s", "time"),
            ];
            trajectory_dataset(spec, &traj.0, &traj.1, vars, "v_dot", |t, s| {
                (vec![s[0], s[1], t], oscillator2_rhs(t, s[0], s[1]))
            })
        }
        Benchmark::LsrSynthCrk0 => {
            let z = spec.crk0_coefficient;
            let step = spec.ode.step_size;
            let n_steps = steps_for(OSCILLATOR_T_MAX, step);
            let traj = rk4(|_, s| vec![crk0_rhs(z, s[0])], 0.0, &[1.0], step, n_steps)?;
            let vars = vec![
                Variable::new("t", "s", "time"),
                Variable::new("A", "mol/L", "concentration"),
            ];
            trajectory_dataset(spec, &traj.times, &traj.states, vars, "dA_dt", |t, s| {
                (vec![t, s[0]], crk0_rhs(z, s[0]))
            })
        }
        Benchmark::EcoliGrowth => {
            let p = spec.ecoli;
            direct_dataset(
                spec,
                vec![
                    Variable::new("B", "g/L", "population density"),
                    Variable::new("S", "g/L", "substrate concentration"),
                    Variable::new("T", "C", "temperature"),
                    Variable::new("pH", "1", "acidity"),
                ],
                "dB_dt",
                &[(0.1, 10.0), (0.1, 10.0), (15.0, 45.0), (4.5, 9.5)],
                move |x| ecoli_rhs(&p, x[0], x[1], x[2], x[3]),
            )
        }
        Benchmark::LsrTransformI374 => direct_dataset(
            spec,
            vec![
                Variable::new("I2", "W/m^2", "intensity of the second source"),
                Variable::new("Int", "W/m^2", "intensity of the first source"),
                Variable::new("delta", "rad", "phase difference"),
            ],
            "I1",
            &[(0.5, 5.0), (0.5, 5.0), (0.0, 2.0 * std::f64::consts::PI)],
            |x| wave_intensity_rhs(x[0], x[1], x[2]),
        ),
        Benchmark::LsrTransformIii433 => direct_dataset(
            spec,
            vec![
                Variable::new("h", "J*s", "action constant"),
                Variable::new("omega", "rad/s", "angular frequency"),
                Variable::new("kb", "J/K", "thermal constant"),
                Variable::new("E_n", "J", "mode energy"),
            ],
            "T",
            &[(0.5, 3.0), (0.5, 3.0), (0.5, 3.0), (0.5, 3.0)],
            |x| oscillator_mode_temperature_rhs(x[0], x[1], x[2], x[3]),
        ),
        Benchmark::StressStrainCsv => {
            let path = spec.csv.as_ref().expect("validated above");
            let schema = vec![
                Variable::new("strain", "1", "engineering strain"),
                Variable::new("temp", "C", "test temperature"),
            ];
            let policy = SplitPolicy::OuterBandOod {
                n_train: spec.n_train,
                n_id: spec.n_id,
                n_ood: spec.n_ood,
                seed: spec.seed,
            };
            let mut data = load_csv(
                path,
                &schema,
                "stress",
                &policy,
                Benchmark::StressStrainCsv.id(),
                spec.benchmark.default_tau(),
            )?;
            data = with_generation_meta(data, spec)?;
            Ok(data)
        }
    }
}

fn steps_for(t_max: f64, step: f64) -> usize {
    ((t_max / step).round() as usize).max(1)
}

type TrajParts = (Vec<f64>, Vec<Vec<f64>>);

fn oscillator_trajectory(
    spec: &GeneratorSpec,
    deriv: impl Fn(f64, &[f64]) -> Vec<f64>,
) -> Result<TrajParts, DataError> {
    let step = spec.ode.step_size;
    let n_steps = steps_for(OSCILLATOR_T_MAX, step);
    let traj = rk4(deriv, 0.0, &[0.5, 0.5], step, n_steps)?;
    Ok((traj.times, traj.states))
}

/// Assemble a dataset from trajectory samples: train/ID rows come from the
/// first 70% of simulated time, OOD rows from the remainder.
fn trajectory_dataset(
    spec: &GeneratorSpec,
    times: &[f64],
    states: &[Vec<f64>],
    variables: Vec<Variable>,
    target_name: &str,
    row_of: impl Fn(f64, &[f64]) -> (Vec<f64>, f64),
) -> Result<Dataset, DataError> {
    let cut = ID_TIME_FRACTION * OSCILLATOR_T_MAX;
    let id_pool: Vec<usize> = (0..times.len()).filter(|&i| times[i] <= cut + 1e-12).collect();
    let ood_pool: Vec<usize> = (0..times.len()).filter(|&i| times[i] > cut + 1e-12).collect();
    if spec.n_train + spec.n_id > id_pool.len() {
        return Err(DataError::Invalid(format!(
            "trajectory provides {} in-distribution points, {} requested",
            id_pool.len(),
            spec.n_train + spec.n_id
        )));
    }
    if spec.n_ood > ood_pool.len() {
        return Err(DataError::Invalid(format!(
            "trajectory provides {} OOD points, {} requested",
            ood_pool.len(),
            spec.n_ood
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, "rows", &[]));
    let picked = rand::seq::index::sample(&mut rng, id_pool.len(), spec.n_train + spec.n_id);
    let mut train: Vec<usize> = picked.iter().take(spec.n_train).map(|k| id_pool[k]).collect();
    let mut id: Vec<usize> = picked.iter().skip(spec.n_train).map(|k| id_pool[k]).collect();
    let picked_ood = rand::seq::index::sample(&mut rng, ood_pool.len(), spec.n_ood);
    let mut ood: Vec<usize> = picked_ood.iter().map(|k| ood_pool[k]).collect();
    train.sort_unstable();
    id.sort_unstable();
    ood.sort_unstable();

    let d = variables.len();
    let mut data = Vec::with_capacity((train.len() + id.len() + ood.len()) * d);
    let mut y = Vec::new();
    for &i in train.iter().chain(&id).chain(&ood) {
        let (row, target) = row_of(times[i], &states[i]);
        debug_assert_eq!(row.len(), d);
        data.extend_from_slice(&row);
        y.push(target);
    }
    let x = InputMatrix::new(y.len(), d, data);
    let splits = contiguous_splits(spec.n_train, spec.n_id, spec.n_ood);
    finish_dataset(spec, variables, target_name, x, y, splits)
}

/// Assemble a dataset by direct evaluation over sampled input boxes.
fn direct_dataset(
    spec: &GeneratorSpec,
    variables: Vec<Variable>,
    target_name: &str,
    ranges: &[(f64, f64)],
    f: impl Fn(&[f64]) -> f64,
) -> Result<Dataset, DataError> {
    let d = ranges.len();
    debug_assert_eq!(variables.len(), d);
    // inner box excludes 7.5% of the span at each edge
    let inner: Vec<(f64, f64)> = ranges
        .iter()
        .map(|&(lo, hi)| {
            let m = 0.075 * (hi - lo);
            (lo + m, hi - m)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, "rows", &[]));
    let mut data = Vec::with_capacity((spec.n_train + spec.n_id + spec.n_ood) * d);
    let mut y = Vec::new();

    for _ in 0..spec.n_train + spec.n_id {
        let row: Vec<f64> = inner.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
        y.push(f(&row));
        data.extend_from_slice(&row);
    }
    let mut attempts = 0usize;
    let mut drawn = 0usize;
    while drawn < spec.n_ood {
        attempts += 1;
        if attempts > 1000 * spec.n_ood {
            return Err(DataError::Invalid("OOD rejection sampling did not converge".into()));
        }
        let row: Vec<f64> = ranges.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
        let in_outer_band =
            row.iter().zip(&inner).any(|(&v, &(ilo, ihi))| v < ilo || v > ihi);
        if !in_outer_band {
            continue;
        }
        y.push(f(&row));
        data.extend_from_slice(&row);
        drawn += 1;
    }

    for (i, v) in y.iter().enumerate() {
        if !v.is_finite() {
            return Err(DataError::Invalid(format!("target non-finite at generated row {i}")));
        }
    }
    let x = InputMatrix::new(y.len(), d, data);
    let splits = contiguous_splits(spec.n_train, spec.n_id, spec.n_ood);
    finish_dataset(spec, variables, target_name, x, y, splits)
}

fn contiguous_splits(n_train: usize, n_id: usize, n_ood: usize) -> SplitIndices {
    SplitIndices {
        train: (0..n_train).collect(),
        id_test: (n_train..n_train + n_id).collect(),
        ood_test: (n_train + n_id..n_train + n_id + n_ood).collect(),
    }
}

fn finish_dataset(
    spec: &GeneratorSpec,
    variables: Vec<Variable>,
    target_name: &str,
    x: InputMatrix,
    mut y: Vec<f64>,
    splits: SplitIndices,
) -> Result<Dataset, DataError> {
    if spec.noise_sigma > 0.0 {
        apply_noise(&mut y, &splits.train, spec.noise_sigma, spec.seed);
    }
    let meta = DatasetMeta {
        name: spec.benchmark.id().to_string(),
        benchmark: Some(spec.benchmark.id().to_string()),
        variables,
        target_name: target_name.to_string(),
        seed: Some(spec.seed),
        noise_sigma: spec.noise_sigma,
        default_tau: spec.benchmark.default_tau(),
        splits,
    };
    Dataset::new(meta, x, y)
}

fn with_generation_meta(data: Dataset, spec: &GeneratorSpec) -> Result<Dataset, DataError> {
    let mut meta = data.meta().clone();
    meta.benchmark = Some(spec.benchmark.id().to_string());
    meta.seed = Some(spec.seed);
    meta.noise_sigma = spec.noise_sigma;
    let mut y = data.y().to_vec();
    if spec.noise_sigma > 0.0 {
        apply_noise(&mut y, &meta.splits.train.clone(), spec.noise_sigma, spec.seed);
    }
    Dataset::new(meta, data.x().clone(), y)
}

/// Add zero-mean Gaussian noise to the train-split targets only.
fn apply_noise(y: &mut [f64], train: &[usize], sigma: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "noise", &[]));
    let dist = Normal::new(0.0, sigma).expect("sigma validated non-negative");
    for &i in train {
        y[i] += dist.sample(&mut rng);
    }
}
