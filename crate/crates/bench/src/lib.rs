//! Shared fixtures for the kernel benchmarks.

use eqsearch_core::data::{generate, Benchmark, Dataset, GeneratorSpec};

/// The oscillator skeleton used across benchmarks (linear in its parameters).
pub const SKELETON: &str =
    "params[0]*sin(x) - params[1]*v^3 - params[2]*x^3 - params[3]*x*v - x*cos(x)";

/// A mid-sized oscillator dataset (500 train rows).
pub fn oscillator_dataset() -> Dataset {
    let spec = GeneratorSpec::new(Benchmark::Oscillator1, 99);
    generate(&spec).expect("benchmark dataset generates")
}
