//! Nonlinear Markov chain Monte Carlo.
//!
//! A target chain `X` evolves under a kernel that depends on the empirical
//! measure of an auxiliary chain `Y` targeting a tempered version of the
//! target. Two nonlinear mechanisms are provided: selection with the
//! potential `g = pi / eta` and the exchange (genetic) move. The crate also
//! carries the drift and U/V-statistic diagnostics and the experiment
//! harness used by the `nlmc` command-line tool.
//!
//! Numerics are generic over [`Scalar`] (`f32`, `f64`); the U/V-statistics
//! accept any ring-like scalar, including exact rationals ([`Rational`]).
//! The aliases below fix the double-precision types used by the harness.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod measure;
pub mod output;
pub mod rng;
pub mod scalar;
pub mod simulator;
pub mod target;

pub use error::{Error, Result};
pub use kernels::{Branch, NonlinearKind, StepInfo, StepOutcome, Transition};
pub use scalar::{KahanSum, Scalar};
pub use target::{LogDensity, LyapunovPair, MixtureOfNormals, StdNormal, TargetModel, TemperedAuxiliary};

/// Exact rational scalar for the U/V-statistic identities.
pub type Rational = num_rational::Ratio<i128>;

pub type Model = TargetModel<f64>;
pub type Auxiliary = TemperedAuxiliary<f64, Model>;
pub type Measure = measure::EmpiricalMeasure<f64, Model>;
pub type Rwm = kernels::RwmKernel<f64, Model>;
pub type Nonlinear = kernels::NonlinearKernel<f64, Model>;
