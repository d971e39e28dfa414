//! The coupled process: the auxiliary chain `Y` under the tempered RWM kernel
//! `P`, and the target chain `X` under `K_{S_{n-1}^Y}`.
//!
//! ```text
//! n = 0:  X_0 ~ x0, Y_0 ~ y0, S_0 = delta_{Y_0}
//! n >= 1: Y_n ~ P(Y_{n-1}, .)
//!         X_n ~ K_{S_{n-1}}(X_{n-1}, .)
//!         S_n = S_{n-1} + (delta_{Y_n} - S_{n-1}) / (n + 1)
//! ```
//!
//! `X` and `Y` draw from independent streams derived from the run seed, so
//! the `Y` trajectory does not depend on anything in the `X` chain.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{Branch, NonlinearKernel, NonlinearKind, RwmKernel};
use crate::measure::EmpiricalMeasure;
use crate::rng::{mix, stream, SimRng, STREAM_X, STREAM_Y};
use crate::scalar::{KahanSum, Scalar};
use crate::target::{
    estimate_log_pi_sup, LogDensity, LyapunovPair, MixtureOfNormals, StdNormal, TargetModel, TemperedAuxiliary,
};

/// Distribution of an initial state.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    /// Fixed point (one value is broadcast to every coordinate).
    Point(Vec<f64>),
    /// Independent `U[lo, hi]` coordinates.
    Uniform { lo: f64, hi: f64 },
}

impl InitialSpec {
    pub fn draw<T: Scalar, R: Rng + ?Sized>(&self, dimension: usize, rng: &mut R) -> Result<Vec<T>> {
        match self {
            InitialSpec::Point(p) if p.len() == dimension => Ok(p.iter().map(|&v| T::lit(v)).collect()),
            InitialSpec::Point(p) if p.len() == 1 => Ok(vec![T::lit(p[0]); dimension]),
            InitialSpec::Point(p) => Err(Error::Input(format!(
                "initial point has {} coordinates, expected {dimension}",
                p.len()
            ))),
            InitialSpec::Uniform { lo, hi } => Ok((0..dimension)
                .map(|_| {
                    let u: f64 = rng.random();
                    T::lit(lo + (hi - lo) * u)
                })
                .collect()),
        }
    }
}

/// Target as described in a configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    StdNormal { dimension: usize },
    MixtureNormals1d { weights: Vec<f64>, means: Vec<f64>, std_devs: Vec<f64> },
}

impl TargetSpec {
    /// The bimodal toy mixture `0.4 N(0, 0.5) + 0.6 N(17.5, 1)`.
    pub fn toy_mixture() -> Self {
        TargetSpec::MixtureNormals1d {
            weights: vec![0.4, 0.6],
            means: vec![0.0, 17.5],
            std_devs: vec![0.5_f64.sqrt(), 1.0],
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            TargetSpec::StdNormal { dimension } => *dimension,
            TargetSpec::MixtureNormals1d { .. } => 1,
        }
    }

    pub fn build<T: Scalar>(&self) -> Result<TargetModel<T>> {
        Ok(match self {
            TargetSpec::StdNormal { dimension } => TargetModel::StdNormal(StdNormal::new(*dimension)?),
            TargetSpec::MixtureNormals1d { weights, means, std_devs } => {
                let conv = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
                TargetModel::MixtureNormals1d(MixtureOfNormals::new(conv(weights), conv(means), conv(std_devs))?)
            }
        })
    }

    /// Box searched when `log |pi|_inf` has to be estimated.
    pub fn default_search_box(&self) -> Vec<(f64, f64)> {
        match self {
            TargetSpec::StdNormal { dimension } => vec![(-5.0, 5.0); *dimension],
            TargetSpec::MixtureNormals1d { means, std_devs, .. } => {
                let lo = means.iter().zip(std_devs).map(|(m, s)| m - 10.0 * s).fold(f64::INFINITY, f64::min);
                let hi = means.iter().zip(std_devs).map(|(m, s)| m + 10.0 * s).fold(f64::NEG_INFINITY, f64::max);
                vec![(lo, hi)]
            }
        }
    }
}

/// Parameters of the drift function `V` tracked through `S_n^Y(V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSpec {
    pub s_v: f64,
    pub s_w: f64,
    pub r_star: f64,
    /// `log |pi|_inf`; estimated on a grid when absent.
    pub log_pi_sup: Option<f64>,
}

/// Grid points per dimension for the supremum search.
pub const SUP_GRID_POINTS: usize = 2001;
/// Added to a grid-estimated supremum, which is only a lower bound.
pub const SUP_SLACK: f64 = 1e-9;

impl LyapunovSpec {
    pub fn resolve_log_pi_sup(&self, target: &TargetSpec) -> Result<f64> {
        match self.log_pi_sup {
            Some(v) => Ok(v),
            None => {
                let model = target.build::<f64>()?;
                let sup = estimate_log_pi_sup(&model, &target.default_search_box(), SUP_GRID_POINTS)?;
                Ok(sup + SUP_SLACK)
            }
        }
    }

    pub fn build<T: Scalar>(&self, target: &TargetSpec, alpha_tilde: f64) -> Result<LyapunovPair<T>> {
        let sup = self.resolve_log_pi_sup(target)?;
        LyapunovPair::new(T::lit(self.s_v), T::lit(self.s_w), T::lit(alpha_tilde), T::lit(self.r_star), T::lit(sup))
    }
}

/// Settings used by the experiment drivers rather than by a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct HarnessSettings {
    pub repeats: usize,
    pub epsilons: Vec<f64>,
    /// Iterations of the plain RWM baseline; the nonlinear sampler gets
    /// `round(baseline_iters * calibration_factor)`.
    pub baseline_iters: usize,
    pub compare_epsilon: f64,
    /// Cost ratio RWM / nonlinear per iteration. Measured when absent.
    pub calibration_factor: Option<f64>,
    pub drift_probes: Vec<f64>,
    pub drift_samples: usize,
    pub drift_radius: f64,
    pub snv_stride: usize,
    pub dump_trace: bool,
}

impl Default for HarnessSettings {
    fn default() -> Self {
        Self {
            repeats: 10,
            epsilons: vec![0.05, 0.25, 0.5, 0.75, 0.95],
            baseline_iters: 100_000,
            compare_epsilon: 0.01,
            calibration_factor: None,
            drift_probes: vec![-10.0, 30.0],
            drift_samples: 10_000,
            drift_radius: 0.0,
            snv_stride: 1000,
            dump_trace: false,
        }
    }
}

/// Complete description of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub target: TargetSpec,
    pub alpha_tilde: f64,
    pub epsilon: f64,
    pub kind: NonlinearKind,
    pub sigma_pi: Vec<f64>,
    pub sigma_eta: Vec<f64>,
    pub k_iterate: usize,
    pub p_iterate: usize,
    pub n_iters: usize,
    pub burn_in: usize,
    pub x0: InitialSpec,
    pub y0: InitialSpec,
    pub seed: u64,
    pub feed_after_burnin: bool,
    pub store_trace: bool,
    pub lyapunov: Option<LyapunovSpec>,
    pub harness: HarnessSettings,
}

impl RunConfig {
    /// Configuration with the toy mixture target and unit proposal scales.
    pub fn new(epsilon: f64, alpha_tilde: f64, n_iters: usize, seed: u64) -> Self {
        Self {
            target: TargetSpec::toy_mixture(),
            alpha_tilde,
            epsilon,
            kind: NonlinearKind::Exchange,
            sigma_pi: vec![1.0],
            sigma_eta: vec![1.0],
            k_iterate: 1,
            p_iterate: 1,
            n_iters,
            burn_in: 0,
            x0: InitialSpec::Point(vec![0.0]),
            y0: InitialSpec::Point(vec![0.0]),
            seed,
            feed_after_burnin: false,
            store_trace: false,
            lyapunov: None,
            harness: HarnessSettings::default(),
        }
    }

    fn broadcast(key: &str, v: &[f64], d: usize) -> Result<Vec<f64>> {
        match v.len() {
            1 => Ok(vec![v[0]; d]),
            n if n == d => Ok(v.to_vec()),
            n => Err(Error::Range {
                key: key.into(),
                value: format!("{n} values"),
                bounds: format!("1 or {d} values"),
            }),
        }
    }

    pub fn sigma_pi_full(&self) -> Result<Vec<f64>> {
        Self::broadcast("sigma_pi", &self.sigma_pi, self.target.dimension())
    }

    pub fn sigma_eta_full(&self) -> Result<Vec<f64>> {
        Self::broadcast("sigma_eta", &self.sigma_eta, self.target.dimension())
    }

    pub fn validate(&self) -> Result<()> {
        let range = |key: &str, v: String, b: &str| Error::Range { key: key.into(), value: v, bounds: b.into() };
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(range("epsilon", self.epsilon.to_string(), "(0, 1)"));
        }
        if !(self.alpha_tilde > 0.0 && self.alpha_tilde < 1.0) {
            return Err(range("alpha_tilde", self.alpha_tilde.to_string(), "(0, 1)"));
        }
        if self.n_iters == 0 {
            return Err(range("n_iters", "0".into(), "[1, inf)"));
        }
        if self.burn_in >= self.n_iters {
            return Err(range("burn_in", self.burn_in.to_string(), &format!("[0, n_iters = {})", self.n_iters)));
        }
        if self.k_iterate == 0 {
            return Err(range("k_iterate", "0".into(), "[1, inf)"));
        }
        if self.p_iterate == 0 {
            return Err(range("p_iterate", "0".into(), "[1, inf)"));
        }
        for (key, v) in [("sigma_pi", self.sigma_pi_full()?), ("sigma_eta", self.sigma_eta_full()?)] {
            if v.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(range(key, format!("{v:?}"), "(0, inf)"));
            }
        }
        if let InitialSpec::Uniform { lo, hi } = self.x0 {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(range("x0", format!("uniform:{lo},{hi}"), "finite lo <= hi"));
            }
        }
        if let InitialSpec::Uniform { lo, hi } = self.y0 {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(range("y0", format!("uniform:{lo},{hi}"), "finite lo <= hi"));
            }
        }
        if self.harness.repeats == 0 {
            return Err(range("repeats", "0".into(), "[1, inf)"));
        }
        let h = &self.harness;
        if h.epsilons.is_empty() || h.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(range("epsilons", format!("{:?}", h.epsilons), "non-empty list in (0, 1)"));
        }
        if !(h.compare_epsilon > 0.0 && h.compare_epsilon < 1.0) {
            return Err(range("compare_epsilon", h.compare_epsilon.to_string(), "(0, 1)"));
        }
        if h.baseline_iters == 0 {
            return Err(range("baseline_iters", "0".into(), "[1, inf)"));
        }
        if h.drift_samples < 100 {
            return Err(range("drift_samples", h.drift_samples.to_string(), "[100, inf)"));
        }
        if h.drift_radius.is_nan() || h.drift_radius < 0.0 {
            return Err(range("drift_radius", h.drift_radius.to_string(), "[0, inf)"));
        }
        if h.drift_probes.iter().any(|p| !p.is_finite()) {
            return Err(range("drift_probes", format!("{:?}", h.drift_probes), "finite values"));
        }
        if h.snv_stride == 0 {
            return Err(range("snv_stride", "0".into(), "[1, inf)"));
        }
        if let Some(f) = self.harness.calibration_factor {
            if !(f.is_finite() && f > 0.0) {
                return Err(range("calibration_factor", f.to_string(), "(0, inf)"));
            }
        }
        self.target.build::<f64>()?;
        if let Some(l) = &self.lyapunov {
            // range checks only; the supremum may be estimated later
            LyapunovPair::new(l.s_v, l.s_w, self.alpha_tilde, l.r_star, l.log_pi_sup.unwrap_or(0.0))?;
        }
        Ok(())
    }

    /// Copy with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Shared closure evaluating a test function at a state.
pub type TestFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// A named test function `f` whose ergodic average `S_n^X(f)` is estimated.
#[derive(Clone)]
pub struct TestFunction<T> {
    pub name: String,
    pub f: TestFn<T>,
}

impl<T> TestFunction<T> {
    pub fn new(name: impl Into<String>, f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }
}

impl<T> std::fmt::Debug for TestFunction<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).finish()
    }
}

/// First and second moments of every coordinate: `x`, `x_sq` in one
/// dimension, `x0`, `x0_sq`, `x1`, ... otherwise.
pub fn default_test_functions<T: Scalar>(dimension: usize) -> Vec<TestFunction<T>> {
    let mut out = Vec::with_capacity(2 * dimension);
    for j in 0..dimension {
        let base = if dimension == 1 { "x".to_string() } else { format!("x{j}") };
        out.push(TestFunction::new(base.clone(), move |x: &[T]| x[j]));
        out.push(TestFunction::new(format!("{base}_sq"), move |x: &[T]| x[j] * x[j]));
    }
    out
}

/// Hooks into the simulation loop.
pub trait Observer<T, D> {
    /// Called at iteration `n` just before `X_n` is drawn, with the measure
    /// the nonlinear kernel consults.
    fn before_target_step(&mut self, _n: usize, _measure: &EmpiricalMeasure<T, D>) {}

    /// Called once iteration `n` is complete (after the measure update).
    fn after_iteration(&mut self, _n: usize, _x: &[T], _y: &[T], _measure: &EmpiricalMeasure<T, D>) {}
}

impl<T, D> Observer<T, D> for () {}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BranchCounts {
    pub base: usize,
    pub nonlinear_accepted: usize,
    pub nonlinear_rejected: usize,
    /// Nonlinear branch drawn with an empty measure (counted in `base`).
    pub fallback: usize,
}

impl BranchCounts {
    pub fn eps_moves(&self) -> usize {
        self.nonlinear_accepted + self.nonlinear_rejected
    }

    pub fn total(&self) -> usize {
        self.base + self.nonlinear_accepted + self.nonlinear_rejected
    }
}

/// Everything produced by a run besides the summary.
#[derive(Debug, Clone)]
pub struct ChainTrace<T, D> {
    pub dimension: usize,
    /// Flattened `X_1..X_n` when trace storage is enabled.
    pub x_states: Option<Vec<T>>,
    pub measure: EmpiricalMeasure<T, D>,
    pub branches: BranchCounts,
    pub estimates: Vec<(String, T)>,
    pub n_iters: usize,
}

impl<T: Scalar, D> ChainTrace<T, D> {
    /// `X_n` for `n` in `1..=n_iters`, when stored.
    pub fn x(&self, n: usize) -> Option<&[T]> {
        let d = self.dimension;
        self.x_states.as_ref().map(|s| &s[(n - 1) * d..n * d])
    }

    /// First coordinate of the stored trajectory.
    pub fn x_first_coordinate(&self) -> Option<Vec<T>> {
        let d = self.dimension;
        self.x_states.as_ref().map(|s| s.iter().step_by(d).copied().collect())
    }
}

/// Estimator outputs and chain statistics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub n_iters: usize,
    pub estimates: Vec<(String, f64)>,
    pub accept_rwm_x: f64,
    pub accept_rwm_y: f64,
    pub accept_exchange: f64,
    pub branches: BranchCounts,
    pub snv_final: Option<f64>,
    pub snv_max: Option<f64>,
    pub wall_clock: Duration,
}

impl RunSummary {
    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.estimates.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn at_iteration(n: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric { message, .. } => Error::Numeric { index: n, message },
        other => Error::Numeric { index: n, message: other.to_string() },
    }
}

/// Runs the coupled process in scalar type `T` with custom test functions
/// and an observer.
pub fn run_with<T: Scalar, O: Observer<T, TargetModel<T>>>(
    config: &RunConfig,
    tests: &[TestFunction<T>],
    observer: &mut O,
) -> Result<(ChainTrace<T, TargetModel<T>>, RunSummary)> {
    config.validate()?;
    let started = Instant::now();
    let model = config.target.build::<T>()?;
    let d = model.dimension();
    let lift = |v: Vec<f64>| v.into_iter().map(T::lit).collect::<Vec<T>>();
    let aux = TemperedAuxiliary::new(model.clone(), T::lit(config.alpha_tilde))?;
    let k = RwmKernel::new(model.clone(), lift(config.sigma_pi_full()?), config.k_iterate)?;
    let p = RwmKernel::new(aux.clone(), lift(config.sigma_eta_full()?), config.p_iterate)?;
    let kernel = NonlinearKernel::new(k, T::lit(config.epsilon), config.kind, aux.clone())?;
    let pair = match &config.lyapunov {
        Some(spec) => Some(spec.build::<T>(&config.target, config.alpha_tilde)?),
        None => None,
    };

    let mut rng_x: SimRng = stream(config.seed, STREAM_X);
    let mut rng_y: SimRng = stream(config.seed, STREAM_Y);
    let mut x: Vec<T> = config.x0.draw(d, &mut rng_x)?;
    let mut y: Vec<T> = config.y0.draw(d, &mut rng_y)?;
    let mut lp_x = model.log_density(&x);
    let mut log_eta_y = p.target().log_density(&y);
    if !lp_x.is_finite() || !log_eta_y.is_finite() {
        return Err(Error::Domain("initial state has zero or undefined density".into()));
    }

    let mut measure = EmpiricalMeasure::empty(aux, pair);
    if !config.feed_after_burnin {
        measure.update(&y).map_err(at_iteration(0))?;
    }

    let mut scratch_x = vec![T::zero(); d];
    let mut scratch_y = vec![T::zero(); d];
    let mut sums = vec![KahanSum::<T>::new(); tests.len()];
    let mut x_states = config.store_trace.then(|| Vec::with_capacity(config.n_iters * d));
    let mut branches = BranchCounts::default();
    let (mut x_accepts, mut x_proposals, mut y_accepts) = (0usize, 0usize, 0usize);
    let mut snv_max = measure.measure_v().ok();

    for n in 1..=config.n_iters {
        y_accepts += p.advance(&mut y, &mut log_eta_y, &mut scratch_y, &mut rng_y).map_err(at_iteration(n))?;

        observer.before_target_step(n, &measure);
        let info = kernel.advance(&mut x, &mut lp_x, &measure, &mut scratch_x, &mut rng_x).map_err(at_iteration(n))?;
        match info.branch {
            Branch::BaseKernel => {
                branches.base += 1;
                x_accepts += info.base_accept_count;
                x_proposals += config.k_iterate;
                if info.fallback {
                    branches.fallback += 1;
                }
            }
            Branch::NonlinearAccepted => branches.nonlinear_accepted += 1,
            Branch::NonlinearRejected => branches.nonlinear_rejected += 1,
        }
        if !lp_x.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { index: n, message: format!("target chain left the support: {x:?}") });
        }

        if !config.feed_after_burnin || n >= config.burn_in {
            measure.update(&y).map_err(at_iteration(n))?;
        }
        if let (Some(m), Ok(v)) = (snv_max.as_mut(), measure.measure_v()) {
            *m = m.max(v);
        }

        if n > config.burn_in {
            for (acc, t) in sums.iter_mut().zip(tests) {
                acc.add((t.f)(&x));
            }
        }
        if let Some(s) = x_states.as_mut() {
            s.extend_from_slice(&x);
        }
        observer.after_iteration(n, &x, &y, &measure);
    }

    let kept = T::from_count(config.n_iters - config.burn_in);
    let estimates: Vec<(String, T)> =
        tests.iter().zip(&sums).map(|(t, s)| (t.name.clone(), s.total() / kept)).collect();
    let exchange_attempts = match config.kind {
        NonlinearKind::Exchange => branches.eps_moves(),
        NonlinearKind::SelectMutate { .. } => 0,
    };
    let summary = RunSummary {
        seed: config.seed,
        n_iters: config.n_iters,
        estimates: estimates.iter().map(|(n, v)| (n.clone(), v.as_f64())).collect(),
        accept_rwm_x: ratio(x_accepts, x_proposals),
        accept_rwm_y: ratio(y_accepts, config.n_iters * config.p_iterate),
        accept_exchange: if exchange_attempts == 0 { 0.0 } else { ratio(branches.nonlinear_accepted, exchange_attempts) },
        branches,
        snv_final: measure.measure_v().ok().map(|v| v.as_f64()),
        snv_max: snv_max.map(|v| v.as_f64()),
        wall_clock: started.elapsed(),
    };
    let trace = ChainTrace { dimension: d, x_states, measure, branches, estimates, n_iters: config.n_iters };
    Ok((trace, summary))
}

/// Double-precision run with the default test functions.
pub fn run(config: &RunConfig) -> Result<(ChainTrace<f64, TargetModel<f64>>, RunSummary)> {
    let tests = default_test_functions::<f64>(config.target.dimension());
    run_with(config, &tests, &mut ())
}

/// Plain random-walk Metropolis on the target with the same estimator
/// machinery (uses `sigma_pi`, `k_iterate`, `x0`, and the `X` stream).
pub fn rwm_baseline(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let started = Instant::now();
    let model = config.target.build::<f64>()?;
    let d = model.dimension();
    let k = RwmKernel::new(model.clone(), config.sigma_pi_full()?, config.k_iterate)?;
    let tests = default_test_functions::<f64>(d);
    let mut rng = stream(config.seed, STREAM_X);
    let mut x: Vec<f64> = config.x0.draw(d, &mut rng)?;
    let mut lp = model.log_density(&x);
    if !lp.is_finite() {
        return Err(Error::Domain("initial state has zero or undefined density".into()));
    }
    let mut scratch = vec![0.0; d];
    let mut sums = vec![KahanSum::<f64>::new(); tests.len()];
    let mut accepts = 0;
    for n in 1..=config.n_iters {
        accepts += k.advance(&mut x, &mut lp, &mut scratch, &mut rng).map_err(at_iteration(n))?;
        if n > config.burn_in {
            for (acc, t) in sums.iter_mut().zip(&tests) {
                acc.add((t.f)(&x));
            }
        }
    }
    let kept = (config.n_iters - config.burn_in) as f64;
    Ok(RunSummary {
        seed: config.seed,
        n_iters: config.n_iters,
        estimates: tests.iter().zip(&sums).map(|(t, s)| (t.name.clone(), s.total() / kept)).collect(),
        accept_rwm_x: ratio(accepts, config.n_iters * config.k_iterate),
        accept_rwm_y: 0.0,
        accept_exchange: 0.0,
        branches: BranchCounts { base: config.n_iters, ..Default::default() },
        snv_final: None,
        snv_max: None,
        wall_clock: started.elapsed(),
    })
}

/// Mean and twice the sample standard deviation of one estimate across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSpread {
    pub name: String,
    pub mean: f64,
    pub two_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_index: usize,
    pub seed: u64,
    pub summary: RunSummary,
}

/// Aggregate of repeated runs. Failed runs are listed, not aggregated.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatSummary {
    pub runs: Vec<RunRecord>,
    pub failures: Vec<(usize, Error)>,
    pub spreads: Vec<EstimateSpread>,
}

impl RepeatSummary {
    pub fn spread(&self, name: &str) -> Option<&EstimateSpread> {
        self.spreads.iter().find(|s| s.name == name)
    }

    pub fn per_run(&self, name: &str) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.summary.estimate(name)).collect()
    }

    fn from_results(seeds: &[u64], results: Vec<Result<RunSummary>>) -> Self {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for (i, (r, &seed)) in results.into_iter().zip(seeds).enumerate() {
            match r {
                Ok(summary) => runs.push(RunRecord { run_index: i, seed, summary }),
                Err(e) => failures.push((i, e)),
            }
        }
        let names: Vec<String> =
            runs.first().map(|r| r.summary.estimates.iter().map(|(n, _)| n.clone()).collect()).unwrap_or_default();
        let spreads = names
            .into_iter()
            .map(|name| {
                let vals: Vec<f64> = runs.iter().filter_map(|r| r.summary.estimate(&name)).collect();
                let (mean, sd) = mean_and_sd(&vals);
                EstimateSpread { name, mean, two_sd: 2.0 * sd }
            })
            .collect();
        Self { runs, failures, spreads }
    }
}

/// Sample mean and (n - 1)-normalized standard deviation.
pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut acc = KahanSum::new();
    values.iter().for_each(|&v| acc.add(v));
    let mean = acc.total() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let mut ss = KahanSum::new();
    values.iter().for_each(|&v| ss.add((v - mean) * (v - mean)));
    (mean, (ss.total() / (n - 1) as f64).sqrt())
}

/// Seeds `mix(seed, i)` for `i in 0..repeats`.
pub fn derived_seeds(seed: u64, repeats: usize) -> Vec<u64> {
    (0..repeats as u64).map(|i| mix(seed, i)).collect()
}

/// Runs `f` for every seed on the current rayon pool; results keep seed order.
pub fn repeat_with<F>(config: &RunConfig, seeds: &[u64], f: F) -> RepeatSummary
where
    F: Fn(&RunConfig) -> Result<RunSummary> + Sync,
{
    let results: Vec<Result<RunSummary>> = seeds.par_iter().map(|&s| f(&config.with_seed(s))).collect();
    RepeatSummary::from_results(seeds, results)
}

/// Independent repeats of the coupled process with seeds `mix(config.seed, i)`.
pub fn repeat_runs(config: &RunConfig, repeats: usize) -> Result<RepeatSummary> {
    if repeats < 2 {
        return Err(Error::Range { key: "repeats".into(), value: repeats.to_string(), bounds: "[2, inf)".into() });
    }
    config.validate()?;
    Ok(repeat_with(config, &derived_seeds(config.seed, repeats), |c| run(c).map(|(_, s)| s)))
}

/// Repeats of [`rwm_baseline`] with the same seed derivation.
pub fn repeat_baseline(config: &RunConfig, repeats: usize) -> Result<RepeatSummary> {
    if repeats < 2 {
        return Err(Error::Range { key: "repeats".into(), value: repeats.to_string(), bounds: "[2, inf)".into() });
    }
    Ok(repeat_with(config, &derived_seeds(config.seed, repeats), rwm_baseline))
}

/// Per-iteration cost ratio `t_rwm / t_nonlinear`, measured on short runs
/// (best of three). Multiplying an RWM iteration budget by it gives the
/// nonlinear budget of roughly equal CPU time.
pub fn calibrate_budget(config: &RunConfig, probe_iters: usize) -> Result<f64> {
    let probe = RunConfig { n_iters: probe_iters.max(2), burn_in: 0, store_trace: false, ..config.clone() };
    let best = |f: &dyn Fn() -> Result<()>| -> Result<f64> {
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let t = Instant::now();
            f()?;
            best = best.min(t.elapsed().as_secs_f64());
        }
        Ok(best)
    };
    let t_rwm = best(&|| rwm_baseline(&probe).map(|_| ()))?;
    let t_nl = best(&|| run(&probe).map(|_| ()))?;
    Ok((t_rwm / t_nl).clamp(1e-3, 1e3))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        let mut c = RunConfig::new(0.2, 0.75, 2000, 7);
        c.sigma_eta = vec![10.0];
        c
    }

    #[test]
    fn validation_ranges() {
        let mut c = small_config();
        c.burn_in = 2000;
        assert!(matches!(c.validate(), Err(Error::Range { .. })));
        let mut c = small_config();
        c.epsilon = 1.5;
        assert!(matches!(c.validate(), Err(Error::Range { .. })));
        let mut c = small_config();
        c.sigma_pi = vec![1.0, 2.0];
        assert!(c.validate().is_err());
        assert!(small_config().validate().is_ok());
    }

    #[test]
    fn counts_are_consistent() {
        let (trace, s) = run(&small_config()).unwrap();
        assert_eq!(s.branches.total(), 2000);
        assert_eq!(trace.measure.len(), 2001);
        for r in [s.accept_rwm_x, s.accept_rwm_y, s.accept_exchange] {
            assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn same_seed_same_summary() {
        let (_, a) = run(&small_config()).unwrap();
        let (_, b) = run(&small_config()).unwrap();
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.branches, b.branches);
    }

    #[test]
    fn feed_after_burnin_defers_measure() {
        struct Sizes(Vec<usize>);
        impl Observer<f64, TargetModel<f64>> for Sizes {
            fn before_target_step(&mut self, _n: usize, m: &EmpiricalMeasure<f64, TargetModel<f64>>) {
                self.0.push(m.len());
            }
        }
        let mut c = small_config();
        c.feed_after_burnin = true;
        c.burn_in = 100;
        c.epsilon = 0.5;
        let mut sizes = Sizes(Vec::new());
        let (_, s) = run_with(&c, &default_test_functions(1), &mut sizes).unwrap();
        assert!(sizes.0[..100].iter().all(|&l| l == 0));
        assert_eq!(sizes.0[100], 1);
        assert_eq!(sizes.0[1999], 1900);
        assert!(s.branches.fallback > 20);
    }

    #[test]
    fn mean_and_sd_basic() {
        let (m, sd) = mean_and_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((sd - (5.0_f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_sd(&[3.0]).1, 0.0);
    }

    #[test]
    fn initial_specs() {
        let mut rng = stream(1, 2);
        assert_eq!(InitialSpec::Point(vec![2.0]).draw::<f64, _>(3, &mut rng).unwrap(), vec![2.0; 3]);
        assert!(InitialSpec::Point(vec![1.0, 2.0]).draw::<f64, _>(3, &mut rng).is_err());
        for _ in 0..100 {
            let v: Vec<f64> = InitialSpec::Uniform { lo: 0.0, hi: 10.5 }.draw(2, &mut rng).unwrap();
            assert!(v.iter().all(|x| (0.0..=10.5).contains(x)));
        }
    }

    #[test]
    fn f32_run_works() {
        let c = small_config();
        let (_, s) = run_with::<f32, _>(&c, &default_test_functions(1), &mut ()).unwrap();
        assert!(s.estimate("x").unwrap().is_finite());
    }
}
