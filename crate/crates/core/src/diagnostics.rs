//! Numerical diagnostics: brute-force U- and V-statistics, a Monte Carlo
//! check of the one-step drift inequality `KV <= lambda V + b 1_C`, and the
//! trajectory of `S_n^Y(V)`.
//!
//! The U/V-statistics are generic over any numeric ring with division by
//! integers, so identities between them can be checked exactly with
//! [`Rational`](crate::Rational) values.

use num_traits::{FromPrimitive, Num};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::Transition;
use crate::measure::EmpiricalMeasure;
use crate::scalar::{KahanSum, Scalar};
use crate::simulator::{default_test_functions, run_with, Observer, RunConfig, RunSummary};
use crate::target::{log_pi, LogDensity, LyapunovPair, TargetModel};

/// Upper bound on the number of index tuples enumerated by brute force.
pub const MAX_TUPLES: u128 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatKind {
    /// Average over all `(n+1)^q` index maps.
    VStat,
    /// Average over the `(n+1)_q` one-to-one index maps.
    UStat,
}

/// An order-`q` statistic of a sample.
#[derive(Debug, Clone)]
pub struct PolyStatistic<F> {
    pub q: usize,
    pub f: F,
    pub kind: StatKind,
}

impl<F> PolyStatistic<F> {
    pub fn new(q: usize, f: F, kind: StatKind) -> Result<Self> {
        if q == 0 {
            return Err(Error::Size("statistic order q must be at least 1".into()));
        }
        Ok(Self { q, f, kind })
    }

    pub fn evaluate<P, S>(&self, samples: &[P]) -> Result<S>
    where
        F: Fn(&[&P]) -> S,
        S: Num + Clone + FromPrimitive,
    {
        match self.kind {
            StatKind::VStat => v_statistic(samples, self.q, &self.f),
            StatKind::UStat => u_statistic(samples, self.q, &self.f),
        }
    }
}

/// `(n+1)_q = (n+1) n ... (n-q+2)`, the number of one-to-one maps of `q`
/// indices into `n+1` values.
pub fn falling_factorial(m: usize, q: usize) -> u128 {
    if q > m {
        return 0;
    }
    (0..q).fold(1u128, |acc, i| acc * (m - i) as u128)
}

fn tuple_count(m: usize, q: usize) -> Result<u128> {
    let total = (m as u128).checked_pow(q as u32).filter(|&t| t <= MAX_TUPLES).ok_or_else(|| {
        Error::Size(format!(
            "{m}^{q} index tuples exceed the brute-force limit of {MAX_TUPLES}; subsample the input"
        ))
    })?;
    Ok(total)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tuples {
    All,
    Injective,
    NonInjective,
}

fn is_injective(idx: &[usize]) -> bool {
    (1..idx.len()).all(|i| !idx[..i].contains(&idx[i]))
}

/// Sums `f` over index tuples of the given class, in lexicographic order.
fn tuple_sum<P, S, F>(samples: &[P], q: usize, which: Tuples, f: F) -> Result<S>
where
    F: Fn(&[&P]) -> S,
    S: Num + Clone,
{
    let m = samples.len();
    if m == 0 {
        return Err(Error::Size("sample is empty".into()));
    }
    if q == 0 {
        return Err(Error::Size("statistic order q must be at least 1".into()));
    }
    tuple_count(m, q)?;
    let mut idx = vec![0usize; q];
    let mut args: Vec<&P> = vec![&samples[0]; q];
    let mut acc = S::zero();
    loop {
        let keep = match which {
            Tuples::All => true,
            Tuples::Injective => is_injective(&idx),
            Tuples::NonInjective => !is_injective(&idx),
        };
        if keep {
            for (a, &i) in args.iter_mut().zip(&idx) {
                *a = &samples[i];
            }
            acc = acc + f(&args);
        }
        // odometer, last index fastest
        let mut pos = q;
        loop {
            if pos == 0 {
                return Ok(acc);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < m {
                break;
            }
            idx[pos] = 0;
        }
    }
}

fn from_count<S: FromPrimitive>(c: u128) -> Result<S> {
    S::from_u128(c).ok_or_else(|| Error::Size(format!("count {c} not representable in the scalar type")))
}

/// `S^{⊗q}(f) = (n+1)^{-q} sum over all maps {0..q-1} -> {0..n} of f(Z_θ)`.
pub fn v_statistic<P, S, F>(samples: &[P], q: usize, f: F) -> Result<S>
where
    F: Fn(&[&P]) -> S,
    S: Num + Clone + FromPrimitive,
{
    let sum = tuple_sum(samples, q, Tuples::All, f)?;
    Ok(sum / from_count((samples.len() as u128).pow(q as u32))?)
}

/// `S^{⊙q}(f) = ((n+1)_q)^{-1} sum over one-to-one maps of f(Z_θ)`.
pub fn u_statistic<P, S, F>(samples: &[P], q: usize, f: F) -> Result<S>
where
    F: Fn(&[&P]) -> S,
    S: Num + Clone + FromPrimitive,
{
    if samples.len() < q {
        return Err(Error::Size(format!("U-statistic of order {q} needs at least {q} samples, got {}", samples.len())));
    }
    let sum = tuple_sum(samples, q, Tuples::Injective, f)?;
    Ok(sum / from_count(falling_factorial(samples.len(), q))?)
}

/// Sum of `f` over the maps that are not one-to-one.
pub fn non_injective_sum<P, S, F>(samples: &[P], q: usize, f: F) -> Result<S>
where
    F: Fn(&[&P]) -> S,
    S: Num + Clone,
{
    tuple_sum(samples, q, Tuples::NonInjective, f)
}

/// Both sides of
/// `(n+1)^q [U - V](f) = [(n+1)^q - (n+1)_q] U(f) - sum_{non-injective} f`.
pub fn uv_identity_sides<P, S, F>(samples: &[P], q: usize, f: F) -> Result<(S, S)>
where
    F: Fn(&[&P]) -> S,
    S: Num + Clone + FromPrimitive,
{
    let m = samples.len() as u128;
    let all = from_count::<S>(m.pow(q as u32))?;
    let injective = from_count::<S>(falling_factorial(samples.len(), q))?;
    let u = u_statistic(samples, q, &f)?;
    let v = v_statistic(samples, q, &f)?;
    let rest = non_injective_sum(samples, q, &f)?;
    let lhs = all.clone() * (u.clone() - v);
    let rhs = (all - injective) * u - rest;
    Ok((lhs, rhs))
}

/// Per-probe Monte Carlo estimate of `KV(x) / V(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftProbe {
    pub x: Vec<f64>,
    pub ratio: f64,
    pub std_error: f64,
    pub samples: usize,
    /// `|x| > radius` and `ratio - 3 SE > 1`.
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub probes: Vec<DriftProbe>,
    pub radius: f64,
}

impl DriftReport {
    pub fn any_violation(&self) -> bool {
        self.probes.iter().any(|p| p.violation)
    }
}

/// Averages `V(X')/V(x)` over `mc_samples` independent one-step transitions
/// from each probe. Small-set membership is unknown, so only probes with
/// `|x| > radius` can be flagged.
pub fn drift_check<T, K, D, R>(
    kernel: &K,
    pair: &LyapunovPair<T>,
    model: &D,
    probes: &[Vec<T>],
    mc_samples: usize,
    radius: f64,
    rng: &mut R,
) -> Result<DriftReport>
where
    T: Scalar,
    K: Transition<T>,
    D: LogDensity<T>,
    R: Rng + ?Sized,
{
    if mc_samples < 100 {
        return Err(Error::Size(format!("drift check needs at least 100 samples per probe, got {mc_samples}")));
    }
    let mut out = Vec::with_capacity(probes.len());
    for x in probes {
        let lp_x = log_pi(model, x)?;
        pair.v_from_log_pi(lp_x)?;
        let mut sum = KahanSum::<f64>::new();
        let mut sum_sq = KahanSum::<f64>::new();
        let mut state = x.clone();
        for i in 0..mc_samples {
            state.copy_from_slice(x);
            kernel.transition(&mut state, rng).map_err(|e| Error::Numeric { index: i, message: e.to_string() })?;
            let lp = log_pi(model, &state)?;
            // V(x')/V(x) = exp(s_v (log pi(x) - log pi(x')))
            pair.v_from_log_pi(lp)?;
            let r = (pair.s_v() * (lp_x - lp)).as_f64().exp();
            sum.add(r);
            sum_sq.add(r * r);
        }
        let n = mc_samples as f64;
        let mean = sum.total() / n;
        let var = ((sum_sq.total() / n - mean * mean) * n / (n - 1.0)).max(0.0);
        let se = (var / n).sqrt();
        let norm = x.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        out.push(DriftProbe {
            x: x.iter().map(|v| v.as_f64()).collect(),
            ratio: mean,
            std_error: se,
            samples: mc_samples,
            violation: norm > radius && mean - 3.0 * se > 1.0,
        });
    }
    Ok(DriftReport { probes: out, radius })
}

/// `(n, S_n^Y(V))` sampled every `stride` iterations (always including
/// `n = 0` and the final iteration).
#[derive(Debug, Clone, PartialEq)]
pub struct SnvTrajectory {
    pub points: Vec<(usize, f64)>,
}

impl SnvTrajectory {
    pub fn value_at(&self, n: usize) -> Option<f64> {
        self.points.iter().find(|(k, _)| *k == n).map(|(_, v)| *v)
    }

    pub fn final_value(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    pub fn max_value(&self) -> Option<f64> {
        self.points.iter().map(|p| p.1).reduce(f64::max)
    }
}

struct SnvRecorder {
    stride: usize,
    last: usize,
    points: Vec<(usize, f64)>,
    failure: Option<Error>,
}

impl<T: Scalar> Observer<T, TargetModel<T>> for SnvRecorder {
    fn before_target_step(&mut self, n: usize, measure: &EmpiricalMeasure<T, TargetModel<T>>) {
        // S_0 is what the first step sees
        if n == 1 && !measure.is_empty() {
            self.record(0, measure);
        }
    }

    fn after_iteration(&mut self, n: usize, _x: &[T], _y: &[T], measure: &EmpiricalMeasure<T, TargetModel<T>>) {
        if (n.is_multiple_of(self.stride) || n == self.last) && !measure.is_empty() {
            self.record(n, measure);
        }
    }
}

impl SnvRecorder {
    fn record<T: Scalar>(&mut self, n: usize, measure: &EmpiricalMeasure<T, TargetModel<T>>) {
        match measure.measure_v() {
            Ok(v) => self.points.push((n, v.as_f64())),
            Err(e) => {
                self.failure.get_or_insert(e);
            }
        }
    }
}

/// Runs the configuration and records `S_n^Y(V)` along the way.
pub fn snv_trajectory(config: &RunConfig, stride: usize) -> Result<(SnvTrajectory, RunSummary)> {
    if config.lyapunov.is_none() {
        return Err(Error::State("S_n^Y(V) trajectory needs a Lyapunov pair (set s_v, s_w, r_star)".into()));
    }
    if stride == 0 {
        return Err(Error::Range { key: "snv_stride".into(), value: "0".into(), bounds: "[1, inf)".into() });
    }
    let mut rec = SnvRecorder { stride, last: config.n_iters, points: Vec::new(), failure: None };
    let tests = default_test_functions::<f64>(config.target.dimension());
    let (_, summary) = run_with::<f64, _>(config, &tests, &mut rec)?;
    if let Some(e) = rec.failure {
        return Err(e);
    }
    Ok((SnvTrajectory { points: rec.points }, summary))
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means.
pub fn batch_means_se(values: &[f64], batches: usize) -> Result<f64> {
    if batches < 2 || values.len() < 2 * batches {
        return Err(Error::Size(format!(
            "batch means needs at least 2 batches of 2 values (got {} values, {batches} batches)",
            values.len()
        )));
    }
    let size = values.len() / batches;
    let means: Vec<f64> = values.chunks_exact(size).take(batches).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let (_, sd) = crate::simulator::mean_and_sd(&means);
    Ok(sd / (batches as f64).sqrt())
}
