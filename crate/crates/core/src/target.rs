//! Target densities, the tempered auxiliary density and the Lyapunov
//! functions used by the drift diagnostics.
//!
//! Every density here is unnormalized and lives in log space. Zero density
//! is encoded as `-inf`; a NaN anywhere is treated as a hard error by the
//! validating entry points.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Unnormalized log density on `R^d`.
///
/// `log_density` performs no validation; it sits in the innermost sampling
/// loop. Use [`log_pi`] at API boundaries.
pub trait LogDensity<T: Scalar>: Send + Sync {
    fn dimension(&self) -> usize;

    fn log_density(&self, x: &[T]) -> T;

    fn name(&self) -> String {
        "custom".to_string()
    }
}

impl<T: Scalar, D: LogDensity<T> + ?Sized> LogDensity<T> for &D {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn log_density(&self, x: &[T]) -> T {
        (**self).log_density(x)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

impl<T: Scalar, D: LogDensity<T> + ?Sized> LogDensity<T> for Arc<D> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn log_density(&self, x: &[T]) -> T {
        (**self).log_density(x)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

/// Checks that `x` is a valid point for a `dimension`-dimensional density.
pub fn check_point<T: Scalar>(dimension: usize, x: &[T]) -> Result<()> {
    if x.len() != dimension {
        return Err(Error::Input(format!(
            "point has {} coordinates, expected {dimension}",
            x.len()
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("coordinate {i} is not finite ({})", x[i])));
    }
    Ok(())
}

/// Validated evaluation of the unnormalized log target density.
pub fn log_pi<T: Scalar, D: LogDensity<T> + ?Sized>(model: &D, x: &[T]) -> Result<T> {
    check_point(model.dimension(), x)?;
    let v = model.log_density(x);
    if v.is_nan() || v == T::infinity() {
        return Err(Error::Numeric {
            index: 0,
            message: format!("log density of `{}` evaluated to {v}", model.name()),
        });
    }
    Ok(v)
}

/// Standard normal on `R^d`, normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct StdNormal {
    dimension: usize,
}

impl StdNormal {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Input("dimension must be positive".into()));
        }
        Ok(Self { dimension })
    }
}

impl<T: Scalar> LogDensity<T> for StdNormal {
    fn dimension(&self) -> usize {
        self.dimension
    }

    #[inline]
    fn log_density(&self, x: &[T]) -> T {
        let half = T::lit(0.5);
        let sq = x.iter().fold(T::zero(), |acc, &v| acc + v * v);
        -half * sq - half * T::from_count(self.dimension) * (T::TAU()).ln()
    }

    fn name(&self) -> String {
        format!("std_normal({})", self.dimension)
    }
}

/// Univariate mixture of normal densities.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOfNormals<T> {
    weights: Vec<T>,
    means: Vec<T>,
    std_devs: Vec<T>,
    // ln(w_k) - ln(sigma_k) - 0.5 ln(2 pi)
    log_coef: Vec<T>,
    neg_half_precision: Vec<T>,
}

impl<T: Scalar> MixtureOfNormals<T> {
    pub fn new(weights: Vec<T>, means: Vec<T>, std_devs: Vec<T>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || std_devs.len() != k {
            return Err(Error::Input(format!(
                "mixture needs equally many weights, means and std_devs (got {}, {}, {})",
                k,
                means.len(),
                std_devs.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= T::zero())) {
            return Err(Error::Input("mixture weights must be finite and non-negative".into()));
        }
        let total = weights.iter().fold(0.0, |acc, w| acc + w.as_f64());
        let tol = if std::mem::size_of::<T>() < 8 { 1e-6 } else { 1e-12 };
        if (total - 1.0).abs() > tol {
            return Err(Error::Input(format!("mixture weights sum to {total}, expected 1")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Input("mixture means must be finite".into()));
        }
        if std_devs.iter().any(|s| !(s.is_finite() && *s > T::zero())) {
            return Err(Error::Input("mixture std_devs must be positive and finite".into()));
        }
        let half_log_tau = T::lit(0.5) * T::TAU().ln();
        let log_coef = weights
            .iter()
            .zip(&std_devs)
            .map(|(&w, &s)| w.ln() - s.ln() - half_log_tau)
            .collect();
        let neg_half_precision = std_devs.iter().map(|&s| -T::lit(0.5) / (s * s)).collect();
        Ok(Self { weights, means, std_devs, log_coef, neg_half_precision })
    }

    /// `0.4 N(0, 0.5) + 0.6 N(17.5, 1)` (second argument is the variance),
    /// whose mean is 10.5.
    pub fn bimodal_toy() -> Self {
        Self::new(
            vec![T::lit(0.4), T::lit(0.6)],
            vec![T::zero(), T::lit(17.5)],
            vec![T::lit(0.5).sqrt(), T::one()],
        )
        .expect("toy mixture parameters are valid")
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[T] {
        &self.means
    }

    pub fn std_devs(&self) -> &[T] {
        &self.std_devs
    }

    /// Mixture mean `sum w_k m_k`.
    pub fn mean(&self) -> T {
        self.weights.iter().zip(&self.means).fold(T::zero(), |acc, (&w, &m)| acc + w * m)
    }
}

impl<T: Scalar> LogDensity<T> for MixtureOfNormals<T> {
    fn dimension(&self) -> usize {
        1
    }

    #[inline]
    fn log_density(&self, x: &[T]) -> T {
        let x = x[0];
        // single-pass log-sum-exp
        let mut max = T::neg_infinity();
        let mut sum = T::zero();
        for ((&c, &m), &p) in self.log_coef.iter().zip(&self.means).zip(&self.neg_half_precision) {
            let d = x - m;
            let term = c + p * d * d;
            if term <= max {
                sum += (term - max).exp();
            } else {
                sum = sum * (max - term).exp() + T::one();
                max = term;
            }
        }
        if max == T::neg_infinity() {
            return max;
        }
        max + sum.ln()
    }

    fn name(&self) -> String {
        format!("mixture_normals_1d({} components)", self.weights.len())
    }
}

/// Log density given by a closure.
#[derive(Clone)]
pub struct FnDensity<F> {
    dimension: usize,
    name: String,
    f: F,
}

impl<F> FnDensity<F> {
    pub fn new(dimension: usize, name: impl Into<String>, f: F) -> Self {
        Self { dimension, name: name.into(), f }
    }
}

impl<T: Scalar, F: Fn(&[T]) -> T + Send + Sync> LogDensity<T> for FnDensity<F> {
    fn dimension(&self) -> usize {
        self.dimension
    }
    fn log_density(&self, x: &[T]) -> T {
        (self.f)(x)
    }
    fn name(&self) -> String {
        self.name.clone()
    }
}

/// The targets that can be described in a run configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetModel<T> {
    StdNormal(StdNormal),
    MixtureNormals1d(MixtureOfNormals<T>),
}

impl<T: Scalar> LogDensity<T> for TargetModel<T> {
    fn dimension(&self) -> usize {
        match self {
            TargetModel::StdNormal(s) => LogDensity::<T>::dimension(s),
            TargetModel::MixtureNormals1d(m) => m.dimension(),
        }
    }

    #[inline]
    fn log_density(&self, x: &[T]) -> T {
        match self {
            TargetModel::StdNormal(s) => s.log_density(x),
            TargetModel::MixtureNormals1d(m) => m.log_density(x),
        }
    }

    fn name(&self) -> String {
        match self {
            TargetModel::StdNormal(s) => LogDensity::<T>::name(s),
            TargetModel::MixtureNormals1d(m) => m.name(),
        }
    }
}

/// Tempered density `eta ∝ pi^alpha_tilde` built on a base target.
///
/// As a [`LogDensity`] it evaluates `log eta`, so a random-walk kernel built
/// on it is the auxiliary kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperedAuxiliary<T, D> {
    base: D,
    alpha_tilde: T,
}

impl<T: Scalar, D: LogDensity<T>> TemperedAuxiliary<T, D> {
    pub fn new(base: D, alpha_tilde: T) -> Result<Self> {
        if !(alpha_tilde > T::zero() && alpha_tilde < T::one()) {
            return Err(Error::Range {
                key: "alpha_tilde".into(),
                value: alpha_tilde.to_string(),
                bounds: "(0, 1)".into(),
            });
        }
        Ok(Self { base, alpha_tilde })
    }

    pub fn base(&self) -> &D {
        &self.base
    }

    pub fn alpha_tilde(&self) -> T {
        self.alpha_tilde
    }

    /// `1 - alpha_tilde`, the exponent of the potential `g = pi / eta`.
    #[inline]
    pub fn potential_exponent(&self) -> T {
        T::one() - self.alpha_tilde
    }

    pub fn log_pi(&self, x: &[T]) -> Result<T> {
        log_pi(&self.base, x)
    }

    pub fn log_eta(&self, x: &[T]) -> Result<T> {
        Ok(self.alpha_tilde * self.log_pi(x)?)
    }

    pub fn log_g(&self, x: &[T]) -> Result<T> {
        Ok(self.potential_exponent() * self.log_pi(x)?)
    }

    /// `log g` from an already evaluated `log pi`.
    #[inline]
    pub fn log_g_from_log_pi(&self, log_pi: T) -> T {
        self.potential_exponent() * log_pi
    }

    /// Log acceptance of the exchange move `x -> y`:
    /// `min(0, log g(y) - log g(x))`, which equals
    /// `log(1 ∧ pi(y) eta(x) / (pi(x) eta(y)))`.
    pub fn log_alpha_exchange(&self, x: &[T], y: &[T]) -> Result<T> {
        let lx = self.log_pi(x)?;
        if lx == T::neg_infinity() {
            return Err(Error::Domain(
                "exchange acceptance undefined: current state has zero density".into(),
            ));
        }
        let ly = self.log_pi(y)?;
        Ok(exchange_log_acceptance(self.log_g_from_log_pi(lx), self.log_g_from_log_pi(ly)))
    }
}

/// `min(0, log_g_to - log_g_from)`; `-inf` when the destination has zero density.
#[inline]
pub fn exchange_log_acceptance<T: Scalar>(log_g_from: T, log_g_to: T) -> T {
    if log_g_to == T::neg_infinity() {
        return T::neg_infinity();
    }
    (log_g_to - log_g_from).min(T::zero())
}

impl<T: Scalar, D: LogDensity<T>> LogDensity<T> for TemperedAuxiliary<T, D> {
    fn dimension(&self) -> usize {
        self.base.dimension()
    }

    #[inline]
    fn log_density(&self, x: &[T]) -> T {
        self.alpha_tilde * self.base.log_density(x)
    }

    fn name(&self) -> String {
        format!("tempered({}, {})", self.base.name(), self.alpha_tilde)
    }
}

/// The drift functions `V = (|pi|_inf / pi)^s_v` and
/// `W = (|pi|_inf / pi)^(alpha_tilde s_w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovPair<T> {
    s_v: T,
    s_w: T,
    alpha_tilde: T,
    r_star: T,
    log_pi_sup: T,
}

impl<T: Scalar> LyapunovPair<T> {
    /// Requires `s_v < r_star * alpha_tilde * s_w` with every exponent in (0, 1).
    pub fn new(s_v: T, s_w: T, alpha_tilde: T, r_star: T, log_pi_sup: T) -> Result<Self> {
        for (key, v) in [("s_v", s_v), ("s_w", s_w), ("alpha_tilde", alpha_tilde), ("r_star", r_star)] {
            if !(v > T::zero() && v < T::one()) {
                return Err(Error::Range { key: key.into(), value: v.to_string(), bounds: "(0, 1)".into() });
            }
        }
        let bound = r_star * alpha_tilde * s_w;
        if s_v >= bound {
            return Err(Error::Range {
                key: "s_v".into(),
                value: s_v.to_string(),
                bounds: format!("(0, r_star * alpha_tilde * s_w) = (0, {bound})"),
            });
        }
        if !log_pi_sup.is_finite() {
            return Err(Error::Input(format!("log_pi_sup must be finite, got {log_pi_sup}")));
        }
        Ok(Self { s_v, s_w, alpha_tilde, r_star, log_pi_sup })
    }

    pub fn s_v(&self) -> T {
        self.s_v
    }
    pub fn s_w(&self) -> T {
        self.s_w
    }
    pub fn alpha_tilde(&self) -> T {
        self.alpha_tilde
    }
    pub fn r_star(&self) -> T {
        self.r_star
    }
    pub fn log_pi_sup(&self) -> T {
        self.log_pi_sup
    }

    fn log_ratio(&self, log_pi: T) -> Result<T> {
        if !log_pi.is_finite() {
            return Err(Error::Domain(format!("Lyapunov function needs finite log pi, got {log_pi}")));
        }
        let gap = self.log_pi_sup - log_pi;
        if gap < T::zero() {
            return Err(Error::Invariant(format!(
                "stale supremum: log pi = {log_pi} exceeds log_pi_sup = {}",
                self.log_pi_sup
            )));
        }
        Ok(gap)
    }

    /// `V` from an already evaluated `log pi`.
    #[inline]
    pub fn v_from_log_pi(&self, log_pi: T) -> Result<T> {
        Ok((self.s_v * self.log_ratio(log_pi)?).exp())
    }

    #[inline]
    pub fn w_from_log_pi(&self, log_pi: T) -> Result<T> {
        Ok((self.alpha_tilde * self.s_w * self.log_ratio(log_pi)?).exp())
    }

    pub fn lyapunov_v<D: LogDensity<T> + ?Sized>(&self, model: &D, x: &[T]) -> Result<T> {
        self.v_from_log_pi(log_pi(model, x)?)
    }

    pub fn lyapunov_w<D: LogDensity<T> + ?Sized>(&self, model: &D, x: &[T]) -> Result<T> {
        self.w_from_log_pi(log_pi(model, x)?)
    }
}

/// Grid search (at most 3 dimensions) for `max log pi` over a box, refined by
/// coordinate-wise golden-section search around the best grid point.
///
/// The result is a lower bound on the true supremum.
pub fn estimate_log_pi_sup<T: Scalar, D: LogDensity<T> + ?Sized>(
    model: &D,
    search_box: &[(T, T)],
    grid_points: usize,
) -> Result<T> {
    let d = model.dimension();
    if d > 3 {
        return Err(Error::Unsupported(format!(
            "grid search for the supremum is limited to 3 dimensions (got {d}); supply log_pi_sup"
        )));
    }
    if search_box.len() != d {
        return Err(Error::Input(format!("search box has {} intervals, expected {d}", search_box.len())));
    }
    if grid_points < 2 {
        return Err(Error::Input("grid_points must be at least 2".into()));
    }
    for &(lo, hi) in search_box {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Input(format!("invalid search interval [{lo}, {hi}]")));
        }
    }
    let steps: Vec<T> =
        search_box.iter().map(|&(lo, hi)| (hi - lo) / T::from_count(grid_points - 1)).collect();
    let total = grid_points.pow(d as u32);
    let mut point = vec![T::zero(); d];
    let mut best = T::neg_infinity();
    let mut best_point = search_box.iter().map(|b| b.0).collect::<Vec<_>>();
    for flat in 0..total {
        let mut rem = flat;
        for (j, p) in point.iter_mut().enumerate() {
            let idx = rem % grid_points;
            rem /= grid_points;
            *p = search_box[j].0 + steps[j] * T::from_count(idx);
        }
        let v = model.log_density(&point);
        if v.is_nan() {
            return Err(Error::Numeric { index: flat, message: "NaN log density during grid search".into() });
        }
        if v > best {
            best = v;
            best_point.copy_from_slice(&point);
        }
    }
    if best == T::neg_infinity() {
        return Ok(best);
    }
    let mut current = best_point;
    for _sweep in 0..if d == 1 { 1 } else { 3 } {
        for j in 0..d {
            let lo = (current[j] - steps[j]).max(search_box[j].0);
            let hi = (current[j] + steps[j]).min(search_box[j].1);
            let mut probe = current.clone();
            let (arg, val) = golden_section_max(
                |t| {
                    probe[j] = t;
                    model.log_density(&probe)
                },
                lo,
                hi,
            );
            if val > best {
                best = val;
                current[j] = arg;
            }
        }
    }
    Ok(best)
}

fn golden_section_max<T: Scalar>(mut f: impl FnMut(T) -> T, mut a: T, mut b: T) -> (T, T) {
    let inv_phi = T::lit(0.618_033_988_749_894_9);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= T::epsilon() * (T::one() + c.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
