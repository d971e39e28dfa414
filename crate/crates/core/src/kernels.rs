//! Random-walk Metropolis and the two nonlinear kernels
//! `K_mu = (1 - eps) K + eps Phi(mu)` and `K_mu = (1 - eps) K + eps Q_mu`.
//!
//! Each step consumes random draws in a fixed order so that traces are
//! reproducible: branch uniform, then for every RWM iterate the proposal
//! normals followed by the acceptance uniform, then for the nonlinear branch
//! the selection uniform and (exchange only) the acceptance uniform.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::scalar::Scalar;
use crate::target::{check_point, exchange_log_acceptance, LogDensity, TemperedAuxiliary};

/// Which part of a kernel produced a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    BaseKernel,
    NonlinearAccepted,
    NonlinearRejected,
}

/// Bookkeeping for one transition, without the state itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepInfo {
    pub branch: Branch,
    /// RWM acceptances within the base-kernel iterates (0 off the base branch).
    pub base_accept_count: usize,
    /// RWM acceptances of the mutation that follows a selection.
    pub mutation_accept_count: usize,
    /// The nonlinear branch was drawn but the measure was empty.
    pub fallback: bool,
}

impl StepInfo {
    fn base(accepts: usize, fallback: bool) -> Self {
        Self { branch: Branch::BaseKernel, base_accept_count: accepts, mutation_accept_count: 0, fallback }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T> {
    pub new_state: Vec<T>,
    pub branch: Branch,
    pub base_accept_count: usize,
    pub mutation_accept_count: usize,
    pub fallback: bool,
}

impl<T> StepOutcome<T> {
    fn from_info(new_state: Vec<T>, info: StepInfo) -> Self {
        Self {
            new_state,
            branch: info.branch,
            base_accept_count: info.base_accept_count,
            mutation_accept_count: info.mutation_accept_count,
            fallback: info.fallback,
        }
    }
}

#[inline]
fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    log_ratio >= 0.0 || u < log_ratio.exp()
}

/// Symmetric random-walk Metropolis with Gaussian increments, iterated
/// `iterate_count` times per step.
#[derive(Debug, Clone, PartialEq)]
pub struct RwmKernel<T, D> {
    target: D,
    proposal_std: Vec<T>,
    iterate_count: usize,
}

impl<T: Scalar, D: LogDensity<T>> RwmKernel<T, D> {
    pub fn new(target: D, proposal_std: Vec<T>, iterate_count: usize) -> Result<Self> {
        if proposal_std.len() != target.dimension() {
            return Err(Error::Input(format!(
                "{} proposal scales for a {}-dimensional target",
                proposal_std.len(),
                target.dimension()
            )));
        }
        if proposal_std.iter().any(|s| !(s.is_finite() && *s > T::zero())) {
            return Err(Error::Range {
                key: "proposal_std".into(),
                value: format!("{proposal_std:?}"),
                bounds: "(0, inf) in every coordinate".into(),
            });
        }
        if iterate_count == 0 {
            return Err(Error::Range {
                key: "iterate_count".into(),
                value: "0".into(),
                bounds: "[1, inf)".into(),
            });
        }
        Ok(Self { target, proposal_std, iterate_count })
    }

    /// Same scale in every coordinate.
    pub fn isotropic(target: D, std: T, iterate_count: usize) -> Result<Self> {
        let d = target.dimension();
        Self::new(target, vec![std; d], iterate_count)
    }

    pub fn target(&self) -> &D {
        &self.target
    }

    pub fn proposal_std(&self) -> &[T] {
        &self.proposal_std
    }

    pub fn iterate_count(&self) -> usize {
        self.iterate_count
    }

    pub fn dimension(&self) -> usize {
        self.proposal_std.len()
    }

    /// Runs the `iterate_count` Metropolis steps in place. `log_density`
    /// holds the target's log density at `x` and is kept current; `scratch`
    /// must have the chain's dimension. Returns the number of acceptances.
    #[inline]
    pub fn advance<R: Rng + ?Sized>(
        &self,
        x: &mut [T],
        log_density: &mut T,
        scratch: &mut [T],
        rng: &mut R,
    ) -> Result<usize> {
        let mut accepted = 0;
        for it in 0..self.iterate_count {
            for ((p, &xi), &s) in scratch.iter_mut().zip(x.iter()).zip(&self.proposal_std) {
                let z: f64 = rng.sample(StandardNormal);
                *p = xi + s * T::lit(z);
            }
            let proposed = self.target.log_density(scratch);
            if proposed.is_nan() || proposed == T::infinity() {
                return Err(Error::Numeric {
                    index: it,
                    message: format!("log density {proposed} at proposal {scratch:?}"),
                });
            }
            if accept((proposed - *log_density).as_f64(), rng) {
                x.copy_from_slice(scratch);
                *log_density = proposed;
                accepted += 1;
            }
        }
        Ok(accepted)
    }

    /// One (m-fold) kernel step from `x`.
    pub fn rwm_step<R: Rng + ?Sized>(&self, x: &[T], rng: &mut R) -> Result<StepOutcome<T>> {
        check_point(self.dimension(), x)?;
        let mut ld = self.target.log_density(x);
        if !ld.is_finite() {
            return Err(Error::Domain(format!("RWM started where log density is {ld}")));
        }
        let mut state = x.to_vec();
        let mut scratch = vec![T::zero(); x.len()];
        let accepts = self.advance(&mut state, &mut ld, &mut scratch, rng)?;
        Ok(StepOutcome::from_info(state, StepInfo::base(accepts, false)))
    }
}

/// The nonlinear ingredient mixed with the base kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonlinearKind {
    /// Draw from `Phi(mu)`: resample a stored state with probability
    /// proportional to `g`. With `with_mutation` the base kernel is then
    /// applied from the selected state.
    SelectMutate { with_mutation: bool },
    /// Propose a uniformly drawn stored state `u` and accept it with
    /// probability `1 ∧ pi(u) eta(x) / (pi(x) eta(u))`.
    Exchange,
}

/// Draws a stored state from `Phi(mu)`.
pub fn phi_select<T: Scalar, D: LogDensity<T>, R: Rng + ?Sized>(
    measure: &EmpiricalMeasure<T, D>,
    rng: &mut R,
) -> Result<Vec<T>> {
    let u: f64 = rng.random();
    let i = measure.weighted_index(u)?;
    Ok(measure.state(i).to_vec())
}

/// `(1 - eps) K + eps N_mu` where `N_mu` is the selection or exchange move.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearKernel<T, D> {
    base: RwmKernel<T, D>,
    epsilon: T,
    kind: NonlinearKind,
    aux: TemperedAuxiliary<T, D>,
}

impl<T: Scalar, D: LogDensity<T>> NonlinearKernel<T, D> {
    /// `base` must leave the target `pi` (the base of `aux`) invariant.
    pub fn new(
        base: RwmKernel<T, D>,
        epsilon: T,
        kind: NonlinearKind,
        aux: TemperedAuxiliary<T, D>,
    ) -> Result<Self> {
        if !(epsilon > T::zero() && epsilon < T::one()) {
            return Err(Error::Range { key: "epsilon".into(), value: epsilon.to_string(), bounds: "(0, 1)".into() });
        }
        if base.dimension() != aux.dimension() {
            return Err(Error::Input("base kernel and auxiliary density differ in dimension".into()));
        }
        Ok(Self { base, epsilon, kind, aux })
    }

    pub fn base(&self) -> &RwmKernel<T, D> {
        &self.base
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn kind(&self) -> NonlinearKind {
        self.kind
    }

    pub fn aux(&self) -> &TemperedAuxiliary<T, D> {
        &self.aux
    }

    /// In-place transition. `log_pi_x` caches `log pi(x)` and is kept current.
    #[inline]
    pub fn advance<R: Rng + ?Sized>(
        &self,
        x: &mut [T],
        log_pi_x: &mut T,
        measure: &EmpiricalMeasure<T, D>,
        scratch: &mut [T],
        rng: &mut R,
    ) -> Result<StepInfo> {
        let u_branch: f64 = rng.random();
        if u_branch >= self.epsilon.as_f64() {
            let accepts = self.base.advance(x, log_pi_x, scratch, rng)?;
            return Ok(StepInfo::base(accepts, false));
        }
        if measure.is_empty() {
            let accepts = self.base.advance(x, log_pi_x, scratch, rng)?;
            return Ok(StepInfo::base(accepts, true));
        }
        match self.kind {
            NonlinearKind::Exchange => {
                let i = measure.uniform_index(rng.random())?;
                let log_g_x = self.aux.log_g_from_log_pi(*log_pi_x);
                let log_alpha = exchange_log_acceptance(log_g_x, measure.log_weights()[i]);
                if accept(log_alpha.as_f64(), rng) {
                    x.copy_from_slice(measure.state(i));
                    *log_pi_x = self.aux.base().log_density(x);
                    Ok(StepInfo { branch: Branch::NonlinearAccepted, base_accept_count: 0, mutation_accept_count: 0, fallback: false })
                } else {
                    Ok(StepInfo { branch: Branch::NonlinearRejected, base_accept_count: 0, mutation_accept_count: 0, fallback: false })
                }
            }
            NonlinearKind::SelectMutate { with_mutation } => {
                let i = measure.weighted_index(rng.random())?;
                x.copy_from_slice(measure.state(i));
                *log_pi_x = self.aux.base().log_density(x);
                let mutation_accept_count =
                    if with_mutation { self.base.advance(x, log_pi_x, scratch, rng)? } else { 0 };
                Ok(StepInfo { branch: Branch::NonlinearAccepted, base_accept_count: 0, mutation_accept_count, fallback: false })
            }
        }
    }

    /// One transition of `K_mu` from `x`.
    pub fn nonlinear_step<R: Rng + ?Sized>(
        &self,
        x: &[T],
        measure: &EmpiricalMeasure<T, D>,
        rng: &mut R,
    ) -> Result<StepOutcome<T>> {
        check_point(self.base.dimension(), x)?;
        let mut lp = self.aux.base().log_density(x);
        if !lp.is_finite() {
            return Err(Error::Domain(format!("nonlinear step started where log pi is {lp}")));
        }
        let mut state = x.to_vec();
        let mut scratch = vec![T::zero(); x.len()];
        let info = self.advance(&mut state, &mut lp, measure, &mut scratch, rng)?;
        Ok(StepOutcome::from_info(state, info))
    }
}

/// A Markov transition usable by the drift diagnostic.
pub trait Transition<T: Scalar> {
    fn dimension(&self) -> usize;

    /// Replaces `x` by a draw from the transition kernel at `x`.
    fn transition<R: Rng + ?Sized>(&self, x: &mut [T], rng: &mut R) -> Result<()>;
}

impl<T: Scalar, D: LogDensity<T>> Transition<T> for RwmKernel<T, D> {
    fn dimension(&self) -> usize {
        RwmKernel::dimension(self)
    }

    fn transition<R: Rng + ?Sized>(&self, x: &mut [T], rng: &mut R) -> Result<()> {
        let mut ld = self.target.log_density(x);
        let mut scratch = x.to_vec();
        self.advance(x, &mut ld, &mut scratch, rng).map(|_| ())
    }
}

/// A nonlinear kernel frozen at a given measure.
#[derive(Debug, Clone, Copy)]
pub struct FrozenNonlinear<'a, T, D> {
    pub kernel: &'a NonlinearKernel<T, D>,
    pub measure: &'a EmpiricalMeasure<T, D>,
}

impl<T: Scalar, D: LogDensity<T>> Transition<T> for FrozenNonlinear<'_, T, D> {
    fn dimension(&self) -> usize {
        self.kernel.base.dimension()
    }

    fn transition<R: Rng + ?Sized>(&self, x: &mut [T], rng: &mut R) -> Result<()> {
        let mut lp = self.kernel.aux.base().log_density(x);
        let mut scratch = x.to_vec();
        self.kernel.advance(x, &mut lp, self.measure, &mut scratch, rng).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use crate::target::{FnDensity, MixtureOfNormals, StdNormal};
    use rand::SeedableRng;

    fn std_normal_kernel(sigma: f64, m: usize) -> RwmKernel<f64, StdNormal> {
        RwmKernel::isotropic(StdNormal::new(1).unwrap(), sigma, m).unwrap()
    }

    #[test]
    fn construction_checks() {
        let s = StdNormal::new(2).unwrap();
        assert!(RwmKernel::new(s.clone(), vec![1.0_f64], 1).is_err());
        assert!(RwmKernel::new(s.clone(), vec![1.0_f64, 0.0], 1).is_err());
        assert!(RwmKernel::new(s.clone(), vec![1.0_f64, 1.0], 0).is_err());
        let k = RwmKernel::new(s.clone(), vec![1.0_f64, 1.0], 1).unwrap();
        let aux = TemperedAuxiliary::new(s, 0.5).unwrap();
        assert!(NonlinearKernel::new(k.clone(), 1.0, NonlinearKind::Exchange, aux.clone()).is_err());
        assert!(NonlinearKernel::new(k.clone(), 0.0, NonlinearKind::Exchange, aux.clone()).is_err());
        assert!(NonlinearKernel::new(k, 0.3, NonlinearKind::Exchange, aux).is_ok());
    }

    #[test]
    fn flat_target_always_accepts() {
        let flat = FnDensity::new(1, "flat", |_: &[f64]| 0.0);
        let k = RwmKernel::isotropic(flat, 1.0, 25).unwrap();
        let mut rng = SimRng::seed_from_u64(1);
        let out = k.rwm_step(&[0.0], &mut rng).unwrap();
        assert_eq!(out.base_accept_count, 25);
        assert_eq!(out.branch, Branch::BaseKernel);
    }

    #[test]
    fn point_mass_never_moves() {
        let spike = FnDensity::new(1, "spike", |x: &[f64]| if x[0] == 0.5 { 0.0 } else { f64::NEG_INFINITY });
        let k = RwmKernel::isotropic(spike, 1.0, 100).unwrap();
        let mut rng = SimRng::seed_from_u64(2);
        let out = k.rwm_step(&[0.5], &mut rng).unwrap();
        assert_eq!(out.new_state, vec![0.5]);
        assert_eq!(out.base_accept_count, 0);
        assert!(matches!(k.rwm_step(&[0.4], &mut rng), Err(Error::Domain(_))));
    }

    #[test]
    fn nan_density_aborts() {
        let bad = FnDensity::new(1, "bad", |x: &[f64]| if x[0] == 0.0 { 0.0 } else { f64::NAN });
        let k = RwmKernel::isotropic(bad, 1.0, 3).unwrap();
        let mut rng = SimRng::seed_from_u64(3);
        assert!(matches!(k.rwm_step(&[0.0], &mut rng), Err(Error::Numeric { index: 0, .. })));
    }

    #[test]
    fn iterated_equals_sequential() {
        let k500 = std_normal_kernel(1.3, 50);
        let k1 = std_normal_kernel(1.3, 1);
        let mut a = SimRng::seed_from_u64(77);
        let mut b = SimRng::seed_from_u64(77);
        let big = k500.rwm_step(&[0.3], &mut a).unwrap();
        let mut x = vec![0.3];
        let mut accepts = 0;
        for _ in 0..50 {
            let o = k1.rwm_step(&x, &mut b).unwrap();
            accepts += o.base_accept_count;
            x = o.new_state;
        }
        assert_eq!(big.new_state, x);
        assert_eq!(big.base_accept_count, accepts);
    }

    #[test]
    fn optimal_scaling_acceptance() {
        // 1-D Gaussian target with sigma = 2.4 accepts about 44% of proposals.
        let k = std_normal_kernel(2.4, 200_000);
        let mut rng = SimRng::seed_from_u64(4);
        let out = k.rwm_step(&[0.0], &mut rng).unwrap();
        let rate = out.base_accept_count as f64 / 200_000.0;
        assert!((rate - 0.44).abs() < 0.05, "acceptance {rate}");
    }

    fn two_state_measure() -> EmpiricalMeasure<f64, FnDensity<fn(&[f64]) -> f64>> {
        // log g = 0.5 * log pi = {0, ln 3}
        let lin: FnDensity<fn(&[f64]) -> f64> = FnDensity::new(1, "lin", |x: &[f64]| x[0]);
        let aux = TemperedAuxiliary::new(lin, 0.5).unwrap();
        let mut m = EmpiricalMeasure::init(&[0.0], aux).unwrap();
        m.update(&[2.0 * 3f64.ln()]).unwrap();
        m
    }

    #[test]
    fn phi_select_two_state_frequencies() {
        let m = two_state_measure();
        let mut rng = SimRng::seed_from_u64(5);
        let n = 200_000;
        let hits = (0..n).filter(|_| phi_select(&m, &mut rng).unwrap()[0] > 0.0).count();
        let p = hits as f64 / n as f64;
        let sd = (0.75 * 0.25 / n as f64).sqrt();
        assert!((p - 0.75).abs() < 4.0 * sd, "p = {p}");
    }

    #[test]
    fn phi_select_uniform_when_weights_equal() {
        let flat = FnDensity::new(1, "flat", |_: &[f64]| 0.0);
        let aux = TemperedAuxiliary::new(flat, 0.5).unwrap();
        let mut m = EmpiricalMeasure::init(&[0.0], aux).unwrap();
        for i in 1..10 {
            m.update(&[i as f64]).unwrap();
        }
        let mut rng = SimRng::seed_from_u64(6);
        let mut counts = [0usize; 10];
        let n = 100_000;
        for _ in 0..n {
            counts[phi_select(&m, &mut rng).unwrap()[0] as usize] += 1;
        }
        let sd = (0.1 * 0.9 * n as f64).sqrt();
        for c in counts {
            assert!((c as f64 - 0.1 * n as f64).abs() < 4.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn singleton_selection_returns_it() {
        let aux = TemperedAuxiliary::new(MixtureOfNormals::<f64>::bimodal_toy(), 0.75).unwrap();
        let base = RwmKernel::isotropic(MixtureOfNormals::bimodal_toy(), 1.0, 1).unwrap();
        let k = NonlinearKernel::new(base, 0.999_999, NonlinearKind::SelectMutate { with_mutation: false }, aux.clone()).unwrap();
        let m = EmpiricalMeasure::init(&[16.0], aux).unwrap();
        let mut rng = SimRng::seed_from_u64(7);
        let mut seen = 0;
        for _ in 0..1000 {
            let o = k.nonlinear_step(&[0.2], &m, &mut rng).unwrap();
            if o.branch == Branch::NonlinearAccepted {
                assert_eq!(o.new_state, vec![16.0]);
                seen += 1;
            }
        }
        assert!(seen > 990);
    }

    #[test]
    fn exchange_with_same_state_accepts() {
        let aux = TemperedAuxiliary::new(MixtureOfNormals::<f64>::bimodal_toy(), 0.75).unwrap();
        let base = RwmKernel::isotropic(MixtureOfNormals::bimodal_toy(), 1.0, 1).unwrap();
        let k = NonlinearKernel::new(base, 0.999_999, NonlinearKind::Exchange, aux.clone()).unwrap();
        let m = EmpiricalMeasure::init(&[3.0], aux).unwrap();
        let mut rng = SimRng::seed_from_u64(8);
        for _ in 0..500 {
            let o = k.nonlinear_step(&[3.0], &m, &mut rng).unwrap();
            if o.branch != Branch::BaseKernel {
                assert_eq!(o.branch, Branch::NonlinearAccepted);
                assert_eq!(o.new_state, vec![3.0]);
            }
        }
    }

    #[test]
    fn exchange_uphill_always_accepted() {
        // stored state is the global mode; any x proposes uphill
        let aux = TemperedAuxiliary::new(MixtureOfNormals::<f64>::bimodal_toy(), 0.75).unwrap();
        let base = RwmKernel::isotropic(MixtureOfNormals::bimodal_toy(), 1.0, 1).unwrap();
        let k = NonlinearKernel::new(base, 0.5, NonlinearKind::Exchange, aux.clone()).unwrap();
        let m = EmpiricalMeasure::init(&[17.5], aux).unwrap();
        let mut rng = SimRng::seed_from_u64(9);
        for i in 0..2000 {
            let x = -5.0 + 0.01 * i as f64;
            let o = k.nonlinear_step(&[x], &m, &mut rng).unwrap();
            assert_ne!(o.branch, Branch::NonlinearRejected);
        }
    }

    #[test]
    fn empty_measure_falls_back() {
        let aux = TemperedAuxiliary::new(StdNormal::new(1).unwrap(), 0.75).unwrap();
        let base = RwmKernel::isotropic(StdNormal::new(1).unwrap(), 1.0, 1).unwrap();
        let k = NonlinearKernel::new(base, 0.9, NonlinearKind::Exchange, aux.clone()).unwrap();
        let m = EmpiricalMeasure::<f64, _>::empty(aux, None);
        let mut rng = SimRng::seed_from_u64(10);
        let fallbacks = (0..1000).filter(|_| k.nonlinear_step(&[0.0], &m, &mut rng).unwrap().fallback).count();
        assert!(fallbacks > 850);
    }

    #[test]
    fn branch_frequency_is_binomial() {
        let aux = TemperedAuxiliary::new(StdNormal::new(1).unwrap(), 0.75).unwrap();
        let base = RwmKernel::isotropic(StdNormal::new(1).unwrap(), 1.0, 1).unwrap();
        let eps = 0.3;
        let k = NonlinearKernel::new(base, eps, NonlinearKind::Exchange, aux.clone()).unwrap();
        let m = EmpiricalMeasure::init(&[0.1], aux).unwrap();
        let mut rng = SimRng::seed_from_u64(12);
        let n = 100_000;
        let mut x = vec![0.0];
        let mut lp = StdNormal::new(1).unwrap().log_density(&x);
        let mut scratch = vec![0.0];
        let mut eps_count = 0;
        for _ in 0..n {
            let info = k.advance(&mut x, &mut lp, &m, &mut scratch, &mut rng).unwrap();
            if info.branch != Branch::BaseKernel {
                eps_count += 1;
            }
        }
        let sd = (n as f64 * eps * (1.0 - eps)).sqrt();
        assert!((eps_count as f64 - n as f64 * eps).abs() < 4.0 * sd);
    }

    #[test]
    fn steps_are_deterministic() {
        let aux = TemperedAuxiliary::new(MixtureOfNormals::<f64>::bimodal_toy(), 0.75).unwrap();
        let base = RwmKernel::isotropic(MixtureOfNormals::bimodal_toy(), 1.0, 5).unwrap();
        let mut m = EmpiricalMeasure::init(&[0.0], aux.clone()).unwrap();
        for y in [1.0, 17.0, 18.2, -0.4] {
            m.update(&[y]).unwrap();
        }
        for kind in [NonlinearKind::Exchange, NonlinearKind::SelectMutate { with_mutation: true }] {
            let k = NonlinearKernel::new(base.clone(), 0.5, kind, aux.clone()).unwrap();
            let run = |seed| {
                let mut rng = SimRng::seed_from_u64(seed);
                let mut x = vec![0.5];
                let mut out = Vec::new();
                for _ in 0..200 {
                    let o = k.nonlinear_step(&x, &m, &mut rng).unwrap();
                    x = o.new_state.clone();
                    out.push(o);
                }
                out
            };
            assert_eq!(run(99), run(99));
        }
    }

    #[test]
    fn f32_kernel_runs() {
        let k = RwmKernel::isotropic(StdNormal::new(1).unwrap(), 2.4_f32, 10_000).unwrap();
        let mut rng = SimRng::seed_from_u64(13);
        let out = k.rwm_step(&[0.0_f32], &mut rng).unwrap();
        let rate = out.base_accept_count as f64 / 10_000.0;
        assert!((rate - 0.44).abs() < 0.05);
    }
}
