//! Append-only empirical measure of the auxiliary chain.
//!
//! Stores every auxiliary state `Y_0..Y_n` together with its cached log
//! potential `log g(Y_i)`. Integration against the measure is the plain
//! average over stored states; the `g`-weighted version realizes the
//! selection map `mu -> g mu / mu(g)`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::output::fmt_float;
use crate::scalar::{KahanSum, Scalar};
use crate::target::{check_point, LogDensity, LyapunovPair, TemperedAuxiliary};

/// Fenwick tree over `exp(log_w - reference)` supporting appends and
/// inverse-CDF lookup in `O(log n)`.
///
/// `reference` is the running maximum log weight; whenever a larger weight
/// arrives the tree is rebuilt against the new maximum.
#[derive(Debug, Clone, Default)]
struct WeightIndex {
    // 1-based; tree[0] unused
    tree: Vec<f64>,
    reference: f64,
}

#[inline]
fn lowbit(i: usize) -> usize {
    i & i.wrapping_neg()
}

impl WeightIndex {
    fn len(&self) -> usize {
        self.tree.len().saturating_sub(1)
    }

    fn rebuild<'a>(&mut self, log_weights: impl ExactSizeIterator<Item = f64> + 'a, reference: f64) {
        self.reference = reference;
        self.tree.clear();
        self.tree.push(0.0);
        self.tree.extend(log_weights.map(|lw| (lw - reference).exp()));
        let n = self.len();
        for i in 1..=n {
            let parent = i + lowbit(i);
            if parent <= n {
                let v = self.tree[i];
                self.tree[parent] += v;
            }
        }
    }

    fn push(&mut self, log_w: f64) {
        if self.tree.is_empty() {
            self.tree.push(0.0);
        }
        let i = self.tree.len();
        let mut node = (log_w - self.reference).exp();
        let mut k = 1;
        while k < lowbit(i) {
            node += self.tree[i - k];
            k <<= 1;
        }
        self.tree.push(node);
    }

    fn total(&self) -> f64 {
        let mut i = self.len();
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= lowbit(i);
        }
        s
    }

    /// Smallest 0-based index whose cumulative weight exceeds `target`.
    fn find(&self, target: f64) -> usize {
        let n = self.len();
        let mut pos = 0;
        let mut rem = target;
        let mut step = if n == 0 { 0 } else { 1 << (usize::BITS - 1 - n.leading_zeros()) };
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        pos.min(n.saturating_sub(1))
    }
}

/// The empirical measure `S_n^Y = (1/(n+1)) sum_i delta_{Y_i}`.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure<T, D> {
    aux: TemperedAuxiliary<T, D>,
    dimension: usize,
    states: Vec<T>,
    log_weights: Vec<T>,
    max_log_weight: T,
    index: WeightIndex,
    lyapunov: Option<LyapunovPair<T>>,
    v_sum: KahanSum<T>,
    v_max: T,
    coord_sums: Vec<KahanSum<T>>,
}

impl<T: Scalar, D: LogDensity<T>> EmpiricalMeasure<T, D> {
    /// A measure holding no states. Only useful when feeding is deferred;
    /// selection from it fails with a state error.
    pub fn empty(aux: TemperedAuxiliary<T, D>, lyapunov: Option<LyapunovPair<T>>) -> Self {
        let dimension = aux.dimension();
        Self {
            aux,
            dimension,
            states: Vec::new(),
            log_weights: Vec::new(),
            max_log_weight: T::neg_infinity(),
            index: WeightIndex::default(),
            lyapunov,
            v_sum: KahanSum::new(),
            v_max: T::neg_infinity(),
            coord_sums: vec![KahanSum::new(); dimension],
        }
    }

    /// `S_0^Y = delta_{y0}`.
    pub fn init(y0: &[T], aux: TemperedAuxiliary<T, D>) -> Result<Self> {
        let mut m = Self::empty(aux, None);
        m.update(y0)?;
        Ok(m)
    }

    /// As [`init`](Self::init), additionally tracking `S_n^Y(V)`.
    pub fn init_with_lyapunov(
        y0: &[T],
        aux: TemperedAuxiliary<T, D>,
        pair: LyapunovPair<T>,
    ) -> Result<Self> {
        let mut m = Self::empty(aux, Some(pair));
        m.update(y0)?;
        Ok(m)
    }

    /// Appends `y`. On error the measure is left unchanged.
    pub fn update(&mut self, y: &[T]) -> Result<()> {
        check_point(self.dimension, y)?;
        let lp = self.aux.base().log_density(y);
        if !lp.is_finite() {
            return Err(Error::Domain(format!(
                "auxiliary state {} has non-finite log pi = {lp}",
                self.states.len() / self.dimension.max(1)
            )));
        }
        let v = match &self.lyapunov {
            Some(pair) => Some(pair.v_from_log_pi(lp)?),
            None => None,
        };
        self.push_unchecked(y, lp, v);
        Ok(())
    }

    #[inline]
    fn push_unchecked(&mut self, y: &[T], log_pi: T, v: Option<T>) {
        let lw = self.aux.log_g_from_log_pi(log_pi);
        self.states.extend_from_slice(y);
        self.log_weights.push(lw);
        for (acc, &c) in self.coord_sums.iter_mut().zip(y) {
            acc.add(c);
        }
        if let Some(v) = v {
            self.v_sum.add(v);
            self.v_max = self.v_max.max(v);
        }
        if lw > self.max_log_weight || self.index.len() == 0 {
            self.max_log_weight = lw.max(self.max_log_weight);
            let reference = self.max_log_weight.as_f64();
            self.index.rebuild(self.log_weights.iter().map(|w| w.as_f64()), reference);
        } else {
            self.index.push(lw.as_f64());
        }
    }

    pub fn aux(&self) -> &TemperedAuxiliary<T, D> {
        &self.aux
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of stored states, `n + 1`.
    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn state(&self, i: usize) -> &[T] {
        &self.states[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.states.chunks_exact(self.dimension)
    }

    pub fn log_weights(&self) -> &[T] {
        &self.log_weights
    }

    pub fn max_log_weight(&self) -> T {
        self.max_log_weight
    }

    pub fn lyapunov(&self) -> Option<&LyapunovPair<T>> {
        self.lyapunov.as_ref()
    }

    /// Adds `delta` to every cached log weight. Weighted quantities are
    /// unchanged since the potential is only defined up to a constant.
    pub fn shift_log_weights(&mut self, delta: T) {
        for w in &mut self.log_weights {
            *w += delta;
        }
        self.max_log_weight += delta;
        let reference = self.max_log_weight.as_f64();
        self.index.rebuild(self.log_weights.iter().map(|w| w.as_f64()), reference);
    }

    fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::State("empirical measure is empty".into()));
        }
        Ok(())
    }

    /// `S_n^Y(f) = (1/(n+1)) sum_i f(Y_i)`.
    pub fn integrate(&self, f: impl Fn(&[T]) -> T) -> Result<T> {
        self.require_non_empty()?;
        let mut acc = KahanSum::new();
        for (i, y) in self.states().enumerate() {
            let v = f(y);
            if !v.is_finite() {
                return Err(Error::Numeric { index: i, message: format!("test function returned {v}") });
            }
            acc.add(v);
        }
        Ok(acc.total() / T::from_count(self.len()))
    }

    /// `sum_i w_i f(Y_i) / sum_i w_i` with `w_i = exp(log g(Y_i) - max_j log g(Y_j))`.
    pub fn weighted_integrate(&self, f: impl Fn(&[T]) -> T) -> Result<T> {
        self.require_non_empty()?;
        if self.max_log_weight == T::neg_infinity() {
            return Err(Error::State("degenerate measure: every weight is zero".into()));
        }
        let mut num = KahanSum::new();
        let mut den = KahanSum::new();
        for (i, (y, &lw)) in self.states().zip(&self.log_weights).enumerate() {
            let v = f(y);
            if !v.is_finite() {
                return Err(Error::Numeric { index: i, message: format!("test function returned {v}") });
            }
            let w = (lw - self.max_log_weight).exp();
            num.add(w * v);
            den.add(w);
        }
        Ok(num.total() / den.total())
    }

    /// Normalized selection probabilities `w_i / sum_j w_j`.
    pub fn selection_probabilities(&self) -> Vec<f64> {
        let max = self.max_log_weight.as_f64();
        let w: Vec<f64> = self.log_weights.iter().map(|lw| (lw.as_f64() - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    /// Running `S_n^Y(V)` from the streaming accumulator.
    pub fn measure_v(&self) -> Result<T> {
        if self.lyapunov.is_none() {
            return Err(Error::State("no Lyapunov pair attached to the empirical measure".into()));
        }
        self.require_non_empty()?;
        Ok(self.v_sum.total() / T::from_count(self.len()))
    }

    /// `max_i V(Y_i)`, when a Lyapunov pair is attached.
    pub fn max_v(&self) -> Option<T> {
        self.lyapunov.as_ref().filter(|_| !self.is_empty()).map(|_| self.v_max)
    }

    /// Per-coordinate running mean of the stored states.
    pub fn streaming_mean(&self) -> Result<Vec<T>> {
        self.require_non_empty()?;
        let n = T::from_count(self.len());
        Ok(self.coord_sums.iter().map(|s| s.total() / n).collect())
    }

    /// Index of a stored state drawn uniformly, from a uniform variate `u in [0,1)`.
    #[inline]
    pub fn uniform_index(&self, u: f64) -> Result<usize> {
        self.require_non_empty()?;
        let n = self.len();
        Ok(((u * n as f64) as usize).min(n - 1))
    }

    /// Index drawn with probability proportional to `g(Y_i)`, from `u in [0,1)`.
    #[inline]
    pub fn weighted_index(&self, u: f64) -> Result<usize> {
        self.require_non_empty()?;
        Ok(self.index.find(u * self.index.total()))
    }

    /// Writes `index,y,log_weight` rows (`y0,y1,..` columns when `d > 1`).
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> Result<()> {
        if self.dimension == 1 {
            writeln!(out, "index,y,log_weight")?;
        } else {
            let cols: Vec<String> = (0..self.dimension).map(|j| format!("y{j}")).collect();
            writeln!(out, "index,{},log_weight", cols.join(","))?;
        }
        for (i, (y, lw)) in self.states().zip(&self.log_weights).enumerate() {
            let ys: Vec<String> = y.iter().map(|v| fmt_float(v.as_f64())).collect();
            writeln!(out, "{i},{},{}", ys.join(","), fmt_float(lw.as_f64()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{FnDensity, MixtureOfNormals, StdNormal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_aux() -> TemperedAuxiliary<f64, MixtureOfNormals<f64>> {
        TemperedAuxiliary::new(MixtureOfNormals::bimodal_toy(), 0.75).unwrap()
    }

    #[test]
    fn init_holds_single_state() {
        let m = EmpiricalMeasure::init(&[0.0], toy_aux()).unwrap();
        assert_eq!(m.len(), 1);
        let expected = 0.25 * (0.4 / std::f64::consts::PI.sqrt()).ln();
        assert!((m.log_weights()[0] - expected).abs() < 1e-12);
        assert_eq!(m.integrate(|y| y[0] * 3.0 + 1.0).unwrap(), 1.0);
        assert_eq!(m.integrate(|y| (y[0] - 5.0).powi(2)).unwrap(), 25.0);
    }

    #[test]
    fn update_averages() {
        let mut m = EmpiricalMeasure::init(&[1.0], toy_aux()).unwrap();
        m.update(&[4.0]).unwrap();
        assert_eq!(m.integrate(|y| y[0] * y[0]).unwrap(), 8.5);

        let mut c = EmpiricalMeasure::init(&[2.5], toy_aux()).unwrap();
        for _ in 0..1000 {
            c.update(&[2.5]).unwrap();
        }
        assert_eq!(c.integrate(|y| y[0]).unwrap(), 2.5);
        assert_eq!(c.streaming_mean().unwrap()[0], 2.5);
    }

    #[test]
    fn update_rejects_null_states_unchanged() {
        let half = FnDensity::new(1, "half", |x: &[f64]| if x[0] < 0.0 { f64::NEG_INFINITY } else { -x[0] });
        let aux = TemperedAuxiliary::new(half, 0.5).unwrap();
        assert!(matches!(EmpiricalMeasure::init(&[-1.0], aux.clone()), Err(Error::Domain(_))));
        let mut m = EmpiricalMeasure::init(&[1.0], aux).unwrap();
        assert!(m.update(&[-2.0]).is_err());
        assert!(m.update(&[f64::NAN]).is_err());
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn streaming_mean_matches_batch() {
        let aux = TemperedAuxiliary::new(StdNormal::new(2).unwrap(), 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = EmpiricalMeasure::init(&[0.1, -0.2], aux).unwrap();
        let mut stored = vec![[0.1, -0.2]];
        for k in 0..5000 {
            let p = [rng.random::<f64>() * 10.0 - 5.0, rng.random::<f64>() * 1e3];
            m.update(&p).unwrap();
            stored.push(p);
            if k % 500 == 0 {
                let mean = m.streaming_mean().unwrap();
                for j in 0..2 {
                    let batch: f64 = stored.iter().map(|s| s[j]).sum::<f64>() / stored.len() as f64;
                    assert!((mean[j] - batch).abs() <= 1e-12 * batch.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn weighted_integrate_closed_form() {
        // log g = 0.5 log pi; pick log pi so the weights are {1, 3}.
        let lin = FnDensity::new(1, "lin", |x: &[f64]| x[0]);
        let aux = TemperedAuxiliary::new(lin, 0.5).unwrap();
        let mut m = EmpiricalMeasure::init(&[0.0], aux).unwrap();
        m.update(&[2.0 * 3f64.ln()]).unwrap();
        let v = m.weighted_integrate(|y| if y[0] > 0.0 { 1.0 } else { 0.0 }).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
        let p = m.selection_probabilities();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);

        let flat = FnDensity::new(1, "flat", |_: &[f64]| 0.0);
        let aux = TemperedAuxiliary::new(flat, 0.5).unwrap();
        let mut m = EmpiricalMeasure::init(&[1.0], aux).unwrap();
        for x in [2.0, 3.0, 7.0] {
            m.update(&[x]).unwrap();
        }
        assert_eq!(m.weighted_integrate(|y| y[0]).unwrap(), m.integrate(|y| y[0]).unwrap());
    }

    #[test]
    fn integrate_reports_bad_index() {
        let mut m = EmpiricalMeasure::init(&[1.0], toy_aux()).unwrap();
        m.update(&[2.0]).unwrap();
        m.update(&[3.0]).unwrap();
        let err = m.integrate(|y| if y[0] == 2.0 { f64::NAN } else { 1.0 }).unwrap_err();
        assert_eq!(err, Error::Numeric { index: 1, message: "test function returned NaN".into() });
    }

    #[test]
    fn empty_measure_errors() {
        let m = EmpiricalMeasure::<f64, _>::empty(toy_aux(), None);
        assert!(m.is_empty());
        assert!(matches!(m.integrate(|_| 1.0), Err(Error::State(_))));
        assert!(matches!(m.weighted_index(0.5), Err(Error::State(_))));
        assert!(matches!(m.uniform_index(0.5), Err(Error::State(_))));
    }

    #[test]
    fn measure_v_accumulates() {
        let sup = 0.6_f64.ln() - 0.5 * std::f64::consts::TAU.ln();
        let pair = LyapunovPair::new(0.1, 0.5, 0.75, 0.5, sup + 1e-12).unwrap();
        let mut m = EmpiricalMeasure::init_with_lyapunov(&[17.5], toy_aux(), pair).unwrap();
        assert!((m.measure_v().unwrap() - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            m.update(&[rng.random::<f64>() * 30.0 - 5.0]).unwrap();
        }
        let model = MixtureOfNormals::<f64>::bimodal_toy();
        let batch = m.integrate(|y| pair.lyapunov_v(&model, y).unwrap()).unwrap();
        let streamed = m.measure_v().unwrap();
        assert!((batch - streamed).abs() <= 1e-12 * batch);
        assert!(streamed <= m.max_v().unwrap());

        let no_pair = EmpiricalMeasure::init(&[0.0], toy_aux()).unwrap();
        assert!(matches!(no_pair.measure_v(), Err(Error::State(_))));
    }

    #[test]
    fn fenwick_lookup_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut idx = WeightIndex::default();
        let mut lws: Vec<f64> = Vec::new();
        for n in 0..300 {
            let lw = rng.random::<f64>() * 6.0 - 3.0;
            lws.push(lw);
            if n == 0 || lw > idx.reference {
                idx.rebuild(lws.iter().copied(), lw);
            } else {
                idx.push(lw);
            }
            let w: Vec<f64> = lws.iter().map(|l| (l - idx.reference).exp()).collect();
            let total: f64 = w.iter().sum();
            assert!((idx.total() - total).abs() < 1e-12 * total);
            for _ in 0..20 {
                let target = rng.random::<f64>() * total;
                let mut cum = 0.0;
                let mut expect = w.len() - 1;
                for (i, wi) in w.iter().enumerate() {
                    cum += wi;
                    if cum > target {
                        expect = i;
                        break;
                    }
                }
                let got = idx.find(target);
                // boundary ties can differ by rounding only
                if got != expect {
                    let c: f64 = w[..got.min(expect)].iter().sum::<f64>() + w[got.min(expect)];
                    assert!((c - target).abs() < 1e-10, "n={n} got={got} expect={expect}");
                }
            }
        }
    }

    #[test]
    fn trace_csv_layout() {
        let mut m = EmpiricalMeasure::init(&[0.0], toy_aux()).unwrap();
        m.update(&[1.5]).unwrap();
        let mut buf = Vec::new();
        m.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,y,log_weight");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,1.5000000000000000e0,"));
    }
}
