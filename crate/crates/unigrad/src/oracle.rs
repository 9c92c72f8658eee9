//! Unbiased stochastic gradient oracles: finite-sum sampling, mini-batch
//! averaging, variance-reduced (centered) wrapping, and Monte-Carlo variance
//! estimators.
//!
//! An oracle is a pair (g, ξ): `draw` produces one realization of ξ and
//! `eval` computes g(x, ξ). All randomness flows through an explicitly passed
//! ChaCha stream, so runs are reproducible given a seed.

use crate::error::{Error, Result};
use crate::numerics::{sub, Geometry, Vector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// One realization of an oracle's randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct Xi(XiRepr);

#[derive(Debug, Clone, PartialEq)]
enum XiRepr {
    /// Deterministic oracle: no randomness.
    Unit,
    /// One component index of a finite sum.
    Index(usize),
    /// A tuple of independent sub-draws (mini-batch).
    Tuple(Vec<Xi>),
}

impl Xi {
    pub fn unit() -> Self {
        Xi(XiRepr::Unit)
    }

    pub fn index(i: usize) -> Self {
        Xi(XiRepr::Index(i))
    }

    pub fn tuple(parts: Vec<Xi>) -> Self {
        Xi(XiRepr::Tuple(parts))
    }
}

/// An indexed family of component gradients `∇f_i`, i = 0..len.
///
/// The selection of subgradients at kinks is fixed by the implementor, so
/// evaluation is deterministic.
pub trait GradientFamily: Send + Sync {
    fn len(&self) -> usize;

    fn dim(&self) -> usize;

    /// `out += scale · ∇f_i(x)`.
    fn accumulate_gradient(&self, i: usize, x: &Vector, scale: f64, out: &mut [f64]);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An unbiased stochastic oracle ĝ for the mean gradient ḡ.
pub trait StochasticOracle: Send + Sync {
    fn dim(&self) -> usize;

    /// Draws one independent realization of ξ.
    fn draw(&self, rng: &mut ChaCha8Rng) -> Xi;

    /// Evaluates g(x, ξ) for a given realization.
    fn eval(&self, xi: &Xi, x: &Vector) -> Vector;

    /// `out += scale · g(x, ξ)`; override for allocation-free accumulation.
    fn eval_into(&self, xi: &Xi, x: &Vector, scale: f64, out: &mut [f64]) {
        self.eval(xi, x).add_scaled_into(scale, out);
    }

    /// One fresh draw: g(x, ξ) with ξ sampled from the stream.
    fn sample(&self, x: &Vector, rng: &mut ChaCha8Rng) -> Vector {
        let xi = self.draw(rng);
        self.eval(&xi, x)
    }

    /// The mean gradient ḡ(x) = E_ξ[g(x, ξ)].
    fn mean(&self, x: &Vector) -> Vector;

    /// Stochastic-oracle calls charged for one evaluation of `mean`
    /// (n/b for a mini-batch of size b over n components).
    fn mean_so_cost(&self) -> f64;

    fn component_count(&self) -> Option<usize> {
        None
    }

    /// All equally likely realizations of ξ, when finitely enumerable at a
    /// reasonable size. Used by exact identity checks.
    fn outcomes(&self) -> Option<Vec<Xi>>;
}

/// Cap on the number of realizations `outcomes` will enumerate.
const ENUMERATION_CAP: usize = 4096;

/// Uniform sampling of one component gradient from a finite sum
/// f = (1/n) Σ f_i: `sample` returns ∇f_i(x) with i uniform, `mean` the full
/// average.
#[derive(Clone)]
pub struct FiniteSumOracle {
    family: Arc<dyn GradientFamily>,
}

impl FiniteSumOracle {
    pub fn new(family: Arc<dyn GradientFamily>) -> Result<Self> {
        if family.len() == 0 {
            return Err(Error::invalid("finite sum needs at least one component"));
        }
        Ok(FiniteSumOracle { family })
    }
}

impl StochasticOracle for FiniteSumOracle {
    fn dim(&self) -> usize {
        self.family.dim()
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Xi {
        Xi::index(rng.random_range(0..self.family.len()))
    }

    fn eval(&self, xi: &Xi, x: &Vector) -> Vector {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(xi, x, 1.0, &mut out);
        Vector::Dense(out)
    }

    fn eval_into(&self, xi: &Xi, x: &Vector, scale: f64, out: &mut [f64]) {
        match &xi.0 {
            XiRepr::Index(i) => self.family.accumulate_gradient(*i, x, scale, out),
            _ => panic!("finite-sum oracle expects an index realization"),
        }
    }

    fn mean(&self, x: &Vector) -> Vector {
        let n = self.family.len();
        let mut out = vec![0.0; self.dim()];
        for i in 0..n {
            self.family.accumulate_gradient(i, x, 1.0 / n as f64, &mut out);
        }
        Vector::Dense(out)
    }

    fn mean_so_cost(&self) -> f64 {
        self.family.len() as f64
    }

    fn component_count(&self) -> Option<usize> {
        Some(self.family.len())
    }

    fn outcomes(&self) -> Option<Vec<Xi>> {
        let n = self.family.len();
        if n > ENUMERATION_CAP {
            return None;
        }
        Some((0..n).map(Xi::index).collect())
    }
}

/// Averages `batch` i.i.d. draws of the base oracle. One call to the result
/// counts as a single stochastic-oracle call.
#[derive(Clone)]
pub struct Minibatch {
    base: Arc<dyn StochasticOracle>,
    batch: usize,
}

impl Minibatch {
    pub fn new(base: Arc<dyn StochasticOracle>, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(Error::invalid("mini-batch size must be at least 1"));
        }
        Ok(Minibatch { base, batch })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl StochasticOracle for Minibatch {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Xi {
        let mut parts: Vec<Xi> = (0..self.batch).map(|_| self.base.draw(rng)).collect();
        // Accumulation order is the ascending order of drawn indices, so the
        // result is independent of any parallel evaluation schedule.
        if parts.iter().all(|p| matches!(p.0, XiRepr::Index(_))) {
            parts.sort_by_key(|p| match p.0 {
                XiRepr::Index(i) => i,
                _ => unreachable!(),
            });
        }
        Xi::tuple(parts)
    }

    fn eval(&self, xi: &Xi, x: &Vector) -> Vector {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(xi, x, 1.0, &mut out);
        Vector::Dense(out)
    }

    fn eval_into(&self, xi: &Xi, x: &Vector, scale: f64, out: &mut [f64]) {
        match &xi.0 {
            XiRepr::Tuple(parts) => {
                let w = scale / parts.len() as f64;
                for part in parts {
                    self.base.eval_into(part, x, w, out);
                }
            }
            _ => panic!("mini-batch oracle expects a tuple realization"),
        }
    }

    fn mean(&self, x: &Vector) -> Vector {
        self.base.mean(x)
    }

    fn mean_so_cost(&self) -> f64 {
        self.base.mean_so_cost() / self.batch as f64
    }

    fn component_count(&self) -> Option<usize> {
        self.base.component_count()
    }

    fn outcomes(&self) -> Option<Vec<Xi>> {
        let base = self.base.outcomes()?;
        let total = base.len().checked_pow(self.batch as u32)?;
        if total > ENUMERATION_CAP {
            return None;
        }
        // All ordered tuples, each equally likely.
        let mut acc: Vec<Vec<Xi>> = vec![Vec::new()];
        for _ in 0..self.batch {
            let mut next = Vec::with_capacity(acc.len() * base.len());
            for prefix in &acc {
                for b in &base {
                    let mut t = prefix.clone();
                    t.push(b.clone());
                    next.push(t);
                }
            }
            acc = next;
        }
        Some(acc.into_iter().map(Xi::tuple).collect())
    }
}

/// A deterministic oracle: every draw returns the exact gradient. Used for
/// full-batch (b = n) runs and for smooth test problems.
#[derive(Clone)]
pub struct ExactOracle {
    dim: usize,
    grad: Arc<dyn Fn(&Vector) -> Vector + Send + Sync>,
}

impl ExactOracle {
    pub fn from_fn(
        dim: usize,
        grad: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        ExactOracle {
            dim,
            grad: Arc::new(grad),
        }
    }

    /// The exact (b = n) version of another oracle: samples its mean.
    pub fn of_mean(base: Arc<dyn StochasticOracle>) -> Self {
        let dim = base.dim();
        ExactOracle {
            dim,
            grad: Arc::new(move |x| base.mean(x)),
        }
    }
}

impl StochasticOracle for ExactOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw(&self, _rng: &mut ChaCha8Rng) -> Xi {
        Xi::unit()
    }

    fn eval(&self, _xi: &Xi, x: &Vector) -> Vector {
        (self.grad)(x)
    }

    fn mean(&self, x: &Vector) -> Vector {
        (self.grad)(x)
    }

    fn mean_so_cost(&self) -> f64 {
        1.0
    }

    fn outcomes(&self) -> Option<Vec<Xi>> {
        Some(vec![Xi::unit()])
    }
}

/// A center point together with the precomputed mean gradient there.
#[derive(Debug, Clone)]
pub struct SvrgCenter {
    pub center: Vector,
    pub anchor: Vector,
}

impl SvrgCenter {
    /// Wraps an already computed anchor; callers are responsible for its
    /// consistency with the oracle (`is_consistent` checks it).
    pub fn new(center: Vector, anchor: Vector) -> Self {
        SvrgCenter { center, anchor }
    }

    /// Computes the anchor ḡ(center) from the oracle.
    pub fn compute(base: &dyn StochasticOracle, center: Vector) -> Self {
        let anchor = base.mean(&center);
        SvrgCenter { center, anchor }
    }

    /// Whether the anchor equals ḡ(center) to 1e-12 relative accuracy.
    pub fn is_consistent(&self, base: &dyn StochasticOracle) -> bool {
        let mean = base.mean(&self.center).to_dense();
        let anchor = self.anchor.to_dense();
        if mean.len() != anchor.len() {
            return false;
        }
        let scale = mean
            .iter()
            .fold(1.0_f64, |acc, &v| acc.max(v.abs()));
        mean.iter()
            .zip(anchor.iter())
            .all(|(&m, &a)| (m - a).abs() <= 1e-12 * scale)
    }
}

/// Variance-reduced oracle centered at x̃:
/// `G(x, ξ) = g(x, ξ) − g(x̃, ξ) + ḡ(x̃)`, with the same ξ shared between the
/// two evaluations. Its mean coincides with the base oracle's and its
/// variance at the center is zero.
#[derive(Clone)]
pub struct SvrgOracle {
    base: Arc<dyn StochasticOracle>,
    center: SvrgCenter,
}

impl SvrgOracle {
    pub fn new(base: Arc<dyn StochasticOracle>, center: SvrgCenter) -> Self {
        SvrgOracle { base, center }
    }

    pub fn center(&self) -> &SvrgCenter {
        &self.center
    }
}

impl StochasticOracle for SvrgOracle {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Xi {
        self.base.draw(rng)
    }

    fn eval(&self, xi: &Xi, x: &Vector) -> Vector {
        let mut out = self.center.anchor.to_dense();
        self.base.eval_into(xi, x, 1.0, &mut out);
        self.base.eval_into(xi, &self.center.center, -1.0, &mut out);
        Vector::Dense(out)
    }

    fn eval_into(&self, xi: &Xi, x: &Vector, scale: f64, out: &mut [f64]) {
        self.base.eval_into(xi, x, scale, out);
        self.base.eval_into(xi, &self.center.center, -scale, out);
        self.center.anchor.add_scaled_into(scale, out);
    }

    fn mean(&self, x: &Vector) -> Vector {
        self.base.mean(x)
    }

    fn mean_so_cost(&self) -> f64 {
        self.base.mean_so_cost()
    }

    fn component_count(&self) -> Option<usize> {
        self.base.component_count()
    }

    fn outcomes(&self) -> Option<Vec<Xi>> {
        self.base.outcomes()
    }
}

/// A Monte-Carlo estimate of an oracle variance.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub value: f64,
    pub trials: usize,
    pub standard_error: f64,
}

fn summarize(values: &[f64]) -> VarianceEstimate {
    let n = values.len();
    let sum: f64 = values.iter().sum();
    let mean = sum / n as f64;
    let ss: f64 = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    let sample_var = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
    VarianceEstimate {
        value: mean,
        trials: n,
        standard_error: (sample_var / n as f64).sqrt(),
    }
}

/// Monte-Carlo estimate of `Variance_ĝ(x) = E_ξ[‖g(x, ξ) − ḡ(x)‖*²]`.
pub fn estimate_variance(
    oracle: &dyn StochasticOracle,
    geom: &Geometry,
    x: &Vector,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<VarianceEstimate> {
    if trials < 2 {
        return Err(Error::invalid("variance estimation needs at least 2 trials"));
    }
    let mean = oracle.mean(x);
    let mut values = Vec::with_capacity(trials);
    for _ in 0..trials {
        let s = oracle.sample(x, rng);
        values.push(geom.dual_distance_sq(&s, &mean)?);
    }
    Ok(summarize(&values))
}

/// Monte-Carlo estimate of the two-point variance
/// `Variance_ĝ(x, y) = E_ξ[‖[g(x, ξ) − g(y, ξ)] − [ḡ(x) − ḡ(y)]‖*²]`,
/// with the same ξ used at both points within each draw.
pub fn estimate_pair_variance(
    oracle: &dyn StochasticOracle,
    geom: &Geometry,
    x: &Vector,
    y: &Vector,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<VarianceEstimate> {
    if trials < 2 {
        return Err(Error::invalid("variance estimation needs at least 2 trials"));
    }
    let mean_diff = sub(&oracle.mean(x), &oracle.mean(y))?;
    let mut values = Vec::with_capacity(trials);
    for _ in 0..trials {
        let xi = oracle.draw(rng);
        let diff = sub(&oracle.eval(&xi, x), &oracle.eval(&xi, y))?;
        values.push(geom.dual_distance_sq(&diff, &mean_diff)?);
    }
    Ok(summarize(&values))
}

/// Exact mean over all enumerated realizations, if the oracle is enumerable.
pub fn enumerate_mean(oracle: &dyn StochasticOracle, x: &Vector) -> Option<Vector> {
    let outcomes = oracle.outcomes()?;
    let w = 1.0 / outcomes.len() as f64;
    let mut out = vec![0.0; oracle.dim()];
    for xi in &outcomes {
        oracle.eval_into(xi, x, w, &mut out);
    }
    Some(Vector::Dense(out))
}

/// Exact variance at `x` over all enumerated realizations.
pub fn enumerate_variance(
    oracle: &dyn StochasticOracle,
    geom: &Geometry,
    x: &Vector,
) -> Result<Option<f64>> {
    let Some(outcomes) = oracle.outcomes() else {
        return Ok(None);
    };
    let mean = oracle.mean(x);
    let mut acc = 0.0;
    for xi in &outcomes {
        acc += geom.dual_distance_sq(&oracle.eval(xi, x), &mean)?;
    }
    Ok(Some(acc / outcomes.len() as f64))
}

/// Exact two-point variance over all enumerated realizations.
pub fn enumerate_pair_variance(
    oracle: &dyn StochasticOracle,
    geom: &Geometry,
    x: &Vector,
    y: &Vector,
) -> Result<Option<f64>> {
    let Some(outcomes) = oracle.outcomes() else {
        return Ok(None);
    };
    let mean_diff = sub(&oracle.mean(x), &oracle.mean(y))?;
    let mut acc = 0.0;
    for xi in &outcomes {
        let diff = sub(&oracle.eval(xi, x), &oracle.eval(xi, y))?;
        acc += geom.dual_distance_sq(&diff, &mean_diff)?;
    }
    Ok(Some(acc / outcomes.len() as f64))
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent ChaCha stream from a run seed and a purpose tag, so
/// that e.g. data generation and solver draws never share randomness.
pub fn derive_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut state = seed ^ 0xA076_1D64_78BD_642F;
    splitmix64(&mut state);
    for &b in tag.as_bytes() {
        state ^= b as u64;
        splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
