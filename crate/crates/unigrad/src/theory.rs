//! Closed-form quantities from the convergence analysis: the Hölder-to-(δ, L)
//! conversion, the conjugate-minimization identity, the similar-triangles
//! coefficient schedules, the squared-growth floor, and evaluators for the
//! convergence-rate bounds used by diagnostics and acceptance checks.

use crate::error::{Error, Result};
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

/// Constants (c₁, c₂, c₃, c₄) attached to a stepsize update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl RuleConstants {
    pub const ADAGRAD: RuleConstants = RuleConstants {
        c1: 2.5,
        c2: 4.0,
        c3: 6.0,
        c4: 2.0,
    };

    pub const IMPLICIT: RuleConstants = RuleConstants {
        c1: 1.0,
        c2: 2.0,
        c3: 6.0,
        c4: 2.0,
    };
}

/// Problem smoothness and noise parameters entering the rate bounds.
///
/// `l_f`/`delta_f` describe the approximate smoothness of the objective,
/// `l_var`/`delta_var` the smoothness of the oracle variance, `sigma` the
/// uniform variance bound, `sigma_star` the variance at the solution, and
/// (`nu`, `holder`) the Hölder exponent/constant when applicable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessParams {
    pub l_f: f64,
    pub delta_f: f64,
    pub l_var: f64,
    pub delta_var: f64,
    pub sigma: f64,
    pub sigma_star: f64,
    pub nu: f64,
    pub holder: f64,
}

impl Default for SmoothnessParams {
    fn default() -> Self {
        SmoothnessParams {
            l_f: 0.0,
            delta_f: 0.0,
            l_var: 0.0,
            delta_var: 0.0,
            sigma: 0.0,
            sigma_star: 0.0,
            nu: 1.0,
            holder: 0.0,
        }
    }
}

impl SmoothnessParams {
    pub fn smooth(l_f: f64) -> Self {
        SmoothnessParams {
            l_f,
            ..Default::default()
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_sigma_star(mut self, sigma_star: f64) -> Self {
        self.sigma_star = sigma_star;
        self
    }

    pub fn with_variance_smoothness(mut self, l_var: f64, delta_var: f64) -> Self {
        self.l_var = l_var;
        self.delta_var = delta_var;
        self
    }

    fn validate(&self) -> Result<()> {
        let nonneg = [
            self.l_f,
            self.delta_f,
            self.l_var,
            self.delta_var,
            self.sigma,
            self.sigma_star,
            self.holder,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("smoothness parameters must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.nu) {
            return Err(Error::invalid("Hölder exponent must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Smoothness constant extracted from (ν, H)-Hölder continuity of the
/// gradient: for any δ > 0 the objective is (δ, L)-approximately smooth with
/// `L = [(1 − ν)/(2(1 + ν)δ)]^{(1−ν)/(1+ν)} · H^{2/(1+ν)}`
/// (with the convention 0⁰ = 1, so ν = 1 gives L = H for any δ).
pub fn holder_l(delta: f64, nu: f64, holder: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::invalid("Hölder exponent must lie in [0, 1]"));
    }
    if !(holder >= 0.0) {
        return Err(Error::invalid("Hölder constant must be nonnegative"));
    }
    if nu == 1.0 {
        return Ok(holder);
    }
    if !(delta > 0.0) {
        return Err(Error::invalid(
            "delta must be positive when the Hölder exponent is below 1",
        ));
    }
    let p = (1.0 - nu) / (1.0 + nu);
    let bracket = (1.0 - nu) / (2.0 * (1.0 + nu) * delta);
    Ok(bracket.powf(p) * holder.powf(2.0 / (1.0 + nu)))
}

/// `min_{t>0} {a/tᵖ + b·t} = (p+1) a^{1/(p+1)} (b/p)^{p/(p+1)}`, attained at
/// `t* = (ap/b)^{1/(p+1)}`. Returns `(minimum, argmin)`.
pub fn conjugate_min(a: f64, b: f64, p: f64) -> Result<(f64, f64)> {
    if !(a > 0.0 && b > 0.0 && p > 0.0) {
        return Err(Error::invalid("conjugate_min needs positive a, b, p"));
    }
    let value = (p + 1.0) * a.powf(1.0 / (p + 1.0)) * (b / p).powf(p / (p + 1.0));
    let argmin = (a * p / b).powf(1.0 / (p + 1.0));
    Ok((value, argmin))
}

/// The similar-triangles coefficients after k iterations:
/// `a_k = k/2`, `A_k = k(k+1)/4`, `Σ_{i≤k} a_i² = k(k+1)(2k+1)/24`,
/// `Σ_{i≤k} A_i = k(k+1)(k+2)/12`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleCoeffs {
    pub a: f64,
    pub a_total: f64,
    pub sum_a_sq: f64,
    pub sum_a_total: f64,
}

pub fn fast_sgd_coeffs(k: u64) -> Result<TriangleCoeffs> {
    if k < 1 {
        return Err(Error::invalid("coefficient index must be at least 1"));
    }
    let kf = k as f64;
    Ok(TriangleCoeffs {
        a: 0.5 * kf,
        a_total: 0.25 * kf * (kf + 1.0),
        sum_a_sq: kf * (kf + 1.0) * (2.0 * kf + 1.0) / 24.0,
        sum_a_total: kf * (kf + 1.0) * (kf + 2.0) / 12.0,
    })
}

fn decompose(x: f64) -> (u64, i64) {
    debug_assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 {
        (frac, -1074)
    } else {
        (frac | (1 << 52), exp_bits - 1075)
    }
}

/// Exact comparison of a positive f64 (given as mantissa·2^exp) against an
/// integer.
fn f64_le_integer(value: (u64, i64), integer: &BigUint) -> bool {
    let (m, e) = value;
    if e >= 0 {
        BigUint::from(m) << (e as u64) <= *integer
    } else {
        BigUint::from(m) <= integer.clone() << ((-e) as u64)
    }
}

fn pow3_tower(c: u32) -> BigUint {
    // 3^(2^c) by repeated squaring
    let mut p = BigUint::from(3u32);
    for _ in 0..c {
        p = &p * &p;
    }
    p
}

/// The delay `t₀ = ⌈log₂ log₃ (γ/A₀)⌉ − 1` of the squared-growth floor.
/// The ratio γ/A₀ is compared against the exact integer thresholds 3^(2^c),
/// so no log₂ log₃ floating-point boundary error can flip the ceiling.
pub fn growth_delay(a0: f64, gamma: f64) -> Result<u32> {
    if !(a0 > 0.0 && gamma > 0.0) || !a0.is_finite() || !gamma.is_finite() {
        return Err(Error::invalid("growth_delay needs positive finite inputs"));
    }
    let ratio = gamma / a0;
    if !(ratio >= 9.0) {
        return Err(Error::invalid("growth_delay requires A0 <= gamma/9"));
    }
    let dr = decompose(ratio);
    // smallest c ≥ 0 with γ/A₀ ≤ 3^(2^c); then t₀ = c − 1
    for c in 0..64 {
        if f64_le_integer(dr, &pow3_tower(c)) {
            return Ok(c.saturating_sub(1));
        }
    }
    Err(Error::invalid("growth_delay ratio out of range"))
}

/// `t₀ = ⌈log₂ log₃ N⌉ − 1` for an integer epoch length N ≥ 9, exactly.
pub fn fast_svrg_t0(n: u64) -> Result<u32> {
    if n < 9 {
        return Err(Error::invalid("the accelerated epoch schedule needs N >= 9"));
    }
    let target = BigUint::from(n);
    for c in 0..8 {
        if pow3_tower(c) >= target {
            return Ok(c - 1);
        }
    }
    Err(Error::invalid("epoch length out of range"))
}

/// Lower bound on a sequence with `A_{t+1} − A_t ≥ √(γ A_t)` and
/// `A₀ ≤ γ/9`: `γ(A₀/γ)^{1/2ᵗ}` before the delay `t₀`, and
/// `(γ/9)(t − t₀ + 1)²` afterwards.
pub fn growth_floor(a0: f64, gamma: f64, t: u32) -> Result<f64> {
    let t0 = growth_delay(a0, gamma)?;
    if t < t0 {
        Ok(gamma * (a0 / gamma).powf(1.0 / (1u64 << t) as f64))
    } else {
        Ok(gamma / 9.0 * ((t - t0) as f64 + 1.0).powi(2))
    }
}

/// Which convergence-rate bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundQuery {
    /// Averaged-iterate bound after `iterations` steps (uniform variance σ).
    Sgd { iterations: u64 },
    /// Last-iterate bound after `iterations` accelerated steps (uniform σ).
    FastSgd { iterations: u64 },
    /// Averaged-iterate bound expressed through the variance at the solution.
    SgdVarianceAtOptimum { iterations: u64 },
    /// Accelerated bound expressed through the variance at the solution.
    FastSgdVarianceAtOptimum { iterations: u64 },
    /// Epoch-based variance-reduced bound after `epochs` epochs.
    Svrg { epochs: u32 },
    /// Accelerated variance-reduced bound with fixed `epoch_len` after
    /// `epochs` epochs (requires `epoch_len ≥ 9` and `epochs ≥ t₀`).
    FastSvrg { epochs: u32, epoch_len: u64 },
}

/// Evaluates the right-hand side of the corresponding convergence theorem,
/// literally as stated.
pub fn theorem_bound(
    constants: &RuleConstants,
    params: &SmoothnessParams,
    diameter: f64,
    query: BoundQuery,
) -> Result<f64> {
    params.validate()?;
    if !(diameter > 0.0) {
        return Err(Error::invalid("diameter must be positive"));
    }
    let RuleConstants { c1, c2, c3, c4 } = *constants;
    let d2 = diameter * diameter;
    match query {
        BoundQuery::Sgd { iterations } => {
            if iterations < 1 {
                return Err(Error::invalid("iteration count must be at least 1"));
            }
            let n = iterations as f64;
            Ok(c2 * c4 * params.l_f * d2 / n
                + 2.0 * params.sigma * diameter * (2.0 * c1 * c4 / n).sqrt()
                + c3 * params.delta_f)
        }
        BoundQuery::FastSgd { iterations } => {
            if iterations < 1 {
                return Err(Error::invalid("iteration count must be at least 1"));
            }
            let k = iterations as f64;
            Ok(4.0 * c2 * c4 * params.l_f * d2 / (k * (k + 1.0))
                + 4.0 * params.sigma * diameter * (2.0 * c1 * c4 / (3.0 * k)).sqrt()
                + c3 / 3.0 * (k + 2.0) * params.delta_f)
        }
        BoundQuery::SgdVarianceAtOptimum { iterations } => {
            if iterations < 1 {
                return Err(Error::invalid("iteration count must be at least 1"));
            }
            let n = iterations as f64;
            Ok(c4 * (c2 * params.l_f + 12.0 * c1 * params.l_var) * d2 / n
                + 2.0 * params.sigma_star * diameter * (6.0 * c1 * c4 / n).sqrt()
                + c3 * params.delta_f
                + 4.0 / 3.0 * params.delta_var)
        }
        BoundQuery::FastSgdVarianceAtOptimum { iterations } => {
            if iterations < 1 {
                return Err(Error::invalid("iteration count must be at least 1"));
            }
            let k = iterations as f64;
            Ok(4.0 * c2 * c4 * params.l_f * d2 / (k * (k + 1.0))
                + 24.0 * c1 * c4 * params.l_var * d2 / (k + 1.0)
                + 4.0 * params.sigma_star * diameter * (2.0 * c1 * c4 / k).sqrt()
                + c3 / 3.0 * (k + 2.0) * params.delta_f
                + 4.0 / 3.0 * params.delta_var)
        }
        BoundQuery::Svrg { epochs } => {
            if epochs < 1 {
                return Err(Error::invalid("epoch count must be at least 1"));
            }
            let c3_bar = c3.max(1.0);
            Ok(((c2 * c4 + 1.0) * params.l_f + 48.0 * c1 * c4 * params.l_var) * d2
                / (1u64 << epochs) as f64
                + 2.0 * c3_bar * params.delta_f
                + 8.0 / 3.0 * params.delta_var)
        }
        BoundQuery::FastSvrg { epochs, epoch_len } => {
            let t0 = fast_svrg_t0(epoch_len)?;
            if epochs < t0 {
                return Err(Error::invalid(format!(
                    "the accelerated epoch bound needs epochs >= t0 = {t0}"
                )));
            }
            let t = epochs as f64;
            let denom = epoch_len as f64 * ((epochs - t0) as f64 + 1.0).powi(2);
            Ok(9.0 * ((c2 * c4 + 0.5) * params.l_f + 6.0 * c1 * c4 * params.l_var) * d2
                / denom
                + (c3 * t + 1.0) * params.delta_f
                + 5.0 / 3.0 * t * params.delta_var)
        }
    }
}

/// Evaluates the rate bound for a (ν, H)-Hölder smooth objective by
/// minimizing numerically over the free accuracy parameter δ that enters
/// through `holder_l`. Supported for the two non-variance-reduced methods.
pub fn optimized_holder_bound(
    constants: &RuleConstants,
    diameter: f64,
    nu: f64,
    holder: f64,
    sigma: f64,
    query: BoundQuery,
) -> Result<f64> {
    match query {
        BoundQuery::Sgd { .. } | BoundQuery::FastSgd { .. } => {}
        _ => {
            return Err(Error::invalid(
                "optimized Hölder bound supports only the plain and accelerated SGD rates",
            ))
        }
    }
    let eval = |delta: f64| -> Result<f64> {
        let params = SmoothnessParams {
            l_f: holder_l(delta, nu, holder)?,
            delta_f: if nu == 1.0 { 0.0 } else { delta },
            sigma,
            ..Default::default()
        };
        theorem_bound(constants, &params, diameter, query)
    };
    // The objective a/δ^p + cδ + const is convex in δ, hence unimodal in
    // log δ; ternary search over a wide bracket.
    let (mut lo, mut hi) = ((1e-14_f64).ln(), (1e8_f64).ln());
    for _ in 0..300 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if eval(m1.exp())? <= eval(m2.exp())? {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    eval((0.5 * (lo + hi)).exp())
}
