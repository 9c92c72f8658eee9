//! Stepsize update rules M₊(M, Ω, x, x̂₊, ĝ_x, ĝ_{x₊}), the scaling
//! adapter used by the accelerated methods, and the telescoped stepsize
//! error used in the analysis-level accounting.
//!
//! Both built-in rules are monotone: the returned coefficient never drops
//! below the current one.

use crate::error::{Error, Result};
use crate::numerics::{Geometry, Vector};
use crate::theory::RuleConstants;
use serde::{Deserialize, Serialize};

/// The two built-in stepsize update rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepsizeRule {
    /// `M̂₊ = √(M² + ‖ĝ_{x₊} − ĝ_x‖*²/Ω)`.
    AdaGrad,
    /// `M̂₊` solving `(M̂₊ − M)Ω = [⟨ĝ_{x₊} − ĝ_x, x̂₊ − x⟩ − (M̂₊/2)‖x̂₊ − x‖²]₊`.
    Implicit,
}

impl StepsizeRule {
    /// The constants (c₁, c₂, c₃, c₄) this rule is guaranteed to satisfy.
    /// They are metadata for bound evaluation and never enter the update.
    pub fn constants(&self) -> RuleConstants {
        match self {
            StepsizeRule::AdaGrad => RuleConstants::ADAGRAD,
            StepsizeRule::Implicit => RuleConstants::IMPLICIT,
        }
    }

    pub fn update(&self, input: &RuleInput) -> Result<f64> {
        match self {
            StepsizeRule::AdaGrad => adagrad_update(input),
            StepsizeRule::Implicit => implicit_update(input),
        }
    }
}

impl std::str::FromStr for StepsizeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adagrad" => Ok(StepsizeRule::AdaGrad),
            "implicit" => Ok(StepsizeRule::Implicit),
            other => Err(Error::Config(format!(
                "unknown stepsize rule '{other}' (expected adagrad|implicit)"
            ))),
        }
    }
}

impl std::fmt::Display for StepsizeRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepsizeRule::AdaGrad => write!(f, "adagrad"),
            StepsizeRule::Implicit => write!(f, "implicit"),
        }
    }
}

/// Inputs of one stepsize update.
pub struct RuleInput<'a> {
    /// Current coefficient M ≥ 0.
    pub m: f64,
    /// Scaled squared diameter Ω > 0.
    pub omega: f64,
    pub x: &'a Vector,
    pub x_plus: &'a Vector,
    pub g_x: &'a Vector,
    pub g_x_plus: &'a Vector,
    pub geometry: &'a Geometry,
}

impl RuleInput<'_> {
    fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::invalid("omega must be positive and finite"));
        }
        if !(self.m >= 0.0) {
            return Err(Error::invalid("stepsize coefficient must be >= 0"));
        }
        Ok(())
    }
}

/// AdaGrad rule: `√(M² + ‖ĝ_{x₊} − ĝ_x‖*²/Ω)`.
pub fn adagrad_update(input: &RuleInput) -> Result<f64> {
    input.validate()?;
    let diff_sq = input.geometry.dual_distance_sq(input.g_x_plus, input.g_x)?;
    Ok((input.m * input.m + diff_sq / input.omega).sqrt())
}

/// Implicit rule: the unique `M̂₊ ≥ M` solving
/// `(M̂₊ − M)Ω = [⟨Δg, Δx⟩ − (M̂₊/2)‖Δx‖²]₊`.
pub fn implicit_update(input: &RuleInput) -> Result<f64> {
    input.validate()?;
    let dx = crate::numerics::sub(input.x_plus, input.x)?;
    let dg = crate::numerics::sub(input.g_x_plus, input.g_x)?;
    let gap = crate::numerics::inner(&dg, &dx)?;
    let half_dist_sq = 0.5 * input.geometry.primal_norm_sq(&dx)?;
    Ok(implicit_update_scalars(
        input.m,
        input.omega,
        gap,
        half_dist_sq,
    ))
}

/// Scalar form of the implicit rule with `gap = ⟨Δg, Δx⟩` and
/// `half_dist_sq = ‖Δx‖²/2`.
///
/// Closed form: if `gap − M·half_dist_sq ≤ 0` the positive part vanishes at
/// `M̂₊ = M`; otherwise the bracket is active and
/// `M̂₊ = (gap + M·Ω)/(Ω + half_dist_sq)`. Uniqueness holds because the left
/// side of the equation is increasing and the right side nonincreasing in
/// `M̂₊`. When `Δx = 0` this reduces to `M̂₊ = M + [gap]₊/Ω`.
pub fn implicit_update_scalars(m: f64, omega: f64, gap: f64, half_dist_sq: f64) -> f64 {
    if gap - half_dist_sq * m <= 0.0 {
        m
    } else {
        (gap + m * omega) / (omega + half_dist_sq)
    }
}

/// The stepsize update as used inside the similar-triangles methods:
/// `(a²/A₊) · M₊(M·A₊/a², (a²/A₊²)·D², x, x₊, g_x, g_{x₊})`.
///
/// For the AdaGrad rule this equals `√(M² + (a²/D²)‖Δg‖*²)` exactly.
#[allow(clippy::too_many_arguments)]
pub fn scaled_update(
    rule: StepsizeRule,
    m: f64,
    a: f64,
    a_total: f64,
    diameter: f64,
    x: &Vector,
    x_plus: &Vector,
    g_x: &Vector,
    g_x_plus: &Vector,
    geometry: &Geometry,
) -> Result<f64> {
    if !(a > 0.0 && a_total > 0.0 && diameter > 0.0) {
        return Err(Error::invalid(
            "scaled update needs positive a, A_plus and diameter",
        ));
    }
    let ratio = a * a / a_total;
    let input = RuleInput {
        m: m / ratio,
        omega: diameter * diameter * ratio / a_total,
        x,
        x_plus,
        g_x,
        g_x_plus,
        geometry,
    };
    Ok(ratio * rule.update(&input)?)
}

/// The telescoped stepsize error
/// `Σ_k [min(M_{k+1}, M̄) − M_k]₊ · Ω` over a nondecreasing nonnegative
/// coefficient sequence. Equals `[min(M_N, M̄) − M₀]₊ · Ω` in closed form.
pub fn telescoped_error(m_seq: &[f64], m_bar: f64, omega: f64) -> Result<f64> {
    if m_seq.is_empty() {
        return Ok(0.0);
    }
    if !(m_seq[0] >= 0.0) {
        return Err(Error::invalid("stepsize sequence must be nonnegative"));
    }
    let mut sum = 0.0;
    for k in 0..m_seq.len() - 1 {
        if m_seq[k + 1] < m_seq[k] {
            return Err(Error::NonMonotone(k + 1));
        }
        sum += (m_seq[k + 1].min(m_bar) - m_seq[k]).max(0.0);
    }
    Ok(sum * omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_input<'a>(
        m: f64,
        omega: f64,
        x: &'a Vector,
        x_plus: &'a Vector,
        g_x: &'a Vector,
        g_x_plus: &'a Vector,
        geom: &'a Geometry,
    ) -> RuleInput<'a> {
        RuleInput {
            m,
            omega,
            x,
            x_plus,
            g_x,
            g_x_plus,
            geometry: geom,
        }
    }

    /// Independent solver for the implicit-rule equation, kept test-only.
    fn implicit_by_bisection(m: f64, omega: f64, gap: f64, half_dist_sq: f64) -> f64 {
        let residual =
            |cand: f64| (cand - m) * omega - (gap - cand * half_dist_sq).max(0.0);
        if residual(m) >= 0.0 {
            return m;
        }
        let mut lo = m;
        let mut hi = m.max(1.0);
        while residual(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn adagrad_examples() {
        let geom = Geometry::identity(1);
        let x = Vector::dense(vec![0.0]);
        let x_plus = Vector::dense(vec![1.0]);
        let g0 = Vector::dense(vec![0.0]);
        let g2 = Vector::dense(vec![2.0]);
        // M = 0, Ω = 1, ‖Δg‖* = 2 → 2
        let out = adagrad_update(&unit_input(0.0, 1.0, &x, &x_plus, &g0, &g2, &geom)).unwrap();
        assert_eq!(out, 2.0);
        // Δg = 0 keeps M
        let out = adagrad_update(&unit_input(1.7, 2.0, &x, &x_plus, &g2, &g2, &geom)).unwrap();
        assert_eq!(out, 1.7);
        // M = 3, Ω = 4, ‖Δg‖* = 4 → √13
        let g4 = Vector::dense(vec![4.0]);
        let out = adagrad_update(&unit_input(3.0, 4.0, &x, &x_plus, &g0, &g4, &geom)).unwrap();
        assert!((out - 13.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn omega_must_be_positive() {
        let geom = Geometry::identity(1);
        let v = Vector::dense(vec![0.0]);
        assert!(adagrad_update(&unit_input(0.0, 0.0, &v, &v, &v, &v, &geom)).is_err());
        assert!(implicit_update(&unit_input(0.0, -1.0, &v, &v, &v, &v, &geom)).is_err());
    }

    #[test]
    fn implicit_vanishing_positive_part() {
        // M = 2, Ω = 1, gap = 1, ‖Δx‖² = 2 → stays at 2
        assert_eq!(implicit_update_scalars(2.0, 1.0, 1.0, 1.0), 2.0);
    }

    #[test]
    fn implicit_active_branch() {
        // M = 1, Ω = 1, gap = 3, ‖Δx‖² = 1 → 8/3; residual check below
        let m_plus = implicit_update_scalars(1.0, 1.0, 3.0, 0.5);
        assert!((m_plus - 8.0 / 3.0).abs() < 1e-15);
        let lhs = (m_plus - 1.0) * 1.0;
        let rhs = (3.0 - m_plus * 0.5).max(0.0);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn implicit_degenerate_zero_displacement() {
        // Δx = 0, M = 0, Ω = 1: the equation reads M̂₊Ω = [gap]₊
        assert_eq!(implicit_update_scalars(0.0, 1.0, 1.0, 0.0), 1.0);
        assert_eq!(implicit_update_scalars(0.0, 1.0, -3.0, 0.0), 0.0);
        assert_eq!(implicit_update_scalars(2.0, 0.5, 1.0, 0.0), 4.0);
    }

    #[test]
    fn implicit_closed_form_matches_bisection() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let m = rng.random_range(0.0..10.0);
            let omega = rng.random_range(1e-3..10.0);
            let gap = rng.random_range(-5.0..10.0);
            let half = rng.random_range(0.0..5.0);
            let fast = implicit_update_scalars(m, omega, gap, half);
            let slow = implicit_by_bisection(m, omega, gap, half);
            assert!(
                (fast - slow).abs() <= 1e-10,
                "closed form {fast} vs bisection {slow}"
            );
            // residual of the defining equation, scaled
            let res = (fast - m) * omega - (gap - fast * half).max(0.0);
            assert!(res.abs() <= 1e-9 * (fast * omega).max(1.0));
            assert!(fast >= m);
        }
    }

    #[test]
    fn scaled_adagrad_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let geom = Geometry::diagonal(vec![1.0, 2.0, 0.5]).unwrap();
        for _ in 0..300 {
            let m = rng.random_range(0.0..5.0);
            let a = rng.random_range(0.1..4.0);
            let a_total = rng.random_range(0.1..6.0);
            let d = rng.random_range(0.5..3.0);
            let x = Vector::dense((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            let x_plus = Vector::dense((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            let g_x = Vector::dense((0..3).map(|_| rng.random_range(-2.0..2.0)).collect());
            let g_x_plus = Vector::dense((0..3).map(|_| rng.random_range(-2.0..2.0)).collect());
            let got = scaled_update(
                StepsizeRule::AdaGrad,
                m,
                a,
                a_total,
                d,
                &x,
                &x_plus,
                &g_x,
                &g_x_plus,
                &geom,
            )
            .unwrap();
            let diff_sq = geom.dual_distance_sq(&g_x_plus, &g_x).unwrap();
            let want = (m * m + a * a * diff_sq / (d * d)).sqrt();
            assert!(
                (got - want).abs() <= 1e-12 * want.max(1.0),
                "scaled update {got} vs direct {want}"
            );
        }
    }

    #[test]
    fn scaled_update_simple_example() {
        // AdaGrad, M = 0, a = 1, A₊ = 2, D = 1, ‖Δg‖ = 1 → 1
        let geom = Geometry::identity(1);
        let x = Vector::dense(vec![0.0]);
        let x_plus = Vector::dense(vec![0.5]);
        let g_x = Vector::dense(vec![0.0]);
        let g_x_plus = Vector::dense(vec![1.0]);
        let got = scaled_update(
            StepsizeRule::AdaGrad,
            0.0,
            1.0,
            2.0,
            1.0,
            &x,
            &x_plus,
            &g_x,
            &g_x_plus,
            &geom,
        )
        .unwrap();
        assert!((got - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scaled_update_is_monotone_for_both_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let geom = Geometry::identity(2);
        for rule in [StepsizeRule::AdaGrad, StepsizeRule::Implicit] {
            for _ in 0..300 {
                let m = rng.random_range(0.0..4.0);
                let a = rng.random_range(0.1..3.0);
                let a_total = rng.random_range(0.1..5.0);
                let d = rng.random_range(0.2..2.0);
                let x = Vector::dense((0..2).map(|_| rng.random_range(-1.0..1.0)).collect());
                let x_plus =
                    Vector::dense((0..2).map(|_| rng.random_range(-1.0..1.0)).collect());
                let g_x = Vector::dense((0..2).map(|_| rng.random_range(-2.0..2.0)).collect());
                let g_x_plus =
                    Vector::dense((0..2).map(|_| rng.random_range(-2.0..2.0)).collect());
                let got = scaled_update(
                    rule, m, a, a_total, d, &x, &x_plus, &g_x, &g_x_plus, &geom,
                )
                .unwrap();
                assert!(got >= m - 1e-12, "{rule} produced {got} < {m}");
            }
        }
        assert!(scaled_update(
            StepsizeRule::AdaGrad,
            0.0,
            -1.0,
            1.0,
            1.0,
            &Vector::zeros(2),
            &Vector::zeros(2),
            &Vector::zeros(2),
            &Vector::zeros(2),
            &geom,
        )
        .is_err());
    }

    #[test]
    fn telescoped_error_examples() {
        // [0,1,3,5], M̄ = 4, Ω = 1 → 4 = [min(5,4) − 0]₊
        let seq = [0.0, 1.0, 3.0, 5.0];
        assert_eq!(telescoped_error(&seq, 4.0, 1.0).unwrap(), 4.0);
        // M̄ ≥ M_N collapses to M_N − M₀
        assert_eq!(telescoped_error(&seq, 10.0, 1.0).unwrap(), 5.0);
        // M̄ ≤ M₀ gives zero
        assert_eq!(telescoped_error(&seq, 0.0, 1.0).unwrap(), 0.0);
        // Ω scales the result
        assert_eq!(telescoped_error(&seq, 4.0, 2.5).unwrap(), 10.0);
        assert!(telescoped_error(&[1.0, 0.5], 4.0, 1.0).is_err());
    }

    #[test]
    fn telescoped_error_matches_closed_form_on_random_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let len = rng.random_range(1..1000);
            let mut seq = Vec::with_capacity(len);
            let mut cur = rng.random_range(0.0..1.0);
            for _ in 0..len {
                seq.push(cur);
                cur += rng.random_range(0.0..0.5);
            }
            let m_bar = rng.random_range(0.0..(cur + 1.0));
            let sum = telescoped_error(&seq, m_bar, 1.0).unwrap();
            let closed = (seq[seq.len() - 1].min(m_bar) - seq[0]).max(0.0);
            assert!((sum - closed).abs() <= 1e-12 * closed.max(1.0));
        }
    }

    #[test]
    fn rule_constants_match_expected_values() {
        let c = StepsizeRule::AdaGrad.constants();
        assert_eq!((c.c1, c.c2, c.c3, c.c4), (2.5, 4.0, 6.0, 2.0));
        let c = StepsizeRule::Implicit.constants();
        assert_eq!((c.c1, c.c2, c.c3, c.c4), (1.0, 2.0, 6.0, 2.0));
    }

    #[test]
    fn rule_parsing_round_trips() {
        for rule in [StepsizeRule::AdaGrad, StepsizeRule::Implicit] {
            let parsed: StepsizeRule = rule.to_string().parse().unwrap();
            assert_eq!(parsed, rule);
        }
        assert!("momentum".parse::<StepsizeRule>().is_err());
    }
}
