//! Composite parts ψ and their proximal mappings
//! `Prox_ψ(x, g, M) = argmin_y {⟨g, y⟩ + ψ(y) + (M/2)‖y − x‖²}`,
//! including the degenerate M = 0 case.

use crate::error::{Error, Result};
use crate::numerics::{combine, inner, sub, Geometry, Vector};
use serde::{Deserialize, Serialize};

/// Tolerance used for domain-membership checks on computed iterates.
pub const DOMAIN_TOL: f64 = 1e-9;

/// A simple proper closed convex composite part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Composite {
    /// ψ ≡ 0 on all of ℝᵈ.
    Zero,
    /// Indicator of the primal-norm ball `{x : ‖x − center‖ ≤ radius}`.
    Ball { radius: f64, center: Vector },
}

impl Composite {
    pub fn zero() -> Self {
        Composite::Zero
    }

    pub fn ball(radius: f64, center: Vector) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid("ball radius must be positive and finite"));
        }
        Ok(Composite::Ball { radius, center })
    }

    /// Ball of the given radius centered at the origin.
    pub fn centered_ball(radius: f64, dim: usize) -> Result<Self> {
        Composite::ball(radius, Vector::zeros(dim))
    }

    /// ψ(x): 0 on the domain, +∞ outside. Membership is tested with a small
    /// tolerance so that projected iterates on the boundary stay feasible.
    pub fn value(&self, geom: &Geometry, x: &Vector) -> Result<f64> {
        Ok(if self.contains(geom, x, DOMAIN_TOL)? {
            0.0
        } else {
            f64::INFINITY
        })
    }

    pub fn contains(&self, geom: &Geometry, x: &Vector, tol: f64) -> Result<bool> {
        match self {
            Composite::Zero => Ok(true),
            Composite::Ball { radius, center } => {
                let dist = geom.primal_distance(x, center)?;
                Ok(dist <= radius + tol * radius.max(1.0))
            }
        }
    }

    /// Diameter of the domain in the primal norm (`2R` for a ball).
    pub fn diameter(&self) -> Option<f64> {
        match self {
            Composite::Zero => None,
            Composite::Ball { radius, .. } => Some(2.0 * radius),
        }
    }
}

/// The proximal mapping `argmin_y {⟨g, y⟩ + ψ(y) + (M/2)‖y − x‖²}`.
///
/// For a ball composite and M > 0 this projects `x − B⁻¹g/M` onto the ball in
/// the primal norm. For M = 0 the subproblem is a linear minimization: over a
/// ball the solution is `center − R·B⁻¹g/‖g‖*` (any point when g = 0, and we
/// return `x`); with a Zero composite and g ≠ 0 it is unbounded.
pub fn prox(psi: &Composite, geom: &Geometry, x: &Vector, g: &Vector, m: f64) -> Result<Vector> {
    if !(m >= 0.0) || !m.is_finite() {
        return Err(Error::invalid("prox coefficient M must be finite and >= 0"));
    }
    if x.dim() != g.dim() || x.dim() != geom.dim() {
        return Err(Error::DimensionMismatch {
            expected: geom.dim(),
            got: x.dim().max(g.dim()),
        });
    }
    if !psi.contains(geom, x, DOMAIN_TOL)? {
        return Err(Error::OutOfDomain);
    }
    match psi {
        Composite::Zero => {
            if m > 0.0 {
                // y = x − B⁻¹ g / M
                let step = geom.solve(g)?;
                combine(1.0, x, -1.0 / m, &step)
            } else if g.is_zero() {
                Ok(x.clone())
            } else {
                Err(Error::UnboundedProx)
            }
        }
        Composite::Ball { radius, center } => {
            if m > 0.0 {
                let step = geom.solve(g)?;
                let candidate = combine(1.0, x, -1.0 / m, &step)?;
                let dist = geom.primal_distance(&candidate, center)?;
                if dist <= *radius {
                    Ok(candidate)
                } else {
                    // Projection in the primal norm rescales the offset
                    // uniformly (B is diagonal).
                    let offset = sub(&candidate, center)?;
                    combine(1.0, center, radius / dist, &offset)
                }
            } else {
                let gnorm = geom.dual_norm(g)?;
                if gnorm == 0.0 {
                    Ok(x.clone())
                } else {
                    let dir = geom.solve(g)?;
                    combine(1.0, center, -radius / gnorm, &dir)
                }
            }
        }
    }
}

/// Checks the prox optimality condition
/// `⟨g, y − x₊⟩ + ψ(y) + (M/2)‖x − y‖² ≥ ψ(x₊) + (M/2)‖x − x₊‖² + (M/2)‖x₊ − y‖²`
/// for every probe `y`, within an absolute tolerance of 1e-9.
pub fn check_prox_optimality(
    psi: &Composite,
    geom: &Geometry,
    x: &Vector,
    g: &Vector,
    m: f64,
    x_plus: &Vector,
    probes: &[Vector],
) -> Result<bool> {
    const TOL: f64 = 1e-9;
    let psi_x_plus = psi.value(geom, x_plus)?;
    if !psi_x_plus.is_finite() {
        return Ok(false);
    }
    let dist_x_xplus = geom.primal_distance_sq(x, x_plus)?;
    for y in probes {
        if !psi.contains(geom, y, DOMAIN_TOL)? {
            return Err(Error::OutOfDomain);
        }
        let lhs = inner(g, &sub(y, x_plus)?)? + 0.5 * m * geom.primal_distance_sq(x, y)?;
        let rhs =
            psi_x_plus + 0.5 * m * (dist_x_xplus + geom.primal_distance_sq(x_plus, y)?);
        if lhs < rhs - TOL {
            return Ok(false);
        }
    }
    Ok(true)
}
