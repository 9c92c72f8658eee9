//! Dense/sparse vectors and the weighted Euclidean geometry (primal and dual
//! norms induced by a positive diagonal matrix B) that the rest of the crate
//! builds on.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A real vector, stored densely or as sorted (index, value) pairs.
///
/// Sparse and dense representations of the same mathematical vector are
/// interchangeable in every operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Vector {
    Dense(Vec<f64>),
    Sparse {
        dim: usize,
        indices: Vec<usize>,
        values: Vec<f64>,
    },
}

impl Vector {
    /// The zero vector of dimension `dim`.
    pub fn zeros(dim: usize) -> Self {
        Vector::Dense(vec![0.0; dim])
    }

    pub fn dense(entries: Vec<f64>) -> Self {
        Vector::Dense(entries)
    }

    /// Builds a sparse vector from (index, value) pairs. Pairs need not be
    /// sorted; duplicate or out-of-range indices are rejected.
    pub fn sparse(dim: usize, pairs: &[(usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, f64)> = pairs.to_vec();
        sorted.sort_by_key(|&(i, _)| i);
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        for &(i, v) in &sorted {
            if i >= dim {
                return Err(Error::invalid(format!(
                    "sparse index {i} out of range for dimension {dim}"
                )));
            }
            if indices.last() == Some(&i) {
                return Err(Error::invalid(format!("duplicate sparse index {i}")));
            }
            indices.push(i);
            values.push(v);
        }
        Ok(Vector::Sparse {
            dim,
            indices,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Vector::Dense(v) => v.len(),
            Vector::Sparse { dim, .. } => *dim,
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        match self {
            Vector::Dense(v) => v[i],
            Vector::Sparse {
                indices, values, ..
            } => match indices.binary_search(&i) {
                Ok(k) => values[k],
                Err(_) => 0.0,
            },
        }
    }

    /// Iterates over structurally nonzero entries in ascending index order.
    pub fn iter_nonzero(&self) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match self {
            Vector::Dense(v) => Box::new(v.iter().copied().enumerate()),
            Vector::Sparse {
                indices, values, ..
            } => Box::new(indices.iter().copied().zip(values.iter().copied())),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            Vector::Dense(v) => v.clone(),
            Vector::Sparse {
                dim,
                indices,
                values,
            } => {
                let mut out = vec![0.0; *dim];
                for (k, &i) in indices.iter().enumerate() {
                    out[i] = values[k];
                }
                out
            }
        }
    }

    pub(crate) fn as_dense_slice(&self) -> Option<&[f64]> {
        match self {
            Vector::Dense(v) => Some(v),
            Vector::Sparse { .. } => None,
        }
    }

    /// `out += coeff * self`. The accumulator must be dense.
    pub fn add_scaled_into(&self, coeff: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        match self {
            Vector::Dense(v) => {
                for (o, &x) in out.iter_mut().zip(v.iter()) {
                    *o += coeff * x;
                }
            }
            Vector::Sparse {
                indices, values, ..
            } => {
                for (k, &i) in indices.iter().enumerate() {
                    out[i] += coeff * values[k];
                }
            }
        }
    }

    /// Returns `self` scaled by `coeff`, preserving the representation.
    pub fn scaled(&self, coeff: f64) -> Vector {
        match self {
            Vector::Dense(v) => Vector::Dense(v.iter().map(|&x| coeff * x).collect()),
            Vector::Sparse {
                dim,
                indices,
                values,
            } => Vector::Sparse {
                dim: *dim,
                indices: indices.clone(),
                values: values.iter().map(|&x| coeff * x).collect(),
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Vector::Dense(v) => v.iter().all(|&x| x == 0.0),
            Vector::Sparse { values, .. } => values.iter().all(|&x| x == 0.0),
        }
    }

    /// Moves `self` toward `target`: `self += weight * (target - self)`.
    /// With `weight = 1/k` this is the incremental running-average update.
    pub fn blend_toward(&mut self, target: &Vector, weight: f64) {
        let dim = self.dim();
        debug_assert_eq!(dim, target.dim());
        let s = match self {
            Vector::Dense(v) => v,
            Vector::Sparse { .. } => {
                *self = Vector::Dense(self.to_dense());
                match self {
                    Vector::Dense(v) => v,
                    _ => unreachable!(),
                }
            }
        };
        match target.as_dense_slice() {
            Some(t) => {
                for (si, &ti) in s.iter_mut().zip(t.iter()) {
                    *si += weight * (ti - *si);
                }
            }
            None => {
                let t = target.to_dense();
                for (si, &ti) in s.iter_mut().zip(t.iter()) {
                    *si += weight * (ti - *si);
                }
            }
        }
    }
}

impl From<Vec<f64>> for Vector {
    fn from(entries: Vec<f64>) -> Self {
        Vector::Dense(entries)
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: a,
            got: b,
        })
    }
}

/// Standard inner product `Σᵢ xᵢ yᵢ`, for any mix of representations.
pub fn inner(x: &Vector, y: &Vector) -> Result<f64> {
    check_dims(x.dim(), y.dim())?;
    let sum = match (x, y) {
        (Vector::Dense(a), Vector::Dense(b)) => {
            a.iter().zip(b.iter()).map(|(&ai, &bi)| ai * bi).sum()
        }
        (
            Vector::Sparse {
                indices: ia,
                values: va,
                ..
            },
            Vector::Sparse {
                indices: ib,
                values: vb,
                ..
            },
        ) => {
            let mut s = 0.0;
            let (mut p, mut q) = (0, 0);
            while p < ia.len() && q < ib.len() {
                match ia[p].cmp(&ib[q]) {
                    std::cmp::Ordering::Less => p += 1,
                    std::cmp::Ordering::Greater => q += 1,
                    std::cmp::Ordering::Equal => {
                        s += va[p] * vb[q];
                        p += 1;
                        q += 1;
                    }
                }
            }
            s
        }
        (sparse @ Vector::Sparse { .. }, dense) | (dense, sparse @ Vector::Sparse { .. }) => sparse
            .iter_nonzero()
            .map(|(i, v)| v * dense.get(i))
            .sum(),
    };
    Ok(sum)
}

/// `alpha * x + beta * y` as a dense vector.
pub fn combine(alpha: f64, x: &Vector, beta: f64, y: &Vector) -> Result<Vector> {
    check_dims(x.dim(), y.dim())?;
    let mut out = vec![0.0; x.dim()];
    x.add_scaled_into(alpha, &mut out);
    y.add_scaled_into(beta, &mut out);
    Ok(Vector::Dense(out))
}

/// `x - y` as a dense vector.
pub fn sub(x: &Vector, y: &Vector) -> Result<Vector> {
    combine(1.0, x, -1.0, y)
}

/// The weighted Euclidean geometry induced by a positive diagonal matrix B:
/// primal norm `‖x‖ = √⟨Bx, x⟩` and dual norm `‖s‖* = √⟨s, B⁻¹s⟩`.
///
/// `None` weights mean B = I, in which case both norms are the standard
/// Euclidean norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    dim: usize,
    weights: Option<Vec<f64>>,
}

impl Geometry {
    pub fn identity(dim: usize) -> Self {
        Geometry { dim, weights: None }
    }

    /// Diagonal weights; every entry must be strictly positive and finite.
    pub fn diagonal(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid(
                "geometry weights must be strictly positive and finite",
            ));
        }
        Ok(Geometry {
            dim: weights.len(),
            weights: Some(weights),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.weights.is_none()
    }

    pub fn primal_norm_sq(&self, x: &Vector) -> Result<f64> {
        check_dims(self.dim, x.dim())?;
        let s = match (&self.weights, x) {
            (None, Vector::Dense(v)) => v.iter().map(|&xi| xi * xi).sum(),
            (Some(w), Vector::Dense(v)) => {
                v.iter().zip(w.iter()).map(|(&xi, &wi)| wi * xi * xi).sum()
            }
            (_, sparse) => sparse
                .iter_nonzero()
                .map(|(i, v)| self.weight(i) * v * v)
                .sum(),
        };
        Ok(s)
    }

    pub fn primal_norm(&self, x: &Vector) -> Result<f64> {
        Ok(self.primal_norm_sq(x)?.sqrt())
    }

    pub fn dual_norm_sq(&self, s: &Vector) -> Result<f64> {
        check_dims(self.dim, s.dim())?;
        let sum = match (&self.weights, s) {
            (None, Vector::Dense(v)) => v.iter().map(|&si| si * si).sum(),
            (Some(w), Vector::Dense(v)) => {
                v.iter().zip(w.iter()).map(|(&si, &wi)| si * si / wi).sum()
            }
            (_, sparse) => sparse
                .iter_nonzero()
                .map(|(i, v)| v * v / self.weight(i))
                .sum(),
        };
        Ok(sum)
    }

    pub fn dual_norm(&self, s: &Vector) -> Result<f64> {
        Ok(self.dual_norm_sq(s)?.sqrt())
    }

    /// `‖x - y‖²` in the primal norm, without allocating for dense inputs.
    pub fn primal_distance_sq(&self, x: &Vector, y: &Vector) -> Result<f64> {
        check_dims(x.dim(), y.dim())?;
        check_dims(self.dim, x.dim())?;
        if let (Some(a), Some(b)) = (x.as_dense_slice(), y.as_dense_slice()) {
            let mut s = 0.0;
            for i in 0..a.len() {
                let d = a[i] - b[i];
                s += self.weight(i) * d * d;
            }
            Ok(s)
        } else {
            self.primal_norm_sq(&sub(x, y)?)
        }
    }

    pub fn primal_distance(&self, x: &Vector, y: &Vector) -> Result<f64> {
        Ok(self.primal_distance_sq(x, y)?.sqrt())
    }

    /// `‖s - t‖*²` in the dual norm.
    pub fn dual_distance_sq(&self, s: &Vector, t: &Vector) -> Result<f64> {
        check_dims(s.dim(), t.dim())?;
        check_dims(self.dim, s.dim())?;
        if let (Some(a), Some(b)) = (s.as_dense_slice(), t.as_dense_slice()) {
            let mut sum = 0.0;
            for i in 0..a.len() {
                let d = a[i] - b[i];
                sum += d * d / self.weight(i);
            }
            Ok(sum)
        } else {
            self.dual_norm_sq(&sub(s, t)?)
        }
    }

    /// `B x` as a dense vector.
    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        check_dims(self.dim, x.dim())?;
        let mut out = x.to_dense();
        if let Some(w) = &self.weights {
            for (o, &wi) in out.iter_mut().zip(w.iter()) {
                *o *= wi;
            }
        }
        Ok(Vector::Dense(out))
    }

    /// `B⁻¹ s` as a dense vector.
    pub fn solve(&self, s: &Vector) -> Result<Vector> {
        check_dims(self.dim, s.dim())?;
        let mut out = s.to_dense();
        if let Some(w) = &self.weights {
            for (o, &wi) in out.iter_mut().zip(w.iter()) {
                *o /= wi;
            }
        }
        Ok(Vector::Dense(out))
    }
}
