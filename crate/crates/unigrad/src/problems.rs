//! Concrete finite-sum problem instances: the q-powered hinge family (which
//! covers polyhedron feasibility and one-sided least squares), symmetric
//! least squares, logistic regression over LIBSVM data, and two synthetic
//! quadratic families used for noise-controlled checks. Also the synthetic
//! data generators and the reference-optimum estimator.

use crate::error::{Error, Result};
use crate::numerics::{inner, Geometry, Vector};
use crate::oracle::{derive_rng, ExactOracle, FiniteSumOracle, GradientFamily, Minibatch};
use crate::prox::Composite;
use crate::solvers::{self, CompositeProblem, SolverConfig};
use crate::stepsize::StepsizeRule;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::sync::Arc;

/// The component families a [`FiniteSumProblem`] can be built from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Components {
    /// f_i(x) = [⟨a_i, x⟩ − b_i]₊^q with q ∈ [1, 2].
    HingePower {
        rows: Vec<Vector>,
        rhs: Vec<f64>,
        q: f64,
    },
    /// f_i(x) = log(1 + exp(−b_i ⟨a_i, x⟩)) with labels b_i ∈ {−1, +1}.
    Logistic { rows: Vec<Vector>, labels: Vec<f64> },
    /// f_i(x) = ½(⟨a_i, x⟩ − b_i)².
    LeastSquares { rows: Vec<Vector>, rhs: Vec<f64> },
    /// f_i(x) = ½‖x − z_i‖² (1-smooth quadratics with distinct centers).
    ShiftedQuadratic { centers: Vec<Vector> },
    /// f_i(x) = (α_i/2)‖x‖² (all components share the minimizer 0).
    ScaledQuadratic { dim: usize, curvatures: Vec<f64> },
}

/// Numerically stable log(1 + eᶻ).
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Numerically stable logistic function 1/(1 + e^{−z}).
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Components {
    pub fn len(&self) -> usize {
        match self {
            Components::HingePower { rows, .. } => rows.len(),
            Components::Logistic { rows, .. } => rows.len(),
            Components::LeastSquares { rows, .. } => rows.len(),
            Components::ShiftedQuadratic { centers } => centers.len(),
            Components::ScaledQuadratic { curvatures, .. } => curvatures.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            Components::HingePower { rows, .. }
            | Components::Logistic { rows, .. }
            | Components::LeastSquares { rows, .. } => rows[0].dim(),
            Components::ShiftedQuadratic { centers } => centers[0].dim(),
            Components::ScaledQuadratic { dim, .. } => *dim,
        }
    }

    pub fn value(&self, i: usize, x: &Vector) -> f64 {
        match self {
            Components::HingePower { rows, rhs, q } => {
                let t = inner(&rows[i], x).expect("dims checked at construction") - rhs[i];
                if t > 0.0 {
                    t.powf(*q)
                } else {
                    0.0
                }
            }
            Components::Logistic { rows, labels } => {
                let margin = labels[i] * inner(&rows[i], x).expect("dims checked");
                softplus(-margin)
            }
            Components::LeastSquares { rows, rhs } => {
                let r = inner(&rows[i], x).expect("dims checked") - rhs[i];
                0.5 * r * r
            }
            Components::ShiftedQuadratic { centers } => {
                let mut acc = 0.0;
                for j in 0..centers[i].dim() {
                    let d = x.get(j) - centers[i].get(j);
                    acc += d * d;
                }
                0.5 * acc
            }
            Components::ScaledQuadratic { dim, curvatures } => {
                let mut acc = 0.0;
                for j in 0..*dim {
                    acc += x.get(j) * x.get(j);
                }
                0.5 * curvatures[i] * acc
            }
        }
    }

    /// `out += scale · ∇f_i(x)`, with the fixed kink selection: the hinge
    /// subgradient is the zero vector whenever ⟨a, x⟩ − b ≤ 0.
    pub fn accumulate_grad(&self, i: usize, x: &Vector, scale: f64, out: &mut [f64]) {
        match self {
            Components::HingePower { rows, rhs, q } => {
                let t = inner(&rows[i], x).expect("dims checked") - rhs[i];
                if t > 0.0 {
                    rows[i].add_scaled_into(scale * q * t.powf(q - 1.0), out);
                }
            }
            Components::Logistic { rows, labels } => {
                let b = labels[i];
                let margin = b * inner(&rows[i], x).expect("dims checked");
                rows[i].add_scaled_into(scale * (-b) * sigmoid(-margin), out);
            }
            Components::LeastSquares { rows, rhs } => {
                let r = inner(&rows[i], x).expect("dims checked") - rhs[i];
                rows[i].add_scaled_into(scale * r, out);
            }
            Components::ShiftedQuadratic { centers } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += scale * (x.get(j) - centers[i].get(j));
                }
            }
            Components::ScaledQuadratic { curvatures, .. } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += scale * curvatures[i] * x.get(j);
                }
            }
        }
    }
}

/// The q-powered hinge term `([⟨a, x⟩ − b]₊^q, q[⟨a, x⟩ − b]₊^{q−1} a)`.
/// The subgradient selection at the kink (including q = 1 at t = 0) is the
/// zero vector.
pub fn hinge_power_term(a: &Vector, b: f64, x: &Vector, q: f64) -> Result<(f64, Vector)> {
    if !(1.0..=2.0).contains(&q) {
        return Err(Error::invalid("hinge power q must lie in [1, 2]"));
    }
    let t = inner(a, x)? - b;
    if t > 0.0 {
        Ok((t.powf(q), a.scaled(q * t.powf(q - 1.0))))
    } else {
        Ok((0.0, Vector::zeros(a.dim())))
    }
}

/// Descriptive metadata carried by a problem instance.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProblemMeta {
    pub name: String,
    pub q: Option<f64>,
    pub radius: f64,
    pub seed: Option<u64>,
    /// The planted solution for generated instances.
    pub planted: Option<Vector>,
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProblemData {
    components: Components,
    geometry: Geometry,
    psi: Composite,
    f_ref: Option<f64>,
    meta: ProblemMeta,
}

/// A finite-sum composite problem `min { (1/n) Σ f_i(x) + ψ(x) }` with
/// deterministic component access and a fixed subgradient selection.
#[derive(Debug, Clone)]
pub struct FiniteSumProblem {
    data: Arc<ProblemData>,
}

struct FamilyAdapter {
    data: Arc<ProblemData>,
}

impl GradientFamily for FamilyAdapter {
    fn len(&self) -> usize {
        self.data.components.len()
    }
    fn dim(&self) -> usize {
        self.data.components.dim()
    }
    fn accumulate_gradient(&self, i: usize, x: &Vector, scale: f64, out: &mut [f64]) {
        self.data.components.accumulate_grad(i, x, scale, out);
    }
}

impl FiniteSumProblem {
    pub fn new(
        components: Components,
        psi: Composite,
        geometry: Geometry,
        f_ref: Option<f64>,
        meta: ProblemMeta,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("a finite sum needs at least one component"));
        }
        let dim = components.dim();
        if geometry.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: geometry.dim(),
            });
        }
        Ok(FiniteSumProblem {
            data: Arc::new(ProblemData {
                components,
                geometry,
                psi,
                f_ref,
                meta,
            }),
        })
    }

    pub fn n(&self) -> usize {
        self.data.components.len()
    }

    pub fn dim(&self) -> usize {
        self.data.components.dim()
    }

    pub fn components(&self) -> &Components {
        &self.data.components
    }

    pub fn psi(&self) -> &Composite {
        &self.data.psi
    }

    pub fn geometry(&self) -> &Geometry {
        &self.data.geometry
    }

    pub fn f_ref(&self) -> Option<f64> {
        self.data.f_ref
    }

    pub fn meta(&self) -> &ProblemMeta {
        &self.data.meta
    }

    pub fn planted(&self) -> Option<&Vector> {
        self.data.meta.planted.as_ref()
    }

    /// Replaces the reference optimum (used after `estimate_fstar`).
    pub fn with_f_ref(&self, f_ref: Option<f64>) -> Self {
        let mut data = (*self.data).clone();
        data.f_ref = f_ref;
        FiniteSumProblem {
            data: Arc::new(data),
        }
    }

    pub fn component_value(&self, i: usize, x: &Vector) -> f64 {
        self.data.components.value(i, x)
    }

    /// The fixed subgradient selection ∇f_i(x).
    pub fn component_subgrad(&self, i: usize, x: &Vector) -> Vector {
        let mut out = vec![0.0; self.dim()];
        self.data.components.accumulate_grad(i, x, 1.0, &mut out);
        Vector::Dense(out)
    }

    /// f(x) = (1/n) Σ f_i(x).
    pub fn f_value(&self, x: &Vector) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.data.components.value(i, x);
        }
        acc / n as f64
    }

    /// The mean gradient ḡ(x) = (1/n) Σ ∇f_i(x).
    pub fn mean_grad(&self, x: &Vector) -> Vector {
        let n = self.n();
        let mut out = vec![0.0; self.dim()];
        for i in 0..n {
            self.data
                .components
                .accumulate_grad(i, x, 1.0 / n as f64, &mut out);
        }
        Vector::Dense(out)
    }

    fn base_oracle(&self) -> Result<FiniteSumOracle> {
        FiniteSumOracle::new(Arc::new(FamilyAdapter {
            data: self.data.clone(),
        }))
    }

    /// The mini-batch oracle of the given size.
    pub fn oracle(&self, batch: usize) -> Result<Arc<dyn crate::oracle::StochasticOracle>> {
        let base = Arc::new(self.base_oracle()?);
        if batch == 1 {
            Ok(base)
        } else {
            Ok(Arc::new(Minibatch::new(base, batch)?))
        }
    }

    /// The solver-facing view with a mini-batch oracle of size `batch`.
    pub fn composite(&self, batch: usize) -> Result<CompositeProblem> {
        let data = self.data.clone();
        Ok(CompositeProblem {
            geometry: self.data.geometry.clone(),
            psi: self.data.psi.clone(),
            oracle: self.oracle(batch)?,
            objective: Arc::new(move |x| {
                let n = data.components.len();
                let mut acc = 0.0;
                for i in 0..n {
                    acc += data.components.value(i, x);
                }
                acc / n as f64
            }),
            f_ref: self.data.f_ref,
        })
    }

    /// The deterministic (b = n) view: every draw is the exact mean gradient
    /// and costs one SO call.
    pub fn exact_composite(&self) -> Result<CompositeProblem> {
        let mut view = self.composite(1)?;
        view.oracle = Arc::new(ExactOracle::of_mean(view.oracle.clone()));
        Ok(view)
    }

    /// Self-describing text serialization (metadata, planted solution, data),
    /// so generated experiments are replayable.
    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string(&*self.data).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let data: ProblemData =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if data.components.is_empty() {
            return Err(Error::invalid("deserialized problem has no components"));
        }
        Ok(FiniteSumProblem {
            data: Arc::new(data),
        })
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates the polyhedron feasibility instance: a planted point on the
/// sphere of radius 0.95R, rows uniform on [−1, 1]^d, the last row flipped
/// so its margin at the planted point is negative, and offsets chosen so the
/// planted point is feasible with optimal value exactly zero while the
/// origin is infeasible.
pub fn gen_polyhedron(
    n: usize,
    d: usize,
    radius: f64,
    q: f64,
    seed: u64,
) -> Result<FiniteSumProblem> {
    if n == 0 || d == 0 {
        return Err(Error::invalid("polyhedron generator needs n >= 1 and d >= 1"));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("polyhedron generator needs R > 0"));
    }
    if !(1.0..=2.0).contains(&q) {
        return Err(Error::invalid("hinge power q must lie in [1, 2]"));
    }
    let mut rng = derive_rng(seed, "polyhedron-data");
    // planted solution uniform on the sphere of radius 0.95R
    let mut x_star: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
    let norm: f64 = x_star.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("degenerate planted direction"));
    }
    for v in &mut x_star {
        *v *= 0.95 * radius / norm;
    }
    let x_star = Vector::dense(x_star);

    let sample_row = |rng: &mut ChaCha8Rng| -> Vector {
        Vector::dense((0..d).map(|_| rng.random_range(-1.0..=1.0)).collect())
    };
    let mut rows: Vec<Vector> = (0..n).map(|_| sample_row(&mut rng)).collect();
    // make sure the last margin is strictly negative; retry the draw a
    // bounded number of times in the (measure-zero) degenerate case
    let mut retries = 0;
    loop {
        let margin = inner(&rows[n - 1], &x_star)?;
        if margin > 0.0 {
            rows[n - 1] = rows[n - 1].scaled(-1.0);
            break;
        }
        if margin < 0.0 {
            break;
        }
        retries += 1;
        if retries > 100 {
            return Err(Error::invalid(
                "polyhedron generator failed to draw a separating row",
            ));
        }
        rows[n - 1] = sample_row(&mut rng);
    }
    let margins: Vec<f64> = rows
        .iter()
        .map(|a| inner(a, &x_star))
        .collect::<Result<_>>()?;
    let c_min = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    if c_min >= 0.0 {
        return Err(Error::invalid("polyhedron generator produced c_min >= 0"));
    }
    let rhs: Vec<f64> = margins
        .iter()
        .map(|&c| c + rng.random_range(0.0..=(-0.1 * c_min)))
        .collect();

    FiniteSumProblem::new(
        Components::HingePower { rows, rhs, q },
        Composite::centered_ball(radius, d)?,
        Geometry::identity(d),
        Some(0.0),
        ProblemMeta {
            name: "polyhedron".into(),
            q: Some(q),
            radius,
            seed: Some(seed),
            planted: Some(x_star),
            dataset: None,
        },
    )
}

/// Ball-constrained logistic regression over a sparse dataset.
pub fn logistic_problem(data: &Dataset, radius: f64) -> Result<FiniteSumProblem> {
    if data.n() == 0 {
        return Err(Error::invalid("logistic regression needs a nonempty dataset"));
    }
    if data.labels.iter().any(|&b| b != 1.0 && b != -1.0) {
        return Err(Error::invalid("logistic labels must be -1 or +1"));
    }
    let d = data.dim();
    FiniteSumProblem::new(
        Components::Logistic {
            rows: data.rows.clone(),
            labels: data.labels.clone(),
        },
        Composite::centered_ball(radius, d)?,
        Geometry::identity(d),
        None,
        ProblemMeta {
            name: "logistic".into(),
            q: None,
            radius,
            seed: None,
            planted: None,
            dataset: data.source.clone(),
        },
    )
}

/// Ball-constrained symmetric least squares from explicit rows.
pub fn least_squares_problem(
    rows: Vec<Vector>,
    rhs: Vec<f64>,
    radius: f64,
) -> Result<FiniteSumProblem> {
    if rows.is_empty() || rows.len() != rhs.len() {
        return Err(Error::invalid("least squares needs matching nonempty rows/rhs"));
    }
    let d = rows[0].dim();
    if rows.iter().any(|r| r.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: 0,
        });
    }
    FiniteSumProblem::new(
        Components::LeastSquares { rows, rhs },
        Composite::centered_ball(radius, d)?,
        Geometry::identity(d),
        None,
        ProblemMeta {
            name: "lsq".into(),
            q: None,
            radius,
            seed: None,
            planted: None,
            dataset: None,
        },
    )
}

/// Random least squares with Gaussian rows and a planted interior point.
pub fn gen_least_squares(
    n: usize,
    d: usize,
    radius: f64,
    noise: f64,
    seed: u64,
) -> Result<FiniteSumProblem> {
    if n == 0 || d == 0 || !(radius > 0.0) || !(noise >= 0.0) {
        return Err(Error::invalid("bad least-squares generator parameters"));
    }
    let mut rng = derive_rng(seed, "least-squares-data");
    let mut planted: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
    let norm: f64 = planted.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target = 0.5 * radius;
    if norm > 0.0 {
        for v in &mut planted {
            *v *= target / norm;
        }
    }
    let planted = Vector::dense(planted);
    let rows: Vec<Vector> = (0..n)
        .map(|_| Vector::dense((0..d).map(|_| standard_normal(&mut rng)).collect()))
        .collect();
    let rhs: Vec<f64> = rows
        .iter()
        .map(|a| inner(a, &planted).unwrap() + noise * standard_normal(&mut rng))
        .collect();
    let problem = least_squares_problem(rows, rhs, radius)?;
    let mut data = (*problem.data).clone();
    data.meta.seed = Some(seed);
    data.meta.planted = Some(planted);
    Ok(FiniteSumProblem {
        data: Arc::new(data),
    })
}

/// n 1-smooth quadratics `½‖x − z_i‖²` with centers drawn in a ball of
/// radius `spread`; the exact optimum over the feasible ball is recorded as
/// the reference value.
pub fn gen_shifted_quadratics(
    n: usize,
    d: usize,
    radius: f64,
    spread: f64,
    seed: u64,
) -> Result<FiniteSumProblem> {
    if n == 0 || d == 0 || !(radius > 0.0) || !(spread >= 0.0) {
        return Err(Error::invalid("bad quadratic generator parameters"));
    }
    if spread > radius {
        return Err(Error::invalid(
            "center spread must not exceed the ball radius, so the optimum stays interior",
        ));
    }
    let mut rng = derive_rng(seed, "quadratic-data");
    let mut centers = Vec::with_capacity(n);
    for _ in 0..n {
        // uniform direction, radius with the correct density for a ball
        let mut z: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
        let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = spread * rng.random_range(0.0..=1.0_f64).powf(1.0 / d as f64);
        if norm > 0.0 {
            for v in &mut z {
                *v *= r / norm;
            }
        }
        centers.push(Vector::dense(z));
    }
    // f(x) = ½‖x − z̄‖² + const; the mean center is interior, so
    // F* = f(z̄) exactly.
    let mut mean_center = vec![0.0; d];
    for z in &centers {
        z.add_scaled_into(1.0 / n as f64, &mut mean_center);
    }
    let mean_center = Vector::dense(mean_center);
    let f_star = {
        let mut acc = 0.0;
        for z in &centers {
            for j in 0..d {
                let diff = mean_center.get(j) - z.get(j);
                acc += diff * diff;
            }
        }
        0.5 * acc / n as f64
    };
    FiniteSumProblem::new(
        Components::ShiftedQuadratic { centers },
        Composite::centered_ball(radius, d)?,
        Geometry::identity(d),
        Some(f_star),
        ProblemMeta {
            name: "shifted-quadratics".into(),
            q: None,
            radius,
            seed: Some(seed),
            planted: Some(mean_center),
            dataset: None,
        },
    )
}

/// n quadratics `(α_i/2)‖x‖²` sharing the interior minimizer 0, so the
/// oracle variance vanishes at the solution while staying positive
/// elsewhere.
pub fn gen_interpolation_quadratics(
    n: usize,
    d: usize,
    radius: f64,
    seed: u64,
) -> Result<FiniteSumProblem> {
    if n == 0 || d == 0 || !(radius > 0.0) {
        return Err(Error::invalid("bad interpolation generator parameters"));
    }
    let mut rng = derive_rng(seed, "interpolation-data");
    let curvatures: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..=1.5)).collect();
    FiniteSumProblem::new(
        Components::ScaledQuadratic { dim: d, curvatures },
        Composite::centered_ball(radius, d)?,
        Geometry::identity(d),
        Some(0.0),
        ProblemMeta {
            name: "interpolation-quadratics".into(),
            q: None,
            radius,
            seed: Some(seed),
            planted: Some(Vector::zeros(d)),
            dataset: None,
        },
    )
}

/// A sparse labeled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Vector>,
    pub labels: Vec<f64>,
    dim: usize,
    /// Where the data came from, if known.
    pub source: Option<String>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Widens the nominal dimension (some datasets fix it above the largest
    /// observed index). Shrinking below an observed index is rejected.
    pub fn with_min_dim(mut self, dim: usize) -> Result<Self> {
        if dim < self.dim {
            return Err(Error::invalid(format!(
                "dimension override {dim} is below the observed dimension {}",
                self.dim
            )));
        }
        self.dim = dim;
        self.rows = self
            .rows
            .into_iter()
            .map(|r| match r {
                Vector::Sparse {
                    indices, values, ..
                } => Vector::Sparse {
                    dim,
                    indices,
                    values,
                },
                dense => dense,
            })
            .collect();
        Ok(self)
    }

    /// Serializes back to the text format; `parse ∘ serialize` is the
    /// identity on normalized input.
    pub fn to_libsvm_string(&self) -> String {
        let mut out = String::new();
        for (row, label) in self.rows.iter().zip(self.labels.iter()) {
            out.push_str(&format!("{label}"));
            for (i, v) in row.iter_nonzero() {
                out.push_str(&format!(" {}:{}", i + 1, v));
            }
            out.push('\n');
        }
        out
    }
}

/// Parses the sparse `<label> <index>:<value> ...` text format with 1-based,
/// strictly increasing indices per line. Blank lines and lines starting with
/// '#' are skipped. The dimension is the largest index seen.
pub fn parse_libsvm(input: impl BufRead) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a first token");
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("bad label '{label_tok}'"),
        })?;
        let mut pairs: Vec<(usize, f64)> = Vec::new();
        let mut prev_index = 0usize;
        for tok in tokens {
            let (idx_str, val_str) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("expected index:value, got '{tok}'"),
            })?;
            let idx: usize = idx_str.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad feature index '{idx_str}'"),
            })?;
            let val: f64 = val_str.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("bad feature value '{val_str}'"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    message: "feature indices are 1-based".into(),
                });
            }
            if idx <= prev_index {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("feature index {idx} not strictly increasing"),
                });
            }
            if !val.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("feature value {val} is not finite"),
                });
            }
            prev_index = idx;
            max_index = max_index.max(idx);
            pairs.push((idx - 1, val));
        }
        if !label.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                message: "label is not finite".into(),
            });
        }
        rows.push(pairs);
        labels.push(label);
    }
    let dim = max_index;
    let rows = rows
        .into_iter()
        .map(|pairs| Vector::sparse(dim, &pairs))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        rows,
        labels,
        dim,
        source: None,
    })
}

pub fn parse_libsvm_str(text: &str) -> Result<Dataset> {
    parse_libsvm(text.as_bytes())
}

/// Estimates a reference optimal value by a long deterministic (b = n) run
/// of the accelerated method followed by a polish with the plain one,
/// returning the smallest objective value seen. This is a reference for
/// residual plots, not ground truth.
pub fn estimate_fstar(problem: &FiniteSumProblem, budget: f64, seed: u64) -> Result<f64> {
    if !(budget >= 10.0) {
        return Err(Error::invalid("reference estimation needs a budget of >= 10 SO calls"));
    }
    let diameter = problem
        .psi()
        .diameter()
        .ok_or_else(|| Error::invalid("reference estimation needs a bounded domain"))?;
    let view = problem.exact_composite()?;
    let x0 = Vector::zeros(problem.dim());
    let cfg = SolverConfig::new(StepsizeRule::AdaGrad, diameter, seed)
        .with_trace_every(1);
    // accelerated phase on two thirds of the budget (two draws per step)
    let fast_iters = ((budget / 3.0).floor() as u64).max(1);
    let fast = solvers::universal_fast_sgd(&view, &x0, fast_iters, &cfg)?;
    let mut best = f64::INFINITY;
    for rec in &fast.trace {
        best = best.min(rec.f_value);
    }
    // polish with the averaged method from the accelerated solution
    let polish_iters = (budget - fast.so_calls).floor().max(1.0) as u64;
    let polish = solvers::universal_sgd(&view, &fast.solution, fast.m_final, polish_iters, &cfg)?;
    for rec in &polish.trace {
        best = best.min(rec.f_value);
    }
    best = best.min((view.objective)(&polish.solution));
    best = best.min((view.objective)(&polish.last));
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sub;

    #[test]
    fn hinge_power_examples() {
        let a = Vector::dense(vec![1.0, -1.0]);
        // ⟨a, x⟩ − b = 2 with q = 1.5
        let x = Vector::dense(vec![3.0, 0.0]);
        let (v, g) = hinge_power_term(&a, 1.0, &x, 1.5).unwrap();
        assert!((v - 2.0_f64.powf(1.5)).abs() < 1e-12);
        let want = 1.5 * 2.0_f64.sqrt();
        assert!((g.get(0) - want).abs() < 1e-12);
        assert!((g.get(1) + want).abs() < 1e-12);
        // inactive side
        let x = Vector::dense(vec![0.0, 0.0]);
        let (v, g) = hinge_power_term(&a, 1.0, &x, 1.5).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.is_zero());
        // q = 2 is least squares on the active side
        let x = Vector::dense(vec![4.0, 0.0]);
        let (v, g) = hinge_power_term(&a, 1.0, &x, 2.0).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
        assert!((g.get(0) - 6.0).abs() < 1e-12);
        assert!(hinge_power_term(&a, 1.0, &x, 2.5).is_err());
        assert!(hinge_power_term(&a, 1.0, &x, 0.5).is_err());
    }

    #[test]
    fn polyhedron_generator_invariants() {
        for seed in 0..10 {
            let problem = gen_polyhedron(40, 6, 10.0, 1.5, seed).unwrap();
            let x_star = problem.planted().unwrap().clone();
            assert!(problem.f_value(&x_star) == 0.0, "planted point not optimal");
            let origin = Vector::zeros(6);
            assert!(problem.f_value(&origin) > 0.0, "origin should be infeasible");
            let norm = problem.geometry().primal_norm(&x_star).unwrap();
            assert!((norm - 9.5).abs() <= 1e-9 * 9.5);
            assert_eq!(problem.f_ref(), Some(0.0));
        }
    }

    #[test]
    fn logistic_examples() {
        let data = parse_libsvm_str("+1 1:1 2:2\n-1 2:1\n+1 1:-0.5\n").unwrap();
        let problem = logistic_problem(&data, 1.0).unwrap();
        let zero = Vector::zeros(2);
        assert!((problem.f_value(&zero) - (2.0_f64).ln()).abs() < 1e-12);
        // gradient at 0 is −(1/2n) Σ b_i a_i
        let g = problem.mean_grad(&zero).to_dense();
        let want0 = -(1.0 * 1.0 + -1.0 * 0.0 + 1.0 * -0.5) / 6.0;
        let want1 = -(1.0 * 2.0 + -1.0 * 1.0 + 1.0 * 0.0) / 6.0;
        assert!((g[0] - want0).abs() < 1e-12);
        assert!((g[1] - want1).abs() < 1e-12);
        // a large negative margin evaluates without overflow
        let row = Vector::dense(vec![1.0]);
        let comps = Components::Logistic {
            rows: vec![row],
            labels: vec![1.0],
        };
        let v = comps.value(0, &Vector::dense(vec![-50.0]));
        assert!((v - 50.0).abs() < 1e-12);
        // bad labels are rejected
        let bad = Dataset {
            rows: vec![Vector::sparse(1, &[(0, 1.0)]).unwrap()],
            labels: vec![2.0],
            dim: 1,
            source: None,
        };
        assert!(logistic_problem(&bad, 1.0).is_err());
    }

    #[test]
    fn libsvm_parse_examples() {
        let data = parse_libsvm_str("+1 1:0.5 3:2\n-1 2:1\n").unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.dim(), 3);
        assert_eq!(data.labels, vec![1.0, -1.0]);
        assert_eq!(data.rows[0].get(0), 0.5);
        assert_eq!(data.rows[0].get(2), 2.0);
        assert_eq!(data.rows[1].get(1), 1.0);
        // empty input parses to an empty dataset, rejected by constructors
        let empty = parse_libsvm_str("").unwrap();
        assert_eq!(empty.n(), 0);
        assert!(logistic_problem(&empty, 1.0).is_err());
        // duplicate / nonincreasing / zero indices fail with the line number
        for bad in ["1 2:1 2:3", "1 3:1 2:3", "1 0:1"] {
            match parse_libsvm_str(bad) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
                other => panic!("expected parse error, got {other:?}"),
            }
        }
        // comments and blank lines are skipped
        let data = parse_libsvm_str("# header\n\n+1 1:1\n").unwrap();
        assert_eq!(data.n(), 1);
        // malformed token
        assert!(parse_libsvm_str("1 1-0.5").is_err());
    }

    #[test]
    fn libsvm_round_trip_is_idempotent() {
        let text = "1 1:0.5 3:2\n-1 2:1\n1 4:-2.25\n";
        let once = parse_libsvm_str(text).unwrap().to_libsvm_string();
        let twice = parse_libsvm_str(&once).unwrap().to_libsvm_string();
        assert_eq!(once, twice);
    }

    #[test]
    fn dataset_dim_override() {
        let data = parse_libsvm_str("+1 1:1\n").unwrap();
        assert_eq!(data.dim(), 1);
        let wide = data.clone().with_min_dim(7).unwrap();
        assert_eq!(wide.dim(), 7);
        assert_eq!(wide.rows[0].dim(), 7);
        assert!(parse_libsvm_str("+1 1:1 5:2\n")
            .unwrap()
            .with_min_dim(3)
            .is_err());
    }

    fn subgradient_inequality_holds(problem: &FiniteSumProblem, seed: u64) {
        let mut rng = derive_rng(seed, "convexity-probes");
        let d = problem.dim();
        for _ in 0..40 {
            let x = Vector::dense((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
            let y = Vector::dense((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
            let fx = problem.f_value(&x);
            let fy = problem.f_value(&y);
            let g = problem.mean_grad(&x);
            let linear = inner(&g, &sub(&y, &x).unwrap()).unwrap();
            assert!(
                fy >= fx + linear - 1e-9,
                "convexity certificate failed: {fy} < {}",
                fx + linear
            );
        }
    }

    #[test]
    fn convexity_certificates() {
        subgradient_inequality_holds(&gen_polyhedron(20, 4, 5.0, 1.0, 3).unwrap(), 1);
        subgradient_inequality_holds(&gen_polyhedron(20, 4, 5.0, 1.5, 3).unwrap(), 2);
        subgradient_inequality_holds(&gen_polyhedron(20, 4, 5.0, 2.0, 3).unwrap(), 3);
        subgradient_inequality_holds(&gen_least_squares(15, 4, 3.0, 0.1, 5).unwrap(), 4);
        subgradient_inequality_holds(&gen_shifted_quadratics(10, 4, 2.0, 1.0, 7).unwrap(), 5);
        subgradient_inequality_holds(&gen_interpolation_quadratics(10, 4, 2.0, 9).unwrap(), 6);
        let data = parse_libsvm_str("+1 1:1 2:-1\n-1 2:2\n+1 1:0.5 3:1\n").unwrap();
        subgradient_inequality_holds(&logistic_problem(&data, 1.0).unwrap(), 7);
    }

    #[test]
    fn midpoint_convexity_of_components() {
        let problem = gen_polyhedron(12, 3, 4.0, 1.3, 11).unwrap();
        let mut rng = derive_rng(13, "midpoint");
        for _ in 0..60 {
            let i = rng.random_range(0..problem.n());
            let x = Vector::dense((0..3).map(|_| rng.random_range(-2.0..2.0)).collect());
            let y = Vector::dense((0..3).map(|_| rng.random_range(-2.0..2.0)).collect());
            let mid = crate::numerics::combine(0.5, &x, 0.5, &y).unwrap();
            let lhs = problem.component_value(i, &mid);
            let rhs = 0.5 * problem.component_value(i, &x) + 0.5 * problem.component_value(i, &y);
            assert!(lhs <= rhs + 1e-9);
        }
    }

    fn finite_difference_check(problem: &FiniteSumProblem, x: &Vector, tol: f64) {
        let d = problem.dim();
        let g = problem.mean_grad(x).to_dense();
        let h = 1e-6;
        for j in 0..d {
            let mut xp = x.to_dense();
            let mut xm = x.to_dense();
            xp[j] += h;
            xm[j] -= h;
            let fd = (problem.f_value(&Vector::dense(xp)) - problem.f_value(&Vector::dense(xm)))
                / (2.0 * h);
            assert!(
                (fd - g[j]).abs() <= tol * g[j].abs().max(1.0),
                "coordinate {j}: finite diff {fd} vs gradient {}",
                g[j]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = derive_rng(17, "fd-points");
        let q2 = gen_polyhedron(10, 4, 5.0, 2.0, 19).unwrap();
        for _ in 0..5 {
            let x = Vector::dense((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
            finite_difference_check(&q2, &x, 1e-5);
        }
        // q ∈ (1, 2): check at points bounded away from the kinks
        let q15 = gen_polyhedron(8, 3, 5.0, 1.5, 23).unwrap();
        'outer: for _ in 0..20 {
            let x = Vector::dense((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            for i in 0..q15.n() {
                if let Components::HingePower { rows, rhs, .. } = &q15.data.components {
                    let t = inner(&rows[i], &x).unwrap() - rhs[i];
                    if t.abs() <= 1e-3 {
                        continue 'outer;
                    }
                }
            }
            finite_difference_check(&q15, &x, 1e-5);
        }
        let data = parse_libsvm_str("+1 1:1 2:-1\n-1 2:2\n").unwrap();
        let logistic = logistic_problem(&data, 1.0).unwrap();
        finite_difference_check(&logistic, &Vector::dense(vec![0.3, -0.2]), 1e-6);
    }

    #[test]
    fn serialization_round_trip() {
        let problem = gen_polyhedron(15, 5, 8.0, 1.6, 29).unwrap();
        let json = problem.to_json_string().unwrap();
        let back = FiniteSumProblem::from_json_str(&json).unwrap();
        assert_eq!(back.n(), problem.n());
        assert_eq!(back.dim(), problem.dim());
        assert_eq!(back.f_ref(), problem.f_ref());
        let x = Vector::dense(vec![0.1, -0.4, 0.2, 0.0, 0.7]);
        assert_eq!(back.f_value(&x), problem.f_value(&x));
        assert_eq!(
            back.mean_grad(&x).to_dense(),
            problem.mean_grad(&x).to_dense()
        );
    }

    #[test]
    fn estimate_fstar_on_polyhedron_reaches_zero() {
        let problem = gen_polyhedron(30, 5, 10.0, 2.0, 31).unwrap();
        let est = estimate_fstar(&problem, 2000.0, 1).unwrap();
        assert!(est >= 0.0 && est <= 1e-8, "estimate {est}");
        assert!(estimate_fstar(&problem, 5.0, 1).is_err());
    }

    #[test]
    fn estimate_fstar_matches_normal_equations() {
        // small strongly convex least squares with an interior optimum
        let problem = gen_least_squares(40, 3, 50.0, 0.05, 37).unwrap();
        let est = estimate_fstar(&problem, 3000.0, 1).unwrap();
        // solve the normal equations by Gaussian elimination (test oracle)
        let d = problem.dim();
        let (rows, rhs) = match &problem.data.components {
            Components::LeastSquares { rows, rhs } => (rows, rhs),
            _ => unreachable!(),
        };
        let mut ata = vec![vec![0.0; d]; d];
        let mut atb = vec![0.0; d];
        for (a, &b) in rows.iter().zip(rhs.iter()) {
            for i in 0..d {
                for j in 0..d {
                    ata[i][j] += a.get(i) * a.get(j);
                }
                atb[i] += a.get(i) * b;
            }
        }
        for i in 0..d {
            let pivot = ata[i][i];
            for j in i..d {
                ata[i][j] /= pivot;
            }
            atb[i] /= pivot;
            for k in 0..d {
                if k != i {
                    let factor = ata[k][i];
                    for j in i..d {
                        ata[k][j] -= factor * ata[i][j];
                    }
                    atb[k] -= factor * atb[i];
                }
            }
        }
        let x_opt = Vector::dense(atb);
        assert!(problem.geometry().primal_norm(&x_opt).unwrap() < 50.0);
        let f_opt = problem.f_value(&x_opt);
        assert!(
            (est - f_opt).abs() <= 1e-6 * f_opt.max(1e-12),
            "estimate {est} vs normal equations {f_opt}"
        );
        // a different seed moves the estimate negligibly on smooth problems
        let est2 = estimate_fstar(&problem, 3000.0, 2).unwrap();
        assert!((est - est2).abs() <= 1e-6 * est.abs().max(1e-12));
    }

    #[test]
    fn composite_view_matches_direct_evaluation() {
        let problem = gen_polyhedron(25, 4, 6.0, 1.4, 41).unwrap();
        let view = problem.composite(4).unwrap();
        let x = Vector::dense(vec![0.2, -0.1, 0.3, 0.0]);
        assert_eq!((view.objective)(&x), problem.f_value(&x));
        assert_eq!(
            view.oracle.mean(&x).to_dense(),
            problem.mean_grad(&x).to_dense()
        );
        assert_eq!(view.oracle.mean_so_cost(), 25.0 / 4.0);
        let exact = problem.exact_composite().unwrap();
        assert_eq!(exact.oracle.mean_so_cost(), 1.0);
    }
}
