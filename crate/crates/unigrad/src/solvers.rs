//! The four universal methods — plain and accelerated SGD and their
//! epoch-based variance-reduced versions — plus the shared triangle epoch
//! subroutine, with per-iteration tracing and stochastic-oracle-call
//! accounting.
//!
//! Accounting convention: one oracle draw costs 1 SO call and one mean
//! (full-gradient) evaluation costs `oracle.mean_so_cost()` (n/b for a
//! mini-batch of size b over n components).

use crate::error::{Error, Result};
use crate::numerics::{combine, Geometry, Vector};
use crate::oracle::{derive_rng, StochasticOracle, SvrgCenter, SvrgOracle};
use crate::prox::{prox, Composite, DOMAIN_TOL};
use crate::stepsize::{scaled_update, RuleInput, StepsizeRule};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

/// A runnable composite problem: stochastic access to the smooth part f,
/// a simple composite part ψ, and an optional reference optimum for residual
/// reporting.
#[derive(Clone)]
pub struct CompositeProblem {
    pub geometry: Geometry,
    pub psi: Composite,
    pub oracle: Arc<dyn StochasticOracle>,
    /// Value of the smooth part f at a point.
    pub objective: Arc<dyn Fn(&Vector) -> f64 + Send + Sync>,
    /// Known or estimated optimal value F*, if available.
    pub f_ref: Option<f64>,
}

impl CompositeProblem {
    fn check_start(&self, x0: &Vector) -> Result<()> {
        if x0.dim() != self.geometry.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.geometry.dim(),
                got: x0.dim(),
            });
        }
        if !self.psi.contains(&self.geometry, x0, DOMAIN_TOL)? {
            return Err(Error::OutOfDomain);
        }
        Ok(())
    }
}

/// How the accelerated variance-reduced method picks its first center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FastSvrgInit {
    /// A full gradient step from x₀ (the theory-recommended choice).
    FullGradStep,
    /// Simply x̃₀ = x₀.
    CopyX0,
}

impl std::str::FromStr for FastSvrgInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-grad" => Ok(FastSvrgInit::FullGradStep),
            "copy-x0" => Ok(FastSvrgInit::CopyX0),
            other => Err(Error::Config(format!(
                "unknown init mode '{other}' (expected full-grad|copy-x0)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rule: StepsizeRule,
    /// Diameter estimate D > 0, the methods' only essential parameter.
    pub diameter: f64,
    pub seed: u64,
    /// Stop at the first iteration boundary where cumulative SO calls reach
    /// this budget; `None` runs the full requested schedule.
    pub budget: Option<f64>,
    /// Record every k-th iteration (the final state is always recorded).
    pub trace_every: u64,
    pub fast_svrg_init: FastSvrgInit,
}

impl SolverConfig {
    pub fn new(rule: StepsizeRule, diameter: f64, seed: u64) -> Self {
        SolverConfig {
            rule,
            diameter,
            seed,
            budget: None,
            trace_every: 1,
            fast_svrg_init: FastSvrgInit::CopyX0,
        }
    }

    pub fn with_budget(mut self, budget: f64) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn with_trace_every(mut self, every: u64) -> Self {
        self.trace_every = every;
        self
    }

    pub fn with_init(mut self, init: FastSvrgInit) -> Self {
        self.fast_svrg_init = init;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.diameter > 0.0) || !self.diameter.is_finite() {
            return Err(Error::invalid("diameter must be positive and finite"));
        }
        if self.trace_every == 0 {
            return Err(Error::invalid("trace cadence must be at least 1"));
        }
        if let Some(b) = self.budget {
            if !(b >= 1.0) {
                return Err(Error::invalid("budget must be at least 1 SO call"));
            }
        }
        Ok(())
    }
}

/// One trace row. `f_value` and `residual` refer to the method's current
/// candidate solution (the running average for the plain method, the last
/// iterate for the accelerated one, the upcoming center for the epoch-based
/// ones).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub so_calls: f64,
    pub iter: u64,
    pub f_value: f64,
    /// `f + ψ − F_ref` when a reference value is known, raw objective
    /// otherwise.
    pub residual: f64,
    pub m: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    /// The method's canonical output point.
    pub solution: Vector,
    /// The last primal iterate.
    pub last: Vector,
    pub m_final: f64,
    pub so_calls: f64,
    pub trace: Vec<TraceRecord>,
    /// True if the SO budget ran out before the requested schedule finished.
    pub truncated: bool,
}

struct RunState<'a> {
    problem: &'a CompositeProblem,
    cfg: &'a SolverConfig,
    rng: ChaCha8Rng,
    so_calls: f64,
    iter: u64,
    trace: Vec<TraceRecord>,
    start: Instant,
    truncated: bool,
}

impl<'a> RunState<'a> {
    fn new(problem: &'a CompositeProblem, cfg: &'a SolverConfig) -> Self {
        RunState {
            problem,
            cfg,
            rng: derive_rng(cfg.seed, "oracle-draws"),
            so_calls: 0.0,
            iter: 0,
            trace: Vec::new(),
            start: Instant::now(),
            truncated: false,
        }
    }

    fn charge(&mut self, calls: f64) {
        self.so_calls += calls;
    }

    fn out_of_budget(&self) -> bool {
        self.cfg.budget.is_some_and(|b| self.so_calls >= b)
    }

    fn record(&mut self, candidate: &Vector, m: f64, force: bool) -> Result<()> {
        if !force && self.iter % self.cfg.trace_every != 0 {
            return Ok(());
        }
        if self.trace.last().is_some_and(|r| r.iter == self.iter) {
            return Ok(());
        }
        let f_value = (self.problem.objective)(candidate);
        let psi_value = self.problem.psi.value(&self.problem.geometry, candidate)?;
        let residual = match self.problem.f_ref {
            Some(f_ref) => f_value + psi_value - f_ref,
            None => f_value,
        };
        self.trace.push(TraceRecord {
            so_calls: self.so_calls,
            iter: self.iter,
            f_value,
            residual,
            m,
            wall_seconds: self.start.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    fn finish(self, solution: Vector, last: Vector, m_final: f64) -> SolverOutput {
        SolverOutput {
            solution,
            last,
            m_final,
            so_calls: self.so_calls,
            trace: self.trace,
            truncated: self.truncated,
        }
    }
}

/// One run of the plain method against the given oracle, starting from the
/// warm coefficient `m0`. Returns (running average, last iterate, final M).
fn sgd_core(
    state: &mut RunState,
    oracle: &dyn StochasticOracle,
    x0: &Vector,
    m0: f64,
    iterations: u64,
) -> Result<(Option<Vector>, Vector, f64)> {
    let problem = state.problem;
    let omega = state.cfg.diameter * state.cfg.diameter;
    let mut x = x0.clone();
    let mut g = oracle.sample(&x, &mut state.rng);
    state.charge(1.0);
    let mut m = m0;
    let mut avg: Option<Vector> = None;
    for k in 0..iterations {
        if state.out_of_budget() {
            state.truncated = true;
            break;
        }
        let x_next = prox(&problem.psi, &problem.geometry, &x, &g, m)?;
        let g_next = oracle.sample(&x_next, &mut state.rng);
        state.charge(1.0);
        m = state.cfg.rule.update(&RuleInput {
            m,
            omega,
            x: &x,
            x_plus: &x_next,
            g_x: &g,
            g_x_plus: &g_next,
            geometry: &problem.geometry,
        })?;
        match &mut avg {
            None => avg = Some(x_next.clone()),
            Some(a) => a.blend_toward(&x_next, 1.0 / (k + 1) as f64),
        }
        x = x_next;
        g = g_next;
        state.iter += 1;
        let candidate = avg.as_ref().expect("average exists after an iteration");
        state.record(candidate, m, false)?;
    }
    Ok((avg, x, m))
}

/// The plain universal method: proximal stochastic gradient steps with an
/// adaptive coefficient, returning the running average of the iterates.
pub fn universal_sgd(
    problem: &CompositeProblem,
    x0: &Vector,
    m0: f64,
    iterations: u64,
    cfg: &SolverConfig,
) -> Result<SolverOutput> {
    cfg.validate()?;
    problem.check_start(x0)?;
    if iterations < 1 {
        return Err(Error::invalid("iteration count must be at least 1"));
    }
    if !(m0 >= 0.0) {
        return Err(Error::invalid("initial coefficient must be >= 0"));
    }
    let mut state = RunState::new(problem, cfg);
    state.record(x0, m0, true)?;
    let (avg, last, m) = sgd_core(&mut state, problem.oracle.as_ref(), x0, m0, iterations)?;
    let solution = avg.unwrap_or_else(|| last.clone());
    state.record(&solution, m, true)?;
    Ok(state.finish(solution, last, m))
}

/// The accelerated universal method (similar triangles). The solution
/// iterate is x_k itself; no averaging.
pub fn universal_fast_sgd(
    problem: &CompositeProblem,
    x0: &Vector,
    iterations: u64,
    cfg: &SolverConfig,
) -> Result<SolverOutput> {
    cfg.validate()?;
    problem.check_start(x0)?;
    if iterations < 1 {
        return Err(Error::invalid("iteration count must be at least 1"));
    }
    let mut state = RunState::new(problem, cfg);
    let oracle = problem.oracle.clone();
    let geometry = &problem.geometry;
    let mut x = x0.clone();
    let mut v = x0.clone();
    let mut m = 0.0;
    let mut a_total = 0.0;
    state.record(&x, m, true)?;
    for k in 0..iterations {
        if state.out_of_budget() {
            state.truncated = true;
            break;
        }
        let a_next = 0.5 * (k + 1) as f64;
        let a_total_next = a_total + a_next;
        #[cfg(debug_assertions)]
        {
            let c = crate::theory::fast_sgd_coeffs(k + 1).expect("schedule index");
            debug_assert_eq!(a_next, c.a);
            debug_assert_eq!(a_total_next, c.a_total);
        }
        let alpha = a_total / a_total_next;
        let beta = a_next / a_total_next;
        let y = combine(alpha, &x, beta, &v)?;
        let g_y = oracle.sample(&y, &mut state.rng);
        state.charge(1.0);
        let v_next = prox(&problem.psi, geometry, &v, &g_y, m / a_next)?;
        let x_next = combine(alpha, &x, beta, &v_next)?;
        let g_x = oracle.sample(&x_next, &mut state.rng);
        state.charge(1.0);
        m = scaled_update(
            cfg.rule, m, a_next, a_total_next, cfg.diameter, &y, &x_next, &g_y, &g_x, geometry,
        )?;
        x = x_next;
        v = v_next;
        a_total = a_total_next;
        state.iter += 1;
        state.record(&x, m, false)?;
    }
    state.record(&x, m, true)?;
    Ok(state.finish(x.clone(), x, m))
}

/// The epoch-based variance-reduced method: epoch t runs the plain method
/// for 2^{t+1} iterations against the oracle centered at the current
/// reference point, warm-starting the coefficient. Each epoch charges one
/// mean-gradient evaluation for the anchor.
pub fn universal_svrg(
    problem: &CompositeProblem,
    x0: &Vector,
    epochs: u32,
    cfg: &SolverConfig,
) -> Result<SolverOutput> {
    cfg.validate()?;
    problem.check_start(x0)?;
    if epochs < 1 {
        return Err(Error::invalid("epoch count must be at least 1"));
    }
    let mut state = RunState::new(problem, cfg);
    let mut center_point = x0.clone();
    let mut x = x0.clone();
    let mut m = 0.0;
    state.record(&center_point, m, true)?;
    for t in 0..epochs {
        if state.out_of_budget() {
            state.truncated = true;
            break;
        }
        let center = SvrgCenter::compute(problem.oracle.as_ref(), center_point.clone());
        state.charge(problem.oracle.mean_so_cost());
        let reduced = SvrgOracle::new(problem.oracle.clone(), center);
        let inner = 1u64 << (t + 1);
        let (avg, last, m_next) = sgd_core(&mut state, &reduced, &x, m, inner)?;
        if let Some(avg) = avg {
            center_point = avg;
        }
        x = last;
        m = m_next;
    }
    state.record(&center_point, m, true)?;
    Ok(state.finish(center_point, x, m))
}

/// The (a_{t+1}, A_{t+1}) coefficient schedule of the accelerated
/// variance-reduced method: A₀ = 1/N, a_{t+1} = √A_t, A_{t+1} = A_t + a_{t+1}.
pub fn fast_svrg_schedule(epoch_len: u64, epochs: u32) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(epochs as usize);
    let mut a_total = 1.0 / epoch_len as f64;
    for _ in 0..epochs {
        let a = a_total.sqrt();
        a_total += a;
        out.push((a, a_total));
    }
    out
}

/// Shared epoch core: N similar-triangle steps whose triangles all share the
/// vertex x̃. Returns (running average, last v, final M).
#[allow(clippy::too_many_arguments)]
fn triangle_epoch_core(
    state: &mut RunState,
    oracle: &dyn StochasticOracle,
    x_tilde: &Vector,
    v0: &Vector,
    m0: f64,
    a_prev_total: f64,
    a: f64,
    inner: u64,
) -> Result<(Option<Vector>, Vector, f64)> {
    let problem = state.problem;
    let a_plus = a_prev_total + a;
    let alpha = a_prev_total / a_plus;
    let beta = a / a_plus;
    let mut v = v0.clone();
    let mut x = combine(alpha, x_tilde, beta, &v)?;
    let mut g = oracle.sample(&x, &mut state.rng);
    state.charge(1.0);
    let mut m = m0;
    let mut avg: Option<Vector> = None;
    for k in 0..inner {
        if state.out_of_budget() {
            state.truncated = true;
            break;
        }
        let v_next = prox(&problem.psi, &problem.geometry, &v, &g, m / a)?;
        let x_next = combine(alpha, x_tilde, beta, &v_next)?;
        let g_next = oracle.sample(&x_next, &mut state.rng);
        state.charge(1.0);
        m = scaled_update(
            state.cfg.rule,
            m,
            a,
            a_plus,
            state.cfg.diameter,
            &x,
            &x_next,
            &g,
            &g_next,
            &problem.geometry,
        )?;
        match &mut avg {
            None => avg = Some(x_next.clone()),
            Some(acc) => acc.blend_toward(&x_next, 1.0 / (k + 1) as f64),
        }
        v = v_next;
        x = x_next;
        g = g_next;
        state.iter += 1;
        let candidate = avg.as_ref().expect("average exists after an iteration");
        state.record(candidate, m, false)?;
    }
    Ok((avg, v, m))
}

/// Result of one standalone triangle epoch.
#[derive(Debug, Clone)]
pub struct EpochResult {
    /// The averaged iterate, i.e. the next center.
    pub center_next: Vector,
    pub v_last: Vector,
    pub m_final: f64,
    pub so_calls: f64,
    pub trace: Vec<TraceRecord>,
}

/// One epoch of the accelerated variance-reduced method, exposed on its own:
/// anchors the oracle at x̃, then runs `inner` triangle steps with fixed
/// coefficients (a, A₊ = A + a).
#[allow(clippy::too_many_arguments)]
pub fn triangle_svrg_epoch(
    problem: &CompositeProblem,
    x_tilde: &Vector,
    v0: &Vector,
    m0: f64,
    a_prev_total: f64,
    a: f64,
    inner: u64,
    cfg: &SolverConfig,
) -> Result<EpochResult> {
    cfg.validate()?;
    problem.check_start(x_tilde)?;
    problem.check_start(v0)?;
    if !(a > 0.0) || !(a_prev_total >= 0.0) {
        return Err(Error::invalid("epoch coefficients must satisfy a > 0, A >= 0"));
    }
    if inner < 1 {
        return Err(Error::invalid("epoch length must be at least 1"));
    }
    let mut state = RunState::new(problem, cfg);
    let center = SvrgCenter::compute(problem.oracle.as_ref(), x_tilde.clone());
    state.charge(problem.oracle.mean_so_cost());
    let reduced = SvrgOracle::new(problem.oracle.clone(), center);
    let (avg, v_last, m_final) =
        triangle_epoch_core(&mut state, &reduced, x_tilde, v0, m0, a_prev_total, a, inner)?;
    Ok(EpochResult {
        center_next: avg.unwrap_or_else(|| x_tilde.clone()),
        v_last,
        m_final,
        so_calls: state.so_calls,
        trace: state.trace,
    })
}

/// The accelerated variance-reduced method: triangle epochs of fixed length
/// with the growing coefficient schedule, the center refreshed each epoch.
pub fn universal_fast_svrg(
    problem: &CompositeProblem,
    x0: &Vector,
    epoch_len: u64,
    epochs: u32,
    cfg: &SolverConfig,
) -> Result<SolverOutput> {
    cfg.validate()?;
    problem.check_start(x0)?;
    if epoch_len < 1 {
        return Err(Error::invalid("epoch length must be at least 1"));
    }
    if epochs < 1 {
        return Err(Error::invalid("epoch count must be at least 1"));
    }
    let mut state = RunState::new(problem, cfg);
    let mut center_point = match cfg.fast_svrg_init {
        FastSvrgInit::FullGradStep => {
            let g_bar = problem.oracle.mean(x0);
            state.charge(problem.oracle.mean_so_cost());
            prox(&problem.psi, &problem.geometry, x0, &g_bar, 0.0)?
        }
        FastSvrgInit::CopyX0 => x0.clone(),
    };
    let mut v = x0.clone();
    let mut m = 0.0;
    let mut a_total = 1.0 / epoch_len as f64;
    state.record(&center_point, m, true)?;
    for _ in 0..epochs {
        if state.out_of_budget() {
            state.truncated = true;
            break;
        }
        let a = a_total.sqrt();
        let center = SvrgCenter::compute(problem.oracle.as_ref(), center_point.clone());
        state.charge(problem.oracle.mean_so_cost());
        let reduced = SvrgOracle::new(problem.oracle.clone(), center);
        let (avg, v_last, m_next) = triangle_epoch_core(
            &mut state,
            &reduced,
            &center_point,
            &v,
            m,
            a_total,
            a,
            epoch_len,
        )?;
        if let Some(avg) = avg {
            center_point = avg;
        }
        v = v_last;
        m = m_next;
        a_total += a;
    }
    state.record(&center_point, m, true)?;
    Ok(state.finish(center_point, v, m))
}

/// The full-gradient initialization step `Prox_ψ(x₀, ḡ(x₀), 0)`, well-posed
/// for ball-type composites.
pub fn full_gradient_init(problem: &CompositeProblem, x0: &Vector) -> Result<Vector> {
    problem.check_start(x0)?;
    let g_bar = problem.oracle.mean(x0);
    prox(&problem.psi, &problem.geometry, x0, &g_bar, 0.0)
}
