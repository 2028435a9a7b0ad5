//! Globalized BFGS inside a primal log-barrier homotopy.

use std::collections::VecDeque;
use std::fmt;

use crate::dynamics::Trajectory;
use crate::objective::Objective;
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepType {
    Bfgs,
    Grad,
}

impl fmt::Display for StepType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepType::Bfgs => "BFGS",
            StepType::Grad => "Grad",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianStorage {
    Dense,
    /// Two-loop recursion over the most recent pairs.
    Limited(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialHessian {
    /// `I/α`.
    InverseAlpha,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig<T> {
    pub max_rounds: usize,
    pub barrier_reduction: T,
    /// Initial barrier weight; `None` means `1e-2·J(u_init)`.
    pub initial_barrier: Option<T>,
    /// First-round gradient tolerance relative to the initial gradient norm.
    pub inner_tolerance: T,
    /// Lower bound of the tolerance schedule, relative to the initial gradient norm.
    pub gradient_floor: T,
    pub armijo_c1: T,
    pub backtrack: T,
    pub max_backtracks: usize,
    pub curvature_eps: T,
    /// Stop once `|r(T) − r_d|/|r_d|` drops below this.
    pub position_tolerance: T,
    pub max_inner_iterations: usize,
    pub max_iterations: usize,
    pub storage: HessianStorage,
    pub initial_hessian: InitialHessian,
    /// Replace the initial matrix by `(sᵀy/yᵀy)·I` before the first update.
    pub scale_initial: bool,
    /// Discard curvature pairs when the barrier weight changes.
    pub restart_each_round: bool,
}

impl<T: Real> Default for OptimizerConfig<T> {
    fn default() -> Self {
        Self {
            max_rounds: 10,
            barrier_reduction: T::lit(10.0),
            initial_barrier: None,
            inner_tolerance: T::lit(1e-2),
            gradient_floor: T::lit(1e-8),
            armijo_c1: T::lit(1e-4),
            backtrack: T::lit(0.5),
            max_backtracks: 50,
            curvature_eps: T::lit(1e-8),
            position_tolerance: T::lit(1e-3),
            max_inner_iterations: 100,
            max_iterations: 500,
            storage: HessianStorage::Dense,
            initial_hessian: InitialHessian::InverseAlpha,
            scale_initial: false,
            restart_each_round: true,
        }
    }
}

impl<T: Real> OptimizerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        let pos = |v: T| v.is_finite() && v > T::zero();
        if !(self.barrier_reduction.is_finite() && self.barrier_reduction > T::one()) {
            return bad("barrier reduction factor must exceed 1");
        }
        if !(self.armijo_c1 > T::zero() && self.armijo_c1 < T::one()) {
            return bad("Armijo constant must lie in (0, 1)");
        }
        if !(self.backtrack > T::zero() && self.backtrack < T::one()) {
            return bad("backtrack factor must lie in (0, 1)");
        }
        if !(pos(self.inner_tolerance) && pos(self.gradient_floor) && pos(self.curvature_eps)) {
            return bad("tolerances must be positive");
        }
        if !pos(self.position_tolerance) {
            return bad("position tolerance must be positive");
        }
        if let Some(mu) = self.initial_barrier {
            if !pos(mu) {
                return bad("initial barrier weight must be positive");
            }
        }
        if self.max_rounds == 0 || self.max_inner_iterations == 0 || self.max_backtracks == 0 {
            return bad("iteration budgets must be positive");
        }
        if self.storage == HessianStorage::Limited(0) {
            return bad("limited-memory BFGS needs at least one pair");
        }
        Ok(())
    }
}

/// One evaluation of a barrier-augmented problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation<T> {
    /// `+∞` when infeasible.
    pub merit: T,
    /// Objective without the barrier term.
    pub value: T,
    pub gradient: Option<Vec<T>>,
    pub feasible: bool,
    pub min_margin: T,
    /// Quantity compared against [`OptimizerConfig::position_tolerance`].
    pub relative_error: T,
}

pub trait BarrierProblem<T> {
    fn dimension(&self) -> usize;
    /// Merit with barrier weight `mu`; the gradient is only computed on request.
    fn evaluate(&mut self, u: &[T], mu: T, gradient: bool) -> Result<Evaluation<T>>;
    /// Tikhonov weight, used by [`InitialHessian::InverseAlpha`].
    fn alpha(&self) -> T;
}

/// Inverse Hessian approximation.
#[derive(Clone, Debug, PartialEq)]
pub enum InverseHessian<T> {
    Dense { n: usize, h: Vec<T>, pristine: bool },
    Limited { diag: T, pairs: VecDeque<(Vec<T>, Vec<T>, T)>, capacity: usize },
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

impl<T: Real> InverseHessian<T> {
    pub fn new(n: usize, diag: T, storage: HessianStorage) -> Self {
        match storage {
            HessianStorage::Dense => {
                let mut h = vec![T::zero(); n * n];
                for i in 0..n {
                    h[i * n + i] = diag;
                }
                Self::Dense { n, h, pristine: true }
            }
            HessianStorage::Limited(m) => Self::Limited { diag, pairs: VecDeque::new(), capacity: m },
        }
    }

    /// `H·v`.
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        match self {
            Self::Dense { n, h, .. } => (0..*n).map(|i| dot(&h[i * n..(i + 1) * n], v)).collect(),
            Self::Limited { diag, pairs, .. } => {
                let mut q = v.to_vec();
                let mut alphas = Vec::with_capacity(pairs.len());
                for (s, y, rho) in pairs.iter().rev() {
                    let a = *rho * dot(s, &q);
                    for (qi, &yi) in q.iter_mut().zip(y) {
                        *qi -= a * yi;
                    }
                    alphas.push(a);
                }
                for qi in q.iter_mut() {
                    *qi *= *diag;
                }
                for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
                    let b = *rho * dot(y, &q);
                    for (qi, &si) in q.iter_mut().zip(s) {
                        *qi += (a - b) * si;
                    }
                }
                q
            }
        }
    }

    /// Dense matrix, row-major (materialized for limited memory).
    pub fn to_dense(&self) -> Vec<T> {
        match self {
            Self::Dense { h, .. } => h.clone(),
            Self::Limited { .. } => {
                let n = self.dimension();
                let mut m = vec![T::zero(); n * n];
                for j in 0..n {
                    let mut e = vec![T::zero(); n];
                    e[j] = T::one();
                    for (i, v) in self.apply(&e).into_iter().enumerate() {
                        m[i * n + j] = v;
                    }
                }
                m
            }
        }
    }

    /// True until the first accepted update.
    pub fn is_initial(&self) -> bool {
        match self {
            Self::Dense { pristine, .. } => *pristine,
            Self::Limited { pairs, .. } => pairs.is_empty(),
        }
    }

    fn dimension(&self) -> usize {
        match self {
            Self::Dense { n, .. } => *n,
            Self::Limited { pairs, .. } => pairs.front().map(|p| p.0.len()).unwrap_or(0),
        }
    }

    pub fn reset(&mut self, diag: T) {
        match self {
            Self::Dense { n, h, pristine } => {
                h.iter_mut().for_each(|v| *v = T::zero());
                for i in 0..*n {
                    h[i * *n + i] = diag;
                }
                *pristine = true;
            }
            Self::Limited { diag: d, pairs, .. } => {
                *d = diag;
                pairs.clear();
            }
        }
    }

    /// Rescales an untouched initial matrix to `(sᵀy/yᵀy)·I`.
    fn scale_if_pristine(&mut self, s: &[T], y: &[T]) {
        let sy = dot(s, y);
        let yy = dot(y, y);
        if !(sy > T::zero() && yy > T::zero()) {
            return;
        }
        let gamma = sy / yy;
        match self {
            Self::Dense { pristine: true, .. } => self.reset(gamma),
            Self::Limited { diag, pairs, .. } if pairs.is_empty() => *diag = gamma,
            _ => {}
        }
    }
}

/// Standard inverse BFGS update; skipped (returns `false`) when `sᵀy ≤ 1e-12·|s||y|`.
pub fn bfgs_update<T: Real>(h: &mut InverseHessian<T>, s: &[T], y: &[T]) -> bool {
    let sy = dot(s, y);
    if !(sy > T::lit(1e-12) * norm(s) * norm(y)) {
        return false;
    }
    let rho = T::one() / sy;
    match h {
        InverseHessian::Dense { n, h: m, pristine } => {
            let n = *n;
            let hy: Vec<T> = (0..n).map(|i| dot(&m[i * n..(i + 1) * n], y)).collect();
            let yhy = dot(y, &hy);
            let c = rho * rho * yhy + rho;
            for i in 0..n {
                for j in i..n {
                    let v = m[i * n + j] + c * s[i] * s[j] - rho * (s[i] * hy[j] + hy[i] * s[j]);
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
            }
            *pristine = false;
        }
        InverseHessian::Limited { diag, pairs, capacity } => {
            if pairs.len() == *capacity {
                pairs.pop_front();
            }
            pairs.push_back((s.to_vec(), y.to_vec(), rho));
            *diag = sy / dot(y, y);
        }
    }
    true
}

/// `d = −H g`, replaced by `−g` when it fails the curvature test
/// `dᵀg ≤ −ε|d||g|`.
pub fn descent_direction<T: Real>(h: &InverseHessian<T>, g: &[T], eps: T) -> (Vec<T>, StepType) {
    let d: Vec<T> = h.apply(g).into_iter().map(|v| -v).collect();
    let dg = dot(&d, g);
    if dg > -eps * norm(&d) * norm(g) || !dg.is_finite() {
        (g.iter().map(|&v| -v).collect(), StepType::Grad)
    } else {
        (d, StepType::Bfgs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearchResult<T> {
    pub step: T,
    pub value: T,
    pub trials: usize,
}

/// Armijo backtracking over `{1, ρ, ρ², …}`; non-finite trial values are rejections.
pub fn line_search<T: Real, F>(
    mut merit: F,
    u: &[T],
    d: &[T],
    f0: T,
    g0: &[T],
    cfg: &OptimizerConfig<T>,
) -> Result<LineSearchResult<T>>
where
    F: FnMut(&[T]) -> Result<T>,
{
    let slope = dot(g0, d);
    if !(slope < T::zero()) {
        return Err(Error::NotDescent { slope: slope.as_f64() });
    }
    let mut step = T::one();
    let mut trial = vec![T::zero(); u.len()];
    for k in 0..=cfg.max_backtracks {
        for i in 0..u.len() {
            trial[i] = u[i] + step * d[i];
        }
        let f = merit(&trial)?;
        if f.is_finite() && f <= f0 + cfg.armijo_c1 * step * slope {
            return Ok(LineSearchResult { step, value: f, trials: k + 1 });
        }
        step *= cfg.backtrack;
    }
    Err(Error::LineSearchFailure { backtracks: cfg.max_backtracks })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry<T> {
    pub iter: usize,
    pub round: usize,
    /// Objective without the barrier term.
    pub f_value: T,
    pub merit: T,
    pub grad_norm: T,
    pub step_type: Option<StepType>,
    pub step_length: T,
    pub barrier_mu: T,
    pub min_margin: T,
    pub relative_error: T,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    Converged,
    IterationBudget,
    RoundBudget,
    LineSearchFailure { backtracks: usize },
}

#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub u: Vec<T>,
    pub h: InverseHessian<T>,
    pub barrier_mu: T,
    pub log: Vec<LogEntry<T>>,
    pub termination: Termination,
    pub last: Evaluation<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn iterations(&self) -> usize {
        self.log.last().map(|e| e.iter).unwrap_or(0)
    }
}

fn initial_diag<T: Real, P: BarrierProblem<T>>(p: &P, cfg: &OptimizerConfig<T>) -> T {
    match cfg.initial_hessian {
        InitialHessian::InverseAlpha => T::one() / p.alpha(),
        InitialHessian::Identity => T::one(),
    }
}

/// Runs the barrier homotopy from `u_init`, which must be strictly feasible.
pub fn optimize<T: Real, P: BarrierProblem<T>>(
    problem: &mut P,
    cfg: &OptimizerConfig<T>,
    u_init: Vec<T>,
) -> Result<OptimizerState<T>> {
    optimize_with(problem, cfg, u_init, |_, _| {})
}

/// [`optimize`] calling `observe` with every log entry and the iterate it describes.
pub fn optimize_with<T: Real, P: BarrierProblem<T>, F: FnMut(&LogEntry<T>, &[T])>(
    problem: &mut P,
    cfg: &OptimizerConfig<T>,
    u_init: Vec<T>,
    mut observe: F,
) -> Result<OptimizerState<T>> {
    cfg.validate()?;
    let n = problem.dimension();
    if u_init.len() != n {
        return Err(Error::ControlLength { expected: n, got: u_init.len() });
    }
    let start = problem.evaluate(&u_init, T::zero(), false)?;
    if !start.feasible {
        return Err(Error::Infeasible { step: 0, margin: start.min_margin.as_f64() });
    }
    let mut mu = cfg.initial_barrier.unwrap_or(T::lit(1e-2) * start.value);
    if !(mu > T::zero()) {
        mu = T::min_positive_value();
    }
    let diag = initial_diag(problem, cfg);
    let mut state = OptimizerState {
        u: u_init,
        h: InverseHessian::new(n, diag, cfg.storage),
        barrier_mu: mu,
        log: Vec::new(),
        termination: Termination::Converged,
        last: start.clone(),
    };
    let entry = |iter, round, ev: &Evaluation<T>, g: T, st, len, mu| LogEntry {
        iter,
        round,
        f_value: ev.value,
        merit: ev.merit,
        grad_norm: g,
        step_type: st,
        step_length: len,
        barrier_mu: mu,
        min_margin: ev.min_margin,
        relative_error: ev.relative_error,
    };
    if start.relative_error < cfg.position_tolerance {
        state.log.push(entry(0, 0, &start, T::nan(), None, T::zero(), T::zero()));
        observe(&state.log[0], &state.u);
        return Ok(state);
    }

    let mut cur = problem.evaluate(&state.u, mu, true)?;
    let mut g = cur.gradient.take().expect("gradient requested");
    let g0 = norm(&g);
    state.log.push(entry(0, 0, &cur, g0, None, T::zero(), mu));
    observe(&state.log[0], &state.u);
    let mut tol = cfg.inner_tolerance * g0;
    let floor = cfg.gradient_floor * g0;
    let mut iter = 0;

    for round in 0..cfg.max_rounds {
        let mut inner = 0;
        loop {
            if cur.relative_error < cfg.position_tolerance {
                state.termination = Termination::Converged;
                state.last = cur;
                return Ok(state);
            }
            if norm(&g) <= tol || inner >= cfg.max_inner_iterations {
                break;
            }
            if iter >= cfg.max_iterations {
                state.termination = Termination::IterationBudget;
                state.last = cur;
                return Ok(state);
            }
            let (mut d, mut kind) = descent_direction(&state.h, &g, cfg.curvature_eps);
            if state.h.is_initial() {
                // no curvature pairs yet: d is a scaled negative gradient
                kind = StepType::Grad;
            }
            let u = state.u.clone();
            let mut search = |dir: &[T]| {
                line_search(|x| Ok(problem.evaluate(x, mu, false)?.merit), &u, dir, cur.merit, &g, cfg)
            };
            let ls = match search(&d) {
                Ok(ls) => ls,
                Err(Error::LineSearchFailure { .. }) if kind == StepType::Bfgs => {
                    state.h.reset(diag);
                    d = g.iter().map(|&v| -v).collect();
                    kind = StepType::Grad;
                    match search(&d) {
                        Ok(ls) => ls,
                        Err(Error::LineSearchFailure { backtracks }) => {
                            state.termination = Termination::LineSearchFailure { backtracks };
                            state.last = cur;
                            return Ok(state);
                        }
                        Err(e) => return Err(e),
                    }
                }
                Err(Error::LineSearchFailure { backtracks }) => {
                    state.termination = Termination::LineSearchFailure { backtracks };
                    state.last = cur;
                    return Ok(state);
                }
                Err(e) => return Err(e),
            };
            let s: Vec<T> = d.iter().map(|&v| v * ls.step).collect();
            let u_new: Vec<T> = state.u.iter().zip(&s).map(|(&a, &b)| a + b).collect();
            let mut next = problem.evaluate(&u_new, mu, true)?;
            let g_new = next.gradient.take().expect("gradient requested");
            let y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
            if cfg.scale_initial {
                state.h.scale_if_pristine(&s, &y);
            }
            bfgs_update(&mut state.h, &s, &y);
            state.u = u_new;
            g = g_new;
            cur = next;
            iter += 1;
            inner += 1;
            state.log.push(entry(iter, round, &cur, norm(&g), Some(kind), ls.step, mu));
            observe(state.log.last().expect("just pushed"), &state.u);
        }
        if round + 1 == cfg.max_rounds {
            break;
        }
        mu = mu / cfg.barrier_reduction;
        state.barrier_mu = mu;
        tol = (tol * T::lit(0.1)).max(floor);
        if cfg.restart_each_round {
            state.h.reset(diag);
        }
        cur = problem.evaluate(&state.u, mu, true)?;
        g = cur.gradient.take().expect("gradient requested");
    }
    state.termination = Termination::RoundBudget;
    state.last = cur;
    Ok(state)
}

/// Adapter running the steering objective inside [`optimize`]; keeps the
/// trajectory of the last evaluation so the gradient does not repeat the
/// forward run.
pub struct SteeringProblem<'a, T> {
    pub objective: Objective<'a, T>,
    cache: Option<(Vec<T>, Trajectory<T>)>,
}

impl<'a, T: Real> SteeringProblem<'a, T> {
    pub fn new(objective: Objective<'a, T>) -> Self {
        Self { objective, cache: None }
    }

    /// Trajectory of the most recent feasible evaluation at `u`, if cached.
    pub fn cached_trajectory(&self, u: &[T]) -> Option<&Trajectory<T>> {
        self.cache.as_ref().filter(|(cu, _)| cu.as_slice() == u).map(|(_, t)| t)
    }
}

impl<'a, T: Real> BarrierProblem<T> for SteeringProblem<'a, T> {
    fn dimension(&self) -> usize {
        self.objective.dimension()
    }

    fn alpha(&self) -> T {
        self.objective.spec.alpha
    }

    fn evaluate(&mut self, u: &[T], mu: T, gradient: bool) -> Result<Evaluation<T>> {
        self.objective.spec.barrier = mu;
        let traj = match self.cache.take() {
            Some((cu, t)) if cu.as_slice() == u => Some(t),
            _ => self.objective.simulate(u)?,
        };
        let Some(traj) = traj else {
            return Ok(Evaluation {
                merit: T::infinity(),
                value: T::infinity(),
                gradient: None,
                feasible: false,
                min_margin: -T::infinity(),
                relative_error: T::infinity(),
            });
        };
        let rec = self.objective.evaluate_trajectory(u, &traj);
        let grad = if gradient && rec.feasible { Some(self.objective.adjoint_gradient(u, &traj)?) } else { None };
        self.cache = Some((u.to_vec(), traj));
        Ok(Evaluation {
            merit: rec.merit,
            value: rec.value,
            gradient: grad,
            feasible: rec.feasible,
            min_margin: rec.min_margin,
            relative_error: rec.relative_error,
        })
    }
}
