//! Tracking objective with Tikhonov and log-barrier terms, its discrete
//! adjoint gradient and a finite difference oracle.
//!
//! All quantities here are nondimensional (see [`crate::scales`]):
//!
//! ```text
//! J     = ½|r_N − r_d|²/L² + Δt̃ Σ_{k=1..N} J₁(r_k) + (α/2) Σ m̃_i ũ_i²
//! B     = −μ Δt̃ Σ_{k=1..N} Σ_particles Σ_faces log(−g(r_k)/L)
//! merit = J + B
//! ```

use rayon::prelude::*;

use crate::dynamics::{boris_push_vjp, effective_fields_vjp, integrate_potential, ParticleState, ProblemSetup, Trajectory};
use crate::kinematics::velocity_jacobian;
use crate::linalg::Vec3;
use crate::poisson::solve_transpose;
use crate::scales::Scales;
use crate::{Error, Real, Result};

/// Running cost `J₁` along the trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RunningCost {
    #[default]
    Zero,
    /// `½|r − r_d|²/L²` at every step.
    Tracking,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec<T> {
    /// Desired end position of the tracked particle [m].
    pub target: Vec3<T>,
    pub tracked: usize,
    pub alpha: T,
    pub running: RunningCost,
    /// Barrier weight `μ`; zero disables the barrier (feasibility is still enforced).
    pub barrier: T,
}

impl<T: Real> ObjectiveSpec<T> {
    pub fn new(target: Vec3<T>, alpha: T, barrier: T) -> Self {
        Self { target, tracked: 0, alpha, running: RunningCost::Zero, barrier }
    }

    pub fn validate(&self, setup: &ProblemSetup<T>) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > T::zero()) {
            return Err(Error::InvalidConfig("alpha must be positive".into()));
        }
        if !(self.barrier.is_finite() && self.barrier >= T::zero()) {
            return Err(Error::InvalidConfig("barrier weight must be non-negative".into()));
        }
        if self.tracked >= setup.num_particles() {
            return Err(Error::InvalidConfig(format!("tracked particle {} does not exist", self.tracked)));
        }
        if !self.target.is_finite() {
            return Err(Error::InvalidConfig("target must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord<T> {
    /// Terminal plus running tracking terms.
    pub tracking: T,
    /// `(α/2)Σ m̃ ũ²`.
    pub regularization: T,
    /// `tracking + regularization`.
    pub value: T,
    pub barrier: T,
    /// `value + barrier`, `+∞` when infeasible.
    pub merit: T,
    pub gradient: Option<Vec<T>>,
    pub feasible: bool,
    /// `min −g` over all particles and steps [m]; negative or `−∞` when violated.
    pub min_margin: T,
    pub end_position: Vec3<T>,
    /// `|r_N − r_d| / |r_d|`.
    pub relative_error: T,
}

/// Bundles a problem with its objective and precomputed scales.
#[derive(Clone, Debug)]
pub struct Objective<'a, T> {
    pub setup: &'a ProblemSetup<T>,
    pub spec: ObjectiveSpec<T>,
    pub scales: Scales<T>,
    mass: Vec<T>,
}

impl<'a, T: Real> Objective<'a, T> {
    pub fn new(setup: &'a ProblemSetup<T>, spec: ObjectiveSpec<T>) -> Result<Self> {
        spec.validate(setup)?;
        let scales = Scales::new(setup);
        let mass = scales.boundary_mass(setup);
        Ok(Self { setup, spec, scales, mass })
    }

    pub fn dimension(&self) -> usize {
        self.mass.len()
    }

    /// Nondimensional boundary mass weights.
    pub fn mass(&self) -> &[T] {
        &self.mass
    }

    fn dt_tilde(&self) -> T {
        T::one() / T::from_usize_lossy(self.setup.steps)
    }

    fn check_len(&self, u: &[T]) -> Result<()> {
        if u.len() != self.dimension() {
            return Err(Error::ControlLength { expected: self.dimension(), got: u.len() });
        }
        Ok(())
    }

    /// Runs the forward problem. `Ok(None)` means the particle support left the box.
    pub fn simulate(&self, u: &[T]) -> Result<Option<Trajectory<T>>> {
        self.check_len(u)?;
        let eta = self.setup.potential(&self.scales.control_to_si(u))?;
        match integrate_potential(self.setup, eta) {
            Ok(t) => Ok(Some(t)),
            Err(Error::SupportLeftDomain { .. }) | Err(Error::OutOfDomain { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn regularization(&self, u: &[T]) -> T {
        let s = u.iter().zip(&self.mass).fold(T::zero(), |a, (&v, &m)| a + m * v * v);
        self.spec.alpha * T::lit(0.5) * s
    }

    /// Objective parts of a trajectory produced under `u`.
    pub fn evaluate_trajectory(&self, u: &[T], traj: &Trajectory<T>) -> EvalRecord<T> {
        let l = self.scales.length;
        let inv_l2 = T::one() / (l * l);
        let half = T::lit(0.5);
        let tr = self.spec.tracked;
        let dtt = self.dt_tilde();
        let end = traj.final_states()[tr].r;
        let mut tracking = half * (end - self.spec.target).norm_sq() * inv_l2;
        if self.spec.running == RunningCost::Tracking {
            for st in &traj.states[1..] {
                tracking += dtt * half * (st[tr].r - self.spec.target).norm_sq() * inv_l2;
            }
        }
        let min_margin = traj.min_margin(self.setup);
        let feasible = min_margin > T::zero();
        let mut barrier = T::zero();
        if feasible && self.spec.barrier > T::zero() {
            let mut sum = T::zero();
            for st in &traj.states[1..] {
                for s in st {
                    for g in self.setup.constraints(s.r) {
                        sum += (-g / l).ln();
                    }
                }
            }
            barrier = -self.spec.barrier * dtt * sum;
        }
        let regularization = self.regularization(u);
        let value = tracking + regularization;
        let merit = if feasible { value + barrier } else { T::infinity() };
        let rd = self.spec.target.norm();
        let relative_error = (end - self.spec.target).norm() / if rd > T::zero() { rd } else { T::one() };
        EvalRecord {
            tracking,
            regularization,
            value,
            barrier: if feasible { barrier } else { T::infinity() },
            merit,
            gradient: None,
            feasible,
            min_margin,
            end_position: end,
            relative_error,
        }
    }

    fn infeasible_record(&self, u: &[T]) -> EvalRecord<T> {
        let inf = T::infinity();
        EvalRecord {
            tracking: inf,
            regularization: self.regularization(u),
            value: inf,
            barrier: inf,
            merit: inf,
            gradient: None,
            feasible: false,
            min_margin: -inf,
            end_position: Vec3::splat(T::nan()),
            relative_error: inf,
        }
    }

    /// Merit value only.
    pub fn eval(&self, u: &[T]) -> Result<EvalRecord<T>> {
        Ok(self.eval_with_trajectory(u)?.0)
    }

    pub fn eval_with_trajectory(&self, u: &[T]) -> Result<(EvalRecord<T>, Option<Trajectory<T>>)> {
        match self.simulate(u)? {
            Some(t) => Ok((self.evaluate_trajectory(u, &t), Some(t))),
            None => Ok((self.infeasible_record(u), None)),
        }
    }

    /// Merit and, when feasible, its adjoint gradient.
    pub fn eval_with_gradient(&self, u: &[T]) -> Result<(EvalRecord<T>, Option<Trajectory<T>>)> {
        let (mut rec, traj) = self.eval_with_trajectory(u)?;
        if let Some(t) = &traj {
            if rec.feasible {
                rec.gradient = Some(self.adjoint_gradient(u, t)?);
            }
        }
        Ok((rec, traj))
    }

    /// `∂(J + B)/∂r` contributions at step `k ≥ 1` (not including the terminal term).
    fn running_position_bar(&self, states: &[ParticleState<T>], r_bar: &mut [Vec3<T>]) {
        let l = self.scales.length;
        let dtt = self.dt_tilde();
        if self.spec.running == RunningCost::Tracking {
            let tr = self.spec.tracked;
            r_bar[tr] += (states[tr].r - self.spec.target) * (dtt / (l * l));
        }
        if self.spec.barrier > T::zero() {
            let c = -self.spec.barrier * dtt;
            for (i, s) in states.iter().enumerate() {
                let g = self.setup.constraints(s.r);
                for axis in 0..3 {
                    // g = ±r_axis − h, dg/dr = ±e_axis
                    r_bar[i][axis] += c * (T::one() / g[2 * axis] - T::one() / g[2 * axis + 1]);
                }
            }
        }
    }

    /// Gradient of the merit with respect to the nondimensional control by a
    /// reverse sweep through the discrete time stepping and one transposed
    /// Poisson solve.
    pub fn adjoint_gradient(&self, u: &[T], traj: &Trajectory<T>) -> Result<Vec<T>> {
        self.check_len(u)?;
        let setup = self.setup;
        let k = &setup.constants;
        let q = setup.force_charge();
        let dt = traj.dt;
        let half = dt * T::lit(0.5);
        let np = setup.num_particles();
        let n = setup.steps;
        let l = self.scales.length;
        let eta = &traj.eta;

        let mut r_bar = vec![Vec3::zero(); np];
        let mut p_bar = vec![Vec3::zero(); np];
        let mut eta_bar = vec![T::zero(); eta.len()];
        let tr = self.spec.tracked;
        r_bar[tr] += (traj.states[n][tr].r - self.spec.target) * (T::one() / (l * l));
        self.running_position_bar(&traj.states[n], &mut r_bar);

        for step in (0..n).rev() {
            let rec = &traj.steps[step];
            let start = &traj.states[step];
            let mid: Vec<ParticleState<T>> =
                (0..np).map(|i| ParticleState { r: traj.states[step + 1][i].r, p: rec.p_half[i] }).collect();

            let mut ph_bar = vec![Vec3::zero(); np];
            let mut fb_bar = Vec::with_capacity(np);
            for i in 0..np {
                let (pb, fb) = boris_push_vjp(rec.p_half[i], &rec.fields_end[i], half, q, k, p_bar[i]);
                ph_bar[i] = pb;
                fb_bar.push(fb);
            }
            for i in 0..np {
                effective_fields_vjp(setup, &mid, i, eta, fb_bar[i], &mut r_bar, &mut ph_bar, &mut eta_bar)?;
            }
            for i in 0..np {
                ph_bar[i] += velocity_jacobian(rec.p_half[i], k).tr_mul_vec(r_bar[i]) * dt;
            }
            let mut fa_bar = Vec::with_capacity(np);
            for i in 0..np {
                let (pb, fa) = boris_push_vjp(start[i].p, &rec.fields_start[i], half, q, k, ph_bar[i]);
                p_bar[i] = pb;
                fa_bar.push(fa);
            }
            for i in 0..np {
                effective_fields_vjp(setup, start, i, eta, fa_bar[i], &mut r_bar, &mut p_bar, &mut eta_bar)?;
            }
            if step >= 1 {
                self.running_position_bar(start, &mut r_bar);
            }
        }

        let sens = solve_transpose(&setup.system, &eta_bar, setup.cg_tolerance)?;
        let scale = self.scales.potential;
        Ok(sens
            .boundary_sensitivity
            .iter()
            .zip(u)
            .zip(&self.mass)
            .map(|((&g, &v), &m)| g * scale + self.spec.alpha * m * v)
            .collect())
    }
}

/// Directional derivative estimate from central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdEstimate<T> {
    pub value: T,
    pub step: T,
}

/// Central difference of `f` along `d` at `u`, sweeping the step over the
/// decades `1e-2 … 1e-8` (times `scale`) and keeping the estimate that agrees
/// best with its neighbour. Steps with an infinite probe are skipped.
pub fn fd_directional<T: Real, F>(f: F, u: &[T], d: &[T], scale: T) -> Result<FdEstimate<T>>
where
    F: Fn(&[T]) -> Result<T>,
{
    if d.iter().all(|&v| v == T::zero()) {
        return Ok(FdEstimate { value: T::zero(), step: T::zero() });
    }
    let mut est: Vec<(T, T)> = Vec::new();
    for e in 2..=8 {
        let h = scale * T::lit(10f64.powi(-e));
        let probe = |s: T| -> Vec<T> { u.iter().zip(d).map(|(&a, &b)| a + s * b).collect() };
        let (fp, fm) = (f(&probe(h))?, f(&probe(-h))?);
        if fp.is_finite() && fm.is_finite() {
            est.push(((fp - fm) / (h + h), h));
        }
    }
    match est.len() {
        0 => Err(Error::Infeasible { step: 0, margin: f64::NAN }),
        1 => Ok(FdEstimate { value: est[0].0, step: est[0].1 }),
        _ => {
            let best = (1..est.len())
                .min_by(|&a, &b| {
                    let da = (est[a].0 - est[a - 1].0).abs();
                    let db = (est[b].0 - est[b - 1].0).abs();
                    da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap();
            Ok(FdEstimate { value: est[best].0, step: est[best].1 })
        }
    }
}

/// Finite difference estimates of the merit's directional derivatives,
/// evaluated in parallel over directions.
pub fn fd_gradient<T: Real>(obj: &Objective<'_, T>, u: &[T], directions: &[Vec<T>]) -> Result<Vec<FdEstimate<T>>> {
    let scale = u.iter().fold(T::zero(), |m, &v| m.max(v.abs())).max(T::lit(1e-2));
    directions
        .par_iter()
        .map(|d| fd_directional(|x| Ok(obj.eval(x)?.merit), u, d, scale))
        .collect()
}
