//! Reduced state system: effective fields on a smeared particle and the
//! relativistic Boris integrator.
//!
//! One time step is a symmetric split
//!
//! ```text
//! p½     = K(pⁿ, F(rⁿ, pⁿ), Δt/2)
//! rⁿ⁺¹   = rⁿ + Δt·v(p½)
//! pⁿ⁺¹   = K(p½, F(rⁿ⁺¹, p½), Δt/2)
//! ```
//!
//! where `K` is a kick–rotate–kick Boris push. Position and momentum live on
//! the same time grid and the scheme is second order.

use crate::kinematics::{beta, beta_jacobian, lorentz_factor, velocity, PhysicalConstants};
use crate::linalg::Vec3;
use crate::lw_fields::{field_kernel, field_kernel_jacobians, FieldSample, DEFAULT_SINGULARITY_FLOOR};
use crate::poisson::{
    assemble, build_mesh, eval_nodal, eval_nodal_gradient, nodal_boundary_flux_moment, solve, trilinear_shape,
    ControlField, HexMesh, StiffnessSystem, DEFAULT_CG_TOLERANCE,
};
use crate::smeared_charge::{QuadratureRule, SmearedCharge};
use crate::{Error, Real, Result};

/// Position [m] and momentum [kg·m/s] of one particle.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ParticleState<T> {
    pub r: Vec3<T>,
    pub p: Vec3<T>,
}

/// Plain description of a problem; [`SetupParams::build`] validates it and
/// assembles the finite element system.
#[derive(Clone, Debug)]
pub struct SetupParams<T> {
    pub constants: PhysicalConstants<T>,
    /// Edge of the computational box Ω, centred at the origin [m].
    pub domain_edge: T,
    pub nodes_per_axis: usize,
    /// Edge of the admissible cube Ω̃, centred at the origin [m].
    pub inner_edge: T,
    /// Support radius of the smeared charge [m].
    pub radius: T,
    pub quadrature_intervals: usize,
    pub end_time: T,
    pub time_step: T,
    pub initial: Vec<ParticleState<T>>,
    pub self_field: bool,
    /// Uniform external fields added to every particle.
    pub external: FieldSample<T>,
    pub cg_tolerance: T,
    pub singularity_floor: T,
    /// Test hook: the Lorentz force uses charge zero.
    pub zero_charge: bool,
}

impl<T: Real> SetupParams<T> {
    /// Small steering problem: 9³ nodes on a 2 mm box, 200 steps over 0.2 ns,
    /// one electron at `(−50 µm, 0, 0)` moving along x at 500 km/s.
    pub fn desk() -> Self {
        let constants = PhysicalConstants::default();
        let beta0 = Vec3::new(T::lit(5e5) / constants.c, T::zero(), T::zero());
        Self {
            constants,
            domain_edge: T::lit(2e-3),
            nodes_per_axis: 9,
            inner_edge: T::lit(2e-4),
            radius: T::lit(0.5e-6),
            quadrature_intervals: 8,
            end_time: T::lit(2e-10),
            time_step: T::lit(1e-12),
            initial: vec![ParticleState {
                r: Vec3::new(T::lit(-5e-5), T::zero(), T::zero()),
                p: constants.momentum_from_beta(beta0),
            }],
            self_field: false,
            external: FieldSample::zero(),
            cg_tolerance: T::lit(DEFAULT_CG_TOLERANCE),
            singularity_floor: T::lit(DEFAULT_SINGULARITY_FLOOR),
            zero_charge: false,
        }
    }

    pub fn build(self) -> Result<ProblemSetup<T>> {
        let bad = |m: String| Err(Error::InvalidSetup(m));
        self.constants.validate().map_err(Error::InvalidSetup)?;
        let positive = [
            ("domain_edge", self.domain_edge),
            ("inner_edge", self.inner_edge),
            ("radius", self.radius),
            ("end_time", self.end_time),
            ("time_step", self.time_step),
            ("cg_tolerance", self.cg_tolerance),
            ("singularity_floor", self.singularity_floor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > T::zero()) {
                return bad(format!("{name} must be finite and positive"));
            }
        }
        let gap = (self.domain_edge - self.inner_edge) * T::lit(0.5);
        if !(gap > self.radius) {
            return bad(format!(
                "inner cube must keep a distance larger than the support radius from the boundary (gap {:e}, radius {:e})",
                gap.as_f64(),
                self.radius.as_f64()
            ));
        }
        let ratio = self.end_time / self.time_step;
        let steps = ratio.round();
        if steps < T::one() || (ratio - steps).abs() > T::lit(1e-9) * steps {
            return bad(format!(
                "time step {:e} does not divide end time {:e}",
                self.time_step.as_f64(),
                self.end_time.as_f64()
            ));
        }
        let steps = steps.to_usize().unwrap_or(0);
        if self.initial.is_empty() {
            return bad("at least one particle is required".into());
        }
        let half = self.inner_edge * T::lit(0.5);
        for (i, s) in self.initial.iter().enumerate() {
            if !(s.r.is_finite() && s.p.is_finite()) {
                return bad(format!("particle {i} has a non-finite initial state"));
            }
            if s.r.max_abs() >= half {
                return bad(format!("particle {i} does not start inside the inner cube"));
            }
        }
        let rule = QuadratureRule::new(self.quadrature_intervals).map_err(Error::InvalidSetup)?;
        let mesh = build_mesh(self.nodes_per_axis, self.domain_edge)?;
        let system = assemble(mesh)?;
        Ok(ProblemSetup {
            constants: self.constants,
            system,
            charge: SmearedCharge::new(self.radius),
            rule,
            inner_edge: self.inner_edge,
            end_time: self.end_time,
            steps,
            initial: self.initial,
            self_field: self.self_field,
            external: self.external,
            cg_tolerance: self.cg_tolerance,
            singularity_floor: self.singularity_floor,
            zero_charge: self.zero_charge,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ProblemSetup<T> {
    pub constants: PhysicalConstants<T>,
    pub system: StiffnessSystem<T>,
    pub charge: SmearedCharge<T>,
    pub rule: QuadratureRule<T>,
    pub inner_edge: T,
    pub end_time: T,
    pub steps: usize,
    pub initial: Vec<ParticleState<T>>,
    pub self_field: bool,
    pub external: FieldSample<T>,
    pub cg_tolerance: T,
    pub singularity_floor: T,
    pub zero_charge: bool,
}

impl<T: Real> ProblemSetup<T> {
    pub fn mesh(&self) -> &HexMesh<T> {
        self.system.mesh()
    }

    pub fn dt(&self) -> T {
        self.end_time / T::from_usize_lossy(self.steps)
    }

    pub fn num_particles(&self) -> usize {
        self.initial.len()
    }

    /// Charge used in the Lorentz force.
    pub fn force_charge(&self) -> T {
        if self.zero_charge {
            T::zero()
        } else {
            self.constants.q
        }
    }

    /// Nodal magnetic potential for boundary data `u` [T·m].
    pub fn potential(&self, u: &ControlField<T>) -> Result<Vec<T>> {
        Ok(solve(&self.system, u, self.cg_tolerance)?.eta)
    }

    /// Values `g_i(r)` of the six face constraints of Ω̃ (feasible when all < 0).
    pub fn constraints(&self, r: Vec3<T>) -> [T; 6] {
        let h = self.inner_edge * T::lit(0.5);
        [r[0] - h, -r[0] - h, r[1] - h, -r[1] - h, r[2] - h, -r[2] - h]
    }

    /// `min_i −g_i(r)`.
    pub fn margin(&self, r: Vec3<T>) -> T {
        self.constraints(r).iter().fold(T::infinity(), |m, &g| m.min(-g))
    }
}

/// Effective fields on particle `i`:
///
/// ```text
/// E = ∫φ(x−rᵢ) E_pair(x) dx + E₀
/// B = ∫φ(x−rᵢ) B_pair(x) dx + B₀ − ∫η ∇φ(x−rᵢ) dx + ∮ u φ(x−rᵢ) n ds
/// ```
///
/// The two control terms together equal `∫φ(x−rᵢ) ∇η dx`.
pub fn effective_fields<T: Real>(
    setup: &ProblemSetup<T>,
    states: &[ParticleState<T>],
    i: usize,
    eta: &[T],
) -> Result<FieldSample<T>> {
    let (s, rule, mesh) = (&setup.charge, &setup.rule, setup.mesh());
    let k = &setup.constants;
    let ri = states[i].r;
    if !mesh.contains_cube(ri, s.radius) {
        let [x, y, z] = ri.to_f64();
        return Err(Error::OutOfDomain { x, y, z });
    }
    let mut out = setup.external;
    let phi_w = rule.phi_weights();
    let grad_w = rule.grad_weights();
    let mut moment = Vec3::zero();
    for (kq, g) in grad_w.iter().enumerate() {
        if g.max_abs() != T::zero() {
            moment += *g * eval_nodal(eta, mesh, rule.node(kq, ri, s))?;
        }
    }
    out.b -= moment * (T::one() / s.radius);
    out.b += nodal_boundary_flux_moment(eta, mesh, s, rule, ri)?;

    for (j, src) in states.iter().enumerate() {
        if j == i {
            continue;
        }
        let bj = beta(src.p, k);
        for (kq, &w) in phi_w.iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            let sep = rule.node(kq, ri, s) - src.r;
            let dist = sep.norm();
            if !(dist >= setup.singularity_floor) {
                return Err(Error::SingularEvaluation {
                    distance: dist.as_f64(),
                    floor: setup.singularity_floor.as_f64(),
                });
            }
            let f = field_kernel(sep, bj, k);
            out.e += f.e * w;
            out.b += f.b * w;
        }
    }
    if setup.self_field {
        out += self_field(setup, states[i].p);
    }
    Ok(out)
}

/// Smeared velocity field of a particle on itself, skipping quadrature nodes
/// closer than the singularity floor. Vanishes for a particle at rest.
fn self_field<T: Real>(setup: &ProblemSetup<T>, p: Vec3<T>) -> FieldSample<T> {
    let (s, rule, k) = (&setup.charge, &setup.rule, &setup.constants);
    let b = beta(p, k);
    let mut out = FieldSample::zero();
    for (xi, &w) in rule.reference_nodes().iter().zip(rule.phi_weights()) {
        let sep = *xi * s.radius;
        if w == T::zero() || !(sep.norm() >= setup.singularity_floor) {
            continue;
        }
        let f = field_kernel(sep, b, k);
        out.e += f.e * w;
        out.b += f.b * w;
    }
    out
}

/// Pulls a cotangent `bar` of [`effective_fields`] back onto positions,
/// momenta and nodal potential values (accumulating).
pub fn effective_fields_vjp<T: Real>(
    setup: &ProblemSetup<T>,
    states: &[ParticleState<T>],
    i: usize,
    eta: &[T],
    bar: FieldSample<T>,
    r_bar: &mut [Vec3<T>],
    p_bar: &mut [Vec3<T>],
    eta_bar: &mut [T],
) -> Result<()> {
    let (s, rule, mesh) = (&setup.charge, &setup.rule, setup.mesh());
    let k = &setup.constants;
    let ri = states[i].r;
    let inv_r = T::one() / s.radius;
    for (kq, g) in rule.grad_weights().iter().enumerate() {
        if g.max_abs() == T::zero() {
            continue;
        }
        let x = rule.node(kq, ri, s);
        let c = -g.dot(bar.b) * inv_r;
        if c == T::zero() {
            continue;
        }
        let (_, grad) = eval_nodal_gradient(eta, mesh, x)?;
        r_bar[i] += grad * c;
        let loc = mesh.locate(x)?;
        let (n, _) = trilinear_shape(loc.local);
        for a in 0..8 {
            eta_bar[loc.nodes[a]] += c * n[a];
        }
    }

    for (j, src) in states.iter().enumerate() {
        if j == i {
            continue;
        }
        let bj = beta(src.p, k);
        let mut g_beta = Vec3::zero();
        for (kq, &w) in rule.phi_weights().iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            let sep = rule.node(kq, ri, s) - src.r;
            let jac = field_kernel_jacobians(sep, bj, k);
            let g_sep = (jac.de_dsep.tr_mul_vec(bar.e) + jac.db_dsep.tr_mul_vec(bar.b)) * w;
            r_bar[i] += g_sep;
            r_bar[j] -= g_sep;
            g_beta += (jac.de_dbeta.tr_mul_vec(bar.e) + jac.db_dbeta.tr_mul_vec(bar.b)) * w;
        }
        p_bar[j] += beta_jacobian(src.p, k).tr_mul_vec(g_beta);
    }

    if setup.self_field {
        let p = states[i].p;
        let b = beta(p, k);
        let mut g_beta = Vec3::zero();
        for (xi, &w) in rule.reference_nodes().iter().zip(rule.phi_weights()) {
            let sep = *xi * s.radius;
            if w == T::zero() || !(sep.norm() >= setup.singularity_floor) {
                continue;
            }
            let jac = field_kernel_jacobians(sep, b, k);
            g_beta += (jac.de_dbeta.tr_mul_vec(bar.e) + jac.db_dbeta.tr_mul_vec(bar.b)) * w;
        }
        p_bar[i] += beta_jacobian(p, k).tr_mul_vec(g_beta);
    }
    Ok(())
}

/// Kick–rotate–kick Boris push over `tau` with fixed fields; `q` is the force charge.
pub fn boris_push<T: Real>(p: Vec3<T>, f: &FieldSample<T>, tau: T, q: T, k: &PhysicalConstants<T>) -> Vec3<T> {
    let kick = q * tau * T::lit(0.5);
    let pm = p + f.e * kick;
    let t = f.b * (kick / (k.m0 * lorentz_factor(pm, k)));
    let pp = pm + pm.cross(t);
    let s = t * (T::lit(2.0) / (T::one() + t.norm_sq()));
    pm + pp.cross(s) + f.e * kick
}

/// Reverse of [`boris_push`]: given the output cotangent, returns the
/// cotangents of `p` and of the fields.
pub fn boris_push_vjp<T: Real>(
    p: Vec3<T>,
    f: &FieldSample<T>,
    tau: T,
    q: T,
    k: &PhysicalConstants<T>,
    out_bar: Vec3<T>,
) -> (Vec3<T>, FieldSample<T>) {
    let kick = q * tau * T::lit(0.5);
    let mc = k.momentum_scale();
    let pm = p + f.e * kick;
    let gm = lorentz_factor(pm, k);
    let kt = kick / k.m0;
    let t = f.b * (kt / gm);
    let pp = pm + pm.cross(t);
    let den = T::one() + t.norm_sq();
    let s = t * (T::lit(2.0) / den);

    let mut e_bar = out_bar * kick;
    let pp_bar = s.cross(out_bar);
    let s_bar = out_bar.cross(pp);
    let mut pm_bar = out_bar + pp_bar + t.cross(pp_bar);
    let mut t_bar = pp_bar.cross(pm);
    t_bar += s_bar * (T::lit(2.0) / den) - t * (T::lit(4.0) * s_bar.dot(t) / (den * den));
    let b_bar = t_bar * (kt / gm);
    let g_bar = -(kt / (gm * gm)) * t_bar.dot(f.b);
    pm_bar += pm * (g_bar / (mc * mc * gm));
    e_bar += pm_bar * kick;
    (pm_bar, FieldSample { e: e_bar, b: b_bar })
}

/// One step of the split scheme under fields that do not change over the step.
pub fn boris_step<T: Real>(
    state: &ParticleState<T>,
    f: &FieldSample<T>,
    dt: T,
    k: &PhysicalConstants<T>,
) -> ParticleState<T> {
    let half = dt * T::lit(0.5);
    let ph = boris_push(state.p, f, half, k.q, k);
    ParticleState { r: state.r + velocity(ph, k) * dt, p: boris_push(ph, f, half, k.q, k) }
}

/// Quantities of one step kept for the reverse sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T> {
    /// Momenta after the first half push.
    pub p_half: Vec<Vec3<T>>,
    /// Fields at the start of the step.
    pub fields_start: Vec<FieldSample<T>>,
    /// Fields at the new positions with half-step momenta.
    pub fields_end: Vec<FieldSample<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub dt: T,
    /// `t_n = n·T/N`, `n = 0..=N`.
    pub times: Vec<T>,
    /// `states[n][i]` is particle `i` at `t_n`.
    pub states: Vec<Vec<ParticleState<T>>>,
    pub steps: Vec<StepRecord<T>>,
    /// Nodal potential the run was driven by.
    pub eta: Vec<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn final_states(&self) -> &[ParticleState<T>] {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Smallest constraint margin over all particles and all recorded times.
    pub fn min_margin(&self, setup: &ProblemSetup<T>) -> T {
        self.states
            .iter()
            .flatten()
            .fold(T::infinity(), |m, s| m.min(setup.margin(s.r)))
    }
}

fn all_fields<T: Real>(setup: &ProblemSetup<T>, states: &[ParticleState<T>], eta: &[T]) -> Result<Vec<FieldSample<T>>> {
    (0..states.len()).map(|i| effective_fields(setup, states, i, eta)).collect()
}

fn support_error(err: Error, particle: usize, step: usize) -> Error {
    match err {
        Error::OutOfDomain { .. } => Error::SupportLeftDomain { particle, step },
        e => e,
    }
}

/// Integrates the state system under boundary control `u` [T·m].
pub fn integrate<T: Real>(setup: &ProblemSetup<T>, u: &ControlField<T>) -> Result<Trajectory<T>> {
    let eta = setup.potential(u)?;
    integrate_potential(setup, eta)
}

/// Integrates the state system for a given nodal potential.
pub fn integrate_potential<T: Real>(setup: &ProblemSetup<T>, eta: Vec<T>) -> Result<Trajectory<T>> {
    let k = &setup.constants;
    let q = setup.force_charge();
    let n = setup.steps;
    let dt = setup.dt();
    let half = dt * T::lit(0.5);
    let np = setup.num_particles();
    let mut states = Vec::with_capacity(n + 1);
    let mut steps = Vec::with_capacity(n);
    states.push(setup.initial.clone());
    for step in 0..n {
        let cur = &states[step];
        let fa = (0..np)
            .map(|i| effective_fields(setup, cur, i, &eta).map_err(|e| support_error(e, i, step)))
            .collect::<Result<Vec<_>>>()?;
        let p_half: Vec<Vec3<T>> = (0..np).map(|i| boris_push(cur[i].p, &fa[i], half, q, k)).collect();
        let mid: Vec<ParticleState<T>> =
            (0..np).map(|i| ParticleState { r: cur[i].r + velocity(p_half[i], k) * dt, p: p_half[i] }).collect();
        let fb = (0..np)
            .map(|i| effective_fields(setup, &mid, i, &eta).map_err(|e| support_error(e, i, step + 1)))
            .collect::<Result<Vec<_>>>()?;
        let next: Vec<ParticleState<T>> =
            (0..np).map(|i| ParticleState { r: mid[i].r, p: boris_push(p_half[i], &fb[i], half, q, k) }).collect();
        states.push(next);
        steps.push(StepRecord { p_half, fields_start: fa, fields_end: fb });
    }
    let nt = T::from_usize_lossy(n);
    let times = (0..=n).map(|i| setup.end_time * T::from_usize_lossy(i) / nt).collect();
    Ok(Trajectory { dt, times, states, steps, eta })
}

/// End position of particle `tracked` under the linear potential `η = b·x`,
/// i.e. a uniform flux density `b`. Gives targets reachable by magnetic control.
pub fn reference_target<T: Real>(setup: &ProblemSetup<T>, b: Vec3<T>, tracked: usize) -> Result<Vec3<T>> {
    let u = ControlField::from_fn(setup.mesh(), |x| b.dot(x));
    let traj = integrate(setup, &u)?;
    traj.final_states()
        .get(tracked)
        .map(|s| s.r)
        .ok_or_else(|| Error::InvalidConfig(format!("tracked particle {tracked} does not exist")))
}

/// Largest relative defect of the discrete update over all steps: each
/// recorded state is advanced once and compared with its successor.
pub fn residual<T: Real>(setup: &ProblemSetup<T>, u: &ControlField<T>, traj: &Trajectory<T>) -> Result<T> {
    let eta = setup.potential(u)?;
    let k = &setup.constants;
    let q = setup.force_charge();
    let dt = setup.dt();
    let half = dt * T::lit(0.5);
    let np = setup.num_particles();
    let mut worst = T::zero();
    for (step, pair) in traj.states.windows(2).enumerate() {
        let (cur, next) = (&pair[0], &pair[1]);
        let fa = all_fields(setup, cur, &eta).map_err(|e| support_error(e, 0, step))?;
        let mid: Vec<ParticleState<T>> = (0..np)
            .map(|i| {
                let ph = boris_push(cur[i].p, &fa[i], half, q, k);
                ParticleState { r: cur[i].r + velocity(ph, k) * dt, p: ph }
            })
            .collect();
        let fb = all_fields(setup, &mid, &eta).map_err(|e| support_error(e, 0, step + 1))?;
        for i in 0..np {
            let p = boris_push(mid[i].p, &fb[i], half, q, k);
            let dr = (mid[i].r - next[i].r).norm() / next[i].r.norm().max(setup.charge.radius);
            let dp = (p - next[i].p).norm() / next[i].p.norm().max(T::min_positive_value());
            worst = worst.max(dr).max(dp);
        }
    }
    Ok(worst)
}
