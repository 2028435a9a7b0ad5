//! Velocity fields of moving point charges.
//!
//! Retardation is neglected (sources are evaluated at the current time) and the
//! acceleration (radiation) term is dropped, leaving
//!
//! ```text
//! E(x) = q/(4πε) · (1 − |β|²) · R_v / D³,   R = x − r,  R_v = R − |R|β,  D = |R| − R·β
//! B(x) = c·ε·μ · (R/|R|) × E(x)
//! ```
//!
//! which reduces to Coulomb's law for `β = 0`.

use crate::dynamics::ParticleState;
use crate::kinematics::{beta, PhysicalConstants};
use crate::linalg::{Mat3, Vec3};
use crate::{Error, Real, Result};

/// Default distance below which field evaluations are refused [m].
pub const DEFAULT_SINGULARITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldSample<T> {
    /// Electric field [V/m].
    pub e: Vec3<T>,
    /// Magnetic flux density [T].
    pub b: Vec3<T>,
}

impl<T: Real> FieldSample<T> {
    pub fn zero() -> Self {
        Self { e: Vec3::zero(), b: Vec3::zero() }
    }
}

impl<T: Real> std::ops::Add for FieldSample<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { e: self.e + o.e, b: self.b + o.b }
    }
}

impl<T: Real> std::ops::AddAssign for FieldSample<T> {
    fn add_assign(&mut self, o: Self) {
        self.e += o.e;
        self.b += o.b;
    }
}

/// Partial derivatives of the field of one source with respect to the
/// separation `R = x − r` and the normalized source velocity `β`.
#[derive(Clone, Copy, Debug)]
pub struct FieldJacobians<T> {
    pub value: FieldSample<T>,
    pub de_dsep: Mat3<T>,
    pub de_dbeta: Mat3<T>,
    pub db_dsep: Mat3<T>,
    pub db_dbeta: Mat3<T>,
}

#[inline]
fn coulomb_prefactor<T: Real>(k: &PhysicalConstants<T>) -> T {
    k.q / (T::lit(4.0) * T::PI() * k.epsilon)
}

fn check_floor<T: Real>(dist: T, r_min: T) -> Result<()> {
    if !(dist >= r_min) {
        return Err(Error::SingularEvaluation { distance: dist.as_f64(), floor: r_min.as_f64() });
    }
    Ok(())
}

/// Field at separation `sep = x − r` from a source moving with `beta`.
///
/// `R̂ × R_v = −R × β`, so the magnetic part is formed from `R × β`, which
/// vanishes exactly for a source at rest.
pub fn field_kernel<T: Real>(sep: Vec3<T>, beta: Vec3<T>, k: &PhysicalConstants<T>) -> FieldSample<T> {
    let dist = sep.norm();
    let rv = sep - beta * dist;
    let d = dist - sep.dot(beta);
    let f = coulomb_prefactor(k) * (T::one() - beta.norm_sq()) / (d * d * d);
    let e = rv * f;
    let b = sep.cross(beta) * (-f * k.c * k.epsilon * k.mu);
    FieldSample { e, b }
}

/// [`field_kernel`] together with its analytic Jacobians.
pub fn field_kernel_jacobians<T: Real>(
    sep: Vec3<T>,
    beta: Vec3<T>,
    k: &PhysicalConstants<T>,
) -> FieldJacobians<T> {
    let kc = coulomb_prefactor(k);
    let kappa = k.c * k.epsilon * k.mu;
    let dist = sep.norm();
    let n = sep * (T::one() / dist);
    let rv = sep - beta * dist;
    let d = dist - sep.dot(beta);
    let d3 = d * d * d;
    let f = kc * (T::one() - beta.norm_sq()) / d3;
    let e = rv * f;
    let rxb = sep.cross(beta);
    let b = rxb * (-f * kappa);
    let three = T::lit(3.0);

    // ∂f/∂R = −3f/D · (n − β)ᵀ,  ∂f/∂β = −2kc/D³ βᵀ + 3f/D Rᵀ
    let df_dsep = (n - beta) * (-three * f / d);
    let df_dbeta = beta * (-T::lit(2.0) * kc / d3) + sep * (three * f / d);
    // ∂R_v/∂R = I − β nᵀ,  ∂R_v/∂β = −|R| I
    let de_dsep = (Mat3::identity() - beta.outer(n)).scale(f) + rv.outer(df_dsep);
    let de_dbeta = Mat3::diag(-dist * f) + rv.outer(df_dbeta);
    // ∂(R×β)/∂R = −[β]×,  ∂(R×β)/∂β = [R]×
    let db_dsep = (Mat3::skew(beta).scale(f) - rxb.outer(df_dsep)).scale(kappa);
    let db_dbeta = (Mat3::skew(sep).scale(-f) - rxb.outer(df_dbeta)).scale(kappa);
    FieldJacobians { value: FieldSample { e, b }, de_dsep, de_dbeta, db_dsep, db_dbeta }
}

/// Electric field of `source` at `x`.
pub fn lw_e_field<T: Real>(
    x: Vec3<T>,
    source: &ParticleState<T>,
    k: &PhysicalConstants<T>,
    r_min: T,
) -> Result<Vec3<T>> {
    let sep = x - source.r;
    check_floor(sep.norm(), r_min)?;
    Ok(field_kernel(sep, beta(source.p, k), k).e)
}

/// Magnetic field `c·ε·μ·R̂ × E` of `source` at `x`.
pub fn lw_b_field<T: Real>(
    x: Vec3<T>,
    source: &ParticleState<T>,
    k: &PhysicalConstants<T>,
    r_min: T,
) -> Result<Vec3<T>> {
    let sep = x - source.r;
    check_floor(sep.norm(), r_min)?;
    Ok(field_kernel(sep, beta(source.p, k), k).b)
}

/// Superposed fields of all `sources` at `x`, skipping index `exclude`.
pub fn pair_fields<T: Real>(
    x: Vec3<T>,
    sources: &[ParticleState<T>],
    exclude: Option<usize>,
    k: &PhysicalConstants<T>,
    r_min: T,
) -> Result<FieldSample<T>> {
    let mut acc = FieldSample::zero();
    for (j, src) in sources.iter().enumerate() {
        if Some(j) == exclude {
            continue;
        }
        let sep = x - src.r;
        check_floor(sep.norm(), r_min)?;
        acc += field_kernel(sep, beta(src.p, k), k);
    }
    Ok(acc)
}
