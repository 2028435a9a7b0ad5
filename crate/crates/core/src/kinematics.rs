//! Relativistic kinematic maps between momentum and velocity.
//!
//! Momentum is scaled by `m0·c` before the Lorentz factor is formed, so the
//! maps stay well conditioned for electron-scale quantities even in `f32`.

use crate::linalg::{Mat3, Vec3};
use crate::Real;

/// Physical constants of the particle and the vacuum, SI units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicalConstants<T> {
    /// Speed of light [m/s].
    pub c: T,
    /// Permittivity of free space [F/m].
    pub epsilon: T,
    /// Permeability of free space [H/m].
    pub mu: T,
    /// Rest mass [kg].
    pub m0: T,
    /// Particle charge [C].
    pub q: T,
}

impl<T: Real> Default for PhysicalConstants<T> {
    /// Electron in vacuum, five significant digits.
    fn default() -> Self {
        Self {
            c: T::lit(2.9979e8),
            epsilon: T::lit(8.8541e-12),
            mu: T::lit(4.0 * std::f64::consts::PI * 1e-7),
            m0: T::lit(9.1093e-31),
            q: T::lit(1.6021e-19),
        }
    }
}

impl<T: Real> PhysicalConstants<T> {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("c", self.c),
            ("epsilon", self.epsilon),
            ("mu", self.mu),
            ("m0", self.m0),
            ("q", self.q),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > T::zero()) {
                return Err(format!("constant {name} must be finite and positive"));
            }
        }
        Ok(())
    }

    /// Momentum scale `m0·c`.
    #[inline]
    pub fn momentum_scale(&self) -> T {
        self.m0 * self.c
    }

    /// Momentum of a particle moving with normalized velocity `beta` (`|beta| < 1`).
    pub fn momentum_from_beta(&self, beta: Vec3<T>) -> Vec3<T> {
        let b2 = beta.norm_sq();
        let gamma = T::one() / (T::one() - b2).sqrt();
        beta * (gamma * self.momentum_scale())
    }
}

#[inline]
fn reduced<T: Real>(p: Vec3<T>, k: &PhysicalConstants<T>) -> (Vec3<T>, T) {
    let ph = p * (T::one() / k.momentum_scale());
    let gamma = (T::one() + ph.norm_sq()).sqrt();
    (ph, gamma)
}

/// `γ(p) = sqrt(1 + |p|²/(m0·c)²)`.
#[inline]
pub fn lorentz_factor<T: Real>(p: Vec3<T>, k: &PhysicalConstants<T>) -> T {
    reduced(p, k).1
}

/// Velocity `p / (m0·γ(p))`; its magnitude is always below `c`.
#[inline]
pub fn velocity<T: Real>(p: Vec3<T>, k: &PhysicalConstants<T>) -> Vec3<T> {
    beta(p, k) * k.c
}

/// Normalized velocity `velocity(p) / c`.
#[inline]
pub fn beta<T: Real>(p: Vec3<T>, k: &PhysicalConstants<T>) -> Vec3<T> {
    let (ph, gamma) = reduced(p, k);
    ph * (T::one() / gamma)
}

/// Analytic Jacobian `∂v/∂p = (I − p̂p̂ᵀ/γ²) / (m0·γ)` with `p̂ = p/(m0·c)`.
///
/// Symmetric positive definite with eigenvalues `1/(m0γ)` (twice) and
/// `1/(m0γ³)`, hence Frobenius norm at most `√3/m0`.
pub fn velocity_jacobian<T: Real>(p: Vec3<T>, k: &PhysicalConstants<T>) -> Mat3<T> {
    let (ph, gamma) = reduced(p, k);
    let g2 = gamma * gamma;
    let proj = Mat3::identity() - ph.outer(ph).scale(T::one() / g2);
    proj.scale(T::one() / (k.m0 * gamma))
}

/// `∂β/∂p = velocity_jacobian / c`.
pub fn beta_jacobian<T: Real>(p: Vec3<T>, k: &PhysicalConstants<T>) -> Mat3<T> {
    velocity_jacobian(p, k).scale(T::one() / k.c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn k() -> PhysicalConstants<f64> {
        PhysicalConstants::default()
    }

    #[test]
    fn table_constants() {
        let k = k();
        assert_eq!(k.c, 2.9979e8);
        assert_eq!(k.epsilon, 8.8541e-12);
        assert_eq!(k.mu, 4.0 * std::f64::consts::PI * 1e-7);
        assert_eq!(k.m0, 9.1093e-31);
        assert_eq!(k.q, 1.6021e-19);
        assert!(k.validate().is_ok());
    }

    #[test]
    fn lorentz_factor_examples() {
        let k = k();
        let mc = k.m0 * k.c;
        assert_eq!(lorentz_factor(Vec3::zero(), &k), 1.0);
        assert_relative_eq!(
            lorentz_factor(Vec3::new(0.0, mc, 0.0), &k),
            std::f64::consts::SQRT_2,
            max_relative = 1e-15
        );
        // sqrt(101) = 10.04987562112089027021926491275957...
        assert_relative_eq!(
            lorentz_factor(Vec3::new(0.0, 0.0, 10.0 * mc), &k),
            10.049_875_621_120_89,
            max_relative = 1e-15
        );
    }

    #[test]
    fn velocity_examples() {
        let k = k();
        let mc = k.m0 * k.c;
        assert_eq!(velocity(Vec3::zero(), &k), Vec3::zero());
        let v = velocity(Vec3::new(10.0 * mc, 0.0, 0.0), &k);
        // 10/sqrt(101) = 0.99503719020998917...
        assert_relative_eq!(v[0] / k.c, 0.995_037_190_209_989_2, max_relative = 1e-14);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[2], 0.0);
        let b = beta(Vec3::new(mc, 0.0, 0.0), &k);
        assert_relative_eq!(b[0], std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-15);
    }

    #[test]
    fn jacobian_at_rest() {
        let k = k();
        let j = velocity_jacobian(Vec3::zero(), &k);
        let d = j - Mat3::diag(1.0 / k.m0);
        assert!(d.frobenius() * k.m0 < 1e-15);
    }

    #[test]
    fn single_precision_stays_finite() {
        let k = PhysicalConstants::<f32>::default();
        let mc = k.m0 * k.c;
        let p = Vec3::new(3.0 * mc, -mc, 0.5 * mc);
        let g = lorentz_factor(p, &k);
        assert!((g - (1.0f32 + 9.0 + 1.0 + 0.25).sqrt()).abs() < 1e-5);
        assert!(velocity(p, &k).norm() < k.c);
        // entries are O(1/m0); compare in units of 1/m0 to stay inside f32 range
        let j = velocity_jacobian(p, &k).scale(k.m0);
        assert!(j.frobenius().is_finite() && j.frobenius() <= 3f32.sqrt());
    }

    fn fd_jacobian(p: Vec3<f64>, k: &PhysicalConstants<f64>) -> Mat3<f64> {
        let mc = k.m0 * k.c;
        let h = 1e-6 * mc.max(p.norm());
        let mut m = Mat3::zero();
        for j in 0..3 {
            let e = Vec3::unit(j) * h;
            let d = (velocity(p + e, k) - velocity(p - e, k)) * (1.0 / (2.0 * h));
            for i in 0..3 {
                m.0[i][j] = d[i];
            }
        }
        m
    }

    proptest! {
        #[test]
        fn speed_limit_and_bounds(x in -100.0f64..100.0, y in -100.0f64..100.0, z in -100.0f64..100.0) {
            let k = k();
            let p = Vec3::new(x, y, z) * (k.m0 * k.c);
            prop_assert!(lorentz_factor(p, &k) >= 1.0);
            prop_assert!(velocity(p, &k).norm() < k.c);
            prop_assert!(beta(p, &k).norm() < 1.0);
            let j = velocity_jacobian(p, &k);
            prop_assert!(j.frobenius() <= 3f64.sqrt() / k.m0 * (1.0 + 1e-14));
            prop_assert!((j - j.transpose()).frobenius() == 0.0);
        }

        #[test]
        fn jacobian_matches_finite_differences(x in -10.0f64..10.0, y in -10.0f64..10.0, z in -10.0f64..10.0) {
            let k = k();
            let p = Vec3::new(x, y, z) * (k.m0 * k.c);
            let j = velocity_jacobian(p, &k);
            let fd = fd_jacobian(p, &k);
            prop_assert!((j - fd).frobenius() / j.frobenius() < 1e-8);
        }

        #[test]
        fn jacobian_positive_definite(x in -50.0f64..50.0, y in -50.0f64..50.0, z in -50.0f64..50.0,
                                      a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
            let k = k();
            let p = Vec3::new(x, y, z) * (k.m0 * k.c);
            let w = Vec3::new(a, b, c);
            prop_assume!(w.norm() > 1e-3);
            prop_assert!(w.dot(velocity_jacobian(p, &k).mul_vec(w)) > 0.0);
        }
    }
}
