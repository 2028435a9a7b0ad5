//! Smeared point charge and the quadrature used to average fields over it.
//!
//! The charge density is the polynomial bump
//! `φ(x) = C·(1 − |x|²/R²)³` on the ball of radius `R` (zero outside),
//! normalized with `C = 315/(64πR³)`. It is rotationally symmetric, non-negative
//! and twice continuously differentiable with Lipschitz second derivatives.
//!
//! Integrals against `φ(· − r)` are evaluated in the reference coordinates
//! `x = r + R·ξ`, `ξ ∈ [−1, 1]³`, which maps the tiny support onto a unit box and
//! removes the large slopes of `φ`. The integrand is replaced by its piecewise
//! quadratic (Simpson) interpolant on a tensor grid, and the resulting integrals
//! against `φ` and `∇φ` are precomputed once as product-integration weights.
//! Constants and affine integrands are therefore integrated exactly.

use crate::linalg::{Mat3, Vec3};
use crate::Real;

/// `315 / (64π)`, the normalization of the bump on the unit ball.
pub const UNIT_BALL_NORMALIZATION: f64 = 315.0 / (64.0 * std::f64::consts::PI);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmearedCharge<T> {
    /// Support radius [m].
    pub radius: T,
    /// `315/(64πR³)` [1/m³].
    pub norm_const: T,
}

impl<T: Real> SmearedCharge<T> {
    pub fn new(radius: T) -> Self {
        assert!(radius > T::zero(), "support radius must be positive");
        let norm_const = T::lit(UNIT_BALL_NORMALIZATION) / (radius * radius * radius);
        Self { radius, norm_const }
    }

    /// `φ(x_rel)`.
    pub fn phi(&self, x_rel: Vec3<T>) -> T {
        let s = x_rel.norm_sq() / (self.radius * self.radius);
        if s >= T::one() {
            return T::zero();
        }
        let w = T::one() - s;
        self.norm_const * w * w * w
    }

    /// `∇φ(x_rel) = −6C(1 − s)² x / R²`, `s = |x|²/R²`.
    pub fn grad_phi(&self, x_rel: Vec3<T>) -> Vec3<T> {
        let r2 = self.radius * self.radius;
        let s = x_rel.norm_sq() / r2;
        if s >= T::one() {
            return Vec3::zero();
        }
        let w = T::one() - s;
        x_rel * (-T::lit(6.0) * self.norm_const * w * w / r2)
    }

    /// `∇²φ(x_rel) = −(6C/R²)·[(1 − s)² I − 4(1 − s) x xᵀ / R²]`.
    pub fn hess_phi(&self, x_rel: Vec3<T>) -> Mat3<T> {
        let r2 = self.radius * self.radius;
        let s = x_rel.norm_sq() / r2;
        if s >= T::one() {
            return Mat3::zero();
        }
        let w = T::one() - s;
        let pre = -T::lit(6.0) * self.norm_const / r2;
        let m = Mat3::diag(w * w) - x_rel.outer(x_rel).scale(T::lit(4.0) * w / r2);
        m.scale(pre)
    }
}

/// Tensor-product Simpson grid on the reference box `[−1, 1]³` together with
/// the product-integration weights of the bump and of its gradient.
#[derive(Clone, Debug)]
pub struct QuadratureRule<T> {
    intervals: usize,
    /// Reference nodes `ξ_k`, lexicographic with the first axis fastest.
    nodes: Vec<Vec3<T>>,
    /// Plain composite Simpson weights on `[−1, 1]³` (sum to 8).
    simpson: Vec<T>,
    /// `∫ φ̂(ξ) L_k(ξ) dξ`, summing to one.
    phi_weights: Vec<T>,
    /// `∫ ∇φ̂(ξ) L_k(ξ) dξ`.
    grad_weights: Vec<Vec3<T>>,
}

impl<T: Real> QuadratureRule<T> {
    /// Builds the rule with `intervals_per_axis` Simpson sub-intervals per axis.
    pub fn new(intervals_per_axis: usize) -> Result<Self, String> {
        if intervals_per_axis < 2 || intervals_per_axis % 2 != 0 {
            return Err(format!(
                "intervals_per_axis must be a positive even integer, got {intervals_per_axis}"
            ));
        }
        let n = intervals_per_axis;
        let m = n + 1;
        let grid = grid_1d(n);
        let simpson_1d = simpson_weights_1d(n);
        let (w, g) = product_weights(n);

        let mut nodes = Vec::with_capacity(m * m * m);
        let mut simpson = Vec::with_capacity(m * m * m);
        for c in 0..m {
            for b in 0..m {
                for a in 0..m {
                    nodes.push(Vec3::new(T::lit(grid[a]), T::lit(grid[b]), T::lit(grid[c])));
                    simpson.push(T::lit(simpson_1d[a] * simpson_1d[b] * simpson_1d[c]));
                }
            }
        }
        Ok(Self {
            intervals: n,
            nodes,
            simpson,
            phi_weights: w.into_iter().map(T::lit).collect(),
            grad_weights: g.into_iter().map(Vec3::from_f64).collect(),
        })
    }

    pub fn intervals_per_axis(&self) -> usize {
        self.intervals
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn reference_nodes(&self) -> &[Vec3<T>] {
        &self.nodes
    }

    pub fn simpson_weights(&self) -> &[T] {
        &self.simpson
    }

    pub fn phi_weights(&self) -> &[T] {
        &self.phi_weights
    }

    pub fn grad_weights(&self) -> &[Vec3<T>] {
        &self.grad_weights
    }

    /// Physical location of node `k` for a charge centred at `center`.
    #[inline]
    pub fn node(&self, k: usize, center: Vec3<T>, s: &SmearedCharge<T>) -> Vec3<T> {
        center + self.nodes[k] * s.radius
    }

    /// Sum of the plain Simpson weights mapped to the support box, `(2R)³`.
    pub fn box_volume(&self, s: &SmearedCharge<T>) -> T {
        let r3 = s.radius * s.radius * s.radius;
        self.simpson.iter().copied().sum::<T>() * r3
    }

    /// Plain composite Simpson approximation of `∫ f dx` over the support box.
    pub fn simpson_integral<F>(&self, center: Vec3<T>, s: &SmearedCharge<T>, mut f: F) -> T
    where
        F: FnMut(Vec3<T>) -> T,
    {
        let r3 = s.radius * s.radius * s.radius;
        let mut acc = T::zero();
        for (k, &w) in self.simpson.iter().enumerate() {
            acc += w * f(self.node(k, center, s));
        }
        acc * r3
    }
}

/// `∫ φ(x − center)·f(x) dx` for a vector-valued integrand.
pub fn weighted_integral<T, F>(
    center: Vec3<T>,
    mut integrand: F,
    s: &SmearedCharge<T>,
    rule: &QuadratureRule<T>,
) -> Vec3<T>
where
    T: Real,
    F: FnMut(Vec3<T>) -> Vec3<T>,
{
    let mut acc = Vec3::zero();
    for (k, &w) in rule.phi_weights.iter().enumerate() {
        if w != T::zero() {
            acc += integrand(rule.node(k, center, s)) * w;
        }
    }
    acc
}

/// `∫ φ(x − center)·f(x) dx` for a scalar integrand.
pub fn weighted_integral_scalar<T, F>(
    center: Vec3<T>,
    mut integrand: F,
    s: &SmearedCharge<T>,
    rule: &QuadratureRule<T>,
) -> T
where
    T: Real,
    F: FnMut(Vec3<T>) -> T,
{
    let mut acc = T::zero();
    for (k, &w) in rule.phi_weights.iter().enumerate() {
        if w != T::zero() {
            acc += integrand(rule.node(k, center, s)) * w;
        }
    }
    acc
}

/// `∫ f(x)·∇φ(x − center) dx` for a scalar integrand.
pub fn grad_weighted_integral<T, F>(
    center: Vec3<T>,
    mut integrand: F,
    s: &SmearedCharge<T>,
    rule: &QuadratureRule<T>,
) -> Vec3<T>
where
    T: Real,
    F: FnMut(Vec3<T>) -> T,
{
    let mut acc = Vec3::zero();
    for (k, g) in rule.grad_weights.iter().enumerate() {
        if g.max_abs() != T::zero() {
            acc += *g * integrand(rule.node(k, center, s));
        }
    }
    acc * (T::one() / s.radius)
}

fn grid_1d(n: usize) -> Vec<f64> {
    let h = 2.0 / n as f64;
    (0..=n).map(|a| -1.0 + a as f64 * h).collect()
}

fn simpson_weights_1d(n: usize) -> Vec<f64> {
    let h = 2.0 / n as f64;
    (0..=n)
        .map(|a| {
            let c = if a == 0 || a == n {
                1.0
            } else if a % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

/// Values of the (up to three) quadratic Lagrange basis functions that are
/// non-zero at `x`, as `(first node index, [L0, L1, L2])` on the containing panel.
fn lagrange_panel(x: f64, n: usize) -> (usize, [f64; 3]) {
    let panel_width = 4.0 / n as f64;
    let panels = n / 2;
    let p = (((x + 1.0) / panel_width).floor() as isize).clamp(0, panels as isize - 1) as usize;
    let x0 = -1.0 + p as f64 * panel_width;
    let h = panel_width / 2.0;
    let t = (x - x0) / h; // 0..2
    let l0 = 0.5 * (t - 1.0) * (t - 2.0);
    let l1 = -t * (t - 2.0);
    let l2 = 0.5 * t * (t - 1.0);
    (2 * p, [l0, l1, l2])
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton iteration on `P_m`).
fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..m {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = m as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

fn pieces(lo: f64, hi: f64, breaks: &mut Vec<f64>) -> Vec<(f64, f64)> {
    breaks.retain(|b| *b > lo && *b < hi);
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    breaks
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|(a, b)| b - a > 1e-15)
        .collect()
}

/// Product-integration weights `∫ φ̂ L_a L_b L_c` and `∫ ∇φ̂ L_a L_b L_c` over the unit ball.
///
/// Each coordinate direction is split at the panel breaks and at the points
/// where the sphere crosses them, so every piece is smooth. The innermost
/// integrand is a polynomial of degree ≤ 8 and is integrated exactly.
fn product_weights(n: usize) -> (Vec<f64>, Vec<[f64; 3]>) {
    let m = n + 1;
    let panel_width = 4.0 / n as f64;
    let panel_breaks: Vec<f64> = (0..=n / 2).map(|p| -1.0 + p as f64 * panel_width).collect();
    let c_hat = UNIT_BALL_NORMALIZATION;
    let (gx_in, gw_in) = gauss_legendre(6);
    let (gx_out, gw_out) = gauss_legendre(16);

    let mut w = vec![0.0; m * m * m];
    let mut g = vec![[0.0; 3]; m * m * m];

    let mut outer_breaks: Vec<f64> = panel_breaks.clone();
    for b in &panel_breaks {
        if b.abs() < 1.0 {
            let r = (1.0 - b * b).sqrt();
            outer_breaks.push(r);
            outer_breaks.push(-r);
        }
    }
    let outer = pieces(-1.0, 1.0, &mut outer_breaks);

    // per-node inner integrals for the current (ξ2, ξ3): [φ, ∂1φ, ∂2φ, ∂3φ]
    let mut inner = vec![[0.0f64; 4]; m];
    for &(z0, z1) in &outer {
        for (gz, gwz) in gx_out.iter().zip(&gw_out) {
            let z = 0.5 * (z0 + z1) + 0.5 * (z1 - z0) * gz;
            let wz = 0.5 * (z1 - z0) * gwz;
            let rho2 = 1.0 - z * z;
            if rho2 <= 0.0 {
                continue;
            }
            let rho = rho2.sqrt();
            let (cz, lz) = lagrange_panel(z, n);
            let mut mid_breaks: Vec<f64> = panel_breaks.clone();
            mid_breaks.push(rho);
            mid_breaks.push(-rho);
            for b in &panel_breaks {
                if b.abs() < rho {
                    let r = (rho2 - b * b).sqrt();
                    mid_breaks.push(r);
                    mid_breaks.push(-r);
                }
            }
            let middle = pieces(-rho, rho, &mut mid_breaks);
            for &(y0, y1) in &middle {
                for (gy, gwy) in gx_out.iter().zip(&gw_out) {
                    let y = 0.5 * (y0 + y1) + 0.5 * (y1 - y0) * gy;
                    let wy = 0.5 * (y1 - y0) * gwy;
                    let sig2 = rho2 - y * y;
                    if sig2 <= 0.0 {
                        continue;
                    }
                    let sig = sig2.sqrt();
                    let (cy, ly) = lagrange_panel(y, n);
                    for v in inner.iter_mut() {
                        *v = [0.0; 4];
                    }
                    let mut in_breaks: Vec<f64> = panel_breaks.clone();
                    let inner_pieces = pieces(-sig, sig, &mut in_breaks);
                    for &(x0, x1) in &inner_pieces {
                        for (gxx, gwx) in gx_in.iter().zip(&gw_in) {
                            let x = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * gxx;
                            let wx = 0.5 * (x1 - x0) * gwx;
                            let s = x * x + y * y + z * z;
                            if s >= 1.0 {
                                continue;
                            }
                            let one_m = 1.0 - s;
                            let phi = c_hat * one_m * one_m * one_m;
                            let dphi = -6.0 * c_hat * one_m * one_m;
                            let (cx, lx) = lagrange_panel(x, n);
                            for (i, l) in lx.iter().enumerate() {
                                let e = &mut inner[cx + i];
                                let f = wx * l;
                                e[0] += f * phi;
                                e[1] += f * dphi * x;
                                e[2] += f * dphi * y;
                                e[3] += f * dphi * z;
                            }
                        }
                    }
                    for (jc, lzc) in lz.iter().enumerate() {
                        for (jb, lyb) in ly.iter().enumerate() {
                            let f = wz * wy * lzc * lyb;
                            let base = ((cz + jc) * m + (cy + jb)) * m;
                            for (a, e) in inner.iter().enumerate() {
                                if e[0] == 0.0 && e[1] == 0.0 && e[2] == 0.0 && e[3] == 0.0 {
                                    continue;
                                }
                                let k = base + a;
                                w[k] += f * e[0];
                                g[k][0] += f * e[1];
                                g[k][1] += f * e[2];
                                g[k][2] += f * e[3];
                            }
                        }
                    }
                }
            }
        }
    }
    (w, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const R: f64 = 0.5e-6;

    fn radial_moment_oracle() -> f64 {
        // ∫_0^1 (1 − ρ²)³ ρ² dρ by high-order Gauss–Legendre, expect 16/315
        let (x, w) = gauss_legendre(20);
        x.iter()
            .zip(&w)
            .map(|(t, wt)| {
                let r = 0.5 * (t + 1.0);
                let v = 1.0 - r * r;
                0.5 * wt * v * v * v * r * r
            })
            .sum()
    }

    #[test]
    fn normalization_constant() {
        let m = radial_moment_oracle();
        assert_relative_eq!(m, 16.0 / 315.0, max_relative = 1e-14);
        let c = 1.0 / (4.0 * std::f64::consts::PI * m * R.powi(3));
        let s = SmearedCharge::new(R);
        assert_relative_eq!(s.norm_const, c, max_relative = 1e-13);
        assert_relative_eq!(s.phi(Vec3::zero()), c, max_relative = 1e-13);
    }

    #[test]
    fn phi_support() {
        let s = SmearedCharge::new(R);
        assert_eq!(s.phi(Vec3::new(R, 0.0, 0.0)), 0.0);
        assert_eq!(s.phi(Vec3::new(0.0, 2.0 * R, 0.0)), 0.0);
        assert_eq!(s.grad_phi(Vec3::new(0.0, 0.0, R)), Vec3::zero());
        assert_eq!(s.hess_phi(Vec3::new(0.0, 0.0, 1.5 * R)), Mat3::zero());
        assert_eq!(s.grad_phi(Vec3::zero()), Vec3::zero());
        let h0 = s.hess_phi(Vec3::zero());
        let expected = Mat3::diag(-6.0 / (R * R) * s.norm_const);
        assert!((h0 - expected).frobenius() <= 1e-14 * expected.frobenius());
    }

    #[test]
    fn phi_is_rotationally_symmetric() {
        let s = SmearedCharge::new(R);
        let a = s.phi(Vec3::new(0.3 * R, 0.4 * R, 0.0));
        let b = s.phi(Vec3::new(0.0, 0.0, 0.5 * R));
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(x in -0.55f64..0.55, y in -0.55f64..0.55, z in -0.55f64..0.55) {
            let s = SmearedCharge::new(R);
            let p = Vec3::new(x, y, z) * R;
            prop_assume!(p.norm() < 0.95 * R && p.norm() > 0.05 * R);
            let h = 1e-5 * R;
            let g = s.grad_phi(p);
            let hs = s.hess_phi(p);
            for j in 0..3 {
                let e = Vec3::unit(j) * h;
                let fd = (s.phi(p + e) - s.phi(p - e)) / (2.0 * h);
                prop_assert!((g[j] - fd).abs() <= 1e-7 * g.norm());
                let fdg = (s.grad_phi(p + e) - s.grad_phi(p - e)) * (1.0 / (2.0 * h));
                prop_assert!((hs.col(j) - fdg).norm() <= 1e-7 * hs.frobenius());
            }
        }
    }

    #[test]
    fn rule_rejects_odd_intervals() {
        assert!(QuadratureRule::<f64>::new(3).is_err());
        assert!(QuadratureRule::<f64>::new(0).is_err());
    }

    #[test]
    fn simpson_weights_cover_support_box() {
        let s = SmearedCharge::new(R);
        let rule = QuadratureRule::<f64>::new(8).unwrap();
        assert_relative_eq!(rule.box_volume(&s), (2.0 * R).powi(3), max_relative = 1e-13);
    }

    #[test]
    fn unit_and_zero_integrands() {
        let s = SmearedCharge::new(R);
        let c = Vec3::new(1e-4, -2e-4, 3e-5);
        for n in [4, 8, 16] {
            let rule = QuadratureRule::<f64>::new(n).unwrap();
            let one = weighted_integral(c, |_| Vec3::new(1.0, 0.0, 0.0), &s, &rule);
            assert!((one - Vec3::unit(0)).max_abs() < 1e-8, "n={n}: {one:?}");
            let zero = weighted_integral(c, |_| Vec3::zero(), &s, &rule);
            assert_eq!(zero, Vec3::zero());
        }
    }

    #[test]
    fn affine_integrand_reproduces_center_value() {
        let s = SmearedCharge::new(R);
        let rule = QuadratureRule::<f64>::new(8).unwrap();
        let c = Vec3::new(2e-5, 1e-5, -7e-5);
        let a = Vec3::new(0.5, -1.0, 2.0);
        let m = Mat3::from_rows([[1e5, 2e5, -3e5], [0.0, 4e5, 1e5], [-2e5, 1e5, 5e5]]);
        let got = weighted_integral(c, |x| a + m.mul_vec(x), &s, &rule);
        let expected = a + m.mul_vec(c);
        assert!((got - expected).max_abs() < 1e-9 * expected.max_abs());
    }

    #[test]
    fn gradient_weights_integrate_by_parts() {
        let s = SmearedCharge::new(R);
        let rule = QuadratureRule::<f64>::new(8).unwrap();
        let c = Vec3::new(1e-4, 0.0, -1e-4);
        let constant = grad_weighted_integral(c, |_| 3.0, &s, &rule);
        assert!(constant.max_abs() < 1e-9 / R);
        // ∫ x₁ ∇φ(x − c) dx = −e₁
        let lin = grad_weighted_integral(c, |x| x[0], &s, &rule);
        assert!((lin + Vec3::unit(0)).max_abs() < 1e-10);
    }

    #[test]
    fn odd_moments_vanish() {
        let s = SmearedCharge::new(R);
        for n in [4, 8, 16] {
            let rule = QuadratureRule::<f64>::new(n).unwrap();
            let first = weighted_integral(Vec3::zero(), |x| x, &s, &rule);
            assert!(first.max_abs() < 1e-12 * R);
        }
    }

    /// `∫ φ̂(ξ) e^{a·ξ} dξ = 4πĈ ∫₀¹ (1−ρ²)³ ρ² sinh(|a|ρ)/(|a|ρ) dρ`.
    fn exponential_moment_oracle(a: f64) -> f64 {
        let (x, w) = gauss_legendre(40);
        let s: f64 = x
            .iter()
            .zip(&w)
            .map(|(t, wt)| {
                let r = 0.5 * (t + 1.0);
                let v = 1.0 - r * r;
                0.5 * wt * v * v * v * r * r * (a * r).sinh() / (a * r)
            })
            .sum();
        4.0 * std::f64::consts::PI * UNIT_BALL_NORMALIZATION * s
    }

    #[test]
    fn quadrature_converges_at_fourth_order() {
        let s = SmearedCharge::new(1.0);
        let dir = Vec3::new(1.0, 2.0, -2.0) * (1.5 / 3.0);
        let exact = exponential_moment_oracle(dir.norm());
        let err = |n| {
            let rule = QuadratureRule::<f64>::new(n).unwrap();
            (weighted_integral_scalar(Vec3::zero(), |x| x.dot(dir).exp(), &s, &rule) - exact).abs()
        };
        // 4 intervals is pre-asymptotic; the fourth-order regime starts at 8
        let (e8, e16, e32) = (err(8), err(16), err(32));
        let r1 = e8 / e16;
        let r2 = e16 / e32;
        assert!((14.0..18.0).contains(&r1), "ratio 8→16: {r1} ({e8:e}, {e16:e})");
        assert!((14.0..18.0).contains(&r2), "ratio 16→32: {r2} ({e16:e}, {e32:e})");
    }
}
