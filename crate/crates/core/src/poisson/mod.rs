//! Trilinear finite elements for the Laplace equation with Dirichlet data on
//! the boundary of a cube.

mod mesh;
pub mod sparse;

use rayon::prelude::*;

pub use mesh::{build_mesh, trilinear_shape, CellLocation, HexMesh};
use sparse::{pcg, CsrMatrix, Ilu0};

use crate::linalg::Vec3;
use crate::smeared_charge::{grad_weighted_integral, QuadratureRule, SmearedCharge};
use crate::{Error, Real, Result};

pub const DEFAULT_CG_TOLERANCE: f64 = 1e-10;

/// Dirichlet values on the boundary nodes, ordered like [`HexMesh::boundary_nodes`].
#[derive(Clone, Debug, PartialEq)]
pub struct ControlField<T> {
    pub values: Vec<T>,
}

impl<T: Real> ControlField<T> {
    pub fn zeros(mesh: &HexMesh<T>) -> Self {
        Self { values: vec![T::zero(); mesh.boundary_nodes().len()] }
    }

    pub fn from_fn(mesh: &HexMesh<T>, mut f: impl FnMut(Vec3<T>) -> T) -> Self {
        let values = mesh.boundary_nodes().iter().map(|&i| f(mesh.node_coords(i))).collect();
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoissonSolution<T> {
    /// Nodal values on every mesh node.
    pub eta: Vec<T>,
    pub iterations: usize,
    pub relative_residual: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransposeSolution<T> {
    /// `A_II⁻ᵀ w_I`.
    pub interior: Vec<T>,
    /// Derivative of `⟨w, η(u)⟩` with respect to each boundary value.
    pub boundary_sensitivity: Vec<T>,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct StiffnessSystem<T> {
    mesh: HexMesh<T>,
    full: CsrMatrix<T>,
    a_ii: CsrMatrix<T>,
    a_ib: CsrMatrix<T>,
    ilu: Ilu0<T>,
    max_iterations: usize,
}

/// Stiffness matrix of the unit cube element, `∫ ∇N_a·∇N_b`, by 2×2×2 Gauss.
fn reference_stiffness<T: Real>() -> [[T; 8]; 8] {
    let g = T::lit(0.5) - T::lit(0.5) / T::lit(3.0).sqrt();
    let pts = [g, T::one() - g];
    let w = T::lit(0.125);
    let mut k = [[T::zero(); 8]; 8];
    for &x in &pts {
        for &y in &pts {
            for &z in &pts {
                let (_, grads) = trilinear_shape(Vec3::new(x, y, z));
                for a in 0..8 {
                    for b in 0..8 {
                        k[a][b] += w * grads[a].dot(grads[b]);
                    }
                }
            }
        }
    }
    k
}

pub fn assemble<T: Real>(mesh: HexMesh<T>) -> Result<StiffnessSystem<T>> {
    let kref = reference_stiffness::<T>();
    // physical element matrix: ∇ scales with 1/h, volume with h³
    let h = mesh.spacing();
    let triplets: Vec<(usize, usize, T)> = (0..mesh.num_elements())
        .into_par_iter()
        .flat_map_iter(|e| {
            let nodes = mesh.element_nodes(e);
            (0..64).map(move |ab| {
                let (a, b) = (ab / 8, ab % 8);
                (nodes[a], nodes[b], kref[a][b] * h)
            })
        })
        .collect();

    let nn = mesh.num_nodes();
    let (ni, nb) = (mesh.interior_nodes().len(), mesh.boundary_nodes().len());
    let mut tii = Vec::new();
    let mut tib = Vec::new();
    for &(r, c, v) in &triplets {
        if mesh.is_boundary(r) {
            continue;
        }
        let (sr, sc) = (mesh.slot(r), mesh.slot(c));
        if mesh.is_boundary(c) {
            tib.push((sr, sc, v));
        } else {
            tii.push((sr, sc, v));
        }
    }
    let full = CsrMatrix::from_triplets(nn, nn, triplets);
    let a_ii = CsrMatrix::from_triplets(ni, ni, tii);
    let a_ib = CsrMatrix::from_triplets(ni, nb, tib);
    let ilu = Ilu0::new(&a_ii)?;
    let max_iterations = (1000.0 * (ni.max(1) as f64).cbrt()).ceil() as usize;
    Ok(StiffnessSystem { mesh, full, a_ii, a_ib, ilu, max_iterations })
}

impl<T: Real> StiffnessSystem<T> {
    pub fn mesh(&self) -> &HexMesh<T> {
        &self.mesh
    }

    /// Stiffness matrix over all nodes, before the Dirichlet split.
    pub fn full_matrix(&self) -> &CsrMatrix<T> {
        &self.full
    }

    pub fn interior_block(&self) -> &CsrMatrix<T> {
        &self.a_ii
    }

    pub fn coupling_block(&self) -> &CsrMatrix<T> {
        &self.a_ib
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    pub fn set_max_iterations(&mut self, n: usize) {
        self.max_iterations = n;
    }

    /// Solves `A_II x = b` by ILU(0)-preconditioned CG from a zero start.
    pub fn solve_interior(&self, b: &[T], tol: T) -> Result<(Vec<T>, usize, T)> {
        let mut x = vec![T::zero(); b.len()];
        let rep = pcg(&self.a_ii, &self.ilu, b, &mut x, tol, self.max_iterations)?;
        Ok((x, rep.iterations, rep.relative_residual))
    }
}

fn check_tol<T: Real>(tol: T) -> Result<()> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidConfig("linear solver tolerance must be positive".into()));
    }
    Ok(())
}

/// Discrete harmonic extension of the boundary data `u`.
pub fn solve<T: Real>(sys: &StiffnessSystem<T>, u: &ControlField<T>, tol: T) -> Result<PoissonSolution<T>> {
    check_tol(tol)?;
    let mesh = &sys.mesh;
    let nb = mesh.boundary_nodes().len();
    if u.len() != nb {
        return Err(Error::ControlLength { expected: nb, got: u.len() });
    }
    let rhs: Vec<T> = sys.a_ib.mul_vec(&u.values).into_iter().map(|v| -v).collect();
    let (x, iterations, relative_residual) = sys.solve_interior(&rhs, tol)?;
    let mut eta = vec![T::zero(); mesh.num_nodes()];
    for (s, &idx) in mesh.boundary_nodes().iter().enumerate() {
        eta[idx] = u.values[s];
    }
    for (s, &idx) in mesh.interior_nodes().iter().enumerate() {
        eta[idx] = x[s];
    }
    Ok(PoissonSolution { eta, iterations, relative_residual })
}

/// Pulls a nodal weight vector `w` back through [`solve`]: the returned
/// sensitivity `g` satisfies `⟨w, η(u)⟩ = ⟨g, u⟩`.
pub fn solve_transpose<T: Real>(sys: &StiffnessSystem<T>, w: &[T], tol: T) -> Result<TransposeSolution<T>> {
    check_tol(tol)?;
    let mesh = &sys.mesh;
    if w.len() != mesh.num_nodes() {
        return Err(Error::ControlLength { expected: mesh.num_nodes(), got: w.len() });
    }
    let wi: Vec<T> = mesh.interior_nodes().iter().map(|&i| w[i]).collect();
    // A_II is symmetric, so its transpose solve is the forward solve
    let (lambda, iterations, _) = sys.solve_interior(&wi, tol)?;
    let coupled = sys.a_ib.tr_mul_vec(&lambda);
    let boundary_sensitivity = mesh
        .boundary_nodes()
        .iter()
        .zip(coupled)
        .map(|(&i, c)| w[i] - c)
        .collect();
    Ok(TransposeSolution { interior: lambda, boundary_sensitivity, iterations })
}

/// Trilinear interpolation of nodal data at `x`.
pub fn eval_eta<T: Real>(sol: &PoissonSolution<T>, mesh: &HexMesh<T>, x: Vec3<T>) -> Result<T> {
    eval_nodal(&sol.eta, mesh, x)
}

pub fn eval_nodal<T: Real>(values: &[T], mesh: &HexMesh<T>, x: Vec3<T>) -> Result<T> {
    let loc = mesh.locate(x)?;
    let (n, _) = trilinear_shape(loc.local);
    Ok(loc.nodes.iter().zip(n).fold(T::zero(), |s, (&i, w)| s + values[i] * w))
}

/// Trilinear interpolant and its (piecewise constant in one direction) gradient at `x`.
pub fn eval_nodal_gradient<T: Real>(values: &[T], mesh: &HexMesh<T>, x: Vec3<T>) -> Result<(T, Vec3<T>)> {
    let loc = mesh.locate(x)?;
    let (n, g) = trilinear_shape(loc.local);
    let mut v = T::zero();
    let mut grad = Vec3::zero();
    for a in 0..8 {
        let eta = values[loc.nodes[a]];
        v += n[a] * eta;
        grad += g[a] * eta;
    }
    Ok((v, grad * (T::one() / mesh.spacing())))
}

/// `∫ η(x)·∇φ(x − center) dx`; for `η = x₁` this is `−e₁`.
pub fn eta_gradphi_moment<T: Real>(
    sol: &PoissonSolution<T>,
    mesh: &HexMesh<T>,
    s: &SmearedCharge<T>,
    rule: &QuadratureRule<T>,
    center: Vec3<T>,
) -> Result<Vec3<T>> {
    nodal_gradphi_moment(&sol.eta, mesh, s, rule, center)
}

pub fn nodal_gradphi_moment<T: Real>(
    values: &[T],
    mesh: &HexMesh<T>,
    s: &SmearedCharge<T>,
    rule: &QuadratureRule<T>,
    center: Vec3<T>,
) -> Result<Vec3<T>> {
    if !mesh.contains_cube(center, s.radius) {
        let [x, y, z] = center.to_f64();
        return Err(Error::OutOfDomain { x, y, z });
    }
    let mut err = None;
    let m = grad_weighted_integral(
        center,
        |x| match eval_nodal(values, mesh, x) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                T::zero()
            }
        },
        s,
        rule,
    );
    match err {
        Some(e) => Err(e),
        None => Ok(m),
    }
}

/// `∮ u(x)·φ(x − center)·n(x) ds` over the faces of the mesh box, with `u`
/// interpolated bilinearly from the boundary nodes of `sol`.
///
/// Composite Simpson over each face's intersection with the support square;
/// identically zero while the support ball keeps away from the boundary.
pub fn boundary_flux_moment<T: Real>(
    sol: &PoissonSolution<T>,
    mesh: &HexMesh<T>,
    s: &SmearedCharge<T>,
    rule: &QuadratureRule<T>,
    center: Vec3<T>,
) -> Result<Vec3<T>> {
    nodal_boundary_flux_moment(&sol.eta, mesh, s, rule, center)
}

pub fn nodal_boundary_flux_moment<T: Real>(
    values: &[T],
    mesh: &HexMesh<T>,
    s: &SmearedCharge<T>,
    rule: &QuadratureRule<T>,
    center: Vec3<T>,
) -> Result<Vec3<T>> {
    let r = s.radius;
    let lo = mesh.origin();
    let hi = lo + Vec3::splat(mesh.edge_length());
    let m = rule.intervals_per_axis();
    let step = T::lit(2.0) * r / T::from_usize_lossy(m);
    let simpson = |i: usize| -> T {
        if i == 0 || i == m {
            T::one()
        } else if i % 2 == 1 {
            T::lit(4.0)
        } else {
            T::lit(2.0)
        }
    };
    let mut acc = Vec3::zero();
    for axis in 0..3 {
        for (plane, sign) in [(lo[axis], -T::one()), (hi[axis], T::one())] {
            if (center[axis] - plane).abs() >= r {
                continue;
            }
            let (t1, t2) = ((axis + 1) % 3, (axis + 2) % 3);
            let mut sum = T::zero();
            for i in 0..=m {
                for j in 0..=m {
                    let mut x = center;
                    x[axis] = plane;
                    x[t1] = center[t1] - r + step * T::from_usize_lossy(i);
                    x[t2] = center[t2] - r + step * T::from_usize_lossy(j);
                    if x[t1] < lo[t1] || x[t1] > hi[t1] || x[t2] < lo[t2] || x[t2] > hi[t2] {
                        continue;
                    }
                    let phi = s.phi(x - center);
                    if phi == T::zero() {
                        continue;
                    }
                    sum += simpson(i) * simpson(j) * phi * eval_nodal(values, mesh, x)?;
                }
            }
            let w = step * step / T::lit(9.0);
            acc[axis] += sign * sum * w;
        }
    }
    Ok(acc)
}

/// `L²(Ω)` norm of `η_h − exact`, by 3×3×3 Gauss per element.
pub fn l2_error<T: Real>(sol: &PoissonSolution<T>, mesh: &HexMesh<T>, exact: impl Fn(Vec3<T>) -> T) -> T {
    let r = (T::lit(0.6)).sqrt();
    let half = T::lit(0.5);
    let pts = [half - half * r, half, half + half * r];
    let wts = [T::lit(5.0 / 18.0), T::lit(8.0 / 18.0), T::lit(5.0 / 18.0)];
    let h = mesh.spacing();
    let vol = h * h * h;
    let mut acc = T::zero();
    for e in 0..mesh.num_elements() {
        let nodes = mesh.element_nodes(e);
        let base = mesh.node_coords(nodes[0]);
        for (a, &x) in pts.iter().enumerate() {
            for (b, &y) in pts.iter().enumerate() {
                for (c, &z) in pts.iter().enumerate() {
                    let t = Vec3::new(x, y, z);
                    let (n, _) = trilinear_shape(t);
                    let uh = nodes.iter().zip(n).fold(T::zero(), |s, (&i, w)| s + sol.eta[i] * w);
                    let d = uh - exact(base + t * h);
                    acc += wts[a] * wts[b] * wts[c] * d * d;
                }
            }
        }
    }
    (acc * vol).sqrt()
}
