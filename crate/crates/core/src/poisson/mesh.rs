use crate::linalg::Vec3;
use crate::{Error, Real, Result};

/// Uniform hexahedral mesh of the cube `[−L/2, L/2]³`.
///
/// Nodes are numbered lexicographically with the first axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct HexMesh<T> {
    nodes_per_axis: usize,
    edge_length: T,
    spacing: T,
    origin: Vec3<T>,
    boundary: Vec<usize>,
    interior: Vec<usize>,
    slot: Vec<usize>,
    on_boundary: Vec<bool>,
}

/// Element containing a point, with the point's local coordinates in `[0, 1]³`.
#[derive(Clone, Copy, Debug)]
pub struct CellLocation<T> {
    pub nodes: [usize; 8],
    pub local: Vec3<T>,
}

pub fn build_mesh<T: Real>(nodes_per_axis: usize, edge_length: T) -> Result<HexMesh<T>> {
    if nodes_per_axis < 2 {
        return Err(Error::InvalidMesh(format!(
            "need at least 2 nodes per axis, got {nodes_per_axis}"
        )));
    }
    if !(edge_length.is_finite() && edge_length > T::zero()) {
        return Err(Error::InvalidMesh("edge length must be finite and positive".into()));
    }
    let n = nodes_per_axis;
    let total = n * n * n;
    let mut boundary = Vec::new();
    let mut interior = Vec::new();
    let mut slot = vec![0; total];
    let mut on_boundary = vec![false; total];
    for idx in 0..total {
        let (i, j, k) = (idx % n, (idx / n) % n, idx / (n * n));
        let b = [i, j, k].iter().any(|&a| a == 0 || a == n - 1);
        on_boundary[idx] = b;
        if b {
            slot[idx] = boundary.len();
            boundary.push(idx);
        } else {
            slot[idx] = interior.len();
            interior.push(idx);
        }
    }
    let half = edge_length * T::lit(0.5);
    Ok(HexMesh {
        nodes_per_axis: n,
        edge_length,
        spacing: edge_length / T::from_usize_lossy(n - 1),
        origin: Vec3::splat(-half),
        boundary,
        interior,
        slot,
        on_boundary,
    })
}

impl<T: Real> HexMesh<T> {
    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn num_nodes(&self) -> usize {
        self.slot.len()
    }

    pub fn num_elements(&self) -> usize {
        let m = self.nodes_per_axis - 1;
        m * m * m
    }

    pub fn edge_length(&self) -> T {
        self.edge_length
    }

    /// Node spacing `h`.
    pub fn spacing(&self) -> T {
        self.spacing
    }

    /// Lower corner of the box.
    pub fn origin(&self) -> Vec3<T> {
        self.origin
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.nodes_per_axis;
        i + n * (j + n * k)
    }

    pub fn node_ijk(&self, idx: usize) -> [usize; 3] {
        let n = self.nodes_per_axis;
        [idx % n, (idx / n) % n, idx / (n * n)]
    }

    pub fn node_coords(&self, idx: usize) -> Vec3<T> {
        let [i, j, k] = self.node_ijk(idx);
        let h = self.spacing;
        self.origin
            + Vec3::new(
                h * T::from_usize_lossy(i),
                h * T::from_usize_lossy(j),
                h * T::from_usize_lossy(k),
            )
    }

    /// Global indices of the boundary nodes, ascending.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    /// Global indices of the interior nodes, ascending.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.on_boundary[idx]
    }

    /// Position of a node within the boundary or interior list.
    pub fn slot(&self, idx: usize) -> usize {
        self.slot[idx]
    }

    /// Element `e` has lower corner node `(i, j, k)` with `e = i + m(j + m k)`, `m = n − 1`.
    /// Local node `a` sits at offset `(a & 1, (a >> 1) & 1, (a >> 2) & 1)`.
    pub fn element_nodes(&self, e: usize) -> [usize; 8] {
        let m = self.nodes_per_axis - 1;
        let (i, j, k) = (e % m, (e / m) % m, e / (m * m));
        std::array::from_fn(|a| self.node_index(i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1)))
    }

    pub fn contains(&self, x: Vec3<T>) -> bool {
        let tol = self.edge_length * T::lit(1e-12);
        (0..3).all(|a| x[a] >= self.origin[a] - tol && x[a] <= self.origin[a] + self.edge_length + tol)
    }

    /// True when the axis-aligned cube of half-width `half` around `center` lies in the box.
    pub fn contains_cube(&self, center: Vec3<T>, half: T) -> bool {
        self.contains(center - Vec3::splat(half)) && self.contains(center + Vec3::splat(half))
    }

    pub fn locate(&self, x: Vec3<T>) -> Result<CellLocation<T>> {
        if !self.contains(x) {
            let [a, b, c] = x.to_f64();
            return Err(Error::OutOfDomain { x: a, y: b, z: c });
        }
        let m = self.nodes_per_axis - 1;
        let mut cell = [0usize; 3];
        let mut local = Vec3::zero();
        for a in 0..3 {
            let s = ((x[a] - self.origin[a]) / self.spacing).max(T::zero());
            let i = s.floor().to_usize().unwrap_or(0).min(m - 1);
            cell[a] = i;
            local[a] = (s - T::from_usize_lossy(i)).min(T::one());
        }
        let e = cell[0] + m * (cell[1] + m * cell[2]);
        Ok(CellLocation { nodes: self.element_nodes(e), local })
    }

    /// Lumped boundary mass: `h²` on faces, `h²/2` on edges, `h²/4` at corners,
    /// ordered like [`Self::boundary_nodes`].
    pub fn boundary_mass(&self) -> Vec<T> {
        let n = self.nodes_per_axis;
        let h2 = self.spacing * self.spacing;
        self.boundary
            .iter()
            .map(|&idx| {
                let on = self.node_ijk(idx).iter().filter(|&&a| a == 0 || a == n - 1).count();
                match on {
                    1 => h2,
                    2 => h2 * T::lit(0.5),
                    _ => h2 * T::lit(0.25),
                }
            })
            .collect()
    }
}

/// Trilinear shape functions and their gradients with respect to local coordinates.
pub fn trilinear_shape<T: Real>(t: Vec3<T>) -> ([T; 8], [Vec3<T>; 8]) {
    let one = T::one();
    let f = |bit: usize, s: T| if bit == 1 { s } else { one - s };
    let df = |bit: usize| if bit == 1 { one } else { -one };
    let mut n = [T::zero(); 8];
    let mut g = [Vec3::zero(); 8];
    for a in 0..8 {
        let (bx, by, bz) = (a & 1, (a >> 1) & 1, (a >> 2) & 1);
        let (fx, fy, fz) = (f(bx, t[0]), f(by, t[1]), f(bz, t[2]));
        n[a] = fx * fy * fz;
        g[a] = Vec3::new(df(bx) * fy * fz, fx * df(by) * fz, fx * fy * df(bz));
    }
    (n, g)
}
