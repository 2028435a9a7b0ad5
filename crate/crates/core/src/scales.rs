//! Reference scales used to present the control problem in O(1) units.
//!
//! Lengths are measured in the box edge `L`, time in the end time `T`,
//! momenta in `m0·c` and the magnetic potential in `m0·c/q`, so a
//! nondimensional potential gradient of one bends a particle of momentum
//! `m0·c` on a radius of one box edge.

use crate::dynamics::ProblemSetup;
use crate::poisson::ControlField;
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scales<T> {
    /// [m]
    pub length: T,
    /// [s]
    pub time: T,
    /// [kg·m/s]
    pub momentum: T,
    /// [T·m]
    pub potential: T,
}

impl<T: Real> Scales<T> {
    pub fn new(setup: &ProblemSetup<T>) -> Self {
        let k = &setup.constants;
        Self {
            length: setup.mesh().edge_length(),
            time: setup.end_time,
            momentum: k.momentum_scale(),
            potential: k.momentum_scale() / k.q,
        }
    }

    /// Flux density scale `m0·c/(q·L)` [T].
    pub fn field(&self) -> T {
        self.potential / self.length
    }

    pub fn control_to_si(&self, u: &[T]) -> ControlField<T> {
        ControlField { values: u.iter().map(|&v| v * self.potential).collect() }
    }

    pub fn control_from_si(&self, u: &ControlField<T>) -> Vec<T> {
        u.values.iter().map(|&v| v / self.potential).collect()
    }

    /// Boundary mass weights of the mesh in units of `L²`.
    pub fn boundary_mass(&self, setup: &ProblemSetup<T>) -> Vec<T> {
        let l2 = self.length * self.length;
        setup.mesh().boundary_mass().into_iter().map(|m| m / l2).collect()
    }
}
