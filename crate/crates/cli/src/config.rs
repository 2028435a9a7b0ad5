//! Run configuration. SI units throughout; unknown keys are rejected.

use std::fmt;

use beamsteer::dynamics::{ParticleState, SetupParams};
use beamsteer::kinematics::PhysicalConstants;
use beamsteer::linalg::Vec3;
use beamsteer::lw_fields::FieldSample;
use beamsteer::objective::RunningCost;
use beamsteer::optimizer::{HessianStorage, InitialHessian, OptimizerConfig};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: String,
    /// Seed for the random controls and directions of `check-gradient`.
    pub seed: u64,
    pub constants: Constants,
    pub setup: Setup,
    pub particles: Vec<Particle>,
    pub objective: ObjectiveConfig,
    pub optimizer: Optimizer,
    pub simulate: Simulate,
    pub optimize: Optimize,
    pub check_gradient: CheckGradient,
    pub convergence_study: ConvergenceStudy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Constants {
    pub c: f64,
    pub epsilon: f64,
    pub mu: f64,
    pub m0: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Setup {
    pub domain_edge: f64,
    pub nodes_per_axis: usize,
    pub inner_edge: f64,
    pub radius: f64,
    pub quadrature_intervals: usize,
    pub end_time: f64,
    pub time_step: f64,
    pub self_field: bool,
    pub external_e: [f64; 3],
    pub external_b: [f64; 3],
    pub cg_tolerance: f64,
    pub singularity_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Particle {
    pub position: [f64; 3],
    /// Velocity over c.
    pub beta: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Running {
    Zero,
    Tracking,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    /// Desired end position; when absent, the end point of a run under the
    /// uniform flux density `reference_field` is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<[f64; 3]>,
    pub reference_field: [f64; 3],
    pub tracked: usize,
    pub alpha: f64,
    pub running_cost: Running,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Storage {
    Dense,
    Limited,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HInit {
    InverseAlpha,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Optimizer {
    pub max_rounds: usize,
    pub barrier_reduction: f64,
    /// Initial barrier weight; absent means `1e-2·J(u_init)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_barrier: Option<f64>,
    pub inner_tolerance: f64,
    pub gradient_floor: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub curvature_eps: f64,
    pub position_tolerance: f64,
    pub max_inner_iterations: usize,
    pub max_iterations: usize,
    pub hessian: Storage,
    pub memory: usize,
    pub initial_hessian: HInit,
    pub scale_initial: bool,
    pub restart_each_round: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Simulate {
    /// Control CSV (`node_id,x,y,z,u`); zero control when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Snapshot {
    Iteration(usize),
    Final,
}

impl Serialize for Snapshot {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Snapshot::Iteration(i) => s.serialize_u64(*i as u64),
            Snapshot::Final => s.serialize_str("final"),
        }
    }
}

impl<'de> Deserialize<'de> for Snapshot {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Snapshot;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an iteration number or \"final\"")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Snapshot, E> {
                Ok(Snapshot::Iteration(v as usize))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Snapshot, E> {
                usize::try_from(v)
                    .map(Snapshot::Iteration)
                    .map_err(|_| E::custom("snapshot iteration must be non-negative"))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Snapshot, E> {
                if v == "final" {
                    Ok(Snapshot::Final)
                } else {
                    Err(E::custom(format!("unknown snapshot {v:?}")))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Optimize {
    pub snapshots: Vec<Snapshot>,
    /// Initial control CSV; zero control when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_control: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckGradient {
    /// Time steps of the shortened run.
    pub steps: usize,
    pub controls: usize,
    pub directions: usize,
    /// Half-width of the uniform distribution of nondimensional control values.
    pub amplitude: f64,
    pub barrier: f64,
    pub cg_tolerance: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceStudy {
    /// Mesh sizes for the harmonic `x² − y²` test on the unit cube.
    pub fem_nodes: Vec<usize>,
    /// Gyro-orbit runs: time steps [s], each covering `gyro_end_time`.
    pub gyro_time_steps: Vec<f64>,
    pub gyro_end_time: f64,
    pub gyro_field: f64,
    pub ratio_range: [f64; 2],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: "out".into(),
            seed: 1,
            constants: Constants::default(),
            setup: Setup::default(),
            particles: vec![Particle::default()],
            objective: ObjectiveConfig::default(),
            optimizer: Optimizer::default(),
            simulate: Simulate::default(),
            optimize: Optimize::default(),
            check_gradient: CheckGradient::default(),
            convergence_study: ConvergenceStudy::default(),
        }
    }
}

impl Default for Constants {
    fn default() -> Self {
        let k = PhysicalConstants::<f64>::default();
        Self { c: k.c, epsilon: k.epsilon, mu: k.mu, m0: k.m0, q: k.q }
    }
}

impl Default for Setup {
    fn default() -> Self {
        let d = SetupParams::<f64>::desk();
        Self {
            domain_edge: d.domain_edge,
            nodes_per_axis: 26,
            inner_edge: d.inner_edge,
            radius: d.radius,
            quadrature_intervals: d.quadrature_intervals,
            end_time: d.end_time,
            time_step: d.time_step,
            self_field: d.self_field,
            external_e: [0.0; 3],
            external_b: [0.0; 3],
            cg_tolerance: d.cg_tolerance,
            singularity_floor: d.singularity_floor,
        }
    }
}

impl Default for Particle {
    fn default() -> Self {
        let d = SetupParams::<f64>::desk();
        let k = d.constants;
        let s = d.initial[0];
        let beta = beamsteer::kinematics::beta(s.p, &k);
        Self { position: s.r.0, beta: beta.0 }
    }
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { target: None, reference_field: [0.0, 0.0, 0.017], tracked: 0, alpha: 1e-9, running_cost: Running::Zero }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        let o = OptimizerConfig::<f64>::default();
        Self {
            max_rounds: o.max_rounds,
            barrier_reduction: o.barrier_reduction,
            initial_barrier: o.initial_barrier,
            inner_tolerance: o.inner_tolerance,
            gradient_floor: o.gradient_floor,
            armijo_c1: o.armijo_c1,
            backtrack: o.backtrack,
            max_backtracks: o.max_backtracks,
            curvature_eps: o.curvature_eps,
            position_tolerance: o.position_tolerance,
            max_inner_iterations: o.max_inner_iterations,
            max_iterations: o.max_iterations,
            hessian: Storage::Dense,
            memory: 20,
            initial_hessian: HInit::InverseAlpha,
            scale_initial: o.scale_initial,
            restart_each_round: o.restart_each_round,
        }
    }
}

impl Default for Optimize {
    fn default() -> Self {
        let snapshots = [0, 1, 5, 20, 40].into_iter().map(Snapshot::Iteration).chain([Snapshot::Final]).collect();
        Self { snapshots, initial_control: None }
    }
}

impl Default for CheckGradient {
    fn default() -> Self {
        Self { steps: 50, controls: 3, directions: 10, amplitude: 5e-3, barrier: 1e-6, cg_tolerance: 1e-13, tolerance: 1e-5 }
    }
}

impl Default for ConvergenceStudy {
    fn default() -> Self {
        Self {
            fem_nodes: vec![9, 17],
            gyro_time_steps: vec![4e-12, 2e-12],
            gyro_end_time: 1e-9,
            gyro_field: 0.01,
            ratio_range: [3.5, 4.5],
        }
    }
}

impl RunConfig {
    /// Small steering problem on a 9³ mesh.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.setup.nodes_per_axis = 9;
        c
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn physical_constants(&self) -> PhysicalConstants<f64> {
        let c = &self.constants;
        PhysicalConstants { c: c.c, epsilon: c.epsilon, mu: c.mu, m0: c.m0, q: c.q }
    }

    pub fn setup_params(&self) -> Result<SetupParams<f64>, String> {
        let k = self.physical_constants();
        k.validate()?;
        let s = &self.setup;
        let mut initial = Vec::with_capacity(self.particles.len());
        for (i, p) in self.particles.iter().enumerate() {
            let beta = Vec3(p.beta);
            if !(beta.norm() < 1.0) {
                return Err(format!("particle {i}: |beta| must be below 1"));
            }
            initial.push(ParticleState { r: Vec3(p.position), p: k.momentum_from_beta(beta) });
        }
        Ok(SetupParams {
            constants: k,
            domain_edge: s.domain_edge,
            nodes_per_axis: s.nodes_per_axis,
            inner_edge: s.inner_edge,
            radius: s.radius,
            quadrature_intervals: s.quadrature_intervals,
            end_time: s.end_time,
            time_step: s.time_step,
            initial,
            self_field: s.self_field,
            external: FieldSample { e: Vec3(s.external_e), b: Vec3(s.external_b) },
            cg_tolerance: s.cg_tolerance,
            singularity_floor: s.singularity_floor,
            zero_charge: false,
        })
    }

    pub fn optimizer_config(&self) -> Result<OptimizerConfig<f64>, String> {
        let o = &self.optimizer;
        let cfg = OptimizerConfig {
            max_rounds: o.max_rounds,
            barrier_reduction: o.barrier_reduction,
            initial_barrier: o.initial_barrier,
            inner_tolerance: o.inner_tolerance,
            gradient_floor: o.gradient_floor,
            armijo_c1: o.armijo_c1,
            backtrack: o.backtrack,
            max_backtracks: o.max_backtracks,
            curvature_eps: o.curvature_eps,
            position_tolerance: o.position_tolerance,
            max_inner_iterations: o.max_inner_iterations,
            max_iterations: o.max_iterations,
            storage: match o.hessian {
                Storage::Dense => HessianStorage::Dense,
                Storage::Limited => HessianStorage::Limited(o.memory),
            },
            initial_hessian: match o.initial_hessian {
                HInit::InverseAlpha => InitialHessian::InverseAlpha,
                HInit::Identity => InitialHessian::Identity,
            },
            scale_initial: o.scale_initial,
            restart_each_round: o.restart_each_round,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn running_cost(&self) -> RunningCost {
        match self.objective.running_cost {
            Running::Zero => RunningCost::Zero,
            Running::Tracking => RunningCost::Tracking,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        for c in [RunConfig::default(), RunConfig::desk()] {
            let text = c.to_toml();
            assert_eq!(RunConfig::parse(&text).unwrap(), c);
        }
        let mut c = RunConfig::default();
        c.objective.target = Some([1e-5, 2e-5, 0.0]);
        c.optimizer.initial_barrier = Some(3e-7);
        c.optimize.snapshots = vec![Snapshot::Iteration(0), Snapshot::Final];
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("bogus = 1\n").is_err());
        assert!(RunConfig::parse("[setup]\nnodes = 3\n").is_err());
        assert!(RunConfig::parse("[optimize]\nsnapshots = [0, \"last\"]\n").is_err());
        let c = RunConfig::parse("[setup]\nnodes_per_axis = 9\n").unwrap();
        assert_eq!(c.setup.nodes_per_axis, 9);
        assert_eq!(c.setup.time_step, 1e-12);
    }

    #[test]
    fn full_scale_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.setup.domain_edge, 2e-3);
        assert_eq!(c.setup.inner_edge, 2e-4);
        assert_eq!(c.setup.end_time, 2e-10);
        assert_eq!(c.setup.time_step, 1e-12);
        assert_eq!(c.setup.nodes_per_axis, 26);
        assert_eq!(c.objective.alpha, 1e-9);
        assert_eq!(c.constants.c, 2.9979e8);
        assert_eq!(c.constants.m0, 9.1093e-31);
        assert_eq!(c.constants.q, 1.6021e-19);
    }
}
