//! Kinodynamic model of a wheeled quadruped: a single rigid body at the COM
//! plus per-leg joint kinematics ending in a wheel treated as a locked joint.
//!
//! State layout (24): `[theta(3), p(3), omega(3), v(3), q_j(12)]`, with
//! `theta` Z-Y-X Euler angles stored as `(roll, pitch, yaw)`, `p` in world
//! frame and `omega`, `v` in torso frame.
//!
//! Input layout (24): `[lambda_E(12), u_j(12)]`, contact forces in world
//! frame (force of the ground on the robot) and joint velocities.

mod dynamics;
mod kinematics;

pub use dynamics::{
    euler_rate_matrix, euler_rate_transform, srbd_derivative, srbd_flow, srbd_flow_with_jacobians,
};
pub use kinematics::{contact_jacobian, contact_velocity, forward_kinematics, LegKinematics};
pub(crate) use kinematics::contact_velocity_generic;

use std::fmt;

use nalgebra::{DVector, Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

pub const N_LEGS: usize = 4;
pub const N_JOINTS: usize = 12;
pub const STATE_DIM: usize = 12 + N_JOINTS;
pub const INPUT_DIM: usize = 3 * N_LEGS + N_JOINTS;

/// Offsets into the state and input vectors.
pub mod idx {
    pub const THETA: usize = 0;
    pub const POS: usize = 3;
    pub const OMEGA: usize = 6;
    pub const VEL: usize = 9;
    pub const JOINTS: usize = 12;
    pub const FORCES: usize = 0;
    pub const JOINT_VEL: usize = 12;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Leg {
    LF,
    RF,
    LH,
    RH,
}

impl Leg {
    pub const ALL: [Leg; N_LEGS] = [Leg::LF, Leg::RF, Leg::LH, Leg::RH];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Leg {
        Leg::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Leg::LF => "LF",
            Leg::RF => "RF",
            Leg::LH => "LH",
            Leg::RH => "RH",
        }
    }

    /// Legs sharing a side or an end of the torso with this one.
    pub fn neighbors(self) -> [Leg; 2] {
        match self {
            Leg::LF => [Leg::RF, Leg::LH],
            Leg::RF => [Leg::LF, Leg::RH],
            Leg::LH => [Leg::LF, Leg::RH],
            Leg::RH => [Leg::RF, Leg::LH],
        }
    }

    pub fn diagonal(self) -> Leg {
        match self {
            Leg::LF => Leg::RH,
            Leg::RF => Leg::LH,
            Leg::LH => Leg::RF,
            Leg::RH => Leg::LF,
        }
    }

    pub fn is_front(self) -> bool {
        matches!(self, Leg::LF | Leg::RF)
    }

    pub fn is_left(self) -> bool {
        matches!(self, Leg::LF | Leg::LH)
    }

    /// First index of this leg's joints in `q_j` / `u_j`, and of its force in `lambda_E`.
    pub fn joint_offset(self) -> usize {
        3 * self.index()
    }
}

impl fmt::Display for Leg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mass, inertia and kinematic tree of the robot. All lengths in metres,
/// angles in radians, mass in kilograms.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub mass: f64,
    /// COM inertia at the nominal configuration, torso frame (kg m^2).
    pub inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
    /// HAA joint positions relative to the COM, torso frame, order LF, RF, LH, RH.
    pub hip_offsets: [Vector3<f64>; N_LEGS],
    pub thigh_length: f64,
    pub shank_length: f64,
    pub wheel_radius: f64,
    /// Symmetric limits for (HAA, HFE, KFE).
    pub joint_limits: [f64; 3],
    /// Nominal (HAA, HFE, KFE) per leg.
    pub nominal_joints: [[f64; 3]; N_LEGS],
    /// Magnitude of gravitational acceleration (m/s^2).
    pub gravity: f64,
    /// Minimum distance of the pitch angle from +/- pi/2.
    pub euler_margin: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        let front = [0.0, 0.6, -1.2];
        let hind = [0.0, -0.6, 1.2];
        RobotModel::new(
            50.0,
            Matrix3::from_diagonal(&Vector3::new(0.9, 1.9, 2.1)),
            [
                Vector3::new(0.3, 0.2, 0.0),
                Vector3::new(0.3, -0.2, 0.0),
                Vector3::new(-0.3, 0.2, 0.0),
                Vector3::new(-0.3, -0.2, 0.0),
            ],
            0.3125,
            0.3125,
            0.1,
        )
        .map(|m| RobotModel {
            nominal_joints: [front, front, hind, hind],
            ..m
        })
        .expect("default model parameters are valid")
    }
}

impl RobotModel {
    pub fn new(
        mass: f64,
        inertia: Matrix3<f64>,
        hip_offsets: [Vector3<f64>; N_LEGS],
        thigh_length: f64,
        shank_length: f64,
        wheel_radius: f64,
    ) -> Result<Self, ModelError> {
        if !(mass > 0.0) {
            return Err(ModelError::Invalid(format!("mass must be positive, got {mass}")));
        }
        if (inertia - inertia.transpose()).norm() > 1e-12 * inertia.norm().max(1.0) {
            return Err(ModelError::Invalid("inertia must be symmetric".into()));
        }
        if inertia.cholesky().is_none() {
            return Err(ModelError::Invalid("inertia must be positive definite".into()));
        }
        if !(thigh_length > 0.0 && shank_length > 0.0 && wheel_radius > 0.0) {
            return Err(ModelError::Invalid("link lengths and wheel radius must be positive".into()));
        }
        let inertia_inv = inertia.try_inverse().expect("positive definite inertia is invertible");
        Ok(RobotModel {
            mass,
            inertia,
            inertia_inv,
            hip_offsets,
            thigh_length,
            shank_length,
            wheel_radius,
            joint_limits: [2.9, 4.0, 4.0],
            nominal_joints: [[0.0, 0.6, -1.2]; N_LEGS],
            gravity: 9.81,
            euler_margin: 1e-3,
        })
    }

    pub fn inertia_inverse(&self) -> &Matrix3<f64> {
        &self.inertia_inv
    }

    /// Hip-to-contact distance with the knee fully extended.
    pub fn leg_length(&self) -> f64 {
        self.thigh_length + self.shank_length
    }

    /// Returns a copy with the mass scaled, inertia scaled alongside.
    pub fn with_mass_scale(&self, factor: f64) -> RobotModel {
        let mut m = self.clone();
        m.mass *= factor;
        m.inertia *= factor;
        m.inertia_inv = m.inertia.try_inverse().expect("scaled inertia stays invertible");
        m
    }

    pub fn nominal_joint_vector(&self) -> SVector<f64, N_JOINTS> {
        SVector::from_fn(|i, _| self.nominal_joints[i / 3][i % 3])
    }

    pub fn check_joint_limits(&self, q: &SVector<f64, N_JOINTS>) -> Result<(), ModelError> {
        for leg in Leg::ALL {
            for j in 0..3 {
                let value = q[leg.joint_offset() + j];
                let limit = self.joint_limits[j];
                if value.abs() > limit {
                    return Err(ModelError::JointLimit { leg, joint: j, value, limit });
                }
            }
        }
        Ok(())
    }

    /// Torso height above the terrain plane that puts the nominal wheels on it.
    pub fn nominal_height(&self, terrain: &Terrain) -> f64 {
        let q = self.nominal_joint_vector();
        let mut sum = 0.0;
        for leg in Leg::ALL {
            let o = leg.joint_offset();
            let center = kinematics::wheel_center_body(self, leg, [q[o], q[o + 1], q[o + 2]]);
            sum += terrain.normal.dot(&math_re(center));
        }
        let mean = sum / N_LEGS as f64;
        (terrain.offset + self.wheel_radius - mean) / terrain.normal[2]
    }

    /// Standing state at the given planar pose with nominal joints.
    pub fn nominal_state(&self, terrain: &Terrain, x: f64, y: f64, yaw: f64) -> State {
        State {
            theta: Vector3::new(0.0, 0.0, yaw),
            p: Vector3::new(x, y, self.nominal_height(terrain)),
            omega: Vector3::zeros(),
            v: Vector3::zeros(),
            q: self.nominal_joint_vector(),
        }
    }

    /// Contact points of the nominal stance relative to the torso, expressed
    /// in the yaw-aligned frame (flat ground).
    pub fn nominal_contact_offsets(&self) -> [Vector3<f64>; N_LEGS] {
        let q = self.nominal_joint_vector();
        let mut out = [Vector3::zeros(); N_LEGS];
        for leg in Leg::ALL {
            let o = leg.joint_offset();
            let center = kinematics::wheel_center_body(self, leg, [q[o], q[o + 1], q[o + 2]]);
            out[leg.index()] = math_re(center) - Vector3::new(0.0, 0.0, self.wheel_radius);
        }
        out
    }
}

fn math_re(v: [f64; 3]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

/// Planar terrain `normal . r = offset` with Coulomb friction.
#[derive(Debug, Clone, PartialEq)]
pub struct Terrain {
    pub normal: Vector3<f64>,
    pub mu: f64,
    pub offset: f64,
}

impl Terrain {
    pub fn new(normal: Vector3<f64>, mu: f64, offset: f64) -> Result<Self, ModelError> {
        let n = normal.norm();
        if !(n > 0.0) {
            return Err(ModelError::Invalid("terrain normal must be non-zero".into()));
        }
        if !(mu > 0.0) {
            return Err(ModelError::Invalid(format!("friction coefficient must be positive, got {mu}")));
        }
        Ok(Terrain { normal: normal / n, mu, offset })
    }

    pub fn flat(mu: f64) -> Self {
        Terrain { normal: Vector3::z(), mu, offset: 0.0 }
    }

    /// Orthonormal surface frame `(t1, t2, n)` as matrix rows.
    pub fn surface_frame(&self) -> Matrix3<f64> {
        let n = self.normal;
        let seed = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let t1 = (seed - n * seed.dot(&n)).normalize();
        let t2 = n.cross(&t1);
        Matrix3::from_rows(&[t1.transpose(), t2.transpose(), n.transpose()])
    }

    pub fn height_above(&self, point: &Vector3<f64>) -> f64 {
        self.normal.dot(point) - self.offset
    }
}

impl Default for Terrain {
    fn default() -> Self {
        Terrain::flat(0.7)
    }
}

/// Robot state; see the module docs for frames.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub theta: Vector3<f64>,
    pub p: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
    pub q: SVector<f64, N_JOINTS>,
}

impl State {
    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(STATE_DIM);
        x.fixed_rows_mut::<3>(idx::THETA).copy_from(&self.theta);
        x.fixed_rows_mut::<3>(idx::POS).copy_from(&self.p);
        x.fixed_rows_mut::<3>(idx::OMEGA).copy_from(&self.omega);
        x.fixed_rows_mut::<3>(idx::VEL).copy_from(&self.v);
        x.fixed_rows_mut::<N_JOINTS>(idx::JOINTS).copy_from(&self.q);
        x
    }

    pub fn from_slice(x: &[f64]) -> Result<Self, ModelError> {
        if x.len() != STATE_DIM {
            return Err(ModelError::Dimension { expected: STATE_DIM, got: x.len() });
        }
        Ok(State {
            theta: Vector3::from_column_slice(&x[idx::THETA..idx::THETA + 3]),
            p: Vector3::from_column_slice(&x[idx::POS..idx::POS + 3]),
            omega: Vector3::from_column_slice(&x[idx::OMEGA..idx::OMEGA + 3]),
            v: Vector3::from_column_slice(&x[idx::VEL..idx::VEL + 3]),
            q: SVector::from_column_slice(&x[idx::JOINTS..idx::JOINTS + N_JOINTS]),
        })
    }

    pub fn leg_joints(&self, leg: Leg) -> [f64; 3] {
        let o = leg.joint_offset();
        [self.q[o], self.q[o + 1], self.q[o + 2]]
    }
}

/// Control input: world-frame contact forces and joint velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    pub forces: [Vector3<f64>; N_LEGS],
    pub joint_velocities: SVector<f64, N_JOINTS>,
}

impl ControlInput {
    pub fn zero() -> Self {
        ControlInput { forces: [Vector3::zeros(); N_LEGS], joint_velocities: SVector::zeros() }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut u = DVector::zeros(INPUT_DIM);
        for leg in Leg::ALL {
            u.fixed_rows_mut::<3>(idx::FORCES + leg.joint_offset())
                .copy_from(&self.forces[leg.index()]);
        }
        u.fixed_rows_mut::<N_JOINTS>(idx::JOINT_VEL).copy_from(&self.joint_velocities);
        u
    }

    pub fn from_slice(u: &[f64]) -> Result<Self, ModelError> {
        if u.len() != INPUT_DIM {
            return Err(ModelError::Dimension { expected: INPUT_DIM, got: u.len() });
        }
        let mut forces = [Vector3::zeros(); N_LEGS];
        for leg in Leg::ALL {
            let o = idx::FORCES + leg.joint_offset();
            forces[leg.index()] = Vector3::from_column_slice(&u[o..o + 3]);
        }
        Ok(ControlInput {
            forces,
            joint_velocities: SVector::from_column_slice(&u[idx::JOINT_VEL..idx::JOINT_VEL + N_JOINTS]),
        })
    }
}
