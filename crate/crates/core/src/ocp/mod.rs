//! Optimal control problem of the wheeled quadruped: tracking cost, rolling
//! and swing equalities bound to a contact schedule, and friction cones.

mod constraints;

pub use constraints::{
    friction_cone, friction_cone_derivatives, stance_constraints, swing_constraints, SwingProfile,
};

use nalgebra::{DMatrix, DVector, Vector3};
use num_dual::Dual64;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, OcpError};
use crate::gait::{ModeSchedule, ReferenceTrajectory};
use crate::math;
use crate::model::{
    contact_jacobian, forward_kinematics, idx, srbd_flow, srbd_flow_with_jacobians, Leg, RobotModel, State, Terrain, INPUT_DIM,
    N_JOINTS, STATE_DIM,
};
use crate::solver::{ConstraintLinearization, CostQuadratic, OptimalControlProblem};
use constraints::{stance_residual, swing_residual};

/// Diagonal tracking weights per state and input group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub orientation: f64,
    pub position: f64,
    pub angular_rate: f64,
    pub linear_velocity: f64,
    pub joint_position: f64,
    pub force: f64,
    pub joint_velocity: f64,
    /// Terminal weight is this multiple of the state weight.
    pub terminal_scale: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            orientation: 100.0,
            position: 200.0,
            angular_rate: 5.0,
            linear_velocity: 10.0,
            joint_position: 5.0,
            force: 1e-3,
            joint_velocity: 0.1,
            terminal_scale: 10.0,
        }
    }
}

impl CostConfig {
    pub fn weights(&self) -> Result<CostWeights, OcpError> {
        let mut q = DVector::zeros(STATE_DIM);
        q.fixed_rows_mut::<3>(idx::THETA).fill(self.orientation);
        q.fixed_rows_mut::<3>(idx::POS).fill(self.position);
        q.fixed_rows_mut::<3>(idx::OMEGA).fill(self.angular_rate);
        q.fixed_rows_mut::<3>(idx::VEL).fill(self.linear_velocity);
        q.fixed_rows_mut::<N_JOINTS>(idx::JOINTS).fill(self.joint_position);
        let mut r = DVector::zeros(INPUT_DIM);
        r.fixed_rows_mut::<12>(idx::FORCES).fill(self.force);
        r.fixed_rows_mut::<N_JOINTS>(idx::JOINT_VEL).fill(self.joint_velocity);
        CostWeights::new(
            DMatrix::from_diagonal(&q),
            DMatrix::from_diagonal(&r),
            DMatrix::from_diagonal(&(q * self.terminal_scale)),
        )
    }
}

/// Quadratic weights of the tracking cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0)
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, qf: DMatrix<f64>) -> Result<Self, OcpError> {
        let shape_ok = q.shape() == (STATE_DIM, STATE_DIM)
            && qf.shape() == (STATE_DIM, STATE_DIM)
            && r.shape() == (INPUT_DIM, INPUT_DIM);
        if !shape_ok {
            return Err(OcpError::InvalidCost("weight dimensions do not match the model".into()));
        }
        for (name, m) in [("Q", &q), ("Q_f", &qf)] {
            if !is_symmetric(m) {
                return Err(OcpError::InvalidCost(format!("{name} must be symmetric")));
            }
            if m.clone().symmetric_eigenvalues().min() < -1e-12 {
                return Err(OcpError::InvalidCost(format!("{name} must be positive semi-definite")));
            }
        }
        if !is_symmetric(&r) || r.clone().cholesky().is_none() {
            return Err(OcpError::InvalidCost("R must be symmetric positive definite".into()));
        }
        Ok(CostWeights { q, r, qf })
    }
}

/// Contact mode of a leg at a given time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LegMode {
    Stance,
    /// Swinging, `elapsed` seconds after lift-off.
    Swing { elapsed: f64 },
}

/// Problem data bound to one contact schedule and reference.
#[derive(Debug, Clone)]
pub struct QuadrupedOcp {
    pub model: RobotModel,
    pub terrain: Terrain,
    pub schedule: ModeSchedule,
    pub reference: ReferenceTrajectory,
    pub weights: CostWeights,
    pub swing: SwingProfile,
    pub cone_epsilon: f64,
    pub x0: DVector<f64>,
    horizon: f64,
    nominal_joints: DVector<f64>,
}

/// Binds cost, constraints and dynamics to the schedule over `[0, horizon]`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_ocp(
    model: &RobotModel,
    terrain: &Terrain,
    schedule: &ModeSchedule,
    reference: &ReferenceTrajectory,
    cost: &CostConfig,
    swing: &SwingProfile,
    x0: &State,
    horizon: f64,
) -> Result<QuadrupedOcp, OcpError> {
    if !(horizon > 0.0) || schedule.horizon() + 1e-9 < horizon {
        return Err(OcpError::ScheduleMismatch { schedule: schedule.horizon(), horizon });
    }
    reference.ensure_covers(horizon)?;
    let nominal_joints = DVector::from_column_slice(model.nominal_joint_vector().as_slice());
    Ok(QuadrupedOcp {
        model: model.clone(),
        terrain: terrain.clone(),
        schedule: schedule.clone(),
        reference: reference.clone(),
        weights: cost.weights()?,
        swing: *swing,
        cone_epsilon: 0.01,
        x0: x0.to_vector(),
        horizon,
        nominal_joints,
    })
}

impl QuadrupedOcp {
    pub fn leg_mode(&self, leg: Leg, t: f64) -> LegMode {
        match self.schedule.swing_at(leg, t) {
            Some(s) => LegMode::Swing { elapsed: t - s.start },
            None => LegMode::Stance,
        }
    }

    pub fn modes(&self, t: f64) -> [LegMode; 4] {
        Leg::ALL.map(|leg| self.leg_mode(leg, t))
    }

    pub fn equality_count(&self, t: f64) -> usize {
        self.modes(t).iter().map(|m| if matches!(m, LegMode::Stance) { 2 } else { 4 }).sum()
    }

    pub fn inequality_count(&self, t: f64) -> usize {
        self.modes(t).iter().filter(|m| matches!(m, LegMode::Stance)).count()
    }

    /// Reference state at `t`: planar pose and velocities from the
    /// reference trajectory, level torso, nominal joints.
    pub fn state_reference(&self, t: f64) -> DVector<f64> {
        let (p, yaw) = self.reference.pose(t);
        let cmd = self.reference.command(t);
        let mut x = DVector::zeros(STATE_DIM);
        x[idx::THETA + 2] = yaw;
        x.fixed_rows_mut::<3>(idx::POS).copy_from(&p);
        x[idx::OMEGA + 2] = cmd.yaw_rate;
        x[idx::VEL] = cmd.forward;
        x[idx::VEL + 1] = cmd.lateral;
        x.rows_mut(idx::JOINTS, N_JOINTS).copy_from(&self.nominal_joints);
        x
    }

    /// Gravity-compensating forces shared by the stance legs, zero joint
    /// velocities.
    pub fn input_reference(&self, t: f64) -> DVector<f64> {
        let contacts = self.schedule.contacts_at(t);
        let n = contacts.iter().filter(|&&c| c).count();
        let mut u = DVector::zeros(INPUT_DIM);
        if n > 0 {
            let fz = self.model.mass * self.model.gravity / n as f64;
            for leg in Leg::ALL.into_iter().filter(|l| contacts[l.index()]) {
                u[idx::FORCES + leg.joint_offset() + 2] = fz;
            }
        }
        u
    }

    /// Vertical stance forces of least norm that carry the weight without a
    /// moment about the torso, for contacts at `offsets` from the torso
    /// (world frame). Negative solutions are clipped and rescaled.
    fn balanced_input(&self, t: f64, offsets: &[Vector3<f64>; 4]) -> DVector<f64> {
        let contacts = self.schedule.contacts_at(t);
        let stance: Vec<Leg> = Leg::ALL.into_iter().filter(|l| contacts[l.index()]).collect();
        let mut u = DVector::zeros(INPUT_DIM);
        if stance.is_empty() {
            return u;
        }
        let weight = self.model.mass * self.model.gravity;
        let a = DMatrix::from_fn(3, stance.len(), |i, j| match i {
            0 => 1.0,
            1 => offsets[stance[j].index()].x,
            _ => offsets[stance[j].index()].y,
        });
        let b = DVector::from_column_slice(&[weight, 0.0, 0.0]);
        let mut fz = a
            .svd(true, true)
            .solve(&b, 1e-9)
            .unwrap_or_else(|_| DVector::from_element(stance.len(), weight / stance.len() as f64));
        fz.apply(|f| *f = f.max(0.0));
        let total = fz.sum();
        if total > 0.0 {
            fz *= weight / total;
        } else {
            fz.fill(weight / stance.len() as f64);
        }
        for (leg, f) in stance.iter().zip(fz.iter()) {
            u[idx::FORCES + leg.joint_offset() + 2] = *f;
        }
        u
    }

    fn equality_generic<T: math::Real>(&self, t: f64, x: &[T], u: &[T], out: &mut [T]) {
        let n = &self.terrain.normal;
        let mut i = 0;
        for leg in Leg::ALL {
            match self.leg_mode(leg, t) {
                LegMode::Stance => {
                    let r = stance_residual(&self.model, n, x, u, leg);
                    out[i..i + 2].copy_from_slice(&r);
                    i += 2;
                }
                LegMode::Swing { elapsed } => {
                    let r = swing_residual(&self.model, n, x, u, leg, self.swing.velocity(elapsed));
                    out[i..i + 4].copy_from_slice(&r);
                    i += 4;
                }
            }
        }
    }

    fn stance_forces(&self, t: f64, u: &DVector<f64>) -> Vec<(Leg, Vector3<f64>)> {
        Leg::ALL
            .into_iter()
            .filter(|&leg| matches!(self.leg_mode(leg, t), LegMode::Stance))
            .map(|leg| (leg, u.fixed_rows::<3>(idx::FORCES + leg.joint_offset()).into_owned()))
            .collect()
    }
}

impl OptimalControlProblem for QuadrupedOcp {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn flow(&self, _t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        srbd_flow(&self.model, &self.terrain, x.as_slice(), u.as_slice(), &Vector3::zeros())
    }

    fn flow_derivatives(
        &self,
        _t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>), ModelError> {
        srbd_flow_with_jacobians(&self.model, &self.terrain, x.as_slice(), u.as_slice())
    }

    fn running_cost(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let dx = x - self.state_reference(t);
        let du = u - self.input_reference(t);
        0.5 * dx.dot(&(&self.weights.q * &dx)) + 0.5 * du.dot(&(&self.weights.r * &du))
    }

    fn running_cost_quadratic(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> CostQuadratic {
        let dx = x - self.state_reference(t);
        let du = u - self.input_reference(t);
        let gx = &self.weights.q * &dx;
        let gu = &self.weights.r * &du;
        CostQuadratic {
            value: 0.5 * dx.dot(&gx) + 0.5 * du.dot(&gu),
            dx: gx,
            du: gu,
            dxx: self.weights.q.clone(),
            duu: self.weights.r.clone(),
            dux: DMatrix::zeros(INPUT_DIM, STATE_DIM),
        }
    }

    fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        let dx = x - self.state_reference(self.horizon);
        0.5 * dx.dot(&(&self.weights.qf * &dx))
    }

    fn terminal_cost_quadratic(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let dx = x - self.state_reference(self.horizon);
        let g = &self.weights.qf * &dx;
        (0.5 * dx.dot(&g), g, self.weights.qf.clone())
    }

    fn equality(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.equality_count(t));
        self.equality_generic(t, x.as_slice(), u.as_slice(), out.as_mut_slice());
        out
    }

    fn equality_linearization(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> ConstraintLinearization {
        let m = self.equality_count(t);
        let mut z = Vec::with_capacity(STATE_DIM + INPUT_DIM);
        z.extend_from_slice(x.as_slice());
        z.extend_from_slice(u.as_slice());
        // residuals are linear in the forces: those columns are filled below
        let directions = (0..STATE_DIM).chain(STATE_DIM + idx::JOINT_VEL..STATE_DIM + INPUT_DIM);
        let (value, jac) = math::forward_jacobian::<_, ()>(&z, m, directions, |zz: &[Dual64], out| {
            let (xx, uu) = zz.split_at(STATE_DIM);
            self.equality_generic(t, xx, uu, out);
            Ok(())
        })
        .expect("residual evaluation is infallible");
        let jx = jac.columns(0, STATE_DIM).into_owned();
        let mut ju = jac.columns(STATE_DIM, INPUT_DIM).into_owned();
        let mut row = 0;
        for leg in Leg::ALL {
            match self.leg_mode(leg, t) {
                LegMode::Stance => row += 2,
                LegMode::Swing { .. } => {
                    for k in 0..3 {
                        ju[(row + k, idx::FORCES + leg.joint_offset() + k)] = 1.0;
                    }
                    row += 4;
                }
            }
        }
        ConstraintLinearization { value: DVector::from_vec(value), jx, ju }
    }

    fn inequality(&self, t: f64, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let forces = self.stance_forces(t, u);
        DVector::from_iterator(
            forces.len(),
            forces.iter().map(|(_, f)| friction_cone(f, &self.terrain, self.cone_epsilon)),
        )
    }

    fn inequality_linearization(&self, t: f64, _x: &DVector<f64>, u: &DVector<f64>) -> ConstraintLinearization {
        let forces = self.stance_forces(t, u);
        let mut value = DVector::zeros(forces.len());
        let mut ju = DMatrix::zeros(forces.len(), INPUT_DIM);
        for (i, (leg, f)) in forces.iter().enumerate() {
            let (h, g, _) = friction_cone_derivatives(f, &self.terrain, self.cone_epsilon);
            value[i] = h;
            ju.view_mut((i, idx::FORCES + leg.joint_offset()), (1, 3)).copy_from(&g.transpose());
        }
        ConstraintLinearization { value, jx: DMatrix::zeros(forces.len(), STATE_DIM), ju }
    }

    fn inequality_input_curvature(&self, t: f64, _x: &DVector<f64>, u: &DVector<f64>, weights: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(INPUT_DIM, INPUT_DIM);
        for (i, (leg, f)) in self.stance_forces(t, u).iter().enumerate() {
            let (_, _, h) = friction_cone_derivatives(f, &self.terrain, self.cone_epsilon);
            let o = idx::FORCES + leg.joint_offset();
            out.view_mut((o, o), (3, 3)).copy_from(&(h * weights[i]));
        }
        out
    }

    /// Balanced forces for the contact points of `x`.
    fn initial_input(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let Ok(state) = State::from_slice(x.as_slice()) else {
            return self.input_reference(t);
        };
        let fk = forward_kinematics(&self.model, &self.terrain, &state.theta, &state.p, &state.q);
        self.balanced_input(t, &Leg::ALL.map(|leg| fk[leg.index()].contact_point - state.p))
    }

    /// Sets swing forces to zero and corrects each leg's joint velocities by
    /// the smallest change that satisfies its velocity constraints.
    fn project_input(&self, t: f64, x: &DVector<f64>, mut u: DVector<f64>) -> DVector<f64> {
        let theta = Vector3::new(x[idx::THETA], x[idx::THETA + 1], x[idx::THETA + 2]);
        let q = nalgebra::SVector::<f64, N_JOINTS>::from_column_slice(&x.as_slice()[idx::JOINTS..]);
        let n = self.terrain.normal;
        for leg in Leg::ALL {
            let o = leg.joint_offset();
            let mode = self.leg_mode(leg, t);
            if let LegMode::Swing { .. } = mode {
                u.fixed_rows_mut::<3>(idx::FORCES + o).fill(0.0);
            }
            let j = contact_jacobian(&self.model, &theta, &q, leg);
            let j_leg = j.fixed_view::<3, 3>(0, 6 + o).into_owned();
            let (xs, us) = (x.as_slice(), u.as_slice());
            let (a, r) = match mode {
                LegMode::Stance => {
                    let (_, _, l) = crate::model::contact_velocity_generic(&self.model, &n, xs, us, leg);
                    let l = Vector3::new(l[0], l[1], l[2]);
                    let res = stance_residual(&self.model, &n, xs, us, leg);
                    let a = DMatrix::from_row_slice(2, 3, &[
                        (l.transpose() * j_leg)[0], (l.transpose() * j_leg)[1], (l.transpose() * j_leg)[2],
                        (n.transpose() * j_leg)[0], (n.transpose() * j_leg)[1], (n.transpose() * j_leg)[2],
                    ]);
                    (a, DVector::from_column_slice(&res))
                }
                LegMode::Swing { elapsed } => {
                    let res = swing_residual(&self.model, &n, xs, us, leg, self.swing.velocity(elapsed));
                    let row = n.transpose() * j_leg;
                    (DMatrix::from_row_slice(1, 3, row.as_slice()), DVector::from_element(1, res[3]))
                }
            };
            if let Ok(step) = a.svd(true, true).solve(&r, 1e-9) {
                let mut qd = u.fixed_rows_mut::<3>(idx::JOINT_VEL + o);
                qd -= step;
            }
        }
        u
    }
}
