//! Closed-loop harness: the kinodynamic plant driven by receding-horizon
//! updates of the controller, with disturbances and evaluation metrics.

mod export;
mod metrics;
mod scenario;

pub use export::{classify_regime, cot_windows, swing_intervals, write_outputs, CotWindow, Stats, Summary, COT_SETTLE};
pub use metrics::{
    horizontal_speed, leg_torques, lip_zmp, mechanical_cot, positive_joint_power, prediction_error, support_margin,
    zmp, zmp_margins, PredictionSample, COT_SPEED_FLOOR, LOAD_THRESHOLD,
};
pub use scenario::{Disturbance, ExecutionMode, Keyframe, Scenario, TerrainSpec, SCENARIO_NAMES};

use std::sync::mpsc;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, ModelError, SimError};
use crate::gait::{
    anchors_from_state, generate_gait, GaitConfig, ModeSchedule, ReferenceTrajectory, SwingInterval, VelocityCommand,
};
use crate::math::rot_z;
use crate::model::{
    forward_kinematics, idx, srbd_flow, Leg, RobotModel, State, Terrain, N_LEGS,
};
use crate::ocp::{
    assemble_ocp, friction_cone, stance_constraints, CostConfig, QuadrupedOcp, SwingProfile,
};
use crate::solver::{mpc_step, slq_solve, OptimalControlProblem, SolveResult, SolverSettings};

/// Fall detection thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FallCriteria {
    /// Minimum torso height above the terrain (m).
    pub min_height: f64,
    /// Maximum absolute roll or pitch (rad).
    pub max_tilt: f64,
}

impl Default for FallCriteria {
    fn default() -> Self {
        FallCriteria { min_height: 0.25, max_tilt: 0.7 }
    }
}

/// Controller and harness settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub controller: ControllerConfig,
    pub gait: GaitConfig,
    pub cost: CostConfig,
    pub swing: SwingProfile,
    pub solver: SolverSettings,
    pub fall: FallCriteria,
}

/// Where each update's torso reference starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceAnchor {
    /// On the velocity profile integrated once from the initial pose, so
    /// position and heading errors persist until corrected.
    #[default]
    Global,
    /// At the measured planar position and heading of every update.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Prediction horizon (s).
    pub horizon: f64,
    /// Solve the first update to convergence instead of the MPC budget.
    pub converge_first: bool,
    pub reference: ReferenceAnchor,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig { horizon: 0.8, converge_first: true, reference: ReferenceAnchor::Global }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let h = self.controller.horizon;
        if !(h > 0.0) || !h.is_finite() {
            return Err(SimError::InvalidScenario(format!("horizon must be positive, got {h}")));
        }
        self.gait.validate()?;
        self.solver.validate()?;
        self.cost.weights()?;
        if !(self.swing.apex >= 0.0 && self.swing.duration > 0.0) {
            return Err(SimError::InvalidScenario("swing profile needs apex >= 0 and a positive duration".into()));
        }
        Ok(())
    }
}

/// One plant step: state at the start, the input held over the step and
/// the contact flags of the active schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub state: DVector<f64>,
    pub input: DVector<f64>,
    pub contacts: [bool; N_LEGS],
    pub command: VelocityCommand,
    pub disturbance: Vector3<f64>,
}

/// Summary of one MPC update.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    /// Time of the measurement the update started from (s).
    pub time: f64,
    /// Time from which the plant used the result (s).
    pub applied_from: f64,
    pub horizon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub degraded: bool,
    pub cost: f64,
    pub merit: f64,
    pub equality_norm: f64,
    pub min_inequality: f64,
    /// Predicted COM position at `time + horizon`.
    pub predicted_position: Vector3<f64>,
    /// Planned swings in absolute time.
    pub swings: Vec<SwingInterval>,
    /// Wall-clock solve time (s); not part of the deterministic outputs.
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FallEvent {
    pub time: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct SimLog {
    pub scenario: Scenario,
    pub model: RobotModel,
    pub terrain: Terrain,
    pub config: SimConfig,
    pub samples: Vec<Sample>,
    pub cycles: Vec<CycleRecord>,
    pub fall: Option<FallEvent>,
}

impl SimLog {
    /// Index of the sample logged at `t`, if any.
    pub fn sample_index(&self, t: f64) -> Option<usize> {
        let i = (t / self.scenario.plant_step).round();
        if i < 0.0 {
            return None;
        }
        let i = i as usize;
        (i < self.samples.len() && (self.samples[i].time - t).abs() < 1e-9).then_some(i)
    }

    /// Samples with `start <= time < end`.
    pub fn window(&self, start: f64, end: f64) -> &[Sample] {
        let a = self.samples.partition_point(|s| s.time < start - 1e-9);
        let b = self.samples.partition_point(|s| s.time < end - 1e-9);
        &self.samples[a..b.max(a)]
    }
}

/// Per-sample constraint diagnostics: minimum cone margin over stance
/// legs, largest stance contact speed (lateral or normal) and largest swing
/// force component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintCheck {
    pub min_cone_margin: f64,
    pub max_stance_slip: f64,
    pub max_swing_force: f64,
}

pub fn check_constraints(model: &RobotModel, terrain: &Terrain, sample: &Sample, cone_epsilon: f64) -> ConstraintCheck {
    let state = State::from_slice(sample.state.as_slice()).expect("logged state has the model dimension");
    let input = crate::model::ControlInput::from_slice(sample.input.as_slice()).expect("logged input has the model dimension");
    let mut out = ConstraintCheck { min_cone_margin: f64::INFINITY, max_stance_slip: 0.0, max_swing_force: 0.0 };
    for leg in Leg::ALL {
        let f = input.forces[leg.index()];
        if sample.contacts[leg.index()] {
            out.min_cone_margin = out.min_cone_margin.min(friction_cone(&f, terrain, cone_epsilon));
            out.max_stance_slip = out.max_stance_slip.max(stance_constraints(model, terrain, &state, &input, leg).amax());
        } else {
            out.max_swing_force = out.max_swing_force.max(f.amax());
        }
    }
    out
}

/// Everything an update needs besides the measured state.
#[derive(Debug, Clone)]
struct Planner {
    scenario: Scenario,
    model: RobotModel,
    terrain: Terrain,
    config: SimConfig,
    nominal_offsets: [Vector3<f64>; N_LEGS],
    /// Velocity profile integrated over the whole run.
    global: ReferenceTrajectory,
}

/// Result of one update: the problem it solved and the solution.
struct Plan {
    time: f64,
    ocp: QuadrupedOcp,
    result: SolveResult,
    solve_seconds: f64,
}

impl Planner {
    fn plan(
        &self,
        t: f64,
        x: &DVector<f64>,
        previous: Option<&Plan>,
        touchdown: &[Vector3<f64>; N_LEGS],
    ) -> Result<Plan, SimError> {
        let horizon = self.config.controller.horizon;
        let state = State::from_slice(x.as_slice())?;
        let (xy, yaw) = match self.config.controller.reference {
            ReferenceAnchor::Measured => (state.p, state.theta.z),
            ReferenceAnchor::Global => self.global.pose(t),
        };
        let n = self.terrain.normal;
        let z = self.model.nominal_height(&self.terrain) - (n.x * xy.x + n.y * xy.y) / n.z;
        let p0 = Vector3::new(xy.x, xy.y, z);
        let dt = self.config.gait.dt_grid;
        let reference =
            ReferenceTrajectory::integrate(p0, yaw, dt, horizon + dt, |s| self.scenario.command(t + s))?;
        let current = match previous {
            Some(p) => p.ocp.schedule.shifted(t - p.time),
            None => ModeSchedule::all_stance(horizon),
        };
        let anchors = anchors_from_state(&self.model, &self.terrain, &state, &p0, touchdown);
        let schedule = match generate_gait(&self.config.gait, &anchors, &current, &reference, &self.nominal_offsets, horizon) {
            Ok(s) => s,
            Err(e @ GaitError::InfeasibleSchedule { .. }) => {
                log::warn!("t = {t:.3} s: {e}; keeping the committed schedule");
                let kept: Vec<SwingInterval> =
                    current.swings().iter().copied().filter(|s| s.start <= 1e-9 && s.end > 0.0).collect();
                ModeSchedule::from_swings(horizon, kept)?
            }
            Err(e) => return Err(e.into()),
        };
        let ocp = assemble_ocp(&self.model, &self.terrain, &schedule, &reference, &self.config.cost, &self.config.swing, &state, horizon)?;
        let clock = Instant::now();
        let result = match previous {
            None if self.config.controller.converge_first => {
                let mut r = slq_solve(&ocp, x, None, &self.config.solver)?;
                r.start_time = t;
                r
            }
            _ => mpc_step(&ocp, x, t, previous.map(|p| &p.result), &self.config.solver)?,
        };
        Ok(Plan { time: t, ocp, result, solve_seconds: clock.elapsed().as_secs_f64() })
    }

    fn record(&self, plan: &Plan, applied_from: f64) -> CycleRecord {
        let m = &plan.result.metrics;
        let xf = plan.result.trajectory.final_state();
        CycleRecord {
            time: plan.time,
            applied_from,
            horizon: plan.ocp.horizon(),
            iterations: plan.result.iterations.len(),
            converged: plan.result.converged,
            degraded: plan.result.degraded,
            cost: m.cost,
            merit: m.merit,
            equality_norm: m.equality_norm,
            min_inequality: m.min_inequality,
            predicted_position: xf.fixed_rows::<3>(idx::POS).into_owned(),
            swings: plan
                .ocp
                .schedule
                .swings()
                .iter()
                .map(|s| SwingInterval { leg: s.leg, start: s.start + plan.time, end: s.end + plan.time })
                .collect(),
            solve_seconds: plan.solve_seconds,
        }
    }
}

/// Input the plant applies at `t` under `plan`.
fn policy_input(plan: &Plan, mode: ExecutionMode, t: f64, x: &DVector<f64>) -> DVector<f64> {
    let policy = &plan.result.policy;
    let s = t - plan.time;
    let u = match mode {
        ExecutionMode::Feedforward => policy.feedforward_hold(s),
        ExecutionMode::Affine => policy.feedforward_hold(s) + policy.gain(s) * (x - policy.nominal_state(s)),
    };
    plan.ocp.project_input(s, x, u)
}

fn plant_step(
    model: &RobotModel,
    terrain: &Terrain,
    x: &DVector<f64>,
    u: &DVector<f64>,
    f: &Vector3<f64>,
    h: f64,
) -> Result<DVector<f64>, ModelError> {
    let flow = |x: &DVector<f64>| srbd_flow(model, terrain, x.as_slice(), u.as_slice(), f);
    let k1 = flow(x)?;
    let k2 = flow(&(x + &k1 * (0.5 * h)))?;
    let k3 = flow(&(x + &k2 * (0.5 * h)))?;
    let k4 = flow(&(x + &k3 * h))?;
    Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0))
}

fn fall_check(criteria: &FallCriteria, terrain: &Terrain, x: &DVector<f64>) -> Option<String> {
    let p = Vector3::new(x[idx::POS], x[idx::POS + 1], x[idx::POS + 2]);
    let height = terrain.height_above(&p);
    let (roll, pitch) = (x[idx::THETA], x[idx::THETA + 1]);
    if !x.iter().all(|v| v.is_finite()) {
        Some("state is not finite".into())
    } else if height < criteria.min_height {
        Some(format!("torso height {height:.3} m below {} m", criteria.min_height))
    } else if roll.abs() > criteria.max_tilt || pitch.abs() > criteria.max_tilt {
        Some(format!("tilt (roll {roll:.3}, pitch {pitch:.3}) beyond {} rad", criteria.max_tilt))
    } else {
        None
    }
}

/// Runs the scenario to completion or until a fall. Synchronous runs are
/// deterministic; with `asynchronous` set each update is solved on a worker
/// thread while the plant keeps using the previous policy, and the result
/// takes over as soon as it is available.
pub fn run_scenario(scenario: &Scenario, model: &RobotModel, config: &SimConfig, asynchronous: bool) -> Result<SimLog, SimError> {
    config.validate()?;
    scenario.validate(config.controller.horizon)?;
    let terrain = scenario.terrain.terrain()?;
    let x0 = model.nominal_state(&terrain, 0.0, 0.0, 0.0);
    let dt = config.gait.dt_grid;
    let global = ReferenceTrajectory::integrate(x0.p, 0.0, dt, scenario.duration + config.controller.horizon + dt, |s| {
        scenario.command(s)
    })?;
    let planner = Arc::new(Planner {
        scenario: scenario.clone(),
        model: model.clone(),
        terrain: terrain.clone(),
        config: config.clone(),
        nominal_offsets: model.nominal_contact_offsets(),
        global,
    });
    let plant = model.with_mass_scale(scenario.mass_scale);
    let h = scenario.plant_step;
    let per_cycle = (scenario.mpc_period / h).round() as usize;
    let n_steps = (scenario.duration / h).round() as usize;

    let mut x = x0.to_vector();
    let mut touchdown = planner.nominal_offsets;
    let mut previous_contacts = [true; N_LEGS];
    let mut log = SimLog {
        scenario: scenario.clone(),
        model: model.clone(),
        terrain: terrain.clone(),
        config: config.clone(),
        samples: Vec::with_capacity(n_steps),
        cycles: Vec::new(),
        fall: None,
    };
    let mut active: Option<Arc<Plan>> = None;
    let mut pending: Option<mpsc::Receiver<Result<Plan, SimError>>> = None;

    for i in 0..n_steps {
        let t = i as f64 * h;
        if i % per_cycle == 0 {
            if let Some(rx) = pending.take() {
                let plan = rx.recv().expect("planner thread delivers a result")?;
                log.cycles.push(planner.record(&plan, t));
                active = Some(Arc::new(plan));
            }
            match (&active, asynchronous) {
                (Some(prev), true) => {
                    let (tx, rx) = mpsc::channel();
                    let (planner, prev, x, td) = (planner.clone(), prev.clone(), x.clone(), touchdown);
                    std::thread::spawn(move || {
                        let _ = tx.send(planner.plan(t, &x, Some(&prev), &td));
                    });
                    pending = Some(rx);
                }
                _ => {
                    let plan = planner.plan(t, &x, active.as_deref(), &touchdown)?;
                    log.cycles.push(planner.record(&plan, t));
                    active = Some(Arc::new(plan));
                }
            }
        } else if let Some(rx) = &pending {
            if let Ok(result) = rx.try_recv() {
                let plan = result?;
                log.cycles.push(planner.record(&plan, t));
                active = Some(Arc::new(plan));
                pending = None;
            }
        }
        let plan = active.as_deref().expect("a plan exists after the first update");

        let u = policy_input(plan, scenario.mode, t, &x);
        let contacts = plan.ocp.schedule.contacts_at(t - plan.time);
        let state = State::from_slice(x.as_slice())?;
        let fk = forward_kinematics(model, &terrain, &state.theta, &state.p, &state.q);
        let heading = rot_z(-state.theta.z);
        for leg in Leg::ALL {
            let k = leg.index();
            if contacts[k] && !previous_contacts[k] {
                touchdown[k] = heading * (fk[k].contact_point - state.p);
            }
        }
        previous_contacts = contacts;

        let f_ext = scenario.disturbance_at(t);
        log.samples.push(Sample {
            time: t,
            state: x.clone(),
            input: u.clone(),
            contacts,
            command: scenario.command(t),
            disturbance: f_ext,
        });
        let next = plant_step(&plant, &terrain, &x, &u, &f_ext, h);
        let reason = match &next {
            Ok(next) => fall_check(&config.fall, &terrain, next),
            Err(e) => Some(e.to_string()),
        };
        if let Some(reason) = reason {
            log.fall = Some(FallEvent { time: t + h, reason });
            break;
        }
        x = next.expect("checked above");
    }
    if let Some(rx) = pending.take() {
        // let an outstanding update finish so the worker does not outlive the run
        let _ = rx.recv();
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_selection() {
        let scenario = Scenario::builtin("stand").unwrap();
        let model = RobotModel::default();
        let terrain = Terrain::default();
        let x = model.nominal_state(&terrain, 0.0, 0.0, 0.0).to_vector();
        let samples = (0..10)
            .map(|i| Sample {
                time: i as f64 * scenario.plant_step,
                state: x.clone(),
                input: DVector::zeros(crate::model::INPUT_DIM),
                contacts: [true; 4],
                command: VelocityCommand::default(),
                disturbance: Vector3::zeros(),
            })
            .collect();
        let log = SimLog {
            scenario: scenario.clone(),
            model,
            terrain,
            config: SimConfig::default(),
            samples,
            cycles: vec![],
            fall: None,
        };
        assert_eq!(log.window(0.005, 0.01).len(), 2);
        assert_eq!(log.sample_index(0.0075), Some(3));
        assert_eq!(log.sample_index(0.1), None);
        assert_eq!(log.sample_index(0.001), None);
    }
}
