//! Python bindings: the robot model, gait planning, closed-loop runs and the
//! self-test.

use std::path::PathBuf;

use nalgebra::Vector3;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wheelleg::cli::selftest;
use wheelleg::config::load_experiment;
use wheelleg::gait::{generate_gait, GaitConfig, LegAnchor, ModeSchedule, ReferenceTrajectory, VelocityCommand};
use wheelleg::model::{forward_kinematics, srbd_flow, Leg, RobotModel, State, Terrain, N_LEGS};
use wheelleg::sim::{run_scenario, write_outputs, SimLog, Summary, SCENARIO_NAMES};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl ToString) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Wheeled-quadruped model on flat ground.
#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: RobotModel,
    terrain: Terrain,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (mass_scale = 1.0, mu = 0.8))]
    fn new(mass_scale: f64, mu: f64) -> PyResult<Self> {
        if !(mass_scale > 0.0) {
            return Err(value_err("mass_scale must be positive"));
        }
        let terrain = Terrain::new(Vector3::z(), mu, 0.0).map_err(value_err)?;
        Ok(PyModel { inner: RobotModel::default().with_mass_scale(mass_scale), terrain })
    }

    #[getter]
    fn mass(&self) -> f64 {
        self.inner.mass
    }

    #[getter]
    fn gravity(&self) -> f64 {
        self.inner.gravity
    }

    /// Standing state (24 values) at `(x, y)` with heading `yaw`.
    #[pyo3(signature = (x = 0.0, y = 0.0, yaw = 0.0))]
    fn nominal_state(&self, x: f64, y: f64, yaw: f64) -> Vec<f64> {
        self.inner.nominal_state(&self.terrain, x, y, yaw).to_vector().as_slice().to_vec()
    }

    /// State derivative for a state and an input (24 values each), with an
    /// optional external force on the torso in world frame.
    #[pyo3(signature = (state, input, force = None))]
    fn derivative(&self, state: Vec<f64>, input: Vec<f64>, force: Option<[f64; 3]>) -> PyResult<Vec<f64>> {
        let f = Vector3::from(force.unwrap_or([0.0; 3]));
        srbd_flow(&self.inner, &self.terrain, &state, &input, &f).map(|d| d.as_slice().to_vec()).map_err(value_err)
    }

    /// World-frame wheel contact points, one `[x, y, z]` per leg in
    /// LF, RF, LH, RH order.
    fn contact_points(&self, state: Vec<f64>) -> PyResult<Vec<[f64; 3]>> {
        let s = State::from_slice(&state).map_err(value_err)?;
        let fk = forward_kinematics(&self.inner, &self.terrain, &s.theta, &s.p, &s.q);
        Ok(fk.iter().map(|k| [k.contact_point.x, k.contact_point.y, k.contact_point.z]).collect())
    }
}

/// Swings `(leg, start, end)` planned from a standing pose for a constant
/// velocity command.
#[pyfunction]
#[pyo3(signature = (forward, lateral = 0.0, yaw_rate = 0.0, horizon = 0.8))]
fn plan_gait(forward: f64, lateral: f64, yaw_rate: f64, horizon: f64) -> PyResult<Vec<(String, f64, f64)>> {
    let cfg = GaitConfig::default();
    let cmd = VelocityCommand::new(forward, lateral, yaw_rate);
    let reference =
        ReferenceTrajectory::integrate(Vector3::zeros(), 0.0, cfg.dt_grid, horizon, |_| cmd).map_err(value_err)?;
    let offsets = RobotModel::default().nominal_contact_offsets();
    let anchors: [LegAnchor; N_LEGS] = Leg::ALL.map(|leg| LegAnchor::nominal_at(&reference, &offsets[leg.index()], 0.0));
    let plan = generate_gait(&cfg, &anchors, &ModeSchedule::all_stance(horizon), &reference, &offsets, horizon)
        .map_err(value_err)?;
    Ok(plan.swings().iter().map(|s| (s.leg.name().to_string(), s.start, s.end)).collect())
}

#[pyfunction]
fn scenario_names() -> Vec<&'static str> {
    SCENARIO_NAMES.to_vec()
}

/// Logged closed-loop run.
#[pyclass(name = "Run")]
struct PyRun {
    log: SimLog,
    summary: Summary,
}

#[pymethods]
impl PyRun {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.log.samples.iter().map(|s| s.time).collect()
    }

    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        self.log.samples.iter().map(|s| s.state.as_slice().to_vec()).collect()
    }

    #[getter]
    fn inputs(&self) -> Vec<Vec<f64>> {
        self.log.samples.iter().map(|s| s.input.as_slice().to_vec()).collect()
    }

    /// Stance flags per sample in LF, RF, LH, RH order.
    #[getter]
    fn contacts(&self) -> Vec<[bool; N_LEGS]> {
        self.log.samples.iter().map(|s| s.contacts).collect()
    }

    #[getter]
    fn fell(&self) -> bool {
        self.log.fall.is_some()
    }

    /// Aggregated metrics as a dict.
    #[getter]
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let text = serde_json::to_string(&self.summary).map_err(runtime_err)?;
        py.import("json")?.call_method1("loads", (text,))?.cast_into::<PyDict>().map_err(Into::into)
    }

    /// Writes the CSV logs and summary.json into `dir`.
    fn write(&self, dir: PathBuf) -> PyResult<()> {
        write_outputs(&self.log, &dir).map(|_| ()).map_err(runtime_err)
    }
}

/// Runs a built-in scenario (or a scenario file) to completion.
#[pyfunction]
#[pyo3(signature = (scenario, config = None, seed = None))]
fn simulate(py: Python<'_>, scenario: &str, config: Option<PathBuf>, seed: Option<u64>) -> PyResult<PyRun> {
    let (config, scenario) = load_experiment(config.as_deref(), scenario, seed).map_err(value_err)?;
    let log = py
        .detach(|| run_scenario(&scenario, &RobotModel::default(), &config, false))
        .map_err(runtime_err)?;
    let summary = Summary::from_log(&log);
    Ok(PyRun { log, summary })
}

/// Runs the oracle checks; returns `(name, passed, detail)` per check.
#[pyfunction]
fn run_selftest() -> Vec<(String, bool, String)> {
    selftest::registry()
        .iter()
        .map(|c| match (c.run)() {
            Ok(d) => (c.name.to_string(), true, d),
            Err(d) => (c.name.to_string(), false, d),
        })
        .collect()
}

#[pymodule]
fn pywheelleg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(plan_gait, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_names, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_selftest, m)?)?;
    Ok(())
}
