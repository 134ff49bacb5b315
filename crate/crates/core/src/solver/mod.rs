//! Constrained SLQ solver.
//!
//! The continuous problem is transcribed on a time grid with zero-order-hold
//! inputs and a fourth-order Runge-Kutta step, and the discrete problem is
//! solved with a DDP-style iteration: rollout, LQ approximation, Riccati
//! backward pass, backtracking line search on a merit function.
//!
//! * state-input equalities are eliminated in the backward pass by
//!   projecting the input update onto the null space of their input Jacobian,
//!   and rollouts project each input onto the constraint set;
//! * state-only equalities enter as a quadratic penalty;
//! * inequalities enter through a relaxed logarithmic barrier.

mod barrier;
mod lti;
mod policy;
mod slq;

pub use barrier::RelaxedBarrier;
pub use lti::LtiProblem;
pub use policy::LinearPolicy;
pub use slq::{
    backward_pass, lq_approximation, mpc_step, rk4_step, rk4_step_with_jacobians, rollout, slq_solve,
    BackwardPassResult, LqData, LqNode,
};

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, SolverError};

/// Value and derivatives of a scalar function of `(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostQuadratic {
    pub value: f64,
    pub dx: DVector<f64>,
    pub du: DVector<f64>,
    pub dxx: DMatrix<f64>,
    pub duu: DMatrix<f64>,
    /// d2/du dx, `n_u x n_x`.
    pub dux: DMatrix<f64>,
}

/// Linearisation `value + jx dx + ju du` of a vector constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintLinearization {
    pub value: DVector<f64>,
    pub jx: DMatrix<f64>,
    pub ju: DMatrix<f64>,
}

impl ConstraintLinearization {
    pub fn empty(nx: usize, nu: usize) -> Self {
        ConstraintLinearization { value: DVector::zeros(0), jx: DMatrix::zeros(0, nx), ju: DMatrix::zeros(0, nu) }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Continuous-time optimal control problem on `[0, horizon]`:
///
/// minimise `integral l(t, x, u) dt + phi(x(T))` subject to `x' = f(t, x, u)`,
/// `g1(t, x, u) = 0`, `g2(t, x) = 0` and `h(t, x, u) >= 0`.
pub trait OptimalControlProblem {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn horizon(&self) -> f64;

    fn flow(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, ModelError>;

    /// `(f, df/dx, df/du)`.
    fn flow_derivatives(
        &self,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>), ModelError>;

    fn running_cost(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn running_cost_quadratic(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> CostQuadratic;
    fn terminal_cost(&self, x: &DVector<f64>) -> f64;
    /// `(phi, dphi/dx, d2phi/dx2)`.
    fn terminal_cost_quadratic(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>);

    fn equality(&self, _t: f64, _x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn equality_linearization(&self, _t: f64, _x: &DVector<f64>, _u: &DVector<f64>) -> ConstraintLinearization {
        ConstraintLinearization::empty(self.state_dim(), self.input_dim())
    }

    fn state_equality(&self, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    /// `(g2, dg2/dx)`.
    fn state_equality_linearization(&self, _t: f64, _x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (DVector::zeros(0), DMatrix::zeros(0, self.state_dim()))
    }

    fn inequality(&self, _t: f64, _x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn inequality_linearization(&self, _t: f64, _x: &DVector<f64>, _u: &DVector<f64>) -> ConstraintLinearization {
        ConstraintLinearization::empty(self.state_dim(), self.input_dim())
    }

    /// `sum_i w_i d2h_i/du2`; zero for inequalities linear in `u`.
    fn inequality_input_curvature(
        &self,
        _t: f64,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _weights: &[f64],
    ) -> DMatrix<f64> {
        DMatrix::zeros(self.input_dim(), self.input_dim())
    }

    /// Input used for the very first rollout when no warm start is given.
    fn initial_input(&self, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.input_dim())
    }

    /// Closest input (in the Euclidean sense) satisfying the state-input
    /// equalities, exact when they are affine in `u`.
    fn project_input(&self, t: f64, x: &DVector<f64>, u: DVector<f64>) -> DVector<f64> {
        let lin = self.equality_linearization(t, x, &u);
        if lin.is_empty() {
            return u;
        }
        let svd = lin.ju.clone().svd(true, true);
        match svd.solve(&lin.value, 1e-10) {
            Ok(step) => u - step,
            Err(_) => u,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Iteration budget of a single MPC update.
    pub mpc_iterations: usize,
    /// Relative merit decrease below which the iteration stops.
    pub tolerance: f64,
    /// Grid step (s).
    pub dt: f64,
    pub barrier_mu: f64,
    pub barrier_delta: f64,
    pub line_search_factor: f64,
    pub min_step: f64,
    /// First non-zero regularisation of the reduced input Hessian.
    pub regularization_floor: f64,
    pub max_regularization_doublings: usize,
    /// Merit weight on state-input equality residuals.
    pub equality_penalty: f64,
    /// Penalty weight on state-only equality residuals.
    pub state_equality_penalty: f64,
    /// Rollouts whose state norm exceeds this are reported as diverged.
    pub divergence_bound: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iterations: 20,
            mpc_iterations: 3,
            tolerance: 1e-6,
            dt: 0.015,
            barrier_mu: 0.01,
            barrier_delta: 0.5,
            line_search_factor: 0.5,
            min_step: 1.0 / 64.0,
            regularization_floor: 1e-6,
            max_regularization_doublings: 40,
            equality_penalty: 100.0,
            state_equality_penalty: 100.0,
            divergence_bound: 1e4,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = [
            ("tolerance", self.tolerance),
            ("dt", self.dt),
            ("barrier_mu", self.barrier_mu),
            ("barrier_delta", self.barrier_delta),
            ("min_step", self.min_step),
            ("regularization_floor", self.regularization_floor),
            ("divergence_bound", self.divergence_bound),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SolverError::InvalidSettings(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.line_search_factor > 0.0 && self.line_search_factor < 1.0) {
            return Err(SolverError::InvalidSettings("line_search_factor must lie in (0, 1)".into()));
        }
        if self.min_step > 1.0 {
            return Err(SolverError::InvalidSettings("min_step must not exceed 1".into()));
        }
        if self.max_iterations == 0 || self.mpc_iterations == 0 {
            return Err(SolverError::InvalidSettings("iteration counts must be positive".into()));
        }
        if self.equality_penalty < 0.0 || self.state_equality_penalty < 0.0 {
            return Err(SolverError::InvalidSettings("penalty weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn barrier(&self) -> RelaxedBarrier {
        RelaxedBarrier::new(self.barrier_mu, self.barrier_delta)
    }
}

/// Node times `0 = t_0 < ... < t_N = horizon`, spaced by `dt` except for a
/// possibly shorter last interval.
pub fn time_grid(horizon: f64, dt: f64) -> Vec<f64> {
    let n = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut t: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
    t.push(horizon);
    t
}

/// States at `N + 1` nodes and the held inputs on the `N` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one node")
    }
}

/// Merit decomposition of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TrajectoryMetrics {
    /// Running plus terminal cost.
    pub cost: f64,
    pub barrier: f64,
    pub penalty: f64,
    pub merit: f64,
    /// `sqrt(sum h_k |g1_k|^2)`.
    pub equality_norm: f64,
    pub state_equality_norm: f64,
    /// Smallest inequality value over the nodes (`+inf` if there are none).
    pub min_inequality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub merit: f64,
    pub equality_norm: f64,
    pub min_inequality: f64,
    /// Accepted line-search step, zero if none was taken.
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Absolute time of the first node.
    pub start_time: f64,
    pub policy: LinearPolicy,
    pub trajectory: Trajectory,
    pub metrics: TrajectoryMetrics,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    /// Set when an MPC update fell back to the previous policy.
    pub degraded: bool,
}

impl SolveResult {
    /// Writes per-iteration diagnostics.
    pub fn write_diagnostics<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "cost", "equality_norm", "min_cone_margin", "step", "merit"])?;
        for r in &self.iterations {
            w.write_record([
                r.iteration.to_string(),
                format!("{:.9e}", r.cost),
                format!("{:.9e}", r.equality_norm),
                format!("{:.9e}", r.min_inequality),
                format!("{:.6}", r.step),
                format!("{:.9e}", r.merit),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
