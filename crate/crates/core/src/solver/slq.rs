use nalgebra::{DMatrix, DVector};

use super::{
    time_grid, ConstraintLinearization, CostQuadratic, IterationRecord, LinearPolicy, OptimalControlProblem,
    SolveResult, SolverSettings, Trajectory, TrajectoryMetrics,
};
use crate::error::{ModelError, SolverError};

/// One classical Runge-Kutta step with the input held constant.
pub fn rk4_step<P: OptimalControlProblem + ?Sized>(
    ocp: &P,
    t: f64,
    h: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>, ModelError> {
    let k1 = ocp.flow(t, x, u)?;
    let k2 = ocp.flow(t + 0.5 * h, &(x + &k1 * (0.5 * h)), u)?;
    let k3 = ocp.flow(t + 0.5 * h, &(x + &k2 * (0.5 * h)), u)?;
    let k4 = ocp.flow(t + h, &(x + &k3 * h), u)?;
    Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0))
}

/// Runge-Kutta step together with its exact sensitivities
/// `(x_next, dx_next/dx, dx_next/du)`.
pub fn rk4_step_with_jacobians<P: OptimalControlProblem + ?Sized>(
    ocp: &P,
    t: f64,
    h: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>), ModelError> {
    let n = x.len();
    let eye = DMatrix::<f64>::identity(n, n);
    let (k1, a1, b1) = ocp.flow_derivatives(t, x, u)?;
    let (k2, a2, b2) = ocp.flow_derivatives(t + 0.5 * h, &(x + &k1 * (0.5 * h)), u)?;
    let d2x = &a2 * (&eye + &a1 * (0.5 * h));
    let d2u = &a2 * &b1 * (0.5 * h) + b2;
    let (k3, a3, b3) = ocp.flow_derivatives(t + 0.5 * h, &(x + &k2 * (0.5 * h)), u)?;
    let d3x = &a3 * (&eye + &d2x * (0.5 * h));
    let d3u = &a3 * &d2u * (0.5 * h) + b3;
    let (k4, a4, b4) = ocp.flow_derivatives(t + h, &(x + &k3 * h), u)?;
    let d4x = &a4 * (&eye + &d3x * h);
    let d4u = &a4 * &d3u * h + b4;
    let next = x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    let ad = eye + (a1 + (d2x + d3x) * 2.0 + d4x) * (h / 6.0);
    let bd = (b1 + (d2u + d3u) * 2.0 + d4u) * (h / 6.0);
    Ok((next, ad, bd))
}

/// Integrates the problem on `times`, asking `control` for the input at each
/// node; inputs are projected onto the state-input equalities.
fn simulate<P, C>(
    ocp: &P,
    times: &[f64],
    x0: &DVector<f64>,
    settings: &SolverSettings,
    mut control: C,
) -> Result<Trajectory, SolverError>
where
    P: OptimalControlProblem + ?Sized,
    C: FnMut(usize, f64, &DVector<f64>) -> DVector<f64>,
{
    let n = times.len() - 1;
    let mut states = Vec::with_capacity(n + 1);
    let mut inputs = Vec::with_capacity(n);
    states.push(x0.clone());
    for k in 0..n {
        let (t, h) = (times[k], times[k + 1] - times[k]);
        let x = &states[k];
        let u = ocp.project_input(t, x, control(k, t, x));
        let next = rk4_step(ocp, t, h, x, &u)?;
        let norm = next.norm();
        if !norm.is_finite() || norm > settings.divergence_bound {
            return Err(SolverError::Divergence { time: times[k + 1], norm });
        }
        inputs.push(u);
        states.push(next);
    }
    Ok(Trajectory { times: times.to_vec(), states, inputs })
}

/// Closed-loop rollout of `policy` from `x0` on the solver grid.
pub fn rollout<P: OptimalControlProblem + ?Sized>(
    ocp: &P,
    policy: &LinearPolicy,
    x0: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<Trajectory, SolverError> {
    policy.ensure_covers(ocp.horizon())?;
    let times = time_grid(ocp.horizon(), settings.dt);
    simulate(ocp, &times, x0, settings, |_, t, x| policy.evaluate(t, x))
}

fn interval(times: &[f64], k: usize) -> f64 {
    times[k + 1] - times[k]
}

/// Cost, barrier, penalty and constraint statistics of a trajectory.
pub fn evaluate_trajectory<P: OptimalControlProblem + ?Sized>(
    ocp: &P,
    traj: &Trajectory,
    settings: &SolverSettings,
) -> TrajectoryMetrics {
    let barrier = settings.barrier();
    let mut m = TrajectoryMetrics { min_inequality: f64::INFINITY, ..Default::default() };
    let mut eq_sq = 0.0;
    let mut state_eq_sq = 0.0;
    for (k, u) in traj.inputs.iter().enumerate() {
        let (t, h, x) = (traj.times[k], interval(&traj.times, k), &traj.states[k]);
        m.cost += h * ocp.running_cost(t, x, u);
        for v in ocp.inequality(t, x, u).iter() {
            m.barrier += h * barrier.value(*v);
            m.min_inequality = m.min_inequality.min(*v);
        }
        eq_sq += h * ocp.equality(t, x, u).norm_squared();
        state_eq_sq += h * ocp.state_equality(t, x).norm_squared();
    }
    m.cost += ocp.terminal_cost(traj.final_state());
    m.penalty = 0.5 * settings.equality_penalty * eq_sq + 0.5 * settings.state_equality_penalty * state_eq_sq;
    m.merit = m.cost + m.barrier + m.penalty;
    m.equality_norm = eq_sq.sqrt();
    m.state_equality_norm = state_eq_sq.sqrt();
    m
}

/// LQ data of one interval; cost terms are already multiplied by the step.
#[derive(Debug, Clone)]
pub struct LqNode {
    pub time: f64,
    pub step: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub cost: CostQuadratic,
    pub equality: ConstraintLinearization,
}

#[derive(Debug, Clone)]
pub struct LqData {
    pub nodes: Vec<LqNode>,
    pub terminal_dx: DVector<f64>,
    pub terminal_dxx: DMatrix<f64>,
}

fn lq_node<P: OptimalControlProblem + ?Sized>(
    ocp: &P,
    t: f64,
    h: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<LqNode, SolverError> {
    let (_, a, b) = rk4_step_with_jacobians(ocp, t, h, x, u)?;
    let mut q = ocp.running_cost_quadratic(t, x, u);
    let ineq = ocp.inequality_linearization(t, x, u);
    if !ineq.is_empty() {
        let barrier = settings.barrier();
        let w1: Vec<f64> = ineq.value.iter().map(|&v| barrier.gradient(v)).collect();
        let w2 = DVector::from_iterator(ineq.len(), ineq.value.iter().map(|&v| barrier.curvature(v)));
        let w1v = DVector::from_column_slice(&w1);
        q.dx += ineq.jx.transpose() * &w1v;
        q.du += ineq.ju.transpose() * &w1v;
        let jx_w = DMatrix::from_fn(ineq.jx.nrows(), ineq.jx.ncols(), |i, j| ineq.jx[(i, j)] * w2[i]);
        let ju_w = DMatrix::from_fn(ineq.ju.nrows(), ineq.ju.ncols(), |i, j| ineq.ju[(i, j)] * w2[i]);
        q.dxx += ineq.jx.transpose() * &jx_w;
        q.duu += ineq.ju.transpose() * &ju_w + ocp.inequality_input_curvature(t, x, u, &w1);
        q.dux += ineq.ju.transpose() * &jx_w;
        q.value += ineq.value.iter().map(|&v| barrier.value(v)).sum::<f64>();
    }
    let (g2, gx) = ocp.state_equality_linearization(t, x);
    if !g2.is_empty() {
        let rho = settings.state_equality_penalty;
        q.dx += gx.transpose() * &g2 * rho;
        q.dxx += gx.transpose() * &gx * rho;
    }
    q.value *= h;
    q.dx *= h;
    q.du *= h;
    q.dxx *= h;
    q.duu *= h;
    q.dux *= h;
    Ok(LqNode { time: t, step: h, a, b, cost: q, equality: ocp.equality_linearization(t, x, u) })
}

/// Linearised dynamics and quadratised cost, barrier and penalties along
/// `traj`.
pub fn lq_approximation<P: OptimalControlProblem + Sync + ?Sized>(
    ocp: &P,
    traj: &Trajectory,
    settings: &SolverSettings,
) -> Result<LqData, SolverError> {
    let n = traj.inputs.len();
    let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(8).min(n.max(1));
    let chunk = n.div_ceil(workers.max(1)).max(1);
    let mut nodes: Vec<Option<Result<LqNode, SolverError>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        for (c, slot) in nodes.chunks_mut(chunk).enumerate() {
            s.spawn(move || {
                for (i, out) in slot.iter_mut().enumerate() {
                    let k = c * chunk + i;
                    let h = interval(&traj.times, k);
                    *out = Some(lq_node(ocp, traj.times[k], h, &traj.states[k], &traj.inputs[k], settings));
                }
            });
        }
    });
    let nodes = nodes.into_iter().map(|n| n.expect("every node is filled")).collect::<Result<Vec<_>, _>>()?;
    let (_, terminal_dx, terminal_dxx) = ocp.terminal_cost_quadratic(traj.final_state());
    Ok(LqData { nodes, terminal_dx, terminal_dxx })
}

#[derive(Debug, Clone)]
pub struct BackwardPassResult {
    /// Input update `k_k` per interval.
    pub feedforward: Vec<DVector<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    /// Value-function Hessians at nodes `0..=N`.
    pub value_hessians: Vec<DMatrix<f64>>,
    pub value_gradients: Vec<DVector<f64>>,
    /// Predicted merit change for a full step.
    pub expected_change: f64,
}

/// Pseudo-inverse and null-space basis of `d` (rows are constraints).
fn split_constraint(d: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, nu) = d.shape();
    let mut padded = DMatrix::zeros(nu.max(m), nu);
    padded.rows_mut(0, m).copy_from(d);
    let svd = padded.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let smax = svd.singular_values.max();
    let tol = 1e-9 * smax.max(1e-300);
    let mut pinv = DMatrix::zeros(nu, m);
    let mut null_cols = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let v = v_t.row(i).transpose();
        if s > tol {
            let ui = u.column(i).rows(0, m).into_owned();
            pinv += &v * ui.transpose() / s;
        } else {
            null_cols.push(v);
        }
    }
    let null = if null_cols.is_empty() { DMatrix::zeros(nu, 0) } else { DMatrix::from_columns(&null_cols) };
    (pinv, null)
}

/// Riccati sweep with null-space elimination of the state-input equalities.
pub fn backward_pass(lq: &LqData, settings: &SolverSettings) -> Result<BackwardPassResult, SolverError> {
    let n = lq.nodes.len();
    let mut vx = lq.terminal_dx.clone();
    let mut vxx = lq.terminal_dxx.clone();
    let mut feedforward = vec![DVector::zeros(0); n];
    let mut gains = vec![DMatrix::zeros(0, 0); n];
    let mut value_hessians = vec![DMatrix::zeros(0, 0); n + 1];
    let mut value_gradients = vec![DVector::zeros(0); n + 1];
    value_hessians[n] = vxx.clone();
    value_gradients[n] = vx.clone();
    let mut expected = 0.0;
    for k in (0..n).rev() {
        let node = &lq.nodes[k];
        let (a, b, c) = (&node.a, &node.b, &node.cost);
        let nx = a.nrows();
        let nu = b.ncols();
        let at = a.transpose();
        let bt = b.transpose();
        let vxx_a = &vxx * a;
        let vxx_b = &vxx * b;
        let qx = &c.dx + &at * &vx;
        let qu = &c.du + &bt * &vx;
        let qxx = &c.dxx + &at * &vxx_a;
        let quu = &c.duu + &bt * &vxx_b;
        let qux = &c.dux + &bt * &vxx_a;

        let (u0, kc, null) = if node.equality.is_empty() {
            (DVector::zeros(nu), DMatrix::zeros(nu, nx), DMatrix::identity(nu, nu))
        } else {
            let (pinv, null) = split_constraint(&node.equality.ju);
            (-&pinv * &node.equality.value, -&pinv * &node.equality.jx, null)
        };
        let nt = null.transpose();
        let qzz = &nt * &quu * &null;
        let qz = &nt * (&qu + &quu * &u0);
        let qzx = &nt * (&qux + &quu * &kc);
        let nz = qzz.nrows();
        let mut mu = 0.0;
        let mut doublings = 0;
        let chol = loop {
            let reg = &qzz + DMatrix::identity(nz, nz) * mu;
            if let Some(ch) = reg.cholesky() {
                break ch;
            }
            if doublings > settings.max_regularization_doublings {
                return Err(SolverError::Regularization { node: k });
            }
            mu = if mu == 0.0 { settings.regularization_floor } else { 2.0 * mu };
            doublings += 1;
        };
        let kz = -chol.solve(&qz);
        let kzx = -chol.solve(&qzx);
        let kff = u0 + &null * kz;
        let kfb = kc + &null * kzx;

        let kt = kfb.transpose();
        let quu_k = &quu * &kff;
        vx = &qx + &kt * &quu_k + &kt * &qu + qux.transpose() * &kff;
        let cross = &kt * &qux;
        vxx = &qxx + &kt * &quu * &kfb + &cross + cross.transpose();
        vxx = (&vxx + vxx.transpose()) * 0.5;
        expected += kff.dot(&qu) + 0.5 * kff.dot(&quu_k);
        value_hessians[k] = vxx.clone();
        value_gradients[k] = vx.clone();
        feedforward[k] = kff;
        gains[k] = kfb;
    }
    Ok(BackwardPassResult { feedforward, gains, value_hessians, value_gradients, expected_change: expected })
}

fn record(iteration: usize, m: &TrajectoryMetrics, step: f64) -> IterationRecord {
    IterationRecord {
        iteration,
        cost: m.cost,
        merit: m.merit,
        equality_norm: m.equality_norm,
        min_inequality: m.min_inequality,
        step,
    }
}

fn solve_with_budget<P: OptimalControlProblem + Sync + ?Sized>(
    ocp: &P,
    x0: &DVector<f64>,
    warm_start: Option<&LinearPolicy>,
    settings: &SolverSettings,
    max_iterations: usize,
) -> Result<SolveResult, SolverError> {
    settings.validate()?;
    let times = time_grid(ocp.horizon(), settings.dt);
    let cold = simulate(ocp, &times, x0, settings, |_, t, x| ocp.initial_input(t, x));
    let (mut traj, mut metrics) = match warm_start {
        Some(policy) => {
            policy.ensure_covers(ocp.horizon())?;
            // the previous policy may have been computed for another contact
            // schedule: start from the best of its closed-loop and open-loop
            // rollouts and the default initialisation
            let candidates = [
                simulate(ocp, &times, x0, settings, |_, t, x| policy.evaluate(t, x)),
                simulate(ocp, &times, x0, settings, |_, t, _| policy.feedforward_hold(t)),
                cold,
            ];
            let mut best: Option<(Trajectory, TrajectoryMetrics)> = None;
            let mut last_err = None;
            for c in candidates {
                match c {
                    Ok(t) => {
                        let m = evaluate_trajectory(ocp, &t, settings);
                        if best.as_ref().is_none_or(|(_, b)| m.merit < b.merit) {
                            best = Some((t, m));
                        }
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            match best {
                Some(b) => b,
                None => return Err(last_err.expect("every candidate failed")),
            }
        }
        None => {
            let t = cold?;
            let m = evaluate_trajectory(ocp, &t, settings);
            (t, m)
        }
    };
    let mut records = vec![record(0, &metrics, 0.0)];
    let mut converged = false;
    let mut gains: Vec<DMatrix<f64>> = Vec::new();

    for iteration in 1..=max_iterations {
        let lq = lq_approximation(ocp, &traj, settings)?;
        let bp = backward_pass(&lq, settings)?;
        gains = bp.gains.clone();
        let scale = settings.tolerance * metrics.merit.abs().max(1.0);
        if -bp.expected_change < scale && metrics.equality_norm < settings.tolerance.sqrt() {
            records.push(record(iteration, &metrics, 0.0));
            converged = true;
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= settings.min_step * (1.0 - 1e-12) {
            let candidate = simulate(ocp, &times, x0, settings, |k, _, x| {
                &traj.inputs[k] + &bp.feedforward[k] * alpha + &bp.gains[k] * (x - &traj.states[k])
            });
            if let Ok(c) = candidate {
                let m = evaluate_trajectory(ocp, &c, settings);
                if m.merit.is_finite() && m.merit <= metrics.merit {
                    accepted = Some((c, m));
                    break;
                }
            }
            alpha *= settings.line_search_factor;
        }
        let Some((c, m)) = accepted else {
            records.push(record(iteration, &metrics, 0.0));
            converged = -bp.expected_change < scale;
            break;
        };
        let decrease = metrics.merit - m.merit;
        traj = c;
        metrics = m;
        records.push(record(iteration, &metrics, alpha));
        if decrease < scale {
            converged = true;
            break;
        }
    }

    let n = traj.inputs.len();
    let mut feedforward = traj.inputs.clone();
    feedforward.push(traj.inputs[n - 1].clone());
    if gains.len() != n {
        gains = vec![DMatrix::zeros(ocp.input_dim(), ocp.state_dim()); n];
    }
    gains.push(gains[n - 1].clone());
    let policy = LinearPolicy::new(times, feedforward, gains, traj.states.clone())?;
    Ok(SolveResult {
        start_time: 0.0,
        policy,
        trajectory: traj,
        metrics,
        iterations: records,
        converged,
        degraded: false,
    })
}

/// Runs SLQ iterations until the merit decrease drops below the tolerance or
/// the iteration limit is hit. Non-convergence is reported in the result.
pub fn slq_solve<P: OptimalControlProblem + Sync + ?Sized>(
    ocp: &P,
    x0: &DVector<f64>,
    warm_start: Option<&LinearPolicy>,
    settings: &SolverSettings,
) -> Result<SolveResult, SolverError> {
    solve_with_budget(ocp, x0, warm_start, settings, settings.max_iterations)
}

/// One receding-horizon update at absolute time `t_now` for a problem
/// assembled from the current measurement. The previous result, shifted to
/// `t_now`, is the warm start; if the solve fails the shifted previous policy
/// is returned and flagged as degraded.
pub fn mpc_step<P: OptimalControlProblem + Sync + ?Sized>(
    ocp: &P,
    x_measured: &DVector<f64>,
    t_now: f64,
    previous: Option<&SolveResult>,
    settings: &SolverSettings,
) -> Result<SolveResult, SolverError> {
    let times = time_grid(ocp.horizon(), settings.dt);
    let warm = previous.map(|p| p.policy.shifted(t_now - p.start_time, &times));
    match solve_with_budget(ocp, x_measured, warm.as_ref(), settings, settings.mpc_iterations) {
        Ok(mut r) => {
            r.start_time = t_now;
            Ok(r)
        }
        Err(e) => {
            let (Some(prev), Some(policy)) = (previous, warm) else { return Err(e) };
            log::warn!("MPC update at t = {t_now:.3} s failed ({e}); reusing the previous policy");
            let trajectory = Trajectory {
                times: policy.times().to_vec(),
                states: policy.nominal_nodes().to_vec(),
                inputs: policy.feedforward_nodes()[..policy.times().len() - 1].to_vec(),
            };
            Ok(SolveResult {
                start_time: t_now,
                policy,
                trajectory,
                metrics: prev.metrics,
                iterations: Vec::new(),
                converged: false,
                degraded: true,
            })
        }
    }
}
