//! Fast oracle checks runnable from an installed binary.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gait::{generate_gait, GaitConfig, LegAnchor, ModeSchedule, ReferenceTrajectory, VelocityCommand};
use crate::model::{srbd_flow, srbd_flow_with_jacobians, Leg, RobotModel, Terrain, INPUT_DIM, STATE_DIM};
use crate::solver::{slq_solve, time_grid, LtiProblem, SolverSettings};

pub type CheckFn = Box<dyn Fn() -> Result<String, String>>;

pub struct Check {
    pub name: &'static str,
    pub run: CheckFn,
}

/// Outcome of one registry run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelftestReport {
    pub total: usize,
    pub failed: usize,
}

/// Discrete Riccati cost of the double integrator on the solver grid,
/// stage weights scaled by the step length.
fn riccati_cost(steps: &[f64], q: f64, r: f64, qf: f64, x0: &DVector<f64>) -> f64 {
    let mut p = DMatrix::identity(2, 2) * qf;
    for &h in steps.iter().rev() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, h, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.5 * h * h, h]);
        let s = r * h + (b.transpose() * &p * &b)[(0, 0)];
        let pb = &p * &b;
        let bpa = b.transpose() * &p * &a;
        p = DMatrix::identity(2, 2) * (q * h) + a.transpose() * &p * &a - a.transpose() * &pb * &bpa / s;
        p = (&p + p.transpose()) * 0.5;
    }
    0.5 * x0.dot(&(&p * x0))
}

pub fn riccati_check() -> Result<String, String> {
    let (q, r, qf, horizon) = (1.0, 1.0, 1.0, 2.0);
    let problem = LtiProblem::double_integrator(q, r, qf, horizon);
    let settings = SolverSettings::default();
    let x0 = DVector::from_vec(vec![1.0, 0.5]);
    let res = slq_solve(&problem, &x0, None, &settings).map_err(|e| e.to_string())?;
    let grid = time_grid(horizon, settings.dt);
    let steps: Vec<f64> = grid.windows(2).map(|w| w[1] - w[0]).collect();
    let oracle = riccati_cost(&steps, q, r, qf, &x0);
    let rel = ((res.metrics.cost - oracle) / oracle).abs();
    if rel < 1e-6 {
        Ok(format!("relative cost gap {rel:.1e}"))
    } else {
        Err(format!("cost {} vs Riccati {oracle} (relative gap {rel:.1e})", res.metrics.cost))
    }
}

/// Compares the analytic flow Jacobians of `jacobians` against central
/// differences of the flow of `values` at random states. The two models
/// are the same in a healthy build; passing different ones injects a fault.
pub fn finite_difference_check(values: &RobotModel, jacobians: &RobotModel, samples: usize) -> Result<String, String> {
    let terrain = Terrain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let zero = Vector3::zeros();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let mut x = values.nominal_state(&terrain, 0.0, 0.0, 0.0).to_vector();
        for v in x.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let u = DVector::from_fn(INPUT_DIM, |i, _| {
            if i < 12 && i % 3 == 2 {
                rng.random_range(50.0..200.0)
            } else {
                rng.random_range(-20.0..20.0) * if i < 12 { 1.0 } else { 0.05 }
            }
        });
        let (f, a, b) = srbd_flow_with_jacobians(jacobians, &terrain, x.as_slice(), u.as_slice())
            .map_err(|e| e.to_string())?;
        let f_ref = srbd_flow(values, &terrain, x.as_slice(), u.as_slice(), &zero).map_err(|e| e.to_string())?;
        let scale = |m: f64| m.abs().max(1.0);
        let mut gap = |analytic: f64, numeric: f64| worst = worst.max((analytic - numeric).abs() / scale(numeric));
        for i in 0..STATE_DIM {
            gap(f[i], f_ref[i]);
        }
        for j in 0..STATE_DIM + INPUT_DIM {
            let (mut xp, mut xm, mut up, mut um) = (x.clone(), x.clone(), u.clone(), u.clone());
            if j < STATE_DIM {
                xp[j] += h;
                xm[j] -= h;
            } else {
                up[j - STATE_DIM] += h;
                um[j - STATE_DIM] -= h;
            }
            let fp = srbd_flow(values, &terrain, xp.as_slice(), up.as_slice(), &zero).map_err(|e| e.to_string())?;
            let fm = srbd_flow(values, &terrain, xm.as_slice(), um.as_slice(), &zero).map_err(|e| e.to_string())?;
            for i in 0..STATE_DIM {
                let numeric = (fp[i] - fm[i]) / (2.0 * h);
                let analytic = if j < STATE_DIM { a[(i, j)] } else { b[(i, j - STATE_DIM)] };
                gap(analytic, numeric);
            }
        }
    }
    if worst < 1e-5 {
        Ok(format!("{samples} samples, worst relative gap {worst:.1e}"))
    } else {
        Err(format!("worst relative gap {worst:.1e} exceeds 1e-5"))
    }
}

/// First lift-off under pure lateral drift happens when the lateral error
/// reaches `(1 - u_bar) lambda_perp`.
pub fn gait_crossing_check() -> Result<String, String> {
    let cfg = GaitConfig::default();
    let speed = 0.3;
    let horizon = 0.8;
    let cmd = VelocityCommand::new(0.0, speed, 0.0);
    let reference = ReferenceTrajectory::integrate(Vector3::zeros(), 0.0, cfg.dt_grid, horizon, |_| cmd)
        .map_err(|e| e.to_string())?;
    let offsets = RobotModel::default().nominal_contact_offsets();
    let anchors = Leg::ALL.map(|leg| LegAnchor {
        time: 0.0,
        contact: offsets[leg.index()],
        torso: Vector3::zeros(),
        offset: offsets[leg.index()],
        rolling_dir: Vector3::x(),
    });
    let plan = generate_gait(&cfg, &anchors, &ModeSchedule::all_stance(horizon), &reference, &offsets, horizon)
        .map_err(|e| e.to_string())?;
    let first = plan.swings().iter().map(|s| s.start).fold(f64::INFINITY, f64::min);
    let expected = (1.0 - cfg.u_bar) * cfg.lambda_perp / speed;
    if (first - expected).abs() < 1e-9 && plan.respects_neighbors() {
        Ok(format!("first lift-off at {first:.6} s"))
    } else {
        Err(format!("first lift-off at {first} s, expected {expected} s"))
    }
}

/// Checks of a healthy build.
pub fn registry() -> Vec<Check> {
    vec![
        Check { name: "riccati", run: Box::new(riccati_check) },
        Check {
            name: "finite-differences",
            run: Box::new(|| {
                let m = RobotModel::default();
                finite_difference_check(&m, &m, 20)
            }),
        },
        Check { name: "gait-crossing", run: Box::new(gait_crossing_check) },
    ]
}

/// Registry with the Jacobian model's gravity raised by 1 %, which the
/// finite-difference check must catch.
pub fn faulty_registry() -> Vec<Check> {
    let mut checks = registry();
    for c in checks.iter_mut().filter(|c| c.name == "finite-differences") {
        c.run = Box::new(|| {
            let m = RobotModel::default();
            let mut heavier = m.clone();
            heavier.gravity *= 1.01;
            finite_difference_check(&m, &heavier, 20)
        });
    }
    checks
}

/// Runs every check and prints one line per check.
pub fn run_checks(checks: &[Check], out: &mut impl Write) -> SelftestReport {
    let mut failed = 0;
    for c in checks {
        let line = match (c.run)() {
            Ok(detail) => format!("PASS {}: {detail}", c.name),
            Err(detail) => {
                failed += 1;
                format!("FAIL {}: {detail}", c.name)
            }
        };
        let _ = writeln!(out, "{line}");
    }
    SelftestReport { total: checks.len(), failed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let mut out = Vec::new();
        let report = run_checks(&registry(), &mut out);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(report, SelftestReport { total: 3, failed: 0 }, "{text}");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn heavier_gravity_in_one_copy_is_caught() {
        let mut out = Vec::new();
        let report = run_checks(&faulty_registry(), &mut out);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(report.failed, 1);
        assert!(text.contains("FAIL finite-differences"), "{text}");
    }
}
