use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::kinematics::wheel_center_body;
use super::{idx, ControlInput, Leg, RobotModel, State, Terrain, INPUT_DIM, STATE_DIM};
use crate::error::ModelError;
use crate::math::{self, Real, M3, V3};

fn check_pitch(pitch: f64, margin: f64) -> Result<(), ModelError> {
    if (std::f64::consts::FRAC_PI_2 - pitch.abs()) <= margin {
        Err(ModelError::EulerSingularity { pitch, margin })
    } else {
        Ok(())
    }
}

/// Matrix mapping torso-frame angular rate to Z-Y-X Euler angle rates.
pub(crate) fn euler_rate_matrix_generic<T: Real>(theta: V3<T>) -> M3<T> {
    let (sr, cr) = theta[0].sin_cos();
    let (sp, cp) = theta[1].sin_cos();
    let tp = sp / cp;
    let one = T::one();
    let zero = T::zero();
    [
        [one, sr * tp, cr * tp],
        [zero, cr, -sr],
        [zero, sr / cp, cr / cp],
    ]
}

pub fn euler_rate_matrix(theta: &Vector3<f64>, margin: f64) -> Result<Matrix3<f64>, ModelError> {
    check_pitch(theta[1], margin)?;
    let t = euler_rate_matrix_generic([theta[0], theta[1], theta[2]]);
    Ok(Matrix3::from_fn(|i, j| t[i][j]))
}

/// Euler angle rates for torso-frame angular velocity `omega`.
pub fn euler_rate_transform(
    theta: &Vector3<f64>,
    omega: &Vector3<f64>,
    margin: f64,
) -> Result<Vector3<f64>, ModelError> {
    Ok(euler_rate_matrix(theta, margin)? * omega)
}

/// Single-rigid-body flow with per-leg kinematics, generic over the scalar.
///
/// `f_ext` is an external force on the COM in world frame (zero for the
/// model used inside the optimiser).
pub(crate) fn flow_generic<T: Real>(
    model: &RobotModel,
    normal: &Vector3<f64>,
    x: &[T],
    u: &[T],
    f_ext: &Vector3<f64>,
    out: &mut [T],
) -> Result<(), ModelError> {
    check_pitch(x[idx::THETA + 1].re(), model.euler_margin)?;
    let theta = [x[idx::THETA], x[idx::THETA + 1], x[idx::THETA + 2]];
    let omega = [x[idx::OMEGA], x[idx::OMEGA + 1], x[idx::OMEGA + 2]];
    let v = [x[idx::VEL], x[idx::VEL + 1], x[idx::VEL + 2]];
    let r = math::rotation_zyx(theta);

    let theta_dot = math::mat_vec(&euler_rate_matrix_generic(theta), omega);
    let p_dot = math::mat_vec(&r, v);

    let n_body = math::mat_t_vec(&r, math::lift::<T>(normal));
    let mut torque = [T::zero(); 3];
    let mut force_w = math::lift::<T>(f_ext);
    for leg in Leg::ALL {
        let o = leg.joint_offset();
        let q = [x[idx::JOINTS + o], x[idx::JOINTS + o + 1], x[idx::JOINTS + o + 2]];
        let lambda = [u[idx::FORCES + o], u[idx::FORCES + o + 1], u[idx::FORCES + o + 2]];
        let center = wheel_center_body(model, leg, q);
        let r_contact = math::sub(center, math::scale(n_body, math::c(model.wheel_radius)));
        let lambda_b = math::mat_t_vec(&r, lambda);
        torque = math::add(torque, math::cross(r_contact, lambda_b));
        force_w = math::add(force_w, lambda);
    }
    let i_omega = math::const_mat_vec(&model.inertia, omega);
    let net = math::sub(torque, math::cross(omega, i_omega));
    let omega_dot = math::const_mat_vec(model.inertia_inverse(), net);

    let gravity_w = [T::zero(), T::zero(), math::c(-model.gravity)];
    let inv_m = math::c::<T>(model.mass.recip());
    let accel_w = math::add(gravity_w, math::scale(force_w, inv_m));
    let v_dot = math::mat_t_vec(&r, accel_w);

    out[idx::THETA..idx::THETA + 3].copy_from_slice(&theta_dot);
    out[idx::POS..idx::POS + 3].copy_from_slice(&p_dot);
    out[idx::OMEGA..idx::OMEGA + 3].copy_from_slice(&omega_dot);
    out[idx::VEL..idx::VEL + 3].copy_from_slice(&v_dot);
    out[idx::JOINTS..idx::JOINTS + super::N_JOINTS].copy_from_slice(&u[idx::JOINT_VEL..idx::JOINT_VEL + super::N_JOINTS]);
    Ok(())
}

fn check_dims(x: &[f64], u: &[f64]) -> Result<(), ModelError> {
    if x.len() != STATE_DIM {
        return Err(ModelError::Dimension { expected: STATE_DIM, got: x.len() });
    }
    if u.len() != INPUT_DIM {
        return Err(ModelError::Dimension { expected: INPUT_DIM, got: u.len() });
    }
    Ok(())
}

/// State derivative on raw vectors, optionally with an external COM force.
pub fn srbd_flow(
    model: &RobotModel,
    terrain: &Terrain,
    x: &[f64],
    u: &[f64],
    f_ext: &Vector3<f64>,
) -> Result<DVector<f64>, ModelError> {
    check_dims(x, u)?;
    let mut out = DVector::zeros(STATE_DIM);
    flow_generic(model, &terrain.normal, x, u, f_ext, out.as_mut_slice())?;
    Ok(out)
}

/// State derivative of the kinodynamic model.
pub fn srbd_derivative(
    model: &RobotModel,
    terrain: &Terrain,
    x: &State,
    u: &ControlInput,
) -> Result<DVector<f64>, ModelError> {
    srbd_flow(model, terrain, x.to_vector().as_slice(), u.to_vector().as_slice(), &Vector3::zeros())
}

/// Flow value with exact Jacobians `(f, df/dx, df/du)` by forward-mode AD.
pub fn srbd_flow_with_jacobians(
    model: &RobotModel,
    terrain: &Terrain,
    x: &[f64],
    u: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>), ModelError> {
    check_dims(x, u)?;
    let mut z = Vec::with_capacity(STATE_DIM + INPUT_DIM);
    z.extend_from_slice(x);
    z.extend_from_slice(u);
    let zero = Vector3::zeros();
    // Joint-velocity columns are an identity block; skip them in the AD sweep.
    let directions = (0..STATE_DIM + idx::JOINT_VEL).collect::<Vec<_>>();
    let (value, jac) = math::forward_jacobian(&z, STATE_DIM, directions, |zz, out| {
        let (xx, uu) = zz.split_at(STATE_DIM);
        flow_generic(model, &terrain.normal, xx, uu, &zero, out)
    })?;
    let a = jac.columns(0, STATE_DIM).into_owned();
    let mut b = jac.columns(STATE_DIM, INPUT_DIM).into_owned();
    for j in 0..super::N_JOINTS {
        b[(idx::JOINTS + j, idx::JOINT_VEL + j)] = 1.0;
    }
    Ok((DVector::from_vec(value), a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{rotation_zyx_f64, skew};
    use crate::model::forward_kinematics;
    use rand::{Rng, SeedableRng};

    fn random_pair(rng: &mut impl Rng) -> (DVector<f64>, DVector<f64>) {
        let m = RobotModel::default();
        let mut x = m.nominal_state(&Terrain::default(), 0.0, 0.0, 0.0).to_vector();
        for i in 0..STATE_DIM {
            x[i] += rng.random_range(-0.5..0.5);
        }
        let u = DVector::from_fn(INPUT_DIM, |i, _| {
            if i < 12 { rng.random_range(-150.0..150.0) } else { rng.random_range(-1.0..1.0) }
        });
        (x, u)
    }

    #[test]
    fn euler_rates_identity_at_zero() {
        let w = Vector3::new(0.1, 0.2, 0.3);
        assert_eq!(euler_rate_transform(&Vector3::zeros(), &w, 1e-3).unwrap(), w);
        assert_eq!(euler_rate_transform(&Vector3::zeros(), &Vector3::zeros(), 1e-3).unwrap(), Vector3::zeros());
    }

    #[test]
    fn euler_rates_reject_singular_pitch() {
        let theta = Vector3::new(0.0, std::f64::consts::FRAC_PI_2 - 1e-4, 0.0);
        assert!(matches!(
            euler_rate_transform(&theta, &Vector3::x(), 1e-3),
            Err(ModelError::EulerSingularity { .. })
        ));
    }

    /// Euler angles of a rotation matrix (Z-Y-X), valid away from gimbal lock.
    fn euler_of(r: &Matrix3<f64>) -> Vector3<f64> {
        Vector3::new(r[(2, 1)].atan2(r[(2, 2)]), (-r[(2, 0)]).asin(), r[(1, 0)].atan2(r[(0, 0)]))
    }

    #[test]
    fn euler_rates_match_rotation_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let theta = Vector3::new(
                rng.random_range(-2.5..2.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(-2.5..2.5),
            );
            let w = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let r0 = rotation_zyx_f64(&theta);
            let h = 1e-6;
            let step = |s: f64| {
                let rot = nalgebra::Rotation3::new(w * s).into_inner();
                euler_of(&(r0 * rot))
            };
            let mut fd = (step(h) - step(-h)) / (2.0 * h);
            // unwrap angles near +/- pi
            for k in [0, 2] {
                if fd[k].abs() > 1e3 {
                    fd[k] = ((step(h)[k] - step(-h)[k] + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
                        - std::f64::consts::PI)
                        / (2.0 * h);
                }
            }
            let exact = euler_rate_transform(&theta, &w, 1e-3).unwrap();
            assert!((fd - exact).norm() < 1e-6 * exact.norm().max(1.0), "{fd} vs {exact}");
        }
    }

    #[test]
    fn free_fall_without_forces() {
        let m = RobotModel::default();
        let t = Terrain::default();
        let mut s = m.nominal_state(&t, 0.0, 0.0, 0.4);
        s.theta[0] = 0.2;
        let xd = srbd_derivative(&m, &t, &s, &ControlInput::zero()).unwrap();
        let g_body = rotation_zyx_f64(&s.theta).transpose() * Vector3::new(0.0, 0.0, -m.gravity);
        assert_eq!(xd.fixed_rows::<3>(idx::OMEGA).norm(), 0.0);
        assert!((xd.fixed_rows::<3>(idx::VEL) - g_body).norm() < 1e-12);
    }

    #[test]
    fn static_stance_is_an_equilibrium() {
        let m = RobotModel::default();
        let t = Terrain::default();
        let s = m.nominal_state(&t, 0.0, 0.0, 0.0);
        let mut u = ControlInput::zero();
        for leg in Leg::ALL {
            u.forces[leg.index()] = Vector3::new(0.0, 0.0, m.mass * m.gravity / 4.0);
        }
        let xd = srbd_derivative(&m, &t, &s, &u).unwrap();
        assert!(xd.fixed_rows::<3>(idx::OMEGA).norm() < 1e-12);
        assert!(xd.fixed_rows::<3>(idx::VEL).norm() < 1e-12);
    }

    /// Term-by-term evaluation with nalgebra types and separately coded
    /// rotation and cross products.
    fn oracle(m: &RobotModel, t: &Terrain, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let s = State::from_slice(x.as_slice()).unwrap();
        let c = ControlInput::from_slice(u.as_slice()).unwrap();
        let rot = nalgebra::Rotation3::from_euler_angles(s.theta[0], s.theta[1], s.theta[2]).into_inner();
        let (sr, cr) = s.theta[0].sin_cos();
        let (sp, cp) = s.theta[1].sin_cos();
        let tmat = Matrix3::new(1.0, sr * sp / cp, cr * sp / cp, 0.0, cr, -sr, 0.0, sr / cp, cr / cp);
        let fk = forward_kinematics(m, t, &s.theta, &s.p, &s.q);
        let mut torque = Vector3::zeros();
        let mut total = Vector3::zeros();
        for leg in Leg::ALL {
            let r_b = rot.transpose() * fk[leg.index()].contact_rel_com;
            let f_b = rot.transpose() * c.forces[leg.index()];
            torque += skew(&r_b) * f_b;
            total += c.forces[leg.index()];
        }
        let omega_dot = m.inertia.try_inverse().unwrap() * (torque - skew(&s.omega) * m.inertia * s.omega);
        let v_dot = rot.transpose() * Vector3::new(0.0, 0.0, -m.gravity) + rot.transpose() * total / m.mass;
        let mut out = DVector::zeros(STATE_DIM);
        out.fixed_rows_mut::<3>(idx::THETA).copy_from(&(tmat * s.omega));
        out.fixed_rows_mut::<3>(idx::POS).copy_from(&(rot * s.v));
        out.fixed_rows_mut::<3>(idx::OMEGA).copy_from(&omega_dot);
        out.fixed_rows_mut::<3>(idx::VEL).copy_from(&v_dot);
        out.rows_mut(idx::JOINTS, 12).copy_from(&c.joint_velocities);
        out
    }

    #[test]
    fn rows_match_term_by_term_oracle() {
        let m = RobotModel::default();
        let t = Terrain::new(Vector3::new(0.0, 0.1, 1.0), 0.7, 0.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let (x, u) = random_pair(&mut rng);
            let f = srbd_flow(&m, &t, x.as_slice(), u.as_slice(), &Vector3::zeros()).unwrap();
            let o = oracle(&m, &t, &x, &u);
            assert!((f - &o).norm() < 1e-9 * o.norm().max(1.0));
        }
    }

    #[test]
    fn affine_in_contact_forces() {
        let m = RobotModel::default();
        let t = Terrain::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (x, u1) = random_pair(&mut rng);
        let (_, u2) = random_pair(&mut rng);
        let mut force_only = u2.clone();
        force_only.rows_mut(12, 12).fill(0.0);
        let f = |u: &DVector<f64>| srbd_flow(&m, &t, x.as_slice(), u.as_slice(), &Vector3::zeros()).unwrap();
        let base = f(&u1);
        let d1 = f(&(&u1 + &force_only)) - &base;
        let d2 = f(&(&u1 + &force_only * 2.0)) - &base;
        assert!((d2 - d1 * 2.0).norm() < 1e-9);
    }

    #[test]
    fn jacobians_match_central_differences() {
        let m = RobotModel::default();
        let t = Terrain::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let (x, u) = random_pair(&mut rng);
            let (_, a, b) = srbd_flow_with_jacobians(&m, &t, x.as_slice(), u.as_slice()).unwrap();
            let h = 1e-6;
            for i in 0..STATE_DIM {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (srbd_flow(&m, &t, xp.as_slice(), u.as_slice(), &Vector3::zeros()).unwrap()
                    - srbd_flow(&m, &t, xm.as_slice(), u.as_slice(), &Vector3::zeros()).unwrap())
                    / (2.0 * h);
                let col = a.column(i);
                assert!((fd - col).norm() <= 1e-5 * col.norm().max(1.0));
            }
            for i in 0..INPUT_DIM {
                let mut up = u.clone();
                let mut um = u.clone();
                up[i] += h;
                um[i] -= h;
                let fd = (srbd_flow(&m, &t, x.as_slice(), up.as_slice(), &Vector3::zeros()).unwrap()
                    - srbd_flow(&m, &t, x.as_slice(), um.as_slice(), &Vector3::zeros()).unwrap())
                    / (2.0 * h);
                let col = b.column(i);
                assert!((fd - col).norm() <= 1e-5 * col.norm().max(1.0));
            }
        }
    }
}
