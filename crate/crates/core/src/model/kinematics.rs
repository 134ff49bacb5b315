use nalgebra::{SMatrix, SVector, Vector3};

use super::{idx, Leg, RobotModel, State, Terrain, N_JOINTS, N_LEGS};
use crate::math::{self, Real, M3, V3};

/// Wheel centre of `leg` in the torso frame for joints `(HAA, HFE, KFE)`.
///
/// HAA rotates about the torso x axis, HFE and KFE about the rotated y axis;
/// thigh and shank hang along -z at zero angles.
pub(crate) fn wheel_center_body<T: Real>(model: &RobotModel, leg: Leg, q: [T; 3]) -> V3<T> {
    let (l1, l2) = (model.thigh_length, model.shank_length);
    let (s0, c0) = q[0].sin_cos();
    let (s1, c1) = q[1].sin_cos();
    let (s12, c12) = (q[1] + q[2]).sin_cos();
    let x = -(s1 * l1 + s12 * l2);
    let z = -(c1 * l1 + c12 * l2);
    let hip = model.hip_offsets[leg.index()];
    [x + hip.x, -s0 * z + hip.y, c0 * z + hip.z]
}

/// d(wheel centre)/dq in the torso frame; `j[r][k]` is row `r`, joint `k`.
pub(crate) fn leg_jacobian_body<T: Real>(model: &RobotModel, q: [T; 3]) -> M3<T> {
    let (l1, l2) = (model.thigh_length, model.shank_length);
    let (s0, c0) = q[0].sin_cos();
    let (s1, c1) = q[1].sin_cos();
    let (s12, c12) = (q[1] + q[2]).sin_cos();
    let x = -(s1 * l1 + s12 * l2);
    let z = -(c1 * l1 + c12 * l2);
    let dx1 = z;
    let dz1 = -x;
    let dx2 = -(c12 * l2);
    let dz2 = s12 * l2;
    let zero = T::zero();
    [
        [zero, dx1, dx2],
        [-(c0 * z), -(s0 * dz1), -(s0 * dz2)],
        [-(s0 * z), c0 * dz1, c0 * dz2],
    ]
}

/// Wheel axle direction in the torso frame.
pub(crate) fn axle_body<T: Real>(haa: T) -> V3<T> {
    let (s, c) = haa.sin_cos();
    [T::zero(), c, s]
}

/// Per-leg forward kinematics result (world frame unless stated).
#[derive(Debug, Clone, PartialEq)]
pub struct LegKinematics {
    pub wheel_center: Vector3<f64>,
    /// Lowest wheel point along the terrain normal.
    pub contact_point: Vector3<f64>,
    /// Contact point minus COM position.
    pub contact_rel_com: Vector3<f64>,
    /// Unit vector in the wheel plane, tangent to the terrain.
    pub rolling_dir: Vector3<f64>,
    /// Unit vector in the terrain plane orthogonal to the rolling direction.
    pub lateral_dir: Vector3<f64>,
}

/// Forward kinematics of all four legs.
pub fn forward_kinematics(
    model: &RobotModel,
    terrain: &Terrain,
    theta: &Vector3<f64>,
    p: &Vector3<f64>,
    q: &SVector<f64, N_JOINTS>,
) -> [LegKinematics; N_LEGS] {
    let r = math::rotation_zyx([theta[0], theta[1], theta[2]]);
    let n = terrain.normal;
    Leg::ALL.map(|leg| {
        let o = leg.joint_offset();
        let qleg = [q[o], q[o + 1], q[o + 2]];
        let center_w = math::re3(math::mat_vec(&r, wheel_center_body(model, leg, qleg)));
        let axle_w = math::re3(math::mat_vec(&r, axle_body(qleg[0])));
        let (rolling_dir, lateral_dir) = rolling_frame(&axle_w, &n);
        let rel = center_w - n * model.wheel_radius;
        LegKinematics {
            wheel_center: p + center_w,
            contact_point: p + rel,
            contact_rel_com: rel,
            rolling_dir,
            lateral_dir,
        }
    })
}

pub(crate) fn rolling_frame(axle_w: &Vector3<f64>, n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let d = axle_w.cross(n).normalize();
    let l = n.cross(&d);
    (d, l)
}

/// Map from `(omega, v, u_j)` (torso-frame rates and all joint velocities,
/// 18 columns) to the world-frame velocity of the contact point of `leg`.
pub fn contact_jacobian(
    model: &RobotModel,
    theta: &Vector3<f64>,
    q: &SVector<f64, N_JOINTS>,
    leg: Leg,
) -> SMatrix<f64, 3, { 6 + N_JOINTS }> {
    let r = math::rotation_zyx_f64(theta);
    let o = leg.joint_offset();
    let qleg = [q[o], q[o + 1], q[o + 2]];
    let center = math::re3(wheel_center_body(model, leg, qleg));
    let jl = leg_jacobian_body(model, qleg);
    let jleg = nalgebra::Matrix3::from_fn(|i, k| jl[i][k]);
    let mut j = SMatrix::<f64, 3, { 6 + N_JOINTS }>::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-r * math::skew(&center)));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&r);
    j.fixed_view_mut::<3, 3>(0, 6 + o).copy_from(&(r * jleg));
    j
}

/// World-frame contact point velocity for the given state and joint velocities.
pub fn contact_velocity(
    model: &RobotModel,
    state: &State,
    joint_velocities: &SVector<f64, N_JOINTS>,
    leg: Leg,
) -> Vector3<f64> {
    let mut gen = nalgebra::SVector::<f64, { 6 + N_JOINTS }>::zeros();
    gen.fixed_rows_mut::<3>(0).copy_from(&state.omega);
    gen.fixed_rows_mut::<3>(3).copy_from(&state.v);
    gen.fixed_rows_mut::<N_JOINTS>(6).copy_from(joint_velocities);
    contact_jacobian(model, &state.theta, &state.q, leg) * gen
}

/// Generic contact velocity plus rolling/lateral directions, used for the
/// rolling constraints and their derivatives. `x` and `u` are full state and
/// input vectors.
pub(crate) fn contact_velocity_generic<T: Real>(
    model: &RobotModel,
    normal: &Vector3<f64>,
    x: &[T],
    u: &[T],
    leg: Leg,
) -> (V3<T>, V3<T>, V3<T>) {
    let theta = [x[idx::THETA], x[idx::THETA + 1], x[idx::THETA + 2]];
    let omega = [x[idx::OMEGA], x[idx::OMEGA + 1], x[idx::OMEGA + 2]];
    let v = [x[idx::VEL], x[idx::VEL + 1], x[idx::VEL + 2]];
    let o = leg.joint_offset();
    let q = [x[idx::JOINTS + o], x[idx::JOINTS + o + 1], x[idx::JOINTS + o + 2]];
    let qd = [u[idx::JOINT_VEL + o], u[idx::JOINT_VEL + o + 1], u[idx::JOINT_VEL + o + 2]];
    let r = math::rotation_zyx(theta);
    let center = wheel_center_body(model, leg, q);
    let jl = leg_jacobian_body(model, q);
    let body_vel = math::add(math::add(v, math::cross(omega, center)), math::mat_vec(&jl, qd));
    let vel_w = math::mat_vec(&r, body_vel);
    let n: V3<T> = math::lift(normal);
    let axle_w = math::mat_vec(&r, axle_body(q[0]));
    let d = math::normalize(math::cross(axle_w, n));
    let l = math::cross(n, d);
    (vel_w, d, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rotation_zyx_f64;
    use nalgebra::{Matrix4, Vector4};

    fn random_state(seed: u64) -> State {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = RobotModel::default();
        let mut s = m.nominal_state(&Terrain::default(), 0.0, 0.0, 0.0);
        s.theta = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        s.p = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        s.omega = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        s.v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        for i in 0..N_JOINTS {
            s.q[i] += rng.random_range(-0.5..0.5);
        }
        s
    }

    /// Independent homogeneous-transform chain for the wheel centre.
    fn transform_chain_center(model: &RobotModel, s: &State, leg: Leg) -> Vector3<f64> {
        fn homog(rot: nalgebra::Matrix3<f64>, t: Vector3<f64>) -> Matrix4<f64> {
            let mut h = Matrix4::identity();
            h.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
            h.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
            h
        }
        let rx = |a: f64| nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), a).into_inner();
        let ry = |a: f64| nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), a).into_inner();
        let [q0, q1, q2] = s.leg_joints(leg);
        let chain = homog(rotation_zyx_f64(&s.theta), s.p)
            * homog(rx(q0), model.hip_offsets[leg.index()])
            * homog(ry(q1), Vector3::zeros())
            * homog(ry(q2), Vector3::new(0.0, 0.0, -model.thigh_length))
            * homog(nalgebra::Matrix3::identity(), Vector3::new(0.0, 0.0, -model.shank_length));
        (chain * Vector4::new(0.0, 0.0, 0.0, 1.0)).xyz()
    }

    #[test]
    fn nominal_stance_is_symmetric() {
        let m = RobotModel::default();
        let t = Terrain::default();
        let s = m.nominal_state(&t, 0.0, 0.0, 0.0);
        let fk = forward_kinematics(&m, &t, &s.theta, &s.p, &s.q);
        let c: Vec<_> = fk.iter().map(|k| k.contact_point).collect();
        assert!((c[0].x - c[1].x).abs() < 1e-12 && (c[0].y + c[1].y).abs() < 1e-12);
        assert!((c[0].x + c[2].x).abs() < 1e-12 && (c[0].y - c[2].y).abs() < 1e-12);
        assert!((c[3] + c[0]).xy().norm() < 1e-12);
        for k in &fk {
            assert!(k.contact_point.z.abs() < 1e-12, "contacts on the plane");
            assert!((k.rolling_dir - Vector3::x()).norm() < 1e-12);
            assert!((k.lateral_dir - Vector3::y()).norm() < 1e-12);
        }
    }

    #[test]
    fn knee_perturbation_moves_only_that_leg() {
        let m = RobotModel::default();
        let t = Terrain::default();
        let s = m.nominal_state(&t, 0.0, 0.0, 0.0);
        let mut s2 = s.clone();
        s2.q[Leg::LH.joint_offset() + 2] += 0.1;
        let a = forward_kinematics(&m, &t, &s.theta, &s.p, &s.q);
        let b = forward_kinematics(&m, &t, &s2.theta, &s2.p, &s2.q);
        for leg in Leg::ALL {
            let moved = (a[leg.index()].contact_point - b[leg.index()].contact_point).norm();
            if leg == Leg::LH {
                assert!(moved > 1e-3);
            } else {
                assert_eq!(moved, 0.0);
            }
        }
    }

    #[test]
    fn matches_transform_chain_oracle() {
        let m = RobotModel::default();
        let t = Terrain::new(Vector3::new(0.1, 0.05, 1.0), 0.7, 0.2).unwrap();
        for seed in 0..50 {
            let s = random_state(seed);
            let fk = forward_kinematics(&m, &t, &s.theta, &s.p, &s.q);
            for leg in Leg::ALL {
                let center = transform_chain_center(&m, &s, leg);
                let k = &fk[leg.index()];
                assert!((k.wheel_center - center).norm() < 1e-12);
                let contact = center - t.normal * m.wheel_radius;
                assert!((k.contact_point - contact).norm() < 1e-12);
                assert!(((k.wheel_center - k.contact_point).norm() - m.wheel_radius).abs() < 1e-12);
                assert!((k.rolling_dir.norm() - 1.0).abs() < 1e-12);
                assert!(k.rolling_dir.dot(&t.normal).abs() < 1e-12);
                assert!(k.lateral_dir.dot(&k.rolling_dir).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_velocity_gives_zero_contact_velocity() {
        let m = RobotModel::default();
        let mut s = random_state(3);
        s.omega = Vector3::zeros();
        s.v = Vector3::zeros();
        for leg in Leg::ALL {
            assert_eq!(contact_velocity(&m, &s, &SVector::zeros(), leg).norm(), 0.0);
        }
    }

    #[test]
    fn pure_translation_moves_every_contact_rigidly() {
        let m = RobotModel::default();
        let mut s = random_state(4);
        s.omega = Vector3::zeros();
        s.v = Vector3::new(1.0, 0.0, 0.0);
        let expected = rotation_zyx_f64(&s.theta) * s.v;
        for leg in Leg::ALL {
            let v = contact_velocity(&m, &s, &SVector::zeros(), leg);
            assert!((v - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = RobotModel::default();
        let t = Terrain::default();
        for seed in 0..50 {
            let s = random_state(100 + seed);
            let ud = SVector::<f64, N_JOINTS>::from_fn(|i, _| ((i as f64) * 0.37 + seed as f64).sin());
            let rate = crate::model::euler_rate_transform(&s.theta, &s.omega, m.euler_margin).unwrap();
            let r = rotation_zyx_f64(&s.theta);
            let at = |h: f64| {
                let theta = s.theta + rate * h;
                let p = s.p + r * s.v * h;
                let q = s.q + ud * h;
                forward_kinematics(&m, &t, &theta, &p, &q)
            };
            let h = 1e-6;
            let (fp, fm) = (at(h), at(-h));
            for leg in Leg::ALL {
                let fd = (fp[leg.index()].contact_point - fm[leg.index()].contact_point) / (2.0 * h);
                let v = contact_velocity(&m, &s, &ud, leg);
                assert!((fd - v).norm() <= 1e-5 * v.norm().max(1.0), "leg {leg}: {fd} vs {v}");
            }
        }
    }

    #[test]
    fn other_legs_joint_columns_are_zero() {
        let m = RobotModel::default();
        let s = random_state(9);
        for leg in Leg::ALL {
            let j = contact_jacobian(&m, &s.theta, &s.q, leg);
            for other in Leg::ALL.into_iter().filter(|&o| o != leg) {
                let block = j.fixed_view::<3, 3>(0, 6 + other.joint_offset());
                assert_eq!(block.norm(), 0.0);
            }
        }
    }

    #[test]
    fn rolling_direction_follows_yaw() {
        let m = RobotModel::default();
        let t = Terrain::default();
        let mut s = random_state(11);
        s.theta = Vector3::zeros();
        let base = forward_kinematics(&m, &t, &s.theta, &s.p, &s.q);
        for yaw in [0.3, -1.2, 2.9] {
            s.theta[2] = yaw;
            let rotated = forward_kinematics(&m, &t, &s.theta, &s.p, &s.q);
            let rz = crate::math::rot_z(yaw);
            for leg in Leg::ALL {
                let expected = rz * base[leg.index()].rolling_dir;
                assert!((rotated[leg.index()].rolling_dir - expected).norm() < 1e-12);
            }
        }
    }
}
