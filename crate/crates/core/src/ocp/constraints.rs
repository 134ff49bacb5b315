use nalgebra::{Matrix3, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::math::{self, Real};
use crate::model::{contact_velocity_generic, idx, ControlInput, Leg, RobotModel, State, Terrain};

/// Vertical velocity reference of a swinging wheel: the derivative of the
/// height profile `z(s) = 64 apex s^3 (1 - s)^3`, `s` the normalised phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwingProfile {
    /// Peak clearance at mid-swing (m).
    pub apex: f64,
    /// Swing duration (s).
    pub duration: f64,
}

impl Default for SwingProfile {
    fn default() -> Self {
        SwingProfile { apex: 0.09, duration: 0.3 }
    }
}

impl SwingProfile {
    fn phase(&self, t: f64) -> f64 {
        (t / self.duration).clamp(0.0, 1.0)
    }

    /// Clearance `t` seconds after lift-off.
    pub fn height(&self, t: f64) -> f64 {
        let s = self.phase(t);
        let w = s * (1.0 - s);
        64.0 * self.apex * w * w * w
    }

    /// Normal velocity reference `c(t)`, `t` seconds after lift-off.
    pub fn velocity(&self, t: f64) -> f64 {
        let s = self.phase(t);
        let w = s * (1.0 - s);
        192.0 * self.apex * w * w * (1.0 - 2.0 * s) / self.duration
    }
}

/// Rolling-constraint residual of a stance leg for generic scalars:
/// `[lateral, normal]` components of the contact-point velocity.
pub(crate) fn stance_residual<T: Real>(model: &RobotModel, normal: &Vector3<f64>, x: &[T], u: &[T], leg: Leg) -> [T; 2] {
    let (v, _, l) = contact_velocity_generic(model, normal, x, u, leg);
    let n = math::lift::<T>(normal);
    [math::dot(l, v), math::dot(n, v)]
}

/// Swing residual `[lambda (3), normal velocity - c]`.
pub(crate) fn swing_residual<T: Real>(
    model: &RobotModel,
    normal: &Vector3<f64>,
    x: &[T],
    u: &[T],
    leg: Leg,
    target: f64,
) -> [T; 4] {
    let (v, _, _) = contact_velocity_generic(model, normal, x, u, leg);
    let n = math::lift::<T>(normal);
    let o = idx::FORCES + leg.joint_offset();
    [u[o], u[o + 1], u[o + 2], math::dot(n, v) - math::c::<T>(target)]
}

/// Lateral and normal contact-point velocity of a stance leg; zero iff the
/// wheel purely rolls.
pub fn stance_constraints(model: &RobotModel, terrain: &Terrain, x: &State, u: &ControlInput, leg: Leg) -> Vector2<f64> {
    let (xv, uv) = (x.to_vector(), u.to_vector());
    let r = stance_residual(model, &terrain.normal, xv.as_slice(), uv.as_slice(), leg);
    Vector2::new(r[0], r[1])
}

/// Zero-force and swing-height-velocity residuals of a swing leg, `t`
/// seconds after lift-off.
pub fn swing_constraints(
    model: &RobotModel,
    terrain: &Terrain,
    profile: &SwingProfile,
    x: &State,
    u: &ControlInput,
    leg: Leg,
    t: f64,
) -> Vector4<f64> {
    let (xv, uv) = (x.to_vector(), u.to_vector());
    let r = swing_residual(model, &terrain.normal, xv.as_slice(), uv.as_slice(), leg, profile.velocity(t));
    Vector4::new(r[0], r[1], r[2], r[3])
}

/// Smoothed friction-cone margin `mu F_n - sqrt(F_t1^2 + F_t2^2 + eps^2)` of a
/// world-frame force; non-negative inside the cone.
pub fn friction_cone(lambda: &Vector3<f64>, terrain: &Terrain, eps: f64) -> f64 {
    friction_cone_derivatives(lambda, terrain, eps).0
}

/// Cone margin with its gradient and Hessian in the world-frame force.
pub fn friction_cone_derivatives(lambda: &Vector3<f64>, terrain: &Terrain, eps: f64) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let frame = terrain.surface_frame();
    let f = frame * lambda;
    let s = (f.x * f.x + f.y * f.y + eps * eps).sqrt();
    let h = terrain.mu * f.z - s;
    let grad_s = Vector3::new(-f.x / s, -f.y / s, terrain.mu);
    let mut hess_s = Matrix3::zeros();
    hess_s[(0, 0)] = -(1.0 - f.x * f.x / (s * s)) / s;
    hess_s[(1, 1)] = -(1.0 - f.y * f.y / (s * s)) / s;
    hess_s[(0, 1)] = f.x * f.y / (s * s * s);
    hess_s[(1, 0)] = hess_s[(0, 1)];
    (h, frame.transpose() * grad_s, frame.transpose() * hess_s * frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stationary() -> (RobotModel, Terrain, State) {
        let m = RobotModel::default();
        let t = Terrain::default();
        let s = m.nominal_state(&t, 0.0, 0.0, 0.0);
        (m, t, s)
    }

    #[test]
    fn stance_examples() {
        let (m, t, mut s) = stationary();
        let u = ControlInput::zero();
        for leg in Leg::ALL {
            assert_eq!(stance_constraints(&m, &t, &s, &u, leg), Vector2::zeros());
        }
        s.v = Vector3::new(0.8, 0.0, 0.0);
        for leg in Leg::ALL {
            assert!(stance_constraints(&m, &t, &s, &u, leg).norm() < 1e-15);
        }
        // torso velocity (0.1, 0.2, 0.05) moves every contact with it
        s.v = Vector3::new(0.1, 0.2, 0.05);
        let r = stance_constraints(&m, &t, &s, &u, Leg::LF);
        assert!((r - Vector2::new(0.2, 0.05)).norm() < 1e-15);
    }

    #[test]
    fn swing_examples() {
        let (m, t, mut s) = stationary();
        let profile = SwingProfile::default();
        let mut u = ControlInput::zero();
        assert_eq!(swing_constraints(&m, &t, &profile, &s, &u, Leg::RH, 0.0), Vector4::zeros());
        u.forces[Leg::RH.index()] = Vector3::new(1.0, 0.0, 0.0);
        assert_eq!(swing_constraints(&m, &t, &profile, &s, &u, Leg::RH, 0.0)[0], 1.0);
        u = ControlInput::zero();
        s.v = Vector3::new(0.0, 0.0, 0.3);
        let mid = swing_constraints(&m, &t, &profile, &s, &u, Leg::RH, 0.15);
        assert!((mid[3] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn swing_profile_properties() {
        let p = SwingProfile::default();
        assert_eq!(p.velocity(0.0), 0.0);
        assert_eq!(p.velocity(p.duration), 0.0);
        assert!(p.velocity(0.15).abs() < 1e-15);
        assert!((p.height(0.15) - 0.09).abs() < 1e-15);
        // integral of c over the swing vanishes
        let n = 3000;
        let h = p.duration / n as f64;
        let integral: f64 = (0..n).map(|k| p.velocity((k as f64 + 0.5) * h) * h).sum();
        assert!(integral.abs() < 1e-9);
        // c is the derivative of the height
        for t in [0.03, 0.1, 0.21] {
            let fd = (p.height(t + 1e-6) - p.height(t - 1e-6)) / 2e-6;
            assert!((fd - p.velocity(t)).abs() < 1e-7);
        }
    }

    #[test]
    fn friction_cone_examples() {
        let flat = Terrain::flat(0.7);
        let h = friction_cone(&Vector3::new(0.0, 0.0, 10.0), &flat, 0.01);
        assert!((h - (7.0 - 0.01)).abs() < 1e-12);
        let h = friction_cone(&Vector3::new(5.0, 0.0, 5.0), &Terrain::flat(1.0), 0.01);
        assert!(h.abs() < 1e-4);
        let h = friction_cone(&Vector3::new(3.0, 4.0, 5.0), &flat, 0.01);
        assert!((h + 1.5).abs() < 1e-4);
    }

    #[test]
    fn friction_cone_uses_surface_frame() {
        let slope = Terrain::new(Vector3::new(0.3, 0.0, 1.0), 0.7, 0.0).unwrap();
        let along_normal = slope.normal * 10.0;
        assert!((friction_cone(&along_normal, &slope, 0.0) - 7.0).abs() < 1e-12);
    }
}
