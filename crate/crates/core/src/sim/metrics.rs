use nalgebra::{Vector2, Vector3};

use super::{Sample, SimLog};
use crate::error::MetricError;
use crate::math::rotation_zyx_f64;
use crate::model::{contact_jacobian, forward_kinematics, idx, Leg, RobotModel, State};

/// Normal force below which a leg does not count as loaded (N).
pub const LOAD_THRESHOLD: f64 = 1.0;
/// Mean speed below which the cost of transport is undefined (m/s).
pub const COT_SPEED_FLOOR: f64 = 0.05;

/// Force-weighted centroid of the loaded contact points, in the ground plane.
pub fn zmp(points: &[Vector3<f64>], forces: &[Vector3<f64>]) -> Result<Vector2<f64>, MetricError> {
    let mut sum = Vector2::zeros();
    let mut total = 0.0;
    for (p, f) in points.iter().zip(forces) {
        if f.z > LOAD_THRESHOLD {
            sum += p.xy() * f.z;
            total += f.z;
        }
    }
    if total <= 0.0 {
        return Err(MetricError::UndefinedZmp);
    }
    Ok(sum / total)
}

/// Zero moment point of a point-mass model at height `height` above the
/// ground driven by the total contact force: `p - h F_xy / F_z`. This is the
/// ZMP a planner built on the inverted-pendulum abstraction would see.
pub fn lip_zmp(com: &Vector3<f64>, height: f64, total_force: &Vector3<f64>) -> Result<Vector2<f64>, MetricError> {
    if total_force.z <= LOAD_THRESHOLD {
        return Err(MetricError::UndefinedZmp);
    }
    Ok(com.xy() - total_force.xy() * (height / total_force.z))
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross2(&(hull[hull.len() - 1] - hull[hull.len() - 2]), &(p - hull[hull.len() - 2])) <= 1e-15 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

fn segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * s)).norm()
}

/// Signed distance of `point` to the support polygon of `contacts` (positive
/// inside). With one or two contacts, or collinear ones, the polygon is
/// degenerate and the result is minus the distance to it.
pub fn support_margin(point: &Vector2<f64>, contacts: &[Vector2<f64>]) -> Result<f64, MetricError> {
    let hull = convex_hull(contacts);
    match hull.len() {
        0 => Err(MetricError::NoSupport),
        1 => Ok(-(point - hull[0]).norm()),
        2 => Ok(-segment_distance(point, &hull[0], &hull[1])),
        n => {
            let mut inside = true;
            let mut dist = f64::INFINITY;
            for i in 0..n {
                let (a, b) = (&hull[i], &hull[(i + 1) % n]);
                inside &= cross2(&(b - a), &(point - a)) >= 0.0;
                dist = dist.min(segment_distance(point, a, b));
            }
            Ok(if inside { dist } else { -dist })
        }
    }
}

/// Joint torques balancing the contact force of one leg, `-J^T lambda`.
pub fn leg_torques(model: &RobotModel, state: &State, leg: Leg, force: &Vector3<f64>) -> Vector3<f64> {
    let j = contact_jacobian(model, &state.theta, &state.q, leg);
    let jl = j.fixed_view::<3, 3>(0, 6 + leg.joint_offset());
    -(jl.transpose() * force)
}

/// Positive mechanical joint power of one logged sample (W).
pub fn positive_joint_power(model: &RobotModel, sample: &Sample) -> f64 {
    let state = State::from_slice(sample.state.as_slice()).expect("logged state has the model dimension");
    let u = &sample.input;
    let mut power = 0.0;
    for leg in Leg::ALL {
        let o = leg.joint_offset();
        let force = Vector3::new(u[idx::FORCES + o], u[idx::FORCES + o + 1], u[idx::FORCES + o + 2]);
        let tau = leg_torques(model, &state, leg, &force);
        for k in 0..3 {
            power += (tau[k] * u[idx::JOINT_VEL + o + k]).max(0.0);
        }
    }
    power
}

/// Horizontal COM speed of a state vector (m/s).
pub fn horizontal_speed(x: &[f64]) -> f64 {
    let r = rotation_zyx_f64(&Vector3::new(x[idx::THETA], x[idx::THETA + 1], x[idx::THETA + 2]));
    let v = r * Vector3::new(x[idx::VEL], x[idx::VEL + 1], x[idx::VEL + 2]);
    v.xy().norm()
}

/// Mean positive joint power over the window divided by `m g` and the mean
/// horizontal speed.
pub fn mechanical_cot(model: &RobotModel, window: &[Sample]) -> Result<f64, MetricError> {
    if window.is_empty() {
        return Err(MetricError::EmptyWindow);
    }
    let n = window.len() as f64;
    let speed = window.iter().map(|s| horizontal_speed(s.state.as_slice())).sum::<f64>() / n;
    if speed < COT_SPEED_FLOOR {
        return Err(MetricError::SpeedTooLow { speed, floor: COT_SPEED_FLOOR });
    }
    let power = window.iter().map(|s| positive_joint_power(model, s)).sum::<f64>() / n;
    Ok(power / (model.mass * model.gravity * speed))
}

/// One evaluation of the terminal prediction error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionSample {
    /// Time at which the prediction was made (s).
    pub planned_at: f64,
    /// Time of the measurement, `planned_at + horizon` (s).
    pub time: f64,
    pub error: f64,
}

/// Distance between the COM position predicted at the end of each horizon
/// and the position measured at that time. Only predictions whose whole
/// horizon saw a constant velocity command count.
pub fn prediction_error(log: &SimLog, horizon: f64) -> Vec<PredictionSample> {
    let mut out = Vec::new();
    for cycle in &log.cycles {
        if (cycle.horizon - horizon).abs() > 1e-9 {
            continue;
        }
        let (Some(i0), Some(i1)) = (log.sample_index(cycle.time), log.sample_index(cycle.time + horizon)) else {
            continue;
        };
        let command = log.samples[i0].command;
        if log.samples[i0..=i1].iter().any(|s| s.command != command) {
            continue;
        }
        let p = log.samples[i1].state.fixed_rows::<3>(idx::POS).into_owned();
        out.push(PredictionSample {
            planned_at: cycle.time,
            time: log.samples[i1].time,
            error: (cycle.predicted_position - p).norm(),
        });
    }
    out
}

/// Per-sample support margins of the force-centroid and point-mass ZMPs.
pub fn zmp_margins(model: &RobotModel, log: &SimLog, sample: &Sample) -> (Option<f64>, Option<f64>) {
    let state = State::from_slice(sample.state.as_slice()).expect("logged state has the model dimension");
    let fk = forward_kinematics(model, &log.terrain, &state.theta, &state.p, &state.q);
    let mut points = Vec::new();
    let mut forces = Vec::new();
    let mut support = Vec::new();
    let mut total = Vector3::zeros();
    for leg in Leg::ALL {
        let o = idx::FORCES + leg.joint_offset();
        let f = Vector3::new(sample.input[o], sample.input[o + 1], sample.input[o + 2]);
        total += f;
        if sample.contacts[leg.index()] {
            let c = fk[leg.index()].contact_point;
            points.push(c);
            forces.push(f);
            support.push(c.xy());
        }
    }
    let height = log.terrain.height_above(&state.p);
    let centroid = zmp(&points, &forces).ok().and_then(|z| support_margin(&z, &support).ok());
    let lip = lip_zmp(&state.p, height, &total).ok().and_then(|z| support_margin(&z, &support).ok());
    (centroid, lip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect() -> Vec<Vector2<f64>> {
        vec![Vector2::new(0.0, 0.0), Vector2::new(0.6, 0.0), Vector2::new(0.6, 0.4), Vector2::new(0.0, 0.4)]
    }

    #[test]
    fn zmp_examples() {
        let pts: Vec<Vector3<f64>> = rect().iter().map(|p| Vector3::new(p.x, p.y, 0.0)).collect();
        let f = vec![Vector3::new(0.0, 0.0, 100.0); 4];
        assert!((zmp(&pts, &f).unwrap() - Vector2::new(0.3, 0.2)).norm() < 1e-12);
        let single = zmp(&pts[2..3], &f[..1]).unwrap();
        assert_eq!(single, Vector2::new(0.6, 0.4));
        let two = zmp(
            &[Vector3::zeros(), Vector3::new(0.6, 0.0, 0.0)],
            &[Vector3::new(0.0, 0.0, 100.0), Vector3::new(0.0, 0.0, 300.0)],
        )
        .unwrap();
        assert!((two.x - 0.45).abs() < 1e-12);
        assert_eq!(zmp(&pts, &[Vector3::zeros(); 4]), Err(MetricError::UndefinedZmp));
    }

    #[test]
    fn support_margin_examples() {
        let r = rect();
        assert!((support_margin(&Vector2::new(0.3, 0.2), &r).unwrap() - 0.2).abs() < 1e-12);
        assert!(support_margin(&Vector2::new(0.6, 0.1), &r).unwrap().abs() < 1e-12);
        assert!((support_margin(&Vector2::new(0.3, -0.1), &r).unwrap() + 0.1).abs() < 1e-12);
        // order of the contacts does not matter
        let shuffled = vec![r[2], r[0], r[3], r[1]];
        assert!((support_margin(&Vector2::new(0.3, 0.2), &shuffled).unwrap() - 0.2).abs() < 1e-12);
        let seg = support_margin(&Vector2::new(0.3, 0.1), &[r[0], r[1]]).unwrap();
        assert!((seg + 0.1).abs() < 1e-12);
        assert!((support_margin(&Vector2::new(0.3, 0.4), &[r[0]]).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(support_margin(&Vector2::zeros(), &[]), Err(MetricError::NoSupport));
    }

    #[test]
    fn margin_matches_brute_force_distance() {
        // dense sampling of the rectangle boundary as an independent oracle
        let r = rect();
        let boundary: Vec<Vector2<f64>> = (0..4)
            .flat_map(|i| {
                let (a, b) = (r[i], r[(i + 1) % 4]);
                (0..=2000).map(move |k| a + (b - a) * (k as f64 / 2000.0))
            })
            .collect();
        for p in [Vector2::new(0.9, 0.7), Vector2::new(-0.2, 0.1), Vector2::new(0.1, 0.35), Vector2::new(0.62, -0.05)] {
            let d = boundary.iter().map(|b| (p - b).norm()).fold(f64::INFINITY, f64::min);
            let inside = p.x > 0.0 && p.x < 0.6 && p.y > 0.0 && p.y < 0.4;
            let expected = if inside { d } else { -d };
            assert!((support_margin(&p, &r).unwrap() - expected).abs() < 1e-3);
        }
    }

    #[test]
    fn lip_zmp_shifts_against_acceleration() {
        let z = lip_zmp(&Vector3::new(0.0, 0.0, 0.6), 0.6, &Vector3::new(-100.0, 0.0, 500.0)).unwrap();
        assert!((z.x - 0.12).abs() < 1e-12);
        assert!(lip_zmp(&Vector3::zeros(), 0.6, &Vector3::zeros()).is_err());
    }
}
