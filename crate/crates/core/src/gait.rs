//! Aperiodic gait sequencing from kinematic leg utilities.
//!
//! Every stance wheel may only roll along its rolling direction, so when the
//! torso reference drifts sideways or turns, the wheel falls behind its
//! preferred placement under the hip. The utility of a leg measures that
//! drift inside an ellipse of reach; once it drops below a threshold the leg
//! is given a swing of fixed duration, subject to neighbouring legs being on
//! the ground.

use std::io::Write;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GaitError;
use crate::math::rot_z;
use crate::model::{forward_kinematics, Leg, RobotModel, State, Terrain, N_LEGS};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitConfig {
    /// Ellipse half-axis along the rolling direction (m).
    pub lambda_par: f64,
    /// Ellipse half-axis lateral to the rolling direction (m).
    pub lambda_perp: f64,
    /// Utility threshold that triggers a swing.
    pub u_bar: f64,
    /// Swing duration (s).
    pub t_swing: f64,
    /// Grid on which utilities are evaluated (s).
    pub dt_grid: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        GaitConfig { lambda_par: 0.25, lambda_perp: 0.10, u_bar: 0.2, t_swing: 0.3, dt_grid: 0.015 }
    }
}

impl GaitConfig {
    pub fn validate(&self) -> Result<(), GaitError> {
        if !(self.lambda_par > 0.0 && self.lambda_perp > 0.0) {
            return Err(GaitError::InvalidConfig("ellipse half-axes must be positive".into()));
        }
        if !(self.u_bar > 0.0 && self.u_bar < 1.0) {
            return Err(GaitError::InvalidConfig(format!("u_bar must lie in (0, 1), got {}", self.u_bar)));
        }
        if !(self.t_swing > 0.0 && self.dt_grid > 0.0) {
            return Err(GaitError::InvalidConfig("swing duration and grid step must be positive".into()));
        }
        Ok(())
    }
}

/// Horizontal unit vector orthogonal to `rolling_dir`.
fn lateral_of(rolling_dir: &Vector3<f64>) -> Vector3<f64> {
    let l = Vector3::z().cross(rolling_dir);
    let n = l.norm();
    if n > 0.0 {
        l / n
    } else {
        Vector3::y()
    }
}

/// Kinematic utility of a leg, `1` when the wheel sits exactly at its
/// touch-down offset from the torso reference and `0` on the ellipse boundary.
pub fn leg_utility(
    cfg: &GaitConfig,
    r_bref: &Vector3<f64>,
    r_bd: &Vector3<f64>,
    r_eref: &Vector3<f64>,
    rolling_dir: &Vector3<f64>,
) -> f64 {
    let err = r_bref + r_bd - r_eref;
    let par = err.dot(rolling_dir) / cfg.lambda_par;
    let perp = err.dot(&lateral_of(rolling_dir)) / cfg.lambda_perp;
    1.0 - (par * par + perp * perp).sqrt()
}

/// Wheel reference after the torso reference moved by `displacement`: the
/// wheel follows only the component along its rolling direction.
pub fn rolled_reference(
    r_e: &Vector3<f64>,
    displacement: &Vector3<f64>,
    rolling_dir: &Vector3<f64>,
) -> Vector3<f64> {
    r_e + rolling_dir * displacement.dot(rolling_dir)
}

/// Velocity command in the heading (yaw) frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub forward: f64,
    pub lateral: f64,
    pub yaw_rate: f64,
}

impl VelocityCommand {
    pub fn new(forward: f64, lateral: f64, yaw_rate: f64) -> Self {
        VelocityCommand { forward, lateral, yaw_rate }
    }

    pub fn linear(&self) -> Vector2<f64> {
        Vector2::new(self.forward, self.lateral)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefSample {
    pub t: f64,
    pub position: Vector3<f64>,
    pub yaw: f64,
    /// Command active on `[t, t + dt)`.
    pub command: VelocityCommand,
}

/// Torso reference obtained by integrating a velocity command, sampled on a
/// uniform grid starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    dt: f64,
    samples: Vec<RefSample>,
}

/// Exact planar displacement over `h` seconds at constant heading-frame
/// velocity `v` and yaw rate `w`, starting at heading `yaw`.
fn arc_displacement(yaw: f64, v: Vector2<f64>, w: f64, h: f64) -> Vector2<f64> {
    let (s, c) = if (w * h).abs() < 1e-9 {
        (h, 0.0)
    } else {
        ((w * h).sin() / w, (1.0 - (w * h).cos()) / w)
    };
    let local = Vector2::new(s * v.x - c * v.y, c * v.x + s * v.y);
    let (sy, cy) = yaw.sin_cos();
    Vector2::new(cy * local.x - sy * local.y, sy * local.x + cy * local.y)
}

impl ReferenceTrajectory {
    /// Integrate `command(t)` from pose `(p0, yaw0)` over `[0, horizon]`.
    /// The height of `p0` is held constant.
    pub fn integrate(
        p0: Vector3<f64>,
        yaw0: f64,
        dt: f64,
        horizon: f64,
        command: impl Fn(f64) -> VelocityCommand,
    ) -> Result<Self, GaitError> {
        if !(dt > 0.0 && horizon > 0.0) {
            return Err(GaitError::InvalidConfig("reference step and horizon must be positive".into()));
        }
        let n = (horizon / dt - TIME_EPS).ceil().max(1.0) as usize;
        let mut samples = Vec::with_capacity(n + 1);
        let mut position = p0;
        let mut yaw = yaw0;
        for k in 0..=n {
            let t = k as f64 * dt;
            let cmd = command(t);
            samples.push(RefSample { t, position, yaw, command: cmd });
            let d = arc_displacement(yaw, cmd.linear(), cmd.yaw_rate, dt);
            position += Vector3::new(d.x, d.y, 0.0);
            yaw += cmd.yaw_rate * dt;
        }
        Ok(ReferenceTrajectory { dt, samples })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[RefSample] {
        &self.samples
    }

    /// Last sampled time.
    pub fn covered(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn ensure_covers(&self, horizon: f64) -> Result<(), GaitError> {
        if self.covered() + TIME_EPS < horizon {
            return Err(GaitError::ReferenceTooShort { covered: self.covered(), horizon });
        }
        Ok(())
    }

    fn bracket(&self, t: f64) -> (usize, f64) {
        let last = self.samples.len() - 1;
        let x = (t / self.dt).clamp(0.0, last as f64);
        let k = (x.floor() as usize).min(last.saturating_sub(1));
        (k, x - k as f64)
    }

    /// Position and yaw at `t`, integrated exactly within the grid cell.
    pub fn pose(&self, t: f64) -> (Vector3<f64>, f64) {
        if self.samples.len() == 1 {
            let s = &self.samples[0];
            return (s.position, s.yaw);
        }
        let (k, frac) = self.bracket(t);
        let s = &self.samples[k];
        let h = frac * self.dt;
        let d = arc_displacement(s.yaw, s.command.linear(), s.command.yaw_rate, h);
        (s.position + Vector3::new(d.x, d.y, 0.0), s.yaw + s.command.yaw_rate * h)
    }

    /// Command active at `t`.
    pub fn command(&self, t: f64) -> VelocityCommand {
        if t >= self.covered() {
            return self.samples.last().map(|s| s.command).unwrap_or_default();
        }
        let (k, _) = self.bracket(t);
        self.samples[k].command
    }

    /// True if the command is the same at every sample.
    pub fn is_constant(&self) -> bool {
        self.samples.windows(2).all(|w| w[0].command == w[1].command)
    }
}

/// One swing of a leg; `end - start` is the swing duration even when the
/// interval sticks out of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwingInterval {
    pub leg: Leg,
    pub start: f64,
    pub end: f64,
}

impl SwingInterval {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }

    fn overlaps(&self, start: f64, end: f64) -> bool {
        self.start < end - TIME_EPS && start < self.end - TIME_EPS
    }

    /// Normalised swing phase in `[0, 1)`.
    pub fn phase(&self, t: f64) -> f64 {
        (t - self.start) / (self.end - self.start)
    }
}

/// Constant-contact segment of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub start: f64,
    pub end: f64,
    pub contacts: [bool; N_LEGS],
}

/// Per-leg contact schedule on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeSchedule {
    horizon: f64,
    swings: Vec<SwingInterval>,
}

impl ModeSchedule {
    pub fn all_stance(horizon: f64) -> Self {
        ModeSchedule { horizon, swings: Vec::new() }
    }

    /// Builds a schedule from swing intervals. Intervals of the same leg must
    /// not overlap.
    pub fn from_swings(horizon: f64, mut swings: Vec<SwingInterval>) -> Result<Self, GaitError> {
        swings.retain(|s| s.end > 0.0 && s.start < horizon);
        swings.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.leg.cmp(&b.leg)));
        for (i, a) in swings.iter().enumerate() {
            if !(a.end > a.start) {
                return Err(GaitError::InvalidConfig(format!("empty swing interval for {}", a.leg)));
            }
            for b in &swings[i + 1..] {
                if a.leg == b.leg && a.overlaps(b.start, b.end) {
                    return Err(GaitError::InvalidConfig(format!("overlapping swings for {}", a.leg)));
                }
            }
        }
        Ok(ModeSchedule { horizon, swings })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn swings(&self) -> &[SwingInterval] {
        &self.swings
    }

    /// The swing interval of `leg` active at `t`, if any.
    pub fn swing_at(&self, leg: Leg, t: f64) -> Option<&SwingInterval> {
        self.swings.iter().find(|s| s.leg == leg && s.contains(t))
    }

    pub fn in_contact(&self, leg: Leg, t: f64) -> bool {
        self.swing_at(leg, t).is_none()
    }

    pub fn contacts_at(&self, t: f64) -> [bool; N_LEGS] {
        Leg::ALL.map(|leg| self.in_contact(leg, t))
    }

    /// Strictly increasing times `0 = t_0 < ... < t_m = horizon` at which the
    /// contact flags may change.
    pub fn event_times(&self) -> Vec<f64> {
        let mut times = vec![0.0, self.horizon];
        for s in &self.swings {
            for t in [s.start, s.end] {
                if t > 0.0 && t < self.horizon {
                    times.push(t);
                }
            }
        }
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() < TIME_EPS);
        times
    }

    pub fn phases(&self) -> Vec<Phase> {
        let times = self.event_times();
        times
            .windows(2)
            .map(|w| Phase { start: w[0], end: w[1], contacts: self.contacts_at(0.5 * (w[0] + w[1])) })
            .collect()
    }

    /// Schedule seen from `elapsed` seconds later, same horizon length.
    pub fn shifted(&self, elapsed: f64) -> ModeSchedule {
        let swings = self
            .swings
            .iter()
            .filter(|s| s.end - elapsed > TIME_EPS)
            .map(|s| SwingInterval { leg: s.leg, start: s.start - elapsed, end: s.end - elapsed })
            .collect();
        ModeSchedule { horizon: self.horizon, swings }
    }

    /// True if no two neighbouring legs swing at the same time.
    pub fn respects_neighbors(&self) -> bool {
        self.swings.iter().enumerate().all(|(i, a)| {
            self.swings[i + 1..]
                .iter()
                .all(|b| !(a.leg.neighbors().contains(&b.leg) && a.overlaps(b.start, b.end)))
        })
    }

    /// Writes one row per phase: start time and contact flags (1 = contact).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "LF", "RF", "LH", "RH"])?;
        for p in self.phases() {
            let mut rec = vec![format!("{:.6}", p.start)];
            rec.extend(p.contacts.iter().map(|&c| u8::from(c).to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Where a stance leg was placed and how it may roll from there.
#[derive(Debug, Clone, PartialEq)]
pub struct LegAnchor {
    /// Time from which the anchor is valid (s, horizon-relative).
    pub time: f64,
    /// Wheel contact point at `time` (world).
    pub contact: Vector3<f64>,
    /// Torso reference position at `time` (world).
    pub torso: Vector3<f64>,
    /// Touch-down offset of the contact from the torso, heading frame.
    pub offset: Vector3<f64>,
    pub rolling_dir: Vector3<f64>,
}

impl LegAnchor {
    /// Utility at horizon time `t` under `reference`.
    pub fn utility(&self, cfg: &GaitConfig, reference: &ReferenceTrajectory, t: f64) -> f64 {
        if t < self.time {
            return 1.0;
        }
        let (p, yaw) = reference.pose(t);
        let r_eref = rolled_reference(&self.contact, &(p - self.torso), &self.rolling_dir);
        leg_utility(cfg, &p, &(rot_z(yaw) * self.offset), &r_eref, &self.rolling_dir)
    }

    /// Anchor of a leg that touches down at `t` at its nominal offset.
    pub fn nominal_at(reference: &ReferenceTrajectory, offset: &Vector3<f64>, t: f64) -> Self {
        let (p, yaw) = reference.pose(t);
        let r = rot_z(yaw);
        LegAnchor { time: t, contact: p + r * offset, torso: p, offset: *offset, rolling_dir: r * Vector3::x() }
    }
}

/// Anchors for the measured state. `offsets` are the heading-frame
/// touch-down offsets remembered for each leg; `torso_ref` is the reference
/// torso position at `t = 0`.
pub fn anchors_from_state(
    model: &RobotModel,
    terrain: &Terrain,
    state: &State,
    torso_ref: &Vector3<f64>,
    offsets: &[Vector3<f64>; N_LEGS],
) -> [LegAnchor; N_LEGS] {
    let fk = forward_kinematics(model, terrain, &state.theta, &state.p, &state.q);
    Leg::ALL.map(|leg| {
        let k = &fk[leg.index()];
        let d = Vector3::new(k.rolling_dir.x, k.rolling_dir.y, 0.0);
        let rolling_dir = if d.norm() > 1e-9 { d.normalize() } else { Vector3::x() };
        LegAnchor {
            time: 0.0,
            contact: k.contact_point,
            torso: *torso_ref,
            offset: offsets[leg.index()],
            rolling_dir,
        }
    })
}

/// Generates the contact schedule over `[0, horizon]`.
///
/// Swings of `current` that have already started are kept. Remaining swings
/// are placed greedily: the earliest utility crossing below `u_bar` on the
/// grid is found (lowest utility, then leg order, breaks ties), its time is
/// interpolated, and the swing starts at the first instant from there on at
/// which no neighbour is in the air. Crossings less than one grid step apart
/// count as simultaneous; among those, a leg that `current` already planned
/// to lift earlier goes first, so that measurement noise does not reorder the
/// plan from one update to the next. The leg then touches down at its nominal
/// offset and its utility is tracked from the touch-down on.
pub fn generate_gait(
    cfg: &GaitConfig,
    anchors: &[LegAnchor; N_LEGS],
    current: &ModeSchedule,
    reference: &ReferenceTrajectory,
    nominal_offsets: &[Vector3<f64>; N_LEGS],
    horizon: f64,
) -> Result<ModeSchedule, GaitError> {
    cfg.validate()?;
    reference.ensure_covers(horizon)?;
    let mut anchors = anchors.clone();
    let mut search_from = [0.0f64; N_LEGS];
    let mut blocked = [false; N_LEGS];
    let mut swings: Vec<SwingInterval> = Vec::new();
    for s in current.swings().iter().filter(|s| s.start <= TIME_EPS && s.end > TIME_EPS) {
        swings.push(*s);
        let i = s.leg.index();
        search_from[i] = search_from[i].max(s.end);
        anchors[i] = LegAnchor::nominal_at(reference, &nominal_offsets[i], s.end.min(horizon));
    }

    let planned_start = Leg::ALL.map(|leg| {
        current
            .swings()
            .iter()
            .filter(|s| s.leg == leg && s.start > TIME_EPS)
            .map(|s| s.start)
            .fold(f64::INFINITY, f64::min)
    });

    let n_grid = (horizon / cfg.dt_grid - TIME_EPS).ceil() as usize;
    let grid = |k: usize| (k as f64 * cfg.dt_grid).min(horizon);

    loop {
        // (grid index, utility, leg, crossing time)
        let mut crossings: Vec<(usize, f64, Leg, f64)> = Vec::new();
        for leg in Leg::ALL {
            let i = leg.index();
            if blocked[i] || search_from[i] >= horizon {
                continue;
            }
            let k0 = (search_from[i] / cfg.dt_grid - TIME_EPS).ceil().max(0.0) as usize;
            let mut prev: Option<(f64, f64)> = None;
            if grid(k0) > search_from[i] + TIME_EPS {
                prev = Some((search_from[i], anchors[i].utility(cfg, reference, search_from[i])));
            }
            for k in k0..=n_grid {
                let t = grid(k);
                let u = anchors[i].utility(cfg, reference, t);
                if u < cfg.u_bar {
                    let t_star = match prev {
                        Some((tp, up)) if up >= cfg.u_bar => tp + (up - cfg.u_bar) / (up - u) * (t - tp),
                        _ => t,
                    };
                    crossings.push((k, u, leg, t_star));
                    break;
                }
                prev = Some((t, u));
            }
        }
        let Some(first) = crossings.iter().map(|c| c.3).min_by(f64::total_cmp) else { break };
        let (_, _, leg, t_star) = crossings
            .into_iter()
            .filter(|c| c.3 < first + cfg.dt_grid - TIME_EPS)
            .min_by(|a, b| {
                planned_start[a.2.index()]
                    .total_cmp(&planned_start[b.2.index()])
                    .then(a.0.cmp(&b.0))
                    .then(a.1.total_cmp(&b.1))
            })
            .expect("the earliest crossing is within its own window");
        let i = leg.index();

        let neighbours: Vec<&SwingInterval> =
            swings.iter().filter(|s| leg.neighbors().contains(&s.leg)).collect();
        let mut candidates = vec![t_star];
        candidates.extend(neighbours.iter().map(|s| s.end).filter(|&e| e > t_star));
        candidates.sort_by(f64::total_cmp);
        let start = candidates
            .into_iter()
            .find(|&c| neighbours.iter().all(|s| !s.overlaps(c, c + cfg.t_swing)))
            .expect("the latest neighbour touch-down is always free");

        if start >= horizon - TIME_EPS {
            if t_star <= TIME_EPS {
                return Err(GaitError::InfeasibleSchedule { leg, crossing: t_star, horizon });
            }
            blocked[i] = true;
            continue;
        }
        let end = start + cfg.t_swing;
        swings.push(SwingInterval { leg, start, end });
        search_from[i] = end;
        if end < horizon {
            anchors[i] = LegAnchor::nominal_at(reference, &nominal_offsets[i], end);
        }
    }
    ModeSchedule::from_swings(horizon, swings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_anchors(offsets: &[Vector3<f64>; N_LEGS]) -> [LegAnchor; N_LEGS] {
        Leg::ALL.map(|leg| LegAnchor {
            time: 0.0,
            contact: offsets[leg.index()],
            torso: Vector3::zeros(),
            offset: offsets[leg.index()],
            rolling_dir: Vector3::x(),
        })
    }

    fn offsets() -> [Vector3<f64>; N_LEGS] {
        RobotModel::default().nominal_contact_offsets()
    }

    fn plan(cmd: VelocityCommand, horizon: f64) -> ModeSchedule {
        let cfg = GaitConfig::default();
        let reference =
            ReferenceTrajectory::integrate(Vector3::zeros(), 0.0, cfg.dt_grid, horizon, |_| cmd).unwrap();
        let o = offsets();
        generate_gait(&cfg, &straight_anchors(&o), &ModeSchedule::all_stance(horizon), &reference, &o, horizon)
            .unwrap()
    }

    #[test]
    fn utility_examples() {
        let cfg = GaitConfig::default();
        let z = Vector3::zeros();
        assert_eq!(leg_utility(&cfg, &z, &z, &z, &Vector3::x()), 1.0);
        let boundary = Vector3::x() * cfg.lambda_par;
        assert!(leg_utility(&cfg, &boundary, &z, &z, &Vector3::x()).abs() < 1e-15);
        let u = leg_utility(&cfg, &Vector3::new(0.10, 0.05, 0.0), &z, &z, &Vector3::x());
        assert!((u - (1.0 - 0.41f64.sqrt())).abs() < 1e-12);
        assert!((u - 0.3597).abs() < 1e-3);
    }

    #[test]
    fn rolled_reference_examples() {
        let r_e = Vector3::new(1.0, 2.0, 0.0);
        let x = Vector3::x();
        assert_eq!(rolled_reference(&r_e, &Vector3::new(0.7, 0.0, 0.0), &x), r_e + x * 0.7);
        assert_eq!(rolled_reference(&r_e, &Vector3::new(0.0, 0.7, 0.0), &x), r_e);
        assert_eq!(rolled_reference(&r_e, &Vector3::new(0.3, 0.4, 0.0), &x), r_e + Vector3::new(0.3, 0.0, 0.0));
    }

    #[test]
    fn standing_and_pure_driving_need_no_swings() {
        assert!(plan(VelocityCommand::default(), 0.8).swings().is_empty());
        assert!(plan(VelocityCommand::new(2.0, 0.0, 0.0), 0.8).swings().is_empty());
    }

    #[test]
    fn lateral_drift_crossing_time() {
        let s = plan(VelocityCommand::new(0.0, 0.3, 0.0), 0.8);
        let first = s.swings().iter().map(|w| w.start).fold(f64::INFINITY, f64::min);
        let expected = (1.0 - 0.2) * 0.10 / 0.3;
        assert!((first - expected).abs() < 1e-9, "{first} vs {expected}");
        assert!(s.swings().iter().all(|w| (w.end - w.start - 0.3).abs() < 1e-12));
        assert!(s.respects_neighbors());
    }

    #[test]
    fn pure_lateral_drift_pairs_diagonals() {
        let s = plan(VelocityCommand::new(0.0, 0.3, 0.0), 0.8);
        let at = |leg| s.swings().iter().find(|w| w.leg == leg).map(|w| w.start).unwrap();
        assert!((at(Leg::LF) - at(Leg::RH)).abs() < 1e-12);
        assert!((at(Leg::RF) - at(Leg::LH)).abs() < 1e-12);
        assert!((at(Leg::RF) - at(Leg::LF) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn committed_swings_are_kept() {
        let cfg = GaitConfig::default();
        let horizon = 0.8;
        let reference =
            ReferenceTrajectory::integrate(Vector3::zeros(), 0.0, cfg.dt_grid, horizon, |_| VelocityCommand::default())
                .unwrap();
        let current = ModeSchedule::from_swings(
            horizon,
            vec![
                SwingInterval { leg: Leg::LH, start: -0.1, end: 0.2 },
                SwingInterval { leg: Leg::RF, start: 0.3, end: 0.6 },
            ],
        )
        .unwrap();
        let o = offsets();
        let s = generate_gait(&cfg, &straight_anchors(&o), &current, &reference, &o, horizon).unwrap();
        assert_eq!(s.swings(), &[SwingInterval { leg: Leg::LH, start: -0.1, end: 0.2 }]);
        assert!(!s.in_contact(Leg::LH, 0.0));
        assert!(s.in_contact(Leg::LH, 0.2));
    }

    #[test]
    fn schedule_phases_partition_horizon() {
        let s = ModeSchedule::from_swings(
            1.0,
            vec![
                SwingInterval { leg: Leg::LF, start: 0.1, end: 0.4 },
                SwingInterval { leg: Leg::RH, start: 0.1, end: 0.4 },
                SwingInterval { leg: Leg::RF, start: 0.8, end: 1.1 },
            ],
        )
        .unwrap();
        let p = s.phases();
        assert_eq!(p.first().unwrap().start, 0.0);
        assert_eq!(p.last().unwrap().end, 1.0);
        for w in p.windows(2) {
            assert_eq!(w[0].end, w[1].start);
            assert_ne!(w[0].contacts, w[1].contacts);
        }
        assert_eq!(p[1].contacts, [false, true, true, false]);
        assert!(s.respects_neighbors());
        let shifted = s.shifted(0.5);
        assert_eq!(shifted.swings().len(), 1);
        assert!((shifted.swings()[0].start - 0.3).abs() < 1e-12);
    }

    #[test]
    fn csv_rows() {
        let s = ModeSchedule::from_swings(0.6, vec![SwingInterval { leg: Leg::RF, start: 0.15, end: 0.45 }]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "time,LF,RF,LH,RH\n0.000000,1,1,1,1\n0.150000,1,0,1,1\n0.450000,1,1,1,1\n"
        );
    }

    #[test]
    fn reference_integration_follows_arc() {
        let cmd = VelocityCommand::new(1.0, 0.0, 0.5);
        let r = ReferenceTrajectory::integrate(Vector3::new(0.0, 0.0, 0.5), 0.0, 0.015, 1.0, |_| cmd).unwrap();
        let (p, yaw) = r.pose(1.0);
        assert!((yaw - 0.5).abs() < 1e-12);
        let radius = 1.0 / 0.5;
        let expected = Vector3::new(radius * 0.5f64.sin(), radius * (1.0 - 0.5f64.cos()), 0.5);
        assert!((p - expected).norm() < 1e-12);
        for w in r.samples().windows(2) {
            assert!((w[1].position - w[0].position).norm() <= 1.0 * 0.015 + 1e-12);
        }
        assert!(r.ensure_covers(1.0).is_ok());
        assert!(r.ensure_covers(1.1).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = GaitConfig { u_bar: 1.0, ..GaitConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = GaitConfig { lambda_perp: 0.0, ..GaitConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
