use std::fs::{self, File};
use std::path::Path;

use serde::Serialize;

use super::metrics::{mechanical_cot, prediction_error, zmp_margins};
use super::{check_constraints, FallEvent, Sample, SimLog};
use crate::error::SimError;
use crate::gait::SwingInterval;
use crate::model::{Leg, N_LEGS};

/// Settling time skipped at the start of each constant-command segment
/// before the cost of transport is measured (s).
pub const COT_SETTLE: f64 = 1.0;
const CONE_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Stats { count: values.len(), mean, std: var.sqrt(), max })
    }
}

/// Cost of transport over one window of constant command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CotWindow {
    pub start: f64,
    pub end: f64,
    pub regime: &'static str,
    pub mean_speed: f64,
    pub cot: Option<f64>,
}

/// Swing intervals seen in a run of samples. A swing still in progress at
/// the last sample ends one sample period later; one in progress at the first
/// sample starts there.
pub fn swing_intervals(samples: &[Sample]) -> Vec<SwingInterval> {
    let mut out = Vec::new();
    let mut open: [Option<f64>; N_LEGS] = [None; N_LEGS];
    for (i, s) in samples.iter().enumerate() {
        for leg in Leg::ALL {
            let k = leg.index();
            match (s.contacts[k], open[k]) {
                (false, None) => open[k] = Some(s.time),
                (true, Some(start)) => {
                    out.push(SwingInterval { leg, start, end: s.time });
                    open[k] = None;
                }
                _ => {}
            }
        }
        if i + 1 == samples.len() {
            let step = if i > 0 { s.time - samples[i - 1].time } else { 0.0 };
            for leg in Leg::ALL {
                if let Some(start) = open[leg.index()] {
                    out.push(SwingInterval { leg, start, end: s.time + step });
                }
            }
        }
    }
    out.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.leg.index().cmp(&b.leg.index())));
    out
}

fn overlap(a: &SwingInterval, b: &SwingInterval) -> f64 {
    (a.end.min(b.end) - a.start.max(b.start)).max(0.0)
}

/// Gait family seen in a window of samples: `drive` without swings,
/// `static` if no two swings overlap in time, `trot` if every swing shares
/// at least half of its duration with a swing of its diagonal partner and
/// never overlaps any other leg, `mixed` otherwise. Measuring overlap rather
/// than instantaneous contact sets keeps pairs that lift a few milliseconds
/// apart in the trot family.
pub fn classify_regime(samples: &[Sample]) -> &'static str {
    let swings = swing_intervals(samples);
    if swings.is_empty() {
        return "drive";
    }
    let overlaps = |s: &SwingInterval, leg: Leg| -> f64 {
        swings.iter().filter(|o| o.leg == leg).map(|o| overlap(s, o)).sum()
    };
    let single = swings
        .iter()
        .all(|s| Leg::ALL.into_iter().filter(|&l| l != s.leg).all(|l| overlaps(s, l) == 0.0));
    if single {
        return "static";
    }
    let diagonal = swings.iter().all(|s| {
        let partner = s.leg.diagonal();
        let paired = overlaps(s, partner) >= 0.5 * (s.end - s.start);
        let exclusive =
            Leg::ALL.into_iter().filter(|&l| l != s.leg && l != partner).all(|l| overlaps(s, l) == 0.0);
        paired && exclusive
    });
    if diagonal {
        "trot"
    } else {
        "mixed"
    }
}

pub fn cot_windows(log: &SimLog) -> Vec<CotWindow> {
    log.scenario
        .constant_segments()
        .into_iter()
        .filter(|(a, b)| b - a > COT_SETTLE + 0.5)
        .map(|(a, b)| {
            let window = log.window(a + COT_SETTLE, b);
            let mean_speed = if window.is_empty() {
                0.0
            } else {
                window.iter().map(|s| super::horizontal_speed(s.state.as_slice())).sum::<f64>() / window.len() as f64
            };
            CotWindow {
                start: a + COT_SETTLE,
                end: b,
                regime: classify_regime(window),
                mean_speed,
                cot: mechanical_cot(&log.model, window).ok(),
            }
        })
        .collect()
}

/// Aggregated metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub simulated_time: f64,
    pub fell: bool,
    pub fall: Option<FallEvent>,
    pub horizon: f64,
    pub prediction_error: Option<Stats>,
    pub min_cone_margin: f64,
    pub max_stance_slip: f64,
    pub max_swing_force: f64,
    pub min_zmp_support_margin: Option<f64>,
    pub min_lip_support_margin: Option<f64>,
    pub cot: Vec<CotWindow>,
    pub cycles: usize,
    pub degraded_cycles: usize,
    /// Wall-clock solve time per update (s); varies between runs.
    pub solve_time: Option<Stats>,
}

fn min_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.flatten().reduce(f64::min)
}

impl Summary {
    pub fn from_log(log: &SimLog) -> Summary {
        let horizon = log.config.controller.horizon;
        let errors: Vec<f64> = prediction_error(log, horizon).iter().map(|p| p.error).collect();
        let checks: Vec<_> = log.samples.iter().map(|s| check_constraints(&log.model, &log.terrain, s, CONE_EPSILON)).collect();
        let margins: Vec<_> = log.samples.iter().map(|s| zmp_margins(&log.model, log, s)).collect();
        let solve: Vec<f64> = log.cycles.iter().map(|c| c.solve_seconds).collect();
        Summary {
            scenario: log.scenario.name.clone(),
            seed: log.scenario.seed,
            simulated_time: log.samples.last().map_or(0.0, |s| s.time + log.scenario.plant_step),
            fell: log.fall.is_some(),
            fall: log.fall.clone(),
            horizon,
            prediction_error: Stats::of(&errors),
            min_cone_margin: checks.iter().map(|c| c.min_cone_margin).fold(f64::INFINITY, f64::min),
            max_stance_slip: checks.iter().map(|c| c.max_stance_slip).fold(0.0, f64::max),
            max_swing_force: checks.iter().map(|c| c.max_swing_force).fold(0.0, f64::max),
            min_zmp_support_margin: min_opt(margins.iter().map(|m| m.0)),
            min_lip_support_margin: min_opt(margins.iter().map(|m| m.1)),
            cot: cot_windows(log),
            cycles: log.cycles.len(),
            degraded_cycles: log.cycles.iter().filter(|c| c.degraded).count(),
            solve_time: Stats::of(&solve),
        }
    }
}

const STATE_NAMES: [&str; 12] = ["roll", "pitch", "yaw", "px", "py", "pz", "wx", "wy", "wz", "vx", "vy", "vz"];
const JOINT_NAMES: [&str; 3] = ["HAA", "HFE", "KFE"];

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn create(dir: &Path, name: &str) -> Result<csv::Writer<File>, SimError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|source| SimError::Io { path: path.display().to_string(), source })?;
    Ok(csv::Writer::from_writer(file))
}

fn write_states(log: &SimLog, dir: &Path) -> Result<(), SimError> {
    let mut w = create(dir, "states.csv")?;
    let mut header = vec!["time".to_string()];
    header.extend(STATE_NAMES.iter().map(|s| s.to_string()));
    for leg in Leg::ALL {
        header.extend(JOINT_NAMES.iter().map(|j| format!("{leg}_{j}")));
    }
    w.write_record(&header)?;
    for s in &log.samples {
        let mut row = vec![num(s.time)];
        row.extend(s.state.iter().map(|v| num(*v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_inputs(log: &SimLog, dir: &Path) -> Result<(), SimError> {
    let mut w = create(dir, "inputs.csv")?;
    let mut header = vec!["time".to_string()];
    for leg in Leg::ALL {
        header.extend(["fx", "fy", "fz"].iter().map(|c| format!("{leg}_{c}")));
    }
    for leg in Leg::ALL {
        header.extend(JOINT_NAMES.iter().map(|j| format!("{leg}_{j}_vel")));
    }
    header.extend(["dist_x", "dist_y", "dist_z"].iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for s in &log.samples {
        let mut row = vec![num(s.time)];
        row.extend(s.input.iter().map(|v| num(*v)));
        row.extend(s.disturbance.iter().map(|v| num(*v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_contacts(log: &SimLog, dir: &Path) -> Result<(), SimError> {
    let mut w = create(dir, "contacts.csv")?;
    let mut header = vec!["time".to_string()];
    header.extend(Leg::ALL.iter().map(|l| l.to_string()));
    w.write_record(&header)?;
    for s in &log.samples {
        let mut row = vec![num(s.time)];
        row.extend((0..N_LEGS).map(|k| if s.contacts[k] { "1" } else { "0" }.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_metrics(log: &SimLog, dir: &Path) -> Result<(), SimError> {
    let horizon = log.config.controller.horizon;
    let mut matured = vec![None; log.samples.len()];
    for p in prediction_error(log, horizon) {
        if let Some(i) = log.sample_index(p.time) {
            matured[i] = Some(p.error);
        }
    }
    let mut w = create(dir, "metrics.csv")?;
    w.write_record([
        "time",
        "prediction_error",
        "zmp_margin",
        "lip_zmp_margin",
        "min_cone_margin",
        "max_stance_slip",
        "max_swing_force",
        "speed",
        "joint_power",
        "cmd_forward",
        "cmd_lateral",
        "cmd_yaw_rate",
    ])?;
    for (i, s) in log.samples.iter().enumerate() {
        let c = check_constraints(&log.model, &log.terrain, s, CONE_EPSILON);
        let (zmp, lip) = zmp_margins(&log.model, log, s);
        let cone = (c.min_cone_margin.is_finite()).then_some(c.min_cone_margin);
        w.write_record([
            num(s.time),
            opt(matured[i]),
            opt(zmp),
            opt(lip),
            opt(cone),
            num(c.max_stance_slip),
            num(c.max_swing_force),
            num(super::horizontal_speed(s.state.as_slice())),
            num(super::positive_joint_power(&log.model, s)),
            num(s.command.forward),
            num(s.command.lateral),
            num(s.command.yaw_rate),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_cot(summary: &Summary, dir: &Path) -> Result<(), SimError> {
    let mut w = create(dir, "cot.csv")?;
    w.write_record(["start", "end", "regime", "mean_speed", "cot"])?;
    for c in &summary.cot {
        w.write_record([num(c.start), num(c.end), c.regime.to_string(), num(c.mean_speed), opt(c.cot)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn write_cycles(log: &SimLog, dir: &Path) -> Result<(), SimError> {
    let mut w = create(dir, "cycles.csv")?;
    w.write_record([
        "time",
        "applied_from",
        "iterations",
        "converged",
        "degraded",
        "cost",
        "merit",
        "equality_norm",
        "min_cone_margin",
        "pred_x",
        "pred_y",
        "pred_z",
        "swings",
    ])?;
    for c in &log.cycles {
        let swings: Vec<String> = c.swings.iter().map(|s| format!("{}:{:.6}-{:.6}", s.leg, s.start, s.end)).collect();
        w.write_record([
            num(c.time),
            num(c.applied_from),
            c.iterations.to_string(),
            (c.converged as u8).to_string(),
            (c.degraded as u8).to_string(),
            num(c.cost),
            num(c.merit),
            num(c.equality_norm),
            num(c.min_inequality),
            num(c.predicted_position.x),
            num(c.predicted_position.y),
            num(c.predicted_position.z),
            swings.join(" "),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes the CSV logs and `summary.json` into `dir` (created if needed)
/// and returns the summary.
pub fn write_outputs(log: &SimLog, dir: &Path) -> Result<Summary, SimError> {
    fs::create_dir_all(dir).map_err(|source| SimError::Io { path: dir.display().to_string(), source })?;
    let summary = Summary::from_log(log);
    write_states(log, dir)?;
    write_inputs(log, dir)?;
    write_contacts(log, dir)?;
    write_metrics(log, dir)?;
    write_cot(&summary, dir)?;
    write_cycles(log, dir)?;
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serialises");
    fs::write(&path, text + "\n").map_err(|source| SimError::Io { path: path.display().to_string(), source })?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gait::VelocityCommand;
    use nalgebra::{DVector, Vector3};

    fn sample(time: f64, contacts: [bool; 4]) -> Sample {
        Sample {
            time,
            state: DVector::zeros(crate::model::STATE_DIM),
            input: DVector::zeros(crate::model::INPUT_DIM),
            contacts,
            command: VelocityCommand::default(),
            disturbance: Vector3::zeros(),
        }
    }

    fn run(pattern: &[[bool; 4]]) -> Vec<Sample> {
        pattern.iter().enumerate().map(|(i, c)| sample(i as f64 * 0.01, *c)).collect()
    }

    const ALL: [bool; 4] = [true; 4];
    const LF: [bool; 4] = [false, true, true, true];
    const RH: [bool; 4] = [true, true, true, false];
    const LF_RH: [bool; 4] = [false, true, true, false];
    const LF_RF: [bool; 4] = [false, false, true, true];

    #[test]
    fn regimes() {
        assert_eq!(classify_regime(&run(&[ALL, ALL])), "drive");
        assert_eq!(classify_regime(&run(&[ALL, LF, ALL, RH])), "static");
        assert_eq!(classify_regime(&run(&[LF_RH, LF_RH, ALL])), "trot");
        // partner lifts one sample late and lands one sample late
        assert_eq!(classify_regime(&run(&[LF, LF_RH, LF_RH, LF_RH, RH, ALL])), "trot");
        // partner only briefly in the air
        assert_eq!(classify_regime(&run(&[LF, LF, LF, LF_RH, ALL])), "mixed");
        assert_eq!(classify_regime(&run(&[LF_RF, ALL])), "mixed");
    }

    #[test]
    fn swing_intervals_close_at_the_end() {
        let s = swing_intervals(&run(&[ALL, LF, LF, ALL, RH]));
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].leg, s[0].start, s[0].end), (Leg::LF, 0.01, 0.03));
        assert_eq!(s[1].leg, Leg::RH);
        assert!((s[1].end - 0.05).abs() < 1e-12);
    }

    #[test]
    fn stats() {
        let s = Stats::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.count, s.mean, s.std, s.max), (2, 2.0, 1.0, 3.0));
        assert!(Stats::of(&[]).is_none());
    }
}
