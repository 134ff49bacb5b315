//! Static SVG figures drawn from the CSV logs of a run.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::PlotError;
use crate::model::{Leg, N_LEGS};

/// A CSV file held as text columns.
#[derive(Debug, Clone)]
pub struct Table {
    file: String,
    columns: HashMap<String, usize>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table, PlotError> {
        let err = |e: csv::Error| PlotError::Read { path: path.display().to_string(), message: e.to_string() };
        let mut reader = csv::Reader::from_path(path).map_err(err)?;
        let columns = reader.headers().map_err(err)?.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            rows.push(record.map_err(err)?.iter().map(str::to_string).collect());
        }
        let file = path.file_name().map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned());
        Ok(Table { file, columns, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Values of a column; empty cells are `None`.
    pub fn optional(&self, column: &str) -> Result<Vec<Option<f64>>, PlotError> {
        let &i = self
            .columns
            .get(column)
            .ok_or_else(|| PlotError::MissingColumn { file: self.file.clone(), column: column.to_string() })?;
        self.rows
            .iter()
            .enumerate()
            .map(|(row, r)| {
                let cell = r.get(i).map(String::as_str).unwrap_or("");
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse().map(Some).map_err(|_| PlotError::BadValue {
                    file: self.file.clone(),
                    row: row + 1,
                    column: column.to_string(),
                    value: cell.to_string(),
                })
            })
            .collect()
    }

    /// Values of a column that must be filled in every row.
    pub fn column(&self, column: &str) -> Result<Vec<f64>, PlotError> {
        self.optional(column)?
            .into_iter()
            .enumerate()
            .map(|(row, v)| {
                v.ok_or_else(|| PlotError::BadValue {
                    file: self.file.clone(),
                    row: row + 1,
                    column: column.to_string(),
                    value: String::new(),
                })
            })
            .collect()
    }

    pub fn text(&self, column: &str) -> Result<Vec<String>, PlotError> {
        let &i = self
            .columns
            .get(column)
            .ok_or_else(|| PlotError::MissingColumn { file: self.file.clone(), column: column.to_string() })?;
        Ok(self.rows.iter().map(|r| r.get(i).cloned().unwrap_or_default()).collect())
    }
}

/// Stance intervals per leg, in `Leg::ALL` order. Each sample holds until
/// the next one; the last sample holds for one more sample period.
pub fn contact_bars(times: &[f64], contacts: &[[bool; N_LEGS]]) -> [Vec<(f64, f64)>; N_LEGS] {
    let mut bars: [Vec<(f64, f64)>; N_LEGS] = Default::default();
    let n = times.len().min(contacts.len());
    for i in 0..n {
        let end = if i + 1 < n {
            times[i + 1]
        } else if i > 0 {
            times[i] + (times[i] - times[i - 1])
        } else {
            times[i]
        };
        for (k, bar) in bars.iter_mut().enumerate() {
            if !contacts[i][k] {
                continue;
            }
            match bar.last_mut() {
                Some(last) if last.1 == times[i] => last.1 = end,
                _ => bar.push((times[i], end)),
            }
        }
    }
    bars
}

/// Files written and plots skipped by [`cmd_plot`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotReport {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn draw_err(path: &Path) -> impl Fn(String) -> PlotError + '_ {
    move |message| PlotError::Draw { path: path.display().to_string(), message }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(127, 127, 127),
];

type Trace<'a> = (&'a str, Vec<(f64, f64)>, RGBColor);

fn line_plot(path: &Path, title: &str, y_desc: &str, traces: &[Trace]) -> Result<(), PlotError> {
    let e = draw_err(path);
    let (x0, x1) = range(traces.iter().flat_map(|t| t.1.iter().map(|p| p.0)));
    let (y0, y1) = range(traces.iter().flat_map(|t| t.1.iter().map(|p| p.1)));
    let root = SVGBackend::new(path, (900, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|x| e(x.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|x| e(x.to_string()))?;
    chart.configure_mesh().x_desc("time [s]").y_desc(y_desc).draw().map_err(|x| e(x.to_string()))?;
    for (label, points, color) in traces {
        let color = *color;
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(|x| e(x.to_string()))?
            .label(*label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|x| e(x.to_string()))?;
    root.present().map_err(|x| e(x.to_string()))
}

fn velocity_plot(dir: &Path, states: &Table, metrics: &Table) -> Result<Option<PathBuf>, PlotError> {
    if states.is_empty() {
        return Ok(None);
    }
    let t = states.column("time")?;
    let pair = |ys: Vec<f64>| t.iter().copied().zip(ys).collect::<Vec<_>>();
    let tm = metrics.column("time")?;
    let cmd = |ys: Vec<f64>| tm.iter().copied().zip(ys).collect::<Vec<_>>();
    let path = dir.join("velocity.svg");
    line_plot(
        &path,
        "Torso velocity",
        "m/s, rad/s",
        &[
            ("v_x", pair(states.column("vx")?), PALETTE[0]),
            ("v_y", pair(states.column("vy")?), PALETTE[1]),
            ("omega_z", pair(states.column("wz")?), PALETTE[2]),
            ("v_x cmd", cmd(metrics.column("cmd_forward")?), PALETTE[3]),
            ("v_y cmd", cmd(metrics.column("cmd_lateral")?), PALETTE[4]),
            ("omega_z cmd", cmd(metrics.column("cmd_yaw_rate")?), PALETTE[5]),
        ],
    )?;
    Ok(Some(path))
}

fn contact_plot(dir: &Path, contacts: &Table) -> Result<Option<PathBuf>, PlotError> {
    if contacts.is_empty() {
        return Ok(None);
    }
    let t = contacts.column("time")?;
    let mut flags = vec![[false; N_LEGS]; t.len()];
    for leg in Leg::ALL {
        for (row, v) in contacts.column(leg.name())?.into_iter().enumerate() {
            flags[row][leg.index()] = v != 0.0;
        }
    }
    let bars = contact_bars(&t, &flags);
    let path = dir.join("contacts.svg");
    let e = draw_err(&path);
    let (x0, x1) = range(t.iter().copied());
    let root = SVGBackend::new(&path, (900, 260)).into_drawing_area();
    root.fill(&WHITE).map_err(|x| e(x.to_string()))?;
    // LF on the top row, RH on the bottom one
    let row_y = |k: usize| (N_LEGS - 1 - k) as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption("Contact timing (stance bars)", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(40)
        .build_cartesian_2d(x0..x1, -0.5..(N_LEGS as f64 - 0.5))
        .map_err(|x| e(x.to_string()))?;
    chart
        .configure_mesh()
        .disable_y_mesh()
        .y_labels(N_LEGS)
        .y_label_formatter(&|y| {
            let k = N_LEGS as f64 - 1.0 - y.round();
            if (0.0..N_LEGS as f64).contains(&k) {
                Leg::from_index(k as usize).name().to_string()
            } else {
                String::new()
            }
        })
        .x_desc("time [s]")
        .draw()
        .map_err(|x| e(x.to_string()))?;
    for (k, legs) in bars.iter().enumerate() {
        let y = row_y(k);
        chart
            .draw_series(legs.iter().map(|&(a, b)| Rectangle::new([(a, y - 0.35), (b, y + 0.35)], PALETTE[0].filled())))
            .map_err(|x| e(x.to_string()))?;
    }
    root.present().map_err(|x| e(x.to_string()))?;
    Ok(Some(path.clone()))
}

fn prediction_plot(dir: &Path, metrics: &Table) -> Result<Option<PathBuf>, PlotError> {
    let t = metrics.column("time")?;
    let points: Vec<(f64, f64)> =
        t.into_iter().zip(metrics.optional("prediction_error")?).filter_map(|(t, v)| v.map(|v| (t, v))).collect();
    if points.is_empty() {
        return Ok(None);
    }
    let path = dir.join("prediction_error.svg");
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let (first, last) = (points[0].0, points[points.len() - 1].0);
    line_plot(
        &path,
        "Predicted vs. reached COM position",
        "error [m]",
        &[("prediction error", points, PALETTE[1]), ("mean", vec![(first, mean), (last, mean)], PALETTE[5])],
    )?;
    Ok(Some(path))
}

fn cot_plot(dir: &Path, cot: &Table) -> Result<Option<PathBuf>, PlotError> {
    let start = cot.column("start")?;
    let end = cot.column("end")?;
    let value = cot.optional("cot")?;
    let regime = cot.text("regime")?;
    let windows: Vec<(f64, f64, f64, String)> = (0..cot.len())
        .filter_map(|i| value[i].map(|v| (start[i], end[i], v, regime[i].clone())))
        .collect();
    if windows.is_empty() {
        return Ok(None);
    }
    let path = dir.join("cot.svg");
    let e = draw_err(&path);
    let (x0, x1) = range(windows.iter().flat_map(|w| [w.0, w.1]));
    let (_, y1) = range(windows.iter().map(|w| w.2));
    let root = SVGBackend::new(&path, (900, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|x| e(x.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Mechanical cost of transport per window", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, 0.0..y1 * 1.15)
        .map_err(|x| e(x.to_string()))?;
    chart.configure_mesh().x_desc("time [s]").y_desc("COT [-]").draw().map_err(|x| e(x.to_string()))?;
    let color = |r: &str| match r {
        "drive" => PALETTE[0],
        "static" => PALETTE[2],
        "trot" => PALETTE[1],
        _ => PALETTE[5],
    };
    for (a, b, v, r) in &windows {
        let c = color(r);
        chart
            .draw_series(std::iter::once(Rectangle::new([(*a, 0.0), (*b, *v)], c.mix(0.6).filled())))
            .map_err(|x| e(x.to_string()))?;
        chart
            .draw_series(std::iter::once(Text::new(r.clone(), ((a + b) / 2.0, v * 1.05), ("sans-serif", 14))))
            .map_err(|x| e(x.to_string()))?;
    }
    root.present().map_err(|x| e(x.to_string()))?;
    Ok(Some(path.clone()))
}

/// Draws the velocity traces, contact diagram, prediction-error strip and
/// COT bars for the CSV logs in `dir`. Plots without data are skipped with a
/// warning.
pub fn cmd_plot(dir: &Path) -> Result<PlotReport, PlotError> {
    let states = Table::read(&dir.join("states.csv"))?;
    let metrics = Table::read(&dir.join("metrics.csv"))?;
    let contacts = Table::read(&dir.join("contacts.csv"))?;
    let cot = Table::read(&dir.join("cot.csv"))?;
    let mut report = PlotReport::default();
    let mut keep = |name: &str, r: Option<PathBuf>| match r {
        Some(p) => report.written.push(p),
        None => report.warnings.push(format!("no data for the {name} plot; skipped")),
    };
    keep("velocity", velocity_plot(dir, &states, &metrics)?);
    keep("contact", contact_plot(dir, &contacts)?);
    keep("prediction-error", prediction_plot(dir, &metrics)?);
    keep("cost-of-transport", cot_plot(dir, &cot)?);
    Ok(report)
}
