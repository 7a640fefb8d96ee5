//! CSV outputs: trajectories, terminal records, miss scatter, learning curves.

use crate::eval::EpisodeRecord;
use descent_sim::env::{los_angles, StepResult};
use serde::{Deserialize, Serialize};
use std::io;
use std::path::Path;

/// Write through a sibling temp file so a failed run leaves nothing behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".part");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// Serialize flat records (header from the field names).
pub fn records_csv<T: Serialize>(rows: &[T]) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.serialize(r).map_err(io::Error::other)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

pub fn write_records<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    write_atomic(path, &records_csv(rows)?)
}

pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(io::Error::other)?;
    r.deserialize().collect::<Result<_, _>>().map_err(io::Error::other)
}

pub const TRAJECTORY_COLUMNS: [&str; 51] = [
    "t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "q0", "q1", "q2", "q3", "omega_x", "omega_y", "omega_z", "mass", "fuel_used",
    "target_x", "target_y", "target_z", "platform_q0", "platform_q1", "platform_q2", "platform_q3", "theta_u", "theta_v", "range",
    "closing_speed", "v_err_u", "v_err_v", "v_err_w", "force_x", "force_y", "force_z", "thrust_1", "thrust_2", "thrust_3",
    "thrust_4", "action_1", "action_2", "action_3", "action_4", "reward", "segment", "diverted", "platform_reset",
    "segment_switch", "termination", "theta_cv_deg", "theta_rv_deg", "theta_cr_deg", "t_go",
];

/// Per-step trajectory rows; the first row is the reset state.
#[derive(Debug, Default, Clone)]
pub struct Trajectory {
    rows: Vec<Vec<String>>,
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, r: &StepResult, action: Option<&[f64]>) {
        let i = &r.info;
        let l = &i.lander;
        let (cv, rv, cr) = los_angles(i);
        let mut vals: Vec<f64> = vec![l.t];
        vals.extend(l.r.iter().chain(l.v.iter()));
        vals.extend(l.q.to_array());
        vals.extend(l.omega.iter());
        vals.extend([l.m, l.f_used]);
        vals.extend(i.target.iter());
        vals.extend(i.platform.to_array());
        vals.extend(i.seeker.to_array());
        vals.extend(i.v_err.iter().chain(i.force_inertial.iter()));
        vals.extend(i.thrust);
        let mut row: Vec<String> = vals.into_iter().map(num).collect();
        match action {
            Some(a) => row.extend(a.iter().copied().map(num)),
            None => row.extend(std::iter::repeat_n(String::new(), 4)),
        }
        row.push(num(r.reward));
        row.push(format!("{:?}", r.segment).to_lowercase());
        row.push(flag(i.diverted.is_some()));
        row.push(flag(i.platform_reset));
        row.push(flag(i.segment_switched));
        row.push(i.termination.as_ref().map(|t| t.label().to_string()).unwrap_or_default());
        row.extend([cv, rv, cr].map(|a| num(a.to_degrees())));
        row.push(num(i.t_go));
        debug_assert_eq!(row.len(), TRAJECTORY_COLUMNS.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> io::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(TRAJECTORY_COLUMNS)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| io::Error::other(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        write_atomic(path, &self.to_csv()?)
    }
}

/// Actions recorded in a trajectory file, in step order.
pub fn read_actions(path: &Path) -> io::Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(io::Error::other)?;
    let header = r.headers().map_err(io::Error::other)?.clone();
    let cols: Vec<usize> = (1..=4)
        .map(|k| {
            header
                .iter()
                .position(|h| h == format!("action_{k}"))
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("missing action_{k} column")))
        })
        .collect::<Result<_, _>>()?;
    let mut actions = vec![];
    for rec in r.records() {
        let rec = rec.map_err(io::Error::other)?;
        if rec[cols[0]].is_empty() {
            continue;
        }
        let a = cols
            .iter()
            .map(|&c| rec[c].parse::<f64>().map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
            .collect::<Result<Vec<_>, _>>()?;
        actions.push(a);
    }
    Ok(actions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissPoint {
    pub index: usize,
    pub downrange: f64,
    pub crossrange: f64,
    pub miss: f64,
    pub success: bool,
}

/// Terminal miss components, one point per episode.
pub fn miss_scatter(records: &[EpisodeRecord]) -> Vec<MissPoint> {
    records
        .iter()
        .map(|r| MissPoint {
            index: r.index,
            downrange: r.miss_downrange,
            crossrange: r.miss_crossrange,
            miss: r.miss,
            success: r.success,
        })
        .collect()
}

/// Appends rows to a CSV, writing the header only into an empty file.
pub struct CsvAppender {
    w: csv::Writer<std::fs::File>,
}

impl CsvAppender {
    pub fn open(path: &Path) -> io::Result<Self> {
        let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        let fresh = f.metadata()?.len() == 0;
        let w = csv::WriterBuilder::new().has_headers(fresh).from_writer(f);
        Ok(Self { w })
    }

    pub fn push<T: Serialize>(&mut self, row: &T) -> io::Result<()> {
        self.w.serialize(row).map_err(io::Error::other)?;
        self.w.flush()
    }
}
