use std::io::{Read, Write};

use nalgebra::{DVector, Vector3};

use super::run::ControlStep;
use super::SimError;
use crate::robot::{RobotState, SerialChain};
use crate::scalar::Scalar;
use crate::whqp::RowId;

/// State and diagnostics at one control instant.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord<T: Scalar> {
    pub t: T,
    pub q: DVector<T>,
    pub dq: DVector<T>,
    pub tau: DVector<T>,
    pub position: Vector3<T>,
    /// `(w, x, y, z)`.
    pub quaternion: [T; 4],
    pub active: Vec<RowId>,
    pub slack: Vec<T>,
    pub kinetic_energy: T,
    pub res_inertia: T,
    pub res_skew: T,
    /// Projected rank per level; kept in memory only.
    pub ranks: Vec<usize>,
    /// Active-set switch at this step; kept in memory only.
    pub switched: bool,
}

impl<T: Scalar> LogRecord<T> {
    pub fn new(
        chain: &SerialChain<T>,
        state: &RobotState<T>,
        t: T,
        control: &ControlStep<T>,
    ) -> Result<Self, SimError> {
        let pose = chain.tool_pose(&state.q)?;
        let quat = pose.rotation.into_inner();
        Ok(LogRecord {
            t,
            q: state.q.clone(),
            dq: state.dq.clone(),
            tau: control.tau.clone(),
            position: pose.translation.vector,
            quaternion: [quat.w, quat.i, quat.j, quat.k],
            active: control.active.iter().copied().collect(),
            slack: control.slack.clone(),
            kinetic_energy: chain.kinetic_energy(state)?,
            res_inertia: control.res_inertia,
            res_skew: control.res_skew,
            ranks: control.ranks.clone(),
            switched: control.switched,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog<T: Scalar> {
    pub dof: usize,
    pub levels: usize,
    pub records: Vec<LogRecord<T>>,
}

impl<T: Scalar> TrajectoryLog<T> {
    /// `t,q0..,dq0..,tau0..,px,py,pz,qw,qx,qy,qz,active,slack1..,ke,res_inertia,res_skew`.
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for prefix in ["q", "dq", "tau"] {
            h.extend((0..self.dof).map(|i| format!("{prefix}{i}")));
        }
        h.extend(["px", "py", "pz", "qw", "qx", "qy", "qz", "active"].map(String::from));
        h.extend((1..=self.levels).map(|k| format!("slack{k}")));
        h.extend(["ke", "res_inertia", "res_skew"].map(String::from));
        h
    }
}

/// Active ids as `(level,row)` with 1-based levels, joined by `;`.
fn active_field(ids: &[RowId]) -> String {
    ids.iter()
        .map(|id| id.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn num<T: Scalar>(x: T) -> String {
    format!("{}", x.to_f64())
}

/// Writes the log as CSV. The `active` field contains commas and is quoted.
pub fn write_log<T: Scalar, W: Write>(log: &TrajectoryLog<T>, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(log.header())?;
    for r in &log.records {
        let mut row = vec![num(r.t)];
        row.extend(
            r.q.iter()
                .chain(r.dq.iter())
                .chain(r.tau.iter())
                .map(|&x| num(x)),
        );
        row.extend(r.position.iter().map(|&x| num(x)));
        row.extend(r.quaternion.iter().map(|&x| num(x)));
        row.push(active_field(&r.active));
        row.extend(r.slack.iter().map(|&x| num(x)));
        row.extend([r.kinetic_energy, r.res_inertia, r.res_skew].map(num));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A log read back from CSV, with columns addressed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl LogTable {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric column; the error names the first bad row (1-based, header is row 1).
    pub fn column(&self, name: &str) -> Result<Vec<f64>, SimError> {
        let i = self
            .index(name)
            .ok_or_else(|| SimError::Parse(format!("log has no column '{name}'")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row[i].parse::<f64>().map_err(|_| {
                    SimError::Parse(format!("line {}: column '{name}' is not a number", r + 2))
                })
            })
            .collect()
    }
}

pub fn read_log<R: Read>(input: R) -> Result<LogTable, SimError> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok(LogTable { header, rows })
}
