use nalgebra::{Quaternion, UnitQuaternion};

use super::{Scenario, TrajectoryLog};
use crate::robot::{orientation_error, TaskKind};

/// Behavioural summary of a run, each figure present only when the scenario
/// has the corresponding task.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub records: usize,
    /// Records flagged as an active-set switch.
    pub switches: usize,
    /// Largest `‖F⁻ᵀMF⁻¹ − E‖` over records without a switch.
    pub max_res_inertia: f64,
    /// Largest `‖Γ + Γᵀ‖` over records without a switch.
    pub max_res_skew: f64,
    /// Largest orientation error (vector part of the error quaternion) after `settle_orientation`.
    pub orientation_error: Option<f64>,
    /// Largest excursion of the tool outside the box after `settle_box` (m).
    pub box_violation: Option<f64>,
    /// RMS distance to the spiral over the final `window` seconds (m).
    pub rms_to_spiral: Option<f64>,
    /// RMS distance to the spiral center over the same window (m).
    pub rms_to_center: Option<f64>,
}

/// Time after which the orientation and box figures are taken, and the
/// length of the final window for the RMS distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricWindows {
    pub settle_orientation: f64,
    pub settle_box: f64,
    pub window: f64,
}

impl Default for MetricWindows {
    fn default() -> Self {
        MetricWindows {
            settle_orientation: 2.0,
            settle_box: 0.5,
            window: 3.0,
        }
    }
}

fn running_max(acc: &mut Option<f64>, v: f64) {
    *acc = Some(acc.map_or(v, |a| a.max(v)));
}

pub fn run_metrics(
    scenario: &Scenario<f64>,
    log: &TrajectoryLog<f64>,
    windows: &MetricWindows,
) -> RunMetrics {
    let mut m = RunMetrics {
        records: log.records.len(),
        switches: 0,
        max_res_inertia: 0.0,
        max_res_skew: 0.0,
        orientation_error: None,
        box_violation: None,
        rms_to_spiral: None,
        rms_to_center: None,
    };
    let end = log.records.last().map_or(0.0, |r| r.t);
    let (mut spiral_sq, mut center_sq, mut samples) = (0.0, 0.0, 0usize);
    for r in &log.records {
        if r.switched {
            m.switches += 1;
        } else {
            m.max_res_inertia = m.max_res_inertia.max(r.res_inertia);
            m.max_res_skew = m.max_res_skew.max(r.res_skew);
        }
        let [w, x, y, z] = r.quaternion;
        let actual = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        for task in &scenario.tasks {
            match &task.kind {
                TaskKind::OrientationTrack { profile } if r.t >= windows.settle_orientation => {
                    let e = orientation_error(&actual, &profile.eval(r.t).0).norm();
                    running_max(&mut m.orientation_error, e);
                }
                TaskKind::PositionBox { lower, upper } if r.t >= windows.settle_box => {
                    let v = (0..2)
                        .map(|a| (lower[a] - r.position[a]).max(r.position[a] - upper[a]))
                        .fold(0.0, f64::max);
                    running_max(&mut m.box_violation, v);
                }
                TaskKind::PositionTrackRegulate { spiral } if r.t >= end - windows.window => {
                    spiral_sq += (r.position - spiral.eval(r.t).0).norm_squared();
                    center_sq += (r.position - spiral.center).norm_squared();
                    samples += 1;
                }
                _ => {}
            }
        }
    }
    if samples > 0 {
        m.rms_to_spiral = Some((spiral_sq / samples as f64).sqrt());
        m.rms_to_center = Some((center_sq / samples as f64).sqrt());
    }
    m
}
