use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use super::log::{LogRecord, TrajectoryLog};
use super::{Integrator, Scenario, SimError};
use crate::controller::{
    build_transform, control_torque, extract_damping, reference_xi, LevelReference, TransformState,
};
use crate::robot::{task_kinematics, RobotState, SerialChain};
use crate::scalar::Scalar;
use crate::whqp::{active_search, BoundSense, Hierarchy, RowId, SearchOptions, TaskLevel};

/// Output of one control evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep<T: Scalar> {
    pub tau: DVector<T>,
    /// Kinematic solution of the instantaneous hierarchy.
    pub qdot_ref: DVector<T>,
    pub active: BTreeSet<RowId>,
    /// Projected rank of every level.
    pub ranks: Vec<usize>,
    /// `√(wᵀ W w)` of every level at the kinematic solution.
    pub slack: Vec<T>,
    pub xi_r: DVector<T>,
    pub dxi_r: DVector<T>,
    pub transform: TransformState<T>,
    pub res_inertia: T,
    pub res_skew: T,
    /// The active set differs from the previous step's.
    pub switched: bool,
}

fn block_diag<T: Scalar>(parts: &[&DMatrix<T>]) -> DMatrix<T> {
    let n: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut o = 0;
    for p in parts {
        out.view_mut((o, o), p.shape()).copy_from(p);
        o += p.nrows();
    }
    out
}

fn vstack<T: Scalar>(parts: &[&DMatrix<T>], cols: usize) -> DMatrix<T> {
    let n: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(n, cols);
    let mut o = 0;
    for p in parts {
        out.rows_mut(o, p.nrows()).copy_from(p);
        o += p.nrows();
    }
    out
}

fn vcat<T: Scalar>(parts: &[&DVector<T>]) -> DVector<T> {
    DVector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().copied()),
    )
}

/// Per-level data assembled from the tasks.
struct Levels<T: Scalar> {
    hierarchy: Hierarchy<T>,
    adot: Vec<DMatrix<T>>,
    refs: Vec<LevelReference<T>>,
    damping: Vec<DMatrix<T>>,
}

fn assemble<T: Scalar>(
    scenario: &Scenario<T>,
    state: &RobotState<T>,
    t: T,
) -> Result<Levels<T>, SimError> {
    let n = scenario.chain.dof();
    let mut levels = Vec::new();
    let mut adot = Vec::new();
    let mut refs = Vec::new();
    let mut damping = Vec::new();
    for p in scenario.priorities() {
        let mut j = Vec::new();
        let mut dj = Vec::new();
        let mut b = Vec::new();
        let mut db = Vec::new();
        let mut sense: Vec<BoundSense<T>> = Vec::new();
        let mut w = Vec::new();
        let mut blocks = Vec::new();
        let mut d = Vec::new();
        for (task, dbar) in scenario.tasks.iter().zip(&scenario.damping) {
            if task.priority != p {
                continue;
            }
            let tk = task_kinematics(&scenario.chain, task, state, t)?;
            j.push(tk.j);
            dj.push(tk.dj);
            b.push(tk.b);
            db.push(tk.db);
            sense.extend(tk.sense);
            w.push(&task.weight);
            blocks.extend(task.blocks.iter().copied());
            d.push(dbar);
        }
        levels.push(TaskLevel {
            a: vstack(&j.iter().collect::<Vec<_>>(), n),
            b: vcat(&b.iter().collect::<Vec<_>>()),
            sense,
            w: block_diag(&w),
            blocks,
        });
        adot.push(vstack(&dj.iter().collect::<Vec<_>>(), n));
        refs.push(LevelReference {
            b: vcat(&b.iter().collect::<Vec<_>>()),
            db: vcat(&db.iter().collect::<Vec<_>>()),
        });
        damping.push(block_diag(&d));
    }
    Ok(Levels {
        hierarchy: Hierarchy { n, levels },
        adot,
        refs,
        damping,
    })
}

/// Keeps the previous active set to warm-start the next search.
#[derive(Debug, Clone, Default)]
pub struct HierarchicalController {
    previous: Option<BTreeSet<RowId>>,
}

impl HierarchicalController {
    pub fn new() -> Self {
        Self::default()
    }

    /// Control torque and diagnostics at `(state, t)`.
    pub fn compute<T: Scalar>(
        &mut self,
        scenario: &Scenario<T>,
        state: &RobotState<T>,
        t: T,
    ) -> Result<ControlStep<T>, SimError> {
        let chain = &scenario.chain;
        let levels = assemble(scenario, state, t)?;
        let m = chain.mass_matrix(&state.q)?;
        let mdot = chain.mass_matrix_rate(state)?;
        let c = chain.coriolis_matrix(state)?;
        let g = chain.gravity(&state.q)?;

        let options = SearchOptions {
            metric: Some(m.clone()),
            rank_tol: scenario.rank_tol,
            warm_start: self.previous.clone(),
            ..SearchOptions::default()
        };
        let search = active_search(&levels.hierarchy, &options)?;
        let transform = build_transform(&search, &m, &mdot, &c, &state.dq, &levels.adot)?;
        let (xi_r, dxi_r) = reference_xi(&transform, &search, &levels.refs)?;
        let damping = extract_damping(&transform, &search, &levels.damping)?;
        let tau = control_torque(&transform, &xi_r, &dxi_r, &damping, &g)?;

        let switched = self.previous.as_ref().is_some_and(|p| *p != search.active);
        self.previous = Some(search.active.clone());
        let slack = search
            .objective_vector()
            .into_iter()
            .map(|o| (o * T::lit(2.0)).sqrt())
            .collect();
        Ok(ControlStep {
            tau,
            qdot_ref: search.x.clone(),
            ranks: transform.levels.iter().map(|l| l.rank).collect(),
            res_inertia: transform.inertia_residual(&m),
            res_skew: transform.skew_residual(),
            active: search.active,
            slack,
            xi_r,
            dxi_r,
            transform,
            switched,
        })
    }
}

/// Advances `state` by `dt` with the torque supplied per stage by `torque`.
pub fn integrate<T: Scalar, F>(
    chain: &SerialChain<T>,
    state: &RobotState<T>,
    dt: T,
    integrator: Integrator,
    mut torque: F,
) -> Result<RobotState<T>, SimError>
where
    F: FnMut(&RobotState<T>) -> Result<DVector<T>, SimError>,
{
    let mut accel = |s: &RobotState<T>| -> Result<DVector<T>, SimError> {
        let tau = torque(s)?;
        Ok(chain.forward_dynamics(s, &tau)?)
    };
    match integrator {
        Integrator::SemiImplicitEuler => {
            let ddq = accel(state)?;
            let dq = &state.dq + ddq * dt;
            let q = &state.q + &dq * dt;
            Ok(RobotState { q, dq })
        }
        Integrator::Rk4 => {
            let half = dt * T::lit(0.5);
            let shift = |k_q: &DVector<T>, k_dq: &DVector<T>, h: T| RobotState {
                q: &state.q + k_q * h,
                dq: &state.dq + k_dq * h,
            };
            let k1_q = state.dq.clone();
            let k1_dq = accel(state)?;
            let s2 = shift(&k1_q, &k1_dq, half);
            let k2_dq = accel(&s2)?;
            let k2_q = s2.dq;
            let s3 = shift(&k2_q, &k2_dq, half);
            let k3_dq = accel(&s3)?;
            let k3_q = s3.dq;
            let s4 = shift(&k3_q, &k3_dq, dt);
            let k4_dq = accel(&s4)?;
            let k4_q = s4.dq;
            let sixth = dt / T::lit(6.0);
            let two = T::lit(2.0);
            Ok(RobotState {
                q: &state.q + (k1_q + &k2_q * two + &k3_q * two + k4_q) * sixth,
                dq: &state.dq + (k1_dq + &k2_dq * two + &k3_dq * two + k4_dq) * sixth,
            })
        }
    }
}

/// One control evaluation followed by one integration step with the torque held.
/// Next state, the record of the current one and the control that was applied.
pub type StepOutput<T> = (RobotState<T>, LogRecord<T>, ControlStep<T>);

pub fn step<T: Scalar>(
    scenario: &Scenario<T>,
    controller: &mut HierarchicalController,
    state: &RobotState<T>,
    t: T,
) -> Result<StepOutput<T>, SimError> {
    let control = controller.compute(scenario, state, t)?;
    let record = LogRecord::new(&scenario.chain, state, t, &control)?;
    let tau = control.tau.clone();
    let next = integrate(
        &scenario.chain,
        state,
        scenario.dt,
        scenario.integrator,
        |_| Ok(tau.clone()),
    )?;
    let speed = next.dq.norm();
    if !(speed <= scenario.velocity_guard) {
        return Err(SimError::IntegrationDiverged {
            t: (t + scenario.dt).to_f64(),
            guard: scenario.velocity_guard.to_f64(),
        });
    }
    Ok((next, record, control))
}

/// Runs the scenario to its end and returns the log.
pub fn run<T: Scalar>(scenario: &Scenario<T>) -> Result<TrajectoryLog<T>, SimError> {
    scenario.validate()?;
    let mut controller = HierarchicalController::new();
    let mut state = scenario.initial.clone();
    let steps = scenario.steps();
    let mut records = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = scenario.dt * T::from_usize(i).expect("step index fits the scalar type");
        let (next, record, _) = step(scenario, &mut controller, &state, t)?;
        records.push(record);
        state = next;
    }
    Ok(TrajectoryLog {
        dof: scenario.chain.dof(),
        levels: scenario.priorities().len(),
        records,
    })
}
