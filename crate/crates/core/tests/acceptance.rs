//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Built with `harness = false` so the lines are printed by a plain
//! `cargo test`. The process exits non-zero when any criterion fails.

use std::time::{Duration, Instant};

use whqp::robot::parse_chain;
use whqp::sim::{
    run, run_metrics, MetricWindows, RunMetrics, ScenarioFile, ScenarioKind, TrajectoryLog,
    WeightCase, BUNDLED_CHAIN,
};
use whqp::verify::{
    decomp_suite, penrose_suite, robot_suite, stack_suite, whqp_suite, PropertyCheck,
};

const SEED: u64 = 20240917;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, criterion: usize, ok: bool, detail: String) {
        if !ok {
            self.failed += 1;
        }
        println!(
            "criterion {criterion}: {} {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
    }

    /// Criterion over a subset of property checks plus a runtime budget.
    fn checks(
        &mut self,
        criterion: usize,
        checks: &[&PropertyCheck],
        elapsed: Duration,
        budget: Duration,
    ) {
        let mut ok = elapsed <= budget;
        let mut parts = Vec::new();
        for c in checks {
            ok &= c.passed();
            let applied = c.instances - c.skipped;
            parts.push(format!(
                "[{}: max {:.2e} < {:.0e} on {applied}/{}{}]",
                c.name,
                c.max_residual,
                c.threshold,
                c.instances,
                if c.failures.is_empty() {
                    String::new()
                } else {
                    format!(", {} failures, first {:?}", c.failures.len(), c.failures[0])
                }
            ));
        }
        parts.push(format!(
            "time {:.2}s (budget {}s)",
            elapsed.as_secs_f64(),
            budget.as_secs()
        ));
        self.line(criterion, ok, parts.join(" "));
    }
}

fn find<'a>(checks: &'a [PropertyCheck], prefix: &str) -> &'a PropertyCheck {
    checks
        .iter()
        .find(|c| c.name.starts_with(prefix))
        .unwrap_or_else(|| panic!("no property named '{prefix}…'"))
}

fn timed<R>(f: impl FnOnce() -> R) -> (R, Duration) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed())
}

fn simulate(file: &ScenarioFile) -> Result<(RunMetrics, TrajectoryLog<f64>, Duration), String> {
    let chain = parse_chain(BUNDLED_CHAIN).map_err(|e| e.to_string())?;
    let scenario = file.build(chain).map_err(|e| e.to_string())?;
    let (log, elapsed) = timed(|| run(&scenario));
    let log = log.map_err(|e| e.to_string())?;
    Ok((
        run_metrics(&scenario, &log, &MetricWindows::default()),
        log,
        elapsed,
    ))
}

fn main() {
    let mut report = Report { failed: 0 };
    let secs = Duration::from_secs;

    let (penrose, t) = timed(|| penrose_suite(SEED, 500));
    report.checks(1, &penrose.iter().collect::<Vec<_>>(), t, secs(5));

    let (stack, t) = timed(|| stack_suite(SEED, 200));
    report.checks(2, &stack.iter().collect::<Vec<_>>(), t, secs(10));

    let (whqp, t) = timed(|| whqp_suite(SEED, 1000));
    report.checks(
        3,
        &[
            find(&whqp, "active search vs oracle: objective"),
            find(&whqp, "active search vs oracle: pinned"),
        ],
        t,
        secs(120),
    );
    report.checks(
        4,
        &[
            find(&whqp, "W = E, M = E: objective"),
            find(&whqp, "W = E, M = E: pinned"),
            find(&whqp, "scaled W_k: zero-slack"),
        ],
        t,
        secs(30),
    );

    let (decomp, t) = timed(|| decomp_suite(SEED, 200));
    report.checks(
        5,
        &[
            find(&decomp, "COD rate product rule"),
            find(&decomp, "COD rate vs finite"),
        ],
        t,
        secs(10),
    );

    let (robot, t) = timed(|| robot_suite(SEED, 100));
    report.checks(
        6,
        &[
            find(&robot, "‖Ṁ − C − Cᵀ‖ with analytic"),
            find(&robot, "‖Ṁ − C − Cᵀ‖ with finite"),
            find(&robot, "kinetic energy drift"),
        ],
        t,
        secs(20),
    );

    // Criteria 7 and 8 share the three full runs.
    let mut cases = Vec::new();
    let mut ok7 = true;
    let mut parts = Vec::new();
    for case in WeightCase::ALL {
        let file = ScenarioFile {
            case,
            ..ScenarioFile::default()
        };
        match simulate(&file) {
            Ok((m, _, elapsed)) => {
                ok7 &= m.max_res_inertia < 1e-9 && m.max_res_skew < 1e-8 && elapsed <= secs(60);
                parts.push(format!(
                    "[{}] inertia residual {:.2e} < 1e-9, skew residual {:.2e} < 1e-8 over {} steps ({} switch steps excluded), time {:.2}s (budget 60s)",
                    case.name(),
                    m.max_res_inertia,
                    m.max_res_skew,
                    m.records,
                    m.switches,
                    elapsed.as_secs_f64()
                ));
                cases.push((case, m, elapsed));
            }
            Err(e) => {
                ok7 = false;
                parts.push(format!("[{}] run failed: {e}", case.name()));
            }
        }
    }
    report.line(7, ok7, parts.join(" "));
    criterion_8(&mut report, &cases);
    criterion_9(&mut report);

    println!("acceptance: {} of 9 criteria failed", report.failed);
    if report.failed > 0 {
        std::process::exit(1);
    }
}

fn criterion_8(report: &mut Report, cases: &[(WeightCase, RunMetrics, Duration)]) {
    if cases.len() != 3 {
        report.line(8, false, "not all weight cases completed".into());
        return;
    }
    let total: Duration = cases.iter().map(|c| c.2).sum();
    let mut ok = total <= Duration::from_secs(180);
    let mut parts = Vec::new();
    for (case, m, _) in cases {
        let oe = m.orientation_error.unwrap_or(f64::INFINITY);
        let bv = m.box_violation.unwrap_or(f64::INFINITY);
        ok &= oe < 1e-2 && bv < 1e-3;
        parts.push(format!(
            "[{}] orientation error {oe:.2e} < 1e-2, box violation {bv:.2e} < 1e-3, rms to spiral {:.4}, rms to center {:.4}",
            case.name(),
            m.rms_to_spiral.unwrap_or(f64::NAN),
            m.rms_to_center.unwrap_or(f64::NAN)
        ));
    }
    let get = |c: WeightCase| &cases.iter().find(|x| x.0 == c).expect("case present").1;
    let (tr, eq, rg) = (
        get(WeightCase::Track),
        get(WeightCase::Equal),
        get(WeightCase::Regulate),
    );
    let ordered = |a: Option<f64>, b: Option<f64>, c: Option<f64>| match (a, b, c) {
        (Some(a), Some(b), Some(c)) => a < b && b < c,
        _ => false,
    };
    let spiral = ordered(tr.rms_to_spiral, eq.rms_to_spiral, rg.rms_to_spiral);
    let center = ordered(rg.rms_to_center, eq.rms_to_center, tr.rms_to_center);
    ok &= spiral && center;
    parts.push(format!(
        "spiral ordering track < equal < regulate: {spiral}, center ordering regulate < equal < track: {center}, time {:.2}s (budget 180s)",
        total.as_secs_f64()
    ));
    report.line(8, ok, parts.join(" "));
}

fn criterion_9(report: &mut Report) {
    let file = ScenarioFile {
        kind: ScenarioKind::Alignment,
        duration: 4.0,
        ..ScenarioFile::default()
    };
    let (log, elapsed) = match simulate(&file) {
        Ok((_, log, elapsed)) => (log, elapsed),
        Err(e) => return report.line(9, false, format!("run failed: {e}")),
    };
    let a = &file.alignment;
    let ranks_at = |t: f64| {
        log.records
            .iter()
            .find(|r| r.t >= t)
            .map(|r| r.ranks.clone())
            .unwrap_or_default()
    };
    let before = ranks_at(a.start * 0.5);
    let after = ranks_at(a.end + 0.5 * (file.duration - a.end));
    // Level 2 is the aligned task, level 3 the one that takes over the released direction.
    let released = before.get(1) == Some(&2) && after.get(1) == Some(&1);
    let absorbed = before
        .get(2)
        .zip(after.get(2))
        .is_some_and(|(b, a)| a == &(b + 1));
    let full = |r: &[usize]| r.iter().sum::<usize>() == log.dof;
    let ok =
        released && absorbed && full(&before) && full(&after) && elapsed <= Duration::from_secs(60);
    report.line(
        9,
        ok,
        format!(
            "projected ranks {before:?} before alignment, {after:?} after; level 2 released a direction: {released}, level 3 absorbed it: {absorbed}; {} steps without error, time {:.2}s (budget 60s)",
            log.records.len(),
            elapsed.as_secs_f64()
        ),
    );
}
