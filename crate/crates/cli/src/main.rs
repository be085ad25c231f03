mod plot;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use whqp::sim::{
    read_scenario_file, run, run_metrics, write_log, MetricWindows, RunMetrics, Scenario,
    WeightCase,
};
use whqp::verify::{run_suite, Suite};
use whqp::whqp::{active_search, parse_problem, SearchOptions};

#[derive(Parser)]
#[command(
    name = "whqp",
    version,
    about = "Weighted hierarchical QP solver and hierarchical compliance simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a hierarchy read from a problem file.
    Solve { file: PathBuf },
    /// Run a scenario and write `log.csv` and `summary.txt`.
    Simulate {
        scenario: PathBuf,
        /// Weight of tracking against regulation; overrides the scenario file.
        #[arg(long)]
        case: Option<WeightCase>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Run seeded property suites and report the largest residual of each property.
    Verify {
        /// decomp, wmpi, whqp, robot, controller or all.
        suite: Suite,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Instances per suite; each suite has its own default.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Extract plot data (and simple SVG charts) from a simulation log.
    Plot {
        log: PathBuf,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Scenario the log came from; adds the desired spiral to the xy data.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        case: Option<WeightCase>,
        /// Also write SVG line charts.
        #[arg(long)]
        svg: bool,
    },
}

/// `%g`-style formatting with 12 significant digits.
fn sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{}", if x == 0.0 { 0.0 } else { x });
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let s = format!("{:.*}", (11 - exp).max(0) as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.11e}");
        let (mantissa, e) = s.split_once('e').expect("exponent present");
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}e{e}")
    }
}

fn solve(path: &Path) -> Result<ExitCode> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let hierarchy = match parse_problem(&text) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return Ok(ExitCode::from(2));
        }
    };
    let state = match active_search(&hierarchy, &SearchOptions::default()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(1));
        }
    };
    let x: Vec<String> = state.x.iter().map(|&v| sig12(v)).collect();
    println!("x = [{}]", x.join(", "));
    let active: Vec<String> = state.active.iter().map(ToString::to_string).collect();
    println!("active = {}", active.join(" "));
    for (k, obj) in state.objective_vector().iter().enumerate() {
        println!("objective level {} = {}", k + 1, sig12(*obj));
    }
    Ok(ExitCode::SUCCESS)
}

/// Reads a scenario file, applies command-line overrides and builds it.
fn scenario_from(
    path: &Path,
    case: Option<WeightCase>,
    dt: Option<f64>,
    duration: Option<f64>,
) -> Result<Scenario<f64>> {
    let (mut file, chain) =
        read_scenario_file(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(case) = case {
        file.case = case;
    }
    if let Some(dt) = dt {
        file.dt = dt;
    }
    if let Some(duration) = duration {
        file.duration = duration;
    }
    Ok(file.build(chain)?)
}

fn summary(
    scenario: &Scenario<f64>,
    m: &RunMetrics,
    last: Option<&whqp::sim::LogRecord<f64>>,
) -> String {
    let mut s = String::new();
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6e}"));
    let _ = writeln!(s, "scenario: {}", scenario.name);
    let _ = writeln!(s, "steps: {}", m.records);
    let _ = writeln!(s, "active-set switches: {}", m.switches);
    let _ = writeln!(
        s,
        "max inertia residual (no switch): {:.6e}",
        m.max_res_inertia
    );
    let _ = writeln!(s, "max skew residual (no switch): {:.6e}", m.max_res_skew);
    let _ = writeln!(
        s,
        "max orientation error after 2 s: {}",
        opt(m.orientation_error)
    );
    let _ = writeln!(
        s,
        "max box violation after 0.5 s (m): {}",
        opt(m.box_violation)
    );
    let _ = writeln!(
        s,
        "rms distance to spiral, final 3 s (m): {}",
        opt(m.rms_to_spiral)
    );
    let _ = writeln!(
        s,
        "rms distance to center, final 3 s (m): {}",
        opt(m.rms_to_center)
    );
    if let Some(r) = last {
        let _ = writeln!(
            s,
            "final tool position (m): {:.6} {:.6} {:.6}",
            r.position.x, r.position.y, r.position.z
        );
        let slack: Vec<String> = r.slack.iter().map(|v| format!("{v:.6e}")).collect();
        let _ = writeln!(s, "final level slack norms: {}", slack.join(" "));
    }
    s
}

fn simulate(
    path: &Path,
    case: Option<WeightCase>,
    out: &Path,
    dt: Option<f64>,
    duration: Option<f64>,
) -> Result<()> {
    let scenario = scenario_from(path, case, dt, duration)?;
    let log = run(&scenario)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let file = std::fs::File::create(out.join("log.csv")).context("creating log.csv")?;
    write_log(&log, std::io::BufWriter::new(file))?;
    let metrics = run_metrics(&scenario, &log, &MetricWindows::default());
    let text = summary(&scenario, &metrics, log.records.last());
    std::fs::write(out.join("summary.txt"), &text).context("writing summary.txt")?;
    print!("{text}");
    Ok(())
}

fn verify(suite: Suite, seed: u64, count: Option<usize>) -> ExitCode {
    let checks = run_suite(suite, seed, count);
    let mut failed = 0;
    println!(
        "{:<6} {:<11} {:>11} {:>9} {:>9}  property",
        "result", "suite", "max", "threshold", "instances"
    );
    for c in &checks {
        if !c.passed() {
            failed += 1;
        }
        println!(
            "{:<6} {:<11} {:>11.3e} {:>9.0e} {:>9}  {}",
            if c.passed() { "PASS" } else { "FAIL" },
            c.suite,
            c.max_residual,
            c.threshold,
            format!("{}/{}", c.instances - c.skipped, c.instances),
            c.name
        );
        for (i, why) in c.failures.iter().take(3) {
            println!("       instance {i}: {why}");
        }
    }
    println!(
        "{} of {} properties failed (seed {seed})",
        failed,
        checks.len()
    );
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve { file } => solve(&file),
        Command::Simulate {
            scenario,
            case,
            out,
            dt,
            duration,
        } => {
            simulate(&scenario, case, &out, dt, duration)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suite, seed, count } => Ok(verify(suite, seed, count)),
        Command::Plot {
            log,
            out,
            scenario,
            case,
            svg,
        } => {
            let scenario = scenario
                .map(|p| scenario_from(&p, case, None, None))
                .transpose()?;
            plot::plot(&log, &out, scenario.as_ref(), svg)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::sig12;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(sig12(0.5), "0.5");
        assert_eq!(sig12(0.25), "0.25");
        assert_eq!(sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(sig12(-2.0 / 3.0 * 1e3), "-666.666666667");
        assert_eq!(sig12(0.0), "0");
        assert_eq!(sig12(1.5e-9), "1.5e-9");
        assert_eq!(sig12(123456789012345.0), "1.23456789012e14");
    }
}
