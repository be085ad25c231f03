//! Plot data extracted from a simulation log.
//!
//! Writes `orientation.csv` (rotation-matrix entries over time), `position.csv`
//! (tool position over time) and `xy.csv` (the horizontal path, with the
//! desired spiral when the scenario is known). SVG line charts of the same
//! series are optional.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use whqp::robot::TaskKind;
use whqp::sim::{read_log, Scenario};

/// Row-major rotation matrix of the unit quaternion `(w, x, y, z)`.
fn rotation(w: f64, x: f64, y: f64, z: f64) -> [f64; 9] {
    [
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ]
}

/// Named columns sharing one length.
struct Series {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Series {
    fn new(names: &[&str]) -> Self {
        Series {
            names: names.iter().map(|s| s.to_string()).collect(),
            columns: vec![Vec::new(); names.len()],
        }
    }

    fn push(&mut self, row: &[f64]) {
        for (c, v) in self.columns.iter_mut().zip(row) {
            c.push(*v);
        }
    }

    fn csv(&self) -> String {
        let mut s = self.names.join(",");
        s.push('\n');
        for i in 0..self.columns.first().map_or(0, Vec::len) {
            let row: Vec<String> = self.columns.iter().map(|c| c[i].to_string()).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

const COLORS: [&str; 9] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#17becf",
];

/// Line chart of `(x, y)` column pairs on shared axes.
fn svg(title: &str, lines: &[(&str, &[f64], &[f64])]) -> String {
    let (w, h, pad) = (640.0, 400.0, 40.0);
    let range = |values: &mut dyn Iterator<Item = f64>| {
        values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
    };
    let (x0, x1) = range(&mut lines.iter().flat_map(|l| l.1.iter().copied()));
    let (y0, y1) = range(&mut lines.iter().flat_map(|l| l.2.iter().copied()));
    let sx = (w - 2.0 * pad) / (x1 - x0).max(1e-12);
    let sy = (h - 2.0 * pad) / (y1 - y0).max(1e-12);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{pad}" y="20">{title}</text>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="{}">{x0:.3}</text><text x="{}" y="{}" text-anchor="end">{x1:.3}</text>"#,
        h - pad + 14.0,
        w - pad,
        h - pad + 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text><text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#,
        pad - 4.0,
        h - pad,
        pad - 4.0,
        pad + 4.0
    );
    for (i, (name, xs, ys)) in lines.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = xs
            .iter()
            .zip(ys.iter())
            .map(|(x, y)| format!("{:.2},{:.2}", pad + (x - x0) * sx, h - pad - (y - y0) * sy))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            w - pad + 4.0,
            pad + 12.0 * (i as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn plot(
    log: &Path,
    out: &Path,
    scenario: Option<&Scenario<f64>>,
    with_svg: bool,
) -> Result<()> {
    let file = std::fs::File::open(log).with_context(|| format!("opening {}", log.display()))?;
    let table = read_log(file).with_context(|| format!("reading {}", log.display()))?;
    let col = |name: &str| {
        table
            .column(name)
            .with_context(|| format!("reading {}", log.display()))
    };
    let (t, px, py, pz) = (col("t")?, col("px")?, col("py")?, col("pz")?);
    let (qw, qx, qy, qz) = (col("qw")?, col("qx")?, col("qy")?, col("qz")?);

    let mut orientation = Series::new(&[
        "t", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33",
    ]);
    let mut position = Series::new(&["t", "px", "py", "pz"]);
    let spiral = scenario.and_then(|s| {
        s.tasks.iter().find_map(|task| match &task.kind {
            TaskKind::PositionTrackRegulate { spiral } => Some(*spiral),
            _ => None,
        })
    });
    let mut xy = if spiral.is_some() {
        Series::new(&["t", "px", "py", "sx", "sy", "cx", "cy"])
    } else {
        Series::new(&["t", "px", "py"])
    };
    for i in 0..t.len() {
        let r = rotation(qw[i], qx[i], qy[i], qz[i]);
        let mut row = vec![t[i]];
        row.extend(r);
        orientation.push(&row);
        position.push(&[t[i], px[i], py[i], pz[i]]);
        match &spiral {
            Some(s) => {
                let d = s.eval(t[i]).0;
                xy.push(&[t[i], px[i], py[i], d.x, d.y, s.center.x, s.center.y]);
            }
            None => xy.push(&[t[i], px[i], py[i]]),
        }
    }

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let write = |name: &str, text: String| {
        std::fs::write(out.join(name), text).with_context(|| format!("writing {name}"))
    };
    write("orientation.csv", orientation.csv())?;
    write("position.csv", position.csv())?;
    write("xy.csv", xy.csv())?;

    if with_svg && !t.is_empty() {
        let rot: Vec<(&str, &[f64], &[f64])> = (1..10)
            .map(|j| {
                (
                    orientation.names[j].as_str(),
                    t.as_slice(),
                    orientation.columns[j].as_slice(),
                )
            })
            .collect();
        write(
            "orientation.svg",
            svg("rotation matrix entries vs time", &rot),
        )?;
        write(
            "position.svg",
            svg(
                "tool position vs time",
                &[("px", &t, &px), ("py", &t, &py), ("pz", &t, &pz)],
            ),
        )?;
        let mut path: Vec<(&str, &[f64], &[f64])> = vec![("tool", &px, &py)];
        if spiral.is_some() {
            path.push(("spiral", &xy.columns[3], &xy.columns[4]));
        }
        write("xy.svg", svg("horizontal tool path", &path))?;
    }
    Ok(())
}
