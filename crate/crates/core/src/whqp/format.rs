//! Line-oriented text format for hierarchies.
//!
//! ```text
//! n 2
//! level
//! weight_blocks 1 1
//! W diag 1 2
//! row ge 1 0 1
//! row range 0 1 -0.5 0.5
//!
//! level
//! W 1
//! row eq 1 1 0
//! ```
//!
//! Each level starts with `level` (or after a blank line) and lists `row`
//! lines `row <eq|ge|le|range> <n coefficients> <b>`, where `range` takes two
//! bounds. `W` is given row-major or as `W diag`, and `weight_blocks` lists the
//! diagonal block sizes; when omitted, the blocks are one per row for a
//! diagonal `W` and a single block otherwise. Lines starting with `#` are
//! ignored.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::problem::{BoundSense, Hierarchy, TaskLevel};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        message: message.into(),
    }
}

enum WeightSpec {
    Dense(Vec<f64>),
    Diag(Vec<f64>),
}

#[derive(Default)]
struct LevelDraft {
    blocks: Option<Vec<usize>>,
    weight: Option<(usize, WeightSpec)>,
    rows: Vec<(Vec<f64>, f64, BoundSense<f64>)>,
}

impl LevelDraft {
    fn is_empty(&self) -> bool {
        self.blocks.is_none() && self.weight.is_none() && self.rows.is_empty()
    }

    fn finish(self, n: usize) -> Result<TaskLevel<f64>, ParseError> {
        let m = self.rows.len();
        let w = match self.weight {
            None => DMatrix::identity(m, m),
            Some((line, WeightSpec::Dense(values))) => {
                if values.len() != m * m {
                    return Err(err(line, format!("W needs {} values for {m} rows", m * m)));
                }
                DMatrix::from_row_slice(m, m, &values)
            }
            Some((line, WeightSpec::Diag(values))) => {
                if values.len() != m {
                    return Err(err(line, format!("W diag needs {m} values")));
                }
                DMatrix::from_diagonal(&DVector::from_vec(values))
            }
        };
        let blocks = self.blocks.unwrap_or_else(|| {
            let diagonal = (0..m).all(|i| (0..m).all(|j| i == j || w[(i, j)] == 0.0));
            if diagonal {
                vec![1; m]
            } else {
                vec![m]
            }
        });
        let a = DMatrix::from_fn(m, n, |i, j| self.rows[i].0[j]);
        let b = DVector::from_fn(m, |i, _| self.rows[i].1);
        let sense = self.rows.iter().map(|r| r.2).collect();
        Ok(TaskLevel {
            a,
            b,
            sense,
            w,
            blocks,
        })
    }
}

fn parse_floats(tokens: &[&str], line: usize) -> Result<Vec<f64>, ParseError> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| err(line, format!("expected a number, found `{t}`")))
        })
        .collect()
}

/// Parses a hierarchy; structural validation is left to the solver.
pub fn parse_problem(text: &str) -> Result<Hierarchy<f64>, ParseError> {
    let mut n: Option<usize> = None;
    let mut levels = Vec::new();
    let mut draft = LevelDraft::default();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.trim();
        if content.starts_with('#') {
            continue;
        }
        if content.is_empty() {
            if !draft.is_empty() {
                let nn = n.ok_or_else(|| err(line, "missing `n` header"))?;
                levels.push(std::mem::take(&mut draft).finish(nn)?);
            }
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        match tokens[0] {
            "n" => {
                if n.is_some() {
                    return Err(err(line, "duplicate `n` header"));
                }
                let value = tokens
                    .get(1)
                    .and_then(|t| t.parse::<usize>().ok())
                    .filter(|_| tokens.len() == 2)
                    .ok_or_else(|| err(line, "expected `n <count>`"))?;
                n = Some(value);
            }
            "level" => {
                let nn = n.ok_or_else(|| err(line, "missing `n` header"))?;
                if tokens.len() != 1 {
                    return Err(err(line, "`level` takes no arguments"));
                }
                if !draft.is_empty() {
                    levels.push(std::mem::take(&mut draft).finish(nn)?);
                }
            }
            "weight_blocks" => {
                let sizes = tokens[1..]
                    .iter()
                    .map(|t| t.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| err(line, "block sizes must be non-negative integers"))?;
                draft.blocks = Some(sizes);
            }
            "W" => {
                let spec = if tokens.get(1) == Some(&"diag") {
                    WeightSpec::Diag(parse_floats(&tokens[2..], line)?)
                } else {
                    WeightSpec::Dense(parse_floats(&tokens[1..], line)?)
                };
                draft.weight = Some((line, spec));
            }
            "row" => {
                let nn = n.ok_or_else(|| err(line, "missing `n` header"))?;
                let kind = *tokens
                    .get(1)
                    .ok_or_else(|| err(line, "missing row sense"))?;
                let values = parse_floats(&tokens[2..], line)?;
                let bounds = if kind == "range" { 2 } else { 1 };
                if values.len() != nn + bounds {
                    return Err(err(
                        line,
                        format!("`row {kind}` needs {nn} coefficients and {bounds} bound(s)"),
                    ));
                }
                let coeffs = values[..nn].to_vec();
                let b = values[nn];
                let sense = match kind {
                    "eq" => BoundSense::Equality,
                    "ge" => BoundSense::Lower,
                    "le" => BoundSense::Upper,
                    "range" => BoundSense::Range {
                        upper: values[nn + 1],
                    },
                    other => return Err(err(line, format!("unknown row sense `{other}`"))),
                };
                draft.rows.push((coeffs, b, sense));
            }
            other => return Err(err(line, format!("unknown keyword `{other}`"))),
        }
    }
    let last = text.lines().count().max(1);
    let n = n.ok_or_else(|| err(last, "missing `n` header"))?;
    if !draft.is_empty() {
        levels.push(draft.finish(n)?);
    }
    Ok(Hierarchy { n, levels })
}

/// Writes a hierarchy in the format accepted by [`parse_problem`].
pub fn write_problem(h: &Hierarchy<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "n {}", h.n);
    for level in &h.levels {
        let _ = writeln!(out, "\nlevel");
        let blocks: Vec<String> = level.blocks.iter().map(|b| b.to_string()).collect();
        let _ = writeln!(out, "weight_blocks {}", blocks.join(" "));
        let w: Vec<String> = level
            .w
            .transpose()
            .iter()
            .map(|v| format!("{v:e}"))
            .collect();
        let _ = writeln!(out, "W {}", w.join(" "));
        for i in 0..level.rows() {
            let coeffs: Vec<String> = level.a.row(i).iter().map(|v| format!("{v:e}")).collect();
            let (kind, bounds) = match level.sense[i] {
                BoundSense::Equality => ("eq", format!("{:e}", level.b[i])),
                BoundSense::Lower => ("ge", format!("{:e}", level.b[i])),
                BoundSense::Upper => ("le", format!("{:e}", level.b[i])),
                BoundSense::Range { upper } => ("range", format!("{:e} {upper:e}", level.b[i])),
            };
            let _ = writeln!(out, "row {kind} {} {bounds}", coeffs.join(" "));
        }
    }
    out
}
