//! Seeded random hierarchies for property tests and the verification suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::problem::{BoundSense, Hierarchy, TaskLevel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomHierarchyConfig {
    pub max_n: usize,
    pub max_levels: usize,
    /// Upper limit on inequality rows (before range rows are split).
    pub max_inequality: usize,
    pub max_rows_per_level: usize,
    /// Chance that a new row is a combination of rows already generated.
    pub dependent_row_prob: f64,
    /// When false every weight is the identity.
    pub weighted: bool,
}

impl Default for RandomHierarchyConfig {
    fn default() -> Self {
        RandomHierarchyConfig {
            max_n: 6,
            max_levels: 4,
            max_inequality: 6,
            max_rows_per_level: 4,
            dependent_row_prob: 0.2,
            weighted: true,
        }
    }
}

fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    a.tr_mul(&a) + DMatrix::identity(n, n) * rng.gen_range(0.2..1.0)
}

pub fn random_hierarchy<R: Rng>(rng: &mut R, cfg: &RandomHierarchyConfig) -> Hierarchy<f64> {
    let n = rng.gen_range(1..=cfg.max_n);
    let depth = rng.gen_range(1..=cfg.max_levels);
    let mut budget = cfg.max_inequality;
    let mut history: Vec<DVector<f64>> = Vec::new();
    let mut levels = Vec::with_capacity(depth);

    for _ in 0..depth {
        let target = rng.gen_range(1..=cfg.max_rows_per_level);
        let mut a_rows: Vec<DVector<f64>> = Vec::new();
        let mut b = Vec::new();
        let mut sense = Vec::new();
        let mut blocks = Vec::new();
        let mut weight_blocks: Vec<DMatrix<f64>> = Vec::new();

        while a_rows.len() < target {
            let inequality = budget > 0 && rng.gen_bool(0.5);
            let size = if inequality {
                1
            } else {
                rng.gen_range(1..=2).min(target - a_rows.len())
            };
            for _ in 0..size {
                let row = if !history.is_empty() && rng.gen_bool(cfg.dependent_row_prob) {
                    let mut r = DVector::zeros(n);
                    for h in &history {
                        if rng.gen_bool(0.5) {
                            r += h * rng.gen_range(-1.0..1.0);
                        }
                    }
                    if r.norm() == 0.0 {
                        history[rng.gen_range(0..history.len())].clone()
                    } else {
                        r
                    }
                } else {
                    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
                };
                history.push(row.clone());
                a_rows.push(row);
                let lo: f64 = rng.gen_range(-1.0..1.0);
                b.push(lo);
                sense.push(if inequality {
                    match rng.gen_range(0..3) {
                        0 => BoundSense::Lower,
                        1 => BoundSense::Upper,
                        _ => BoundSense::Range {
                            upper: lo + rng.gen_range(0.05..1.0),
                        },
                    }
                } else {
                    BoundSense::Equality
                });
            }
            if inequality {
                budget -= 1;
            }
            blocks.push(size);
            weight_blocks.push(if !cfg.weighted {
                DMatrix::identity(size, size)
            } else if inequality {
                DMatrix::from_element(1, 1, rng.gen_range(0.3..3.0))
            } else {
                random_spd(rng, size)
            });
        }

        let m = a_rows.len();
        let mut w = DMatrix::zeros(m, m);
        let mut offset = 0;
        for block in &weight_blocks {
            let s = block.nrows();
            w.view_mut((offset, offset), (s, s)).copy_from(block);
            offset += s;
        }
        levels.push(TaskLevel {
            a: DMatrix::from_fn(m, n, |i, j| a_rows[i][j]),
            b: DVector::from_vec(b),
            sense,
            w,
            blocks,
        });
    }
    Hierarchy { n, levels }
}
