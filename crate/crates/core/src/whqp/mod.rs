//! Weighted hierarchical quadratic programs.
//!
//! A hierarchy is solved in lexicographic order: each level minimizes
//! `½ wᵀ W w` over its slack `w` without degrading any higher level. Levels may
//! mix equality and inequality rows; the active search decides which
//! inequality rows are treated as equalities at the optimum.

mod format;
mod oracle;
mod problem;
mod random;
mod solver;

use thiserror::Error;

use crate::decomp::DecompError;
use crate::wmpi::WmpiError;

pub use format::{parse_problem, write_problem, ParseError};
pub use oracle::{
    oracle_lex_solve, oracle_lex_solve_normalized, OracleSolution, ENUMERATION_BOUND,
};
pub use problem::{
    BoundSense, Hierarchy, NormalizedHierarchy, NormalizedLevel, RowId, RowKind, RowOrigin,
    TaskLevel,
};
pub use random::{random_hierarchy, RandomHierarchyConfig};
pub use solver::{
    active_search, active_search_normalized, ewhqp_dual, ewhqp_dual_all, ewhqp_primal,
    ewhqp_primal_levels, ActiveSearchState, PrimalSolution, SearchOptions,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WhqpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("level {}: invalid weight ({reason})", level + 1)]
    InvalidWeight { level: usize, reason: String },
    #[error("level {}: inequality row {row} is coupled to other rows through W", level + 1)]
    CoupledInequalityWeight { level: usize, row: usize },
    #[error("level {}: range row {row} needs lower < upper", level + 1)]
    InvalidBounds { level: usize, row: usize },
    #[error("invalid active set: {0}")]
    InvalidActiveSet(String),
    #[error("invalid level index {0}")]
    InvalidLevel(usize),
    #[error("active search revisited an active set at level {}", level + 1)]
    CycleDetected { level: usize },
    #[error("active search exceeded {0} iterations")]
    IterationLimitExceeded(usize),
    #[error("{rows} inequality rows exceed the enumeration bound of {bound}")]
    EnumerationBoundExceeded { rows: usize, bound: usize },
    #[error("no feasible candidate found")]
    OracleInfeasible,
    #[error(transparent)]
    Decomp(#[from] DecompError),
    #[error(transparent)]
    Wmpi(#[from] WmpiError),
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use nalgebra::{dmatrix, dvector, DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn single(a: DMatrix<f64>, b: DVector<f64>, sense: Vec<BoundSense<f64>>) -> TaskLevel<f64> {
        TaskLevel::unit_weight(a, b, sense)
    }

    #[test]
    fn single_equality_level_is_weighted_right_inverse() {
        let a = dmatrix![1.0, 2.0, 0.0; 0.0, 1.0, -1.0];
        let b = dvector![1.0, 2.0];
        let w = dmatrix![2.0, 0.5; 0.5, 1.0];
        let h = Hierarchy {
            n: 3,
            levels: vec![TaskLevel::equality(a.clone(), b.clone(), w)],
        };
        let state = active_search(&h, &SearchOptions::default()).unwrap();
        let reference = a.clone().pseudo_inverse(1e-12).unwrap() * &b;
        assert!((&state.x - reference).norm() < 1e-12);
        assert!(state.objective_vector()[0] < 1e-20);
        assert_eq!(state.iterations, 0);
    }

    #[test]
    fn conflicting_levels_follow_priority() {
        let h = Hierarchy {
            n: 1,
            levels: vec![
                TaskLevel::equality(dmatrix![1.0], dvector![1.0], dmatrix![3.0]),
                TaskLevel::equality(dmatrix![1.0], dvector![0.0], dmatrix![0.1]),
            ],
        };
        let norm = h.normalize().unwrap();
        let active: BTreeSet<_> = norm.equality_ids().collect();
        let p = ewhqp_primal(&norm, &active, &DMatrix::<f64>::identity(1, 1), 1e-9).unwrap();
        assert!((p.x[0] - 1.0).abs() < 1e-15);
        // w = A x − b, so the sacrificed level carries slack +1.
        assert!((p.w[1][0] - 1.0).abs() < 1e-15);
        assert!(p.w[0][0].abs() < 1e-15);
        assert_eq!(p.eta, Some(0));
    }

    #[test]
    fn slack_formula_matches_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = RandomHierarchyConfig {
            max_inequality: 0,
            ..Default::default()
        };
        for _ in 0..20 {
            let h = random_hierarchy(&mut rng, &cfg);
            let norm = h.normalize().unwrap();
            let active: BTreeSet<_> = norm.equality_ids().collect();
            let p = ewhqp_primal(&norm, &active, &DMatrix::identity(h.n, h.n), 1e-9).unwrap();
            for k in 0..h.levels.len() {
                let direct = &norm.levels[k].a * &p.x - &norm.levels[k].b;
                assert!((direct - &p.w[k]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn dual_zero_when_slack_zero() {
        let h = Hierarchy {
            n: 2,
            levels: vec![
                single(dmatrix![1.0, 0.0], dvector![1.0], vec![BoundSense::Lower]),
                single(
                    dmatrix![0.0, 1.0],
                    dvector![2.0],
                    vec![BoundSense::Equality],
                ),
            ],
        };
        let norm = h.normalize().unwrap();
        let active: BTreeSet<_> = norm.row_ids().collect();
        let p = ewhqp_primal(&norm, &active, &DMatrix::identity(2, 2), 1e-9).unwrap();
        let mu = ewhqp_dual_all(&norm, &p, 1).unwrap();
        assert!(mu.values().all(|m| m.abs() < 1e-14));
    }

    #[test]
    fn lower_bound_pushed_from_below_is_needed() {
        // x ≥ 1 at level 1 against x = 0 at level 2.
        let h = Hierarchy {
            n: 1,
            levels: vec![
                single(dmatrix![1.0], dvector![1.0], vec![BoundSense::Lower]),
                single(dmatrix![1.0], dvector![0.0], vec![BoundSense::Equality]),
            ],
        };
        let norm = h.normalize().unwrap();
        let active: BTreeSet<_> = norm.row_ids().collect();
        let p = ewhqp_primal(&norm, &active, &DMatrix::identity(1, 1), 1e-9).unwrap();
        let mu = ewhqp_dual_all(&norm, &p, 1).unwrap();
        assert!(mu[&RowId { level: 0, row: 0 }] > 0.0);
        // Stationarity: a₁ μ₁ + a₂ μ₂ = 0.
        let total = mu[&RowId { level: 0, row: 0 }] + mu[&RowId { level: 1, row: 0 }];
        assert!(total.abs() < 1e-14);

        let state = active_search(&h, &SearchOptions::default()).unwrap();
        assert!((state.x[0] - 1.0).abs() < 1e-12);
        assert!(state.locked.contains(&RowId { level: 0, row: 0 }));
    }

    #[test]
    fn violated_start_is_activated() {
        let h = Hierarchy {
            n: 2,
            levels: vec![
                single(dmatrix![1.0, 0.0], dvector![1.0], vec![BoundSense::Lower]),
                TaskLevel::equality(
                    DMatrix::identity(2, 2),
                    dvector![0.0, 0.0],
                    DMatrix::identity(2, 2),
                ),
            ],
        };
        let state = active_search(&h, &SearchOptions::default()).unwrap();
        assert!((&state.x - dvector![1.0, 0.0]).norm() < 1e-12);
        assert!(state.active.contains(&RowId { level: 0, row: 0 }));
        let oracle = oracle_lex_solve(&h).unwrap();
        assert!((oracle.objective[1] - 0.5).abs() < 1e-12);
        assert!((state.objective_vector()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_bounds_compromise() {
        let h = Hierarchy {
            n: 1,
            levels: vec![single(
                dmatrix![1.0; 1.0],
                dvector![1.0, 0.0],
                vec![BoundSense::Lower, BoundSense::Upper],
            )],
        };
        let oracle = oracle_lex_solve(&h).unwrap();
        assert!((oracle.x[0] - 0.5).abs() < 1e-12);
        assert!((oracle.objective[0] - 0.25).abs() < 1e-12);
        let state = active_search(&h, &SearchOptions::default()).unwrap();
        assert!((state.x[0] - 0.5).abs() < 1e-12);
        assert!((state.objective_vector()[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn range_rows_are_split() {
        let h = Hierarchy {
            n: 1,
            levels: vec![TaskLevel {
                a: dmatrix![2.0],
                b: dvector![-1.0],
                sense: vec![BoundSense::Range { upper: 3.0 }],
                w: dmatrix![4.0],
                blocks: vec![1],
            }],
        };
        let norm = h.normalize().unwrap();
        let level = &norm.levels[0];
        assert_eq!(level.a, dmatrix![2.0; -2.0]);
        assert_eq!(level.b, dvector![-1.0, -3.0]);
        assert_eq!(level.w, dmatrix![4.0, 0.0; 0.0, 4.0]);
        assert_eq!(
            level.origin,
            vec![RowOrigin::RangeLower(0), RowOrigin::RangeUpper(0)]
        );
    }

    #[test]
    fn validation_errors() {
        let coupled = Hierarchy {
            n: 1,
            levels: vec![TaskLevel {
                a: dmatrix![1.0; 1.0],
                b: dvector![0.0, 0.0],
                sense: vec![BoundSense::Lower, BoundSense::Equality],
                w: dmatrix![1.0, 0.1; 0.1, 1.0],
                blocks: vec![2],
            }],
        };
        assert!(matches!(
            coupled.normalize(),
            Err(WhqpError::CoupledInequalityWeight { level: 0, row: 0 })
        ));
        let bad_blocks = Hierarchy {
            n: 1,
            levels: vec![TaskLevel {
                a: dmatrix![1.0; 1.0],
                b: dvector![0.0, 0.0],
                sense: vec![BoundSense::Equality; 2],
                w: dmatrix![1.0, 0.1; 0.1, 1.0],
                blocks: vec![1, 1],
            }],
        };
        assert!(matches!(
            bad_blocks.normalize(),
            Err(WhqpError::InvalidWeight { .. })
        ));
        let bad_range = Hierarchy {
            n: 1,
            levels: vec![single(
                dmatrix![1.0],
                dvector![1.0],
                vec![BoundSense::Range { upper: 0.0 }],
            )],
        };
        assert!(matches!(
            bad_range.normalize(),
            Err(WhqpError::InvalidBounds { .. })
        ));
    }

    #[test]
    fn oracle_enumeration_bound() {
        let m = 13;
        let h = Hierarchy {
            n: 1,
            levels: vec![single(
                DMatrix::from_element(m, 1, 1.0),
                DVector::zeros(m),
                vec![BoundSense::Lower; m],
            )],
        };
        assert!(matches!(
            oracle_lex_solve(&h),
            Err(WhqpError::EnumerationBoundExceeded {
                rows: 13,
                bound: 12
            })
        ));
    }

    #[test]
    fn active_search_matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cfg = RandomHierarchyConfig::default();
        for i in 0..200 {
            let h = random_hierarchy(&mut rng, &cfg);
            let state = active_search(&h, &SearchOptions::default())
                .unwrap_or_else(|e| panic!("instance {i}: {e}"));
            let oracle = oracle_lex_solve(&h).unwrap();
            for (k, (a, b)) in state
                .objective_vector()
                .iter()
                .zip(&oracle.objective)
                .enumerate()
            {
                assert!(
                    (a - b).abs() <= 1e-8 * b.abs().max(1.0),
                    "instance {i} level {k}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let h = random_hierarchy(&mut rng, &RandomHierarchyConfig::default());
            let cold = active_search(&h, &SearchOptions::default()).unwrap();
            let warm = active_search(
                &h,
                &SearchOptions {
                    warm_start: Some(cold.active.clone()),
                    ..Default::default()
                },
            )
            .unwrap();
            for (a, b) in cold.objective_vector().iter().zip(warm.objective_vector()) {
                assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn problem_text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_hierarchy(&mut rng, &RandomHierarchyConfig::default());
        let parsed = parse_problem(&write_problem(&h)).unwrap();
        assert_eq!(parsed, h);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "n 2\nlevel\nrow eq 1 0\n";
        let e = parse_problem(text).unwrap_err();
        assert_eq!(e.line, 3);
        let text = "n 1\nlevel\nrow gt 1 0\n";
        assert_eq!(parse_problem(text).unwrap_err().line, 3);
        assert_eq!(parse_problem("level\n").unwrap_err().line, 1);
    }

    #[test]
    fn parse_diag_and_blocks() {
        let text = "n 1\nlevel\nW diag 2 3\nrow ge 1 1\nrow le 1 0\n\nlevel\nrow eq 1 0.25\n";
        let h = parse_problem(text).unwrap();
        assert_eq!(h.levels.len(), 2);
        assert_eq!(h.levels[0].blocks, vec![1, 1]);
        assert_eq!(h.levels[0].w, dmatrix![2.0, 0.0; 0.0, 3.0]);
        assert_eq!(h.levels[1].sense, vec![BoundSense::Equality]);
    }
}
