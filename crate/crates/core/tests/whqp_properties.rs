use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whqp::decomp::cholesky;
use whqp::whqp::{
    active_search, ewhqp_dual_all, ewhqp_primal, oracle_lex_solve, random_hierarchy, BoundSense,
    Hierarchy, RandomHierarchyConfig, RowKind, SearchOptions, TaskLevel,
};

const RANK_TOL: f64 = 1e-9;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn stationarity_residual_is_tiny() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = RandomHierarchyConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let h = random_hierarchy(&mut rng, &cfg);
        let state = active_search(&h, &SearchOptions::default()).unwrap();
        let norm = &state.hierarchy;
        let primal =
            ewhqp_primal(norm, &state.active, &DMatrix::identity(h.n, h.n), RANK_TOL).unwrap();
        for level in 0..primal.depth() {
            let mu = ewhqp_dual_all(norm, &primal, level).unwrap();
            let mut sum = DVector::zeros(h.n);
            for (id, m) in &mu {
                sum += norm.levels[id.level].a.row(id.row).transpose() * *m;
            }
            worst = worst.max(sum.norm());
        }
    }
    assert!(worst < 1e-9, "worst stationarity residual {worst:e}");
}

#[test]
fn rank_deficient_middle_level_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = 4;
        let random = |rng: &mut ChaCha8Rng, m: usize| {
            DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0))
        };
        let top = random(&mut rng, 2);
        // Third row is a combination of the first two.
        let mut middle = random(&mut rng, 3);
        let combo = middle.row(0) * 0.7 - middle.row(1) * 1.3;
        middle.set_row(2, &combo);
        let bottom = random(&mut rng, 2);
        let spd = |rng: &mut ChaCha8Rng, m: usize| {
            let g = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
            g.tr_mul(&g) + DMatrix::identity(m, m) * 0.5
        };
        let b =
            |rng: &mut ChaCha8Rng, m: usize| DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let h = Hierarchy {
            n,
            levels: vec![
                TaskLevel::equality(top, b(&mut rng, 2), spd(&mut rng, 2)),
                TaskLevel::equality(middle, b(&mut rng, 3), spd(&mut rng, 3)),
                TaskLevel::equality(bottom, b(&mut rng, 2), spd(&mut rng, 2)),
            ],
        };
        let norm = h.normalize().unwrap();
        let active: BTreeSet<_> = norm.equality_ids().collect();
        let primal = ewhqp_primal(&norm, &active, &DMatrix::identity(n, n), RANK_TOL).unwrap();
        let oracle = oracle_lex_solve(&h).unwrap();
        for (a, b) in norm
            .objective_vector(&primal.x)
            .iter()
            .zip(&oracle.objective)
        {
            assert!(rel_close(*a, *b, 1e-8), "{a} vs {b}");
        }
    }
}

#[test]
fn identity_weights_match_unweighted_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = RandomHierarchyConfig {
        weighted: false,
        ..Default::default()
    };
    for i in 0..300 {
        let h = random_hierarchy(&mut rng, &cfg);
        assert!(h
            .levels
            .iter()
            .all(|l| l.w == DMatrix::identity(l.rows(), l.rows())));
        let state = active_search(&h, &SearchOptions::default()).unwrap();
        let oracle = oracle_lex_solve(&h).unwrap();
        for (a, b) in state.objective_vector().iter().zip(&oracle.objective) {
            assert!(rel_close(*a, *b, 1e-8), "instance {i}: {a} vs {b}");
        }
    }
}

/// Values `a x` of the rows the oracle pins, which every optimum shares.
fn pinned_values(h: &Hierarchy<f64>, x: &DVector<f64>) -> Vec<(usize, usize, f64)> {
    let norm = h.normalize().unwrap();
    let oracle = oracle_lex_solve(h).unwrap();
    let mut out = Vec::new();
    for (k, level) in norm.levels.iter().enumerate() {
        for i in 0..level.rows() {
            if oracle.pinned[k][i] {
                out.push((k, i, level.a.row(i).dot(&x.transpose())));
            }
        }
    }
    out
}

#[test]
fn scaling_a_level_weight_keeps_the_optimal_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let cfg = RandomHierarchyConfig::default();
    for i in 0..200 {
        let h = random_hierarchy(&mut rng, &cfg);
        let factors: Vec<f64> = h.levels.iter().map(|_| rng.gen_range(0.1..10.0)).collect();
        let mut scaled = h.clone();
        for (level, c) in scaled.levels.iter_mut().zip(&factors) {
            level.w *= *c;
        }
        let base = active_search(&h, &SearchOptions::default()).unwrap();
        let other = active_search(&scaled, &SearchOptions::default()).unwrap();
        for ((a, b), c) in base
            .objective_vector()
            .iter()
            .zip(other.objective_vector())
            .zip(&factors)
        {
            assert!(rel_close(a * c, b, 1e-8), "instance {i}: {a}·{c} vs {b}");
        }
        // Pinned rows of the unscaled problem keep their values.
        let norm = scaled.normalize().unwrap();
        for (k, r, value) in pinned_values(&h, &base.x) {
            let other_value = norm.levels[k].a.row(r).dot(&other.x.transpose());
            assert!(
                rel_close(value, other_value, 1e-8),
                "instance {i} row ({k},{r})"
            );
        }
    }
}

#[test]
fn appending_a_level_keeps_satisfied_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = RandomHierarchyConfig::default();
    let mut checked = 0;
    for i in 0..300 {
        let h = random_hierarchy(&mut rng, &cfg);
        let base = active_search(&h, &SearchOptions::default()).unwrap();
        let mut extended = h.clone();
        let m = rng.gen_range(1..=h.n);
        extended.levels.push(TaskLevel::unit_weight(
            DMatrix::from_fn(m, h.n, |_, _| rng.gen_range(-1.0..1.0)),
            DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0)),
            vec![BoundSense::Equality; m],
        ));
        let more = active_search(&extended, &SearchOptions::default()).unwrap();
        let norm = &base.hierarchy;
        for (k, objective) in base.objective_vector().iter().enumerate() {
            if *objective > 1e-20 {
                continue;
            }
            checked += 1;
            let level = &norm.levels[k];
            for r in 0..level.rows() {
                let before = level.a.row(r).dot(&base.x.transpose());
                let after = level.a.row(r).dot(&more.x.transpose());
                match level.kind[r] {
                    RowKind::Eq => assert!((before - after).abs() < 1e-9, "instance {i} ({k},{r})"),
                    RowKind::Ge => {
                        assert!(
                            after >= level.b[r] - 1e-9 * (1.0 + level.b[r].abs()),
                            "instance {i} ({k},{r})"
                        )
                    }
                }
            }
        }
    }
    assert!(checked > 100);
}

/// The same hierarchy with each level pre-multiplied by its Cholesky factor and unit weights.
fn prescaled(h: &Hierarchy<f64>) -> Hierarchy<f64> {
    let mut out = h.clone();
    for level in &mut out.levels {
        let r = cholesky(&level.w).unwrap().r().clone();
        let m = level.rows();
        level.a = &r * &level.a;
        level.b = &r * &level.b;
        for i in 0..m {
            if let BoundSense::Range { upper } = level.sense[i] {
                // Inequality rows have 1×1 weight blocks, so `r` is diagonal there.
                level.sense[i] = BoundSense::Range {
                    upper: r[(i, i)] * upper,
                };
            }
        }
        level.w = DMatrix::identity(m, m);
    }
    out
}

#[test]
fn weighted_quantities_correspond_to_prescaled_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let cfg = RandomHierarchyConfig::default();
    for i in 0..200 {
        let h = random_hierarchy(&mut rng, &cfg);
        let unit = prescaled(&h);
        let weighted = active_search(&h, &SearchOptions::default()).unwrap();
        let scaled = active_search(&unit, &SearchOptions::default()).unwrap();
        assert_eq!(weighted.active, scaled.active, "instance {i}");
        assert!(
            (&weighted.x - &scaled.x).norm() < 1e-9 * (1.0 + weighted.x.norm()),
            "instance {i}"
        );

        let eye = DMatrix::identity(h.n, h.n);
        let pw = ewhqp_primal(&weighted.hierarchy, &weighted.active, &eye, RANK_TOL).unwrap();
        let ps = ewhqp_primal(&scaled.hierarchy, &scaled.active, &eye, RANK_TOL).unwrap();
        let last = pw.depth() - 1;
        let mu_w = ewhqp_dual_all(&weighted.hierarchy, &pw, last).unwrap();
        let mu_s = ewhqp_dual_all(&scaled.hierarchy, &ps, last).unwrap();
        for k in 0..pw.depth() {
            let r = cholesky(&pw.active_w(&weighted.hierarchy, k))
                .unwrap()
                .r()
                .clone();
            assert!(
                (&r * &pw.w[k] - &ps.w[k]).norm() < 1e-9,
                "instance {i} w level {k}"
            );
            assert!(
                (&r * &pw.v[k] - &ps.v[k]).norm() < 1e-9,
                "instance {i} v level {k}"
            );
            let ids: Vec<_> = mu_w.keys().filter(|id| id.level == k).copied().collect();
            let lw = DVector::from_iterator(ids.len(), ids.iter().map(|id| mu_w[id]));
            let ls = DVector::from_iterator(ids.len(), ids.iter().map(|id| mu_s[id]));
            let mapped = r.transpose().solve_lower_triangular(&lw).unwrap();
            assert!((mapped - ls).norm() < 1e-8, "instance {i} λ level {k}");
        }
    }
}
