//! Brute-force lexicographic solver used to cross-check the active search.
//!
//! Each level is a convex piecewise-quadratic program over the optimal set of
//! the levels above it. The oracle assigns every inequality row of the level
//! one of three roles (penalized as an equality, held tight, or free) and holds
//! every subset of the inherited `≥` rows tight. Each resulting equality
//! constrained least squares problem is solved for its minimum-norm solution,
//! and the feasible candidate with the smallest true objective wins. Some
//! optimal point has a maximal tight set, and the minimum-norm point of its
//! optimal face cannot cross a further row without contradicting that
//! maximality, so the enumeration always contains an optimum.
//!
//! The optimal slack of a level is unique, so afterwards equality rows and
//! violated rows are pinned to their values and the satisfied inequality rows
//! become `≥` constraints.

use nalgebra::{DMatrix, DVector};

use super::problem::{Hierarchy, NormalizedHierarchy, RowKind};
use super::WhqpError;
use crate::decomp::cholesky;

/// Largest number of normalized inequality rows the oracle will enumerate.
pub const ENUMERATION_BOUND: usize = 12;

/// Relative eigenvalue floor of `aᵀa`, i.e. a singular value floor near 1e-7.
const EIG_TOL: f64 = 1e-14;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub objective: Vec<f64>,
    pub x: DVector<f64>,
    /// Per normalized row: true when its value `a x` is fixed by the optimum
    /// (equality rows and violated inequality rows).
    pub pinned: Vec<Vec<bool>>,
}

pub fn oracle_lex_solve(hierarchy: &Hierarchy<f64>) -> Result<OracleSolution, WhqpError> {
    oracle_lex_solve_normalized(&hierarchy.normalize()?)
}

/// Minimum-norm pseudo-solution of `a x = b`, and an orthonormal basis of the kernel of `a`.
///
/// The row space comes from the eigenvectors of `aᵀa`; the coordinates within
/// it solve a full-column-rank least squares problem by Householder QR. The
/// default nalgebra SVD can stop iterating early on exactly rank-deficient
/// inputs, which is why it is avoided here.
fn min_norm_with_kernel(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    n: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    if a.nrows() == 0 {
        return (DVector::zeros(n), DMatrix::identity(n, n));
    }
    let eig = a.tr_mul(a).symmetric_eigen();
    let lmax = eig.eigenvalues.max().max(1.0);
    let (range, kernel): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| eig.eigenvalues[i] > EIG_TOL * lmax);
    let basis = |idx: &[usize]| {
        if idx.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(
                &idx.iter()
                    .map(|&i| eig.eigenvectors.column(i).into_owned())
                    .collect::<Vec<_>>(),
            )
        }
    };
    let vr = basis(&range);
    let kernel = basis(&kernel);
    if range.is_empty() {
        return (DVector::zeros(n), kernel);
    }
    let m = a * &vr;
    let qr = m.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let solve = |rhs: &DVector<f64>| {
        let y = r
            .solve_upper_triangular(&q.tr_mul(rhs))
            .expect("full column rank by construction");
        &vr * y
    };
    // One refinement step recovers digits lost to cancellation.
    let mut x = solve(b);
    let residual = b - a * &x;
    x += solve(&residual);
    (x, kernel)
}

fn stack_rows(rows: &[(DVector<f64>, f64)], n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
    let b = DVector::from_fn(rows.len(), |i, _| rows[i].1);
    (a, b)
}

pub fn oracle_lex_solve_normalized(
    hierarchy: &NormalizedHierarchy<f64>,
) -> Result<OracleSolution, WhqpError> {
    let count = hierarchy.inequality_rows();
    if count > ENUMERATION_BOUND {
        return Err(WhqpError::EnumerationBoundExceeded {
            rows: count,
            bound: ENUMERATION_BOUND,
        });
    }
    let n = hierarchy.n;
    let mut fixed: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut lower: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut objective = Vec::with_capacity(hierarchy.levels.len());
    let mut pinned = Vec::with_capacity(hierarchy.levels.len());
    let mut x_best = DVector::zeros(n);

    for level in &hierarchy.levels {
        let m = level.rows();
        let eq_rows: Vec<usize> = (0..m).filter(|&i| level.kind[i] == RowKind::Eq).collect();
        let ge_rows: Vec<usize> = (0..m).filter(|&i| level.kind[i] == RowKind::Ge).collect();
        let mut best: Option<(f64, DVector<f64>)> = None;

        // Each inequality row of the level is penalized (0), held tight (1) or free (2).
        let patterns = 3u32.pow(ge_rows.len() as u32);
        for pattern in 0..patterns {
            let mut p: Vec<usize> = eq_rows.clone();
            let mut tight: Vec<(DVector<f64>, f64)> = Vec::new();
            let mut code = pattern;
            for &r in &ge_rows {
                match code % 3 {
                    0 => p.push(r),
                    1 => tight.push((level.a.row(r).transpose(), level.b[r])),
                    _ => {}
                }
                code /= 3;
            }
            p.sort_unstable();
            let w = DMatrix::from_fn(p.len(), p.len(), |i, j| level.w[(p[i], p[j])]);
            let r = cholesky(&w)?;
            let ra = r.r() * DMatrix::from_fn(p.len(), n, |i, j| level.a[(p[i], j)]);
            let rb = r.r() * DVector::from_fn(p.len(), |i, _| level.b[p[i]]);

            for t_mask in 0u32..(1 << lower.len()) {
                let mut cons = fixed.clone();
                cons.extend(tight.iter().cloned());
                cons.extend(
                    lower
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| t_mask & (1 << i) != 0)
                        .map(|(_, row)| row.clone()),
                );
                let (c, d) = stack_rows(&cons, n);
                let (x0, kernel) = min_norm_with_kernel(&c, &d, n);
                let consistent = cons
                    .iter()
                    .all(|(a, v)| (a.dot(&x0) - v).abs() <= FEAS_TOL * (1.0 + v.abs()));
                if !consistent {
                    continue;
                }
                let x = if kernel.ncols() > 0 && !p.is_empty() {
                    let reduced = &ra * &kernel;
                    let rhs = &rb - &ra * &x0;
                    let (y, _) = min_norm_with_kernel(&reduced, &rhs, kernel.ncols());
                    &x0 + &kernel * y
                } else {
                    x0.clone()
                };
                let feasible = lower
                    .iter()
                    .all(|(a, b)| a.dot(&x) >= b - FEAS_TOL * (1.0 + b.abs()));
                if !feasible {
                    continue;
                }
                let f = level.objective(&x);
                if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
                    best = Some((f, x));
                }
            }
        }

        let (f, x) = best.ok_or(WhqpError::OracleInfeasible)?;
        let mut level_pinned = vec![false; m];
        for (i, pinned_row) in level_pinned.iter_mut().enumerate() {
            let a = level.a.row(i).transpose();
            let value = a.dot(&x);
            let b = level.b[i];
            match level.kind[i] {
                RowKind::Eq => {
                    fixed.push((a, value));
                    *pinned_row = true;
                }
                RowKind::Ge if value < b - FEAS_TOL * (1.0 + b.abs()) => {
                    fixed.push((a, value));
                    *pinned_row = true;
                }
                RowKind::Ge => lower.push((a, b)),
            }
        }
        objective.push(f);
        pinned.push(level_pinned);
        x_best = x;
    }

    Ok(OracleSolution {
        objective,
        x: x_best,
        pinned,
    })
}
