//! Weighted Moore–Penrose inverse and the dynamically consistent projected stack.
//!
//! The projected stack never forms projectors in its recursion. It carries an
//! `M`-orthonormal nullspace basis `Z_k` instead, with `Z_0 = R_0⁻¹` and
//! `Z_k = Z_{k-1} Ztilde_k`, where `Ztilde_k` comes from the compact COD of the
//! projected and weight-scaled level `R_k A_k Z_{k-1}`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::decomp::{cholesky, compact_cod, CholeskyFactor, CompactCod, DecompError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WmpiError {
    #[error(transparent)]
    Decomp(#[from] DecompError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("level index {index} out of range (stack has {levels} levels)")]
    IndexOutOfRange { index: usize, levels: usize },
}

/// Task-space metric `W1` and configuration-space metric `W0`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightPair<T: Scalar> {
    pub w1: DMatrix<T>,
    pub w0: DMatrix<T>,
}

/// Weighted Moore–Penrose inverse of `A`.
///
/// Computed as `R0⁻¹ Â⁺ R1` with `Â = R1 A R0⁻¹`, where `W1 = R1ᵀR1` and
/// `W0 = R0ᵀR0` are Cholesky factorizations and `Â⁺` is the ordinary
/// pseudoinverse obtained from the compact COD.
pub fn wmpi<T: Scalar>(
    a: &DMatrix<T>,
    weights: &WeightPair<T>,
    rank_tol: T,
) -> Result<DMatrix<T>, WmpiError> {
    let (m, n) = a.shape();
    if weights.w1.shape() != (m, m) || weights.w0.shape() != (n, n) {
        return Err(WmpiError::DimensionMismatch(format!(
            "A is {m}x{n}, W1 is {}x{}, W0 is {}x{}",
            weights.w1.nrows(),
            weights.w1.ncols(),
            weights.w0.nrows(),
            weights.w0.ncols()
        )));
    }
    let r1 = cholesky(&weights.w1)?;
    let r0 = cholesky(&weights.w0)?;
    // Â = R1 A R0⁻¹ = (R0⁻ᵀ (R1 A)ᵀ)ᵀ
    let r1a = r1.r() * a;
    let ahat = r0.solve_rt(&r1a.transpose()).transpose();
    let cod = compact_cod(&ahat, rank_tol);
    Ok(r0.solve_r(&(cod.pinv() * r1.r())))
}

/// Factors of one level of the projected stack.
#[derive(Debug, Clone, PartialEq)]
pub struct StackLevelFactors<T: Scalar> {
    pub level_index: usize,
    /// `n x d_{k-1}` nullspace basis of the higher levels, `M`-orthonormal.
    pub zprev: DMatrix<T>,
    /// Compact COD of `R_k A_k Z_{k-1}`.
    pub cod: CompactCod<T>,
    /// The projected weighted inverse `Ā_k⁺ = Z_{k-1} Y_k L_k⁻¹ U_kᵀ R_k`.
    pub pinv: DMatrix<T>,
    pub weight_factor: CholeskyFactor<T>,
    pub a: DMatrix<T>,
}

impl<T: Scalar> StackLevelFactors<T> {
    pub fn rank(&self) -> usize {
        self.cod.rank
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// Columns `Z_{k-1} Y_k` contributed by this level to the task basis.
    pub fn basis(&self) -> DMatrix<T> {
        &self.zprev * &self.cod.y
    }

    /// `Z_k = Z_{k-1} Ztilde_k`.
    pub fn znext(&self) -> DMatrix<T> {
        &self.zprev * &self.cod.ztilde
    }
}

/// Result of the projected-stack recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedStack<T: Scalar> {
    pub levels: Vec<StackLevelFactors<T>>,
    /// Basis of what remains after all levels.
    pub zfinal: DMatrix<T>,
    pub metric: DMatrix<T>,
    pub metric_factor: CholeskyFactor<T>,
    /// `R_0⁻¹`.
    pub z0: DMatrix<T>,
}

impl<T: Scalar> ProjectedStack<T> {
    pub fn dim(&self) -> usize {
        self.metric.nrows()
    }

    /// Nullspace basis after `k` levels; `z(0) = R_0⁻¹`.
    pub fn z(&self, k: usize) -> Result<&DMatrix<T>, WmpiError> {
        let levels = self.levels.len();
        match k {
            0 => Ok(&self.z0),
            k if k < levels => Ok(&self.levels[k].zprev),
            k if k == levels => Ok(&self.zfinal),
            index => Err(WmpiError::IndexOutOfRange { index, levels }),
        }
    }

    /// Horizontal concatenation of the per-level weighted inverses.
    pub fn stacked_pinv(&self) -> DMatrix<T> {
        let cols: usize = self.levels.iter().map(|l| l.rows()).sum();
        let mut out = DMatrix::zeros(self.dim(), cols);
        let mut c = 0;
        for level in &self.levels {
            out.columns_mut(c, level.rows()).copy_from(&level.pinv);
            c += level.rows();
        }
        out
    }
}

/// Builds the projected stack for levels `(A_k, W_k)` under the metric `M`.
pub fn build_projected_stack<T: Scalar>(
    levels: &[(DMatrix<T>, DMatrix<T>)],
    m: &DMatrix<T>,
    rank_tol: T,
) -> Result<ProjectedStack<T>, WmpiError> {
    let factored = levels
        .iter()
        .map(|(a, w)| Ok((a.clone(), cholesky(w)?)))
        .collect::<Result<Vec<_>, WmpiError>>()?;
    build_projected_stack_factored(factored, m, rank_tol)
}

/// Same as [`build_projected_stack`] with the level weights already factored.
pub fn build_projected_stack_factored<T: Scalar>(
    levels: Vec<(DMatrix<T>, CholeskyFactor<T>)>,
    m: &DMatrix<T>,
    rank_tol: T,
) -> Result<ProjectedStack<T>, WmpiError> {
    let n = m.nrows();
    let metric_factor = cholesky(m)?;
    let z0 = metric_factor.inverse();
    let mut z = z0.clone();
    let mut out = Vec::with_capacity(levels.len());
    for (k, (a, rk)) in levels.into_iter().enumerate() {
        if a.ncols() != n || rk.dim() != a.nrows() {
            return Err(WmpiError::DimensionMismatch(format!(
                "level {k}: A is {}x{}, W is {}x{}, expected {n} columns",
                a.nrows(),
                a.ncols(),
                rk.dim(),
                rk.dim()
            )));
        }
        let projected = rk.r() * &a * &z;
        let cod = compact_cod(&projected, rank_tol);
        let pinv = &z * &cod.y * cod.solve_l(&(cod.u.transpose() * rk.r()));
        let level = StackLevelFactors {
            level_index: k,
            zprev: z,
            cod,
            pinv,
            weight_factor: rk,
            a,
        };
        z = level.znext();
        out.push(level);
    }
    Ok(ProjectedStack {
        levels: out,
        zfinal: z,
        metric: m.clone(),
        metric_factor,
        z0,
    })
}

/// Dense projector `P_k = Z_k Z_kᵀ M`, with `P_0 = E` exactly.
///
/// Intended for verification; the recursion itself never needs it.
pub fn projector<T: Scalar>(stack: &ProjectedStack<T>, k: usize) -> Result<DMatrix<T>, WmpiError> {
    if k == 0 {
        return Ok(DMatrix::identity(stack.dim(), stack.dim()));
    }
    let z = stack.z(k)?;
    Ok(z * z.transpose() * &stack.metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::DEFAULT_RANK_TOL;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = random(rng, n, n);
        a.tr_mul(&a) + DMatrix::identity(n, n) * 0.5
    }

    fn penrose_residuals(a: &DMatrix<f64>, x: &DMatrix<f64>, w: &WeightPair<f64>) -> [f64; 4] {
        let scale = a.norm().max(1.0);
        let w1ax = &w.w1 * a * x;
        let w0xa = &w.w0 * x * a;
        [
            (a * x * a - a).norm() / scale,
            (x * a * x - x).norm() / x.norm().max(1.0),
            (w1ax.transpose() - &w1ax).norm() / w1ax.norm().max(1.0),
            (w0xa.transpose() - &w0xa).norm() / w0xa.norm().max(1.0),
        ]
    }

    #[test]
    fn invertible_matrix_gives_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 4, 4) + DMatrix::identity(4, 4) * 3.0;
        let w = WeightPair {
            w1: spd(&mut rng, 4),
            w0: spd(&mut rng, 4),
        };
        let x = wmpi(&a, &w, DEFAULT_RANK_TOL).unwrap();
        let inv = a.clone().try_inverse().unwrap();
        assert!((x - inv).norm() < 1e-10);
    }

    #[test]
    fn identity_weights_give_classic_pseudoinverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 3, 2) * random(&mut rng, 2, 5);
        let w = WeightPair {
            w1: DMatrix::identity(3, 3),
            w0: DMatrix::identity(5, 5),
        };
        let x = wmpi(&a, &w, DEFAULT_RANK_TOL).unwrap();
        let reference = a.clone().pseudo_inverse(1e-10).unwrap();
        assert!((x - reference).norm() < 1e-10);
    }

    #[test]
    fn random_rank_two_satisfies_penrose_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, 3, 2) * random(&mut rng, 2, 5);
        let w = WeightPair {
            w1: spd(&mut rng, 3),
            w0: spd(&mut rng, 5),
        };
        let x = wmpi(&a, &w, DEFAULT_RANK_TOL).unwrap();
        for r in penrose_residuals(&a, &x, &w) {
            assert!(r < 1e-9, "{r}");
        }
    }

    #[test]
    fn non_spd_weight_is_rejected() {
        let w = WeightPair {
            w1: DMatrix::from_element(1, 1, -1.0),
            w0: DMatrix::identity(2, 2),
        };
        let err = wmpi(&DMatrix::from_element(1, 2, 1.0), &w, DEFAULT_RANK_TOL).unwrap_err();
        assert!(matches!(
            err,
            WmpiError::Decomp(DecompError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn single_level_is_right_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, 2, 4);
        let stack = build_projected_stack(
            &[(a.clone(), DMatrix::identity(2, 2))],
            &DMatrix::identity(4, 4),
            DEFAULT_RANK_TOL,
        )
        .unwrap();
        let right = a.transpose() * (&a * a.transpose()).try_inverse().unwrap();
        assert!((&stack.levels[0].pinv - right).norm() < 1e-12);
    }

    #[test]
    fn repeated_level_is_shadowed() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random(&mut rng, 2, 4);
        let w = DMatrix::identity(2, 2);
        let m = spd(&mut rng, 4);
        let stack = build_projected_stack(
            &[(a.clone(), w.clone()), (a.clone(), w)],
            &m,
            DEFAULT_RANK_TOL,
        )
        .unwrap();
        assert_eq!(stack.levels[1].rank(), 0);
        let projected = &a * projector(&stack, 1).unwrap();
        assert!(projected.norm() < 1e-10);
        assert_eq!(stack.z(2).unwrap().ncols(), 2);
    }

    #[test]
    fn projectors_are_nested_idempotent_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 6;
        let m = spd(&mut rng, n);
        let levels: Vec<_> = [2usize, 3, 2]
            .iter()
            .map(|&mk| (random(&mut rng, mk, n), spd(&mut rng, mk)))
            .collect();
        let stack = build_projected_stack(&levels, &m, DEFAULT_RANK_TOL).unwrap();
        let p: Vec<_> = (0..=3).map(|k| projector(&stack, k).unwrap()).collect();
        for k in 0..=3 {
            assert!((&p[k] * &p[k] - &p[k]).norm() < 1e-9);
            assert!((p[k].transpose() * &m - &m * &p[k]).norm() < 1e-9 * m.norm());
            for j in 0..k {
                assert!((&p[k] * &p[j] - &p[k]).norm() < 1e-9);
                assert!((&p[j] * &p[k] - &p[k]).norm() < 1e-9);
            }
        }
        for (k, level) in stack.levels.iter().enumerate() {
            for (a, _) in levels.iter().take(k) {
                assert!((a * &level.pinv).norm() < 1e-9 * a.norm());
            }
            let zt_m_z = level.zprev.transpose() * &m * &level.zprev;
            assert!(
                (zt_m_z - DMatrix::identity(level.zprev.ncols(), level.zprev.ncols())).norm()
                    < 1e-10
            );
        }
        // 7 rows on 6 DoFs: nothing is left.
        assert_eq!(stack.zfinal.ncols(), 0);
        assert!(p[3].norm() < 1e-12);
    }

    #[test]
    fn out_of_range_level() {
        let stack =
            build_projected_stack::<f64>(&[], &DMatrix::identity(2, 2), DEFAULT_RANK_TOL).unwrap();
        assert!(projector(&stack, 0).is_ok());
        assert!(matches!(
            projector(&stack, 2),
            Err(WmpiError::IndexOutOfRange {
                index: 2,
                levels: 0
            })
        ));
    }

    #[test]
    fn empty_level_is_no_op() {
        let m = DMatrix::identity(3, 3) * 2.0;
        let stack = build_projected_stack(
            &[(DMatrix::zeros(0, 3), DMatrix::zeros(0, 0))],
            &m,
            DEFAULT_RANK_TOL,
        )
        .unwrap();
        assert_eq!(stack.levels[0].rank(), 0);
        assert_eq!(stack.zfinal, stack.z0);
    }
}
