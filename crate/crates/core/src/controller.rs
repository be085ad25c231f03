//! Hierarchical compliance control in task-momentum coordinates.
//!
//! The active rows of a solved hierarchy define the columns of
//! `F⁻¹ = [Z_{k-1} Y_k]` over every level with a nonzero projected rank. Since
//! each `Z_k` is `M`-orthonormal, `F⁻ᵀ M F⁻¹ = E`, so `F = F⁻ᵀ M` needs no
//! inversion and the momenta `ξ = F q̇` see the identity inertia. `Γ` is the
//! Coriolis matrix in those coordinates; it is skew because `Ṁ = C + Cᵀ`.
//!
//! `d(F⁻¹)/dt` is propagated through the same recursion that builds `F⁻¹`:
//! the Cholesky rate gives `Ż_0`, and each level's COD rate gives `dY_k` and
//! `dZtilde_k`. The product `Z_{k-1} Y_k` does not depend on the gauge chosen
//! for the kernel bases, so the result is the true derivative of `F⁻¹`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::decomp::{cod_rate, DecompError};
use crate::scalar::Scalar;
use crate::whqp::ActiveSearchState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("active ranks sum to {rank}, the transformation needs {n}")]
    SingularTransform { rank: usize, n: usize },
    #[error("block sizes {blocks:?} do not partition {n}")]
    BadPartition { blocks: Vec<usize>, n: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Decomp(#[from] DecompError),
}

/// Transformation data of one level of the active stack.
///
/// Row quantities refer to the level's active normalized rows. Levels with a
/// zero projected rank are kept, with empty bases, so that indices line up
/// with the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTransform<T: Scalar> {
    pub level: usize,
    pub rows: Vec<usize>,
    /// First column of this level in `F⁻¹`.
    pub offset: usize,
    pub rank: usize,
    /// Active rows `A_k` and their rate `Ȧ_k`.
    pub a: DMatrix<T>,
    pub adot: DMatrix<T>,
    /// Upper Cholesky factor `R_k` of the active weight.
    pub r: DMatrix<T>,
    pub u: DMatrix<T>,
    pub l: DMatrix<T>,
    pub du: DMatrix<T>,
    pub dl: DMatrix<T>,
    /// `Z_{k-1}`, the `M`-orthonormal basis left by the levels above.
    pub zprev: DMatrix<T>,
    /// `Z_{k-1} Y_k` and its rate.
    pub basis: DMatrix<T>,
    pub dbasis: DMatrix<T>,
}

impl<T: Scalar> LevelTransform<T> {
    /// `L⁻¹ B`.
    fn solve_l(&self, b: &DVector<T>) -> DVector<T> {
        self.l
            .solve_lower_triangular(b)
            .expect("COD triangular factor has a positive diagonal")
    }
}

/// `F⁻¹`, `F`, their rates and `Γ` at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformState<T: Scalar> {
    pub finv: DMatrix<T>,
    pub f: DMatrix<T>,
    pub dfinv: DMatrix<T>,
    pub gamma: DMatrix<T>,
    /// `ξ = F q̇`.
    pub xi: DVector<T>,
    /// Projected rank of every level with a nonzero rank, in stack order.
    pub blocks: Vec<usize>,
    pub levels: Vec<LevelTransform<T>>,
}

impl<T: Scalar> TransformState<T> {
    pub fn dim(&self) -> usize {
        self.finv.nrows()
    }

    /// `‖F⁻ᵀ M F⁻¹ − E‖_F`.
    pub fn inertia_residual(&self, m: &DMatrix<T>) -> T {
        let n = self.dim();
        (self.finv.tr_mul(&(m * &self.finv)) - DMatrix::identity(n, n)).norm()
    }

    /// `‖Γ + Γᵀ‖_F`.
    pub fn skew_residual(&self) -> T {
        (&self.gamma + self.gamma.transpose()).norm()
    }

    /// Momenta of level `k`'s block of `ξ`.
    pub fn level_xi(&self, k: usize) -> DVector<T> {
        let lt = &self.levels[k];
        self.xi.rows(lt.offset, lt.rank).into_owned()
    }
}

/// Builds the transformation for the active stack of `state`.
///
/// `adot[k]` is the rate of level `k`'s matrix as the user wrote it (before
/// normalization); rows are carried over to the active normalized rows with
/// the same signs as `A`. Weights are taken as constant in time.
pub fn build_transform<T: Scalar>(
    state: &ActiveSearchState<T>,
    m: &DMatrix<T>,
    mdot: &DMatrix<T>,
    c: &DMatrix<T>,
    dq: &DVector<T>,
    adot: &[DMatrix<T>],
) -> Result<TransformState<T>, ControllerError> {
    let n = state.hierarchy.n;
    let stack = &state.factors;
    if m.shape() != (n, n) || mdot.shape() != (n, n) || c.shape() != (n, n) || dq.len() != n {
        return Err(ControllerError::DimensionMismatch(format!(
            "M, Ṁ and C must be {n}x{n} and q̇ must have {n} entries"
        )));
    }
    if adot.len() != stack.levels.len() {
        return Err(ControllerError::DimensionMismatch(format!(
            "{} level rates for {} levels",
            adot.len(),
            stack.levels.len()
        )));
    }
    let rank: usize = stack.levels.iter().map(|l| l.rank()).sum();
    if rank != n {
        return Err(ControllerError::SingularTransform { rank, n });
    }

    // The stack was factored with the search metric; it has to be M here.
    let scale = m.amax().max(T::one());
    if (&stack.metric - m).amax() > T::lit(1e-12) * scale {
        return Err(ControllerError::DimensionMismatch(
            "the active search was not run with M as its metric".into(),
        ));
    }

    let mut finv = DMatrix::zeros(n, n);
    let mut dfinv = DMatrix::zeros(n, n);
    let mut blocks = Vec::new();
    let mut levels = Vec::with_capacity(stack.levels.len());
    // Ż_0 = −R_0⁻¹ Ṙ_0 R_0⁻¹
    let mut dz = -(&stack.z0 * stack.metric_factor.rate_times_inverse(mdot));
    let mut offset = 0;
    for (k, lf) in stack.levels.iter().enumerate() {
        let user = &state.hierarchy.levels[k];
        let rows = state.rows[k].clone();
        let expected = (user_rows(user), n);
        if adot[k].shape() != expected {
            return Err(ControllerError::DimensionMismatch(format!(
                "level {}: rate is {}x{}, expected {}x{}",
                k + 1,
                adot[k].nrows(),
                adot[k].ncols(),
                expected.0,
                expected.1
            )));
        }
        let a_dot = user.map_rows(&adot[k], &rows);
        let r = lf.weight_factor.r().clone();
        let z = &lf.zprev;
        let projected = &r * &lf.a * z;
        let projected_dot = &r * (&a_dot * z + &lf.a * &dz);
        let rates = cod_rate(&projected, &projected_dot, &lf.cod)?;

        let basis = z * &lf.cod.y;
        let dbasis = &dz * &lf.cod.y + z * &rates.dy;
        let rk = lf.rank();
        if rk > 0 {
            finv.columns_mut(offset, rk).copy_from(&basis);
            dfinv.columns_mut(offset, rk).copy_from(&dbasis);
            blocks.push(rk);
        }
        levels.push(LevelTransform {
            level: k,
            rows,
            offset,
            rank: rk,
            a: lf.a.clone(),
            adot: a_dot,
            r,
            u: lf.cod.u.clone(),
            l: lf.cod.l.clone(),
            du: rates.du,
            dl: rates.dl,
            zprev: z.clone(),
            basis,
            dbasis,
        });
        dz = &dz * &lf.cod.ztilde + z * &rates.dztilde;
        offset += rk;
    }

    let f = finv.tr_mul(m);
    let gamma = finv.tr_mul(&(c * &finv + m * &dfinv));
    let xi = &f * dq;
    Ok(TransformState {
        finv,
        f,
        dfinv,
        gamma,
        xi,
        blocks,
        levels,
    })
}

/// Row count of a level as the user wrote it.
fn user_rows<T: Scalar>(level: &crate::whqp::NormalizedLevel<T>) -> usize {
    level
        .origin
        .iter()
        .map(|o| {
            use crate::whqp::RowOrigin::*;
            match *o {
                Direct(r) | Negated(r) | RangeLower(r) | RangeUpper(r) => r + 1,
            }
        })
        .max()
        .unwrap_or(0)
}

/// Splits `Γ` into its block diagonal `Γ_d` and the remainder `Γ_s`.
pub fn split_gamma<T: Scalar>(
    gamma: &DMatrix<T>,
    blocks: &[usize],
) -> Result<(DMatrix<T>, DMatrix<T>), ControllerError> {
    let n = gamma.nrows();
    if gamma.ncols() != n || blocks.iter().sum::<usize>() != n || blocks.contains(&0) {
        return Err(ControllerError::BadPartition {
            blocks: blocks.to_vec(),
            n,
        });
    }
    let mut diag = DMatrix::zeros(n, n);
    let mut start = 0;
    for &size in blocks {
        diag.view_mut((start, start), (size, size))
            .copy_from(&gamma.view((start, start), (size, size)));
        start += size;
    }
    let off = gamma - &diag;
    Ok((diag, off))
}

/// Reference right-hand side of one level, in the user's row order.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelReference<T: Scalar> {
    /// `b = ν_d − K x̃`.
    pub b: DVector<T>,
    pub db: DVector<T>,
}

/// Stacked reference momenta `ξʳ` and their rate.
///
/// Level by level, `ξ_kʳ = L_k⁻¹ U_kᵀ R_k v_k` with `v_k = b_k − A_k x⁽ᵏ⁻¹⁾`
/// and `x⁽ᵏ⁾ = x⁽ᵏ⁻¹⁾ + Z_{k-1} Y_k ξ_kʳ`. The sum `x` is the kinematic
/// solution of the active stack, so `ξʳ = F x`. For the top level `v_1 = b_1`
/// and this is `L_1⁻¹ U_1ᵀ R_1 (ν_d − K x̃)`.
pub fn reference_xi<T: Scalar>(
    transform: &TransformState<T>,
    state: &ActiveSearchState<T>,
    refs: &[LevelReference<T>],
) -> Result<(DVector<T>, DVector<T>), ControllerError> {
    let n = transform.dim();
    if refs.len() != transform.levels.len() {
        return Err(ControllerError::DimensionMismatch(format!(
            "{} references for {} levels",
            refs.len(),
            transform.levels.len()
        )));
    }
    let mut xi_r = DVector::zeros(n);
    let mut dxi_r = DVector::zeros(n);
    let mut x = DVector::zeros(n);
    let mut dx = DVector::zeros(n);
    for (lt, reference) in transform.levels.iter().zip(refs) {
        let user = &state.hierarchy.levels[lt.level];
        let m = user_rows(user);
        if reference.b.len() != m || reference.db.len() != m {
            return Err(ControllerError::DimensionMismatch(format!(
                "level {}: references need {m} entries",
                lt.level + 1
            )));
        }
        if lt.rank == 0 {
            continue;
        }
        let b = user.map_rows(
            &DMatrix::from_column_slice(m, 1, reference.b.as_slice()),
            &lt.rows,
        );
        let db = user.map_rows(
            &DMatrix::from_column_slice(m, 1, reference.db.as_slice()),
            &lt.rows,
        );
        let v = b.column(0) - &lt.a * &x;
        let dv = db.column(0) - &lt.adot * &x - &lt.a * &dx;
        let rv = &lt.r * &v;
        let urv = lt.u.tr_mul(&rv);
        let xi_k = lt.solve_l(&urv);
        // d(L⁻¹ Uᵀ R v) = L⁻¹ (U̇ᵀ R v + Uᵀ R v̇ − L̇ L⁻¹ Uᵀ R v)
        let rhs = lt.du.tr_mul(&rv) + lt.u.tr_mul(&(&lt.r * &dv)) - &lt.dl * &xi_k;
        let dxi_k = lt.solve_l(&rhs);
        x += &lt.basis * &xi_k;
        dx += &lt.dbasis * &xi_k + &lt.basis * &dxi_k;
        xi_r.rows_mut(lt.offset, lt.rank).copy_from(&xi_k);
        dxi_r.rows_mut(lt.offset, lt.rank).copy_from(&dxi_k);
    }
    Ok((xi_r, dxi_r))
}

/// Damping in momentum coordinates, `D_k = U_kᵀ D̄_k U_k` on every block.
///
/// `dbar[k]` is level `k`'s damping source in the user's row order; it is
/// restricted to the active rows before the projection.
pub fn extract_damping<T: Scalar>(
    transform: &TransformState<T>,
    state: &ActiveSearchState<T>,
    dbar: &[DMatrix<T>],
) -> Result<DMatrix<T>, ControllerError> {
    let n = transform.dim();
    if dbar.len() != transform.levels.len() {
        return Err(ControllerError::DimensionMismatch(format!(
            "{} damping matrices for {} levels",
            dbar.len(),
            transform.levels.len()
        )));
    }
    let mut d = DMatrix::zeros(n, n);
    for (lt, dk) in transform.levels.iter().zip(dbar) {
        let user = &state.hierarchy.levels[lt.level];
        let m = user_rows(user);
        if dk.shape() != (m, m) {
            return Err(ControllerError::DimensionMismatch(format!(
                "level {}: damping must be {m}x{m}",
                lt.level + 1
            )));
        }
        if lt.rank == 0 {
            continue;
        }
        let active = DMatrix::from_fn(lt.rows.len(), lt.rows.len(), |i, j| {
            let (ri, si) = user.source(lt.rows[i]);
            let (rj, sj) = user.source(lt.rows[j]);
            dk[(ri, rj)] * si * sj
        });
        let block = lt.u.tr_mul(&(active * &lt.u));
        d.view_mut((lt.offset, lt.offset), (lt.rank, lt.rank))
            .copy_from(&block);
    }
    Ok(d)
}

/// Torque `τ = g + Fᵀ (ξ̇ʳ + Γ_d ξʳ + Γ_s ξ − D (ξ − ξʳ))`.
pub fn control_torque<T: Scalar>(
    transform: &TransformState<T>,
    xi_r: &DVector<T>,
    dxi_r: &DVector<T>,
    damping: &DMatrix<T>,
    gravity: &DVector<T>,
) -> Result<DVector<T>, ControllerError> {
    let n = transform.dim();
    if xi_r.len() != n || dxi_r.len() != n || damping.shape() != (n, n) || gravity.len() != n {
        return Err(ControllerError::DimensionMismatch(format!(
            "references, damping and gravity must match dimension {n}"
        )));
    }
    let (gd, gs) = split_gamma(&transform.gamma, &transform.blocks)?;
    let xi = &transform.xi;
    let inner = dxi_r + gd * xi_r + gs * xi - damping * (xi - xi_r);
    Ok(gravity + transform.f.tr_mul(&inner))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn split_gamma_examples() {
        let z = DMatrix::<f64>::zeros(3, 3);
        let (d, s) = split_gamma(&z, &[1, 2]).unwrap();
        assert_eq!(d, z);
        assert_eq!(s, z);

        let g = dmatrix![0.0, 1.0, -2.0; -1.0, 0.0, 3.0; 2.0, -3.0, 0.0];
        let (d, s) = split_gamma(&g, &[3]).unwrap();
        assert_eq!(d, g);
        assert_eq!(s, DMatrix::zeros(3, 3));

        let (d, s) = split_gamma(&g, &[1, 2]).unwrap();
        assert_eq!(d, dmatrix![0.0, 0.0, 0.0; 0.0, 0.0, 3.0; 0.0, -3.0, 0.0]);
        assert_eq!(&d + &s, g);
        assert_eq!(&d + d.transpose(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn split_gamma_rejects_bad_partitions() {
        let g = DMatrix::<f64>::zeros(3, 3);
        assert!(matches!(
            split_gamma(&g, &[1, 1]),
            Err(ControllerError::BadPartition { .. })
        ));
        assert!(matches!(
            split_gamma(&g, &[3, 0]),
            Err(ControllerError::BadPartition { .. })
        ));
    }
}
