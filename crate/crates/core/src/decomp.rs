//! Dense decomposition kernels: Cholesky, sorted (column-pivoted) QR, the
//! compact complete orthogonal decomposition and its analytic time derivative.
//!
//! The compact COD of an `m x n` matrix `A` is `A = U L Yᵀ` where `U` (`m x r`)
//! and `Y` (`n x r`) have orthonormal columns and `L` (`r x r`) is lower
//! triangular with a strictly positive diagonal. `Ztilde` completes `Y` to an
//! orthogonal basis of `Rⁿ`, so its columns span the kernel of `A`.
//!
//! The factorization is computed from the sorted QR of `Aᵀ`:
//! `Aᵀ Π = Q R`, followed by Givens rotations from the right that annihilate
//! the trailing block of the first `r` rows of `R`, `[R₁ R₂] G = [P₁ 0]`.
//! Then `U = Π G₁`, `L = P₁ᵀ`, `Y = Q₁` and `Ztilde = Q₂`. Working on the
//! transpose handles wide and tall inputs with the same code path.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::scalar::Scalar;

/// Relative rank tolerance used when callers do not supply one.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecompError {
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("diagonal entry {index} of L is at or below the rank tolerance")]
    RankDeficientL { index: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Upper-triangular Cholesky factor `R` with `W = RᵀR`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor<T: Scalar> {
    r: DMatrix<T>,
}

impl<T: Scalar> CholeskyFactor<T> {
    pub fn r(&self) -> &DMatrix<T> {
        &self.r
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn reconstruct(&self) -> DMatrix<T> {
        self.r.tr_mul(&self.r)
    }

    /// Solves `R X = B`.
    pub fn solve_r(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.r
            .solve_upper_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// Solves `Rᵀ X = B`.
    pub fn solve_rt(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.r
            .tr_solve_upper_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `R⁻¹`, obtained by a triangular solve against the identity.
    pub fn inverse(&self) -> DMatrix<T> {
        self.solve_r(&DMatrix::identity(self.dim(), self.dim()))
    }

    /// Time derivative of `R` given the derivative of the factored matrix.
    ///
    /// With `Φ = R⁻ᵀ Ẇ R⁻¹`, the product `Ṙ R⁻¹` is the upper triangle of `Φ`
    /// with its diagonal halved.
    pub fn rate(&self, wdot: &DMatrix<T>) -> DMatrix<T> {
        let x = self.rate_times_inverse(wdot);
        &x * &self.r
    }

    /// `Ṙ R⁻¹` for the given `Ẇ`; upper triangular.
    pub fn rate_times_inverse(&self, wdot: &DMatrix<T>) -> DMatrix<T> {
        let n = self.dim();
        // Φ = R⁻ᵀ Ẇ R⁻¹ = (R⁻ᵀ (R⁻ᵀ Ẇ)ᵀ)ᵀ
        let left = self.solve_rt(wdot);
        let phi = self.solve_rt(&left.transpose()).transpose();
        let half = T::lit(0.5);
        DMatrix::from_fn(n, n, |i, j| {
            if i < j {
                phi[(i, j)]
            } else if i == j {
                phi[(i, i)] * half
            } else {
                T::zero()
            }
        })
    }
}

/// Cholesky factorization of a symmetric positive definite matrix.
pub fn cholesky<T: Scalar>(w: &DMatrix<T>) -> Result<CholeskyFactor<T>, DecompError> {
    let (rows, cols) = w.shape();
    if rows != cols {
        return Err(DecompError::NotSquare { rows, cols });
    }
    let n = rows;
    let scale = w.amax().max(T::one());
    let sym_tol = T::default_epsilon() * T::lit(1e4) * scale;
    let mut asym = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((w[(i, j)] - w[(j, i)]).abs());
        }
    }
    if asym > sym_tol {
        return Err(DecompError::NotSymmetric {
            asymmetry: asym.to_f64(),
        });
    }

    let mut r = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut s = w[(j, j)];
        for k in 0..j {
            s -= r[(k, j)] * r[(k, j)];
        }
        // `!(s > 0)` also rejects NaN pivots.
        if !(s > T::zero()) {
            return Err(DecompError::NotPositiveDefinite {
                index: j,
                pivot: s.to_f64(),
            });
        }
        let d = s.sqrt();
        r[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = w[(j, i)];
            for k in 0..j {
                s -= r[(k, j)] * r[(k, i)];
            }
            r[(j, i)] = s / d;
        }
    }
    Ok(CholeskyFactor { r })
}

/// Column-pivoted QR, `A Π = Q R`, with non-increasing `|R[i][i]|`.
///
/// `perm[j]` is the column of `A` that ended up in position `j`. The leading
/// diagonal entries of `R` are normalized to be non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedQr<T: Scalar> {
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub perm: Vec<usize>,
}

impl<T: Scalar> SortedQr<T> {
    /// The column-permuted input `A Π`.
    pub fn permute_columns(&self, a: &DMatrix<T>) -> DMatrix<T> {
        DMatrix::from_fn(a.nrows(), self.perm.len(), |i, j| a[(i, self.perm[j])])
    }
}

fn trailing_norm_sq<T: Scalar>(r: &DMatrix<T>, col: usize, from: usize) -> T {
    let mut s = T::zero();
    for i in from..r.nrows() {
        s += r[(i, col)] * r[(i, col)];
    }
    s
}

/// Householder QR with greedy max-norm column pivoting.
pub fn sorted_qr<T: Scalar>(a: &DMatrix<T>) -> SortedQr<T> {
    let (m, n) = a.shape();
    let mut r = a.clone();
    let mut q = DMatrix::<T>::identity(m, m);
    let mut perm: Vec<usize> = (0..n).collect();
    let two = T::lit(2.0);

    for k in 0..m.min(n) {
        let mut best = k;
        let mut best_norm = trailing_norm_sq(&r, k, k);
        for j in (k + 1)..n {
            let nj = trailing_norm_sq(&r, j, k);
            if nj > best_norm {
                best = j;
                best_norm = nj;
            }
        }
        if best_norm == T::zero() {
            break;
        }
        if best != k {
            r.swap_columns(k, best);
            perm.swap(k, best);
        }

        let norm = best_norm.sqrt();
        let alpha = if r[(k, k)] >= T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (k..m).map(|i| r[(i, k)]).collect();
        v[0] -= alpha;
        let vv: T = v.iter().fold(T::zero(), |acc, &x| acc + x * x);
        if vv == T::zero() {
            continue;
        }
        for j in (k + 1)..n {
            let mut s = T::zero();
            for (t, i) in (k..m).enumerate() {
                s += v[t] * r[(i, j)];
            }
            let f = two * s / vv;
            for (t, i) in (k..m).enumerate() {
                r[(i, j)] -= f * v[t];
            }
        }
        for i in 0..m {
            let mut s = T::zero();
            for (t, col) in (k..m).enumerate() {
                s += q[(i, col)] * v[t];
            }
            let f = two * s / vv;
            for (t, col) in (k..m).enumerate() {
                q[(i, col)] -= f * v[t];
            }
        }
        r[(k, k)] = alpha;
        for i in (k + 1)..m {
            r[(i, k)] = T::zero();
        }
    }

    for i in 0..m.min(n) {
        if r[(i, i)] < T::zero() {
            for j in 0..n {
                r[(i, j)] = -r[(i, j)];
            }
            for row in 0..m {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }

    SortedQr { q, r, perm }
}

/// Max absolute row sum.
pub fn inf_norm<T: Scalar>(a: &DMatrix<T>) -> T {
    a.row_iter()
        .map(|row| row.iter().fold(T::zero(), |acc, x| acc + x.abs()))
        .fold(T::zero(), |acc, s| acc.max(s))
}

/// Compact complete orthogonal decomposition `A = U L Yᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactCod<T: Scalar> {
    pub rank: usize,
    /// `m x r`, orthonormal columns spanning the range of `A`.
    pub u: DMatrix<T>,
    /// `r x r`, lower triangular with positive diagonal.
    pub l: DMatrix<T>,
    /// `n x r`, orthonormal columns spanning the row space of `A`.
    pub y: DMatrix<T>,
    /// `n x (n - r)`, orthonormal complement of `Y` (kernel basis).
    pub ztilde: DMatrix<T>,
    // Factors of the underlying sorted QR of Aᵀ, kept for differentiation.
    q: DMatrix<T>,
    r1: DMatrix<T>,
    p1: DMatrix<T>,
    g: DMatrix<T>,
    perm: Vec<usize>,
    threshold: T,
}

impl<T: Scalar> CompactCod<T> {
    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.y.nrows()
    }

    /// Absolute threshold the rank decision was made against.
    pub fn threshold(&self) -> T {
        self.threshold
    }

    /// Row permutation applied to `A` before factoring its transpose.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn reconstruct(&self) -> DMatrix<T> {
        &self.u * &self.l * self.y.transpose()
    }

    /// `L⁻¹ B` by forward substitution.
    pub fn solve_l(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.l
            .solve_lower_triangular(b)
            .expect("COD triangular factor has a positive diagonal")
    }

    /// Moore–Penrose inverse `Y L⁻¹ Uᵀ`.
    pub fn pinv(&self) -> DMatrix<T> {
        &self.y * self.solve_l(&self.u.transpose())
    }
}

/// Compact COD with rank decided by `|R[i][i]| > rank_tol * max(1, ‖A‖∞)`.
pub fn compact_cod<T: Scalar>(a: &DMatrix<T>, rank_tol: T) -> CompactCod<T> {
    let (m, n) = a.shape();
    let qr = sorted_qr(&a.transpose());
    let threshold = rank_tol * inf_norm(a).max(T::one());
    let rank = (0..m.min(n))
        .take_while(|&i| qr.r[(i, i)].abs() > threshold)
        .count();

    let mut t = qr.r.rows(0, rank).into_owned();
    let mut g = DMatrix::<T>::identity(m, m);
    for i in (0..rank).rev() {
        for j in rank..m {
            let b = t[(i, j)];
            if b == T::zero() {
                continue;
            }
            let a_ii = t[(i, i)];
            let rho = a_ii.hypot(b);
            let c = a_ii / rho;
            let s = b / rho;
            for row in 0..=i {
                let ti = t[(row, i)];
                let tj = t[(row, j)];
                t[(row, i)] = c * ti + s * tj;
                t[(row, j)] = c * tj - s * ti;
            }
            for row in 0..m {
                let gi = g[(row, i)];
                let gj = g[(row, j)];
                g[(row, i)] = c * gi + s * gj;
                g[(row, j)] = c * gj - s * gi;
            }
            t[(i, i)] = rho;
            t[(i, j)] = T::zero();
        }
    }

    let p1 = t.columns(0, rank).into_owned();
    let r1 = qr.r.view((0, 0), (rank, rank)).into_owned();
    let mut u = DMatrix::<T>::zeros(m, rank);
    for (j, &src) in qr.perm.iter().enumerate() {
        for c in 0..rank {
            u[(src, c)] = g[(j, c)];
        }
    }
    let y = qr.q.columns(0, rank).into_owned();
    let ztilde = qr.q.columns(rank, n - rank).into_owned();

    CompactCod {
        rank,
        u,
        l: p1.transpose(),
        y,
        ztilde,
        q: qr.q,
        r1,
        p1,
        g,
        perm: qr.perm,
        threshold,
    }
}

/// Time derivatives of the compact COD factors.
#[derive(Debug, Clone, PartialEq)]
pub struct CodRates<T: Scalar> {
    pub du: DMatrix<T>,
    pub dl: DMatrix<T>,
    pub dy: DMatrix<T>,
    /// Derivative of `Ztilde` under the gauge `Ztildeᵀ dZtilde = 0`.
    pub dztilde: DMatrix<T>,
}

/// Skew-symmetric matrix whose strictly lower triangle is taken from `x`.
fn skew_from_lower<T: Scalar>(x: &DMatrix<T>) -> DMatrix<T> {
    let r = x.nrows();
    DMatrix::from_fn(r, r, |i, j| {
        if i > j {
            x[(i, j)]
        } else if i < j {
            -x[(j, i)]
        } else {
            T::zero()
        }
    })
}

/// Analytic derivative of the compact COD of `A` along `Adot`.
///
/// The rank of `A` is assumed locally constant. The skew blocks `Q₁ᵀQ̇₁` and
/// `U̇₁ᵀU₁` are read from strictly-lower triangles; the triangular rates follow
/// by subtraction.
pub fn cod_rate<T: Scalar>(
    a: &DMatrix<T>,
    adot: &DMatrix<T>,
    cod: &CompactCod<T>,
) -> Result<CodRates<T>, DecompError> {
    let (m, n) = a.shape();
    if adot.shape() != (m, n) || cod.rows() != m || cod.cols() != n {
        return Err(DecompError::DimensionMismatch(format!(
            "A is {m}x{n}, Adot is {}x{}, COD is {}x{}",
            adot.nrows(),
            adot.ncols(),
            cod.rows(),
            cod.cols()
        )));
    }
    let r = cod.rank;
    for i in 0..r {
        if cod.l[(i, i)].abs() <= cod.threshold {
            return Err(DecompError::RankDeficientL { index: i });
        }
    }
    if r == 0 {
        return Ok(CodRates {
            du: DMatrix::zeros(m, 0),
            dl: DMatrix::zeros(0, 0),
            dy: DMatrix::zeros(n, 0),
            dztilde: DMatrix::zeros(n, n),
        });
    }

    // Ḃ Π with B = Aᵀ.
    let bdot = DMatrix::from_fn(n, m, |i, j| adot[(cod.perm[j], i)]);
    let q1 = cod.q.columns(0, r);
    let q2 = cod.q.columns(r, n - r);

    // Q̇₁ from Qᵀ Ḃ₁ R₁⁻¹.
    let qt_b1 = cod.q.tr_mul(&bdot.columns(0, r));
    let x = cod
        .r1
        .tr_solve_upper_triangular(&qt_b1.transpose())
        .expect("R1 has a nonzero diagonal")
        .transpose();
    let omega_q = skew_from_lower(&x.rows(0, r).into_owned());
    let lower_q = x.rows(r, n - r);
    let dq1 = q1 * &omega_q + q2 * lower_q;

    // U̇₁ and Ṗ₁ from P₁⁻¹ Q₁ᵀ Ḃ G after removing the known P₁⁻¹ Q₁ᵀQ̇₁ P₁ term.
    let solve_p1 = |b: &DMatrix<T>| {
        cod.p1
            .solve_upper_triangular(b)
            .expect("P1 has a positive diagonal")
    };
    let mut h = solve_p1(&(q1.tr_mul(&bdot) * &cod.g));
    let known = solve_p1(&(&omega_q * &cod.p1));
    {
        let mut head = h.columns_mut(0, r);
        head -= &known;
    }
    let k = h.columns(0, r).into_owned();
    let omega_u = skew_from_lower(&k);
    let tail = h.columns(r, m - r);
    let g1 = cod.g.columns(0, r);
    let g2 = cod.g.columns(r, m - r);
    let du1 = g1 * (-&omega_u) + g2 * tail.transpose();
    let dp1 = &cod.p1 * (&k - &omega_u);

    let mut du = DMatrix::<T>::zeros(m, r);
    for (j, &src) in cod.perm.iter().enumerate() {
        for c in 0..r {
            du[(src, c)] = du1[(j, c)];
        }
    }
    let dztilde = -(&cod.y * dq1.tr_mul(&cod.ztilde));

    Ok(CodRates {
        du,
        dl: dp1.transpose(),
        dy: dq1,
        dztilde,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_rank(rng: &mut ChaCha8Rng, m: usize, n: usize, r: usize) -> DMatrix<f64> {
        random(rng, m, r) * random(rng, r, n)
    }

    fn orthonormal_defect(x: &DMatrix<f64>) -> f64 {
        (x.tr_mul(x) - DMatrix::identity(x.ncols(), x.ncols())).norm()
    }

    #[test]
    fn cholesky_identity_and_diagonal() {
        let r = cholesky(&DMatrix::<f64>::identity(3, 3)).unwrap();
        assert_eq!(r.r(), &DMatrix::identity(3, 3));
        let r = cholesky(&DMatrix::from_diagonal(&nalgebra::dvector![4.0, 9.0])).unwrap();
        assert_eq!(
            r.r(),
            &DMatrix::from_diagonal(&nalgebra::dvector![2.0, 3.0])
        );
    }

    #[test]
    fn cholesky_random_spd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, 6, 6);
        let w = a.tr_mul(&a) + DMatrix::identity(6, 6);
        let r = cholesky(&w).unwrap();
        assert!((r.reconstruct() - &w).norm() < 1e-12 * w.norm());
        for i in 0..6 {
            assert!(r.r()[(i, i)] > 0.0);
            for j in 0..i {
                assert_eq!(r.r()[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn cholesky_errors() {
        let w = nalgebra::dmatrix![1.0, 2.0; 2.0, 1.0];
        assert!(matches!(
            cholesky(&w),
            Err(DecompError::NotPositiveDefinite { index: 1, .. })
        ));
        let w = nalgebra::dmatrix![1.0, 0.5; 0.0, 1.0];
        assert!(matches!(
            cholesky(&w),
            Err(DecompError::NotSymmetric { .. })
        ));
        let w = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(cholesky(&w), Err(DecompError::NotSquare { .. })));
    }

    #[test]
    fn cholesky_rate_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 5, 5);
        let b = random(&mut rng, 5, 5);
        let w = |t: f64| {
            let x = &a + &b * t;
            x.tr_mul(&x) + DMatrix::identity(5, 5)
        };
        let h = 1e-6;
        let wdot = (w(h) - w(-h)) / (2.0 * h);
        let r0 = cholesky(&w(0.0)).unwrap();
        let fd = (cholesky(&w(h)).unwrap().r() - cholesky(&w(-h)).unwrap().r()) / (2.0 * h);
        assert!((r0.rate(&wdot) - fd).norm() < 1e-7);
    }

    #[test]
    fn sorted_qr_identity_and_zero() {
        let qr = sorted_qr(&DMatrix::<f64>::identity(3, 3));
        assert_eq!(qr.q, DMatrix::identity(3, 3));
        assert_eq!(qr.r, DMatrix::identity(3, 3));
        assert_eq!(qr.perm, vec![0, 1, 2]);

        let qr = sorted_qr(&DMatrix::<f64>::zeros(3, 2));
        assert_eq!(qr.r, DMatrix::zeros(3, 2));
        assert!(orthonormal_defect(&qr.q) < 1e-15);
    }

    #[test]
    fn sorted_qr_rank_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_rank(&mut rng, 5, 3, 2);
        let qr = sorted_qr(&a);
        let ap = qr.permute_columns(&a);
        assert!((&qr.q * &qr.r - &ap).norm() < 1e-12 * a.norm());
        assert!(orthonormal_defect(&qr.q) < 1e-13);
        let tol = DEFAULT_RANK_TOL * inf_norm(&a).max(1.0);
        let above = (0..3).filter(|&i| qr.r[(i, i)].abs() > tol).count();
        assert_eq!(above, 2);
        for i in 1..3 {
            assert!(qr.r[(i, i)].abs() <= qr.r[(i - 1, i - 1)].abs());
        }
    }

    #[test]
    fn cod_identity() {
        let cod = compact_cod(&DMatrix::<f64>::identity(4, 4), DEFAULT_RANK_TOL);
        assert_eq!(cod.rank, 4);
        assert_eq!(cod.u, DMatrix::identity(4, 4));
        assert_eq!(cod.l, DMatrix::identity(4, 4));
        assert_eq!(cod.y, DMatrix::identity(4, 4));
        assert_eq!(cod.ztilde.ncols(), 0);
    }

    #[test]
    fn cod_zero_matrix() {
        let cod = compact_cod(&DMatrix::<f64>::zeros(2, 5), DEFAULT_RANK_TOL);
        assert_eq!(cod.rank, 0);
        assert_eq!(cod.u.shape(), (2, 0));
        assert_eq!(cod.l.shape(), (0, 0));
        assert_eq!(cod.y.shape(), (5, 0));
        assert_eq!(cod.ztilde.shape(), (5, 5));
        assert!(orthonormal_defect(&cod.ztilde) < 1e-15);
    }

    #[test]
    fn cod_empty_dimensions() {
        let cod = compact_cod(&DMatrix::<f64>::zeros(0, 3), DEFAULT_RANK_TOL);
        assert_eq!(cod.rank, 0);
        assert_eq!(cod.ztilde, DMatrix::identity(3, 3));
        let cod = compact_cod(&DMatrix::<f64>::zeros(3, 0), DEFAULT_RANK_TOL);
        assert_eq!(cod.rank, 0);
        assert_eq!(cod.u.shape(), (3, 0));
        assert_eq!(cod.ztilde.shape(), (0, 0));
    }

    #[test]
    fn cod_random_rank_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_rank(&mut rng, 4, 6, 3);
        let cod = compact_cod(&a, DEFAULT_RANK_TOL);
        assert_eq!(cod.rank, 3);
        assert!((cod.reconstruct() - &a).norm() < 1e-11 * a.norm());
        assert!(cod.y.tr_mul(&cod.ztilde).norm() < 1e-12);
        assert!(orthonormal_defect(&cod.u) < 1e-12);
        assert!(orthonormal_defect(&cod.y) < 1e-12);
        assert!(orthonormal_defect(&cod.ztilde) < 1e-12);
        for i in 0..3 {
            assert!(cod.l[(i, i)] > cod.threshold());
            for j in (i + 1)..3 {
                assert_eq!(cod.l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn cod_tall_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_rank(&mut rng, 7, 3, 2);
        let cod = compact_cod(&a, DEFAULT_RANK_TOL);
        assert_eq!(cod.rank, 2);
        assert!((cod.reconstruct() - &a).norm() < 1e-11 * a.norm());
    }

    #[test]
    fn cod_works_in_single_precision() {
        let a = DMatrix::<f32>::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0]);
        let cod = compact_cod(&a, 1e-5);
        assert_eq!(cod.rank, 2);
        assert!((cod.reconstruct() - &a).norm() < 1e-5);
    }

    #[test]
    fn cod_rate_of_constant_matrix_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_rank(&mut rng, 4, 5, 3);
        let cod = compact_cod(&a, DEFAULT_RANK_TOL);
        let rates = cod_rate(&a, &DMatrix::zeros(4, 5), &cod).unwrap();
        assert_eq!(rates.du.norm(), 0.0);
        assert_eq!(rates.dl.norm(), 0.0);
        assert_eq!(rates.dy.norm(), 0.0);
        assert_eq!(rates.dztilde.norm(), 0.0);
    }

    fn check_rates_against_fd(a0: &DMatrix<f64>, a1: &DMatrix<f64>) {
        let h = 1e-5;
        let at = |t: f64| a0 + a1 * t;
        let cod = compact_cod(&at(0.0), DEFAULT_RANK_TOL);
        let plus = compact_cod(&at(h), DEFAULT_RANK_TOL);
        let minus = compact_cod(&at(-h), DEFAULT_RANK_TOL);
        // Only the pivots of the retained rows shape the factors.
        let r = cod.rank;
        assert_eq!(plus.perm()[..r], cod.perm()[..r]);
        assert_eq!(minus.perm()[..r], cod.perm()[..r]);
        let rates = cod_rate(&at(0.0), a1, &cod).unwrap();
        let fd_u = (&plus.u - &minus.u) / (2.0 * h);
        let fd_l = (&plus.l - &minus.l) / (2.0 * h);
        let fd_y = (&plus.y - &minus.y) / (2.0 * h);
        assert!((&rates.du - fd_u).norm() < 1e-5);
        assert!((&rates.dl - fd_l).norm() < 1e-5);
        assert!((&rates.dy - fd_y).norm() < 1e-5);
    }

    #[test]
    fn cod_rate_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        check_rates_against_fd(&random(&mut rng, 3, 5), &random(&mut rng, 3, 5));
        check_rates_against_fd(&random(&mut rng, 5, 3), &random(&mut rng, 5, 3));
        check_rates_against_fd(&random(&mut rng, 4, 4), &random(&mut rng, 4, 4));
    }

    #[test]
    fn cod_rate_rank_deficient_path() {
        // A(t) = B(t) C keeps rank 2.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b0 = random(&mut rng, 4, 2);
        let b1 = random(&mut rng, 4, 2);
        let c = random(&mut rng, 2, 5);
        check_rates_against_fd(&(&b0 * &c), &(&b1 * &c));
    }

    #[test]
    fn cod_rate_gauge_and_skew() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_rank(&mut rng, 3, 6, 2);
        let adot = random(&mut rng, 3, 6);
        let cod = compact_cod(&a, DEFAULT_RANK_TOL);
        let rates = cod_rate(&a, &adot, &cod).unwrap();
        let skew_u = cod.u.tr_mul(&rates.du);
        let skew_y = cod.y.tr_mul(&rates.dy);
        assert!((&skew_u + skew_u.transpose()).norm() < 1e-10);
        assert!((&skew_y + skew_y.transpose()).norm() < 1e-10);
        assert!(cod.ztilde.tr_mul(&rates.dztilde).norm() < 1e-12);
        let d_yz = rates.dy.tr_mul(&cod.ztilde) + cod.y.tr_mul(&rates.dztilde);
        assert!(d_yz.norm() < 1e-10);
    }

    #[test]
    fn cod_rate_rejects_mismatched_shapes() {
        let a = DMatrix::<f64>::identity(2, 2);
        let cod = compact_cod(&a, DEFAULT_RANK_TOL);
        assert!(matches!(
            cod_rate(&a, &DMatrix::zeros(3, 2), &cod),
            Err(DecompError::DimensionMismatch(_))
        ));
    }
}
