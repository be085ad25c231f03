use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::WhqpError;
use crate::decomp::cholesky;
use crate::scalar::Scalar;

/// Bound type of one constraint row.
///
/// For `Range` rows the level's `b` entry holds the lower bound and `upper`
/// the upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundSense<T> {
    Equality,
    Lower,
    Upper,
    Range { upper: T },
}

/// One priority level: rows `A x (sense) b` with an SPD block-diagonal weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLevel<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
    pub sense: Vec<BoundSense<T>>,
    pub w: DMatrix<T>,
    /// Sizes of the diagonal blocks of `w`, summing to the row count.
    pub blocks: Vec<usize>,
}

impl<T: Scalar> TaskLevel<T> {
    /// Equality level with the given weight as a single block.
    pub fn equality(a: DMatrix<T>, b: DVector<T>, w: DMatrix<T>) -> Self {
        let m = a.nrows();
        TaskLevel {
            a,
            b,
            sense: vec![BoundSense::Equality; m],
            w,
            blocks: if m == 0 { vec![] } else { vec![m] },
        }
    }

    /// Level with identity weight, one block per row.
    pub fn unit_weight(a: DMatrix<T>, b: DVector<T>, sense: Vec<BoundSense<T>>) -> Self {
        let m = a.nrows();
        TaskLevel {
            a,
            b,
            sense,
            w: DMatrix::identity(m, m),
            blocks: vec![1; m],
        }
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }
}

/// Ordered stack of levels, highest priority first.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy<T: Scalar> {
    pub n: usize,
    pub levels: Vec<TaskLevel<T>>,
}

/// Row of a normalized level: either an equality or `a x ≥ b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowKind {
    Eq,
    Ge,
}

/// Where a normalized row came from in the user's level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowOrigin {
    /// Equality or lower-bound row, kept as is.
    Direct(usize),
    /// Upper-bound row, negated.
    Negated(usize),
    /// Lower half of a range row.
    RangeLower(usize),
    /// Upper half of a range row, negated.
    RangeUpper(usize),
}

/// Identifier of a normalized row: level index and row index within it.
///
/// The derived ordering (level first) is the tie-breaking order of the
/// active search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId {
    pub level: usize,
    pub row: usize,
}

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.level + 1, self.row)
    }
}

/// Level rewritten with equality and `≥` rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLevel<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
    pub kind: Vec<RowKind>,
    pub w: DMatrix<T>,
    pub origin: Vec<RowOrigin>,
}

impl<T: Scalar> NormalizedLevel<T> {
    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// Slack of every row at `x`: `a x − b` for equalities, `min(0, a x − b)` otherwise.
    pub fn slack(&self, x: &DVector<T>) -> DVector<T> {
        let r = &self.a * x - &self.b;
        DVector::from_fn(self.rows(), |i, _| match self.kind[i] {
            RowKind::Eq => r[i],
            RowKind::Ge => r[i].min(T::zero()),
        })
    }

    /// Source row in the user's level and the sign applied to it.
    pub fn source(&self, i: usize) -> (usize, T) {
        match self.origin[i] {
            RowOrigin::Direct(r) | RowOrigin::RangeLower(r) => (r, T::one()),
            RowOrigin::Negated(r) | RowOrigin::RangeUpper(r) => (r, -T::one()),
        }
    }

    /// Carries per-row data of the user's level (for instance `Ȧ`) over to
    /// the normalized rows listed in `rows`, applying the same signs as `A`.
    pub fn map_rows(&self, data: &DMatrix<T>, rows: &[usize]) -> DMatrix<T> {
        DMatrix::from_fn(rows.len(), data.ncols(), |i, j| {
            let (r, s) = self.source(rows[i]);
            data[(r, j)] * s
        })
    }

    /// `½ wᵀ W w` with `w` the slack at `x`.
    pub fn objective(&self, x: &DVector<T>) -> T {
        let w = self.slack(x);
        (w.transpose() * &self.w * &w)[(0, 0)] * T::lit(0.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedHierarchy<T: Scalar> {
    pub n: usize,
    pub levels: Vec<NormalizedLevel<T>>,
}

impl<T: Scalar> NormalizedHierarchy<T> {
    pub fn row_ids(&self) -> impl Iterator<Item = RowId> + '_ {
        self.levels
            .iter()
            .enumerate()
            .flat_map(|(level, l)| (0..l.rows()).map(move |row| RowId { level, row }))
    }

    pub fn kind(&self, id: RowId) -> RowKind {
        self.levels[id.level].kind[id.row]
    }

    pub fn total_rows(&self) -> usize {
        self.levels.iter().map(|l| l.rows()).sum()
    }

    pub fn inequality_rows(&self) -> usize {
        self.row_ids()
            .filter(|&id| self.kind(id) == RowKind::Ge)
            .count()
    }

    pub fn equality_ids(&self) -> impl Iterator<Item = RowId> + '_ {
        self.row_ids().filter(|&id| self.kind(id) == RowKind::Eq)
    }

    /// Per-level objective values at `x`.
    pub fn objective_vector(&self, x: &DVector<T>) -> Vec<T> {
        self.levels.iter().map(|l| l.objective(x)).collect()
    }
}

impl<T: Scalar> Hierarchy<T> {
    /// Checks shapes, weight structure and bounds.
    pub fn validate(&self) -> Result<(), WhqpError> {
        for (k, level) in self.levels.iter().enumerate() {
            let m = level.rows();
            if level.a.ncols() != self.n {
                return Err(WhqpError::DimensionMismatch(format!(
                    "level {}: A has {} columns, expected {}",
                    k + 1,
                    level.a.ncols(),
                    self.n
                )));
            }
            if level.b.len() != m || level.sense.len() != m || level.w.shape() != (m, m) {
                return Err(WhqpError::DimensionMismatch(format!(
                    "level {}: {m} rows but b has {}, sense has {}, W is {}x{}",
                    k + 1,
                    level.b.len(),
                    level.sense.len(),
                    level.w.nrows(),
                    level.w.ncols()
                )));
            }
            if level.blocks.iter().sum::<usize>() != m || level.blocks.contains(&0) {
                return Err(WhqpError::InvalidWeight {
                    level: k,
                    reason: format!("block sizes {:?} do not partition {m} rows", level.blocks),
                });
            }
            let mut block_of = Vec::with_capacity(m);
            for (bi, &size) in level.blocks.iter().enumerate() {
                block_of.extend(std::iter::repeat_n(bi, size));
            }
            for i in 0..m {
                for j in 0..m {
                    if block_of[i] != block_of[j] && level.w[(i, j)] != T::zero() {
                        return Err(WhqpError::InvalidWeight {
                            level: k,
                            reason: format!("entry ({i},{j}) lies outside the diagonal blocks"),
                        });
                    }
                }
            }
            cholesky(&level.w).map_err(|e| WhqpError::InvalidWeight {
                level: k,
                reason: e.to_string(),
            })?;
            for (i, s) in level.sense.iter().enumerate() {
                if let BoundSense::Range { upper } = *s {
                    if !(level.b[i] < upper) {
                        return Err(WhqpError::InvalidBounds { level: k, row: i });
                    }
                }
                if !matches!(s, BoundSense::Equality) {
                    let coupled = (0..m).any(|j| j != i && level.w[(i, j)] != T::zero());
                    if coupled {
                        return Err(WhqpError::CoupledInequalityWeight { level: k, row: i });
                    }
                }
            }
        }
        Ok(())
    }

    /// Rewrites every level with equality and `≥` rows only.
    ///
    /// Upper rows are negated and range rows split into two `≥` rows. The
    /// weight of an inequality row (which is never coupled to other rows) is
    /// carried over to each row it produces.
    pub fn normalize(&self) -> Result<NormalizedHierarchy<T>, WhqpError> {
        self.validate()?;
        let n = self.n;
        let levels = self
            .levels
            .iter()
            .map(|level| {
                let mut rows: Vec<(DVector<T>, T, RowKind, RowOrigin, usize)> = Vec::new();
                for i in 0..level.rows() {
                    let a = level.a.row(i).transpose();
                    let b = level.b[i];
                    match level.sense[i] {
                        BoundSense::Equality => {
                            rows.push((a, b, RowKind::Eq, RowOrigin::Direct(i), i))
                        }
                        BoundSense::Lower => {
                            rows.push((a, b, RowKind::Ge, RowOrigin::Direct(i), i))
                        }
                        BoundSense::Upper => {
                            rows.push((-a, -b, RowKind::Ge, RowOrigin::Negated(i), i))
                        }
                        BoundSense::Range { upper } => {
                            rows.push((a.clone(), b, RowKind::Ge, RowOrigin::RangeLower(i), i));
                            rows.push((-a, -upper, RowKind::Ge, RowOrigin::RangeUpper(i), i));
                        }
                    }
                }
                let m = rows.len();
                let a = DMatrix::from_fn(m, n, |i, j| rows[i].0[j]);
                let b = DVector::from_fn(m, |i, _| rows[i].1);
                let w = DMatrix::from_fn(m, m, |i, j| {
                    let (oi, oj) = (rows[i].4, rows[j].4);
                    let split_pair = i != j && oi == oj;
                    if split_pair {
                        T::zero()
                    } else {
                        level.w[(oi, oj)]
                    }
                });
                NormalizedLevel {
                    a,
                    b,
                    kind: rows.iter().map(|r| r.2).collect(),
                    w,
                    origin: rows.iter().map(|r| r.3).collect(),
                }
            })
            .collect();
        Ok(NormalizedHierarchy { n, levels })
    }
}
