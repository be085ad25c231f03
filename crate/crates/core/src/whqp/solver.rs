use std::collections::{BTreeMap, BTreeSet, HashSet};

use nalgebra::{DMatrix, DVector};

use super::problem::{Hierarchy, NormalizedHierarchy, RowId, RowKind};
use super::WhqpError;
use crate::decomp::{cholesky, DEFAULT_RANK_TOL};
use crate::scalar::Scalar;
use crate::wmpi::{build_projected_stack_factored, ProjectedStack};

/// Output of the equality-only solve over an active set.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSolution<T: Scalar> {
    pub x: DVector<T>,
    /// Last level with a nonzero projected rank.
    pub eta: Option<usize>,
    /// Projected stack of the active rows, one entry per level considered.
    pub factors: ProjectedStack<T>,
    /// Active normalized row indices of each level, in stack order.
    pub rows: Vec<Vec<usize>>,
    /// `v_k = b_k − A_k x⁽ᵏ⁻¹⁾` over the active rows.
    pub v: Vec<DVector<T>>,
    /// Slack `w_k = A_k x⁽ᵏ⁾ − b_k` over the active rows.
    pub w: Vec<DVector<T>>,
}

impl<T: Scalar> PrimalSolution<T> {
    /// Level count the solve covered.
    pub fn depth(&self) -> usize {
        self.rows.len()
    }

    /// Active rows of level `k` as a matrix.
    pub fn active_a(&self, hierarchy: &NormalizedHierarchy<T>, k: usize) -> DMatrix<T> {
        select_rows(&hierarchy.levels[k].a, &self.rows[k])
    }

    /// Weight of level `k` restricted to its active rows.
    pub fn active_w(&self, hierarchy: &NormalizedHierarchy<T>, k: usize) -> DMatrix<T> {
        let idx = &self.rows[k];
        let w = &hierarchy.levels[k].w;
        DMatrix::from_fn(idx.len(), idx.len(), |i, j| w[(idx[i], idx[j])])
    }
}

fn select_rows<T: Scalar>(a: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(idx.len(), a.ncols(), |i, j| a[(idx[i], j)])
}

fn active_rows_by_level(active: &BTreeSet<RowId>, depth: usize) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); depth];
    for id in active.iter().filter(|id| id.level < depth) {
        rows[id.level].push(id.row);
    }
    rows
}

/// Solves the levels `0..depth` with every active row treated as an equality.
pub fn ewhqp_primal_levels<T: Scalar>(
    hierarchy: &NormalizedHierarchy<T>,
    active: &BTreeSet<RowId>,
    metric: &DMatrix<T>,
    rank_tol: T,
    depth: usize,
) -> Result<PrimalSolution<T>, WhqpError> {
    let n = hierarchy.n;
    if metric.shape() != (n, n) {
        return Err(WhqpError::DimensionMismatch(format!(
            "metric is {}x{}, expected {n}x{n}",
            metric.nrows(),
            metric.ncols()
        )));
    }
    if depth > hierarchy.levels.len() {
        return Err(WhqpError::InvalidLevel(depth));
    }
    if let Some(id) = hierarchy.equality_ids().find(|id| !active.contains(id)) {
        return Err(WhqpError::InvalidActiveSet(format!(
            "equality row {id} is not active"
        )));
    }
    if let Some(id) = active.iter().find(|id| {
        id.level >= hierarchy.levels.len() || id.row >= hierarchy.levels[id.level].rows()
    }) {
        return Err(WhqpError::InvalidActiveSet(format!("unknown row {id}")));
    }

    let rows = active_rows_by_level(active, depth);
    let mut factored = Vec::with_capacity(depth);
    for (k, idx) in rows.iter().enumerate() {
        let level = &hierarchy.levels[k];
        let w = DMatrix::from_fn(idx.len(), idx.len(), |i, j| level.w[(idx[i], idx[j])]);
        factored.push((select_rows(&level.a, idx), cholesky(&w)?));
    }
    let factors = build_projected_stack_factored(factored, metric, rank_tol)?;

    let mut x = DVector::zeros(n);
    let mut v = Vec::with_capacity(depth);
    let mut w = Vec::with_capacity(depth);
    let mut eta = None;
    for (k, idx) in rows.iter().enumerate() {
        let lf = &factors.levels[k];
        let b = DVector::from_fn(idx.len(), |i, _| hierarchy.levels[k].b[idx[i]]);
        let vk = &b - &lf.a * &x;
        x += &lf.pinv * &vk;
        // w_k = −R⁻¹ (E − U Uᵀ) R v_k
        let rv = lf.weight_factor.r() * &vk;
        let residual = &rv - &lf.cod.u * (lf.cod.u.transpose() * &rv);
        let wk = -lf
            .weight_factor
            .r()
            .solve_upper_triangular(&residual)
            .expect("weight factor has a positive diagonal");
        if lf.rank() > 0 {
            eta = Some(k);
        }
        v.push(vk);
        w.push(wk);
    }
    Ok(PrimalSolution {
        x,
        eta,
        factors,
        rows,
        v,
        w,
    })
}

/// Solves every level with the active rows treated as equalities.
pub fn ewhqp_primal<T: Scalar>(
    hierarchy: &NormalizedHierarchy<T>,
    active: &BTreeSet<RowId>,
    metric: &DMatrix<T>,
    rank_tol: T,
) -> Result<PrimalSolution<T>, WhqpError> {
    ewhqp_primal_levels(hierarchy, active, metric, rank_tol, hierarchy.levels.len())
}

/// Multipliers of the active rows of levels `0..=h` for the level-`h` problem.
///
/// Sign convention: a positive multiplier means the row is needed, i.e.
/// releasing it would worsen the objective of level `h`. The multipliers are
/// taken against the unprojected rows and satisfy
/// `Σ_{j<h} A_jᵀ μ_j + A_hᵀ μ_h = 0` with `μ_h = −W_h w_h`.
pub fn ewhqp_dual_all<T: Scalar>(
    hierarchy: &NormalizedHierarchy<T>,
    primal: &PrimalSolution<T>,
    h: usize,
) -> Result<BTreeMap<RowId, T>, WhqpError> {
    if h >= primal.depth() {
        return Err(WhqpError::InvalidLevel(h));
    }
    let a_h = primal.active_a(hierarchy, h);
    let w_h = primal.active_w(hierarchy, h);
    let ww = &w_h * &primal.w[h];
    let y = a_h.tr_mul(&ww);
    let mut out = BTreeMap::new();
    for (i, &row) in primal.rows[h].iter().enumerate() {
        out.insert(RowId { level: h, row }, -ww[i]);
    }
    // Back substitution: A_i Ā_j⁺ = 0 for i < j, so each level only sees the
    // part of the residual left over by the levels below it.
    let mut residual = y;
    for j in (0..h).rev() {
        let lf = &primal.factors.levels[j];
        let mu = lf.pinv.tr_mul(&residual);
        residual -= lf.a.tr_mul(&mu);
        for (i, &row) in primal.rows[j].iter().enumerate() {
            out.insert(RowId { level: j, row }, mu[i]);
        }
    }
    Ok(out)
}

/// Multipliers for the rows in `wset` (see [`ewhqp_dual_all`]).
pub fn ewhqp_dual<T: Scalar>(
    hierarchy: &NormalizedHierarchy<T>,
    primal: &PrimalSolution<T>,
    h: usize,
    wset: &BTreeSet<RowId>,
) -> Result<BTreeMap<RowId, T>, WhqpError> {
    let all = ewhqp_dual_all(hierarchy, primal, h)?;
    Ok(all
        .into_iter()
        .filter(|(id, _)| wset.contains(id))
        .collect())
}

/// Tuning of the active search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions<T: Scalar> {
    /// Configuration metric; identity when absent.
    pub metric: Option<DMatrix<T>>,
    pub rank_tol: T,
    /// A row `a x ≥ b` counts as violated when `a x < b − feas_tol (1 + |b|)`.
    pub feas_tol: T,
    /// Multipliers within `dual_tol (1 + max |μ|)` of zero count as zero.
    pub dual_tol: T,
    /// Inequality rows to start from; equalities are always added.
    pub warm_start: Option<BTreeSet<RowId>>,
    /// Iteration cap is this factor times the number of normalized rows.
    pub iteration_factor: usize,
}

impl<T: Scalar> Default for SearchOptions<T> {
    fn default() -> Self {
        SearchOptions {
            metric: None,
            rank_tol: T::lit(DEFAULT_RANK_TOL),
            feas_tol: T::lit(1e-9),
            dual_tol: T::lit(1e-9),
            warm_start: None,
            iteration_factor: 50,
        }
    }
}

/// Result of the hierarchical active search.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSearchState<T: Scalar> {
    pub hierarchy: NormalizedHierarchy<T>,
    pub active: BTreeSet<RowId>,
    pub locked: BTreeSet<RowId>,
    pub eta: Option<usize>,
    pub x: DVector<T>,
    /// Multipliers of the last level's converged dual.
    pub lambda: BTreeMap<RowId, T>,
    pub factors: ProjectedStack<T>,
    pub rows: Vec<Vec<usize>>,
    pub v: Vec<DVector<T>>,
    pub w: Vec<DVector<T>>,
    pub iterations: usize,
}

impl<T: Scalar> ActiveSearchState<T> {
    /// Per-level objective values over all rows of each level.
    pub fn objective_vector(&self) -> Vec<T> {
        self.hierarchy.objective_vector(&self.x)
    }
}

fn violated<T: Scalar>(value: T, b: T, feas_tol: T) -> bool {
    value < b - feas_tol * (T::one() + b.abs())
}

/// Weighted hierarchical active search over equality and inequality levels.
pub fn active_search<T: Scalar>(
    hierarchy: &Hierarchy<T>,
    options: &SearchOptions<T>,
) -> Result<ActiveSearchState<T>, WhqpError> {
    let norm = hierarchy.normalize()?;
    active_search_normalized(norm, options)
}

/// [`active_search`] on an already normalized hierarchy.
pub fn active_search_normalized<T: Scalar>(
    norm: NormalizedHierarchy<T>,
    options: &SearchOptions<T>,
) -> Result<ActiveSearchState<T>, WhqpError> {
    let n = norm.n;
    let metric = options
        .metric
        .clone()
        .unwrap_or_else(|| DMatrix::identity(n, n));
    let depth = norm.levels.len();

    let mut active: BTreeSet<RowId> = norm.equality_ids().collect();
    if let Some(warm) = &options.warm_start {
        active.extend(warm.iter().copied().filter(|id| {
            id.level < depth
                && id.row < norm.levels[id.level].rows()
                && norm.kind(*id) == RowKind::Ge
        }));
    }
    let mut locked = BTreeSet::new();
    let mut lambda = BTreeMap::new();
    let mut iterations = 0;

    if norm.inequality_rows() > 0 {
        let cap = options.iteration_factor * norm.total_rows().max(1);
        let mut x = DVector::<T>::zeros(n);
        for h in 0..depth {
            let level = &norm.levels[h];
            for row in 0..level.rows() {
                let id = RowId { level: h, row };
                if level.kind[row] == RowKind::Ge && !active.contains(&id) {
                    let value = (level.a.row(row) * &x)[0];
                    if violated(value, level.b[row], options.feas_tol) {
                        active.insert(id);
                    }
                }
            }

            let mut seen: HashSet<Vec<RowId>> = HashSet::new();
            loop {
                iterations += 1;
                if iterations > cap {
                    return Err(WhqpError::IterationLimitExceeded(cap));
                }
                let primal = ewhqp_primal_levels(&norm, &active, &metric, options.rank_tol, h + 1)?;
                let d = &primal.x - &x;

                let mut tau = T::one();
                let mut blocking = None;
                for id in norm.row_ids().filter(|id| id.level <= h) {
                    if norm.kind(id) != RowKind::Ge || active.contains(&id) {
                        continue;
                    }
                    let level = &norm.levels[id.level];
                    let a = level.a.row(id.row);
                    let b = level.b[id.row];
                    let target = (a * &primal.x)[0];
                    if !violated(target, b, options.feas_tol) {
                        continue;
                    }
                    let now = (a * &x)[0];
                    let ad = target - now;
                    let t = ((now - b).max(T::zero()) / -ad).min(T::one());
                    if t < tau {
                        tau = t;
                        blocking = Some(id);
                    }
                }
                if let Some(id) = blocking {
                    x += d * tau;
                    active.insert(id);
                    continue;
                }
                x = primal.x.clone();

                if !seen.insert(active.iter().copied().collect()) {
                    return Err(WhqpError::CycleDetected { level: h });
                }
                let mu = ewhqp_dual_all(&norm, &primal, h)?;
                let scale = mu
                    .values()
                    .fold(T::one(), |acc, m| acc.max(T::one() + m.abs()));
                let thresh = options.dual_tol * scale;
                let release = mu.iter().find(|(id, &m)| {
                    norm.kind(**id) == RowKind::Ge && !locked.contains(*id) && m < -thresh
                });
                if let Some((&id, _)) = release {
                    active.remove(&id);
                    continue;
                }
                for (&id, &m) in &mu {
                    if norm.kind(id) == RowKind::Ge && m > thresh {
                        locked.insert(id);
                    }
                }
                lambda = mu;
                break;
            }
        }
    }

    let primal = ewhqp_primal(&norm, &active, &metric, options.rank_tol)?;
    Ok(ActiveSearchState {
        hierarchy: norm,
        active,
        locked,
        eta: primal.eta,
        x: primal.x,
        lambda,
        factors: primal.factors,
        rows: primal.rows,
        v: primal.v,
        w: primal.w,
        iterations,
    })
}
