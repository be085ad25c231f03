//! Seeded property suites shared by the `verify` command and the acceptance tests.
//!
//! Each suite draws its instances from a ChaCha stream selected by the
//! instance index, so results do not depend on how instances are spread over
//! threads. Every property reports the largest residual it observed.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::controller::split_gamma;
use crate::decomp::{cholesky, cod_rate, compact_cod, sorted_qr, DEFAULT_RANK_TOL};
use crate::robot::{christoffel_coriolis, parse_chain, RobotState, SerialChain};
use crate::sim::{
    integrate, spiral_box_scenario, HierarchicalController, Integrator, Scenario, ScenarioFile,
    SimError, BUNDLED_CHAIN,
};
use crate::whqp::{
    active_search, oracle_lex_solve, random_hierarchy, Hierarchy, RandomHierarchyConfig,
    SearchOptions,
};
use crate::wmpi::{build_projected_stack, projector, wmpi, WeightPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Decomp,
    Wmpi,
    Whqp,
    Robot,
    Controller,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Decomp => "decomp",
            Suite::Wmpi => "wmpi",
            Suite::Whqp => "whqp",
            Suite::Robot => "robot",
            Suite::Controller => "controller",
            Suite::All => "all",
        }
    }

    /// Instance count used when the caller does not pick one.
    pub fn default_count(self) -> usize {
        match self {
            Suite::Decomp => 200,
            Suite::Wmpi => 500,
            Suite::Whqp => 1000,
            Suite::Robot => 100,
            Suite::Controller => 30,
            Suite::All => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownSuite(pub String);

impl fmt::Display for UnknownSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unknown suite '{}' (decomp, wmpi, whqp, robot, controller or all)",
            self.0
        )
    }
}

impl std::error::Error for UnknownSuite {}

impl FromStr for Suite {
    type Err = UnknownSuite;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "decomp" => Suite::Decomp,
            "wmpi" => Suite::Wmpi,
            "whqp" => Suite::Whqp,
            "robot" => Suite::Robot,
            "controller" => Suite::Controller,
            "all" => Suite::All,
            other => return Err(UnknownSuite(other.to_string())),
        })
    }
}

/// Outcome of one property over all instances.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub suite: &'static str,
    pub name: &'static str,
    pub threshold: f64,
    pub instances: usize,
    /// Instances where the property did not apply (for example a finite
    /// difference straddling a pivot change).
    pub skipped: usize,
    pub max_residual: f64,
    /// Indices of failing instances, with the error text when one occurred.
    pub failures: Vec<(usize, String)>,
}

impl PropertyCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Residual of one property on one instance; `None` when it does not apply.
type Sample = Option<f64>;

/// Runs `count` instances of `f` in parallel and folds the samples per property.
fn collect<F>(
    suite: &'static str,
    props: &[(&'static str, f64)],
    seed: u64,
    count: usize,
    f: F,
) -> Vec<PropertyCheck>
where
    F: Fn(&mut ChaCha8Rng) -> Result<Vec<Sample>, String> + Sync,
{
    let results: Vec<Result<Vec<Sample>, String>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            f(&mut rng)
        })
        .collect();
    props
        .iter()
        .enumerate()
        .map(|(p, &(name, threshold))| {
            let mut check = PropertyCheck {
                suite,
                name,
                threshold,
                instances: count,
                skipped: 0,
                max_residual: 0.0,
                failures: Vec::new(),
            };
            for (i, r) in results.iter().enumerate() {
                match r {
                    Err(e) => check.failures.push((i, e.clone())),
                    Ok(samples) => match samples[p] {
                        None => check.skipped += 1,
                        Some(v) => {
                            if !(v <= threshold) {
                                check.failures.push((i, format!("residual {v:.3e}")));
                            }
                            if v.is_nan() || v > check.max_residual {
                                check.max_residual = if v.is_nan() { f64::INFINITY } else { v };
                            }
                        }
                    },
                }
            }
            check
        })
        .collect()
}

fn random(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_rank(rng: &mut ChaCha8Rng, m: usize, n: usize, r: usize) -> DMatrix<f64> {
    random(rng, m, r) * random(rng, r, n)
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = random(rng, n, n);
    a.tr_mul(&a) + DMatrix::identity(n, n) * rng.gen_range(0.2..1.0)
}

/// `‖x‖ / ‖reference‖`, or `‖x‖` when the reference vanishes.
fn rel(x: f64, reference: f64) -> f64 {
    if reference > 0.0 {
        x / reference
    } else {
        x
    }
}

fn orthonormal_defect(x: &DMatrix<f64>) -> f64 {
    (x.tr_mul(x) - DMatrix::identity(x.ncols(), x.ncols())).norm()
}

fn skew_defect(x: &DMatrix<f64>) -> f64 {
    (x + x.transpose()).norm()
}

pub fn decomp_suite(seed: u64, count: usize) -> Vec<PropertyCheck> {
    let props = [
        ("cholesky reconstruction (relative)", 1e-12),
        ("sorted QR reconstruction (relative)", 1e-12),
        ("sorted QR diagonal non-increasing", 0.0),
        ("COD reconstruction (relative)", 1e-11),
        ("COD orthonormality of U, Y, [Y Ztilde]", 1e-12),
        ("COD rate product rule, rotation family (relative)", 1e-8),
        ("COD rate vs finite differences (gauge aligned)", 1e-5),
        ("COD rate skew blocks and gauge", 1e-10),
    ];
    collect("decomp", &props, seed, count, |rng| {
        let n = rng.gen_range(1..=8);
        let w = random_spd(rng, n);
        let chol = cholesky(&w).map_err(|e| e.to_string())?;
        let s_chol = rel((chol.reconstruct() - &w).norm(), w.norm());

        let m = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=8);
        let r = rng.gen_range(0..=m.min(n));
        let a = random_rank(rng, m, n, r);
        let qr = sorted_qr(&a);
        let s_qr = rel((&qr.q * &qr.r - qr.permute_columns(&a)).norm(), a.norm());
        let diag: Vec<f64> = (0..m.min(n)).map(|i| qr.r[(i, i)].abs()).collect();
        let s_sorted = diag
            .windows(2)
            .map(|p| (p[1] - p[0]).max(0.0))
            .fold(0.0, f64::max);

        let cod = compact_cod(&a, DEFAULT_RANK_TOL);
        let s_rec = rel((cod.reconstruct() - &a).norm(), a.norm());
        let mut full = DMatrix::zeros(n, n);
        full.columns_mut(0, cod.rank).copy_from(&cod.y);
        full.columns_mut(cod.rank, n - cod.rank)
            .copy_from(&cod.ztilde);
        let s_orth = orthonormal_defect(&cod.u)
            .max(orthonormal_defect(&cod.y))
            .max(orthonormal_defect(&full));

        // A(t) = G(t) A with G(t) = exp(t S), S skew: Ȧ(0) = S A.
        let s = random(rng, m, m);
        let s = &s - s.transpose();
        let adot = &s * &a;
        let rates = cod_rate(&a, &adot, &cod).map_err(|e| e.to_string())?;
        let product = &rates.du * &cod.l * cod.y.transpose()
            + &cod.u * &rates.dl * cod.y.transpose()
            + &cod.u * &cod.l * rates.dy.transpose();
        let s_prod = if cod.rank > 0 {
            Some(rel((product - &adot).norm(), adot.norm()))
        } else {
            None
        };
        let s_skew = skew_defect(&cod.u.tr_mul(&rates.du))
            .max(skew_defect(&cod.y.tr_mul(&rates.dy)))
            .max(cod.ztilde.tr_mul(&rates.dztilde).norm())
            .max((rates.dy.tr_mul(&cod.ztilde) + cod.y.tr_mul(&rates.dztilde)).norm());

        let s_fd = fd_cod_sample(rng);
        Ok(vec![
            Some(s_chol),
            Some(s_qr),
            Some(s_sorted),
            Some(s_rec),
            Some(s_orth),
            s_prod,
            s_fd,
            Some(s_skew),
        ])
    })
}

/// Central differences of the COD factors along `A₀ + t A₁` (rank kept by a
/// fixed right factor). Paths whose pivots or rank change within the stencil,
/// or whose `L` is badly conditioned, are redrawn. The kernel basis is
/// compared through its component along `Y`, the part the gauge does not fix.
fn fd_cod_sample(rng: &mut ChaCha8Rng) -> Option<f64> {
    (0..50).find_map(|_| fd_cod_attempt(rng))
}

fn fd_cod_attempt(rng: &mut ChaCha8Rng) -> Option<f64> {
    let m = rng.gen_range(1..=6);
    let n = rng.gen_range(1..=6);
    let r = rng.gen_range(1..=m.min(n));
    let c = random(rng, r, n);
    let b0 = random(rng, m, r);
    let b1 = random(rng, m, r);
    let at = |t: f64| (&b0 + &b1 * t) * &c;
    let h = 1e-5;
    let cod = compact_cod(&at(0.0), DEFAULT_RANK_TOL);
    let plus = compact_cod(&at(h), DEFAULT_RANK_TOL);
    let minus = compact_cod(&at(-h), DEFAULT_RANK_TOL);
    let k = cod.rank;
    let same = |o: &crate::decomp::CompactCod<f64>| o.rank == k && o.perm()[..k] == cod.perm()[..k];
    if !same(&plus) || !same(&minus) {
        return None;
    }
    let lmin = (0..k)
        .map(|i| cod.l[(i, i)].abs())
        .fold(f64::INFINITY, f64::min);
    if lmin < 1e-2 {
        return None;
    }
    let rates = cod_rate(&at(0.0), &(&b1 * &c), &cod).ok()?;
    let fd = |p: &DMatrix<f64>, q: &DMatrix<f64>| (p - q) / (2.0 * h);
    let e_u = (&rates.du - fd(&plus.u, &minus.u)).norm();
    let e_l = (&rates.dl - fd(&plus.l, &minus.l)).norm();
    let e_y = (&rates.dy - fd(&plus.y, &minus.y)).norm();
    let e_z =
        (cod.y.tr_mul(&rates.dztilde) - cod.y.tr_mul(&fd(&plus.ztilde, &minus.ztilde))).norm();
    Some(e_u.max(e_l).max(e_y).max(e_z))
}

pub fn wmpi_suite(seed: u64, count: usize) -> Vec<PropertyCheck> {
    let mut out = penrose_suite(seed, count);
    out.extend(stack_suite(seed.wrapping_add(1), (count * 2 / 5).max(1)));
    out
}

pub fn penrose_suite(seed: u64, count: usize) -> Vec<PropertyCheck> {
    let props = [
        ("WMPI: A X A = A (relative)", 1e-9),
        ("WMPI: X A X = X (relative)", 1e-9),
        ("WMPI: W1 A X symmetric (relative)", 1e-9),
        ("WMPI: W0 X A symmetric (relative)", 1e-9),
    ];
    collect("wmpi", &props, seed, count, |rng| {
        let m = rng.gen_range(1..=12);
        let n = rng.gen_range(1..=12);
        let r = rng.gen_range(0..=m.min(n));
        let a = random_rank(rng, m, n, r);
        let weights = WeightPair {
            w1: random_spd(rng, m),
            w0: random_spd(rng, n),
        };
        let x = wmpi(&a, &weights, DEFAULT_RANK_TOL).map_err(|e| e.to_string())?;
        Ok(penrose_residuals(&a, &x, &weights.w1, &weights.w0)
            .into_iter()
            .map(Some)
            .collect())
    })
}

/// Relative residuals of the four weighted Penrose conditions.
fn penrose_residuals(
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    w1: &DMatrix<f64>,
    w0: &DMatrix<f64>,
) -> [f64; 4] {
    let ax = a * x;
    let xa = x * a;
    let s1 = w1 * &ax;
    let s0 = w0 * &xa;
    [
        rel((&ax * a - a).norm(), a.norm()),
        rel((&xa * x - x).norm(), x.norm()),
        rel((&s1 - s1.transpose()).norm(), s1.norm()),
        rel((&s0 - s0.transpose()).norm(), s0.norm()),
    ]
}

pub fn stack_suite(seed: u64, count: usize) -> Vec<PropertyCheck> {
    let props = [
        ("stack: P_k idempotent", 1e-9),
        ("stack: P_kᵀ M = M P_k (relative to ‖M‖)", 1e-9),
        ("stack: P_k P_j = P_j P_k = P_k for j < k", 1e-9),
        ("stack: A_j Ā_k⁺ = 0 for j < k (relative to ‖A_j‖)", 1e-9),
        ("stack: A Ā⁺ block lower triangular", 1e-9),
        ("stack: Z_kᵀ M Z_k = E", 1e-9),
        ("stack: [Ā_k⁺] is the WMPI of the projected stack", 1e-9),
    ];
    collect("wmpi", &props, seed, count, |rng| {
        let n = rng.gen_range(2..=8);
        let depth = rng.gen_range(3..=4);
        let m = random_spd(rng, n);
        let levels: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..depth)
            .map(|_| {
                let mk = rng.gen_range(1..=n);
                let rk = rng.gen_range(1..=mk);
                (random_rank(rng, mk, n, rk), random_spd(rng, mk))
            })
            .collect();
        let stack =
            build_projected_stack(&levels, &m, DEFAULT_RANK_TOL).map_err(|e| e.to_string())?;
        let p: Vec<DMatrix<f64>> = (0..=depth)
            .map(|k| projector(&stack, k))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let mut idem = 0.0f64;
        let mut sym = 0.0f64;
        let mut nest = 0.0f64;
        for k in 0..=depth {
            idem = idem.max((&p[k] * &p[k] - &p[k]).norm());
            sym = sym.max(rel((p[k].transpose() * &m - &m * &p[k]).norm(), m.norm()));
            for j in 0..k {
                nest = nest
                    .max((&p[k] * &p[j] - &p[k]).norm())
                    .max((&p[j] * &p[k] - &p[k]).norm());
            }
        }
        let mut annihilate = 0.0f64;
        let mut orth = 0.0f64;
        for (k, level) in stack.levels.iter().enumerate() {
            for (a, _) in levels.iter().take(k) {
                annihilate = annihilate.max(rel((a * &level.pinv).norm(), a.norm()));
            }
            let z = &level.zprev;
            orth =
                orth.max((z.transpose() * &m * z - DMatrix::identity(z.ncols(), z.ncols())).norm());
        }
        // Block lower triangularity of A Ā⁺ over the stacked raw rows.
        let a_all = DMatrix::from_fn(levels.iter().map(|l| l.0.nrows()).sum(), n, |i, j| {
            let mut i = i;
            for (a, _) in &levels {
                if i < a.nrows() {
                    return a[(i, j)];
                }
                i -= a.nrows();
            }
            unreachable!()
        });
        let prod = &a_all * stack.stacked_pinv();
        let mut tri = 0.0f64;
        let mut r0 = 0;
        for (j, (aj, _)) in levels.iter().enumerate() {
            let mut c0 = 0;
            for (k, (ak, _)) in levels.iter().enumerate() {
                if k > j {
                    tri = tri.max(prod.view((r0, c0), (aj.nrows(), ak.nrows())).norm());
                }
                c0 += ak.nrows();
            }
            r0 += aj.nrows();
        }
        // Projected stack [A_1; A_2 P_1; ...] with block-diagonal weight.
        let projected: Vec<DMatrix<f64>> = levels
            .iter()
            .enumerate()
            .map(|(k, (a, _))| a * &p[k])
            .collect();
        let rows: usize = projected.iter().map(|a| a.nrows()).sum();
        let mut abar = DMatrix::zeros(rows, n);
        let mut w = DMatrix::zeros(rows, rows);
        let mut o = 0;
        for (ak, (_, wk)) in projected.iter().zip(&levels) {
            abar.rows_mut(o, ak.nrows()).copy_from(ak);
            w.view_mut((o, o), wk.shape()).copy_from(wk);
            o += ak.nrows();
        }
        let stacked = penrose_residuals(&abar, &stack.stacked_pinv(), &w, &m)
            .into_iter()
            .fold(0.0, f64::max);
        Ok(vec![
            Some(idem),
            Some(sym),
            Some(nest),
            Some(annihilate),
            Some(tri),
            Some(orth),
            Some(stacked),
        ])
    })
}

/// Values `a x` of the rows the oracle pins, paired with the oracle's values.
fn pinned_gap(
    h: &Hierarchy<f64>,
    x: &DVector<f64>,
    pinned: &[Vec<bool>],
    x_ref: &DVector<f64>,
    only_zero_slack: Option<&[f64]>,
) -> f64 {
    let norm = h.normalize().expect("validated hierarchy");
    let mut gap = 0.0f64;
    for (k, level) in norm.levels.iter().enumerate() {
        if only_zero_slack.is_some_and(|obj| obj[k] > 1e-20) {
            continue;
        }
        let pinned_rows = pinned[k].iter().enumerate().filter(|(_, &p)| p);
        for (i, _) in pinned_rows {
            let a = level.a.row(i);
            let (u, v) = ((a * x)[0], (a * x_ref)[0]);
            gap = gap.max((u - v).abs() / v.abs().max(1.0));
        }
    }
    gap
}

fn objective_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn whqp_suite(seed: u64, count: usize) -> Vec<PropertyCheck> {
    let props = [
        ("active search vs oracle: objective vector", 1e-8),
        (
            "active search vs oracle: pinned rows on zero-slack levels",
            1e-8,
        ),
        (
            "W = E, M = E: objective vector vs identity-weight oracle",
            1e-8,
        ),
        ("W = E, M = E: pinned rows vs identity-weight oracle", 1e-8),
        ("scaled W_k: objectives scale with the level factor", 1e-8),
        ("scaled W_k: zero-slack level values A_k x unchanged", 1e-9),
    ];
    collect("whqp", &props, seed, count, |rng| {
        let err = |e: crate::whqp::WhqpError| e.to_string();
        let h = random_hierarchy(rng, &RandomHierarchyConfig::default());
        let state = active_search(&h, &SearchOptions::default()).map_err(err)?;
        let oracle = oracle_lex_solve(&h).map_err(err)?;
        let obj = state.objective_vector();
        let s_obj = objective_gap(&obj, &oracle.objective);
        let s_pin = pinned_gap(
            &h,
            &state.x,
            &oracle.pinned,
            &oracle.x,
            Some(&oracle.objective),
        );

        let plain = random_hierarchy(
            rng,
            &RandomHierarchyConfig {
                weighted: false,
                ..RandomHierarchyConfig::default()
            },
        );
        let options = SearchOptions {
            metric: Some(DMatrix::identity(plain.n, plain.n)),
            ..SearchOptions::default()
        };
        let ps = active_search(&plain, &options).map_err(err)?;
        let po = oracle_lex_solve(&plain).map_err(err)?;
        let s_plain = objective_gap(&ps.objective_vector(), &po.objective);
        let s_plain_pin = pinned_gap(&plain, &ps.x, &po.pinned, &po.x, None);

        let factors: Vec<f64> = h.levels.iter().map(|_| rng.gen_range(0.1..10.0)).collect();
        let mut scaled = h.clone();
        for (level, c) in scaled.levels.iter_mut().zip(&factors) {
            level.w *= *c;
        }
        let ss = active_search(&scaled, &SearchOptions::default()).map_err(err)?;
        let expected: Vec<f64> = obj.iter().zip(&factors).map(|(o, c)| o * c).collect();
        let s_scale = objective_gap(&ss.objective_vector(), &expected);
        let s_scale_pin = pinned_gap(&h, &ss.x, &oracle.pinned, &state.x, Some(&oracle.objective));
        Ok(vec![
            Some(s_obj),
            Some(s_pin),
            Some(s_plain),
            Some(s_plain_pin),
            Some(s_scale),
            Some(s_scale_pin),
        ])
    })
}

fn bundled_chain() -> SerialChain<f64> {
    parse_chain(BUNDLED_CHAIN).expect("bundled chain parses")
}

fn random_state(
    rng: &mut ChaCha8Rng,
    chain: &SerialChain<f64>,
    center: &DVector<f64>,
    spread: f64,
    speed: f64,
) -> RobotState<f64> {
    let n = chain.dof();
    RobotState {
        q: center + DVector::from_fn(n, |_, _| rng.gen_range(-spread..spread)),
        dq: DVector::from_fn(n, |_, _| rng.gen_range(-speed..speed)),
    }
}

/// Kinetic energy drift of gravity-compensated free motion over `duration`.
pub fn energy_drift(
    chain: &SerialChain<f64>,
    state: &RobotState<f64>,
    dt: f64,
    duration: f64,
) -> Result<f64, SimError> {
    let e0 = chain.kinetic_energy(state)?;
    let mut s = state.clone();
    let steps = (duration / dt).round() as usize;
    let mut worst = 0.0f64;
    for _ in 0..steps {
        s = integrate(chain, &s, dt, Integrator::Rk4, |x| Ok(chain.gravity(&x.q)?))?;
        worst = worst.max((chain.kinetic_energy(&s)? - e0).abs());
    }
    Ok(worst)
}

pub fn robot_suite(seed: u64, count: usize) -> Vec<PropertyCheck> {
    let props = [
        ("‖Ṁ − C − Cᵀ‖ with analytic partials", 1e-10),
        ("‖Ṁ − C − Cᵀ‖ with finite-difference partials", 1e-6),
        ("gravity vs finite-difference potential gradient", 1e-6),
        (
            "M symmetric positive definite (negated smallest eigenvalue)",
            0.0,
        ),
        (
            "kinetic energy drift under gravity compensation, 1 s (J)",
            1e-6,
        ),
    ];
    let chain = bundled_chain();
    let q0 = DVector::from_vec(ScenarioFile::default().q0);
    collect("robot", &props, seed, count, |rng| {
        let err = |e: crate::robot::RobotError| e.to_string();
        let state = random_state(rng, &chain, &q0, 1.0, 1.0);
        let n = chain.dof();
        let mdot = chain.mass_matrix_rate(&state).map_err(err)?;
        let c = chain.coriolis_matrix(&state).map_err(err)?;
        let s_pass = (&mdot - &c - c.transpose()).norm();

        let h = 1e-6;
        let shifted = |k: usize, s: f64| {
            let mut q = state.q.clone();
            q[k] += s;
            q
        };
        let mut partials = Vec::with_capacity(n);
        let mut grad = DVector::zeros(n);
        for k in 0..n {
            let mp = chain.mass_matrix(&shifted(k, h)).map_err(err)?;
            let mm = chain.mass_matrix(&shifted(k, -h)).map_err(err)?;
            partials.push((mp - mm) / (2.0 * h));
            grad[k] = (chain.potential_energy(&shifted(k, h)).map_err(err)?
                - chain.potential_energy(&shifted(k, -h)).map_err(err)?)
                / (2.0 * h);
        }
        let mdot_fd = partials
            .iter()
            .zip(state.dq.iter())
            .fold(DMatrix::zeros(n, n), |acc, (p, v)| acc + p * *v);
        let c_fd = christoffel_coriolis(&partials, &state.dq);
        let s_pass_fd = (&mdot_fd - &c_fd - c_fd.transpose()).norm();
        let s_grav = (chain.gravity(&state.q).map_err(err)? - grad).norm();
        let m = chain.mass_matrix(&state.q).map_err(err)?;
        let s_spd = -m.symmetric_eigenvalues().min() + (&m - m.transpose()).norm();

        // The energy run is the slow part; sample it on a tenth of the instances.
        let s_energy = if rng.gen_range(0..10) == 0 {
            Some(energy_drift(&chain, &state, 1e-3, 1.0).map_err(|e| e.to_string())?)
        } else {
            None
        };
        Ok(vec![
            Some(s_pass),
            Some(s_pass_fd),
            Some(s_grav),
            Some(s_spd.max(0.0)),
            s_energy,
        ])
    })
}

pub fn controller_suite(seed: u64, count: usize) -> Vec<PropertyCheck> {
    let props = [
        ("F F⁻¹ = E", 1e-9),
        ("F⁻ᵀ M F⁻¹ = E", 1e-9),
        ("Γ + Γᵀ = 0", 1e-8),
        ("Γ_d and Γ_s skew", 1e-8),
        ("momentum identity ξ_k = L⁻¹UᵀR Ā_k q̇", 1e-9),
        ("½ ξᵀξ equals the kinetic energy (relative)", 1e-9),
        ("dF⁻¹ vs finite differences (relative)", 1e-4),
        ("dξʳ vs finite differences (relative)", 1e-4),
    ];
    let chain = bundled_chain();
    let file = ScenarioFile::default();
    let scenario = spiral_box_scenario(chain, &file).expect("default scenario is valid");
    let q0 = scenario.initial.q.clone();
    collect("controller", &props, seed, count, |rng| {
        let state = random_state(rng, &scenario.chain, &q0, 0.3, 0.5);
        let t = rng.gen_range(0.0..file.duration);
        controller_sample(&scenario, &state, t).map_err(|e| e.to_string())
    })
}

fn controller_sample(
    scenario: &Scenario<f64>,
    state: &RobotState<f64>,
    t: f64,
) -> Result<Vec<Sample>, SimError> {
    let chain = &scenario.chain;
    let n = chain.dof();
    let step = HierarchicalController::new().compute(scenario, state, t)?;
    let tr = &step.transform;
    let m = chain.mass_matrix(&state.q)?;
    let eye = DMatrix::<f64>::identity(n, n);
    let s_ffinv = (&tr.f * &tr.finv - &eye).norm();
    let s_inertia = tr.inertia_residual(&m);
    let s_skew = tr.skew_residual();
    let (gd, gs) = split_gamma(&tr.gamma, &tr.blocks)?;
    let s_split = skew_defect(&gd).max(skew_defect(&gs));

    let mut s_momentum = 0.0f64;
    for lt in tr.levels.iter().filter(|l| l.rank > 0) {
        let projected = &lt.a * &lt.zprev * lt.zprev.tr_mul(&(&m * &state.dq));
        let rhs = lt.u.tr_mul(&(&lt.r * projected));
        let expected = lt.l.solve_lower_triangular(&rhs).expect("nonsingular L");
        s_momentum = s_momentum.max((tr.level_xi(lt.level) - expected).norm());
    }
    let ke = chain.kinetic_energy(state)?;
    let s_energy = rel((0.5 * tr.xi.norm_squared() - ke).abs(), ke);

    // F⁻¹ and ξʳ depend on (q, t) only; difference along (q + s q̇, t + s).
    let h = 1e-6;
    let at = |s: f64| -> Result<_, SimError> {
        let shifted = RobotState {
            q: &state.q + &state.dq * s,
            dq: state.dq.clone(),
        };
        HierarchicalController::new().compute(scenario, &shifted, t + s)
    };
    let (plus, minus) = (at(h)?, at(-h)?);
    let (s_dfinv, s_dxi) = if plus.active == step.active
        && minus.active == step.active
        && plus.ranks == step.ranks
        && minus.ranks == step.ranks
    {
        let fd_finv = (&plus.transform.finv - &minus.transform.finv) / (2.0 * h);
        let fd_xi = (&plus.xi_r - &minus.xi_r) / (2.0 * h);
        (
            Some(rel(
                (&tr.dfinv - &fd_finv).norm(),
                fd_finv.norm().max(tr.finv.norm()),
            )),
            Some(rel(
                (&step.dxi_r - &fd_xi).norm(),
                fd_xi.norm().max(step.xi_r.norm()),
            )),
        )
    } else {
        (None, None)
    };
    Ok(vec![
        Some(s_ffinv),
        Some(s_inertia),
        Some(s_skew),
        Some(s_split),
        Some(s_momentum),
        Some(s_energy),
        s_dfinv,
        s_dxi,
    ])
}

/// Runs a suite; `count` of `None` uses the suite's default.
pub fn run_suite(suite: Suite, seed: u64, count: Option<usize>) -> Vec<PropertyCheck> {
    let c = |s: Suite| count.unwrap_or(s.default_count());
    match suite {
        Suite::Decomp => decomp_suite(seed, c(suite)),
        Suite::Wmpi => wmpi_suite(seed, c(suite)),
        Suite::Whqp => whqp_suite(seed, c(suite)),
        Suite::Robot => robot_suite(seed, c(suite)),
        Suite::Controller => controller_suite(seed, c(suite)),
        Suite::All => [
            Suite::Decomp,
            Suite::Wmpi,
            Suite::Whqp,
            Suite::Robot,
            Suite::Controller,
        ]
        .into_iter()
        .flat_map(|s| run_suite(s, seed, count))
        .collect(),
    }
}
