//! Shifted solves `(M - z)^{-1}`, resolvent powers, weighted operator norms,
//! the analytic free kernel in three dimensions and low-frequency sweeps.

use crate::error::{invalid, Error, Result};
use crate::fit::{self, PowerFit};
use crate::lattice::{weight_vector, DiscreteOperator, EigenOracle, FlatSpectral, GridFunction};
use crate::vecops;
use crate::C64;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

pub const NORM_SEED: u64 = 0xB0C1;
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Spectral parameter `z = λ + iε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub lambda: f64,
    pub eps: f64,
}

impl ShiftSpec {
    pub fn new(lambda: f64, eps: f64) -> Result<Self> {
        if eps == 0.0 || !eps.is_finite() || !lambda.is_finite() {
            return Err(invalid(format!("shift needs a finite nonzero imaginary part, got {eps}")));
        }
        Ok(ShiftSpec { lambda, eps })
    }

    pub fn z(&self) -> C64 {
        C64::new(self.lambda, self.eps)
    }

    pub fn conj(&self) -> Self {
        ShiftSpec { lambda: self.lambda, eps: -self.eps }
    }

    /// `+1` above the real axis, `-1` below.
    pub fn side(&self) -> i8 {
        if self.eps > 0.0 {
            1
        } else {
            -1
        }
    }

    /// `|λ| ≥ 4 λ_box`.
    pub fn in_window(&self, lambda_box: f64) -> bool {
        self.lambda.abs() >= 4.0 * lambda_box
    }
}

/// Square root with positive imaginary part, defined off `[0, ∞)`.
pub fn sqrt_upper(z: C64) -> Result<C64> {
    let s = z.sqrt();
    let s = if s.im < 0.0 { -s } else { s };
    if !(s.im > 0.0) {
        return Err(Error::BranchViolation(format!("Im z^(1/2) = {} for z = {z}", s.im)));
    }
    Ok(s)
}

/// Kernel of `(-Δ - z)^{-power}` on `ℝ³` at distance `r`.
pub fn free_kernel(z: C64, r: f64, power: u32) -> Result<C64> {
    free_kernel_with_root(sqrt_upper(z)?, r, power)
}

/// Boundary value at `z = λ + i0` for `λ > 0`.
pub fn free_kernel_boundary(lambda: f64, r: f64, power: u32) -> Result<C64> {
    if !(lambda > 0.0) {
        return Err(invalid("boundary value needs λ > 0"));
    }
    free_kernel_with_root(C64::new(lambda.sqrt(), 0.0), r, power)
}

fn free_kernel_with_root(k: C64, r: f64, power: u32) -> Result<C64> {
    if !(r > 0.0) {
        return Err(invalid("kernel distance must be positive"));
    }
    let phase = (C64::i() * k * r).exp();
    match power {
        1 => Ok(phase / (4.0 * PI * r)),
        2 => Ok(C64::i() * phase / (8.0 * PI * k)),
        _ => Err(invalid(format!("kernel power {power} not in {{1, 2}}"))),
    }
}

/// `sup_r |K(r)|` over the given radii, i.e. the `L¹ → L^∞` norm of the convolution.
pub fn free_l1_linf(lambda: f64, power: u32, radii: &[f64]) -> Result<f64> {
    let mut best: f64 = 0.0;
    for &r in radii {
        best = best.max(free_kernel_boundary(lambda, r, power)?.norm());
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    pub restarts: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmresParams {
    pub restart: usize,
    pub max_restarts: usize,
}

impl Default for GmresParams {
    fn default() -> Self {
        GmresParams { restart: 60, max_restarts: 20 }
    }
}

/// Restarted right-preconditioned GMRES for complex systems.
pub fn gmres(
    apply: &(dyn Fn(&[C64], &mut [C64]) + Sync),
    precond: &(dyn Fn(&[C64]) -> Vec<C64> + Sync),
    b: &[C64],
    tol: f64,
    params: GmresParams,
) -> Result<(Vec<C64>, SolveStats)> {
    let n = b.len();
    let bnorm = vecops::norm(b);
    let mut x = vec![ZERO; n];
    let mut stats = SolveStats::default();
    if bnorm == 0.0 {
        return Ok((x, stats));
    }
    let m = params.restart.max(1);
    let mut r = vec![ZERO; n];
    let mut w = vec![ZERO; n];
    for cycle in 0..=params.max_restarts {
        apply(&x, &mut r);
        r.par_iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let beta = vecops::norm(&r);
        stats.residual = beta / bnorm;
        stats.restarts = cycle;
        if stats.residual <= tol {
            return Ok((x, stats));
        }
        if cycle == params.max_restarts {
            break;
        }
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![ZERO; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![ZERO; m];
        let mut g = vec![ZERO; m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k = 0;
        for j in 0..m {
            let zj = precond(&basis[j]);
            apply(&zj, &mut w);
            for (i, v) in basis.iter().enumerate() {
                let hij = vecops::dot(v, &w);
                h[i][j] = hij;
                vecops::axpy(-hij, v, &mut w);
            }
            let hn = vecops::norm(&w);
            h[j + 1][j] = C64::new(hn, 0.0);
            for i in 0..j {
                let (u, v) = (h[i][j], h[i + 1][j]);
                h[i][j] = u * cs[i] + sn[i] * v;
                h[i + 1][j] = -sn[i].conj() * u + v * cs[i];
            }
            let (a, bb) = (h[j][j], h[j + 1][j]);
            let denom = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if a.norm() == 0.0 {
                cs[j] = 0.0;
                sn[j] = C64::new(1.0, 0.0);
            } else {
                cs[j] = a.norm() / denom;
                sn[j] = (bb.conj() / a.conj()) * cs[j];
            }
            h[j][j] = cs[j] * a + sn[j] * bb;
            h[j + 1][j] = ZERO;
            g[j + 1] = -sn[j].conj() * g[j];
            g[j] *= cs[j];
            stats.iterations += 1;
            k = j + 1;
            if g[j + 1].norm() / bnorm <= tol * 0.5 || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        let mut y = vec![ZERO; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for l in i + 1..k {
                s -= h[i][l] * y[l];
            }
            y[i] = s / h[i][i];
        }
        let mut comb = vec![ZERO; n];
        for (yi, v) in y.iter().zip(&basis) {
            vecops::axpy(*yi, v, &mut comb);
        }
        let dx = precond(&comb);
        vecops::axpy(C64::new(1.0, 0.0), &dx, &mut x);
    }
    Err(Error::SolverNotConverged { residual: stats.residual, iterations: stats.iterations })
}

/// How `(M - z)^{-1}` is realized.
#[derive(Clone, Debug)]
pub enum Backend {
    /// exact diagonalization of constant-coefficient operators
    Spectral(Arc<FlatSpectral>),
    /// GMRES preconditioned by the flat resolvent at the same shift
    Krylov(Arc<FlatSpectral>),
    /// GMRES with the diagonal `diag(M) - z`
    Diagonal(Vec<f64>),
    /// dense eigendecomposition
    Dense(Arc<EigenOracle>),
}

/// Resolvent engine attached to one operator.
#[derive(Clone, Debug)]
pub struct Resolvent {
    pub op: Arc<DiscreteOperator>,
    pub backend: Backend,
    pub params: GmresParams,
}

impl Resolvent {
    /// Spectral path for flat operators, preconditioned GMRES otherwise.
    pub fn new(op: DiscreteOperator) -> Self {
        let sp = Arc::new(FlatSpectral::new(&op.grid));
        let backend = if op.flat { Backend::Spectral(sp) } else { Backend::Krylov(sp) };
        Resolvent { op: Arc::new(op), backend, params: GmresParams::default() }
    }

    pub fn with_backend(op: Arc<DiscreteOperator>, backend: Backend) -> Self {
        Resolvent { op, backend, params: GmresParams::default() }
    }

    pub fn diagonal(op: DiscreteOperator) -> Self {
        let d = op.matrix.diagonal();
        Resolvent { op: Arc::new(op), backend: Backend::Diagonal(d), params: GmresParams::default() }
    }

    pub fn dense(op: DiscreteOperator, oracle: EigenOracle) -> Self {
        Resolvent { op: Arc::new(op), backend: Backend::Dense(Arc::new(oracle)), params: GmresParams::default() }
    }

    pub fn len(&self) -> usize {
        self.op.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `u = (M - z)^{-1} f` with `‖(M - z)u - f‖ ≤ tol ‖f‖`.
    pub fn solve(&self, z: C64, f: &[C64], tol: f64) -> Result<(Vec<C64>, SolveStats)> {
        if z.im == 0.0 && z.re >= 0.0 {
            return Err(invalid("shift on the nonnegative real axis"));
        }
        match &self.backend {
            Backend::Spectral(sp) => {
                let u = sp.resolvent(f, z);
                Ok((u, SolveStats { iterations: 0, residual: 0.0, restarts: 0 }))
            }
            Backend::Dense(o) => {
                let u = o.apply(f, |l| 1.0 / (C64::new(l, 0.0) - z));
                Ok((u, SolveStats::default()))
            }
            Backend::Krylov(sp) => {
                let apply = |x: &[C64], y: &mut [C64]| self.shifted_apply(z, x, y);
                let pre = |v: &[C64]| sp.resolvent(v, z);
                gmres(&apply, &pre, f, tol, self.params)
            }
            Backend::Diagonal(d) => {
                let apply = |x: &[C64], y: &mut [C64]| self.shifted_apply(z, x, y);
                let pre = |v: &[C64]| v.iter().zip(d).map(|(a, di)| a / (C64::new(*di, 0.0) - z)).collect();
                gmres(&apply, &pre, f, tol, self.params)
            }
        }
    }

    /// `y = (M - z) x`.
    pub fn shifted_apply(&self, z: C64, x: &[C64], y: &mut [C64]) {
        self.op.apply_into(x, y);
        y.par_iter_mut().zip(x).for_each(|(yi, xi)| *yi -= z * xi);
    }

    /// `Σ_k w_k (M - z_k)^{-1} f` for quadrature-weighted shifts. Diagonal
    /// backends accumulate the scalar multiplier once; iterative ones solve
    /// shift by shift and sum in order.
    pub fn combine(&self, shifts: &[(C64, C64)], f: &[C64], tol: f64) -> Result<Vec<C64>> {
        if shifts.iter().any(|(z, _)| z.im == 0.0 && z.re >= 0.0) {
            return Err(invalid("shift on the nonnegative real axis"));
        }
        let mult = |l: f64| -> C64 { shifts.iter().map(|(z, w)| w / (C64::new(l, 0.0) - z)).sum() };
        match &self.backend {
            Backend::Spectral(sp) => {
                let table = multiplier_table(&sp.eigenvalues(), mult);
                Ok(sp.apply_indexed(f, |p| table[p]))
            }
            Backend::Dense(o) => {
                let table = multiplier_table(&o.values, mult);
                let mut c = o.project(f);
                c.iter_mut().zip(&table).for_each(|(ci, m)| *ci *= m);
                Ok(o.synthesize(&c))
            }
            _ => {
                let mut acc = vec![ZERO; f.len()];
                for (z, w) in shifts {
                    let (u, _) = self.solve(*z, f, tol)?;
                    vecops::axpy(*w, &u, &mut acc);
                }
                Ok(acc)
            }
        }
    }

    /// `(M - z)^{-n} f` by `n` sequential solves, each to `tol / n`.
    pub fn power(&self, z: C64, n: usize, f: &[C64], tol: f64) -> Result<(Vec<C64>, SolveStats)> {
        if n == 0 {
            return Err(invalid("resolvent power must be at least 1"));
        }
        if let Backend::Spectral(sp) = &self.backend {
            let u = sp.apply(f, |l| (C64::new(l, 0.0) - z).powi(-(n as i32)));
            return Ok((u, SolveStats::default()));
        }
        let mut u = f.to_vec();
        let mut total = SolveStats::default();
        for _ in 0..n {
            let (next, s) = self.solve(z, &u, tol / n as f64)?;
            total.iterations += s.iterations;
            total.restarts += s.restarts;
            total.residual = total.residual.max(s.residual);
            u = next;
        }
        Ok((u, total))
    }
}

/// `f` on every entry of `values`, evaluated once per distinct value.
fn multiplier_table(values: &[f64], f: impl Fn(f64) -> C64 + Sync) -> Vec<C64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some((v, members)) if (values[i] - *v).abs() <= 1e-13 * scale => members.push(i),
            _ => groups.push((values[i], vec![i])),
        }
    }
    let vals: Vec<C64> = groups.par_iter().map(|(v, _)| f(*v)).collect();
    let mut out = vec![ZERO; values.len()];
    for ((_, members), v) in groups.iter().zip(vals) {
        for &i in members {
            out[i] = v;
        }
    }
    out
}

pub fn shifted_solve(
    res: &Resolvent,
    z: ShiftSpec,
    f: &GridFunction,
    tol: f64,
) -> Result<(GridFunction, SolveStats)> {
    let (u, s) = res.solve(z.z(), &f.data, tol)?;
    Ok((GridFunction { grid: f.grid.clone(), data: u }, s))
}

pub fn resolvent_power(
    res: &Resolvent,
    z: ShiftSpec,
    n: usize,
    f: &GridFunction,
    tol: f64,
) -> Result<(GridFunction, SolveStats)> {
    let (u, s) = res.power(z.z(), n, &f.data, tol)?;
    Ok((GridFunction { grid: f.grid.clone(), data: u }, s))
}

/// Top eigenvalue estimate of a Hermitian positive semidefinite map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopEigen {
    pub value: f64,
    /// `‖Bv - μv‖ / μ` at the returned vector
    pub residual: f64,
    pub iterations: usize,
    /// Rayleigh quotients per iteration
    pub history: Vec<f64>,
}

fn seeded_start(n: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let nv = vecops::norm(&v);
    vecops::scale(C64::new(1.0 / nv, 0.0), &mut v);
    v
}

/// Plain power iteration.
pub fn power_iteration(
    apply: &mut dyn FnMut(&[C64]) -> Result<Vec<C64>>,
    n: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<TopEigen> {
    let mut v = seeded_start(n, seed);
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let bv = apply(&v)?;
        let mu = vecops::dot(&v, &bv).re;
        history.push(mu);
        let mut r = bv.clone();
        vecops::axpy(C64::new(-mu, 0.0), &v, &mut r);
        let residual = if mu > 0.0 { vecops::norm(&r) / mu } else { 0.0 };
        if residual <= tol || mu == 0.0 {
            return Ok(TopEigen { value: mu, residual, iterations: it, history });
        }
        let nb = vecops::norm(&bv);
        v = bv.iter().map(|x| x / nb).collect();
    }
    Err(Error::PowerIterationNotConverged(format!("{max_iter} iterations, last Rayleigh quotients {:?}", &history[history.len().saturating_sub(3)..])))
}

/// Lanczos with full reorthogonalization; stops when the top Ritz pair has
/// relative residual below `tol`.
pub fn lanczos_top(
    apply: &mut dyn FnMut(&[C64]) -> Result<Vec<C64>>,
    n: usize,
    seed: u64,
    max_steps: usize,
    tol: f64,
) -> Result<TopEigen> {
    let mut basis = vec![seeded_start(n, seed)];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut history = Vec::new();
    for step in 1..=max_steps.min(n) {
        let mut w = apply(basis.last().unwrap())?;
        alpha.push(vecops::dot(basis.last().unwrap(), &w).re);
        for _ in 0..2 {
            for v in &basis {
                let c = vecops::dot(v, &w);
                vecops::axpy(-c, v, &mut w);
            }
        }
        let b = vecops::norm(&w);
        let k = alpha.len();
        let mut t = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (imax, theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        history.push(theta);
        let residual = if theta > 0.0 { (b * eig.eigenvectors[(k - 1, imax)]).abs() / theta } else { 0.0 };
        if residual <= tol || b <= 1e-14 * theta.abs().max(1e-300) || step == n {
            return Ok(TopEigen { value: theta, residual, iterations: step, history });
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    Err(Error::PowerIterationNotConverged(format!("{} Lanczos steps, Ritz values {:?}", history.len(), &history[history.len().saturating_sub(3)..])))
}

/// Estimate of `‖⟨x⟩^{-ν}(M - z)^{-n}⟨x⟩^{-ν}‖_{L²→L²}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpNorm {
    pub norm: f64,
    pub residual: f64,
    pub iterations: usize,
    pub gmres_iterations: usize,
}

pub const OPNORM_TOL: f64 = 1e-3;
pub const SOLVE_TOL: f64 = 1e-8;

pub fn weighted_opnorm(res: &Resolvent, z: C64, n: usize, nu: f64) -> Result<OpNorm> {
    let w = weight_vector(&res.op.grid, nu);
    let weighted = |u: &[C64]| -> Vec<C64> { u.iter().zip(&w).map(|(a, b)| a * b).collect() };
    let mut gm = 0usize;
    let mut apply = |v: &[C64]| -> Result<Vec<C64>> {
        let (a, s1) = res.power(z, n, &weighted(v), SOLVE_TOL)?;
        let (b, s2) = res.power(z.conj(), n, &weighted(&weighted(&a)), SOLVE_TOL)?;
        gm += s1.iterations + s2.iterations;
        Ok(weighted(&b))
    };
    let top = lanczos_top(&mut apply, res.len(), NORM_SEED, 60, OPNORM_TOL)?;
    Ok(OpNorm { norm: top.value.max(0.0).sqrt(), residual: top.residual, iterations: top.iterations, gmres_iterations: gm })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub eps: f64,
    pub n: usize,
    pub nu: f64,
    pub norm: f64,
    pub pi_residual: f64,
    pub gmres_iters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub lambda_box: f64,
    /// one fit per ε rule, in the order given
    pub fits: Vec<(f64, PowerFit)>,
    /// max / min norm over all rows
    pub ratio: f64,
    /// log10 of the λ-window span
    pub span_decades: f64,
}

impl SweepTable {
    pub fn bounded(&self, factor: f64) -> bool {
        self.ratio <= factor
    }

    pub fn slope_within(&self, target: f64, tol: f64) -> bool {
        self.fits.iter().all(|(_, f)| (f.slope - target).abs() <= tol)
    }
}

/// Weighted norms over a λ-window with `ε = |λ| / divisor` for each divisor.
pub fn low_freq_sweep(res: &Resolvent, n: usize, nu: f64, lambdas: &[f64], divisors: &[f64]) -> Result<SweepTable> {
    let lambda_box = res.op.grid.lambda_box();
    let valid: Vec<f64> = lambdas.iter().copied().filter(|l| l.abs() >= 4.0 * lambda_box * (1.0 - 1e-12)).collect();
    if valid.len() < 6 {
        return Err(Error::TooFewValid(format!("{} of {} λ values satisfy λ ≥ 4λ_box = {:.4e}", valid.len(), lambdas.len(), 4.0 * lambda_box)));
    }
    let (lo, hi) = valid.iter().fold((f64::MAX, 0.0f64), |(a, b), l| (a.min(l.abs()), b.max(l.abs())));
    let jobs: Vec<(f64, f64)> = divisors.iter().flat_map(|&dv| valid.iter().map(move |&l| (l, dv))).collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(l, dv)| {
            let eps = l.abs() / dv;
            let est = weighted_opnorm(res, C64::new(l, eps), n, nu)?;
            Ok(SweepRow {
                lambda: l,
                eps,
                n,
                nu,
                norm: est.norm,
                pi_residual: est.residual,
                gmres_iters: est.gmres_iterations,
            })
        })
        .collect::<Result<_>>()?;
    let mut fits = Vec::new();
    for &dv in divisors {
        let sel: Vec<&SweepRow> = rows.iter().filter(|r| (r.lambda.abs() / r.eps - dv).abs() < 1e-9 * dv).collect();
        let x: Vec<f64> = sel.iter().map(|r| r.lambda.abs()).collect();
        let y: Vec<f64> = sel.iter().map(|r| r.norm).collect();
        fits.push((dv, fit::power_law(&x, &y)?));
    }
    let (mn, mx) = rows.iter().fold((f64::MAX, 0.0f64), |(a, b), r| (a.min(r.norm), b.max(r.norm)));
    Ok(SweepTable { rows, lambda_box, fits, ratio: mx / mn, span_decades: (hi / lo).log10() })
}

/// Same sweep on the negative half-line `λ < 0`.
pub fn negative_side_check(res: &Resolvent, n: usize, nu: f64, lambdas: &[f64], divisor: f64) -> Result<SweepTable> {
    if lambdas.iter().any(|l| *l >= 0.0) {
        return Err(invalid("negative-side sweep needs λ < 0"));
    }
    low_freq_sweep(res, n, nu, lambdas, &[divisor])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    /// `R_P = R_0 - R_0 W R_P`
    pub first: f64,
    /// `R_P = R_0 - R_P W R_0`
    pub swapped: f64,
}

/// Checks both orderings of the first resolvent identity for `P = P₀ + W` on `f`.
pub fn resolvent_identity_check(
    p: &Resolvent,
    p0: &Resolvent,
    w: &DiscreteOperator,
    z: C64,
    f: &[C64],
    tol: f64,
) -> Result<IdentityResiduals> {
    let (rp, _) = p.solve(z, f, tol)?;
    let (r0, _) = p0.solve(z, f, tol)?;
    let (r0wrp, _) = p0.solve(z, &w.apply(&rp), tol)?;
    let first = vecops::rel_diff(&vecops::sub(&r0, &r0wrp), &rp);
    let (rpwr0, _) = p.solve(z, &w.apply(&r0), tol)?;
    let swapped = vecops::rel_diff(&vecops::sub(&r0, &rpwr0), &rp);
    Ok(IdentityResiduals { first, swapped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{flat_laplacian, Boundary, Grid};
    use approx::assert_relative_eq;

    #[test]
    fn kernel_at_minus_one() {
        let k = free_kernel(C64::new(-1.0, 0.0), 1.0, 1).unwrap();
        assert_relative_eq!(k.re, (-1f64).exp() / (4.0 * PI), epsilon = 1e-15);
        assert_relative_eq!(k.re, 0.029_274_915_762_159_6, epsilon = 1e-15);
        assert!(k.im.abs() < 1e-16);
    }

    #[test]
    fn squared_kernel_is_z_derivative() {
        // complex-step derivative of the first kernel in z
        let z = C64::new(0.3, 0.2);
        let r = 1.7;
        let h = 1e-6;
        let fd = (free_kernel(z + h, r, 1).unwrap() - free_kernel(z - h, r, 1).unwrap()) / (2.0 * h);
        let k2 = free_kernel(z, r, 2).unwrap();
        assert!((fd - k2).norm() < 1e-8 * k2.norm());
        let b = free_kernel_boundary(0.01, 2.0, 2).unwrap();
        assert_relative_eq!(b.norm(), 0.397_887, epsilon = 1e-6);
    }

    #[test]
    fn branch_is_enforced() {
        assert!(matches!(sqrt_upper(C64::new(2.0, 0.0)), Err(Error::BranchViolation(_))));
        assert!(sqrt_upper(C64::new(2.0, -1e-3)).unwrap().im > 0.0);
    }

    fn random(n: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), 0.0)).collect()
    }

    #[test]
    fn gmres_matches_spectral_path() {
        let g = Grid::new(3, 3.0, 10, Boundary::Dirichlet).unwrap();
        let op = flat_laplacian(&g);
        let exact = Resolvent::new(op.clone());
        let diag = Resolvent::diagonal(op.clone());
        let f = random(g.len(), 1);
        let z = C64::new(0.4, 0.05);
        let (a, _) = exact.solve(z, &f, 1e-10).unwrap();
        let (b, st) = diag.solve(z, &f, 1e-10).unwrap();
        assert!(st.residual <= 1e-10);
        assert!(vecops::rel_diff(&b, &a) < 1e-8);
        let mut check = vec![ZERO; f.len()];
        diag.shifted_apply(z, &b, &mut check);
        assert!(vecops::rel_diff(&check, &f) <= 1e-10);
        // conjugation symmetry for real data
        let (c, _) = diag.solve(z.conj(), &f, 1e-10).unwrap();
        assert!(vecops::rel_diff(&vecops::conj(&c), &b) < 1e-8);
    }

    #[test]
    fn power_two_is_z_derivative() {
        let g = Grid::new(2, 3.0, 12, Boundary::Dirichlet).unwrap();
        let res = Resolvent::diagonal(flat_laplacian(&g));
        let f = random(g.len(), 4);
        let z = C64::new(0.2, 0.1);
        let d = 1e-5;
        let (r1, _) = res.solve(z + d, &f, 1e-12).unwrap();
        let (r0, _) = res.solve(z, &f, 1e-12).unwrap();
        let fd: Vec<C64> = r1.iter().zip(&r0).map(|(a, b)| (a - b) / d).collect();
        let (r2, _) = res.power(z, 2, &f, 1e-12).unwrap();
        assert!(vecops::rel_diff(&fd, &r2) < 1e-3);
    }

    #[test]
    fn diagonal_surrogate_norm() {
        let n = 50;
        let diag: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect();
        let wts: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let expect = diag.iter().zip(&wts).map(|(d, w)| d * w * w).fold(0.0f64, f64::max);
        let mut apply = |v: &[C64]| -> Result<Vec<C64>> {
            Ok(v.iter().enumerate().map(|(i, x)| x * (diag[i] * wts[i] * wts[i]).powi(2)).collect())
        };
        let top = power_iteration(&mut apply, n, NORM_SEED, 2000, 1e-10).unwrap();
        assert_relative_eq!(top.value.sqrt(), expect, max_relative = 1e-9);
        let lz = lanczos_top(&mut apply, n, NORM_SEED, 50, 1e-10).unwrap();
        assert_relative_eq!(lz.value.sqrt(), expect, max_relative = 1e-9);
    }

    #[test]
    fn first_identity_with_zero_perturbation() {
        let g = Grid::new(2, 3.0, 8, Boundary::Dirichlet).unwrap();
        let op = flat_laplacian(&g);
        let p = Resolvent::diagonal(op.clone());
        let p0 = Resolvent::new(op.clone());
        let zero = DiscreteOperator {
            matrix: crate::lattice::CsrMatrix::from_triplets(g.len(), vec![]),
            ..op.clone()
        };
        let f = random(g.len(), 2);
        let r = resolvent_identity_check(&p, &p0, &zero, C64::new(0.5, 0.1), &f, 1e-12).unwrap();
        assert!(r.first < 1e-10 && r.swapped < 1e-10);
    }
}
