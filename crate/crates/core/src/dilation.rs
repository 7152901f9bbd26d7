//! The dilation group `e^{iτA} u = e^{dτ/2} u(e^τ x)`, its generator and the
//! resolvents `(κA - ζ)^{-1}` obtained by integrating the group.

use crate::error::{invalid, Error, Result};
use crate::jet::Jet;
use crate::lattice::{assemble_coefficients, Boundary, Coefficients, FlatSpectral, Grid, GridFunction};
use crate::resolvent::{Resolvent, SOLVE_TOL};
use crate::{vecops, C64};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

pub const DEFAULT_KAPPA: f64 = 0.125;
/// Relative `L²` mass allowed to leave the box under an expanding dilation.
pub const ESCAPE_TOL: f64 = 1e-6;
/// Residual contract of the quadrature resolvent.
pub const RESOLVENT_TOL: f64 = 1e-4;
const TAIL: f64 = 1e-10;

/// `κ`, `ζ` and the `τ`-quadrature used for `(κA - ζ)^{-1}`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DilationParams {
    pub kappa: f64,
    pub zeta: C64,
    /// `T_q` with `e^{-|Im ζ| T_q} ≤ 1e-10`
    pub horizon: f64,
    pub step: f64,
}

impl DilationParams {
    pub fn new(kappa: f64, zeta: C64) -> Result<Self> {
        if !(kappa > 0.0 && kappa <= 0.25) {
            return Err(invalid(format!("κ = {kappa} outside (0, 1/4]")));
        }
        let im = zeta.im.abs();
        if !(im > 0.0) || !zeta.re.is_finite() {
            return Err(invalid("ζ must have nonzero imaginary part"));
        }
        let horizon = -TAIL.ln() / im;
        let target = (0.01f64).min(im / 50.0);
        let mut n = (horizon / target).ceil() as usize;
        n += n % 2;
        Ok(DilationParams { kappa, zeta, horizon, step: horizon / n as f64 })
    }

    /// Requires `κ s < |Im ζ|`, the room needed for `H^s` bounds.
    pub fn with_sobolev(self, s: f64) -> Result<Self> {
        if self.kappa * s.abs() >= self.zeta.im.abs() {
            return Err(invalid(format!("κ·|s| = {} ≥ |Im ζ| = {}", self.kappa * s.abs(), self.zeta.im.abs())));
        }
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }

    /// `+1` when the group integral runs over `τ ≥ 0` (`Im ζ < 0`).
    pub fn direction(&self) -> f64 {
        if self.zeta.im < 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Catmull–Rom weights for the four nodes around fractional offset `t ∈ [0, 1)`.
fn catmull_rom(t: f64) -> [f64; 4] {
    let (t2, t3) = (t * t, t * t * t);
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Per-axis taps for sampling at `scale · x_i`.
struct AxisTaps {
    idx: Vec<[isize; 4]>,
    w: Vec<[f64; 4]>,
}

fn axis_taps(g: &Grid, scale: f64) -> AxisTaps {
    let n = g.n_axis() as isize;
    let off = match g.bc {
        Boundary::Dirichlet => 1.0,
        Boundary::Periodic => 0.0,
    };
    let mut idx = Vec::with_capacity(n as usize);
    let mut w = Vec::with_capacity(n as usize);
    for i in 0..n as usize {
        let y = scale * g.axis_coord(i);
        if y.abs() > g.half_width + 1e-12 * g.half_width {
            idx.push([-1; 4]);
            w.push([0.0; 4]);
            continue;
        }
        let pos = (y + g.half_width) / g.h - off;
        let base = pos.floor();
        let t = pos - base;
        let b = base as isize;
        let mut ii = [0isize; 4];
        for k in 0..4 {
            let j = b - 1 + k as isize;
            ii[k] = match g.bc {
                Boundary::Periodic => j.rem_euclid(n),
                Boundary::Dirichlet => {
                    if (0..n).contains(&j) {
                        j
                    } else {
                        -1
                    }
                }
            };
        }
        idx.push(ii);
        w.push(catmull_rom(t));
    }
    AxisTaps { idx, w }
}

fn resample_axis(data: &[C64], g: &Grid, axis: usize, taps: &AxisTaps) -> Vec<C64> {
    let n = g.n_axis();
    let stride = n.pow((g.dim - 1 - axis) as u32);
    (0..data.len())
        .into_par_iter()
        .map(|p| {
            let i = (p / stride) % n;
            let base = p - i * stride;
            let mut s = C64::new(0.0, 0.0);
            for k in 0..4 {
                let j = taps.idx[i][k];
                if j >= 0 {
                    s += data[base + j as usize * stride] * taps.w[i][k];
                }
            }
            s
        })
        .collect()
}

/// `u(scale · x)` sampled on the grid through the cubic interpolant (0 outside the box).
pub fn resample(u: &GridFunction, scale: f64) -> GridFunction {
    let g = &u.grid;
    let taps = axis_taps(g, scale);
    let mut data = u.data.clone();
    for a in 0..g.dim {
        data = resample_axis(&data, g, a, &taps);
    }
    GridFunction { grid: g.clone(), data }
}

/// Fraction of `‖u‖²` at nodes that `x ↦ e^{-τ} x` pushes out of the box.
pub fn escaped_fraction(u: &GridFunction, tau: f64) -> f64 {
    if tau >= 0.0 {
        return 0.0;
    }
    let g = &u.grid;
    let lim = g.half_width * tau.exp();
    let total: f64 = u.data.iter().map(|v| v.norm_sqr()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let out: f64 = vecops::chunked_sum(&u.data, |p, v| {
        if g.coords(p).iter().any(|c| c.abs() > lim) {
            v.norm_sqr()
        } else {
            0.0
        }
    });
    out / total
}

/// `e^{iτA} u` without the escape check.
pub fn dilate_lossy(u: &GridFunction, tau: f64) -> GridFunction {
    if tau == 0.0 {
        return u.clone();
    }
    let mut v = resample(u, tau.exp());
    let f = (0.5 * u.grid.dim as f64 * tau).exp();
    v.data.iter_mut().for_each(|x| *x *= f);
    v
}

/// `e^{iτA} u = e^{dτ/2} u(e^τ x)`.
pub fn dilate(u: &GridFunction, tau: f64) -> Result<GridFunction> {
    let lost = escaped_fraction(u, tau);
    if lost > ESCAPE_TOL {
        return Err(Error::SupportEscaped(format!("{lost:.2e} of the mass leaves the box at τ = {tau}")));
    }
    Ok(dilate_lossy(u, tau))
}

const D4: [f64; 2] = [2.0 / 3.0, -1.0 / 12.0];

/// `Σ_a x_a D_a u` (`inside = false`) or `Σ_a D_a (x_a u)` (`inside = true`), with
/// fourth-order centered `D_a` and zero outside the box.
fn coordinate_derivatives(u: &GridFunction, inside: bool) -> Vec<C64> {
    let g = &u.grid;
    let n = g.n_axis() as isize;
    let d = g.dim;
    (0..u.data.len())
        .into_par_iter()
        .map(|p| {
            let idx = g.multi_index(p);
            let mut s = C64::new(0.0, 0.0);
            for a in 0..d {
                let stride = n.pow((d - 1 - a) as u32);
                let i = idx[a] as isize;
                let at = |j: isize| {
                    if (0..n).contains(&j) {
                        let v = u.data[(p as isize + (j - i) * stride) as usize];
                        if inside {
                            v * g.axis_coord(j as usize)
                        } else {
                            v
                        }
                    } else {
                        C64::new(0.0, 0.0)
                    }
                };
                let mut der = C64::new(0.0, 0.0);
                for (k, c) in D4.iter().enumerate() {
                    let o = k as isize + 1;
                    der += (at(i + o) - at(i - o)) * *c;
                }
                s += if inside { der / g.h } else { der * (g.axis_coord(idx[a]) / g.h) };
            }
            s
        })
        .collect()
}

/// `(x·∇_h) u` by fourth-order centered differences, zero outside the box.
pub fn euler_apply(u: &GridFunction) -> GridFunction {
    GridFunction { grid: u.grid.clone(), data: coordinate_derivatives(u, false) }
}

/// `A u = (x·∇u)/i + (d/2) u`, discretized as `(x·D + D·x)/(2i)` so that it is exactly Hermitian.
pub fn generator_apply(u: &GridFunction) -> GridFunction {
    let a = coordinate_derivatives(u, false);
    let b = coordinate_derivatives(u, true);
    let data = a.iter().zip(&b).map(|(x, y)| (x + y) * C64::new(0.0, -0.5)).collect();
    GridFunction { grid: u.grid.clone(), data }
}

/// `(κA - ζ) u`.
pub fn shifted_generator_apply(u: &GridFunction, kappa: f64, zeta: C64) -> GridFunction {
    let mut v = generator_apply(u);
    v.data.iter_mut().zip(&u.data).for_each(|(a, b)| *a = *a * kappa - b * zeta);
    v
}

/// Output of the quadrature resolvent.
#[derive(Clone, Debug)]
pub struct DilationSolve {
    pub value: GridFunction,
    /// `‖(κA - ζ)v - u‖ / ‖u‖`
    pub residual: f64,
    pub nodes: usize,
}

/// `(κA - ζ)^{-1} u = (1/i) ∫_0^{±∞} e^{-iτζ} e^{iτκA} u dτ` by composite Simpson, with the residual measured.
pub fn dilation_resolvent_unchecked(u: &GridFunction, p: &DilationParams) -> DilationSolve {
    let n = p.steps();
    let dir = p.direction();
    let mut acc = vec![C64::new(0.0, 0.0); u.data.len()];
    for k in 0..=n {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let tau = dir * k as f64 * p.step;
        let c = (C64::new(0.0, -tau) * p.zeta).exp() * (w * p.step / 3.0 * dir);
        if c.norm() < 1e-18 {
            continue;
        }
        let v = dilate_lossy(u, p.kappa * tau);
        vecops::axpy(c, &v.data, &mut acc);
    }
    // 1/i
    acc.iter_mut().for_each(|v| *v *= C64::new(0.0, -1.0));
    let value = GridFunction { grid: u.grid.clone(), data: acc };
    let back = shifted_generator_apply(&value, p.kappa, p.zeta);
    let residual = vecops::rel_diff(&back.data, &u.data);
    DilationSolve { value, residual, nodes: n + 1 }
}

/// Quadrature resolvent with the residual contract enforced.
pub fn dilation_resolvent(u: &GridFunction, kappa: f64, zeta: C64) -> Result<DilationSolve> {
    let p = DilationParams::new(kappa, zeta)?;
    let s = dilation_resolvent_unchecked(u, &p);
    if !(s.residual <= RESOLVENT_TOL) {
        return Err(Error::SolverNotConverged { residual: s.residual, iterations: s.nodes });
    }
    Ok(s)
}

/// `|D|^r u` through the continuum symbol on a periodic grid.
pub fn fractional_derivative(u: &GridFunction, r: f64) -> Result<GridFunction> {
    let g = &u.grid;
    if g.bc != Boundary::Periodic {
        return Err(invalid("|D|^r needs a periodic grid"));
    }
    let fs = FlatSpectral::new(g);
    let k = g.axis_wavenumbers();
    let data = fs.apply_indexed(&u.data, |p| {
        let k2: f64 = g.multi_index(p).iter().map(|&i| k[i] * k[i]).sum();
        C64::new(k2.powf(0.5 * r), 0.0)
    });
    GridFunction::from_vec(g, data)
}

/// Residuals of `|D|^r (κA - ζ)^{-1} u = (κA - ζ - iκr)^{-1} |D|^r u`.
#[derive(Clone, Debug, Serialize)]
pub struct IntertwiningReport {
    pub m: usize,
    pub h: f64,
    pub r: f64,
    pub residual: f64,
}

pub fn intertwining_check(u: &GridFunction, kappa: f64, zeta: C64, r: f64) -> Result<IntertwiningReport> {
    let p = DilationParams::new(kappa, zeta)?.with_sobolev(r)?;
    let lhs = fractional_derivative(&dilation_resolvent_unchecked(u, &p).value, r)?;
    let shifted = DilationParams::new(kappa, zeta + C64::new(0.0, kappa * r))?;
    let rhs = dilation_resolvent_unchecked(&fractional_derivative(u, r)?, &shifted).value;
    Ok(IntertwiningReport { m: u.grid.m, h: u.grid.h, r, residual: vecops::rel_diff(&lhs.data, &rhs.data) })
}

/// `a(e^τ x)`, `e^τ b(e^τ x)`, `e^{2τ} V(e^τ x)`: the coefficients of `e^{-2τ}`-rescaled operator conjugated by the group.
pub struct DilatedCoefficients {
    pub inner: Arc<dyn Coefficients>,
    pub tau: f64,
}

impl DilatedCoefficients {
    fn scaled(&self, x: &[f64]) -> Vec<f64> {
        let s = self.tau.exp();
        x.iter().map(|v| v * s).collect()
    }
}

impl Coefficients for DilatedCoefficients {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn principal(&self, x: &[f64]) -> Vec<f64> {
        self.inner.principal(&self.scaled(x))
    }
    fn principal_jet(&self, x: &[Jet]) -> Vec<Jet> {
        let s = self.tau.exp();
        let y: Vec<Jet> = x.iter().map(|v| *v * s).collect();
        self.inner.principal_jet(&y)
    }
    fn drift(&self, x: &[f64]) -> Vec<f64> {
        let s = self.tau.exp();
        self.inner.drift(&self.scaled(x)).into_iter().map(|b| b * s).collect()
    }
    fn potential(&self, x: &[f64]) -> f64 {
        (2.0 * self.tau).exp() * self.inner.potential(&self.scaled(x))
    }
    fn is_flat(&self) -> bool {
        self.inner.is_flat()
    }
    fn elliptic(&self) -> bool {
        self.inner.elliptic()
    }
}

/// Operator family entering the scaling identity.
#[derive(Clone)]
pub enum ScalingSetup {
    /// `-Δ` through its continuum Fourier symbol (periodic grid)
    FlatSpectral,
    /// finite-difference assembly of the given coefficients
    Assembled(Arc<dyn Coefficients>),
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub lambda: f64,
    pub delta: f64,
    pub tau: f64,
    pub m: usize,
    pub h: f64,
    /// `‖lhs - rhs‖ / ‖lhs‖`
    pub residual: f64,
}

fn continuum_resolvent(f: &GridFunction, z: C64) -> Result<Vec<C64>> {
    let g = &f.grid;
    if g.bc != Boundary::Periodic {
        return Err(invalid("continuum symbol needs a periodic grid"));
    }
    let fs = FlatSpectral::new(g);
    let k = g.axis_wavenumbers();
    Ok(fs.apply_indexed(&f.data, |p| {
        let k2: f64 = g.multi_index(p).iter().map(|&i| k[i] * k[i]).sum();
        1.0 / (C64::new(k2, 0.0) - z)
    }))
}

/// Compares `(P - z)^{-1} f` with `λ^{-1} e^{-iτA} (P_τ - 1 - iδ)^{-1} e^{iτA} f`, `λ = Re z`, `e^{-2τ} = λ`,
/// both sides on the same grid.
pub fn scaling_identity_check(setup: &ScalingSetup, f: &GridFunction, z: C64) -> Result<ScalingReport> {
    let lambda = z.re;
    if !(lambda > 0.0) {
        return Err(invalid("scaling needs Re z > 0"));
    }
    let delta = z.im / lambda;
    let tau = -0.5 * lambda.ln();
    let g = &f.grid;
    let unit = C64::new(1.0, delta);
    let inner = dilate_lossy(f, tau);
    let (lhs, mid) = match setup {
        ScalingSetup::FlatSpectral => (continuum_resolvent(f, z)?, continuum_resolvent(&inner, unit)?),
        ScalingSetup::Assembled(c) => {
            let p = Resolvent::new(assemble_coefficients(c.as_ref(), g, "P")?);
            let dilated = DilatedCoefficients { inner: c.clone(), tau };
            let pt = Resolvent::new(assemble_coefficients(&dilated, g, "P_τ")?);
            (p.solve(z, &f.data, SOLVE_TOL)?.0, pt.solve(unit, &inner.data, SOLVE_TOL)?.0)
        }
    };
    let mut rhs = dilate_lossy(&GridFunction::from_vec(g, mid)?, -tau);
    rhs.data.iter_mut().for_each(|v| *v /= lambda);
    Ok(ScalingReport { lambda, delta, tau, m: g.m, h: g.h, residual: vecops::rel_diff(&rhs.data, &lhs) })
}
