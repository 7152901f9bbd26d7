//! Coordinates in which the metric determinant is 1 near infinity, the
//! conjugation of `-Δ_G` to an operator symmetric for Lebesgue measure, and
//! its splitting into a small long-range part plus a compactly supported part.

use crate::error::{invalid, Error, Result};
use crate::jet::{norm2, Jet, Real};
use crate::lattice::{assemble_coefficients, Coefficients, DiscreteOperator, Grid};
use crate::metric::{
    catalog, radial_cutoff, rbar, symbol_norm, FnSymbol, Metric, MetricField, QuadratureGrid, ScalarSymbol, SymbolClassParams,
};
use crate::quad::{self, gauss_legendre};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Determinant of a small row-major matrix by elimination without pivoting
/// (intended for symmetric positive definite input).
pub fn det_of<T: Real>(m: &[T], d: usize) -> T {
    let mut a = m.to_vec();
    let mut det = a[0].cst(1.0);
    for p in 0..d {
        let piv = a[p * d + p];
        det = det * piv;
        for r in p + 1..d {
            let f = a[r * d + p] / piv;
            for c in p..d {
                a[r * d + c] = a[r * d + c] - f * a[p * d + c];
            }
        }
    }
    det
}

/// Inverse by Gauss–Jordan without pivoting.
pub fn inverse_of<T: Real>(m: &[T], d: usize) -> Vec<T> {
    let mut a = m.to_vec();
    let mut inv: Vec<T> = (0..d * d).map(|i| m[0].cst(if i % (d + 1) == 0 { 1.0 } else { 0.0 })).collect();
    for p in 0..d {
        let s = a[p * d + p].recip();
        for c in 0..d {
            a[p * d + c] = a[p * d + c] * s;
            inv[p * d + c] = inv[p * d + c] * s;
        }
        for r in 0..d {
            if r == p {
                continue;
            }
            let f = a[r * d + p];
            for c in 0..d {
                a[r * d + c] = a[r * d + c] - f * a[p * d + c];
                inv[r * d + c] = inv[r * d + c] - f * inv[p * d + c];
            }
        }
    }
    inv
}

/// `det G(x)^{1/2} - 1` as a scalar symbol.
pub fn volume_defect(g: &MetricField) -> ScalarSymbol {
    let d = g.dim();
    let (m1, m2) = (g.inner().clone(), g.inner().clone());
    ScalarSymbol::new(FnSymbol {
        dim: d,
        value: move |x: &[f64]| det_of(&m1.eval_f64(x), d).sqrt() - 1.0,
        jet: move |x: &[Jet]| det_of(&m2.eval_jet(x), d).sqrt() - 1.0,
    })
}

const PANELS: usize = 8;
const PANEL_NODES: usize = 16;

/// Solution of `ϕ + (x/n)·∇ϕ = 1 + δ` for `|x| ≥ R` with `ϕ = 1` on `|x| = R`,
/// glued to 1 inside `|x| ≤ R` over the band `[R, 2R]`.
#[derive(Clone)]
pub struct Transport {
    pub delta: ScalarSymbol,
    pub n: usize,
    pub r: f64,
}

impl std::fmt::Debug for Transport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transport").field("n", &self.n).field("r", &self.r).finish()
    }
}

impl Transport {
    pub fn new(delta: ScalarSymbol, r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(invalid("matching radius must be positive"));
        }
        Ok(Transport { n: delta.dim(), delta, r })
    }

    /// Unglued solution `1 + n ∫_{ln(R/|x|)}^0 δ(e^s x) e^{ns} ds`, valid for `|x| ≥ R`.
    pub fn raw(&self, x: &[f64]) -> f64 {
        let rx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rx <= self.r {
            return 1.0;
        }
        let n = self.n as f64;
        let lo = (self.r / rx).ln();
        let f = |s: f64| {
            let t = s.exp();
            let y: Vec<f64> = x.iter().map(|v| v * t).collect();
            self.delta.value(&y) * (n * s).exp()
        };
        1.0 + n * quad::adaptive(f, lo, 0.0, 1e-15).0
    }

    /// Same on jets, by composite Gauss–Legendre in the log-radial variable.
    pub fn raw_jet(&self, x: &[Jet]) -> Jet {
        let r = norm2(x).sqrt();
        if r.val() <= self.r {
            return x[0].cst(1.0);
        }
        let n = self.n as f64;
        let l = (r.recip() * self.r).ln();
        let (gx, gw) = gauss_legendre(PANEL_NODES);
        let mut acc = x[0].cst(0.0);
        for p in 0..PANELS {
            for (u, w) in gx.iter().zip(gw) {
                let v = (p as f64 + 0.5 * (u + 1.0)) / PANELS as f64;
                let s = l * (1.0 - v);
                let t = s.exp();
                let y: Vec<Jet> = x.iter().map(|xi| *xi * t).collect();
                acc += self.delta.eval_jet(&y) * (s * n).exp() * (0.5 * w / PANELS as f64);
            }
        }
        acc * (l * -n) + 1.0
    }

    fn blend<T: Real>(&self, x: &[T], raw: T) -> T {
        let sigma = radial_cutoff(x, self.r, 2.0 * self.r);
        // sigma = 1 inside R: keep ϕ = 1 there
        (raw - 1.0) * (sigma.cst(1.0) - sigma) + 1.0
    }

    /// Glued `ϕ`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.blend(x, self.raw(x))
    }

    pub fn jet(&self, x: &[Jet]) -> Jet {
        self.blend(x, self.raw_jet(x))
    }

    /// `ϕ + (x/n)·∇ϕ - 1 - δ` of the unglued solution at `|x| ≥ R`.
    pub fn ode_residual(&self, x: &[f64]) -> f64 {
        let j = self.raw_jet(&Jet::seed(x, 1));
        let d = x.len();
        let mut flux = j.value();
        for v in 0..d {
            let mut a = vec![0; d];
            a[v] = 1;
            flux += x[v] * j.derivative(&a) / self.n as f64;
        }
        flux - 1.0 - self.delta.value(x)
    }

    /// `(ϕ, ϕ + (x/n)·∇ϕ)` of the glued profile.
    pub fn value_and_flux(&self, x: &[f64]) -> (f64, f64) {
        let j = self.jet(&Jet::seed(x, 1));
        let d = x.len();
        let mut flux = j.value();
        for v in 0..d {
            let mut a = vec![0; d];
            a[v] = 1;
            flux += x[v] * j.derivative(&a) / self.n as f64;
        }
        (j.value(), flux)
    }

    /// `φ = ϕ^{1/n}` as a symbol.
    pub fn profile(&self) -> ScalarSymbol {
        let (a, b) = (self.clone(), self.clone());
        let inv_n = 1.0 / self.n as f64;
        ScalarSymbol::new(FnSymbol {
            dim: self.n,
            value: move |x: &[f64]| a.value(x).powf(inv_n),
            jet: move |x: &[Jet]| b.jet(x).powf(inv_n),
        })
    }
}

/// Closed-form solution for `δ = c|x|^{-ρ}`, `|x| ≥ R`.
pub fn power_law_transport(c: f64, rho: f64, n: usize, r: f64, x_norm: f64) -> f64 {
    let nf = n as f64;
    1.0 + c * nf / (rho - nf) * x_norm.powf(-rho) * ((x_norm / r).powf(rho - nf) - 1.0)
}

fn sample_rays(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rays = Vec::with_capacity(count + d);
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        rays.push(e);
    }
    while rays.len() < count + d {
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nu > 1e-3 {
            rays.push(u.iter().map(|v| v / nu).collect());
        }
    }
    rays
}

/// Outcome of the matching-radius search.
#[derive(Clone, Debug, Serialize)]
pub struct RadiusChoice {
    pub r: f64,
    pub sup_deviation: f64,
    pub min_flux: f64,
    pub max_flux: f64,
}

pub const R_CAP: f64 = 65536.0;

/// Smallest `R ∈ {1, 2, 4, …}` with `|ϕ - 1| ≤ 1/2` and `1/2 ≤ ϕ + (x/n)·∇ϕ ≤ 3/2` on a ray sample.
///
/// The radial integral converges for decay orders below the dimension.
pub fn choose_r(delta: &ScalarSymbol, rho: f64) -> Result<RadiusChoice> {
    let d = delta.dim();
    if rho >= d as f64 {
        return Err(Error::GaugeConditionsFailed(format!("decay order {rho} ≥ dimension {d}")));
    }
    let rays = sample_rays(d, 12, 0xA11);
    let mut r = 1.0;
    while r <= R_CAP {
        let tr = Transport::new(delta.clone(), r)?;
        let mut sup_dev: f64 = 0.0;
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for ray in &rays {
            for k in 0..48 {
                // dense in the gluing band, geometric beyond
                let s = if k < 16 { r * (1.0 + k as f64 / 15.0) } else { 2.0 * r * 1.25f64.powi(k - 15) };
                let x: Vec<f64> = ray.iter().map(|v| v * s).collect();
                let (phi, flux) = tr.value_and_flux(&x);
                sup_dev = sup_dev.max((phi - 1.0).abs());
                lo = lo.min(flux);
                hi = hi.max(flux);
            }
        }
        if sup_dev <= 0.5 && lo >= 0.5 && hi <= 1.5 {
            return Ok(RadiusChoice { r, sup_deviation: sup_dev, min_flux: lo, max_flux: hi });
        }
        r *= 2.0;
    }
    Err(Error::GaugeConditionsFailed(format!("no matching radius up to {R_CAP}")))
}

/// The radial diffeomorphism `x ↦ φ(x) x`.
#[derive(Clone, Debug)]
pub struct Diffeo {
    pub transport: Transport,
    pub r: f64,
    /// `C⁻¹ ≤ φ ≤ C` on the validation sample
    pub bound: f64,
    /// radius beyond which the Jacobian identity holds exactly
    pub compact_radius: f64,
}

impl Diffeo {
    pub fn dim(&self) -> usize {
        self.transport.n
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        self.transport.value(x).powf(1.0 / self.transport.n as f64)
    }

    pub fn phi_jet(&self, x: &[Jet]) -> Jet {
        self.transport.jet(x).powf(1.0 / self.transport.n as f64)
    }

    pub fn map(&self, x: &[f64]) -> Vec<f64> {
        let p = self.phi(x);
        x.iter().map(|v| v * p).collect()
    }

    pub fn map_jet(&self, x: &[Jet]) -> Vec<Jet> {
        let p = self.phi_jet(x);
        x.iter().map(|v| *v * p).collect()
    }

    /// `(φ, ∇φ)`.
    pub fn phi_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let j = self.phi_jet(&Jet::seed(x, 1));
        let d = x.len();
        let g = (0..d)
            .map(|v| {
                let mut a = vec![0; d];
                a[v] = 1;
                j.derivative(&a)
            })
            .collect();
        (j.value(), g)
    }

    /// `J = φ I + x ∇φᵀ`, row-major.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let (p, g) = self.phi_gradient(x);
        let mut j = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                j[r * d + c] = x[r] * g[c] + if r == c { p } else { 0.0 };
            }
        }
        j
    }

    pub fn det_lu(&self, x: &[f64]) -> f64 {
        let d = x.len();
        DMatrix::from_row_slice(d, d, &self.jacobian(x)).lu().determinant()
    }

    /// `φ^{d-1}(φ + x·∇φ)`.
    pub fn det_rank_one(&self, x: &[f64]) -> f64 {
        let (p, g) = self.phi_gradient(x);
        let xg: f64 = x.iter().zip(&g).map(|(a, b)| a * b).sum();
        p.powi(x.len() as i32 - 1) * (p + xg)
    }

    /// `χ⁻¹(y)` by bisection on the ray through `y`, then Newton.
    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        let ry = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ry == 0.0 {
            return Ok(y.to_vec());
        }
        let omega: Vec<f64> = y.iter().map(|v| v / ry).collect();
        let at = |s: f64| -> Vec<f64> { omega.iter().map(|w| w * s).collect() };
        let f = |s: f64| s * self.phi(&at(s)) - ry;
        let (mut a, mut b) = (0.0, ry * self.bound * 1.01);
        if f(b) < 0.0 {
            return Err(Error::InverseNotConverged(ry));
        }
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if f(m) > 0.0 {
                b = m;
            } else {
                a = m;
            }
            if b - a <= 1e-7 * ry.max(1.0) {
                break;
            }
        }
        let mut s = 0.5 * (a + b);
        for _ in 0..30 {
            let x = at(s);
            let (p, g) = self.phi_gradient(&x);
            let dp: f64 = omega.iter().zip(&g).map(|(w, gi)| w * gi).sum();
            let step = (s * p - ry) / (p + s * dp);
            s -= step;
            if step.abs() <= 1e-13 * ry.max(1.0) {
                return Ok(at(s));
            }
        }
        Err(Error::InverseNotConverged(ry))
    }

    /// Taylor expansion of `χ⁻¹` at `y0` to `order`, as jets in `y`.
    pub fn inverse_jet(&self, y0: &[f64], order: usize) -> Result<Vec<Jet>> {
        let d = y0.len();
        let x0 = self.inverse(y0)?;
        let j0 = self.jacobian(&x0);
        let jinv = DMatrix::from_row_slice(d, d, &j0).try_inverse().ok_or(Error::InverseNotConverged(0.0))?;
        let y = Jet::seed(y0, order);
        let mut x: Vec<Jet> = (0..d).map(|i| Jet::constant(d, order, x0[i])).collect();
        for _ in 0..=order {
            let fx = self.map_jet(&x);
            let res: Vec<Jet> = (0..d).map(|i| y[i] - fx[i]).collect();
            for i in 0..d {
                let mut corr = x[i].cst(0.0);
                for k in 0..d {
                    corr += res[k] * jinv[(i, k)];
                }
                x[i] += corr;
            }
        }
        Ok(x)
    }

    /// Checks that `r ↦ r φ(rω)` is increasing on sample rays.
    pub fn check_monotone(&self, rays: usize, radii: usize) -> Result<f64> {
        let d = self.dim();
        let mut worst = f64::MAX;
        for ray in sample_rays(d, rays, 0xD1F) {
            for k in 0..radii {
                let s = 0.05 * self.r * 1.2f64.powi(k as i32);
                let x: Vec<f64> = ray.iter().map(|v| v * s).collect();
                let (p, g) = self.phi_gradient(&x);
                let deriv = p + x.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
                worst = worst.min(deriv);
                if !(deriv > 0.0) {
                    return Err(Error::GaugeConditionsFailed(format!("radial map not increasing at |x| = {s:.3}")));
                }
            }
        }
        Ok(worst)
    }
}

/// Builds `χ(x) = φ(x) x` from a transport solution and validates it.
pub fn build_diffeo(transport: Transport) -> Result<Diffeo> {
    let d = transport.n;
    let r = transport.r;
    let mut diffeo = Diffeo { transport, r, bound: 2.0, compact_radius: 2.0 * r };
    let mut c: f64 = 1.0;
    for ray in sample_rays(d, 12, 0xB0D) {
        for k in 0..40 {
            let s = 0.1 * r * 1.3f64.powi(k);
            let x: Vec<f64> = ray.iter().map(|v| v * s).collect();
            let p = diffeo.phi(&x);
            if !(p > 0.0) {
                return Err(Error::GaugeConditionsFailed(format!("φ = {p} at |x| = {s}")));
            }
            c = c.max(p).max(1.0 / p);
        }
    }
    diffeo.bound = c;
    diffeo.check_monotone(12, 40)?;
    Ok(diffeo)
}

/// `G̃(y) = J^{-T} G(x) J^{-1}` at `x = χ⁻¹(y)`.
struct PulledBack {
    metric: Arc<dyn Metric>,
    chi: Arc<Diffeo>,
}

impl PulledBack {
    fn at_seed(&self, y0: &[f64], order: usize) -> Vec<Jet> {
        let d = y0.len();
        let x = self.chi.inverse_jet(y0, order + 1).expect("inverse of the coordinate change");
        // ∂x/∂y = J^{-1}
        let dx: Vec<Jet> = (0..d * d).map(|idx| x[idx / d].diff(idx % d)).collect();
        let xs: Vec<Jet> = x.iter().map(|v| v.truncate(order)).collect();
        let g = self.metric.eval_jet(&xs);
        let mut out = Vec::with_capacity(d * d);
        for a in 0..d {
            for b in 0..d {
                let mut s = xs[0].cst(0.0);
                for j in 0..d {
                    for k in 0..d {
                        s += dx[j * d + a] * g[j * d + k] * dx[k * d + b];
                    }
                }
                out.push(s);
            }
        }
        out
    }
}

impl Metric for PulledBack {
    fn dim(&self) -> usize {
        self.metric.dim()
    }
    fn eval_f64(&self, y: &[f64]) -> Vec<f64> {
        let d = y.len();
        let x = self.chi.inverse(y).expect("inverse of the coordinate change");
        let jinv = DMatrix::from_row_slice(d, d, &self.chi.jacobian(&x)).try_inverse().expect("invertible Jacobian");
        let g = DMatrix::from_row_slice(d, d, &self.metric.eval_f64(&x));
        let gt = jinv.transpose() * g * &jinv;
        (0..d * d).map(|i| gt[(i / d, i % d)]).collect()
    }
    fn eval_jet(&self, y: &[Jet]) -> Vec<Jet> {
        let y0: Vec<f64> = y.iter().map(|v| v.value()).collect();
        let order = y[0].order();
        let at = self.at_seed(&y0, order);
        let is_seed = y.iter().enumerate().all(|(i, v)| {
            v.dim() == y0.len()
                && v.coeffs().iter().enumerate().all(|(k, c)| match k {
                    0 => true,
                    k if k == 1 + i => *c == 1.0,
                    _ => *c == 0.0,
                })
        });
        if is_seed {
            at
        } else {
            at.iter().map(|g| g.compose_multi(y)).collect()
        }
    }
}

/// Metric in the coordinates `y = χ(x)`.
pub fn pullback_metric(g: &MetricField, chi: &Diffeo) -> Result<MetricField> {
    let inner = PulledBack { metric: g.inner().clone(), chi: Arc::new(chi.clone()) };
    let radius = chi.compact_radius * chi.bound;
    MetricField::new(Arc::new(inner), &format!("{}∘χ⁻¹", g.name), g.rho, radius.max(g.compact_radius))
}

/// Which part of the coefficients an operator carries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Part {
    Full,
    /// `σ (a - δ)` and `σ V` with `σ = 1` on `|x| ≤ r_cut`, `0` beyond `2 r_cut`
    Compact { r_cut: f64 },
    /// `δ + (1 - σ)(a - δ)` and `(1 - σ) V`
    Remainder { r_cut: f64 },
}

/// `P = -q⁻¹ ∂_j (q² a_jk ∂_k (q⁻¹ ·))` with `a = G⁻¹`, `q = det G^{1/4}`,
/// in the divergence form `-∂_j a_jk ∂_k + V`, `V = q⁻¹ ∂_j (a_jk ∂_k q)`.
#[derive(Clone)]
pub struct ConjugatedOperator {
    pub metric: MetricField,
    pub part: Part,
    pub provenance: String,
}

impl std::fmt::Debug for ConjugatedOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConjugatedOperator").field("part", &self.part).field("provenance", &self.provenance).finish()
    }
}

pub fn conjugate_to_lebesgue(g: &MetricField) -> Result<ConjugatedOperator> {
    let d = g.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    for i in 0..200 {
        let s = 2f64.powi(i % 10 - 2);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0) * s).collect();
        let det = det_of(&g.matrix(&x), d);
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::NotElliptic(format!("det G = {det} at {x:?}")));
        }
    }
    Ok(ConjugatedOperator { metric: g.clone(), part: Part::Full, provenance: format!("conjugated {}", g.name) })
}

/// Catalog metric conjugated to Lebesgue measure and assembled on `grid`.
pub fn catalog_operator(name: &str, params: &[f64], grid: &Grid) -> Result<(ConjugatedOperator, DiscreteOperator)> {
    let p = conjugate_to_lebesgue(&catalog(name, params, grid.dim)?)?;
    let op = assemble_coefficients(&p, grid, name)?;
    Ok((p, op))
}

/// Largest eigenvalue of `a_jk(x)` over the nodes of `grid`.
pub fn principal_bound(c: &dyn Coefficients, grid: &Grid) -> f64 {
    let d = grid.dim;
    (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let a = DMatrix::from_row_slice(d, d, &c.principal(&grid.coords(p)));
            a.symmetric_eigenvalues().iter().fold(f64::MIN, |m, v| m.max(*v))
        })
        .reduce(|| f64::MIN, f64::max)
}

impl ConjugatedOperator {
    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn weight<T: Real>(&self, x: &[T]) -> Option<T> {
        match self.part {
            Part::Full => None,
            Part::Compact { r_cut } => Some(radial_cutoff(x, r_cut, 2.0 * r_cut)),
            Part::Remainder { r_cut } => {
                let s = radial_cutoff(x, r_cut, 2.0 * r_cut);
                Some(s.cst(1.0) - s)
            }
        }
    }

    fn includes_identity(&self) -> bool {
        !matches!(self.part, Part::Compact { .. })
    }

    /// `a_jk` on jets.
    pub fn a_jet(&self, x: &[Jet]) -> Vec<Jet> {
        let d = self.dim();
        let a = inverse_of(&self.metric.eval_jet(x), d);
        match self.weight(x) {
            None => a,
            Some(w) => (0..d * d)
                .map(|i| {
                    let id = if i % (d + 1) == 0 { 1.0 } else { 0.0 };
                    let pert = (a[i] - id) * w;
                    if self.includes_identity() {
                        pert + id
                    } else {
                        pert
                    }
                })
                .collect(),
        }
    }

    /// Unblended `V(x)`.
    fn full_potential(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let xs = Jet::seed(x, 2);
        let g = self.metric.eval_jet(&xs);
        let a = inverse_of(&g, d);
        let q = det_of(&g, d).powf(0.25);
        let mut s = 0.0;
        for j in 0..d {
            let mut flux = Jet::constant(d, 1, 0.0);
            for k in 0..d {
                flux += a[j * d + k].truncate(1) * q.diff(k);
            }
            s += flux.diff(j).value();
        }
        s / q.value()
    }

    pub fn v(&self, x: &[f64]) -> f64 {
        let v = self.full_potential(x);
        match self.weight(x) {
            None => v,
            Some(w) => w * v,
        }
    }

    /// `b_k = -∂_j a_jk`.
    pub fn b(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let a = self.a_jet(&Jet::seed(x, 1));
        (0..d)
            .map(|k| {
                -(0..d)
                    .map(|j| {
                        let mut alpha = vec![0; d];
                        alpha[j] = 1;
                        a[j * d + k].derivative(&alpha)
                    })
                    .sum::<f64>()
            })
            .collect()
    }

    /// `a_jk - δ_jk` (or `a_jk` for the compact part) as a symbol.
    pub fn a_perturbation(&self, j: usize, k: usize) -> ScalarSymbol {
        let d = self.dim();
        let id = if j == k && self.includes_identity() { 1.0 } else { 0.0 };
        let (p1, p2) = (self.clone(), self.clone());
        ScalarSymbol::new(FnSymbol {
            dim: d,
            value: move |x: &[f64]| p1.a_jet(&Jet::seed(x, 0))[j * d + k].value() - id,
            jet: move |x: &[Jet]| p2.a_jet(x)[j * d + k] - id,
        })
    }

    /// `b_k` as a symbol.
    pub fn b_symbol(&self, k: usize) -> ScalarSymbol {
        let d = self.dim();
        let (p1, p2) = (self.clone(), self.clone());
        ScalarSymbol::new(FnSymbol {
            dim: d,
            value: move |x: &[f64]| p1.b(x)[k],
            jet: move |x: &[Jet]| {
                // one order is consumed by the divergence
                let order = x[0].order();
                let x0: Vec<f64> = x.iter().map(|v| v.value()).collect();
                let a = p2.a_jet(&Jet::seed(&x0, order + 1));
                let mut s = Jet::constant(d, order, 0.0);
                for j in 0..d {
                    s -= a[j * d + k].diff(j);
                }
                s.compose_multi(x)
            },
        })
    }

    /// `(P u)(x)` from the defining product formula, for a test function on jets.
    pub fn apply_direct(&self, u: &dyn Fn(&[Jet]) -> Jet, x: &[f64]) -> f64 {
        let d = self.dim();
        let xs = Jet::seed(x, 2);
        let g = self.metric.eval_jet(&xs);
        let a = inverse_of(&g, d);
        let q = det_of(&g, d).powf(0.25);
        let w = u(&xs) / q;
        let mut s = 0.0;
        for j in 0..d {
            let mut flux = Jet::constant(d, 1, 0.0);
            for k in 0..d {
                flux += (q * q * a[j * d + k]).truncate(1) * w.diff(k);
            }
            s += flux.diff(j).value();
        }
        -s / q.value()
    }

    /// `(-a_jk ∂_j∂_k + b_k ∂_k + V) u` from the expanded coefficients.
    pub fn apply_expanded(&self, u: &dyn Fn(&[Jet]) -> Jet, x: &[f64]) -> f64 {
        let d = self.dim();
        let uj = u(&Jet::seed(x, 2));
        let a = self.a_jet(&Jet::seed(x, 0));
        let b = self.b(x);
        let mut s = self.v(x) * uj.value();
        for j in 0..d {
            for k in 0..d {
                let mut al = vec![0; d];
                al[j] += 1;
                al[k] += 1;
                s -= a[j * d + k].value() * uj.derivative(&al);
            }
            let mut al = vec![0; d];
            al[j] = 1;
            s += b[j] * uj.derivative(&al);
        }
        s
    }
}

impl Coefficients for ConjugatedOperator {
    fn dim(&self) -> usize {
        self.metric.dim()
    }
    fn principal(&self, x: &[f64]) -> Vec<f64> {
        self.a_jet(&Jet::seed(x, 0)).iter().map(|j| j.value()).collect()
    }
    fn principal_jet(&self, x: &[Jet]) -> Vec<Jet> {
        self.a_jet(x)
    }
    fn drift(&self, x: &[f64]) -> Vec<f64> {
        self.b(x)
    }
    fn potential(&self, x: &[f64]) -> f64 {
        self.v(x)
    }
    fn is_flat(&self) -> bool {
        self.metric.name == "flat" && self.includes_identity()
    }
    fn elliptic(&self) -> bool {
        self.includes_identity()
    }
}

/// `P = P₀ + W` with `W` supported in `|x| ≤ 2 r_cut`.
#[derive(Clone, Debug)]
pub struct SplitOperator {
    pub p0: ConjugatedOperator,
    pub w: ConjugatedOperator,
    pub support_radius: f64,
    /// largest symbol norm among the perturbation coefficients of `P₀`
    pub eta: f64,
    /// `sup |V|` of `P₀` on the quadrature sample
    pub p0_potential: f64,
}

/// Quadrature used for the smallness report of the split.
pub fn split_quadrature(d: usize, r_cut: f64) -> Result<QuadratureGrid> {
    QuadratureGrid::new(d, 16_777_216.0 * r_cut.max(1.0), 8, 6)
}

/// Moves the coefficients inside `|x| ≤ 2 r_cut` into `W` and reports the size of `P₀ - (-Δ)`.
pub fn split_small_plus_compact(p: &ConjugatedOperator, r_cut: f64, eta_target: f64) -> Result<SplitOperator> {
    if p.part != Part::Full {
        return Err(invalid("split expects the full operator"));
    }
    if !(r_cut > 0.0) {
        return Err(invalid("cut radius must be positive"));
    }
    let d = p.dim();
    let p0 = ConjugatedOperator { part: Part::Remainder { r_cut }, provenance: format!("{} far part", p.provenance), ..p.clone() };
    let w = ConjugatedOperator { part: Part::Compact { r_cut }, provenance: format!("{} near part", p.provenance), ..p.clone() };
    let eta = if p.metric.name == "flat" { 0.0 } else { split_eta(&p0, r_cut)? };
    let q = split_quadrature(d, r_cut)?;
    let p0_potential = q.points().map(|(x, _)| p0.v(&x).abs()).fold(0.0, f64::max);
    if eta > eta_target {
        return Err(Error::GaugeConditionsFailed(format!("far part has size {eta:.3e} > target {eta_target:.3e}")));
    }
    Ok(SplitOperator { p0, w, support_radius: 2.0 * r_cut, eta, p0_potential })
}

/// `max(‖a₀ - δ‖_{0,r̄,1}, ‖b₀‖_{1,r̄-1,1})` over entries.
pub fn split_eta(p0: &ConjugatedOperator, r_cut: f64) -> Result<f64> {
    let d = p0.dim();
    let r = rbar(d);
    let q = split_quadrature(d, r_cut)?;
    let pa = SymbolClassParams::new(0, r, 1, d)?;
    let pb = SymbolClassParams::new(1, r.saturating_sub(1), 1, d)?;
    let mut eta: f64 = 0.0;
    for j in 0..d {
        for k in j..d {
            eta = eta.max(symbol_norm(&p0.a_perturbation(j, k), pa, &q)?);
        }
        eta = eta.max(symbol_norm(&p0.b_symbol(j), pb, &q)?);
    }
    Ok(eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::catalog;
    use approx::assert_relative_eq;

    #[test]
    fn small_matrix_algebra() {
        let m = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let lu = DMatrix::from_row_slice(3, 3, &m).lu().determinant();
        assert_relative_eq!(det_of(&m, 3), lu, max_relative = 1e-14);
        let inv = inverse_of(&m, 3);
        let prod = DMatrix::from_row_slice(3, 3, &m) * DMatrix::from_row_slice(3, 3, &inv);
        assert!((prod - DMatrix::identity(3, 3)).abs().max() < 1e-14);
    }

    fn power_delta(c: f64, rho: f64) -> ScalarSymbol {
        ScalarSymbol::new(FnSymbol {
            dim: 3,
            value: move |x: &[f64]| c * norm2(x).powf(-0.5 * rho),
            jet: move |x: &[Jet]| norm2(x).powf(-0.5 * rho) * c,
        })
    }

    #[test]
    fn transport_matches_power_law_closed_form() {
        let tr = Transport::new(power_delta(0.2, 0.7), 2.0).unwrap();
        for s in [2.5, 4.0, 9.0, 40.0, 300.0] {
            let x = [s * 0.6, -s * 0.8, 0.0];
            let exact = power_law_transport(0.2, 0.7, 3, 2.0, s);
            assert_relative_eq!(tr.raw(&x), exact, epsilon = 1e-12);
            assert_relative_eq!(tr.raw_jet(&Jet::seed(&x, 0)).value(), exact, epsilon = 1e-12);
            assert!(tr.ode_residual(&x).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_defect_gives_identity() {
        let flat = catalog("flat", &[], 3).unwrap();
        let delta = volume_defect(&flat);
        let choice = choose_r(&delta, 1.0).unwrap();
        assert_eq!(choice.r, 1.0);
        let chi = build_diffeo(Transport::new(delta, choice.r).unwrap()).unwrap();
        let x = [1.5, -2.0, 7.0];
        assert_eq!(chi.map(&x), x.to_vec());
        assert_relative_eq!(chi.det_lu(&x), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn non_decaying_defect_is_rejected() {
        let delta = ScalarSymbol::constant(3, 0.9);
        assert!(matches!(choose_r(&delta, 0.5), Err(Error::GaugeConditionsFailed(_))));
    }

    #[test]
    fn conjugated_flat_is_laplacian() {
        let p = conjugate_to_lebesgue(&catalog("flat", &[], 3).unwrap()).unwrap();
        let x = [0.3, -1.2, 2.0];
        assert_eq!(p.principal(&x), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(p.b(&x), vec![0.0; 3]);
        assert_eq!(p.v(&x), 0.0);
    }

    #[test]
    fn expanded_coefficients_reproduce_product_formula() {
        let g = catalog("aniso_bump", &[0.4, 3.0, 0.5, 0.0, -0.3], 3).unwrap();
        let p = conjugate_to_lebesgue(&g).unwrap();
        let u = |x: &[Jet]| (norm2(x) * -0.3).exp() * (x[0] + 0.5);
        for x in [[0.1, 0.2, -0.3], [1.0, -0.5, 0.7], [-1.2, 0.4, 0.2]] {
            let a = p.apply_direct(&u, &x);
            let b = p.apply_expanded(&u, &x);
            assert!((a - b).abs() < 1e-11 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn split_parts_sum_to_the_whole() {
        let g = catalog("radial_power", &[0.2, 1.0, 1.0], 3).unwrap();
        let p = conjugate_to_lebesgue(&g).unwrap();
        let s = split_small_plus_compact(&p, 4.0, f64::INFINITY).unwrap();
        for x in [[0.5, 0.1, 0.0], [4.5, 3.0, 2.0], [20.0, 1.0, -3.0]] {
            let a = p.principal(&x);
            let a0 = s.p0.principal(&x);
            let aw = s.w.principal(&x);
            for i in 0..9 {
                assert!((a0[i] + aw[i] - a[i]).abs() <= 1e-12);
            }
            assert!((s.p0.v(&x) + s.w.v(&x) - p.v(&x)).abs() <= 1e-12 * (1.0 + p.v(&x).abs()));
        }
        let far = [9.0, 0.0, 0.0];
        assert!(s.w.principal(&far).iter().all(|v| *v == 0.0));
        assert_eq!(s.w.v(&far), 0.0);
    }
}
