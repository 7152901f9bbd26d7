//! Functional calculus for discrete self-adjoint operators: smooth spectral
//! cutoffs, the Helffer–Sjöstrand and Stone representations, dyadic
//! partitions, and weighted norms of low-frequency propagators.

use crate::bump::{cutoff_of, Bump};
use crate::error::{invalid, Error, Result};
use crate::fit::{monotone_envelope, power_law, PowerFit};
use crate::jet::{factorial, Jet};
use crate::lattice::{weight_vector, DiscreteOperator, EigenOracle, GridFunction};
use crate::metric::rbar;
use crate::quad::gauss_legendre;
use crate::resolvent::Resolvent;
use crate::{vecops, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Smooth real function of the spectral variable.
pub trait SpectralFunction: Send + Sync {
    /// Interval outside of which the function vanishes.
    fn support(&self) -> (f64, f64);
    /// `f^{(k)}(x)` for `k = 0..=order`.
    fn derivatives(&self, x: f64, order: usize) -> Vec<f64>;
    fn eval(&self, x: f64) -> f64 {
        self.derivatives(x, 0)[0]
    }
}

impl SpectralFunction for Bump {
    fn support(&self) -> (f64, f64) {
        Bump::support(self)
    }
    fn derivatives(&self, x: f64, order: usize) -> Vec<f64> {
        Bump::derivatives(self, x, order)
    }
    fn eval(&self, x: f64) -> f64 {
        Bump::eval(self, x)
    }
}

fn jet_derivatives(x: f64, order: usize, f: impl Fn(Jet) -> Jet) -> Vec<f64> {
    let j = f(Jet::variable(1, order, x, 0));
    j.coeffs().iter().enumerate().map(|(k, c)| c * factorial(k)).collect()
}

/// `x ↦ f(scale · x)`.
#[derive(Clone)]
pub struct Scaled {
    pub inner: Arc<dyn SpectralFunction>,
    pub scale: f64,
}

impl SpectralFunction for Scaled {
    fn support(&self) -> (f64, f64) {
        let (a, b) = self.inner.support();
        (a / self.scale, b / self.scale)
    }
    fn derivatives(&self, x: f64, order: usize) -> Vec<f64> {
        let mut d = self.inner.derivatives(self.scale * x, order);
        let mut p = 1.0;
        for v in d.iter_mut() {
            *v *= p;
            p *= self.scale;
        }
        d
    }
}

/// Pointwise product.
#[derive(Clone)]
pub struct Product(pub Arc<dyn SpectralFunction>, pub Arc<dyn SpectralFunction>);

impl SpectralFunction for Product {
    fn support(&self) -> (f64, f64) {
        let (a0, b0) = self.0.support();
        let (a1, b1) = self.1.support();
        let lo = a0.max(a1);
        (lo, b0.min(b1).max(lo))
    }
    fn derivatives(&self, x: f64, order: usize) -> Vec<f64> {
        let f = self.0.derivatives(x, order);
        let g = self.1.derivatives(x, order);
        (0..=order)
            .map(|k| {
                let mut binom = 1.0;
                let mut s = 0.0;
                for j in 0..=k {
                    s += binom * f[j] * g[k - j];
                    binom = binom * (k - j) as f64 / (j + 1) as f64;
                }
                s
            })
            .collect()
    }
}

/// Low-block cutoff of the dyadic partition: 1 below 1, 0 above 3/2.
pub fn low_block(x: f64) -> f64 {
    cutoff_of(x, 1.0, 1.5)
}

/// Cutoff equal to 1 on `[0, plateau]` and vanishing beyond `end`, made
/// compactly supported by mirroring onto the negative axis (where a
/// nonnegative operator has no spectrum).
pub fn low_cutoff(plateau: f64, end: f64) -> Bump {
    Bump::new(-plateau, plateau, end - plateau, end - plateau)
}

/// `θ(2^{-k-1}x) - θ(2^{-k}x)` with `θ` the low block; supported in `[2^k, 3·2^k]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DyadicPiece {
    pub k: i32,
}

impl SpectralFunction for DyadicPiece {
    fn support(&self) -> (f64, f64) {
        let s = 2f64.powi(self.k);
        (s, 3.0 * s)
    }
    fn derivatives(&self, x: f64, order: usize) -> Vec<f64> {
        let (a, b) = self.support();
        if x <= a || x >= b {
            return vec![0.0; order + 1];
        }
        let s = 2f64.powi(-self.k);
        jet_derivatives(x, order, |j| cutoff_of(j * (0.5 * s), 1.0, 1.5) - cutoff_of(j * s, 1.0, 1.5))
    }
}

/// `Φ₀ + Σ_k φ_k`, with `φ_k = φ(2^{-k}·)`.
#[derive(Clone, Debug)]
pub struct DyadicPartition {
    pub lambda_max: f64,
    pub pieces: Vec<DyadicPiece>,
}

impl DyadicPartition {
    pub fn low(&self, x: f64) -> f64 {
        low_block(x)
    }

    /// `Φ = Σ_k φ_k`, the high-frequency part.
    pub fn high(&self, x: f64) -> f64 {
        self.pieces.iter().map(|p| p.eval(x)).sum()
    }

    pub fn sum(&self, x: f64) -> f64 {
        self.low(x) + self.high(x)
    }

    /// Largest number of pieces that are simultaneously nonzero at a sample.
    pub fn overlap(&self, samples: &[f64]) -> usize {
        samples.iter().map(|&x| self.pieces.iter().filter(|p| p.eval(x) != 0.0).count()).max().unwrap_or(0)
    }
}

/// Builds the partition on `[0, λ_max]`, raising `k_max` if the pieces up
/// to it would not reach `λ_max`.
pub fn dyadic_partition(lambda_max: f64, k_max: usize) -> Result<DyadicPartition> {
    if k_max < 1 || !(lambda_max > 0.0) {
        return Err(invalid("dyadic partition needs k_max ≥ 1 and λ_max > 0"));
    }
    let needed = (lambda_max.log2().ceil() as i64 - 1).max(0) as usize;
    let k = k_max.max(needed);
    Ok(DyadicPartition { lambda_max, pieces: (0..=k as i32).map(|k| DyadicPiece { k }).collect() })
}

/// Band function equal to 1 on the support of the dyadic profile.
pub fn psi_profile() -> Bump {
    Bump::new(0.9, 3.2, 0.1, 0.3)
}

/// `ψ(2^{-k}·)`.
pub fn psi_band(k: i32) -> Scaled {
    Scaled { inner: Arc::new(psi_profile()), scale: 2f64.powi(-k) }
}

/// `χ̃(x+iy) = Σ_{j≤M} χ^{(j)}(x)(iy)^j/j! · σ(|y|/w)`.
pub struct AlmostAnalytic<'a> {
    pub base: &'a dyn SpectralFunction,
    pub order: usize,
    pub width: f64,
}

impl AlmostAnalytic<'_> {
    fn taylor(&self, d: &[f64], y: f64) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        let mut p = C64::new(1.0, 0.0);
        for (j, dj) in d.iter().take(self.order + 1).enumerate() {
            s += p * (*dj / factorial(j));
            p *= C64::new(0.0, y);
        }
        s
    }

    pub fn value(&self, z: C64) -> C64 {
        let d = self.base.derivatives(z.re, self.order);
        self.taylor(&d, z.im) * cutoff_of(z.im.abs() / self.width, 0.5, 1.0)
    }

    pub fn dbar(&self, z: C64) -> C64 {
        self.dbar_from(&self.base.derivatives(z.re, self.order + 1), z.im)
    }

    /// `σ(|y|/w)` and its derivative in `y`.
    fn sigma(&self, y: f64) -> (f64, f64) {
        let s = Jet::variable(1, 1, y.abs() / self.width, 0);
        let sig = cutoff_of(s, 0.5, 1.0);
        (sig.coeffs()[0], y.signum() * sig.coeffs()[1] / self.width)
    }

    /// `∂̄χ̃` from `χ^{(0..=M+1)}(x)`.
    fn dbar_from(&self, d: &[f64], y: f64) -> C64 {
        self.dbar_with(d, y, self.sigma(y))
    }

    fn dbar_with(&self, d: &[f64], y: f64, (sv, sy): (f64, f64)) -> C64 {
        let m = self.order;
        let mut out = C64::new(0.0, y).powu(m as u32) * (0.5 * d[m + 1] / factorial(m) * sv);
        if sy != 0.0 {
            out += C64::new(0.0, 0.5 * sy) * self.taylor(d, y);
        }
        out
    }

    /// `max |∂̄χ̃(z)| / |Im z|^M` over the samples.
    pub fn dbar_constant(&self, samples: &[C64]) -> f64 {
        samples
            .iter()
            .filter(|z| z.im != 0.0)
            .map(|z| self.dbar(*z).norm() / z.im.abs().powi(self.order as i32))
            .fold(0.0, f64::max)
    }
}

/// Plane quadrature for the Helffer–Sjöstrand integral. The defaults suit
/// cutoffs whose transitions have unit length; the high derivatives of the
/// standard bump grow fast enough that the x panels must stay far below the
/// transition length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsParams {
    /// Taylor degree of the almost-analytic extension
    pub order: usize,
    /// geometric bands `[w/2^{l+1}, w/2^l]` toward the real axis
    pub levels: usize,
    pub width: f64,
    /// Gauss points per x panel and per y band
    pub nx: usize,
    pub ny: usize,
    /// Gauss panels across the cutoff band `[w/2, w]`
    pub cutoff_panels: usize,
    /// upper bound on the x panel width
    pub max_panel: f64,
    pub solve_tol: f64,
}

impl Default for HsParams {
    fn default() -> Self {
        HsParams { order: 8, levels: 6, width: 0.4, nx: 16, ny: 8, cutoff_panels: 32, max_panel: 0.004, solve_tol: 1e-12 }
    }
}

impl HsParams {
    /// Mesh for cutoffs whose transitions have length `s`.
    pub fn for_transition(s: f64) -> Self {
        let d = HsParams::default();
        HsParams { width: d.width * s, max_panel: d.max_panel * s, ..d }
    }
}

fn gauss_panel(t: &[f64], w: &[f64], start: f64, len: f64) -> Vec<(f64, f64)> {
    t.iter().zip(w).map(|(s, v)| (start + 0.5 * len * (s + 1.0), 0.5 * len * v)).collect()
}

/// Weighted shifts `(z, (1/π) ∂̄χ̃(z) dA)` covering both half planes.
pub fn hs_nodes(chi: &dyn SpectralFunction, p: &HsParams) -> Result<Vec<(C64, C64)>> {
    let (a, b) = chi.support();
    if !(a.is_finite() && b.is_finite()) {
        return Err(invalid("Helffer–Sjöstrand needs a compactly supported function"));
    }
    if p.order < 1 || p.levels < 1 || p.cutoff_panels < 1 || !(p.width > 0.0) {
        return Err(invalid("Helffer–Sjöstrand mesh parameters"));
    }
    let ext = AlmostAnalytic { base: chi, order: p.order, width: p.width };
    let (gx, wx) = gauss_legendre(p.nx);
    let (gy, wy) = gauss_legendre(p.ny);
    let mut nodes = Vec::new();
    for l in 0..p.levels {
        let y_hi = p.width / 2f64.powi(l as i32);
        let y_lo = 0.5 * y_hi;
        let ys: Vec<(f64, f64)> = if l == 0 {
            let dy = (y_hi - y_lo) / p.cutoff_panels as f64;
            (0..p.cutoff_panels).flat_map(|i| gauss_panel(gy, wy, y_lo + i as f64 * dy, dy)).collect()
        } else {
            gauss_panel(gy, wy, y_lo, y_hi - y_lo)
        };
        let sig: Vec<(f64, f64)> = ys.iter().map(|&(y, _)| ext.sigma(y)).collect();
        let panel = (2.0 * y_lo).min(p.max_panel);
        let count = ((b - a) / panel).ceil().max(1.0) as usize;
        let pw = (b - a) / count as f64;
        for c in 0..count {
            let x0 = a + c as f64 * pw;
            for (t, w) in gx.iter().zip(wx) {
                let x = x0 + 0.5 * pw * (t + 1.0);
                let d = chi.derivatives(x, p.order + 1);
                if d.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for (&(y, wy), &(sv, sy)) in ys.iter().zip(&sig) {
                    let area = 0.5 * pw * w * wy / std::f64::consts::PI;
                    for (yy, sy) in [(y, sy), (-y, -sy)] {
                        let g = ext.dbar_with(&d, yy, (sv, sy));
                        if g != C64::new(0.0, 0.0) {
                            nodes.push((C64::new(x, yy), g * area));
                        }
                    }
                }
            }
        }
    }
    Ok(nodes)
}

#[derive(Clone, Debug)]
pub struct HsResult {
    pub value: GridFunction,
    pub nodes: usize,
}

/// `χ(M) f` by the Helffer–Sjöstrand formula.
pub fn hs_apply(res: &Resolvent, chi: &dyn SpectralFunction, f: &GridFunction, p: &HsParams) -> Result<HsResult> {
    let nodes = hs_nodes(chi, p)?;
    let data = res.combine(&nodes, &f.data, p.solve_tol)?;
    Ok(HsResult { value: GridFunction { grid: f.grid.clone(), data }, nodes: nodes.len() })
}

#[derive(Clone, Debug)]
pub struct StoneResult {
    pub deltas: Vec<f64>,
    pub approximations: Vec<GridFunction>,
    /// polynomial extrapolation of the approximations to `δ = 0`
    pub limit: GridFunction,
    /// `‖A(δ_{i+1}) - A(δ_i)‖ / ‖f‖`
    pub increments: Vec<f64>,
    pub monotone: bool,
}

/// Shifts and weights of `(1/π)∫ φ(λ) Im(M - λ - iδ)^{-1} dλ`, composite
/// Simpson in λ.
pub fn stone_nodes(phi: &dyn SpectralFunction, delta: f64) -> Result<Vec<(C64, C64)>> {
    let (a, b) = phi.support();
    if !(a.is_finite() && b.is_finite()) || !(delta > 0.0) {
        return Err(invalid("Stone formula needs a compact support and δ > 0"));
    }
    let step = (delta / 4.0).min((b - a) / 200.0);
    let mut n = ((b - a) / step).ceil() as usize;
    n += n % 2;
    let h = (b - a) / n as f64;
    let half_i = C64::new(0.0, 0.5);
    let mut nodes = Vec::with_capacity(2 * n);
    for i in 1..n {
        let l = a + i as f64 * h;
        let c = if i % 2 == 1 { 4.0 } else { 2.0 } * h / 3.0 * phi.eval(l) / std::f64::consts::PI;
        if c != 0.0 {
            // Im B = (B - B*)/2i with B = (M - λ - iδ)^{-1}
            nodes.push((C64::new(l, delta), -half_i * c));
            nodes.push((C64::new(l, -delta), half_i * c));
        }
    }
    Ok(nodes)
}

/// `φ(M) f` as the `δ ↓ 0` limit of Stone integrals.
pub fn stone_apply(res: &Resolvent, phi: &dyn SpectralFunction, f: &GridFunction, deltas: &[f64]) -> Result<StoneResult> {
    if deltas.is_empty() || deltas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("δ list must be nonempty and strictly decreasing"));
    }
    let mut approx = Vec::with_capacity(deltas.len());
    for &d in deltas {
        let data = res.combine(&stone_nodes(phi, d)?, &f.data, 1e-12)?;
        approx.push(data);
    }
    let fnorm = vecops::norm(&f.data).max(1e-300);
    let increments: Vec<f64> = approx.windows(2).map(|w| vecops::norm(&vecops::sub(&w[1], &w[0])) / fnorm).collect();
    let monotone = increments.windows(2).all(|w| w[1] <= w[0]);
    let limit = neville_at_zero(deltas, &approx);
    let wrap = |data: Vec<C64>| GridFunction { grid: f.grid.clone(), data };
    Ok(StoneResult {
        deltas: deltas.to_vec(),
        limit: wrap(limit),
        approximations: approx.into_iter().map(wrap).collect(),
        increments,
        monotone,
    })
}

/// Value at 0 of the interpolating polynomial through `(x_i, y_i)`.
fn neville_at_zero(x: &[f64], y: &[Vec<C64>]) -> Vec<C64> {
    let mut p: Vec<Vec<C64>> = y.to_vec();
    let n = x.len();
    for m in 1..n {
        for i in 0..n - m {
            let (xi, xj) = (x[i], x[i + m]);
            p[i] = p[i].iter().zip(&p[i + 1]).map(|(a, b)| (xi * b - xj * a) / (xi - xj)).collect();
        }
    }
    p.swap_remove(0)
}

/// Low-frequency propagators, each later multiplied by a cutoff near 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Flavor {
    Schrodinger,
    HalfWave { mass: f64 },
    Cos,
    Sinc,
}

impl Flavor {
    pub fn eval(&self, t: f64, lambda: f64) -> C64 {
        let l = lambda.abs();
        match *self {
            Flavor::Schrodinger => C64::from_polar(1.0, -t * lambda),
            Flavor::HalfWave { mass } => C64::from_polar(1.0, -t * (l + mass * mass).sqrt()),
            Flavor::Cos => C64::new((t * l.sqrt()).cos(), 0.0),
            Flavor::Sinc => {
                let s = l.sqrt();
                C64::new(if s * t.abs() < 1e-8 { t } else { (t * s).sin() / s }, 0.0)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Flavor::Schrodinger => "schrodinger",
            Flavor::HalfWave { .. } => "halfwave",
            Flavor::Cos => "cos",
            Flavor::Sinc => "sinc",
        }
    }

    pub fn parse(name: &str, mass: f64) -> Result<Self> {
        match name {
            "schrodinger" => Ok(Flavor::Schrodinger),
            "halfwave" => Ok(Flavor::HalfWave { mass }),
            "cos" => Ok(Flavor::Cos),
            "sinc" => Ok(Flavor::Sinc),
            _ => Err(invalid(format!("unknown flavor {name}"))),
        }
    }
}

/// `⟨x⟩^{-ν} g(M) ⟨x⟩^{-ν}` restricted to the eigenvalues in a window,
/// stored in the reduced form `S g(Λ) S` with `S = (QᵀW²Q)^{1/2}`, which
/// has the same singular values.
pub struct WeightedWindow {
    pub values: Vec<f64>,
    sqrt_gram: faer::Mat<f64>,
}

impl WeightedWindow {
    pub fn new(oracle: &EigenOracle, nu: f64, lo: f64, hi: f64) -> Result<Self> {
        let idx: Vec<usize> = (0..oracle.values.len()).filter(|&i| (lo..=hi).contains(&oracle.values[i])).collect();
        if idx.is_empty() {
            return Err(invalid(format!("no eigenvalues in [{lo}, {hi}]")));
        }
        let w = weight_vector(&oracle.grid, nu);
        let n = w.len();
        let v = faer::Mat::<f64>::from_fn(n, idx.len(), |r, c| w[r] * oracle.vectors[(r, idx[c])]);
        let gram = v.transpose() * &v;
        let evd = gram.self_adjoint_eigen(faer::Side::Lower).map_err(|_| Error::Eigen)?;
        let k = idx.len();
        let s = evd.S().column_vector();
        let u = evd.U();
        let mut scaled = u.to_owned();
        for j in 0..k {
            let r = s[j].max(0.0).sqrt();
            for i in 0..k {
                scaled[(i, j)] *= r;
            }
        }
        let sqrt_gram = &scaled * u.transpose();
        Ok(WeightedWindow { values: idx.iter().map(|&i| oracle.values[i]).collect(), sqrt_gram })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `‖⟨x⟩^{-ν} g(M) P_window ⟨x⟩^{-ν}‖` in the Euclidean pairing.
    pub fn norm(&self, g: impl Fn(f64) -> C64) -> Result<f64> {
        let k = self.len();
        let d: Vec<C64> = self.values.iter().map(|&l| g(l)).collect();
        let s = &self.sqrt_gram;
        let b = faer::Mat::<C64>::from_fn(k, k, |i, j| {
            let mut acc = C64::new(0.0, 0.0);
            for (m, dm) in d.iter().enumerate() {
                acc += *dm * (s[(i, m)] * s[(m, j)]);
            }
            acc
        });
        let sv = b.singular_values().map_err(|_| Error::Eigen)?;
        Ok(sv.into_iter().fold(0.0, f64::max))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub t: f64,
    pub norm: f64,
    pub envelope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayTable {
    pub flavor: Flavor,
    pub nu: f64,
    /// whether `ν > 2(r̄(d)+1)`
    pub hypothesis_met: bool,
    pub rows: Vec<DecayRow>,
    /// log-log fit of the envelope against `⟨t⟩`
    pub fit: PowerFit,
    pub exponent: f64,
}

/// Weighted norms of `χ(M)·flavor_t(M)` on the eigen-oracle, their
/// nonincreasing envelope, and its fitted decay exponent.
pub fn ibp_low_freq(
    oracle: &EigenOracle,
    chi: &dyn SpectralFunction,
    times: &[f64],
    nu: f64,
    flavor: Flavor,
) -> Result<DecayTable> {
    let (a, b) = chi.support();
    let window = WeightedWindow::new(oracle, nu, a, b)?;
    low_freq_table(&window, chi, times, nu, flavor, oracle.grid.dim)
}

/// As [`ibp_low_freq`] with a prebuilt window.
pub fn low_freq_table(
    window: &WeightedWindow,
    chi: &dyn SpectralFunction,
    times: &[f64],
    nu: f64,
    flavor: Flavor,
    dim: usize,
) -> Result<DecayTable> {
    let positive: Vec<f64> = times.iter().copied().filter(|t| *t > 0.0).collect();
    let (tmin, tmax) = positive.iter().fold((f64::INFINITY, 0.0f64), |(a, b), t| (a.min(*t), b.max(*t)));
    if positive.len() < 3 || tmax < 10.0 * tmin {
        return Err(Error::FitWindow(format!("t range [{tmin}, {tmax}] spans less than one decade")));
    }
    let norms: Vec<f64> =
        times.iter().map(|&t| window.norm(|l| flavor.eval(t, l) * chi.eval(l))).collect::<Result<_>>()?;
    let env = monotone_envelope(&norms);
    let bracket: Vec<f64> = times.iter().map(|t| (1.0 + t * t).sqrt()).collect();
    let fit = power_law(&bracket, &env)?;
    let rows = times.iter().zip(&norms).zip(&env).map(|((&t, &norm), &envelope)| DecayRow { t, norm, envelope }).collect();
    Ok(DecayTable {
        flavor,
        nu,
        hypothesis_met: nu > 2.0 * (rbar(dim) + 1) as f64,
        rows,
        exponent: -fit.slope,
        fit,
    })
}

/// `‖⟨x⟩^{-ν} Im((M - iδ)^{-k}) ⟨x⟩^{-ν}‖` for each δ.
pub fn boundary_term_norms(oracle: &EigenOracle, nu: f64, k: u32, deltas: &[f64]) -> Result<Vec<f64>> {
    let top = oracle.values.iter().copied().fold(f64::MIN, f64::max);
    let window = WeightedWindow::new(oracle, nu, f64::MIN, top)?;
    deltas
        .iter()
        .map(|&d| window.norm(|l| C64::new(C64::new(l, -d).powi(-(k as i32)).im, 0.0)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    /// smallest constant making the inequality hold on all samples
    pub constant: f64,
    pub c_cap: f64,
    /// overlap count of the band family
    pub overlap: usize,
    /// `‖Σψ_k v_k‖² / Σ‖v_k‖²` maximized over random samples
    pub almost_orthogonality: f64,
    /// `sup_λ Σ_k ψ_k(λ)²`, the sharp constant of the same step
    pub almost_orthogonality_sharp: f64,
    pub bands: usize,
    pub samples: usize,
    pub pass: bool,
}

/// Measures the constant in
/// `‖W Φ(M) U(t) W u‖² ≤ C Σ_k e_k(t)² (‖ψ_k(M)u‖² + 2^{-kM/2}‖(1+M)^{-M/2}u‖²)`
/// with `e_k(t) = ‖W U(t) φ_k(M) W‖` and `W = ⟨x⟩^{-ν}`.
pub fn localization_inequality_check(
    oracle: &EigenOracle,
    flavor: Flavor,
    nu: f64,
    times: &[f64],
    us: &[Vec<C64>],
    order: usize,
    seed: u64,
) -> Result<LocalizationReport> {
    let lmax = oracle.values.iter().copied().fold(0.0, f64::max);
    let part = dyadic_partition(lmax, 1)?;
    let bands: Vec<i32> = part.pieces.iter().map(|p| p.k).filter(|&k| 2f64.powi(k) < lmax).collect();
    let psis: Vec<Scaled> = bands.iter().map(|&k| psi_band(k)).collect();
    let windows: Vec<WeightedWindow> = bands
        .iter()
        .map(|&k| {
            let (a, b) = DyadicPiece { k }.support();
            WeightedWindow::new(oracle, nu, a, b)
        })
        .collect::<Result<_>>()?;
    let wv = weight_vector(&oracle.grid, nu);
    let weigh = |u: &[C64]| -> Vec<C64> { u.iter().zip(&wv).map(|(a, b)| a * b).collect() };
    let sq = |v: &[C64]| vecops::norm(v).powi(2);

    let mut constant: f64 = 0.0;
    for &t in times {
        let e: Vec<f64> = windows
            .iter()
            .zip(&bands)
            .map(|(w, &k)| w.norm(|l| flavor.eval(t, l) * DyadicPiece { k }.eval(l)))
            .collect::<Result<_>>()?;
        for u in us {
            let lhs = sq(&weigh(&oracle.apply(&weigh(u), |l| flavor.eval(t, l) * part.high(l))));
            let smooth = sq(&oracle.apply(u, |l| C64::new((1.0 + l).powf(-0.5 * order as f64), 0.0)));
            let mut rhs = 0.0;
            for (i, &k) in bands.iter().enumerate() {
                let band = sq(&oracle.apply(u, |l| C64::new(psis[i].eval(l), 0.0)));
                let h_m = 2f64.powf(-0.5 * k as f64 * order as f64);
                rhs += e[i] * e[i] * (band + h_m * smooth);
            }
            if lhs > 0.0 {
                constant = constant.max(if rhs > 0.0 { lhs / rhs } else { f64::INFINITY });
            }
        }
    }

    let samples: Vec<f64> = (0..4000).map(|i| lmax * 1.05 * i as f64 / 3999.0).collect();
    let overlap = samples.iter().map(|&x| psis.iter().filter(|p| p.eval(x) != 0.0).count()).max().unwrap_or(0);
    let sharp = samples.iter().map(|&x| psis.iter().map(|p| p.eval(x).powi(2)).sum::<f64>()).fold(0.0, f64::max);
    let n = oracle.values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ao: f64 = 0.0;
    for _ in 0..8 {
        let mut total = vec![C64::new(0.0, 0.0); n];
        let mut denom = 0.0;
        for p in &psis {
            let v: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            denom += sq(&v);
            let pv = oracle.apply(&v, |l| C64::new(p.eval(l), 0.0));
            vecops::axpy(C64::new(1.0, 0.0), &pv, &mut total);
        }
        ao = ao.max(sq(&total) / denom);
    }
    let c_cap = 10.0 * overlap as f64;
    Ok(LocalizationReport {
        constant,
        c_cap,
        overlap,
        almost_orthogonality: ao,
        almost_orthogonality_sharp: sharp,
        bands: bands.len(),
        samples: times.len() * us.len(),
        pass: constant <= c_cap && ao <= 3.0 && sharp <= 3.0 + 1e-12,
    })
}

/// Residual of `ψR = ΨR₀ψ - ΨR₀WψR₀Ψ + ΨR₀W(ψR)WR₀Ψ` applied to `f`, with
/// `R = (P - z)^{-1}`, `R₀ = (P₀ - z)^{-1}`, `P = P₀ + W` and `Ψψ = ψ`.
pub fn localized_identity_check(
    p: &EigenOracle,
    p0: &Resolvent,
    w: &DiscreteOperator,
    psi: &dyn SpectralFunction,
    big_psi: &dyn SpectralFunction,
    z: C64,
    f: &[C64],
    tol: f64,
) -> Result<f64> {
    if p.values.iter().any(|&l| (big_psi.eval(l) * psi.eval(l) - psi.eval(l)).abs() > 1e-14) {
        return Err(invalid("outer cutoff must equal 1 on the support of the inner one"));
    }
    let small = |u: &[C64]| p.apply(u, |l| C64::new(psi.eval(l), 0.0));
    let big = |u: &[C64]| p.apply(u, |l| C64::new(big_psi.eval(l), 0.0));
    let r0 = |u: &[C64]| -> Result<Vec<C64>> { Ok(p0.solve(z, u, tol)?.0) };
    let lhs = p.apply(f, |l| psi.eval(l) / (C64::new(l, 0.0) - z));

    let first = big(&r0(&small(f))?);
    let r0_big_f = r0(&big(f))?;
    let second = big(&r0(&w.apply(&small(&r0_big_f)))?);
    let inner = p.apply(&w.apply(&r0_big_f), |l| psi.eval(l) / (C64::new(l, 0.0) - z));
    let third = big(&r0(&w.apply(&inner))?);
    let rhs: Vec<C64> = first.iter().zip(&second).zip(&third).map(|((a, b), c)| a - b + c).collect();
    Ok(vecops::rel_diff(&rhs, &lhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scaled_and_product_derivatives() {
        let b: Arc<dyn SpectralFunction> = Arc::new(Bump::new(0.0, 1.0, 0.5, 0.5));
        let s = Scaled { inner: b.clone(), scale: 2.0 };
        let x = 0.6;
        let h = 1e-5;
        let fd = (s.eval(x + h) - s.eval(x - h)) / (2.0 * h);
        assert_relative_eq!(s.derivatives(x, 1)[1], fd, max_relative = 1e-7);
        let p = Product(b.clone(), Arc::new(s));
        let fd = (p.eval(x + h) - p.eval(x - h)) / (2.0 * h);
        assert_relative_eq!(p.derivatives(x, 1)[1], fd, max_relative = 1e-7);
        assert_eq!(p.support(), (-0.25, 0.75));
    }

    #[test]
    fn partition_sums_to_one() {
        let part = dyadic_partition(1000.0, 1).unwrap();
        assert_eq!(part.pieces.len(), 10);
        for i in 0..1000 {
            let x = 1000.0 * i as f64 / 999.0;
            assert!((part.sum(x) - 1.0).abs() <= 1e-12, "{x}");
        }
        let samples: Vec<f64> = (0..5000).map(|i| 0.2 * i as f64).collect();
        assert!(part.overlap(&samples) <= 2);
    }

    #[test]
    fn psi_covers_dyadic_support() {
        let p = psi_profile();
        for i in 0..=200 {
            let x = 1.0 + 2.0 * i as f64 / 200.0;
            assert_eq!(p.eval(x), 1.0);
        }
    }

    #[test]
    fn extension_restricts_to_function() {
        let b = Bump::new(0.0, 1.0, 0.5, 0.5);
        let ext = AlmostAnalytic { base: &b, order: 6, width: 0.3 };
        for x in [-0.3, 0.2, 1.2] {
            assert_relative_eq!(ext.value(C64::new(x, 0.0)).re, b.eval(x), epsilon = 1e-15);
        }
        // inside the plateau of σ the bound constant is exactly |χ^{(M+1)}|/(2 M!)
        let x = 1.3;
        let z = C64::new(x, 0.05);
        let want = b.derivatives(x, 7)[7].abs() / (2.0 * factorial(6));
        assert_relative_eq!(ext.dbar_constant(&[z]), want, max_relative = 1e-12);
    }

    #[test]
    fn extrapolation_is_exact_on_polynomials() {
        let x = [0.4, 0.2, 0.1];
        let y: Vec<Vec<C64>> = x.iter().map(|t| vec![C64::new(1.0 + 2.0 * t - 3.0 * t * t, 0.0)]).collect();
        assert_relative_eq!(neville_at_zero(&x, &y)[0].re, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn sinc_limit_at_zero() {
        assert_relative_eq!(Flavor::Sinc.eval(2.0, 0.0).re, 2.0);
        assert_relative_eq!(Flavor::Sinc.eval(2.0, 0.25).re, (1.0f64).sin() / 0.5);
    }
}
