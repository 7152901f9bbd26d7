//! Long-range metrics, scalar symbols and the weighted Lebesgue symbol norms.

use crate::bump;
use crate::error::{invalid, Error, Result};
use crate::jet::{bracket, degree_range, factorial, norm2, Jet, Real};
use crate::quad::gauss_legendre;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

/// Number of integrations by parts available in dimension `d`.
pub fn rbar(d: usize) -> usize {
    if d % 2 == 1 {
        d / 2
    } else {
        (d / 2).saturating_sub(1)
    }
}

/// A field of symmetric positive definite matrices `G(x)` (the cometric
/// `G^{jk}`), stored row-major, evaluable on floats and on jets.
pub trait Metric: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_f64(&self, x: &[f64]) -> Vec<f64>;
    fn eval_jet(&self, x: &[Jet]) -> Vec<Jet>;
}

/// Closed-form metric written once over [`Real`].
pub trait MetricExpr: Send + Sync {
    fn dim(&self) -> usize;
    fn expr<T: Real>(&self, x: &[T]) -> Vec<T>;
}

impl<M: MetricExpr> Metric for M {
    fn dim(&self) -> usize {
        MetricExpr::dim(self)
    }
    fn eval_f64(&self, x: &[f64]) -> Vec<f64> {
        self.expr(x)
    }
    fn eval_jet(&self, x: &[Jet]) -> Vec<Jet> {
        self.expr(x)
    }
}

fn identity_plus<T: Real>(x: &[T], f: impl Fn(usize, usize) -> T) -> Vec<T> {
    let d = x.len();
    let mut g = Vec::with_capacity(d * d);
    for j in 0..d {
        for k in 0..d {
            let v = f(j, k);
            g.push(if j == k { v + 1.0 } else { v });
        }
    }
    g
}

struct Flat {
    dim: usize,
}

impl MetricExpr for Flat {
    fn dim(&self) -> usize {
        self.dim
    }
    fn expr<T: Real>(&self, x: &[T]) -> Vec<T> {
        identity_plus(x, |_, _| x[0].cst(0.0))
    }
}

/// `(1 + c (1 + |x|²/R₀²)^{-ρ/2}) I`.
struct RadialPower {
    dim: usize,
    c: f64,
    rho: f64,
    r0: f64,
}

impl MetricExpr for RadialPower {
    fn dim(&self) -> usize {
        self.dim
    }
    fn expr<T: Real>(&self, x: &[T]) -> Vec<T> {
        let s = (norm2(x) / (self.r0 * self.r0) + 1.0).powf(-0.5 * self.rho) * self.c;
        identity_plus(x, |j, k| if j == k { s } else { s.cst(0.0) })
    }
}

/// Compactly supported anisotropic bump `I + a·β(|x - x0|/w)·B`.
struct AnisoBump {
    dim: usize,
    amplitude: f64,
    width: f64,
    center: Vec<f64>,
}

impl AnisoBump {
    fn shape(j: usize, k: usize) -> f64 {
        // fixed symmetric anisotropy, diagonal dominant
        if j == k {
            1.0 / (1.0 + j as f64)
        } else {
            0.25
        }
    }
}

impl MetricExpr for AnisoBump {
    fn dim(&self) -> usize {
        self.dim
    }
    fn expr<T: Real>(&self, x: &[T]) -> Vec<T> {
        let shifted: Vec<T> = x.iter().zip(&self.center).map(|(a, c)| *a - *c).collect();
        let r2 = norm2(&shifted) / (self.width * self.width);
        let b = if r2.val() >= 1.0 {
            x[0].cst(0.0)
        } else {
            // exp(-1/(1-r²)) normalized to 1 at the center
            ((r2 * -1.0 + 1.0).recip() * -1.0 + 1.0).exp()
        };
        identity_plus(x, |j, k| b * (self.amplitude * Self::shape(j, k)))
    }
}

/// `I + η S(x)` with `S_jk = ⟨x⟩^{-ρ}(D_jk + x_j x_k / (2⟨x⟩²))`.
struct SmallLongRange {
    dim: usize,
    eta: f64,
    rho: f64,
}

impl MetricExpr for SmallLongRange {
    fn dim(&self) -> usize {
        self.dim
    }
    fn expr<T: Real>(&self, x: &[T]) -> Vec<T> {
        let b2 = norm2(x) + 1.0;
        let w = b2.powf(-0.5 * self.rho) * self.eta;
        let inv = b2.recip();
        identity_plus(x, |j, k| {
            let diag = if j == k { (-0.5f64).powi(j as i32) } else { 0.0 };
            w * (x[j] * x[k] * inv * 0.5 + diag)
        })
    }
}

/// Metric with its declared decay order and ellipticity bound.
#[derive(Clone)]
pub struct MetricField {
    inner: Arc<dyn Metric>,
    pub name: String,
    pub rho: f64,
    /// eigenvalues of G lie in [1/Λ, Λ] on the validation sample
    pub lambda: f64,
    /// radius beyond which the decay asymptotics apply
    pub compact_radius: f64,
}

impl std::fmt::Debug for MetricField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricField")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("rho", &self.rho)
            .field("lambda", &self.lambda)
            .finish()
    }
}

impl MetricField {
    /// Wraps an arbitrary metric, validating symmetry and ellipticity on a sample.
    pub fn new(inner: Arc<dyn Metric>, name: &str, rho: f64, compact_radius: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(invalid(format!("decay order must be positive, got {rho}")));
        }
        let mut field = MetricField { inner, name: name.to_string(), rho, lambda: 1.0, compact_radius };
        field.lambda = field.check_ellipticity(2000, 0x5EED)?;
        Ok(field)
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn inner(&self) -> &Arc<dyn Metric> {
        &self.inner
    }

    pub fn matrix(&self, x: &[f64]) -> Vec<f64> {
        self.inner.eval_f64(x)
    }

    pub fn jet(&self, x: &[f64], order: usize) -> Vec<Jet> {
        self.inner.eval_jet(&Jet::seed(x, order))
    }

    pub fn eval_jet(&self, x: &[Jet]) -> Vec<Jet> {
        self.inner.eval_jet(x)
    }

    /// Checks symmetry and ellipticity at `n` random points; returns the recorded Λ.
    pub fn check_ellipticity(&self, n: usize, seed: u64) -> Result<f64> {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lam: f64 = 1.0;
        for i in 0..n {
            let scale = 2f64.powi((i % 12) as i32 - 2);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
            let g = self.matrix(&x);
            for j in 0..d {
                for k in 0..j {
                    let (a, b) = (g[j * d + k], g[k * d + j]);
                    if (a - b).abs() > 1e-14 * (1.0 + a.abs()) {
                        return Err(Error::NotElliptic(format!("asymmetric at {x:?}")));
                    }
                }
            }
            let m = DMatrix::from_row_slice(d, d, &g);
            let ev = SymmetricEigen::new(m).eigenvalues;
            let (lo, hi) = ev.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if !(lo > 0.0) {
                return Err(Error::NotElliptic(format!("eigenvalue {lo:.3e} at {x:?}")));
            }
            lam = lam.max(hi).max(1.0 / lo);
        }
        Ok(lam)
    }

    /// `G_jk - δ_jk` as a scalar symbol.
    pub fn perturbation(&self, j: usize, k: usize) -> ScalarSymbol {
        ScalarSymbol::new(MetricEntry { metric: self.inner.clone(), j, k, minus_identity: true })
    }

    /// `G_jk` as a scalar symbol.
    pub fn entry(&self, j: usize, k: usize) -> ScalarSymbol {
        ScalarSymbol::new(MetricEntry { metric: self.inner.clone(), j, k, minus_identity: false })
    }

    pub fn is_flat_sample(&self) -> bool {
        let d = self.dim();
        [0.0, 0.7, 3.1].iter().all(|&r| {
            let x: Vec<f64> = (0..d).map(|i| r * (1.0 + i as f64) / d as f64).collect();
            let g = self.matrix(&x);
            (0..d).all(|j| (0..d).all(|k| (g[j * d + k] - if j == k { 1.0 } else { 0.0 }).abs() < 1e-15))
        })
    }
}

/// Builds one of the test metrics by name.
///
/// * `flat`: no parameters.
/// * `radial_power`: `[c, rho, r0]`.
/// * `aniso_bump`: `[amplitude, width]`, optional center coordinates after; declared decay 1.
/// * `small_longrange`: `[eta, rho]`.
pub fn catalog(name: &str, params: &[f64], d: usize) -> Result<MetricField> {
    if d == 0 || d > crate::jet::MAX_DIM {
        return Err(invalid(format!("dimension {d} unsupported")));
    }
    let need = |n: usize| -> Result<()> {
        if params.len() < n {
            Err(invalid(format!("{name} needs {n} parameters, got {}", params.len())))
        } else {
            Ok(())
        }
    };
    match name {
        "flat" => MetricField::new(Arc::new(Flat { dim: d }), name, 1.0, 0.0),
        "radial_power" => {
            need(3)?;
            let (c, rho, r0) = (params[0], params[1], params[2]);
            if !(rho > 0.0) || !(r0 > 0.0) {
                return Err(invalid("radial_power needs rho > 0 and r0 > 0"));
            }
            if c <= -1.0 {
                return Err(Error::NotElliptic(format!("amplitude {c} <= -1")));
            }
            MetricField::new(Arc::new(RadialPower { dim: d, c, rho, r0 }), name, rho, r0)
        }
        "aniso_bump" => {
            need(2)?;
            let mut center = vec![0.0; d];
            for (i, c) in params.iter().skip(2).take(d).enumerate() {
                center[i] = *c;
            }
            let radius = params[1] + center.iter().map(|c| c * c).sum::<f64>().sqrt();
            MetricField::new(
                Arc::new(AnisoBump { dim: d, amplitude: params[0], width: params[1], center }),
                name,
                1.0,
                radius,
            )
        }
        "small_longrange" => {
            need(2)?;
            let (eta, rho) = (params[0], params[1]);
            if !(rho > 0.0) {
                return Err(invalid("small_longrange needs rho > 0"));
            }
            MetricField::new(Arc::new(SmallLongRange { dim: d, eta, rho }), name, rho, 1.0)
        }
        other => Err(invalid(format!("unknown metric family '{other}'"))),
    }
}

/// Scalar function of `x` with derivatives available through jets.
pub trait Symbol: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_f64(&self, x: &[f64]) -> f64;
    fn eval_jet(&self, x: &[Jet]) -> Jet;
}

/// Closed-form scalar symbol written once over [`Real`].
pub trait SymbolExpr: Send + Sync {
    fn dim(&self) -> usize;
    fn expr<T: Real>(&self, x: &[T]) -> T;
}

impl<S: SymbolExpr> Symbol for S {
    fn dim(&self) -> usize {
        SymbolExpr::dim(self)
    }
    fn eval_f64(&self, x: &[f64]) -> f64 {
        self.expr(x)
    }
    fn eval_jet(&self, x: &[Jet]) -> Jet {
        self.expr(x)
    }
}

/// Shared handle to a scalar symbol.
#[derive(Clone)]
pub struct ScalarSymbol(Arc<dyn Symbol>);

impl ScalarSymbol {
    pub fn new<S: Symbol + 'static>(s: S) -> Self {
        ScalarSymbol(Arc::new(s))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.0.eval_f64(x)
    }

    pub fn jet(&self, x: &[f64], order: usize) -> Jet {
        self.0.eval_jet(&Jet::seed(x, order))
    }

    pub fn eval_jet(&self, x: &[Jet]) -> Jet {
        self.0.eval_jet(x)
    }

    /// `∂^alpha a(x)`.
    pub fn derivative(&self, x: &[f64], alpha: &[usize]) -> f64 {
        self.jet(x, alpha.iter().sum()).derivative(alpha)
    }

    pub fn constant(d: usize, c: f64) -> Self {
        Self::new(Constant { dim: d, c })
    }

    /// `c ⟨x⟩^{-power}`.
    pub fn bracket_power(d: usize, c: f64, power: f64) -> Self {
        Self::new(BracketPower { dim: d, c, power })
    }

    /// `a(e^τ x)`.
    pub fn dilate(&self, tau: f64) -> Self {
        Self::new(Dilated { inner: self.clone(), scale: tau.exp() })
    }
}

struct Constant {
    dim: usize,
    c: f64,
}

impl SymbolExpr for Constant {
    fn dim(&self) -> usize {
        self.dim
    }
    fn expr<T: Real>(&self, x: &[T]) -> T {
        x[0].cst(self.c)
    }
}

struct BracketPower {
    dim: usize,
    c: f64,
    power: f64,
}

impl SymbolExpr for BracketPower {
    fn dim(&self) -> usize {
        self.dim
    }
    fn expr<T: Real>(&self, x: &[T]) -> T {
        bracket(x).powf(-self.power) * self.c
    }
}

struct MetricEntry {
    metric: Arc<dyn Metric>,
    j: usize,
    k: usize,
    minus_identity: bool,
}

impl Symbol for MetricEntry {
    fn dim(&self) -> usize {
        self.metric.dim()
    }
    fn eval_f64(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let v = self.metric.eval_f64(x)[self.j * d + self.k];
        if self.minus_identity && self.j == self.k {
            v - 1.0
        } else {
            v
        }
    }
    fn eval_jet(&self, x: &[Jet]) -> Jet {
        let d = self.dim();
        let v = self.metric.eval_jet(x)[self.j * d + self.k];
        if self.minus_identity && self.j == self.k {
            v - 1.0
        } else {
            v
        }
    }
}

struct Dilated {
    inner: ScalarSymbol,
    scale: f64,
}

impl Symbol for Dilated {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval_f64(&self, x: &[f64]) -> f64 {
        let y: Vec<f64> = x.iter().map(|v| v * self.scale).collect();
        self.inner.value(&y)
    }
    fn eval_jet(&self, x: &[Jet]) -> Jet {
        let y: Vec<Jet> = x.iter().map(|v| *v * self.scale).collect();
        self.inner.eval_jet(&y)
    }
}

/// Symbol given by a pair of closures, one per scalar type.
pub struct FnSymbol<F, G> {
    pub dim: usize,
    pub value: F,
    pub jet: G,
}

impl<F, G> Symbol for FnSymbol<F, G>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[Jet]) -> Jet + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_f64(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn eval_jet(&self, x: &[Jet]) -> Jet {
        (self.jet)(x)
    }
}

/// Indices `(o, r, N)` of the symbol class `S^{o,r,N}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SymbolClassParams {
    pub o: usize,
    pub r: usize,
    pub n: usize,
}

impl SymbolClassParams {
    pub fn new(o: usize, r: usize, n: usize, d: usize) -> Result<Self> {
        if o > 1 {
            return Err(invalid("o must be 0 or 1"));
        }
        if o + r > rbar(d) {
            return Err(invalid(format!("o + r = {} exceeds {} in dimension {d}", o + r, rbar(d))));
        }
        Ok(SymbolClassParams { o, r, n })
    }

    /// Same, without the `o + r ≤ r̄(d)` constraint (diagnostics only).
    pub fn unchecked(o: usize, r: usize, n: usize) -> Self {
        SymbolClassParams { o, r, n }
    }
}

/// Stirling numbers of the second kind `S(n, k)` for `n ≤ max`.
pub fn stirling2(max: usize) -> Vec<Vec<f64>> {
    let mut s = vec![vec![0.0; max + 1]; max + 1];
    s[0][0] = 1.0;
    for n in 1..=max {
        for k in 1..=n {
            s[n][k] = k as f64 * s[n - 1][k] + s[n - 1][k - 1];
        }
    }
    s
}

/// `(x·∇)^n f` as a jet of order `f.order() - n`, expanded as
/// `Σ_k S(n,k) Σ_{|α|=k} (k!/α!) x^α ∂^α f`.
pub fn euler_power(f: &Jet, base: &[f64], n: usize) -> Jet {
    let k_top = f.order();
    assert!(n <= k_top, "not enough derivatives for (x·∇)^{n}");
    if n == 0 {
        return *f;
    }
    let d = f.dim();
    let out_order = k_top - n;
    let s = stirling2(n);
    let x = Jet::seed(base, out_order);
    let exps = f.exponents();
    let mut out = Jet::constant(d, out_order, 0.0);
    for k in 1..=n {
        for idx in degree_range(d, k_top, k) {
            let alpha = &exps[idx];
            // ∂^α f as a jet of order k_top - k, truncated to out_order
            let mut g = *f;
            for (v, &a) in alpha.iter().enumerate() {
                for _ in 0..a {
                    g = g.diff(v);
                }
            }
            let g = g.truncate(out_order);
            let mut mono = Jet::constant(d, out_order, 1.0);
            let mut afact = 1.0;
            for (v, &a) in alpha.iter().enumerate() {
                for _ in 0..a {
                    mono *= x[v];
                }
                afact *= factorial(a);
            }
            out += mono * g * (s[n][k] * factorial(k) / afact);
        }
    }
    out
}

/// Radial-shell product quadrature on ℝ^d.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    pub dim: usize,
    /// radial nodes with weights including `r^{d-1}`
    pub radial: Vec<(f64, f64)>,
    /// unit directions with surface weights
    pub angular: Vec<(Vec<f64>, f64)>,
    pub r_max: f64,
    pub tail_tol: f64,
    /// number of radial nodes in the outermost shell (used for the tail fit)
    pub outer_shell_nodes: usize,
}

impl QuadratureGrid {
    /// Geometric shells `[0,1], [1,2], [2,4], …` up to `r_max`, with `n_r` Gauss
    /// points per shell and `n_ang` angular points per angle.
    pub fn new(dim: usize, r_max: f64, n_r: usize, n_ang: usize) -> Result<Self> {
        if dim == 0 || r_max <= 1.0 {
            return Err(invalid("quadrature needs d ≥ 1 and r_max > 1"));
        }
        let mut edges = vec![0.0, 1.0];
        while *edges.last().unwrap() < r_max {
            let next = (edges.last().unwrap() * 2.0).min(r_max);
            edges.push(next);
        }
        let (gx, gw) = gauss_legendre(n_r);
        let mut radial = Vec::new();
        for win in edges.windows(2) {
            let (a, b) = (win[0], win[1]);
            for (x, w) in gx.iter().zip(gw) {
                let r = 0.5 * (a + b) + 0.5 * (b - a) * x;
                radial.push((r, 0.5 * (b - a) * w * r.powi(dim as i32 - 1)));
            }
        }
        Ok(QuadratureGrid {
            dim,
            radial,
            angular: sphere_rule(dim, n_ang),
            r_max,
            tail_tol: 1e-8,
            outer_shell_nodes: n_r,
        })
    }

    /// Default resolution used across the crate.
    pub fn standard(dim: usize) -> Self {
        Self::new(dim, 4096.0, 16, 12).expect("valid default quadrature")
    }

    /// Grid matched to `a_τ`: nodes scaled by `e^{-τ}`, weights by `e^{-dτ}`.
    pub fn rescaled(&self, tau: f64) -> Self {
        let s = (-tau).exp();
        let wd = s.powi(self.dim as i32);
        QuadratureGrid {
            radial: self.radial.iter().map(|&(r, w)| (r * s, w * wd)).collect(),
            r_max: self.r_max * s,
            ..self.clone()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        self.radial.iter().flat_map(move |&(r, wr)| {
            self.angular.iter().map(move |(u, wa)| (u.iter().map(|c| c * r).collect(), wr * wa))
        })
    }

    pub fn len(&self) -> usize {
        self.radial.len() * self.angular.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Product rule on the unit sphere `S^{d-1}`: Gauss–Legendre in each polar
/// angle with the `sin^k` density, trapezoid in the azimuth.
fn sphere_rule(d: usize, n: usize) -> Vec<(Vec<f64>, f64)> {
    match d {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        _ => {
            let n_phi = 2 * n;
            let mut base: Vec<(Vec<f64>, f64)> = (0..n_phi)
                .map(|i| {
                    let p = 2.0 * PI * (i as f64 + 0.5) / n_phi as f64;
                    (vec![p.cos(), p.sin()], 2.0 * PI / n_phi as f64)
                })
                .collect();
            let (gx, gw) = gauss_legendre(n);
            // lift from S^{m-1} to S^m using x_new = (sin θ · u, cos θ)
            for m in 2..d {
                let mut next = Vec::with_capacity(base.len() * n);
                for (x, w) in gx.iter().zip(gw) {
                    let theta = 0.5 * PI * (x + 1.0);
                    let (s, c) = theta.sin_cos();
                    let wt = 0.5 * PI * w * s.powi(m as i32 - 1);
                    for (u, wu) in &base {
                        let mut v: Vec<f64> = u.iter().map(|e| e * s).collect();
                        v.push(c);
                        next.push((v, wu * wt));
                    }
                }
                base = next;
            }
            base
        }
    }
}

/// `‖a‖_{o,r,N} = Σ_{n≤N, |α|≤r} ‖∂^α (x·∇)^n a‖_{L^{d/(o+|α|)}}`.
pub fn symbol_norm(a: &ScalarSymbol, p: SymbolClassParams, q: &QuadratureGrid) -> Result<f64> {
    let terms = symbol_norm_terms(a, p, q)?;
    Ok(terms.iter().map(|t| t.value).sum())
}

/// One term of the symbol norm.
#[derive(Clone, Debug, Serialize)]
pub struct NormTerm {
    pub n: usize,
    pub alpha: Vec<usize>,
    pub exponent: f64,
    pub value: f64,
    pub tail: f64,
}

/// All terms of the symbol norm with their tail estimates.
pub fn symbol_norm_terms(a: &ScalarSymbol, p: SymbolClassParams, q: &QuadratureGrid) -> Result<Vec<NormTerm>> {
    let d = q.dim;
    if a.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: a.dim() });
    }
    let order = p.r + p.n;
    let probe = Jet::constant(d, order, 0.0);
    let exps: Vec<Vec<usize>> = probe.exponents().into_iter().filter(|e| e.iter().sum::<usize>() <= p.r).collect();
    for e in &exps {
        let s = p.o + e.iter().sum::<usize>();
        if s > d {
            return Err(Error::NormDivergent { kind: "Lebesgue", detail: format!("exponent d/{s} < 1") });
        }
    }
    // values[n][alpha][radial][angular]
    let nr = q.radial.len();
    let na = q.angular.len();
    let nterms = (p.n + 1) * exps.len();
    let rows: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..nr)
            .into_par_iter()
            .map(|ir| {
                let r = q.radial[ir].0;
                let mut row = vec![0.0; nterms * na];
                for (ia, (u, _)) in q.angular.iter().enumerate() {
                    let x: Vec<f64> = u.iter().map(|c| c * r).collect();
                    let f = a.jet(&x, order);
                    let mut e = f;
                    for n in 0..=p.n {
                        if n > 0 {
                            e = euler_power(&f, &x, n);
                        }
                        for (ia2, alpha) in exps.iter().enumerate() {
                            row[(n * exps.len() + ia2) * na + ia] = e.derivative(alpha);
                        }
                    }
                }
                row
            })
            .collect()
    };
    let mut out = Vec::with_capacity(nterms);
    for n in 0..=p.n {
        for (ia2, alpha) in exps.iter().enumerate() {
            let t = n * exps.len() + ia2;
            let s = p.o + alpha.iter().sum::<usize>();
            let at = |ir: usize, ia: usize| rows[ir][t * na + ia].abs();
            if s == 0 {
                let mut sup: f64 = 0.0;
                for ir in 0..nr {
                    for ia in 0..na {
                        sup = sup.max(at(ir, ia));
                    }
                }
                out.push(NormTerm { n, alpha: alpha.clone(), exponent: f64::INFINITY, value: sup, tail: 0.0 });
                continue;
            }
            let pexp = d as f64 / s as f64;
            let mut integral = 0.0;
            let mut shell_sup = vec![0.0f64; nr];
            for ir in 0..nr {
                let wr = q.radial[ir].1;
                for ia in 0..na {
                    let v = at(ir, ia);
                    integral += wr * q.angular[ia].1 * v.powf(pexp);
                    shell_sup[ir] = shell_sup[ir].max(v);
                }
            }
            let tail = tail_bound(q, &shell_sup, pexp)?;
            let total = integral + tail;
            if tail > q.tail_tol * total.max(1e-300) && total > 1e-300 {
                return Err(Error::NormDivergent {
                    kind: "Lebesgue",
                    detail: format!("tail estimate {tail:.3e} exceeds tolerance for term n={n} alpha={alpha:?}"),
                });
            }
            out.push(NormTerm { n, alpha: alpha.clone(), exponent: pexp, value: total.powf(1.0 / pexp), tail });
        }
    }
    Ok(out)
}

/// Integral of `|f|^p` beyond `r_max`, from a power law fitted to the
/// angular sup over the outermost nodes.
fn tail_bound(q: &QuadratureGrid, shell_sup: &[f64], p: f64) -> Result<f64> {
    let m = q.outer_shell_nodes.min(shell_sup.len());
    let nr = shell_sup.len();
    let (i0, i1) = (nr - m, nr - 1);
    let (r0, r1) = (q.radial[i0].0, q.radial[i1].0);
    let (f0, f1) = (shell_sup[i0], shell_sup[i1]);
    if f1 == 0.0 {
        return Ok(0.0);
    }
    if f0 == 0.0 {
        return Ok(f64::INFINITY);
    }
    let decay = -(f1 / f0).ln() / (r1 / r0).ln();
    let d = q.dim as f64;
    let power = decay * p;
    if power <= d {
        return Err(Error::NormDivergent {
            kind: "Lebesgue",
            detail: format!("fitted decay |x|^-{decay:.3} is not L^{p:.3}-integrable"),
        });
    }
    let area = q.angular.iter().map(|(_, w)| w).sum::<f64>();
    let c = f1 * r1.powf(decay);
    let rm = q.r_max;
    Ok(area * c.powf(p) * rm.powf(d - power) / (power - d))
}

/// `a_τ(x) = a(e^τ x)`.
pub fn dilate_symbol(a: &ScalarSymbol, tau: f64) -> ScalarSymbol {
    a.dilate(tau)
}

/// Per-order constants of the long-range decay check.
#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub rho: f64,
    /// `shell_constants[k][m]` = sup over shell m of `|∂^α(G - I)| ⟨x⟩^{ρ+k}`, max over |α| = k and entries
    pub shell_constants: Vec<Vec<f64>>,
    /// `C_α` per order
    pub constants: Vec<f64>,
    pub ratios: Vec<f64>,
    pub slack: f64,
    pub pass: bool,
}

/// Checks `|∂^α(G^{jk} - δ_jk)| ≤ C_α ⟨x⟩^{-ρ-|α|}` shell by shell.
pub fn verify_long_range(g: &MetricField, samples: &[Vec<f64>], alpha_max: usize, slack: f64) -> Result<DecayReport> {
    let d = g.dim();
    let mut shells: Vec<i32> = samples.iter().map(|x| shell_index(x)).collect();
    shells.sort_unstable();
    shells.dedup();
    if shells.len() < 3 {
        return Err(Error::TooFewValid(format!("{} dyadic shells, need 3", shells.len())));
    }
    let mut table = vec![vec![0.0f64; shells.len()]; alpha_max + 1];
    for x in samples {
        let m = shells.binary_search(&shell_index(x)).unwrap();
        let jets = g.jet(x, alpha_max);
        let b = (1.0 + x.iter().map(|v| v * v).sum::<f64>()).sqrt();
        for j in 0..d {
            for k in 0..d {
                let mut e = jets[j * d + k];
                if j == k {
                    e = e - 1.0;
                }
                let exps = e.exponents();
                for (idx, alpha) in exps.iter().enumerate() {
                    let deg: usize = alpha.iter().sum();
                    let fact: f64 = alpha.iter().map(|&a| factorial(a)).product();
                    let v = (e.coeffs()[idx] * fact).abs() * b.powf(g.rho + deg as f64);
                    table[deg][m] = table[deg][m].max(v);
                }
            }
        }
    }
    let mut constants = Vec::new();
    let mut ratios = Vec::new();
    for row in &table {
        let max = row.iter().cloned().fold(0.0, f64::max);
        let mut sorted = row.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        let ratio = if max == 0.0 {
            1.0
        } else if median > 0.0 {
            max / median
        } else {
            // eventually vanishing: bounded iff the outer half never exceeds the inner half
            let half = row.len() / 2;
            let inner = row[..half].iter().cloned().fold(0.0, f64::max);
            let outer = row[half..].iter().cloned().fold(0.0, f64::max);
            if outer <= inner {
                1.0
            } else {
                f64::INFINITY
            }
        };
        constants.push(max);
        ratios.push(ratio);
    }
    let pass = ratios.iter().all(|r| *r <= slack);
    Ok(DecayReport { rho: g.rho, shell_constants: table, constants, ratios, slack, pass })
}

fn shell_index(x: &[f64]) -> i32 {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r < 1.0 {
        -1
    } else {
        r.log2().floor() as i32
    }
}

/// Sample points on the dyadic shells `2^m ≤ |x| < 2^{m+1}` for `m < shells`,
/// plus the unit ball.
pub fn dyadic_samples(d: usize, shells: usize, per_shell: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for m in -1..shells as i32 {
        for _ in 0..per_shell {
            let mut u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            u.iter_mut().for_each(|v| *v /= n);
            let r = if m < 0 { rng.random_range(0.0..1.0) } else { 2f64.powi(m) * rng.random_range(1.0..1.999) };
            out.push(u.iter().map(|v| v * r).collect());
        }
    }
    out
}

/// Ratio `‖a‖_{o,r,N} / max_{n≤N,|α|≤r} sup |∂^α(x·∇)^n a| ⟨x⟩^{μ+o+|α|}`.
pub fn embedding_check(a: &ScalarSymbol, mu: f64, p: SymbolClassParams, q: &QuadratureGrid) -> Result<f64> {
    let norm = symbol_norm(a, p, q)?;
    let order = p.r + p.n;
    let mut semi: f64 = 0.0;
    for (x, _) in q.points() {
        let f = a.jet(&x, order);
        let b = (1.0 + x.iter().map(|v| v * v).sum::<f64>()).sqrt();
        for n in 0..=p.n {
            let e = euler_power(&f, &x, n);
            for (idx, alpha) in e.exponents().iter().enumerate() {
                let deg: usize = alpha.iter().sum();
                if deg > p.r {
                    continue;
                }
                let fact: f64 = alpha.iter().map(|&a| factorial(a)).product();
                let v = (e.coeffs()[idx] * fact).abs() * b.powf(mu + (p.o + deg) as f64);
                semi = semi.max(v);
            }
        }
    }
    if !norm.is_finite() {
        return Err(Error::NormDivergent { kind: "embedding", detail: "infinite symbol norm".into() });
    }
    Ok(if semi == 0.0 { 0.0 } else { norm / semi })
}

/// Smooth cutoff of `|x|`: 1 for `|x| ≤ a`, 0 for `|x| ≥ b`.
pub fn radial_cutoff<T: Real>(x: &[T], a: f64, b: f64) -> T {
    let r = norm2(x).sqrt();
    if r.val() <= a {
        return x[0].cst(1.0);
    }
    if r.val() >= b {
        return x[0].cst(0.0);
    }
    bump::cutoff_of(r, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rbar_values() {
        assert_eq!(rbar(3), 1);
        assert_eq!(rbar(4), 1);
        assert_eq!(rbar(5), 2);
        assert_eq!(rbar(6), 2);
    }

    #[test]
    fn flat_is_identity() {
        let g = catalog("flat", &[], 3).unwrap();
        assert_eq!(g.matrix(&[0.3, -2.0, 5.0]), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn radial_power_on_axis() {
        let g = catalog("radial_power", &[0.2, 1.0, 1.0], 3).unwrap();
        for s in [0.0, 0.5, 3.0, 40.0] {
            let m = g.matrix(&[s, 0.0, 0.0]);
            assert_relative_eq!(m[0] - 1.0, 0.2 / (1.0 + s * s).sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn small_longrange_zero_amplitude_is_flat() {
        let g = catalog("small_longrange", &[0.0, 1.0], 3).unwrap();
        assert!(g.is_flat_sample());
    }

    #[test]
    fn catalog_rejects_bad_input() {
        assert!(catalog("nonsense", &[], 3).is_err());
        assert!(catalog("radial_power", &[0.2, 0.0, 1.0], 3).is_err());
        assert!(matches!(catalog("small_longrange", &[5.0, 1.0], 3), Err(Error::NotElliptic(_))));
    }

    #[test]
    fn jet_derivatives_match_finite_differences() {
        let g = catalog("small_longrange", &[0.3, 1.0], 3).unwrap();
        let a = g.perturbation(0, 1);
        let x = [0.4, -1.3, 0.8];
        let h = 1e-4;
        for v in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[v] += h;
            xm[v] -= h;
            let fd = (a.value(&xp) - a.value(&xm)) / (2.0 * h);
            let mut alpha = [0; 3];
            alpha[v] = 1;
            assert_relative_eq!(a.derivative(&x, &alpha), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn euler_power_matches_repeated_euler() {
        let a = ScalarSymbol::bracket_power(3, 1.0, 1.3);
        let x = [0.7, 0.2, -1.1];
        let f = a.jet(&x, 5);
        let mut e = f;
        for n in 1..=3 {
            e = e.euler(&x);
            let s = euler_power(&f, &x, n);
            for (u, v) in e.coeffs().iter().zip(s.coeffs()) {
                assert!((u - v).abs() < 1e-11 * (1.0 + u.abs()), "n={n}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn stirling_row() {
        let s = stirling2(4);
        assert_eq!(s[4][1..=4], [1.0, 7.0, 6.0, 1.0]);
    }

    #[test]
    fn sphere_rule_measures_the_sphere() {
        for (d, area) in [(1, 2.0), (2, 2.0 * PI), (3, 4.0 * PI), (4, 2.0 * PI * PI)] {
            let s: f64 = sphere_rule(d, 10).iter().map(|(_, w)| w).sum();
            assert_relative_eq!(s, area, max_relative = 1e-12);
        }
    }

    #[test]
    fn bracket_l3_norm_matches_radial_oracle() {
        // 4π ∫ (1+s²)^{-3} s² ds = π²/4
        let a = ScalarSymbol::bracket_power(3, 1.0, 2.0);
        let q = QuadratureGrid::standard(3);
        let p = SymbolClassParams::new(1, 0, 0, 3).unwrap();
        let v = symbol_norm(&a, p, &q).unwrap();
        assert_relative_eq!(v, (PI * PI / 4.0).powf(1.0 / 3.0), max_relative = 1e-8);
    }

    #[test]
    fn constants_reduce_to_the_sup_term() {
        let a = ScalarSymbol::constant(3, 1.0);
        let q = QuadratureGrid::new(3, 64.0, 8, 6).unwrap();
        let p = SymbolClassParams::new(0, 1, 2, 3).unwrap();
        assert_relative_eq!(symbol_norm(&a, p, &q).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn dilation_example() {
        let a = ScalarSymbol::bracket_power(3, 1.0, 1.0);
        let b = dilate_symbol(&a, 2f64.ln());
        assert_relative_eq!(b.value(&[1.0, 0.0, 0.0]), 5f64.powf(-0.5), epsilon = 1e-15);
        assert_relative_eq!(dilate_symbol(&a, 0.0).value(&[0.3, 0.1, 2.0]), a.value(&[0.3, 0.1, 2.0]));
    }

    #[test]
    fn long_range_check_detects_slow_decay() {
        let samples = dyadic_samples(3, 10, 20, 7);
        let flat = catalog("flat", &[], 3).unwrap();
        let rep = verify_long_range(&flat, &samples, 2, 4.0).unwrap();
        assert!(rep.pass && rep.constants.iter().all(|c| *c == 0.0));
        let g = catalog("radial_power", &[0.2, 1.0, 1.0], 3).unwrap();
        let rep = verify_long_range(&g, &samples, 2, 4.0).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_relative_eq!(rep.constants[0], 0.2, max_relative = 0.05);
        // ⟨x⟩^{-1/2} perturbation declared as ρ = 1
        let slow = catalog("radial_power", &[0.2, 0.5, 1.0], 3).unwrap();
        let mislabeled = MetricField { rho: 1.0, ..slow };
        assert!(!verify_long_range(&mislabeled, &samples, 2, 4.0).unwrap().pass);
        assert!(verify_long_range(&g, &samples[..40], 1, 4.0).is_err());
    }
}
