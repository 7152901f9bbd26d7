//! Truncated multivariate Taylor series.
//!
//! A [`Jet`] stores the Taylor coefficients of a smooth function at a base
//! point, up to a fixed total order, in a graded monomial ordering. Arithmetic
//! on jets propagates derivatives exactly (up to rounding), so composing the
//! closed-form expressions of a metric, a transport solution or a symbol with
//! jets yields their partial derivatives without finite differences.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::OnceLock;

/// Capacity of the coefficient array.
pub const MAX_TERMS: usize = 126;
/// Largest supported number of variables.
pub const MAX_DIM: usize = 4;
/// Largest supported total order (only reachable for one variable).
pub const MAX_ORDER: usize = 40;

struct Table {
    /// exponents of each monomial, graded by total degree
    exps: Vec<[u8; MAX_DIM]>,
    /// `offsets[k]` = number of monomials of degree < k
    offsets: Vec<usize>,
    /// (i, j, k) with mono_i * mono_j = mono_k
    products: Vec<(u16, u16, u16)>,
    /// index of mono + e_v for each monomial and variable, or u16::MAX
    raise: Vec<[u16; MAX_DIM]>,
}

fn count_terms(dim: usize, order: usize) -> usize {
    // binomial(dim + order, dim)
    let mut c = 1usize;
    for i in 1..=dim {
        c = c * (order + i) / i;
    }
    c
}

fn build_table(dim: usize, order: usize) -> Table {
    let mut exps: Vec<[u8; MAX_DIM]> = Vec::new();
    let mut offsets = Vec::with_capacity(order + 2);
    for deg in 0..=order {
        offsets.push(exps.len());
        let mut cur = [0u8; MAX_DIM];
        push_degree(dim, deg, 0, &mut cur, &mut exps);
    }
    offsets.push(exps.len());
    let index_of = |e: &[u8; MAX_DIM]| -> Option<usize> {
        let deg: usize = e.iter().map(|&v| v as usize).sum();
        if deg > order {
            return None;
        }
        (offsets[deg]..offsets[deg + 1]).find(|&i| exps[i] == *e)
    };
    let mut products = Vec::new();
    for i in 0..exps.len() {
        for j in 0..exps.len() {
            let mut e = [0u8; MAX_DIM];
            for v in 0..MAX_DIM {
                e[v] = exps[i][v] + exps[j][v];
            }
            if let Some(k) = index_of(&e) {
                products.push((i as u16, j as u16, k as u16));
            }
        }
    }
    let raise = exps
        .iter()
        .map(|e| {
            let mut r = [u16::MAX; MAX_DIM];
            for (v, slot) in r.iter_mut().enumerate().take(dim) {
                let mut f = *e;
                f[v] += 1;
                if let Some(k) = index_of(&f) {
                    *slot = k as u16;
                }
            }
            r
        })
        .collect();
    Table { exps, offsets, products, raise }
}

fn push_degree(dim: usize, rem: usize, var: usize, cur: &mut [u8; MAX_DIM], out: &mut Vec<[u8; MAX_DIM]>) {
    if var + 1 == dim {
        cur[var] = rem as u8;
        out.push(*cur);
        cur[var] = 0;
        return;
    }
    for k in (0..=rem).rev() {
        cur[var] = k as u8;
        push_degree(dim, rem - k, var + 1, cur, out);
    }
    cur[var] = 0;
}

static TABLES: [[OnceLock<Table>; MAX_ORDER + 1]; MAX_DIM + 1] =
    [const { [const { OnceLock::new() }; MAX_ORDER + 1] }; MAX_DIM + 1];

fn table(dim: usize, order: usize) -> &'static Table {
    TABLES[dim][order].get_or_init(|| build_table(dim, order))
}

/// Whether a jet with these dimensions fits in the fixed storage.
pub fn supported(dim: usize, order: usize) -> bool {
    (1..=MAX_DIM).contains(&dim) && order <= MAX_ORDER && count_terms(dim, order) <= MAX_TERMS
}

/// Truncated Taylor series in `dim` variables to total order `order`.
#[derive(Clone, Copy)]
pub struct Jet {
    dim: u8,
    order: u8,
    len: u8,
    c: [f64; MAX_TERMS],
}

impl std::fmt::Debug for Jet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Jet")
            .field("dim", &self.dim)
            .field("order", &self.order)
            .field("coeffs", &self.coeffs())
            .finish()
    }
}

impl Jet {
    pub fn constant(dim: usize, order: usize, value: f64) -> Self {
        assert!(supported(dim, order), "jet of dim {dim} order {order} exceeds storage");
        let len = count_terms(dim, order);
        let mut c = [0.0; MAX_TERMS];
        c[0] = value;
        Jet { dim: dim as u8, order: order as u8, len: len as u8, c }
    }

    /// The coordinate function `x_var` expanded at `value`.
    pub fn variable(dim: usize, order: usize, value: f64, var: usize) -> Self {
        let mut j = Self::constant(dim, order, value);
        if order > 0 {
            j.c[1 + var] = 1.0;
        }
        j
    }

    /// Seeds all coordinates at the base point `x`.
    pub fn seed(x: &[f64], order: usize) -> Vec<Jet> {
        (0..x.len()).map(|i| Jet::variable(x.len(), order, x[i], i)).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn order(&self) -> usize {
        self.order as usize
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c[..self.len as usize]
    }

    /// Exponent multi-indices matching [`Jet::coeffs`].
    pub fn exponents(&self) -> Vec<Vec<usize>> {
        let t = table(self.dim(), self.order());
        t.exps.iter().map(|e| e[..self.dim()].iter().map(|&v| v as usize).collect()).collect()
    }

    fn index(&self, alpha: &[usize]) -> Option<usize> {
        let t = table(self.dim(), self.order());
        let deg: usize = alpha.iter().sum();
        if deg > self.order() || alpha.len() != self.dim() {
            return None;
        }
        (t.offsets[deg]..t.offsets[deg + 1])
            .find(|&i| t.exps[i][..self.dim()].iter().zip(alpha).all(|(&a, &b)| a as usize == b))
    }

    /// Taylor coefficient of `x^alpha`.
    pub fn coeff(&self, alpha: &[usize]) -> f64 {
        self.index(alpha).map_or(0.0, |i| self.c[i])
    }

    /// Partial derivative `∂^alpha` at the base point.
    pub fn derivative(&self, alpha: &[usize]) -> f64 {
        let fact: f64 = alpha.iter().map(|&a| factorial(a)).product();
        self.coeff(alpha) * fact
    }

    /// Same-shape constant.
    pub fn cst(&self, v: f64) -> Self {
        Self::constant(self.dim(), self.order(), v)
    }

    /// Drops the terms above `order`.
    pub fn truncate(&self, order: usize) -> Self {
        assert!(order <= self.order());
        let mut out = Self::constant(self.dim(), order, 0.0);
        let n = out.len as usize;
        out.c[..n].copy_from_slice(&self.c[..n]);
        out
    }

    /// `∂_var` of the series; the result has one order less.
    pub fn diff(&self, var: usize) -> Self {
        assert!(self.order > 0, "cannot differentiate an order-0 jet");
        let t = table(self.dim(), self.order());
        let mut out = Self::constant(self.dim(), self.order() - 1, 0.0);
        for i in 0..out.len as usize {
            let k = t.raise[i][var] as usize;
            out.c[i] = self.c[k] * (t.exps[k][var] as f64);
        }
        out
    }

    /// Euler operator `x·∇` applied to the series in the shifted variable, i.e. `Σ_v (x0_v + h_v) ∂_v`.
    pub fn euler(&self, base: &[f64]) -> Self {
        let mut out = self.cst(0.0);
        let vars = Jet::seed(base, self.order());
        for (v, xv) in vars.iter().enumerate() {
            let d = self.diff(v);
            let mut up = self.cst(0.0);
            up.c[..d.len as usize].copy_from_slice(&d.c[..d.len as usize]);
            out += *xv * up;
        }
        // the top-degree terms are not exact after lowering the order
        out.truncate(self.order() - 1)
    }

    /// Composes a univariate function given by its Taylor coefficients at `self.value()`.
    pub fn compose(&self, taylor: &[f64]) -> Self {
        let mut h = *self;
        h.c[0] = 0.0;
        let top = self.order().min(taylor.len().saturating_sub(1));
        // Horner in the nilpotent part
        let mut acc = self.cst(taylor[top]);
        for k in (0..top).rev() {
            acc *= h;
            acc.c[0] += taylor[k];
        }
        acc
    }

    /// Substitutes `inner` for the variables of `self`: the result is
    /// `Σ_α c_α (inner - x0)^α` where `x0` are the values of `inner`.
    pub fn compose_multi(&self, inner: &[Jet]) -> Jet {
        assert_eq!(inner.len(), self.dim(), "composition needs one inner jet per variable");
        let shifted: Vec<Jet> = inner.iter().map(|v| *v - v.value()).collect();
        let exps = self.exponents();
        let mut out = inner[0].cst(0.0);
        for (c, alpha) in self.coeffs().iter().zip(&exps) {
            if *c == 0.0 {
                continue;
            }
            let mut term = inner[0].cst(*c);
            for (v, &a) in alpha.iter().enumerate() {
                for _ in 0..a {
                    term *= shifted[v];
                }
            }
            out += term;
        }
        out
    }

    pub fn exp(self) -> Self {
        let e = self.value().exp();
        let coeffs: Vec<f64> = (0..=self.order()).map(|k| e / factorial(k)).collect();
        self.compose(&coeffs)
    }

    pub fn ln(self) -> Self {
        let a = self.value();
        let mut coeffs = vec![a.ln()];
        for k in 1..=self.order() {
            let s = if k % 2 == 1 { 1.0 } else { -1.0 };
            coeffs.push(s / (k as f64 * a.powi(k as i32)));
        }
        self.compose(&coeffs)
    }

    pub fn powf(self, p: f64) -> Self {
        let a = self.value();
        let mut coeffs = Vec::with_capacity(self.order() + 1);
        let mut binom = 1.0;
        for k in 0..=self.order() {
            coeffs.push(binom * a.powf(p - k as f64));
            binom *= (p - k as f64) / (k as f64 + 1.0);
        }
        self.compose(&coeffs)
    }

    pub fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    pub fn recip(self) -> Self {
        self.powf(-1.0)
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.value().sin_cos();
        let cyc = [s, c, -s, -c];
        let coeffs: Vec<f64> = (0..=self.order()).map(|k| cyc[k % 4] / factorial(k)).collect();
        self.compose(&coeffs)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.value().sin_cos();
        let cyc = [c, -s, -c, s];
        let coeffs: Vec<f64> = (0..=self.order()).map(|k| cyc[k % 4] / factorial(k)).collect();
        self.compose(&coeffs)
    }
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

fn check(a: &Jet, b: &Jet) {
    debug_assert!(a.dim == b.dim && a.order == b.order, "jet shape mismatch");
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, rhs: Jet) -> Jet {
        self += rhs;
        self
    }
}

impl AddAssign for Jet {
    fn add_assign(&mut self, rhs: Jet) {
        check(self, &rhs);
        for i in 0..self.len as usize {
            self.c[i] += rhs.c[i];
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: Jet) -> Jet {
        self -= rhs;
        self
    }
}

impl SubAssign for Jet {
    fn sub_assign(&mut self, rhs: Jet) {
        check(self, &rhs);
        for i in 0..self.len as usize {
            self.c[i] -= rhs.c[i];
        }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        for i in 0..self.len as usize {
            self.c[i] = -self.c[i];
        }
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        check(&self, &rhs);
        let mut out = self.cst(0.0);
        if self.order == 0 {
            out.c[0] = self.c[0] * rhs.c[0];
            return out;
        }
        let t = table(self.dim(), self.order());
        for &(i, j, k) in &t.products {
            out.c[k as usize] += self.c[i as usize] * rhs.c[j as usize];
        }
        out
    }
}

impl MulAssign for Jet {
    fn mul_assign(&mut self, rhs: Jet) {
        *self = *self * rhs;
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        self * rhs.recip()
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.c[0] += rhs;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: f64) -> Jet {
        self.c[0] -= rhs;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, rhs: f64) -> Jet {
        for i in 0..self.len as usize {
            self.c[i] *= rhs;
        }
        self
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, rhs: f64) -> Jet {
        self * (1.0 / rhs)
    }
}

/// Scalar type for closed-form expressions that are evaluated either on
/// plain floats or on jets.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + Send
    + Sync
{
    /// Constant with the same shape as `self`.
    fn cst(&self, v: f64) -> Self;
    fn val(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powf(self, p: f64) -> Self;
    fn sqrt(self) -> Self;
    fn recip(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    /// Applies a univariate function from its Taylor coefficients at `val()`.
    fn apply(self, taylor: &[f64]) -> Self;
    /// Highest derivative order carried (0 for floats).
    fn order(&self) -> usize;
}

impl Real for f64 {
    fn cst(&self, v: f64) -> Self {
        v
    }
    fn val(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn apply(self, taylor: &[f64]) -> Self {
        taylor[0]
    }
    fn order(&self) -> usize {
        0
    }
}

impl Real for Jet {
    fn cst(&self, v: f64) -> Self {
        Jet::cst(self, v)
    }
    fn val(&self) -> f64 {
        self.value()
    }
    fn exp(self) -> Self {
        Jet::exp(self)
    }
    fn ln(self) -> Self {
        Jet::ln(self)
    }
    fn powf(self, p: f64) -> Self {
        Jet::powf(self, p)
    }
    fn sqrt(self) -> Self {
        Jet::sqrt(self)
    }
    fn recip(self) -> Self {
        Jet::recip(self)
    }
    fn sin(self) -> Self {
        Jet::sin(self)
    }
    fn cos(self) -> Self {
        Jet::cos(self)
    }
    fn apply(self, taylor: &[f64]) -> Self {
        self.compose(taylor)
    }
    fn order(&self) -> usize {
        Jet::order(self)
    }
}

/// Squared Euclidean norm of a point.
pub fn norm2<T: Real>(x: &[T]) -> T {
    let mut s = x[0] * x[0];
    for v in &x[1..] {
        s = s + *v * *v;
    }
    s
}

/// Japanese bracket `(1 + |x|²)^{1/2}`.
pub fn bracket<T: Real>(x: &[T]) -> T {
    (norm2(x) + 1.0).sqrt()
}

/// Degree-`k` block offsets for a shape, used to iterate multi-indices by degree.
pub fn degree_range(dim: usize, order: usize, deg: usize) -> std::ops::Range<usize> {
    let t = table(dim, order);
    t.offsets[deg]..t.offsets[deg + 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn term_counts() {
        assert_eq!(count_terms(3, 6), 84);
        assert_eq!(count_terms(4, 5), 126);
        assert_eq!(count_terms(1, 10), 11);
        assert!(supported(3, 7));
        assert!(!supported(3, 8));
    }

    #[test]
    fn product_of_variables() {
        let x = Jet::seed(&[0.5, -1.0], 4);
        let p = x[0] * x[0] * x[1];
        // d^2/dx^2 d/dy (x^2 y) = 2
        assert_relative_eq!(p.derivative(&[2, 1]), 2.0);
        assert_relative_eq!(p.derivative(&[1, 1]), 1.0);
        assert_relative_eq!(p.derivative(&[1, 0]), -1.0);
        assert_relative_eq!(p.value(), -0.25);
    }

    #[test]
    fn elementary_functions_match_closed_form_derivatives() {
        let t = Jet::variable(1, 6, 0.3, 0);
        let e = (t * 2.0).exp();
        for k in 0..=6 {
            assert_relative_eq!(e.derivative(&[k]), 2f64.powi(k as i32) * 0.6f64.exp(), max_relative = 1e-12);
        }
        let s = t.sin();
        assert_relative_eq!(s.derivative(&[3]), -0.3f64.cos(), max_relative = 1e-12);
        let r = (t + 1.0).powf(-0.5);
        // d/dt (1+t)^{-1/2} = -1/2 (1+t)^{-3/2}
        assert_relative_eq!(r.derivative(&[1]), -0.5 * 1.3f64.powf(-1.5), max_relative = 1e-12);
        let l = (t + 1.0).ln();
        assert_relative_eq!(l.derivative(&[2]), -1.0 / 1.69, max_relative = 1e-12);
    }

    #[test]
    fn division_inverts_multiplication() {
        let x = Jet::seed(&[0.2, 0.7, -0.4], 5);
        let a = x[0] * x[1] + x[2].exp();
        let b = (a * a + 1.0) / (a * a + 1.0);
        for (i, c) in b.coeffs().iter().enumerate() {
            let expect = if i == 0 { 1.0 } else { 0.0 };
            assert!((c - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn differentiation_lowers_order() {
        let x = Jet::seed(&[1.0, 2.0], 3);
        let f = x[0] * x[0] * x[1];
        let fx = f.diff(0);
        assert_eq!(fx.order(), 2);
        assert_relative_eq!(fx.value(), 4.0);
        assert_relative_eq!(fx.derivative(&[1, 0]), 4.0);
        assert_relative_eq!(fx.derivative(&[1, 1]), 2.0);
    }

    #[test]
    fn multivariate_composition_matches_direct_evaluation() {
        let y = Jet::seed(&[0.4, -0.3], 4);
        let inner = [y[0] * y[1] + 1.0, (y[0] - y[1]).exp()];
        let f_at = |x: &[Jet]| x[0] * x[0] * x[1] + x[1].sin();
        let outer = f_at(&Jet::seed(&[inner[0].value(), inner[1].value()], 4));
        let composed = outer.compose_multi(&inner);
        let direct = f_at(&inner);
        for (a, b) in composed.coeffs().iter().zip(direct.coeffs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_operator_on_homogeneous_function() {
        // x·∇ of a degree-2 homogeneous polynomial is twice the polynomial
        let base = [0.3, -0.8, 1.1];
        let x = Jet::seed(&base, 4);
        let f = x[0] * x[1] + x[2] * x[2];
        let g = f.euler(&base);
        let f3 = f.truncate(3);
        for (a, b) in g.coeffs().iter().zip(f3.coeffs()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }
}
