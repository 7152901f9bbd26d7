//! The compactly supported profile `exp(-1/(1-t²))` and the smooth step
//! obtained from its normalized integral. Every cutoff in the crate is built
//! from these two functions.

use crate::jet::{factorial, Jet, Real};
use crate::quad;
use std::sync::OnceLock;

/// `exp(-1/(1-t²))` on (-1, 1), zero elsewhere.
pub fn profile(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// Taylor coefficients `profile^{(k)}(t)/k!` for `k = 0..=order`.
pub fn profile_taylor(t: f64, order: usize) -> Vec<f64> {
    if t.abs() >= 1.0 {
        return vec![0.0; order + 1];
    }
    let s = Jet::variable(1, order, t, 0);
    let g = (-(s * s) + 1.0).recip() * -1.0;
    g.exp().coeffs().to_vec()
}

/// Integral of the profile over [-1, 1].
pub fn profile_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| quad::adaptive(profile, -1.0, 1.0, 1e-17).0)
}

/// Smooth monotone step: 0 for `t <= -1`, 1 for `t >= 1`.
pub fn step(t: f64) -> f64 {
    if t <= -1.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else if t > 0.0 {
        1.0 - step(-t)
    } else {
        quad::adaptive(profile, -1.0, t, 1e-17).0 / profile_mass()
    }
}

/// Taylor coefficients of [`step`] at `t` up to `order`.
pub fn step_taylor(t: f64, order: usize) -> Vec<f64> {
    let mut out = vec![0.0; order + 1];
    out[0] = step(t);
    if order > 0 && t.abs() < 1.0 {
        let p = profile_taylor(t, order - 1);
        let z = profile_mass();
        for k in 1..=order {
            out[k] = p[k - 1] / (k as f64 * z);
        }
    }
    out
}

/// [`step`] evaluated on any scalar, carrying derivatives for jets.
pub fn step_of<T: Real>(t: T) -> T {
    let coeffs = step_taylor(t.val(), t.order());
    t.apply(&coeffs)
}

/// Cutoff equal to 1 for `s <= a` and 0 for `s >= b`.
pub fn cutoff_of<T: Real>(s: T, a: f64, b: f64) -> T {
    let u = (s - a) * (2.0 / (b - a)) - 1.0;
    let st = step_of(u);
    st.cst(1.0) - st
}

/// Plateau bump: 1 on `[lo, hi]`, supported in `[lo - left, hi + right]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bump {
    pub lo: f64,
    pub hi: f64,
    pub left: f64,
    pub right: f64,
}

impl Bump {
    pub fn new(lo: f64, hi: f64, left: f64, right: f64) -> Self {
        assert!(lo <= hi && left > 0.0 && right > 0.0, "invalid bump geometry");
        Bump { lo, hi, left, right }
    }

    /// Plateau on `[center - half, center + half]` with equal transitions.
    pub fn centered(center: f64, half: f64, transition: f64) -> Self {
        Self::new(center - half, center + half, transition, transition)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo - self.left, self.hi + self.right)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_of(x)
    }

    pub fn eval_of<T: Real>(&self, x: T) -> T {
        let rise = step_of((x - (self.lo - self.left)) * (2.0 / self.left) - 1.0);
        let fall = cutoff_of(x, self.hi, self.hi + self.right);
        rise * fall
    }

    /// `χ^{(k)}(x)` for `k = 0..=order`.
    pub fn derivatives(&self, x: f64, order: usize) -> Vec<f64> {
        let (a, b) = self.support();
        if x <= a || x >= b {
            return vec![0.0; order + 1];
        }
        let j = self.eval_of(Jet::variable(1, order, x, 0));
        j.coeffs().iter().enumerate().map(|(k, c)| c * factorial(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mass_matches_reference() {
        // reference value from an independent high-order quadrature
        assert_relative_eq!(profile_mass(), 0.443_993_816_168_079_4, epsilon = 1e-14);
    }

    #[test]
    fn step_is_antisymmetric_about_half() {
        for t in [-0.9, -0.5, -0.1, 0.0, 0.3, 0.77] {
            assert_relative_eq!(step(t) + step(-t), 1.0, epsilon = 1e-14);
        }
        assert_relative_eq!(step(0.0), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn step_derivative_is_normalized_profile() {
        let t = 0.37;
        let h = 1e-5;
        let fd = (step(t + h) - step(t - h)) / (2.0 * h);
        let c = step_taylor(t, 3);
        assert_relative_eq!(c[1], profile(t) / profile_mass(), epsilon = 1e-14);
        assert_relative_eq!(fd, c[1], epsilon = 1e-8);
    }

    #[test]
    fn bump_derivatives_match_finite_differences() {
        let b = Bump::new(0.0, 1.0, 0.5, 0.25);
        let x = 1.1;
        let d = b.derivatives(x, 2);
        let h = 1e-4;
        let fd1 = (b.eval(x + h) - b.eval(x - h)) / (2.0 * h);
        let fd2 = (b.eval(x + h) - 2.0 * b.eval(x) + b.eval(x - h)) / (h * h);
        assert_relative_eq!(d[1], fd1, max_relative = 1e-6);
        assert_relative_eq!(d[2], fd2, max_relative = 1e-4);
        assert_eq!(b.eval(0.5), 1.0);
        assert_eq!(b.eval(-0.5), 0.0);
        assert_eq!(b.eval(1.25), 0.0);
    }
}
