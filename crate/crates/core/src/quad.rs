//! One-dimensional quadrature rules.

use std::sync::OnceLock;

const MAX_GL: usize = 64;

static GL: [OnceLock<(Vec<f64>, Vec<f64>)>; MAX_GL + 1] = [const { OnceLock::new() }; MAX_GL + 1];

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (&'static [f64], &'static [f64]) {
    assert!((1..=MAX_GL).contains(&n), "Gauss-Legendre order {n} out of range");
    let (x, w) = GL[n].get_or_init(|| legendre_rule(n));
    (x, w)
}

fn legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Fixed Gauss–Legendre integral over [a, b].
pub fn gl_integrate<F: FnMut(f64) -> f64>(n: usize, a: f64, b: f64, mut f: F) -> f64 {
    let (x, w) = gauss_legendre(n);
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    let mut s = 0.0;
    for (xi, wi) in x.iter().zip(w) {
        s += wi * f(c + r * xi);
    }
    s * r
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = r * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * r, ((k - g) * r).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integral with a global absolute tolerance.
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    if a == b {
        return (0.0, 0.0);
    }
    let mut stack = vec![(a, b, gk15(&mut f, a, b))];
    let mut total = 0.0;
    let mut err = 0.0;
    let mut evals = 0usize;
    while let Some((lo, hi, (v, e))) = stack.pop() {
        let width = (hi - lo).abs() / (b - a).abs();
        if e <= tol * width.max(1e-3) || evals > 20_000 || (hi - lo).abs() < 1e-14 * (1.0 + lo.abs()) {
            total += v;
            err += e;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let left = gk15(&mut f, lo, mid);
        let right = gk15(&mut f, mid, hi);
        evals += 2;
        stack.push((lo, mid, left));
        stack.push((mid, hi, right));
    }
    (total, err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in [1, 2, 5, 16, 40] {
            let (_, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            let deg = 2 * n - 1;
            let v = gl_integrate(n, 0.0, 1.0, |x| x.powi(deg as i32));
            assert_relative_eq!(v, 1.0 / (deg as f64 + 1.0), epsilon = 1e-13);
        }
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let (v, _) = adaptive(|x: f64| x.sqrt(), 0.0, 1.0, 1e-12);
        assert_relative_eq!(v, 2.0 / 3.0, epsilon = 1e-11);
        let (v, _) = adaptive(|x: f64| (-x * x).exp(), -8.0, 8.0, 1e-14);
        assert_relative_eq!(v, std::f64::consts::PI.sqrt(), epsilon = 1e-13);
    }
}
