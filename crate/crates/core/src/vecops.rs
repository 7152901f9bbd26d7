//! Small dense helpers on complex vectors.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

const PAR_MIN: usize = 1 << 14;

/// `Σ f(i, v_i)` over fixed-size chunks, so the rounding does not depend on
/// the thread count or on work stealing.
pub fn chunked_sum<T, S, F>(v: &[T], f: F) -> S
where
    T: Sync,
    S: Send + std::iter::Sum<S>,
    F: Fn(usize, &T) -> S + Sync,
{
    if v.len() < PAR_MIN {
        return v.iter().enumerate().map(|(i, x)| f(i, x)).sum();
    }
    let parts: Vec<S> = v
        .par_chunks(PAR_MIN)
        .enumerate()
        .map(|(c, chunk)| chunk.iter().enumerate().map(|(i, x)| f(c * PAR_MIN + i, x)).sum())
        .collect();
    parts.into_iter().sum()
}

/// `Σ conj(a_i) b_i`.
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    chunked_sum(a, |i, x| x.conj() * b[i])
}

pub fn norm(a: &[C64]) -> f64 {
    chunked_sum(a, |_, x| x.norm_sqr()).sqrt()
}

/// `y += alpha x`.
pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    if y.len() >= PAR_MIN {
        y.par_iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
    } else {
        y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
    }
}

pub fn scale(alpha: C64, x: &mut [C64]) {
    x.iter_mut().for_each(|v| *v *= alpha);
}

pub fn sub(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn real(v: &[f64]) -> Vec<C64> {
    v.iter().map(|&x| C64::new(x, 0.0)).collect()
}

pub fn conj(v: &[C64]) -> Vec<C64> {
    v.iter().map(|x| x.conj()).collect()
}

pub fn max_abs(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// Relative distance `‖a - b‖ / ‖b‖` (absolute if `b = 0`).
pub fn rel_diff(a: &[C64], b: &[C64]) -> f64 {
    let nb = norm(b);
    let d = norm(&sub(a, b));
    if nb == 0.0 {
        d
    } else {
        d / nb
    }
}
