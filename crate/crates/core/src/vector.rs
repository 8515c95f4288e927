//! Dense `f64` vector helpers shared by every module.

use alloc::vec::Vec;

/// Norms below this are treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-12;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(squared_distance(a, b))
}

/// Scales `v` to unit length, or returns `None` for a (numerically) zero vector.
pub fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = norm(&v);
    if !(n >= ZERO_NORM) || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

#[inline]
pub fn add_scaled(acc: &mut [f64], v: &[f64], scale: f64) {
    debug_assert_eq!(acc.len(), v.len());
    acc.iter_mut().zip(v).for_each(|(a, x)| *a += scale * x);
}

/// True when `|‖v‖ − 1| ≤ tol`.
pub fn is_unit(v: &[f64], tol: f64) -> bool {
    libm::fabs(norm(v) - 1.0) <= tol
}
