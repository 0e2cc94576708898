//! Quadrature, root bracketing and isotonic regression.

use thiserror::Error;

use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },
    #[error("no sign change on [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },
    #[error("bracket search exceeded its growth budget")]
    BracketGrowth,
}

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// The target error is `max(abs_tol, rel_tol * |I|)` where `|I|` is taken
/// from a coarse composite rule; the budget is halved at every bisection.
/// A relative target is what keeps integrals of tiny magnitude accurate.
pub fn adaptive_simpson<T: Real, F: Fn(T) -> T>(
    f: &F,
    a: T,
    b: T,
    abs_tol: T,
    rel_tol: T,
) -> Result<T, NumericError> {
    if a == b {
        return Ok(T::zero());
    }
    let two = lit::<T>(2.0);
    let coarse = 16;
    let h = (b - a) / lit(coarse as f64);
    let mut scale = T::zero();
    for i in 0..coarse {
        let lo = a + h * lit(i as f64);
        let hi = lo + h;
        scale = scale + simpson(lo, hi, f(lo), f((lo + hi) / two), f(hi)).abs();
    }
    let tol = abs_tol.max(rel_tol * scale);
    let m = (a + b) / two;
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[inline]
fn simpson<T: Real>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / lit(6.0) * (fa + lit::<T>(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<T: Real, F: Fn(T) -> T>(
    f: &F,
    a: T,
    b: T,
    fa: T,
    fm: T,
    fb: T,
    whole: T,
    tol: T,
    depth: u32,
) -> Result<T, NumericError> {
    let two = lit::<T>(2.0);
    let m = (a + b) / two;
    let lm = (a + m) / two;
    let rm = (m + b) / two;
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let sum = left + right;
    let diff = sum - whole;
    if diff.abs() <= lit::<T>(15.0) * tol || lm <= a || rm >= b {
        return Ok(sum + diff / lit(15.0));
    }
    if depth == 0 || !sum.is_finite() {
        return Err(NumericError::Quadrature { a: to_f64(a), b: to_f64(b) });
    }
    let half = lit::<T>(0.5);
    Ok(recurse(f, a, m, fa, flm, fm, left, tol * half, depth - 1)?
        + recurse(f, m, b, fm, frm, fb, right, tol * half, depth - 1)?)
}

/// Bisection for a root of `f` on `[lo, hi]` where `f(lo)` and `f(hi)` have
/// opposite signs (zero counts as either). Stops when the bracket is
/// narrower than `tol`.
pub fn bisect<T: Real, F: Fn(T) -> T>(f: F, mut lo: T, mut hi: T, tol: T) -> Result<T, NumericError> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == T::zero() {
        return Ok(lo);
    }
    if fhi == T::zero() {
        return Ok(hi);
    }
    if (flo > T::zero()) == (fhi > T::zero()) || flo.is_nan() || fhi.is_nan() {
        return Err(NumericError::NoBracket { lo: to_f64(lo), hi: to_f64(hi) });
    }
    let two = lit::<T>(2.0);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = (lo + hi) / two;
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == T::zero() {
            return Ok(mid);
        }
        if (fm > T::zero()) == (flo > T::zero()) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) / two)
}

/// Finds a root of `f` on `[lo, ∞)` by doubling the upper end until the sign
/// changes, then bisecting.
pub fn bracket_upward<T: Real, F: Fn(T) -> T>(f: F, lo: T, start: T, tol: T) -> Result<T, NumericError> {
    let s0 = f(lo) > T::zero();
    let mut hi = start;
    for _ in 0..2000 {
        if (f(hi) > T::zero()) != s0 {
            return bisect(&f, lo, hi, tol);
        }
        hi = hi * lit(2.0);
        if !hi.is_finite() {
            break;
        }
    }
    Err(NumericError::BracketGrowth)
}

/// Least-squares nondecreasing fit of `values` (pool adjacent violators,
/// equal weights).
pub fn isotonic_nondecreasing(values: &[f64]) -> Vec<f64> {
    let mut means: Vec<f64> = Vec::with_capacity(values.len());
    let mut counts: Vec<usize> = Vec::with_capacity(values.len());
    for &v in values {
        means.push(v);
        counts.push(1);
        while means.len() > 1 && means[means.len() - 2] > means[means.len() - 1] {
            let (m2, c2) = (means.pop().unwrap(), counts.pop().unwrap());
            let (m1, c1) = (means.pop().unwrap(), counts.pop().unwrap());
            let c = c1 + c2;
            means.push((m1 * c1 as f64 + m2 * c2 as f64) / c as f64);
            counts.push(c);
        }
    }
    means
        .iter()
        .zip(&counts)
        .flat_map(|(&m, &c)| std::iter::repeat_n(m, c))
        .collect()
}

/// Neumaier-compensated sum in slice order.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}
