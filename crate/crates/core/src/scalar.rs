//! Scalar root finding and one-dimensional maximization.

use crate::error::{Error, Result};

const MAX_ITER: usize = 200;

/// Safeguarded Newton iteration on a sign-changing bracket `[lo, hi]`.
///
/// `fdf` returns the function value and its derivative. A Newton step is
/// accepted only when it stays inside the current bracket and shrinks the
/// residual fast enough; otherwise the bracket is bisected. Iteration stops
/// once the bracket width reaches a few ulps or an exact zero is hit.
pub fn newton_bisect<F>(mut fdf: F, lo: f64, hi: f64) -> Result<f64>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let (fa, _) = fdf(a);
    let (fb, _) = fdf(b);
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::RootFinding(format!(
            "non-finite value at bracket end: f({a}) = {fa}, f({b}) = {fb}"
        )));
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::RootFinding(format!(
            "no sign change on [{a}, {b}]: f = ({fa}, {fb})"
        )));
    }
    // Orient so that f(a) < 0 < f(b) in the bookkeeping below.
    let flip = fa > 0.0;
    let sgn = |v: f64| if flip { -v } else { v };

    let mut x = 0.5 * (a + b);
    let mut dx_old = b - a;
    let mut dx = dx_old;
    let (mut fx, mut dfx) = fdf(x);
    for _ in 0..MAX_ITER {
        if fx == 0.0 {
            return Ok(x);
        }
        if sgn(fx) < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let newton_ok = dfx != 0.0 && {
            let step = fx / dfx;
            let cand = x - step;
            cand > a && cand < b && (2.0 * step).abs() <= dx_old.abs()
        };
        dx_old = dx;
        if newton_ok {
            dx = fx / dfx;
            x -= dx;
        } else {
            dx = 0.5 * (b - a);
            x = a + dx;
        }
        if (b - a).abs() <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) || dx == 0.0 {
            return Ok(x);
        }
        let (f, d) = fdf(x);
        fx = f;
        dfx = d;
        if !fx.is_finite() {
            return Err(Error::RootFinding(format!("non-finite value f({x}) = {fx}")));
        }
    }
    Ok(x)
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
/// Returns `(argmax, max)`.
pub fn golden_max<F>(mut f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..MAX_ITER {
        if (b - a).abs() <= xtol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Maximizes `f` over `[lo, hi]` by a log-spaced scan followed by a
/// golden-section refinement of the winning cell. `lo` must be positive.
pub fn scan_then_golden<F>(mut f: F, lo: f64, hi: f64, points: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    debug_assert!(lo > 0.0 && hi > lo && points >= 3);
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    let node = |i: usize| lo * (ratio * i as f64).exp();
    let mut best_i = 0;
    let mut best_f = f64::NEG_INFINITY;
    for i in 0..points {
        let v = f(node(i));
        if v > best_f {
            best_f = v;
            best_i = i;
        }
    }
    let a = node(best_i.saturating_sub(1));
    let b = node((best_i + 1).min(points - 1));
    let (x, fx) = golden_max(&mut f, a, b, 1e-13 * b);
    if fx >= best_f {
        (x, fx)
    } else {
        (node(best_i), best_f)
    }
}
