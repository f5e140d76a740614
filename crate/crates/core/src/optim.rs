//! One-dimensional bracketed maximization.

use crate::error::{FsarError, Result};

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Maximum of `f` on `[lo, hi]`.
///
/// A uniform scan of `scan` points locates the best cell, which is then
/// refined by Brent's parabolic/golden-section search to `xtol`.
pub fn maximize<F>(f: F, lo: f64, hi: f64, scan: usize, xtol: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    if !(lo < hi) {
        return Err(FsarError::invalid(format!("empty search interval [{lo}, {hi}]")));
    }
    let scan = scan.max(3);
    let step = (hi - lo) / (scan - 1) as f64;
    let mut best = (lo, f64::NEG_INFINITY);
    let mut best_i = 0;
    for i in 0..scan {
        let x = if i == scan - 1 { hi } else { lo + step * i as f64 };
        let fx = f(x);
        if fx.is_finite() && fx > best.1 {
            best = (x, fx);
            best_i = i;
        }
    }
    if !best.1.is_finite() {
        return Err(FsarError::InvalidFit(
            "objective is non-finite on the whole interval".into(),
        ));
    }
    let a = if best_i == 0 {
        lo
    } else {
        lo + step * (best_i - 1) as f64
    };
    let b = if best_i + 1 >= scan {
        hi
    } else {
        (lo + step * (best_i + 1) as f64).min(hi)
    };
    let (x, fx) = brent_max(&f, a, b, best.0, xtol);
    Ok(if fx >= best.1 { (x, fx) } else { best })
}

// Brent's method on -f, started from the scan winner.
fn brent_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, start: f64, xtol: f64) -> (f64, f64) {
    let g = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };
    let (mut x, mut w, mut v) = (start, start, start);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let tol1 = xtol + 1e-14 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = g(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, -fx)
}

/// Bisection for a sign change of `g` on `[a, b]`; `None` without one.
pub fn bisect_root<G: Fn(f64) -> f64>(g: G, mut a: f64, mut b: f64) -> Option<f64> {
    let mut ga = g(a);
    let gb = g(b);
    if !(ga.is_finite() && gb.is_finite()) || ga * gb > 0.0 {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let gm = g(m);
        if gm == 0.0 {
            return Some(m);
        }
        if (gm > 0.0) == (ga > 0.0) {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}
