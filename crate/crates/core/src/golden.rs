//! Golden-section search for convex functions on a compact interval.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

pub const DEFAULT_XTOL: f64 = 1e-8;

/// Minimizer and minimum of a convex `f` on `[lo, hi]`.
///
/// The bracket shrinks until its width is below `xtol`; the endpoints are
/// then compared with the interior candidate. Ties go to the smaller abscissa.
pub fn minimize<F>(f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    debug_assert!(lo <= hi);
    if hi - lo <= xtol {
        let (flo, fhi) = (f(lo), f(hi));
        return if fhi < flo { (hi, fhi) } else { (lo, flo) };
    }
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > xtol {
        if fc <= fd {
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
    let (mut x, mut fx) = if fc <= fd { (c, fc) } else { (d, fd) };
    let flo = f(lo);
    if flo <= fx {
        x = lo;
        fx = flo;
    }
    let fhi = f(hi);
    if fhi < fx {
        x = hi;
        fx = fhi;
    }
    (x, fx)
}

/// Brute-force minimum over `points` evenly spaced nodes of `[lo, hi]`.
pub fn grid_minimize<F>(f: F, lo: f64, hi: f64, points: usize) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let n = points.max(2);
    let mut best = (lo, f(lo));
    for k in 1..n {
        let x = lo + (hi - lo) * k as f64 / (n - 1) as f64;
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}
