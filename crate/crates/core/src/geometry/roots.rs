//! Scalar root finding for interface reconstruction.

/// Root of `f` in `[a, b]` where `f(a)` and `f(b)` have opposite signs.
///
/// Bisection narrows the bracket first, then safeguarded Newton steps
/// polish the root to roughly machine precision.
pub fn bracketed_root<F, D>(f: F, df: D, a: f64, b: f64) -> f64
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = (a, b);
    let mut f_lo = f(lo);
    if f_lo == 0.0 {
        return lo;
    }
    if f(hi) == 0.0 {
        return hi;
    }
    let scale = (b - a).abs();
    for _ in 0..12 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..100 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if (fx < 0.0) == (f_lo < 0.0) {
            lo = x;
            f_lo = fx;
        } else {
            hi = x;
        }
        let d = df(x);
        let newton = x - fx / d;
        let next = if d != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let step = (next - x).abs();
        x = next;
        if step <= 1e-15 * scale.max(x.abs()) || hi - lo <= 4.0 * f64::EPSILON * scale.max(x.abs()) {
            break;
        }
    }
    x
}

/// All roots of `f` in the open interval `(a, b)`.
///
/// The interval is scanned on `samples` sub-intervals; within each, either a
/// sign change or a single interior extremum (located through `df`) brackets
/// the roots.
pub fn roots_in_interval<F, D>(f: F, df: D, a: f64, b: f64, samples: usize) -> Vec<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut roots = Vec::new();
    let step = (b - a) / samples as f64;
    let mut x0 = a;
    let mut f0 = f(a);
    let mut d0 = df(a);
    for i in 1..=samples {
        let x1 = if i == samples { b } else { a + i as f64 * step };
        let f1 = f(x1);
        let d1 = df(x1);
        if f0 == 0.0 && x0 > a {
            roots.push(x0);
        }
        if f0 * f1 < 0.0 {
            roots.push(bracketed_root(&f, &df, x0, x1));
        } else if d0 * d1 < 0.0 && f0 * f1 > 0.0 {
            let xm = bisect(&df, x0, x1);
            let fm = f(xm);
            if fm * f0 < 0.0 {
                roots.push(bracketed_root(&f, &df, x0, xm));
                roots.push(bracketed_root(&f, &df, xm, x1));
            }
        }
        x0 = x1;
        f0 = f1;
        d0 = d1;
    }
    roots
}

fn bisect<F: Fn(f64) -> f64>(g: &F, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    let g_lo = g(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if (gm < 0.0) == (g_lo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
