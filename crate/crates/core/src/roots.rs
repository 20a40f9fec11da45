//! Bracketing and bisection for scalar equations.

/// Scans `f` on `lo, lo + step, ..., hi` and returns the first pair of
/// consecutive grid points where `f` changes sign (or hits zero exactly).
pub fn scan_bracket<F>(f: F, lo: f64, hi: f64, step: f64) -> Option<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    let steps = ((hi - lo) / step).round() as usize;
    let mut a = lo;
    let mut fa = f(a);
    if fa == 0.0 {
        return Some((a, a));
    }
    for i in 1..=steps {
        let b = if i == steps { hi } else { lo + step * i as f64 };
        let fb = f(b);
        if fb == 0.0 {
            return Some((b, b));
        }
        if fa.is_finite() && fb.is_finite() && fa.signum() != fb.signum() {
            return Some((a, b));
        }
        a = b;
        fa = fb;
    }
    None
}

/// Bisection on a sign-changing bracket until the interval stops shrinking.
pub fn bisect<F>(f: F, mut a: f64, mut b: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    let mut fa = f(a);
    if fa == 0.0 {
        return a;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a.min(b) || m >= a.max(b) {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    // Return the endpoint with the smaller residual.
    if f(a).abs() <= f(b).abs() {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_sqrt2() {
        let f = |x: f64| x * x - 2.0;
        let (a, b) = scan_bracket(f, 0.0, 3.0, 0.1).unwrap();
        assert!(a < 2f64.sqrt() && 2f64.sqrt() <= b);
        let r = bisect(f, a, b);
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn no_bracket() {
        assert!(scan_bracket(|x| x * x + 1.0, -1.0, 1.0, 0.01).is_none());
    }

    #[test]
    fn first_of_several_roots() {
        let (a, b) = scan_bracket(|x: f64| x.sin(), 1.0, 10.0, 0.05).unwrap();
        assert!(a < std::f64::consts::PI && std::f64::consts::PI <= b);
    }

    #[test]
    fn exact_zero_on_grid() {
        assert_eq!(scan_bracket(|x| x - 1.0, 0.0, 2.0, 0.5), Some((1.0, 1.0)));
        assert_eq!(bisect(|x| x - 1.0, 1.0, 1.0), 1.0);
    }
}
