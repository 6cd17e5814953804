//! Scalar root finding and adaptive quadrature.
//!
//! Small, dependency-free kernels shared by the solver modules: a bracketed
//! Brent root finder, plain bisection (used by test oracles), and an adaptive
//! Gauss–Kronrod 15-point integrator.

/// Outcome of a bracketed root search.
#[derive(Debug, Clone, Copy)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Brent's method on a bracketing interval `[a, b]` with `f(a)·f(b) ≤ 0`.
///
/// Returns `None` if the bracket does not straddle a sign change.
pub fn brent_root<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64) -> Option<Root> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(Root { x: a, fx: 0.0, iterations: 0 });
    }
    if fb == 0.0 {
        return Some(Root { x: b, fx: 0.0, iterations: 0 });
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for iter in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Some(Root { x: b, fx: fb, iterations: iter });
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Inverse quadratic interpolation, falling back to secant.
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let q0 = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * q0 * (q0 - r) - (b - a) * (r - 1.0));
                q = (q0 - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        if d.abs() > tol1 {
            b += d;
        } else {
            b += tol1.copysign(xm);
        }
        fb = f(b);
    }
    Some(Root { x: b, fx: fb, iterations: 200 })
}

/// Plain bisection to `xtol`. Kept separate from Brent so test oracles can
/// use an independent method.
pub fn bisect_root<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64) -> Option<Root> {
    let (mut lo, mut hi) = (a, b);
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(Root { x: lo, fx: 0.0, iterations: 0 });
    }
    if fhi == 0.0 {
        return Some(Root { x: hi, fx: 0.0, iterations: 0 });
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    let mut iter = 0;
    while hi - lo > xtol && iter < 400 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(Root { x: mid, fx: 0.0, iterations: iter });
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        iter += 1;
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x);
    Some(Root { x, fx, iterations: iter })
}

// Gauss–Kronrod 15-point rule on [-1, 1]: Kronrod abscissae/weights plus the
// embedded 7-point Gauss weights (QUADPACK qk15 constants).
const XGK: [f64; 8] = [
    0.991_455_371_120_813,
    0.949_107_912_342_759,
    0.864_864_423_359_769,
    0.741_531_185_599_394,
    0.586_087_235_467_691,
    0.405_845_151_377_397,
    0.207_784_955_007_898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529,
    0.063_092_092_629_979,
    0.104_790_010_322_250,
    0.140_653_259_715_525,
    0.169_004_726_639_267,
    0.190_350_578_064_785,
    0.204_432_940_075_298,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_870,
    0.279_705_391_489_277,
    0.381_830_050_505_119,
    0.417_959_183_673_469,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let center = 0.5 * (a + b);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let fsum = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * fsum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * fsum;
        }
    }
    (kronrod * half, (kronrod - gauss).abs() * half.abs())
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// Splits panels until the embedded error estimate drops below
/// `abs_tol + 1e-12·|integral|` per panel share, with a hard depth cap.
pub fn adaptive_quad<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    fn recurse<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
        let (val, err) = gk15(f, a, b);
        if err <= tol.max(1e-15 * val.abs()) || depth >= 30 {
            return val;
        }
        let mid = 0.5 * (a + b);
        recurse(f, a, mid, 0.5 * tol, depth + 1) + recurse(f, mid, b, 0.5 * tol, depth + 1)
    }
    recurse(f, a, b, abs_tol, 0)
}
