//! Bracketed scalar root finding.

use crate::error::{MfgError, Result};

#[derive(Debug, Clone, Copy)]
pub struct Root {
    pub x: f64,
    pub f: f64,
    pub iterations: usize,
}

/// Plain bisection on `[a, b]` with `f(a)` and `f(b)` of opposite sign.
pub fn bisect<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    x_tol: f64,
    max_iter: usize,
) -> Result<Root> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(Root {
            x: a,
            f: 0.0,
            iterations: 0,
        });
    }
    if fb == 0.0 {
        return Ok(Root {
            x: b,
            f: 0.0,
            iterations: 0,
        });
    }
    if fa.signum() == fb.signum() {
        return Err(MfgError::AssumptionViolation(format!(
            "bisection bracket [{a}, {b}] has no sign change ({fa:.3e}, {fb:.3e})"
        )));
    }
    let mut iterations = 0;
    let mut fm = fa;
    while (b - a).abs() > x_tol && iterations < max_iter {
        let m = 0.5 * (a + b);
        fm = f(m);
        iterations += 1;
        if fm == 0.0 {
            return Ok(Root {
                x: m,
                f: 0.0,
                iterations,
            });
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(Root {
        x: 0.5 * (a + b),
        f: fm,
        iterations,
    })
}

/// Brent's method: inverse quadratic interpolation safeguarded by bisection,
/// so it converges whenever bisection would.
pub fn brent<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    a: f64,
    b: f64,
    x_tol: f64,
    max_iter: usize,
) -> Result<Root> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    brent_with_values(&mut f, &mut a, &mut b, &mut fa, &mut fb, x_tol, max_iter)
}

/// Same as [`brent`], reusing already computed endpoint values.
pub fn brent_bracketed<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    (a, fa): (f64, f64),
    (b, fb): (f64, f64),
    x_tol: f64,
    max_iter: usize,
) -> Result<Root> {
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    brent_with_values(&mut f, &mut a, &mut b, &mut fa, &mut fb, x_tol, max_iter)
}

fn brent_with_values<F: FnMut(f64) -> Result<f64>>(
    f: &mut F,
    a: &mut f64,
    b: &mut f64,
    fa: &mut f64,
    fb: &mut f64,
    x_tol: f64,
    max_iter: usize,
) -> Result<Root> {
    if *fa == 0.0 {
        return Ok(Root {
            x: *a,
            f: 0.0,
            iterations: 0,
        });
    }
    if *fb == 0.0 {
        return Ok(Root {
            x: *b,
            f: 0.0,
            iterations: 0,
        });
    }
    if fa.signum() == fb.signum() {
        return Err(MfgError::AssumptionViolation(format!(
            "root bracket [{}, {}] has no sign change ({:.3e}, {:.3e})",
            a, b, fa, fb
        )));
    }
    let (mut c, mut fc) = (*a, *fa);
    let mut d = *b - *a;
    let mut e = d;
    for iter in 1..=max_iter {
        if fb.signum() == fc.signum() {
            c = *a;
            fc = *fa;
            d = *b - *a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            *a = *b;
            *b = c;
            c = *a;
            *fa = *fb;
            *fb = fc;
            fc = *fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * x_tol;
        let m = 0.5 * (c - *b);
        if m.abs() <= tol || *fb == 0.0 {
            return Ok(Root {
                x: *b,
                f: *fb,
                iterations: iter,
            });
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = *fb / *fa;
            let (mut p, mut q);
            if *a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = *fa / fc;
                let r = *fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (*b - *a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        *a = *b;
        *fa = *fb;
        *b += if d.abs() > tol { d } else { tol.copysign(m) };
        *fb = f(*b)?;
    }
    Err(MfgError::Numerical(format!(
        "Brent iteration did not converge in {max_iter} steps (last x = {b}, f = {fb:.3e})"
    )))
}
