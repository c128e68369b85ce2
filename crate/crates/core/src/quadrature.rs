//! Adaptive Gauss–Kronrod quadrature and improper integrals over half-lines.
//!
//! Half-line integrals are computed in the logarithmic variable `s = ln y`,
//! panel by panel (one decade per panel by default), and truncated once the
//! absolute mass of the latest panels is negligible against the accumulated
//! absolute mass.

use crate::error::{MfgError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    /// Kronrod estimate of the integral of `|f|`.
    pub abs_mass: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    abs_mass: f64,
}

fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<Segment> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(MfgError::Domain(format!(
            "non-finite integrand at {center}"
        )));
    }
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = fc.abs() * WGK[7];
    let mut fv = [(0.0, 0.0); 7];
    for (j, &node) in XGK.iter().take(7).enumerate() {
        let dx = half * node;
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        if !f1.is_finite() || !f2.is_finite() {
            return Err(MfgError::Domain(format!(
                "non-finite integrand near {}",
                center - dx
            )));
        }
        fv[j] = (f1, f2);
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for (j, &(f1, f2)) in fv.iter().enumerate() {
        res_asc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
    }
    let scale = half.abs();
    let value = res_k * half;
    let res_abs = res_abs * scale;
    let res_asc = res_asc * scale;
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Segment {
        a,
        b,
        value,
        error: err,
        abs_mass: res_abs,
    })
}

/// Globally adaptive G7–K15 quadrature on a finite interval.
///
/// Converges when the summed error estimate drops below
/// `max(abs_tol, rel_tol * ∫|f|)`.
pub fn gauss_kronrod<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_segments: usize,
) -> Result<Integral> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(MfgError::Domain(format!("non-finite limits [{a}, {b}]")));
    }
    if a == b {
        return Ok(Integral {
            value: 0.0,
            abs_error: 0.0,
            abs_mass: 0.0,
            evaluations: 0,
        });
    }
    let mut segments = vec![kronrod15(&mut f, a, b)?];
    let mut evaluations = 15;
    loop {
        let value: f64 = segments.iter().map(|s| s.value).sum();
        let error: f64 = segments.iter().map(|s| s.error).sum();
        let mass: f64 = segments.iter().map(|s| s.abs_mass).sum();
        let target = abs_tol.max(rel_tol * mass);
        if error <= target || segments.len() >= max_segments {
            if error > target && error > 1e3 * target {
                log::debug!("quadrature on [{a}, {b}] stopped at error {error:.3e} > {target:.3e}");
            }
            return Ok(Integral {
                value,
                abs_error: error,
                abs_mass: mass,
                evaluations,
            });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("nonempty");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval exhausted at machine precision; keep what we have.
            segments.push(Segment { error: 0.0, ..seg });
            continue;
        }
        segments.push(kronrod15(&mut f, seg.a, mid)?);
        segments.push(kronrod15(&mut f, mid, seg.b)?);
        evaluations += 30;
    }
}

/// Controls for half-line integrals computed panel by panel in `ln y`.
#[derive(Debug, Clone, Copy)]
pub struct TailOptions {
    /// Width of one panel in `ln y` (default: one decade).
    pub panel_width: f64,
    /// Truncate once the latest panels carry less than this fraction of the
    /// accumulated absolute mass.
    pub truncation_mass: f64,
    pub max_panels: usize,
    pub rel_tol: f64,
}

impl Default for TailOptions {
    fn default() -> Self {
        Self {
            panel_width: std::f64::consts::LN_10,
            truncation_mass: 1e-10,
            max_panels: 80,
            rel_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TailIntegral {
    pub value: f64,
    pub abs_error: f64,
    pub abs_mass: f64,
    /// Relative size of the last accepted panel, an estimate of the
    /// truncation error.
    pub truncation_estimate: f64,
    /// The limit where the integration stopped.
    pub cutoff: f64,
    pub panels: usize,
}

fn half_line<F: FnMut(f64) -> f64>(
    mut g: F,
    start: f64,
    upward: bool,
    opts: &TailOptions,
) -> Result<TailIntegral> {
    if !(start > 0.0 && start.is_finite()) {
        return Err(MfgError::Domain(format!(
            "half-line start {start} must be positive"
        )));
    }
    let dir = if upward { 1.0 } else { -1.0 };
    let mut s0 = start.ln();
    let mut value = 0.0;
    let mut abs_error = 0.0;
    let mut abs_mass = 0.0;
    let mut small_in_a_row = 0;
    let mut last_ratio = f64::INFINITY;
    for panel in 0..opts.max_panels {
        let s1 = s0 + dir * opts.panel_width;
        let (lo, hi) = if upward { (s0, s1) } else { (s1, s0) };
        let piece = gauss_kronrod(
            |s: f64| {
                let y = s.exp();
                g(y) * y
            },
            lo,
            hi,
            opts.rel_tol * abs_mass * 1e-3,
            opts.rel_tol,
            200,
        )?;
        value += piece.value;
        abs_error += piece.abs_error;
        abs_mass += piece.abs_mass;
        last_ratio = if abs_mass > 0.0 {
            piece.abs_mass / abs_mass
        } else {
            0.0
        };
        if last_ratio <= opts.truncation_mass {
            small_in_a_row += 1;
        } else {
            small_in_a_row = 0;
        }
        s0 = s1;
        if small_in_a_row >= 2 {
            return Ok(TailIntegral {
                value,
                abs_error,
                abs_mass,
                truncation_estimate: last_ratio,
                cutoff: s0.exp(),
                panels: panel + 1,
            });
        }
    }
    Err(MfgError::Truncation {
        what: format!(
            "integral from {start} {} did not decay within {} panels",
            if upward { "to infinity" } else { "to zero" },
            opts.max_panels
        ),
        estimate: last_ratio,
    })
}

/// `∫_start^∞ g(y) dy`.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(
    g: F,
    start: f64,
    opts: &TailOptions,
) -> Result<TailIntegral> {
    half_line(g, start, true, opts)
}

/// `∫_0^end g(y) dy`.
pub fn integrate_from_zero<F: FnMut(f64) -> f64>(
    g: F,
    end: f64,
    opts: &TailOptions,
) -> Result<TailIntegral> {
    half_line(g, end, false, opts)
}

/// `ln ∫_start^∞ exp(ln_g(y)) dy` for a positive integrand given through its
/// logarithm. Each panel is rescaled by its largest sampled value, so
/// integrands far outside the floating-point range are handled.
pub fn ln_integrate_to_infinity<F: FnMut(f64) -> f64>(
    mut ln_g: F,
    start: f64,
    opts: &TailOptions,
) -> Result<f64> {
    if !(start > 0.0 && start.is_finite()) {
        return Err(MfgError::Domain(format!(
            "half-line start {start} must be positive"
        )));
    }
    let mut s0 = start.ln();
    let mut total = f64::NEG_INFINITY;
    let mut small_in_a_row = 0;
    let mut last = f64::INFINITY;
    let ln_trunc = opts.truncation_mass.ln();
    for _ in 0..opts.max_panels {
        let s1 = s0 + opts.panel_width;
        let mut h = |s: f64| ln_g(s.exp()) + s;
        let base = (0..=8)
            .map(|i| h(s0 + (s1 - s0) * i as f64 / 8.0))
            .fold(f64::NEG_INFINITY, f64::max);
        if base.is_nan() {
            return Err(MfgError::Numerical(format!(
                "log-integrand is NaN near {}",
                s0.exp()
            )));
        }
        let ln_piece = if base == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            let piece = gauss_kronrod(|s| (h(s) - base).exp(), s0, s1, 0.0, opts.rel_tol, 200)?;
            base + piece.value.ln()
        };
        if ln_piece > total {
            total = ln_piece + (1.0 + (total - ln_piece).exp()).ln();
        } else if ln_piece > f64::NEG_INFINITY {
            total += (1.0 + (ln_piece - total).exp()).ln();
        }
        last = ln_piece - total;
        if total > f64::NEG_INFINITY && last <= ln_trunc {
            small_in_a_row += 1;
        } else {
            small_in_a_row = 0;
        }
        s0 = s1;
        if small_in_a_row >= 2 {
            return Ok(total);
        }
    }
    Err(MfgError::Truncation {
        what: format!(
            "integral from {start} to infinity did not decay within {} panels",
            opts.max_panels
        ),
        estimate: last.exp(),
    })
}

/// `∫_a^b g(y) dy` for `0 < a < b`, computed in `ln y`.
pub fn integrate_log<F: FnMut(f64) -> f64>(mut g: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(MfgError::Domain(format!(
            "log-variable limits must be positive: [{a}, {b}]"
        )));
    }
    let r = gauss_kronrod(
        |s: f64| {
            let y = s.exp();
            g(y) * y
        },
        a.ln(),
        b.ln(),
        0.0,
        rel_tol,
        400,
    )?;
    Ok(r.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = gauss_kronrod(|x| x.powi(5) - 2.0 * x, 0.0, 2.0, 0.0, 1e-14, 50).unwrap();
        assert!((r.value - (64.0 / 6.0 - 4.0)).abs() < 1e-13);
    }

    #[test]
    fn oscillatory_finite_interval() {
        let r = gauss_kronrod(|x| (10.0 * x).sin(), 0.0, 3.0, 0.0, 1e-12, 500).unwrap();
        let exact = (1.0 - (30.0f64).cos()) / 10.0;
        assert!((r.value - exact).abs() < 1e-12, "{} vs {}", r.value, exact);
    }

    #[test]
    fn pareto_upper_tail() {
        // ∫_a^∞ y^{-6} dy = a^{-5}/5
        let a = 0.3;
        let r = integrate_to_infinity(|y| y.powi(-6), a, &TailOptions::default()).unwrap();
        let exact = a.powi(-5) / 5.0;
        assert!((r.value / exact - 1.0).abs() < 1e-11);
    }

    #[test]
    fn slowly_decaying_lower_tail() {
        // ∫_0^x y^{-0.2} dy = x^{0.8}/0.8, integrand in ln y decays like e^{0.8 s}
        let x = 2.0;
        let r = integrate_from_zero(|y| y.powf(-0.2), x, &TailOptions::default()).unwrap();
        let exact = x.powf(0.8) / 0.8;
        assert!(
            (r.value / exact - 1.0).abs() < 1e-9,
            "{}",
            r.value / exact - 1.0
        );
    }

    #[test]
    fn non_decaying_tail_is_reported() {
        let opts = TailOptions {
            max_panels: 10,
            ..TailOptions::default()
        };
        let err = integrate_to_infinity(|y| 1.0 / y, 1.0, &opts).unwrap_err();
        assert!(matches!(err, MfgError::Truncation { .. }));
    }

    #[test]
    fn nan_integrand_is_domain_error() {
        let err = gauss_kronrod(|x| (x - 1.0).ln(), 0.0, 2.0, 0.0, 1e-10, 10).unwrap_err();
        assert!(matches!(err, MfgError::Domain(_)));
    }
}
