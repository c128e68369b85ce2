//! Regular one-dimensional diffusions on `(0, ∞)`:
//! `dX = b(X) dt + σ(X) dW`, together with the scale and speed densities of
//! `X` and of the associated process `X̂` with drift `b + σσ'`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::quadrature::{self, TailOptions};

/// Coefficients sampled on a grid, interpolated with monotone cubic
/// (Fritsch–Carlson) splines and continued linearly beyond the table ends
/// using the supplied end-point derivatives.
#[derive(Debug, Clone)]
pub struct TabulatedCoefficients {
    x: Vec<f64>,
    b: Pchip,
    b_prime: Pchip,
    sigma: Pchip,
    sigma_prime: Pchip,
    /// `∫_{x[0]}^{x[i]} 2b/σ² dz` at every node.
    cumulative: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct CoefficientRow {
    x: f64,
    b: f64,
    b_prime: f64,
    sigma: f64,
    sigma_prime: f64,
}

#[derive(Debug, Clone)]
struct Pchip {
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    fn new(x: &[f64], y: Vec<f64>) -> Self {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = delta[0];
            slopes[1] = delta[0];
            return Self { y, slopes };
        }
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] > 0.0 {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                slopes[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        slopes[0] = Self::end_slope(h[0], h[1], delta[0], delta[1]);
        slopes[n - 1] = Self::end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Self { y, slopes }
    }

    fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
        let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if d.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            d
        }
    }

    fn eval_in_cell(&self, x: &[f64], i: usize, t: f64) -> f64 {
        let h = x[i + 1] - x[i];
        let s = (t - x[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i]
            + h10 * h * self.slopes[i]
            + h01 * self.y[i + 1]
            + h11 * h * self.slopes[i + 1]
    }
}

impl TabulatedCoefficients {
    pub fn new(
        x: Vec<f64>,
        b: Vec<f64>,
        b_prime: Vec<f64>,
        sigma: Vec<f64>,
        sigma_prime: Vec<f64>,
    ) -> Result<Self> {
        let n = x.len();
        if n < 4 {
            return Err(MfgError::Config(format!(
                "coefficient table needs at least 4 rows, got {n}"
            )));
        }
        if [b.len(), b_prime.len(), sigma.len(), sigma_prime.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(MfgError::Config(
                "coefficient columns have unequal lengths".into(),
            ));
        }
        if x[0] <= 0.0 || x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MfgError::Config(
                "coefficient grid must be positive and strictly increasing".into(),
            ));
        }
        if let Some(i) = sigma.iter().position(|&s| !(s > 0.0)) {
            return Err(MfgError::Config(format!(
                "sigma must be positive; row {i} has {}",
                sigma[i]
            )));
        }
        let all = [&b, &b_prime, &sigma, &sigma_prime];
        if all.iter().any(|col| col.iter().any(|v| !v.is_finite())) {
            return Err(MfgError::Config(
                "coefficient table contains non-finite values".into(),
            ));
        }
        let mut table = Self {
            b: Pchip::new(&x, b),
            b_prime: Pchip::new(&x, b_prime),
            sigma: Pchip::new(&x, sigma),
            sigma_prime: Pchip::new(&x, sigma_prime),
            cumulative: vec![0.0; n],
            x,
        };
        for i in 1..n {
            let (a, c) = (table.x[i - 1], table.x[i]);
            let piece = quadrature::gauss_kronrod(|z| table.ratio(z), a, c, 1e-15, 1e-14, 100)?;
            table.cumulative[i] = table.cumulative[i - 1] + piece.value;
        }
        Ok(table)
    }

    /// Reads a CSV with header `x,b,b_prime,sigma,sigma_prime`.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path.as_ref())?;
        let mut cols: [Vec<f64>; 5] = Default::default();
        for row in reader.deserialize() {
            let row: CoefficientRow = row?;
            cols[0].push(row.x);
            cols[1].push(row.b);
            cols[2].push(row.b_prime);
            cols[3].push(row.sigma);
            cols[4].push(row.sigma_prime);
        }
        let [x, b, bp, s, sp] = cols;
        Self::new(x, b, bp, s, sp)
    }

    /// Samples an existing model on `grid`; mostly useful for testing the
    /// tabulated path against an analytic one.
    pub fn sample(model: &DiffusionModel, grid: &[f64]) -> Result<Self> {
        Self::new(
            grid.to_vec(),
            grid.iter().map(|&x| model.drift(x)).collect(),
            grid.iter().map(|&x| model.drift_prime(x)).collect(),
            grid.iter().map(|&x| model.vol(x)).collect(),
            grid.iter().map(|&x| model.vol_prime(x)).collect(),
        )
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().expect("nonempty"))
    }

    fn locate(&self, t: f64) -> Option<usize> {
        let n = self.x.len();
        if t < self.x[0] || t > self.x[n - 1] {
            return None;
        }
        let i = self.x.partition_point(|&v| v <= t);
        Some(i.saturating_sub(1).min(n - 2))
    }

    fn value(&self, p: &Pchip, dp: &Pchip, t: f64) -> f64 {
        match self.locate(t) {
            Some(i) => p.eval_in_cell(&self.x, i, t),
            None => {
                let j = if t < self.x[0] { 0 } else { self.x.len() - 1 };
                p.y[j] + dp.y[j] * (t - self.x[j])
            }
        }
    }

    fn derivative(&self, dp: &Pchip, t: f64) -> f64 {
        match self.locate(t) {
            Some(i) => dp.eval_in_cell(&self.x, i, t),
            None => dp.y[if t < self.x[0] { 0 } else { self.x.len() - 1 }],
        }
    }

    fn drift(&self, t: f64) -> f64 {
        self.value(&self.b, &self.b_prime, t)
    }
    fn drift_prime(&self, t: f64) -> f64 {
        self.derivative(&self.b_prime, t)
    }
    fn vol(&self, t: f64) -> f64 {
        self.value(&self.sigma, &self.sigma_prime, t)
    }
    fn vol_prime(&self, t: f64) -> f64 {
        self.derivative(&self.sigma_prime, t)
    }

    fn ratio(&self, z: f64) -> f64 {
        let s = self.vol(z);
        2.0 * self.drift(z) / (s * s)
    }

    /// `∫_{x[0]}^{t} 2b/σ² dz`.
    fn primitive(&self, t: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        let log_piece = |a: f64, c: f64| -> Result<f64> {
            quadrature::gauss_kronrod(
                |s: f64| {
                    let z = s.exp();
                    self.ratio(z) * z
                },
                a.ln(),
                c.ln(),
                1e-15,
                1e-13,
                400,
            )
            .map(|r| r.value)
        };
        if t < lo {
            if self.vol(t) <= 0.0 {
                return Err(MfgError::Domain(format!(
                    "extrapolated volatility is not positive at x = {t}"
                )));
            }
            Ok(-log_piece(t, lo)?)
        } else if t > hi {
            Ok(self.cumulative[self.x.len() - 1] + log_piece(hi, t)?)
        } else {
            let i = self.locate(t).expect("inside table");
            let piece =
                quadrature::gauss_kronrod(|z| self.ratio(z), self.x[i], t, 1e-15, 1e-14, 100)?;
            Ok(self.cumulative[i] + piece.value)
        }
    }
}

#[derive(Debug, Clone)]
pub enum DiffusionKind {
    /// `b(x) = -δx`, `σ(x) = σx`.
    Gbm {
        delta: f64,
        sigma: f64,
    },
    /// `b(x) = κ(λ - x)`, `σ(x) = σx`.
    Affine {
        kappa: f64,
        lambda: f64,
        sigma: f64,
    },
    Custom(Arc<TabulatedCoefficients>),
}

#[derive(Debug, Clone)]
pub struct DiffusionModel {
    kind: DiffusionKind,
    x_anchor: f64,
}

/// Scale and speed densities of `X` and `X̂` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Characteristics {
    pub s_prime: f64,
    pub m_prime: f64,
    pub s_hat_prime: f64,
    pub m_hat_prime: f64,
}

impl DiffusionModel {
    pub fn gbm(delta: f64, sigma: f64) -> Result<Self> {
        if !(delta > 0.0 && sigma > 0.0) || !delta.is_finite() || !sigma.is_finite() {
            return Err(MfgError::Config(format!(
                "gbm needs delta, sigma > 0 (got {delta}, {sigma})"
            )));
        }
        Ok(Self {
            kind: DiffusionKind::Gbm { delta, sigma },
            x_anchor: 1.0,
        })
    }

    pub fn affine(kappa: f64, lambda: f64, sigma: f64) -> Result<Self> {
        if !(kappa > 0.0 && lambda > 0.0 && sigma > 0.0) {
            return Err(MfgError::Config(format!(
                "affine model needs kappa, lambda, sigma > 0 (got {kappa}, {lambda}, {sigma})"
            )));
        }
        Ok(Self {
            kind: DiffusionKind::Affine {
                kappa,
                lambda,
                sigma,
            },
            x_anchor: 1.0,
        })
    }

    pub fn custom(table: TabulatedCoefficients) -> Self {
        Self {
            kind: DiffusionKind::Custom(Arc::new(table)),
            x_anchor: 1.0,
        }
    }

    pub fn with_anchor(mut self, x_anchor: f64) -> Result<Self> {
        if !(x_anchor > 0.0 && x_anchor.is_finite()) {
            return Err(MfgError::Config(format!(
                "anchor must be positive, got {x_anchor}"
            )));
        }
        self.x_anchor = x_anchor;
        Ok(self)
    }

    pub fn kind(&self) -> &DiffusionKind {
        &self.kind
    }

    pub fn x_anchor(&self) -> f64 {
        self.x_anchor
    }

    /// `(δ, σ)` when the model is a geometric Brownian motion.
    pub fn gbm_params(&self) -> Option<(f64, f64)> {
        match self.kind {
            DiffusionKind::Gbm { delta, sigma } => Some((delta, sigma)),
            _ => None,
        }
    }

    pub fn drift(&self, x: f64) -> f64 {
        match &self.kind {
            DiffusionKind::Gbm { delta, .. } => -delta * x,
            DiffusionKind::Affine { kappa, lambda, .. } => kappa * (lambda - x),
            DiffusionKind::Custom(t) => t.drift(x),
        }
    }

    pub fn drift_prime(&self, x: f64) -> f64 {
        match &self.kind {
            DiffusionKind::Gbm { delta, .. } => -delta,
            DiffusionKind::Affine { kappa, .. } => -kappa,
            DiffusionKind::Custom(t) => t.drift_prime(x),
        }
    }

    pub fn vol(&self, x: f64) -> f64 {
        match &self.kind {
            DiffusionKind::Gbm { sigma, .. } | DiffusionKind::Affine { sigma, .. } => sigma * x,
            DiffusionKind::Custom(t) => t.vol(x),
        }
    }

    pub fn vol_prime(&self, x: f64) -> f64 {
        match &self.kind {
            DiffusionKind::Gbm { sigma, .. } | DiffusionKind::Affine { sigma, .. } => *sigma,
            DiffusionKind::Custom(t) => t.vol_prime(x),
        }
    }

    /// Drift of `X̂`: `b + σσ'`.
    pub fn hat_drift(&self, x: f64) -> f64 {
        self.drift(x) + self.vol(x) * self.vol_prime(x)
    }

    fn check_point(&self, x: f64) -> Result<()> {
        if !(x > 0.0 && x.is_finite()) {
            return Err(MfgError::Domain(format!(
                "state must be positive and finite, got {x}"
            )));
        }
        let s = self.vol(x);
        if !(s > 0.0 && s.is_finite()) {
            return Err(MfgError::Domain(format!(
                "degenerate volatility {s} at x = {x}"
            )));
        }
        Ok(())
    }

    /// `ln S'(x) = -∫_{x_anchor}^x 2b/σ² dz`.
    pub fn ln_scale_density(&self, x: f64) -> Result<f64> {
        self.check_point(x)?;
        let x0 = self.x_anchor;
        let v = match &self.kind {
            DiffusionKind::Gbm { delta, sigma } => 2.0 * delta / (sigma * sigma) * (x / x0).ln(),
            DiffusionKind::Affine {
                kappa,
                lambda,
                sigma,
            } => {
                let k = 2.0 * kappa / (sigma * sigma);
                -k * (lambda * (1.0 / x0 - 1.0 / x) - (x / x0).ln())
            }
            DiffusionKind::Custom(t) => -(t.primitive(x)? - t.primitive(x0)?),
        };
        if !v.is_finite() {
            return Err(MfgError::Domain(format!(
                "scale density not finite at x = {x}"
            )));
        }
        Ok(v)
    }

    pub fn scale_density(&self, x: f64) -> Result<f64> {
        Ok(self.ln_scale_density(x)?.exp())
    }

    /// `ln m'(x) = ln 2 - 2 ln σ(x) - ln S'(x)`.
    pub fn ln_speed_density(&self, x: f64) -> Result<f64> {
        let s = self.vol(x);
        Ok(std::f64::consts::LN_2 - 2.0 * s.ln() - self.ln_scale_density(x)?)
    }

    pub fn speed_density(&self, x: f64) -> Result<f64> {
        Ok(self.ln_speed_density(x)?.exp())
    }

    /// `Ŝ'(x) = S'(x)/σ²(x)`.
    pub fn hat_scale_density(&self, x: f64) -> Result<f64> {
        let s = self.vol(x);
        Ok(self.scale_density(x)? / (s * s))
    }

    /// `ln m̂'(x) = ln 2 - ln S'(x)`.
    pub fn ln_hat_speed_density(&self, x: f64) -> Result<f64> {
        Ok(std::f64::consts::LN_2 - self.ln_scale_density(x)?)
    }

    pub fn hat_speed_density(&self, x: f64) -> Result<f64> {
        Ok(self.ln_hat_speed_density(x)?.exp())
    }

    pub fn characteristics(&self, x: f64) -> Result<Characteristics> {
        let s2 = self.vol(x).powi(2);
        let ln_s = self.ln_scale_density(x)?;
        let s_prime = ln_s.exp();
        Ok(Characteristics {
            s_prime,
            m_prime: 2.0 / (s2 * s_prime),
            s_hat_prime: s_prime / s2,
            m_hat_prime: 2.0 / s_prime,
        })
    }

    /// `∫_a^∞ m'(y) dy`.
    pub fn speed_tail_mass(&self, a: f64, opts: &TailOptions) -> Result<f64> {
        Ok(self.ln_speed_tail_mass(a, opts)?.exp())
    }

    /// `ln ∫_a^∞ m'(y) dy`, finite even where `m'` under- or overflows.
    pub fn ln_speed_tail_mass(&self, a: f64, opts: &TailOptions) -> Result<f64> {
        let mut failure = None;
        let v = quadrature::ln_integrate_to_infinity(
            |y| match self.ln_speed_density(y) {
                Ok(l) => l,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            a,
            opts,
        );
        match failure {
            Some(e) => Err(e),
            None => v,
        }
    }

    /// Grid-sampled checks of the standing assumptions at discount rate `r`
    /// (`r = 0` selects the ergodic requirements).
    pub fn validate_assumptions(&self, r: f64, grid: &[f64]) -> ValidationReport {
        let mut report = ValidationReport {
            r,
            sigma_positive: true,
            min_gap: f64::INFINITY,
            max_drift_slope: f64::NEG_INFINITY,
            gap_ok: false,
            tail_mass: Vec::new(),
            tail_ok: true,
            x_b_sigma: 0.0,
            x_b_sigma_at_grid_end: false,
            unchecked: vec!["boundary limits of phi_r' at 0 and psi_r' at infinity".to_string()],
        };
        if grid.is_empty() {
            report.sigma_positive = false;
            report.tail_ok = false;
            return report;
        }
        if matches!(self.kind, DiffusionKind::Custom(_)) {
            report
                .unchecked
                .push("natural boundaries at 0 and infinity (custom coefficients)".to_string());
        }
        for &x in grid {
            let s = self.vol(x);
            if !(s > 0.0 && s.is_finite()) {
                report.sigma_positive = false;
            }
            let bp = self.drift_prime(x);
            report.min_gap = report.min_gap.min(r - bp);
            report.max_drift_slope = report.max_drift_slope.max(bp);
            if 2.0 * x * self.drift(x) + s * s > 0.0 {
                report.x_b_sigma = x;
            }
        }
        report.x_b_sigma_at_grid_end = report.x_b_sigma == *grid.last().expect("nonempty");
        report.gap_ok = if r > 0.0 {
            report.min_gap > 0.0
        } else {
            report.max_drift_slope < 0.0
        };
        let stride = (grid.len() / 8).max(1);
        let opts = TailOptions::default();
        for &a in grid.iter().step_by(stride) {
            match self.ln_speed_tail_mass(a, &opts) {
                Ok(m) if m.is_finite() => report.tail_mass.push((a, m.exp())),
                _ => {
                    report.tail_ok = false;
                    report.tail_mass.push((a, f64::INFINITY));
                }
            }
        }
        report
    }
}

/// 400 log-spaced points on `[1e-3, 1e3]`.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-3, 1e3, 400)
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub r: f64,
    pub sigma_positive: bool,
    /// `inf (r - b')` over the grid.
    pub min_gap: f64,
    /// `sup b'` over the grid.
    pub max_drift_slope: f64,
    /// Discounted: `inf (r - b') > 0`; ergodic (`r = 0`): `sup b' < 0`.
    pub gap_ok: bool,
    /// `(a, ∫_a^∞ m')` at sampled `a`.
    pub tail_mass: Vec<(f64, f64)>,
    pub tail_ok: bool,
    /// Largest grid point where `2x b(x) + σ²(x) > 0`; zero when there is none.
    pub x_b_sigma: f64,
    /// The condition still fails at the top of the grid.
    pub x_b_sigma_at_grid_end: bool,
    pub unchecked: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.sigma_positive && self.gap_ok && self.tail_ok
    }
}
