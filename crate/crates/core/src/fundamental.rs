//! Fundamental solutions of `(L - γ)u = 0` for the generator of `X`
//! (killing `γ = r`) and for the generator of `X̂` (killing `γ = r - b'`).
//!
//! For a geometric Brownian motion the solutions are powers of `x`. Otherwise
//! the equation is solved in `s = ln x` through the Riccati equation for the
//! log-derivative `p = x u'/u`:
//!
//! ```text
//! dp/ds = 2γ/a - p² - (2c/a - 1) p,   a = σ²/x²,  c = drift/x,
//! ```
//!
//! integrated in the direction where the wanted branch is attracting.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::closed_form::{self, CaseStudyParams};
use crate::diffusion::DiffusionModel;
use crate::error::{MfgError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    /// `L_X u = r u`, solutions `φ_r`, `ψ_r`.
    Plain,
    /// `L_X̂ u = (r - b') u`, solutions `φ̂_r`, `ψ̂_r`.
    Hatted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Decreasing,
    Increasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedFormGbm,
    OdeShooting,
}

/// Closed form when the model allows it, or always shoot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    #[default]
    Auto,
    Ode,
}

#[derive(Debug, Clone, Copy)]
pub struct FundamentalOptions {
    /// Integration domain; defaults to four decades either side of the
    /// normalization point.
    pub domain: Option<(f64, f64)>,
    /// Where the solution equals 1; defaults to the diffusion's anchor.
    pub normalization_point: Option<f64>,
    pub method: MethodChoice,
    /// Output spacing in `ln x`.
    pub step: f64,
}

impl Default for FundamentalOptions {
    fn default() -> Self {
        Self {
            domain: None,
            normalization_point: None,
            method: MethodChoice::Auto,
            step: 0.005,
        }
    }
}

#[derive(Debug, Clone)]
struct Grid {
    s0: f64,
    h: f64,
    ln_u: Vec<f64>,
    p: Vec<f64>,
    dp: Vec<f64>,
}

impl Grid {
    fn len(&self) -> usize {
        self.ln_u.len()
    }

    fn s_end(&self) -> f64 {
        self.s0 + self.h * (self.len() - 1) as f64
    }

    /// Cell index and local coordinate, or the nearest end when outside.
    fn locate(&self, s: f64) -> std::result::Result<(usize, f64), usize> {
        let t = (s - self.s0) / self.h;
        let n = self.len();
        if t < 0.0 {
            return Err(0);
        }
        if t > (n - 1) as f64 {
            return Err(n - 1);
        }
        let i = (t.floor() as usize).min(n - 2);
        Ok((i, t - i as f64))
    }

    fn hermite(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, t: f64) -> f64 {
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * d1
    }

    fn ln_u(&self, s: f64) -> f64 {
        match self.locate(s) {
            Ok((i, t)) => Self::hermite(
                self.ln_u[i],
                self.ln_u[i + 1],
                self.p[i],
                self.p[i + 1],
                self.h,
                t,
            ),
            Err(j) => self.ln_u[j] + self.p[j] * (s - (self.s0 + self.h * j as f64)),
        }
    }

    fn p(&self, s: f64) -> f64 {
        match self.locate(s) {
            Ok((i, t)) => Self::hermite(
                self.p[i],
                self.p[i + 1],
                self.dp[i],
                self.dp[i + 1],
                self.h,
                t,
            ),
            Err(j) => self.p[j],
        }
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Power { exponent: f64 },
    Grid(Grid),
}

/// One fundamental solution, normalized to 1 at `normalization_point`.
#[derive(Debug, Clone)]
pub struct FundamentalSolution {
    diffusion: DiffusionModel,
    r: f64,
    branch: Branch,
    operator: Operator,
    normalization_point: f64,
    method: Method,
    repr: Repr,
}

/// Log-derivative `p` satisfying the Riccati equation with `dp/ds = 0`:
/// the smaller root for the decreasing branch, the larger for the increasing.
fn frozen_root(a: f64, c: f64, gamma: f64, branch: Branch) -> Result<f64> {
    let (qa, qb, qc) = (0.5 * a, c - 0.5 * a, -gamma);
    let disc = qb * qb - 4.0 * qa * qc;
    if !(disc >= 0.0) || !disc.is_finite() {
        return Err(MfgError::Numerical(format!(
            "boundary exponent equation has no real root (a = {a}, c = {c}, gamma = {gamma})"
        )));
    }
    let sign = if qb >= 0.0 { 1.0 } else { -1.0 };
    let q = -0.5 * (qb + sign * disc.sqrt());
    let (r1, r2) = if q == 0.0 {
        (0.0, -qb / qa)
    } else {
        (q / qa, qc / q)
    };
    let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    Ok(match branch {
        Branch::Decreasing => lo,
        Branch::Increasing => hi,
    })
}

impl FundamentalSolution {
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn branch(&self) -> Branch {
        self.branch
    }
    pub fn operator(&self) -> Operator {
        self.operator
    }
    pub fn method(&self) -> Method {
        self.method
    }
    pub fn normalization_point(&self) -> f64 {
        self.normalization_point
    }
    pub fn diffusion(&self) -> &DiffusionModel {
        &self.diffusion
    }

    /// The power-law exponent when the solution is in closed form.
    pub fn exponent(&self) -> Option<f64> {
        match self.repr {
            Repr::Power { exponent } => Some(exponent),
            Repr::Grid(_) => None,
        }
    }

    /// Range of the ODE grid in `x` (the whole half-line for closed forms).
    pub fn grid_range(&self) -> (f64, f64) {
        match &self.repr {
            Repr::Power { .. } => (0.0, f64::INFINITY),
            Repr::Grid(g) => (g.s0.exp(), g.s_end().exp()),
        }
    }

    /// Points of the ODE grid (empty for closed forms).
    pub fn grid_points(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Power { .. } => Vec::new(),
            Repr::Grid(g) => (0..g.len())
                .map(|i| (g.s0 + g.h * i as f64).exp())
                .collect(),
        }
    }

    pub fn ln_eval(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Power { exponent } => exponent * (x / self.normalization_point).ln(),
            Repr::Grid(g) => g.ln_u(x.ln()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.ln_eval(x).exp()
    }

    /// Elasticity `x u'(x)/u(x)`.
    pub fn log_derivative(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Power { exponent } => *exponent,
            Repr::Grid(g) => g.p(x.ln()),
        }
    }

    pub fn eval_prime(&self, x: f64) -> f64 {
        self.eval(x) * self.log_derivative(x) / x
    }

    /// Killing rate `γ(x)` of the operator.
    pub fn killing(&self, x: f64) -> f64 {
        match self.operator {
            Operator::Plain => self.r,
            Operator::Hatted => self.r - self.diffusion.drift_prime(x),
        }
    }

    fn operator_drift(&self, x: f64) -> f64 {
        match self.operator {
            Operator::Plain => self.diffusion.drift(x),
            Operator::Hatted => self.diffusion.hat_drift(x),
        }
    }

    /// `u''` read off the differential equation.
    pub fn second_derivative(&self, x: f64) -> f64 {
        let s2 = self.diffusion.vol(x).powi(2);
        let u = self.eval(x);
        let up = u * self.log_derivative(x) / x;
        (self.killing(x) * u - self.operator_drift(x) * up) / (0.5 * s2)
    }

    /// `ln` of the scale density matching the operator (`S'` or `Ŝ'`).
    pub fn ln_scale(&self, x: f64) -> Result<f64> {
        let ln_s = self.diffusion.ln_scale_density(x)?;
        Ok(match self.operator {
            Operator::Plain => ln_s,
            Operator::Hatted => ln_s - 2.0 * self.diffusion.vol(x).ln(),
        })
    }

    /// `|½σ²u'' + D u' - γu|` relative to the sum of the magnitudes of the
    /// three terms, divided through by `u`. The derivative of the stored
    /// log-derivative is taken by central differences, so this measures how
    /// well the stored solution satisfies the equation rather than restating it.
    pub fn residual(&self, x: f64) -> f64 {
        let hs: f64 = 1e-4;
        let p = self.log_derivative(x);
        let dp =
            (self.log_derivative(x * hs.exp()) - self.log_derivative(x * (-hs).exp())) / (2.0 * hs);
        let s2 = self.diffusion.vol(x).powi(2);
        let terms = [
            0.5 * s2 * (p * p + dp - p) / (x * x),
            self.operator_drift(x) * p / x,
            -self.killing(x),
        ];
        let scale: f64 = terms.iter().map(|t| t.abs()).sum();
        terms.iter().sum::<f64>().abs() / scale.max(f64::MIN_POSITIVE)
    }

    /// Writes `x,value,derivative,residual` at the given points.
    pub fn write_diagnostics(&self, path: impl AsRef<Path>, xs: &[f64]) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["x", "value", "derivative", "residual"])?;
        for &x in xs {
            w.write_record(&[
                format!("{x:.17e}"),
                format!("{:.17e}", self.eval(x)),
                format!("{:.17e}", self.eval_prime(x)),
                format!("{:.6e}", self.residual(x)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves for the fundamental solution of the requested operator and branch.
pub fn solve_fundamental(
    diffusion: &DiffusionModel,
    r: f64,
    branch: Branch,
    operator: Operator,
    opts: &FundamentalOptions,
) -> Result<FundamentalSolution> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(MfgError::Domain(format!(
            "discount rate must be nonnegative, got {r}"
        )));
    }
    let x_n = opts.normalization_point.unwrap_or(diffusion.x_anchor());
    if !(x_n > 0.0 && x_n.is_finite()) {
        return Err(MfgError::Config(format!(
            "normalization point must be positive, got {x_n}"
        )));
    }
    let (x_lo, x_hi) = opts.domain.unwrap_or((1e-4 * x_n, 1e4 * x_n));
    if !(x_lo > 0.0 && x_lo < x_n && x_n < x_hi && x_hi.is_finite()) {
        return Err(MfgError::Config(format!(
            "domain [{x_lo}, {x_hi}] must contain the normalization point {x_n}"
        )));
    }
    let base = FundamentalSolution {
        diffusion: diffusion.clone(),
        r,
        branch,
        operator,
        normalization_point: x_n,
        method: Method::ClosedFormGbm,
        repr: Repr::Power { exponent: 0.0 },
    };
    if let (MethodChoice::Auto, Some((delta, sigma))) = (opts.method, diffusion.gbm_params()) {
        let p = CaseStudyParams {
            delta,
            sigma,
            beta: 0.5,
            r,
        };
        let (m, n) = closed_form::exponents(&p);
        let k = match branch {
            Branch::Decreasing => m,
            Branch::Increasing => n,
        };
        let exponent = match operator {
            Operator::Plain => k,
            Operator::Hatted => k - 1.0,
        };
        return Ok(FundamentalSolution {
            repr: Repr::Power { exponent },
            ..base
        });
    }
    let grid = shoot(&base, x_lo.ln(), x_hi.ln(), opts.step)?;
    let mut sol = FundamentalSolution {
        method: Method::OdeShooting,
        repr: Repr::Grid(grid),
        ..base
    };
    let shift = sol.ln_eval(x_n);
    if let Repr::Grid(g) = &mut sol.repr {
        g.ln_u.iter_mut().for_each(|v| *v -= shift);
    }
    Ok(sol)
}

/// Riccati right-hand side and its `p`-derivative at `s`.
fn riccati(sol: &FundamentalSolution, s: f64, p: f64) -> (f64, f64) {
    let x = s.exp();
    let a = (sol.diffusion.vol(x) / x).powi(2);
    let c = sol.operator_drift(x) / x;
    let g = sol.killing(x);
    let lin = 2.0 * c / a - 1.0;
    (2.0 * g / a - p * p - lin * p, -2.0 * p - lin)
}

fn shoot(sol: &FundamentalSolution, s_lo: f64, s_hi: f64, step: f64) -> Result<Grid> {
    let n = (((s_hi - s_lo) / step).ceil() as usize).max(2) + 1;
    let h = (s_hi - s_lo) / (n - 1) as f64;
    let backward = sol.branch == Branch::Decreasing;
    let start = if backward { n - 1 } else { 0 };
    let s_start = s_lo + h * start as f64;
    let x_start = s_start.exp();
    let a0 = (sol.diffusion.vol(x_start) / x_start).powi(2);
    let c0 = sol.operator_drift(x_start) / x_start;
    let mut p = frozen_root(a0, c0, sol.killing(x_start), sol.branch)?;
    let mut ln_u: f64 = 0.0;
    let mut grid = Grid {
        s0: s_lo,
        h,
        ln_u: vec![0.0; n],
        p: vec![0.0; n],
        dp: vec![0.0; n],
    };
    let dir = if backward { -1.0 } else { 1.0 };
    let mut idx = start;
    loop {
        let s = s_lo + h * idx as f64;
        let (f, stiff) = riccati(sol, s, p);
        if !(p.is_finite() && ln_u.is_finite() && f.is_finite()) {
            return Err(MfgError::Numerical(format!(
                "shooting lost finiteness at x = {:.6e} ({:?} branch, {:?})",
                s.exp(),
                sol.branch,
                sol.operator
            )));
        }
        grid.ln_u[idx] = ln_u;
        grid.p[idx] = p;
        grid.dp[idx] = f;
        if (backward && idx == 0) || (!backward && idx == n - 1) {
            break;
        }
        // Keep every substep inside the RK4 stability region.
        let subs = ((h * stiff.abs()) / 0.1).ceil().max(1.0);
        if subs > 1e6 {
            return Err(MfgError::Numerical(format!(
                "Riccati equation too stiff at x = {:.6e}",
                s.exp()
            )));
        }
        let subs = subs as usize;
        let hs = dir * h / subs as f64;
        let mut t = s;
        for _ in 0..subs {
            let k1 = riccati(sol, t, p).0;
            let k2 = riccati(sol, t + 0.5 * hs, p + 0.5 * hs * k1).0;
            let k3 = riccati(sol, t + 0.5 * hs, p + 0.5 * hs * k2).0;
            let k4 = riccati(sol, t + hs, p + hs * k3).0;
            ln_u += hs * (p + hs * (k1 + k2 + k3) / 6.0);
            p += hs * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
            t += hs;
        }
        idx = if backward { idx - 1 } else { idx + 1 };
    }
    let strict = sol.r > 0.0 || sol.operator == Operator::Hatted;
    let bad = grid.p.iter().position(|&q| match sol.branch {
        Branch::Decreasing => q > 0.0 || (strict && q >= 0.0),
        Branch::Increasing => q <= 0.0,
    });
    if let Some(i) = bad {
        return Err(MfgError::Numerical(format!(
            "{:?} branch lost monotonicity at x = {:.6e} (log-derivative {:.3e})",
            sol.branch,
            (s_lo + h * i as f64).exp(),
            grid.p[i]
        )));
    }
    Ok(grid)
}

/// `[u₁' u₂ - u₂' u₁] / S'` for an increasing/decreasing pair, evaluated at
/// `x` and at `x/2`, `2x` and averaged.
pub fn wronskian(psi: &FundamentalSolution, phi: &FundamentalSolution, x: f64) -> Result<f64> {
    if psi.operator != phi.operator || psi.r != phi.r {
        return Err(MfgError::Config(
            "Wronskian needs solutions of the same equation".into(),
        ));
    }
    let at = |y: f64| -> Result<f64> {
        let ln_norm = psi.ln_eval(y) + phi.ln_eval(y) - psi.ln_scale(y)?;
        Ok((psi.log_derivative(y) - phi.log_derivative(y)) / y * ln_norm.exp())
    };
    let w = [at(0.5 * x)?, at(x)?, at(2.0 * x)?];
    let mean = w.iter().sum::<f64>() / 3.0;
    let spread = w.iter().fold(0.0f64, |m, v| m.max((v - mean).abs())) / mean.abs();
    if !(spread <= 1e-6) {
        return Err(MfgError::Numerical(format!(
            "Wronskian is not constant: {:?} (relative spread {spread:.3e})",
            w
        )));
    }
    Ok(mean)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct McOptions {
    pub paths: usize,
    pub seed: u64,
    pub dt: f64,
    /// Paths still running at this time are truncated.
    pub horizon: f64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            paths: 100_000,
            seed: 7,
            dt: 2e-4,
            horizon: 200.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub truncated_fraction: f64,
    /// More than 1% of the paths hit the horizon.
    pub horizon_warning: bool,
}

/// Monte Carlo estimate of `φ̂_r(y)/φ̂_r(a)` as
/// `E_y[exp(∫_0^{τ_a} (b'(X̂_s) - r) ds)]` with `τ_a` the first passage of
/// `X̂` below `a`.
///
/// Paths are simulated in `ln x` with a Brownian-bridge test for crossings
/// inside a step.
pub fn phi_hat_mc(
    diffusion: &DiffusionModel,
    r: f64,
    y: f64,
    a: f64,
    opts: &McOptions,
) -> Result<McEstimate> {
    if !(a > 0.0 && y >= a) {
        return Err(MfgError::Domain(format!(
            "need 0 < a <= y, got a = {a}, y = {y}"
        )));
    }
    if opts.paths == 0 || !(opts.dt > 0.0) {
        return Err(MfgError::Config(
            "Monte Carlo needs paths > 0 and dt > 0".into(),
        ));
    }
    if y == a {
        return Ok(McEstimate {
            estimate: 1.0,
            std_error: 0.0,
            truncated_fraction: 0.0,
            horizon_warning: false,
        });
    }
    const CHUNK: usize = 1024;
    let chunks = opts.paths.div_ceil(CHUNK);
    let partial: Vec<(f64, f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = (0.0, 0.0, 0usize);
            for i in c * CHUNK..((c + 1) * CHUNK).min(opts.paths) {
                let (w, truncated) = hat_path(diffusion, r, y, a, opts, i as u64);
                acc.0 += w;
                acc.1 += w * w;
                acc.2 += truncated as usize;
            }
            acc
        })
        .collect();
    let (sum, sum_sq, truncated) = partial
        .iter()
        .fold((0.0, 0.0, 0), |t, p| (t.0 + p.0, t.1 + p.1, t.2 + p.2));
    let n = opts.paths as f64;
    let mean = sum / n;
    let var = ((sum_sq / n - mean * mean) * n / (n - 1.0).max(1.0)).max(0.0);
    let truncated_fraction = truncated as f64 / n;
    if truncated_fraction > 0.01 {
        log::warn!(
            "phi_hat_mc: {:.2}% of paths hit the horizon",
            100.0 * truncated_fraction
        );
    }
    Ok(McEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        truncated_fraction,
        horizon_warning: truncated_fraction > 0.01,
    })
}

fn hat_path(d: &DiffusionModel, r: f64, y: f64, a: f64, opts: &McOptions, id: u64) -> (f64, bool) {
    let mut rng = rng::stream(opts.seed, id, 0x68A7);
    let la = a.ln();
    let dt = opts.dt;
    let sq = dt.sqrt();
    let steps = (opts.horizon / dt).ceil() as u64;
    let mut z = y.ln();
    let mut x = y;
    let mut g = d.drift_prime(x) - r;
    let mut expo = 0.0;
    for _ in 0..steps {
        let v = d.vol(x) / x;
        let mu = d.hat_drift(x) / x - 0.5 * v * v;
        let dw: f64 = rng.sample(StandardNormal);
        let z_next = z + mu * dt + v * sq * dw;
        if z_next <= la {
            let frac = (z - la) / (z - z_next);
            expo += g * frac * dt;
            return (expo.exp(), false);
        }
        let gap = (z - la) * (z_next - la);
        if gap < 20.0 * v * v * dt {
            let p_cross = (-2.0 * gap / (v * v * dt)).exp();
            if rng.random::<f64>() < p_cross {
                expo += g * 0.5 * dt;
                return (expo.exp(), false);
            }
        }
        z = z_next;
        x = z.exp();
        let g_next = d.drift_prime(x) - r;
        expo += 0.5 * (g + g_next) * dt;
        g = g_next;
        if expo < -40.0 {
            return (0.0, false);
        }
    }
    (expo.exp(), true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gbm() -> DiffusionModel {
        DiffusionModel::gbm(2.0, 1.0).unwrap()
    }

    fn ode() -> FundamentalOptions {
        FundamentalOptions {
            method: MethodChoice::Ode,
            ..Default::default()
        }
    }

    #[test]
    fn gbm_exponents() {
        let d = gbm();
        let opts = FundamentalOptions::default();
        let phi = solve_fundamental(&d, 0.5, Branch::Decreasing, Operator::Plain, &opts).unwrap();
        let psi = solve_fundamental(&d, 0.5, Branch::Increasing, Operator::Plain, &opts).unwrap();
        assert!((phi.exponent().unwrap() + 0.19258).abs() < 1e-5);
        assert!((psi.exponent().unwrap() - 5.19258).abs() < 1e-5);
        let phi0 = solve_fundamental(&d, 0.0, Branch::Decreasing, Operator::Plain, &opts).unwrap();
        assert_eq!(phi0.exponent().unwrap(), 0.0);
        let hat0 = solve_fundamental(&d, 0.0, Branch::Decreasing, Operator::Hatted, &opts).unwrap();
        assert!((hat0.exponent().unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn wronskian_gbm() {
        let d = gbm();
        let opts = FundamentalOptions::default();
        let phi = solve_fundamental(&d, 0.5, Branch::Decreasing, Operator::Plain, &opts).unwrap();
        let psi = solve_fundamental(&d, 0.5, Branch::Increasing, Operator::Plain, &opts).unwrap();
        let w = wronskian(&psi, &phi, 1.0).unwrap();
        assert!((w - 29f64.sqrt()).abs() < 1e-12);
        assert!((w - 5.38516).abs() < 1e-5);
    }

    #[test]
    fn shooting_reproduces_powers() {
        let d = gbm();
        for r in [0.05, 0.5, 1.0] {
            for op in [Operator::Plain, Operator::Hatted] {
                for br in [Branch::Decreasing, Branch::Increasing] {
                    let exact = solve_fundamental(&d, r, br, op, &Default::default()).unwrap();
                    let num = solve_fundamental(&d, r, br, op, &ode()).unwrap();
                    assert_eq!(num.method(), Method::OdeShooting);
                    for i in 0..=40 {
                        let x = 0.1 * 100f64.powf(i as f64 / 40.0);
                        let rel = (num.eval(x) / exact.eval(x) - 1.0).abs();
                        assert!(rel < 1e-9, "r={r} {op:?} {br:?} x={x} rel={rel}");
                    }
                }
            }
        }
    }

    #[test]
    fn affine_solutions_are_monotone_and_solve_the_equation() {
        let d = DiffusionModel::affine(1.5, 0.8, 0.7).unwrap();
        for op in [Operator::Plain, Operator::Hatted] {
            let phi = solve_fundamental(&d, 0.3, Branch::Decreasing, op, &ode()).unwrap();
            let psi = solve_fundamental(&d, 0.3, Branch::Increasing, op, &ode()).unwrap();
            assert!((phi.eval(1.0) - 1.0).abs() < 1e-14);
            for &x in &crate::diffusion::log_grid(0.01, 50.0, 60) {
                assert!(phi.eval_prime(x) < 0.0 && psi.eval_prime(x) > 0.0);
                // Between nodes the interpolant's second derivative is only O(h³).
                assert!(phi.residual(x) < 1e-6 && psi.residual(x) < 1e-6);
            }
            for sol in [&phi, &psi] {
                let nodes = sol.grid_points();
                for &x in nodes
                    .iter()
                    .skip(1)
                    .step_by(7)
                    .filter(|&&x| x > 1e-3 && x < 1e3)
                {
                    assert!(
                        sol.residual(x) < 1e-8,
                        "{op:?} x={x} res={}",
                        sol.residual(x)
                    );
                }
            }
            wronskian(&psi, &phi, 1.0).unwrap();
        }
    }

    #[test]
    fn mc_trivial_and_monotone_in_r() {
        let d = gbm();
        let opts = McOptions {
            paths: 2000,
            ..Default::default()
        };
        assert_eq!(phi_hat_mc(&d, 0.5, 0.5, 0.5, &opts).unwrap().estimate, 1.0);
        let lo = phi_hat_mc(&d, 5.0, 1.0, 0.5, &opts).unwrap();
        let hi = phi_hat_mc(&d, 0.5, 1.0, 0.5, &opts).unwrap();
        assert!(lo.estimate < hi.estimate);
        assert!(!hi.horizon_warning);
    }

    #[test]
    fn bad_domain_is_config_error() {
        let opts = FundamentalOptions {
            domain: Some((2.0, 3.0)),
            ..ode()
        };
        let e =
            solve_fundamental(&gbm(), 0.5, Branch::Decreasing, Operator::Plain, &opts).unwrap_err();
        assert!(e.is_config());
    }
}
