//! Running profits `π(x, θ)` and the aggregator pair `(F, f)` defining
//! `θ(μ) = F(∫ f dμ)`.

use std::fmt;
use std::sync::Arc;

use crate::diffusion::DiffusionModel;
use crate::error::{MfgError, Result};
use crate::roots;

/// A running profit together with its population aggregator.
///
/// Implementors are expected to satisfy: `π(·, θ)` concave and nondecreasing,
/// `π_xθ < 0`, `F` and `f` strictly increasing. These are checked on grids by
/// [`ProfitModel::check_structure`], not enforced.
pub trait Profit: Send + Sync {
    fn pi(&self, x: f64, theta: f64) -> f64;
    fn pi_x(&self, x: f64, theta: f64) -> f64;
    fn pi_xtheta(&self, x: f64, theta: f64) -> f64;
    /// Outer aggregator `F`.
    fn outer(&self, y: f64) -> f64;
    fn outer_inv(&self, theta: f64) -> f64;
    /// Weight `f`.
    fn weight(&self, x: f64) -> f64;
}

/// `π(x, θ) = x^β θ^{-(1+β)}` with `f(x) = x^β`, `F(y) = y^{1/β}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Isoelastic {
    pub beta: f64,
}

impl Profit for Isoelastic {
    fn pi(&self, x: f64, theta: f64) -> f64 {
        x.powf(self.beta) * theta.powf(-(1.0 + self.beta))
    }
    fn pi_x(&self, x: f64, theta: f64) -> f64 {
        self.beta * x.powf(self.beta - 1.0) * theta.powf(-(1.0 + self.beta))
    }
    fn pi_xtheta(&self, x: f64, theta: f64) -> f64 {
        -(1.0 + self.beta) * self.beta * x.powf(self.beta - 1.0) * theta.powf(-(2.0 + self.beta))
    }
    fn outer(&self, y: f64) -> f64 {
        y.powf(1.0 / self.beta)
    }
    fn outer_inv(&self, theta: f64) -> f64 {
        theta.powf(self.beta)
    }
    fn weight(&self, x: f64) -> f64 {
        x.powf(self.beta)
    }
}

#[derive(Clone)]
pub enum ProfitKind {
    Isoelastic(Isoelastic),
    Custom(Arc<dyn Profit>),
}

#[derive(Clone)]
pub struct ProfitModel {
    kind: ProfitKind,
}

impl fmt::Debug for ProfitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ProfitKind::Isoelastic(p) => write!(f, "ProfitModel::Isoelastic(beta = {})", p.beta),
            ProfitKind::Custom(_) => write!(f, "ProfitModel::Custom"),
        }
    }
}

/// Hard search interval for the sign-change point.
const X_HAT_BOUNDS: (f64, f64) = (1e-8, 1e8);

impl ProfitModel {
    pub fn isoelastic(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(MfgError::Config(format!(
                "isoelastic beta must lie in (0, 1), got {beta}"
            )));
        }
        Ok(Self {
            kind: ProfitKind::Isoelastic(Isoelastic { beta }),
        })
    }

    pub fn custom(profit: Arc<dyn Profit>) -> Self {
        Self {
            kind: ProfitKind::Custom(profit),
        }
    }

    fn inner(&self) -> &dyn Profit {
        match &self.kind {
            ProfitKind::Isoelastic(p) => p,
            ProfitKind::Custom(p) => p.as_ref(),
        }
    }

    /// Elasticity when the profit is isoelastic.
    pub fn beta(&self) -> Option<f64> {
        match &self.kind {
            ProfitKind::Isoelastic(p) => Some(p.beta),
            ProfitKind::Custom(_) => None,
        }
    }

    pub fn pi(&self, x: f64, theta: f64) -> f64 {
        self.inner().pi(x, theta)
    }
    pub fn pi_x(&self, x: f64, theta: f64) -> f64 {
        self.inner().pi_x(x, theta)
    }
    pub fn pi_xtheta(&self, x: f64, theta: f64) -> f64 {
        self.inner().pi_xtheta(x, theta)
    }
    pub fn outer(&self, y: f64) -> f64 {
        self.inner().outer(y)
    }
    pub fn outer_inv(&self, theta: f64) -> f64 {
        self.inner().outer_inv(theta)
    }
    pub fn weight(&self, x: f64) -> f64 {
        self.inner().weight(x)
    }

    /// `θ = F(∫ f dμ)` given the already computed mean of `f`.
    pub fn aggregate(&self, mean_of_weight: f64) -> Result<f64> {
        if !(mean_of_weight.is_finite() && mean_of_weight >= 0.0) {
            return Err(MfgError::Domain(format!(
                "mean of the weight must be finite and nonnegative, got {mean_of_weight}"
            )));
        }
        Ok(self.outer(mean_of_weight))
    }

    /// Net marginal profit `π_x(x, θ) - r + b'(x)`.
    pub fn net_marginal(&self, diffusion: &DiffusionModel, x: f64, theta: f64, r: f64) -> f64 {
        self.pi_x(x, theta) - r + diffusion.drift_prime(x)
    }

    /// The point `x̂_r(θ)` where the net marginal profit changes sign from
    /// positive to negative.
    pub fn x_hat(&self, diffusion: &DiffusionModel, theta: f64, r: f64) -> Result<f64> {
        if !(theta > 0.0 && theta.is_finite()) || !(r >= 0.0) {
            return Err(MfgError::Domain(format!(
                "x_hat needs theta > 0 and r >= 0 (got {theta}, {r})"
            )));
        }
        let g = |s: f64| self.net_marginal(diffusion, s.exp(), theta, r);
        let (lo_bound, hi_bound) = (X_HAT_BOUNDS.0.ln(), X_HAT_BOUNDS.1.ln());
        let guess = (1.0 / theta).clamp(X_HAT_BOUNDS.0, X_HAT_BOUNDS.1).ln();
        let mut lo = (guess - std::f64::consts::LN_10).max(lo_bound);
        let mut hi = (guess + std::f64::consts::LN_10).min(hi_bound);
        while g(lo) <= 0.0 {
            if lo <= lo_bound {
                return Err(MfgError::AssumptionViolation(format!(
                    "net marginal profit is not positive near 0 (theta = {theta}, r = {r})"
                )));
            }
            hi = lo;
            lo = (lo - 2.0 * std::f64::consts::LN_10).max(lo_bound);
        }
        while g(hi) >= 0.0 {
            if hi >= hi_bound {
                return Err(MfgError::AssumptionViolation(format!(
                    "net marginal profit does not turn negative below 1e8 (theta = {theta}, r = {r})"
                )));
            }
            lo = hi;
            hi = (hi + 2.0 * std::f64::consts::LN_10).min(hi_bound);
        }
        // Tolerance in ln x is a relative tolerance in x.
        let root = roots::bisect(g, lo, hi, 1e-13, 200)?;
        Ok(root.x.exp())
    }

    /// Grid check of concavity/monotonicity of `π(·, θ)`, `π_xθ < 0` and
    /// `F⁻¹ ∘ F = id`. Returns the list of failures.
    pub fn check_structure(&self, x_grid: &[f64], theta_grid: &[f64]) -> Vec<String> {
        let mut failures = Vec::new();
        for &theta in theta_grid {
            let mut prev = f64::INFINITY;
            for &x in x_grid {
                let px = self.pi_x(x, theta);
                if px < 0.0 {
                    failures.push(format!("pi_x({x}, {theta}) < 0"));
                }
                if px > prev * (1.0 + 1e-12) {
                    failures.push(format!("pi_x(., {theta}) increases at {x}"));
                }
                prev = px;
                if self.pi_xtheta(x, theta) >= 0.0 {
                    failures.push(format!("pi_xtheta({x}, {theta}) >= 0"));
                }
            }
        }
        for &y in x_grid {
            let back = self.outer_inv(self.outer(y));
            if (back - y).abs() > 1e-10 * y.max(1.0) {
                failures.push(format!("F_inv(F({y})) = {back}"));
            }
        }
        failures
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::log_grid;

    fn symbolic_x_hat(beta: f64, delta: f64, r: f64, theta: f64) -> f64 {
        (beta / ((r + delta) * theta.powf(1.0 + beta))).powf(1.0 / (1.0 - beta))
    }

    #[test]
    fn aggregate_examples() {
        for beta in [0.2, 0.6, 0.9] {
            assert!(
                (ProfitModel::isoelastic(beta)
                    .unwrap()
                    .aggregate(1.0)
                    .unwrap()
                    - 1.0)
                    .abs()
                    < 1e-15
            );
        }
        let p = ProfitModel::isoelastic(0.6).unwrap();
        assert!((p.aggregate(2.0).unwrap() - 2f64.powf(5.0 / 3.0)).abs() < 1e-12);
        assert!((p.aggregate(2.0).unwrap() - 3.1748).abs() < 1e-4);
        let p = ProfitModel::isoelastic(0.5).unwrap();
        assert!((p.aggregate(4.0).unwrap() - 16.0).abs() < 1e-12);
        assert!(p.aggregate(f64::NAN).is_err());
    }

    #[test]
    fn x_hat_matches_symbolic_root() {
        let d = DiffusionModel::gbm(2.0, 1.0).unwrap();
        let p = ProfitModel::isoelastic(0.6).unwrap();
        let xh = p.x_hat(&d, 0.48844, 0.5).unwrap();
        assert!((xh - 0.4957).abs() < 1e-4);
        for &theta in &[0.01, 0.3, 1.0, 7.0, 20.0] {
            for &r in &[0.0, 0.05, 0.5, 3.0] {
                let num = p.x_hat(&d, theta, r).unwrap();
                let exact = symbolic_x_hat(0.6, 2.0, r, theta);
                assert!((num / exact - 1.0).abs() < 1e-8, "theta={theta} r={r}");
            }
        }
    }

    #[test]
    fn x_hat_is_a_sign_change() {
        let d = DiffusionModel::affine(1.2, 0.5, 0.4).unwrap();
        let p = ProfitModel::isoelastic(0.4).unwrap();
        for &theta in &[0.2, 1.0, 4.0] {
            let xh = p.x_hat(&d, theta, 0.3).unwrap();
            assert!(p.net_marginal(&d, xh * (1.0 - 1e-3), theta, 0.3) > 0.0);
            assert!(p.net_marginal(&d, xh * (1.0 + 1e-3), theta, 0.3) < 0.0);
        }
    }

    #[test]
    fn x_hat_monotone_in_theta_and_r() {
        let d = DiffusionModel::gbm(1.0, 0.8).unwrap();
        let p = ProfitModel::isoelastic(0.7).unwrap();
        let thetas = log_grid(0.05, 5.0, 30);
        let xs: Vec<f64> = thetas
            .iter()
            .map(|&t| p.x_hat(&d, t, 0.2).unwrap())
            .collect();
        assert!(xs.windows(2).all(|w| w[1] <= w[0]));
        let rs: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let xs: Vec<f64> = rs.iter().map(|&r| p.x_hat(&d, 0.5, r).unwrap()).collect();
        assert!(xs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn isoelastic_structure_holds() {
        let p = ProfitModel::isoelastic(0.6).unwrap();
        assert!(p
            .check_structure(&log_grid(1e-3, 1e3, 50), &log_grid(0.1, 10.0, 7))
            .is_empty());
    }

    #[test]
    fn invalid_beta_rejected() {
        assert!(ProfitModel::isoelastic(1.0).is_err());
        assert!(ProfitModel::isoelastic(0.0).is_err());
    }

    struct Linear;
    impl Profit for Linear {
        fn pi(&self, x: f64, theta: f64) -> f64 {
            x / theta
        }
        fn pi_x(&self, _x: f64, theta: f64) -> f64 {
            1.0 / theta
        }
        fn pi_xtheta(&self, _x: f64, theta: f64) -> f64 {
            -1.0 / (theta * theta)
        }
        fn outer(&self, y: f64) -> f64 {
            y
        }
        fn outer_inv(&self, t: f64) -> f64 {
            t
        }
        fn weight(&self, x: f64) -> f64 {
            x
        }
    }

    #[test]
    fn missing_sign_change_is_assumption_violation() {
        // Linear profit against constant user cost: the net marginal never changes sign.
        let d = DiffusionModel::gbm(0.1, 0.3).unwrap();
        let p = ProfitModel::custom(Arc::new(Linear));
        let e = p.x_hat(&d, 1.0, 0.0).unwrap_err();
        assert!(matches!(e, MfgError::AssumptionViolation(_)));
    }
}
