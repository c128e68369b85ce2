//! Exact equilibria for geometric Brownian motion `dX = -δX dt + σX dW`
//! with isoelastic profit `π(x, θ) = x^β θ^{-(1+β)}`.
//!
//! These formulas are the oracle for every numerical component of the crate.

use serde::Serialize;

use crate::error::{MfgError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaseStudyParams {
    pub delta: f64,
    pub sigma: f64,
    pub beta: f64,
    /// Discount rate; zero selects the ergodic criterion.
    pub r: f64,
}

impl Default for CaseStudyParams {
    fn default() -> Self {
        Self {
            delta: 2.0,
            sigma: 1.0,
            beta: 0.6,
            r: 0.5,
        }
    }
}

impl CaseStudyParams {
    pub fn new(delta: f64, sigma: f64, beta: f64, r: f64) -> Result<Self> {
        let p = Self {
            delta,
            sigma,
            beta,
            r,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.sigma > 0.0) {
            return Err(MfgError::Config(format!(
                "delta and sigma must be positive (got {}, {})",
                self.delta, self.sigma
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(MfgError::Config(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(MfgError::Config(format!(
                "r must be nonnegative, got {}",
                self.r
            )));
        }
        Ok(())
    }

    pub fn with_r(self, r: f64) -> Self {
        Self { r, ..self }
    }

    /// Pareto exponent of the stationary law, `1 + 2δ/σ²`.
    pub fn pareto_index(&self) -> f64 {
        1.0 + 2.0 * self.delta / (self.sigma * self.sigma)
    }
}

/// Roots `m(r) ≤ 0 < 1 < n(r)` of `½σ²k(k-1) - δk - r = 0`; the fundamental
/// solutions are `φ_r = x^m`, `ψ_r = x^n`.
pub fn exponents(p: &CaseStudyParams) -> (f64, f64) {
    let s2 = p.sigma * p.sigma;
    let a = p.delta / s2 + 0.5;
    let q = (a * a + 2.0 * p.r / s2).sqrt();
    (a - q, a + q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscountedClosedForm {
    pub rho_star: f64,
    pub theta_star: f64,
    /// `H(ρ*_r; r)`.
    pub h: f64,
    pub x_star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErgodicClosedForm {
    pub rho_star: f64,
    pub theta_star: f64,
    pub x_star: f64,
    pub lambda_star: f64,
}

pub fn discounted_equilibrium(p: &CaseStudyParams) -> Result<DiscountedClosedForm> {
    p.validate()?;
    if p.r <= 0.0 {
        return Err(MfgError::Config(
            "discounted equilibrium needs r > 0".into(),
        ));
    }
    let (m, n) = exponents(p);
    let (b, s2) = (p.beta, p.sigma * p.sigma);
    let k = p.pareto_index();
    let rho_star = ((k - b) / k).powf((1.0 - b * b) / (2.0 * b))
        * (s2 * (n - b) * (1.0 - m) / (2.0 * b)).powf((1.0 + b) / 2.0);
    let theta_star = rho_star.powf(-1.0 / (1.0 + b));
    let h = 2.0 * rho_star / (s2 * (n - b) * (b - m));
    let x_star = (h * b * (b - m) / (1.0 - m)).powf(1.0 / (1.0 - b));
    Ok(DiscountedClosedForm {
        rho_star,
        theta_star,
        h,
        x_star,
    })
}

pub fn ergodic_equilibrium(p: &CaseStudyParams) -> Result<ErgodicClosedForm> {
    p.validate()?;
    let n = p.pareto_index();
    let (b, s2) = (p.beta, p.sigma * p.sigma);
    let rho_star = ((n - b) / n).powf((1.0 - b * b) / (2.0 * b))
        * (s2 * (n - b) / (2.0 * b)).powf((1.0 + b) / 2.0);
    let theta_star = rho_star.powf(-1.0 / (1.0 + b));
    let x_star = (2.0 * rho_star * b / (s2 * (n - b))).powf(1.0 / (1.0 - b));
    let lambda_star = -p.delta * x_star + x_star.powf(b) * rho_star;
    Ok(ErgodicClosedForm {
        rho_star,
        theta_star,
        x_star,
        lambda_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> CaseStudyParams {
        CaseStudyParams::default()
    }

    #[test]
    fn exponents_at_defaults() {
        let (m, n) = exponents(&defaults());
        assert!((m - (2.5 - 7.25f64.sqrt())).abs() < 1e-15);
        assert!((m + 0.19258).abs() < 1e-5);
        assert!((n - 5.19258).abs() < 1e-5);
        let (m0, n0) = exponents(&defaults().with_r(0.0));
        assert_eq!(m0, 0.0);
        assert!((n0 - 5.0).abs() < 1e-15);
    }

    #[test]
    fn exponents_vieta() {
        for &(d, s, r) in &[(2.0, 1.0, 0.5), (0.3, 0.2, 1.7), (5.0, 2.0, 0.01)] {
            let p = CaseStudyParams::new(d, s, 0.5, r).unwrap();
            let (m, n) = exponents(&p);
            assert!((m * n + 2.0 * r / (s * s)).abs() < 1e-12 * (1.0 + (m * n).abs()));
            assert!((m + n - (2.0 * d / (s * s) + 1.0)).abs() < 1e-12 * (m + n));
            assert!(m < 0.0 && n > 1.0);
        }
    }

    #[test]
    fn discounted_defaults() {
        let c = discounted_equilibrium(&defaults()).unwrap();
        assert!((c.rho_star - 3.1467).abs() < 1e-3);
        assert!((c.theta_star - 0.48844).abs() < 2e-5);
        assert!((c.x_star - 0.3946).abs() < 2e-4);
        assert!((c.rho_star.powf(-1.0 / 1.6) - c.theta_star).abs() < 1e-15);
    }

    #[test]
    fn ergodic_defaults() {
        let e = ergodic_equilibrium(&defaults()).unwrap();
        assert!((e.rho_star - 2.6412).abs() < 1e-4);
        assert!((e.theta_star - 0.54498).abs() < 2e-5);
        assert!((e.x_star - 0.4404).abs() < 1e-4);
        let lam = -2.0 * e.x_star + e.x_star.powf(0.6) * e.rho_star;
        assert_eq!(lam, e.lambda_star);
    }

    #[test]
    fn positive_barriers_across_beta() {
        for i in 1..=9 {
            let p = CaseStudyParams::new(2.0, 1.0, i as f64 / 10.0, 0.5).unwrap();
            let x = discounted_equilibrium(&p).unwrap().x_star;
            assert!(x > 0.0 && x.is_finite());
        }
    }

    #[test]
    fn discounted_tends_to_ergodic() {
        let e = ergodic_equilibrium(&defaults()).unwrap();
        let d = discounted_equilibrium(&defaults().with_r(1e-6)).unwrap();
        assert!((d.x_star / e.x_star - 1.0).abs() < 1e-4);
        assert!((d.rho_star / e.rho_star - 1.0).abs() < 1e-4);
        assert!((d.theta_star / e.theta_star - 1.0).abs() < 1e-4);
    }

    #[test]
    fn ordering_between_criteria() {
        let e = ergodic_equilibrium(&defaults()).unwrap();
        let d = discounted_equilibrium(&defaults()).unwrap();
        assert!(d.x_star < e.x_star);
        assert!(d.rho_star > e.rho_star);
    }

    fn sweep(param: &str, r: f64) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = match param {
            "sigma" => (0.5, 1.9),
            "delta" => (1.0, 3.0),
            _ => (0.1, 0.9),
        };
        (0..20)
            .map(|i| {
                let v = lo + (hi - lo) * i as f64 / 19.0;
                let mut p = defaults().with_r(r);
                match param {
                    "sigma" => p.sigma = v,
                    "delta" => p.delta = v,
                    _ => p.beta = v,
                }
                if r > 0.0 {
                    let c = discounted_equilibrium(&p).unwrap();
                    (c.x_star, c.rho_star)
                } else {
                    let c = ergodic_equilibrium(&p).unwrap();
                    (c.x_star, c.rho_star)
                }
            })
            .unzip()
    }

    fn increasing(v: &[f64]) -> bool {
        v.windows(2).all(|w| w[1] > w[0])
    }
    fn decreasing(v: &[f64]) -> bool {
        v.windows(2).all(|w| w[1] < w[0])
    }

    #[test]
    fn sensitivity_sign_patterns() {
        for r in [0.0, 0.5] {
            let (x, rho) = sweep("sigma", r);
            assert!(decreasing(&x) && increasing(&rho));
            let (x, rho) = sweep("delta", r);
            assert!(decreasing(&x) && increasing(&rho));
            let (x, rho) = sweep("beta", r);
            assert!(increasing(&x) && decreasing(&rho));
        }
    }

    #[test]
    fn gamma_reads_as_sigma() {
        // The r → 0 limit of the discounted price index reproduces the ergodic one
        // only when the ergodic formula uses σ; test with σ ≠ 1 to make it visible.
        let p = CaseStudyParams::new(1.3, 0.7, 0.45, 1e-9).unwrap();
        let d = discounted_equilibrium(&p).unwrap();
        let e = ergodic_equilibrium(&p).unwrap();
        assert!((d.rho_star / e.rho_star - 1.0).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(CaseStudyParams::new(2.0, 1.0, 1.2, 0.5).is_err());
        assert!(discounted_equilibrium(&defaults().with_r(0.0)).is_err());
    }
}
