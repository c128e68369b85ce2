//! Stationary equilibria by nested monotone root finding.
//!
//! For a fixed aggregate `θ` the barrier `x*(θ)` is the unique root in
//! `(0, x̂_r(θ))` of
//!
//! ```text
//! K(x, θ) = ∫_x^∞ φ̂_r(y) (π_x(y, θ) - r + b'(y)) m̂'(y) dy,
//! ```
//!
//! and the aggregate solves the consistency equation
//! `Q(θ) = ∫_{x*(θ)}^∞ (f(y) - F⁻¹(θ)) m'(y) dy = 0` on `[θ̂, ∞)`, where `θ̂`
//! solves `f(x*(θ)) = F⁻¹(θ)`. The ergodic problem is the same scheme at
//! `r = 0`.

use serde::{Deserialize, Serialize};

use crate::diffusion::{self, DiffusionModel};
use crate::error::{MfgError, Result};
use crate::fundamental::{
    self, Branch, FundamentalOptions, FundamentalSolution, Method, MethodChoice, Operator,
};
use crate::profit::ProfitModel;
use crate::quadrature::{self, TailOptions};
use crate::roots;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Tolerance on `K` relative to the integral of its absolute integrand.
    pub tol_k: f64,
    /// Tolerance on the normalized consistency residual.
    pub tol_q: f64,
    /// Root tolerance in `ln x` and `ln θ`, i.e. relative.
    pub tol_bisect: f64,
    /// Improper integrals stop once the latest decade carries less than this
    /// fraction of the accumulated absolute mass.
    pub quad_truncation_mass: f64,
    /// Initial bracket for the aggregate; expanded when it does not bracket.
    pub theta_bracket: Option<(f64, f64)>,
    /// Hard limits for the barrier search.
    pub x_bracket: (f64, f64),
    pub max_iter: usize,
    /// Normalization point of `φ̂_r`; defaults to the diffusion's anchor.
    pub normalization_point: Option<f64>,
    pub method: MethodChoice,
    /// ODE domain for non-closed-form fundamental solutions; defaults to four
    /// decades either side of `x̂_r(1)`.
    pub ode_domain: Option<(f64, f64)>,
    /// Polish the nested solution with a two-dimensional Newton iteration.
    pub newton_refine: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_k: 1e-9,
            tol_q: 1e-9,
            tol_bisect: 1e-10,
            quad_truncation_mass: 1e-10,
            theta_bracket: None,
            x_bracket: (1e-12, 1e12),
            max_iter: 200,
            normalization_point: None,
            method: MethodChoice::Auto,
            ode_domain: None,
            newton_refine: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tol_k", self.tol_k),
            ("tol_q", self.tol_q),
            ("tol_bisect", self.tol_bisect),
            ("quad_truncation_mass", self.quad_truncation_mass),
        ] {
            if !(v > 0.0 && v <= 1e-2) {
                return Err(MfgError::Config(format!(
                    "{name} must lie in (0, 1e-2], got {v}"
                )));
            }
        }
        if let Some((a, b)) = self.theta_bracket {
            if !(a > 0.0 && b > a && b.is_finite()) {
                return Err(MfgError::Config(format!(
                    "theta_bracket [{a}, {b}] is empty"
                )));
            }
        }
        let (a, b) = self.x_bracket;
        if !(a > 0.0 && b > a) {
            return Err(MfgError::Config(format!("x_bracket [{a}, {b}] is empty")));
        }
        if self.max_iter == 0 {
            return Err(MfgError::Config("max_iter must be positive".into()));
        }
        Ok(())
    }

    fn tail(&self) -> TailOptions {
        TailOptions {
            truncation_mass: self.quad_truncation_mass,
            ..TailOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    Discounted { r: f64 },
    Ergodic,
}

impl Mode {
    pub fn rate(&self) -> f64 {
        match self {
            Mode::Discounted { r } => *r,
            Mode::Ergodic => 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    /// `K(x*, θ*)` relative to the integral of its absolute integrand.
    pub k_residual: f64,
    /// `Q(θ*)` normalized by the stationary mass, relative to `F⁻¹(θ*)`.
    pub q_residual: f64,
    pub k_within_tol: bool,
    pub q_within_tol: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub theta_hat: f64,
    /// Successive aggregate brackets, ending with the one handed to the root finder.
    pub bracket_history: Vec<(f64, f64)>,
    pub fundamental_method: Method,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumSolution {
    #[serde(flatten)]
    pub mode: Mode,
    pub x_star: f64,
    pub theta_star: f64,
    /// `θ*^{-(1+β)}` for isoelastic profits.
    pub rho_star: Option<f64>,
    /// `x̂_r(θ*)`.
    pub x_hat: f64,
    /// `λ* = b(x*) + π(x*, θ*)` in the ergodic mode.
    pub ergodic_value: Option<f64>,
    /// Coefficient `A` of `φ_r` in the value function, discounted mode.
    pub value_coeff_a: Option<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct EquilibriumSolver {
    diffusion: DiffusionModel,
    profit: ProfitModel,
    config: SolverConfig,
}

/// `K` at one point, divided by the peak of `φ̂_r m̂'` on `[x, ∞)`.
#[derive(Debug, Clone, Copy)]
pub struct KValue {
    pub scaled: f64,
    /// `∫ |integrand|` on the same scale.
    pub abs_mass: f64,
    pub truncation_estimate: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct InnerSolution {
    pub x_star: f64,
    pub x_hat: f64,
    pub iterations: usize,
    pub k_relative: f64,
}

/// Largest sampled value of `ln_w` on `[x, 1e12 x]`, eight points per decade.
/// Dividing an integrand by `exp` of this keeps it in floating-point range.
fn peak_ln(ln_w: impl Fn(f64) -> Result<f64>, x: f64) -> Result<f64> {
    let mut peak = ln_w(x)?;
    for i in 1..=96 {
        let v = ln_w(x * 10f64.powf(i as f64 / 8.0))?;
        if v.is_finite() {
            peak = peak.max(v);
        }
    }
    Ok(peak)
}

/// Everything that depends on the discount rate only: the hatted decreasing
/// solution and the rate itself.
#[derive(Debug, Clone)]
pub struct ModeContext<'a> {
    solver: &'a EquilibriumSolver,
    mode: Mode,
    r: f64,
    phi_hat: FundamentalSolution,
}

impl EquilibriumSolver {
    pub fn new(
        diffusion: DiffusionModel,
        profit: ProfitModel,
        config: SolverConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            diffusion,
            profit,
            config,
        })
    }

    pub fn diffusion(&self) -> &DiffusionModel {
        &self.diffusion
    }
    pub fn profit(&self) -> &ProfitModel {
        &self.profit
    }
    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    fn fundamental_options(&self, r: f64) -> Result<FundamentalOptions> {
        let x_n = self
            .config
            .normalization_point
            .unwrap_or(self.diffusion.x_anchor());
        let domain = match self.config.ode_domain {
            Some(d) => Some(d),
            None if self.diffusion.gbm_params().is_some()
                && self.config.method == MethodChoice::Auto =>
            {
                None
            }
            None => {
                let x_ref = self.profit.x_hat(&self.diffusion, 1.0, r)?;
                Some(((1e-4 * x_ref).min(0.5 * x_n), (1e4 * x_ref).max(2.0 * x_n)))
            }
        };
        Ok(FundamentalOptions {
            domain,
            normalization_point: Some(x_n),
            method: self.config.method,
            ..FundamentalOptions::default()
        })
    }

    pub fn context(&self, mode: Mode) -> Result<ModeContext<'_>> {
        let r = mode.rate();
        if let Mode::Discounted { r } = mode {
            if !(r > 0.0 && r.is_finite()) {
                return Err(MfgError::Config(format!(
                    "discounted mode needs r > 0, got {r}"
                )));
            }
        }
        let opts = self.fundamental_options(r)?;
        let phi_hat = fundamental::solve_fundamental(
            &self.diffusion,
            r,
            Branch::Decreasing,
            Operator::Hatted,
            &opts,
        )?;
        Ok(ModeContext {
            solver: self,
            mode,
            r,
            phi_hat,
        })
    }

    /// Checks the standing assumptions on the default grid.
    pub fn check_assumptions(&self, mode: Mode) -> Result<()> {
        let report = self
            .diffusion
            .validate_assumptions(mode.rate(), &diffusion::default_grid());
        if !report.sigma_positive {
            return Err(MfgError::AssumptionViolation(
                "volatility vanishes on the grid".into(),
            ));
        }
        if !report.gap_ok {
            return Err(MfgError::AssumptionViolation(match mode {
                Mode::Discounted { r } => format!(
                    "r - b' is not bounded away from 0 (r = {r}, inf = {:.3e})",
                    report.min_gap
                ),
                Mode::Ergodic => {
                    format!("b' is not negative (sup = {:.3e})", report.max_drift_slope)
                }
            }));
        }
        if !report.tail_ok {
            return Err(MfgError::AssumptionViolation(
                "speed measure has a non-integrable tail".into(),
            ));
        }
        Ok(())
    }

    pub fn k_integral(&self, x: f64, theta: f64, mode: Mode) -> Result<f64> {
        self.context(mode)?.k_integral(x, theta)
    }

    pub fn inner_barrier(&self, theta: f64, mode: Mode) -> Result<f64> {
        Ok(self.context(mode)?.inner_barrier(theta)?.x_star)
    }

    pub fn q_consistency(&self, theta: f64, mode: Mode) -> Result<f64> {
        Ok(self.context(mode)?.q_hat(theta)?.0)
    }

    pub fn solve_discounted(&self, r: f64) -> Result<EquilibriumSolution> {
        self.solve(Mode::Discounted { r })
    }

    pub fn solve_ergodic(&self) -> Result<EquilibriumSolution> {
        self.solve(Mode::Ergodic)
    }

    pub fn solve(&self, mode: Mode) -> Result<EquilibriumSolution> {
        self.check_assumptions(mode)?;
        let ctx = self.context(mode)?;
        let mut sol = ctx.solve()?;
        if let Mode::Discounted { .. } = mode {
            sol.value_coeff_a = Some(self.value_function(&sol)?.a_coeff());
        }
        Ok(sol)
    }

    /// The candidate value function of a discounted equilibrium.
    pub fn value_function(&self, sol: &EquilibriumSolution) -> Result<ValueFunction> {
        let r = match sol.mode {
            Mode::Discounted { r } => r,
            Mode::Ergodic => {
                return Err(MfgError::Config(
                    "the value function is defined for the discounted mode".into(),
                ))
            }
        };
        ValueFunction::new(self, r, sol.x_star, sol.theta_star)
    }
}

impl<'a> ModeContext<'a> {
    pub fn phi_hat(&self) -> &FundamentalSolution {
        &self.phi_hat
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    fn ln_weight(&self, y: f64) -> Result<f64> {
        // ln(φ̂(y) m̂'(y)) up to the constant ln 2.
        Ok(self.phi_hat.ln_eval(y) - self.solver.diffusion.ln_scale_density(y)?)
    }

    pub fn k_hat(&self, x: f64, theta: f64) -> Result<KValue> {
        let s = self.solver;
        let base = peak_ln(|y| self.ln_weight(y), x)?;
        let mut failure = None;
        let integral = quadrature::integrate_to_infinity(
            |y| match self.ln_weight(y) {
                Ok(l) => (l - base).exp() * s.profit.net_marginal(&s.diffusion, y, theta, self.r),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            x,
            &s.config.tail(),
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let integral = integral?;
        Ok(KValue {
            scaled: integral.value,
            abs_mass: integral.abs_mass,
            truncation_estimate: integral.truncation_estimate,
        })
    }

    pub fn k_integral(&self, x: f64, theta: f64) -> Result<f64> {
        let k = self.k_hat(x, theta)?;
        let base = peak_ln(|y| self.ln_weight(y), x)?;
        Ok(k.scaled * 2.0 * base.exp())
    }

    pub fn inner_barrier(&self, theta: f64) -> Result<InnerSolution> {
        let s = self.solver;
        let x_hat = s.profit.x_hat(&s.diffusion, theta, self.r)?;
        let k_at_hat = self.k_hat(x_hat, theta)?.scaled;
        if !(k_at_hat < 0.0) {
            return Err(MfgError::AssumptionViolation(format!(
                "K(x_hat) = {k_at_hat:.3e} is not negative at theta = {theta}"
            )));
        }
        // Below the ODE grid the solution is only extrapolated.
        let x_min = s.config.x_bracket.0.max(self.phi_hat.grid_range().0);
        let mut lo = (x_hat / 10.0).max(x_min);
        let mut k_lo = self.k_hat(lo, theta)?.scaled;
        let mut hi = x_hat;
        let mut k_hi = k_at_hat;
        while k_lo <= 0.0 {
            if lo <= x_min {
                return Err(MfgError::AssumptionViolation(format!(
                    "K does not turn positive above {x_min:e} (theta = {theta})"
                )));
            }
            hi = lo;
            k_hi = k_lo;
            lo = (lo / 10.0).max(x_min);
            k_lo = self.k_hat(lo, theta)?.scaled;
        }
        let root = roots::brent_bracketed(
            |t| self.k_hat(t.exp(), theta).map(|k| k.scaled),
            (lo.ln(), k_lo),
            (hi.ln(), k_hi),
            s.config.tol_bisect,
            s.config.max_iter,
        )?;
        let x_star = root.x.exp();
        let k = self.k_hat(x_star, theta)?;
        Ok(InnerSolution {
            x_star,
            x_hat,
            iterations: root.iterations,
            k_relative: k.scaled / k.abs_mass,
        })
    }

    /// Normalized consistency residual at barrier `z`:
    /// `E[f(X)] - F⁻¹(θ)` under the speed measure truncated at `z`.
    pub fn q_at_barrier(&self, z: f64, theta: f64) -> Result<f64> {
        let s = self.solver;
        let base = peak_ln(|y| s.diffusion.ln_speed_density(y), z)?;
        let target = s.profit.outer_inv(theta);
        let mut failure = None;
        let mut weighted = |g: &dyn Fn(f64) -> f64| -> Result<f64> {
            let r = quadrature::integrate_to_infinity(
                |y| match s.diffusion.ln_speed_density(y) {
                    Ok(l) => (l - base).exp() * g(y),
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                },
                z,
                &s.config.tail(),
            );
            if let Some(e) = failure.take() {
                return Err(e);
            }
            Ok(r?.value)
        };
        let mass = weighted(&|_| 1.0)?;
        let mean_f = weighted(&|y| s.profit.weight(y))?;
        Ok(mean_f / mass - target)
    }

    /// `(Q̂(θ), x*(θ), inner iterations)`.
    pub fn q_hat(&self, theta: f64) -> Result<(f64, f64, usize)> {
        let inner = self.inner_barrier(theta)?;
        Ok((
            self.q_at_barrier(inner.x_star, theta)?,
            inner.x_star,
            inner.iterations,
        ))
    }

    /// `θ̂` with `f(x*(θ̂)) = F⁻¹(θ̂)`.
    pub fn theta_hat(&self, iterations: &mut usize) -> Result<f64> {
        let s = self.solver;
        // When K stays negative down to the lower limit the barrier
        // degenerates to zero, which puts θ on the negative side.
        let mut h = |ln_theta: f64| -> Result<f64> {
            let theta = ln_theta.exp();
            let z = match self.inner_barrier(theta) {
                Ok(inner) => {
                    *iterations += inner.iterations;
                    inner.x_star
                }
                Err(MfgError::AssumptionViolation(_))
                    if s.profit.x_hat(&s.diffusion, theta, self.r).is_ok() =>
                {
                    0.0
                }
                Err(e) => return Err(e),
            };
            Ok(s.profit.weight(z) - s.profit.outer_inv(theta))
        };
        let t0 = s
            .config
            .theta_bracket
            .map(|(a, b)| (a * b).sqrt())
            .unwrap_or(1.0)
            .ln();
        let h0 = h(t0)?;
        let step = if h0 > 0.0 { 4f64.ln() } else { -(4f64.ln()) };
        let (mut a, mut ha) = (t0, h0);
        let limit = 1e8f64.ln();
        loop {
            let b = a + step;
            if b.abs() > limit {
                return Err(MfgError::Divergence(
                    "no sign change of f(x*(theta)) - F_inv(theta) for theta in [1e-8, 1e8]".into(),
                ));
            }
            let hb = h(b)?;
            if hb.signum() != ha.signum() || hb == 0.0 {
                let root = roots::brent_bracketed(
                    &mut h,
                    (a, ha),
                    (b, hb),
                    s.config.tol_bisect,
                    s.config.max_iter,
                )?;
                return Ok(root.x.exp());
            }
            a = b;
            ha = hb;
        }
    }

    pub fn solve(&self) -> Result<EquilibriumSolution> {
        let s = self.solver;
        let mut inner_iterations = 0;
        let theta_hat = self.theta_hat(&mut inner_iterations)?;
        let mut history = Vec::new();
        let mut q = |ln_theta: f64| -> Result<f64> {
            let (v, _, it) = self.q_hat(ln_theta.exp())?;
            inner_iterations += it;
            Ok(v)
        };
        let lo = theta_hat.ln();
        let q_lo = q(lo)?;
        if !(q_lo > 0.0) {
            return Err(MfgError::AssumptionViolation(format!(
                "Q(theta_hat) = {q_lo:.3e} is not positive"
            )));
        }
        let mut hi = match s.config.theta_bracket {
            Some((_, b)) if b > theta_hat => b.ln(),
            _ => lo + 2f64.ln(),
        };
        // Expand until Q < 0. Where the inner barrier ceases to exist, back
        // off toward the last point with Q > 0.
        let mut good = lo;
        let mut bad: Option<f64> = None;
        let q_hi = loop {
            if hi > 1e8f64.ln() {
                return Err(MfgError::Divergence(format!(
                    "Q stays nonnegative up to theta = 1e8 (theta_hat = {theta_hat})"
                )));
            }
            history.push((theta_hat, hi.exp()));
            if history.len() > s.config.max_iter {
                return Err(MfgError::Divergence(
                    "aggregate bracket search did not terminate".into(),
                ));
            }
            match q(hi) {
                Ok(v) if v < 0.0 => break v,
                Ok(_) => {
                    good = hi;
                    hi = match bad {
                        Some(b) => 0.5 * (good + b),
                        None => hi + 2f64.ln(),
                    };
                }
                Err(MfgError::AssumptionViolation(msg)) => {
                    bad = Some(hi);
                    if hi - good < s.config.tol_bisect {
                        return Err(MfgError::AssumptionViolation(format!(
                            "Q stays positive up to theta = {:.6e}, beyond which {msg}",
                            good.exp()
                        )));
                    }
                    hi = 0.5 * (good + hi);
                }
                Err(e) => return Err(e),
            }
        };
        let lo = good;
        let q_lo = q(lo)?;
        let root = roots::brent_bracketed(
            &mut q,
            (lo, q_lo),
            (hi, q_hi),
            s.config.tol_bisect,
            s.config.max_iter,
        )?;
        let mut theta_star = root.x.exp();
        let mut inner = self.inner_barrier(theta_star)?;
        let mut x_star = inner.x_star;
        let mut newton_steps = 0;
        if s.config.newton_refine {
            let (x, t, steps) = self.newton_refine(x_star, theta_star)?;
            x_star = x;
            theta_star = t;
            newton_steps = steps;
            inner.x_hat = s.profit.x_hat(&s.diffusion, theta_star, self.r)?;
        }
        let k = self.k_hat(x_star, theta_star)?;
        let k_residual = k.scaled / k.abs_mass;
        let q_residual = self.q_at_barrier(x_star, theta_star)? / s.profit.outer_inv(theta_star);
        if !(x_star < inner.x_hat) {
            return Err(MfgError::Numerical(format!(
                "barrier {x_star} is not below x_hat {}",
                inner.x_hat
            )));
        }
        let rho_star = s.profit.beta().map(|b| theta_star.powf(-(1.0 + b)));
        let ergodic_value = match self.mode {
            Mode::Ergodic => Some(s.diffusion.drift(x_star) + s.profit.pi(x_star, theta_star)),
            Mode::Discounted { .. } => None,
        };
        Ok(EquilibriumSolution {
            mode: self.mode,
            x_star,
            theta_star,
            rho_star,
            x_hat: inner.x_hat,
            ergodic_value,
            value_coeff_a: None,
            diagnostics: Diagnostics {
                k_residual,
                q_residual,
                k_within_tol: k_residual.abs() <= s.config.tol_k,
                q_within_tol: q_residual.abs() <= s.config.tol_q,
                outer_iterations: root.iterations,
                inner_iterations,
                theta_hat,
                bracket_history: history,
                fundamental_method: self.phi_hat.method(),
                newton_steps,
            },
        })
    }

    /// Newton on `Φ(x, θ) = (K̂, Q̂)` in `(ln x, ln θ)` with a
    /// finite-difference Jacobian; steps that do not reduce the residual are
    /// rejected.
    fn newton_refine(&self, x: f64, theta: f64) -> Result<(f64, f64, usize)> {
        let phi = |u: f64, v: f64| -> Result<[f64; 2]> {
            let (x, t) = (u.exp(), v.exp());
            let k = self.k_hat(x, t)?;
            Ok([
                k.scaled / k.abs_mass,
                self.q_at_barrier(x, t)? / self.solver.profit.outer_inv(t),
            ])
        };
        let norm = |f: &[f64; 2]| f[0].hypot(f[1]);
        let (mut u, mut v) = (x.ln(), theta.ln());
        let mut f = phi(u, v)?;
        let mut steps = 0;
        for _ in 0..5 {
            let h = 1e-6;
            let fu = phi(u + h, v)?;
            let fv = phi(u, v + h)?;
            let j = [
                [(fu[0] - f[0]) / h, (fv[0] - f[0]) / h],
                [(fu[1] - f[1]) / h, (fv[1] - f[1]) / h],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det == 0.0 || !det.is_finite() {
                break;
            }
            let du = -(j[1][1] * f[0] - j[0][1] * f[1]) / det;
            let dv = -(-j[1][0] * f[0] + j[0][0] * f[1]) / det;
            let trial = phi(u + du, v + dv)?;
            if norm(&trial) >= norm(&f) {
                break;
            }
            u += du;
            v += dv;
            f = trial;
            steps += 1;
        }
        Ok((u.exp(), v.exp(), steps))
    }
}

/// `v(x) = (x - x*) + v(x*)` below the barrier and `A φ_r(x) + v̄(x)` above,
/// where `v̄` is the resolvent of the running profit:
///
/// ```text
/// v̄(x) = w⁻¹ [φ_r(x) ∫_0^x ψ_r π m' dy + ψ_r(x) ∫_x^∞ φ_r π m' dy].
/// ```
#[derive(Debug, Clone)]
pub struct ValueFunction {
    diffusion: DiffusionModel,
    profit: ProfitModel,
    tail: TailOptions,
    r: f64,
    theta: f64,
    x_star: f64,
    phi: FundamentalSolution,
    psi: FundamentalSolution,
    wronskian: f64,
    a: f64,
    v_star: f64,
}

impl ValueFunction {
    fn new(solver: &EquilibriumSolver, r: f64, x_star: f64, theta: f64) -> Result<Self> {
        let opts = solver.fundamental_options(r)?;
        let d = &solver.diffusion;
        let phi = fundamental::solve_fundamental(d, r, Branch::Decreasing, Operator::Plain, &opts)?;
        let psi = fundamental::solve_fundamental(d, r, Branch::Increasing, Operator::Plain, &opts)?;
        let wronskian =
            fundamental::wronskian(&psi, &phi, opts.normalization_point.unwrap_or(1.0))?;
        let mut vf = Self {
            diffusion: d.clone(),
            profit: solver.profit.clone(),
            tail: solver.config.tail(),
            r,
            theta,
            x_star,
            phi,
            psi,
            wronskian,
            a: 0.0,
            v_star: 0.0,
        };
        let (vb, vbp) = vf.resolvent(x_star)?;
        let vbpp = vf.resolvent_second(x_star, vb, vbp);
        vf.a = -vbpp / vf.phi.second_derivative(x_star);
        vf.v_star = vf.a * vf.phi.eval(x_star) + vb;
        Ok(vf)
    }

    pub fn a_coeff(&self) -> f64 {
        self.a
    }
    pub fn x_star(&self) -> f64 {
        self.x_star
    }
    pub fn wronskian(&self) -> f64 {
        self.wronskian
    }

    /// `(v̄(x), v̄'(x))`.
    pub fn resolvent(&self, x: f64) -> Result<(f64, f64)> {
        let ln_phi_x = self.phi.ln_eval(x);
        let ln_psi_x = self.psi.ln_eval(x);
        let mut failure = None;
        let mut ln_m = |y: f64| match self.diffusion.ln_speed_density(y) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        };
        let lower = quadrature::integrate_from_zero(
            |y| (ln_phi_x + self.psi.ln_eval(y) + ln_m(y)).exp() * self.profit.pi(y, self.theta),
            x,
            &self.tail,
        );
        let upper = quadrature::integrate_to_infinity(
            |y| (ln_psi_x + self.phi.ln_eval(y) + ln_m(y)).exp() * self.profit.pi(y, self.theta),
            x,
            &self.tail,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let (lower, upper) = (lower?.value, upper?.value);
        let v = (lower + upper) / self.wronskian;
        let vp = (self.phi.log_derivative(x) * lower + self.psi.log_derivative(x) * upper)
            / (x * self.wronskian);
        Ok((v, vp))
    }

    fn resolvent_second(&self, x: f64, v: f64, vp: f64) -> f64 {
        let s2 = self.diffusion.vol(x).powi(2);
        (self.r * v - self.diffusion.drift(x) * vp - self.profit.pi(x, self.theta)) / (0.5 * s2)
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        if x <= self.x_star {
            return Ok(x - self.x_star + self.v_star);
        }
        Ok(self.a * self.phi.eval(x) + self.resolvent(x)?.0)
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        if x <= self.x_star {
            return Ok(1.0);
        }
        Ok(self.a * self.phi.eval_prime(x) + self.resolvent(x)?.1)
    }

    /// `v''`, read off the equation above the barrier.
    pub fn second_derivative(&self, x: f64) -> Result<f64> {
        if x <= self.x_star {
            return Ok(0.0);
        }
        let (v, vp) = self.resolvent(x)?;
        Ok(self.a * self.phi.second_derivative(x) + self.resolvent_second(x, v, vp))
    }

    /// `|½σ²v'' + bv' - rv + π| / (1 + |rv|)` with `v''` from central
    /// differences of `v'` (one-sided just above the barrier).
    pub fn hjb_residual(&self, x: f64) -> Result<f64> {
        let v = self.value(x)?;
        let vp = self.derivative(x)?;
        let vpp = if x <= self.x_star {
            0.0
        } else {
            let h = 1e-5 * x;
            let (a, b) = if x - h > self.x_star {
                (x - h, x + h)
            } else {
                (x, x + 2.0 * h)
            };
            (self.derivative(b)? - self.derivative(a)?) / (b - a)
        };
        let s2 = self.diffusion.vol(x).powi(2);
        let lhs = 0.5 * s2 * vpp + self.diffusion.drift(x) * vp - self.r * v
            + self.profit.pi(x, self.theta);
        Ok(lhs.abs() / (1.0 + (self.r * v).abs()))
    }
}
