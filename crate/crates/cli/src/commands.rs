use log::info;
use mfg_core::closed_form::{self, CaseStudyParams};
use mfg_core::diffusion::log_grid;
use mfg_core::fundamental::{self, FundamentalOptions, McOptions};
use mfg_core::simulator::{self, DeviationSetup, EpsilonReport, NPlayerReport};
use mfg_core::{
    quadrature, Branch, Claim, DiffusionModel, EquilibriumSolution, EquilibriumSolver,
    MethodChoice, MfgError, Operator, Result, TruncatedSpeedLaw,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, ModeName, SensitivityParam};
use crate::output::{fmt, fmt_opt, Outputs};

const DENSITY_POINTS: usize = 400;
const VALUE_POINTS: usize = 300;

fn density_csv(law: &TruncatedSpeedLaw) -> Result<Vec<u8>> {
    let z = law.barrier();
    let mut buf = Vec::new();
    law.write_csv_to(&mut buf, &log_grid(z, 1e3 * z, DENSITY_POINTS))?;
    Ok(buf)
}

pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<Outputs> {
    let solver = cfg.solver()?;
    let sol = solver.solve(cfg.solver.mode())?;
    info!("x* = {}, θ* = {}", sol.x_star, sol.theta_star);
    let mut out = Outputs::default();
    out.json("equilibrium.json", &sol)?;
    let law = TruncatedSpeedLaw::new(solver.diffusion(), sol.x_star)?;
    out.insert("density.csv", density_csv(&law)?);
    if cfg.solver.mode == ModeName::Discounted {
        let vf = solver.value_function(&sol)?;
        let rows = log_grid(sol.x_star / 10.0, 20.0 * sol.x_star, VALUE_POINTS)
            .into_iter()
            .map(|x| Ok(vec![fmt(x), fmt(vf.value(x)?)]))
            .collect::<Result<Vec<_>>>()?;
        out.csv("value.csv", &["x", "v"], &rows)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepRow {
    pub r: f64,
    pub x_star_r: f64,
    pub theta_star_r: f64,
    pub rho_star_r: Option<f64>,
    /// `r v(x*_r; r)`.
    pub r_v: f64,
    pub lambda_star_e: f64,
}

pub fn abelian_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let solver = cfg.solver()?;
    let lambda = solver
        .solve_ergodic()?
        .ergodic_value
        .ok_or_else(|| MfgError::Numerical("ergodic solve returned no value".into()))?;
    cfg.sweep
        .r_list
        .par_iter()
        .map(|&r| {
            let sol = solver.solve_discounted(r)?;
            let vf = solver.value_function(&sol)?;
            info!("r = {r}: x* = {}", sol.x_star);
            Ok(SweepRow {
                r,
                x_star_r: sol.x_star,
                theta_star_r: sol.theta_star,
                rho_star_r: sol.rho_star,
                r_v: r * vf.value(sol.x_star)?,
                lambda_star_e: lambda,
            })
        })
        .collect()
}

pub fn cmd_abelian_sweep(cfg: &ExperimentConfig) -> Result<Outputs> {
    let rows: Vec<Vec<String>> = abelian_sweep(cfg)?
        .iter()
        .map(|s| {
            vec![
                fmt(s.r),
                fmt(s.x_star_r),
                fmt(s.theta_star_r),
                fmt_opt(s.rho_star_r),
                fmt(s.r_v),
                fmt(s.lambda_star_e),
            ]
        })
        .collect();
    let mut out = Outputs::default();
    out.csv(
        "sweep.csv",
        &[
            "r",
            "x_star_r",
            "theta_star_r",
            "rho_star_r",
            "r_v",
            "lambda_star_e",
        ],
        &rows,
    )?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClosedFormColumns {
    pub x_star_e: f64,
    pub rho_star_e: f64,
    pub x_star_r: f64,
    pub rho_star_r: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SensitivityRow {
    pub param_value: f64,
    pub x_star_e: f64,
    pub rho_star_e: Option<f64>,
    pub x_star_r: f64,
    pub rho_star_r: Option<f64>,
    pub closed_form: Option<ClosedFormColumns>,
}

pub fn sensitivity(cfg: &ExperimentConfig) -> Result<Vec<SensitivityRow>> {
    let s = &cfg.sensitivity;
    let r = cfg.solver.r;
    s.values()
        .par_iter()
        .map(|&v| {
            let model = cfg.model.with_param(s.param, v)?;
            let mut profit = cfg.profit.clone();
            if s.param == SensitivityParam::Beta {
                profit = crate::config::ProfitBlock::Isoelastic { beta: v };
            }
            let solver = EquilibriumSolver::new(
                model.build()?,
                profit.build()?,
                cfg.solver.solver_config(),
            )?;
            let e = solver.solve_ergodic()?;
            let d = solver.solve_discounted(r)?;
            let closed_form = match solver.diffusion().gbm_params() {
                Some((delta, sigma)) => {
                    let p = CaseStudyParams::new(delta, sigma, profit.beta(), r)?;
                    let ce = closed_form::ergodic_equilibrium(&p)?;
                    let cd = closed_form::discounted_equilibrium(&p)?;
                    Some(ClosedFormColumns {
                        x_star_e: ce.x_star,
                        rho_star_e: ce.rho_star,
                        x_star_r: cd.x_star,
                        rho_star_r: cd.rho_star,
                    })
                }
                None => None,
            };
            info!(
                "{} = {v}: x*_e = {}, x*_r = {}",
                s.param.name(),
                e.x_star,
                d.x_star
            );
            Ok(SensitivityRow {
                param_value: v,
                x_star_e: e.x_star,
                rho_star_e: e.rho_star,
                x_star_r: d.x_star,
                rho_star_r: d.rho_star,
                closed_form,
            })
        })
        .collect()
}

pub fn cmd_sensitivity(cfg: &ExperimentConfig) -> Result<Outputs> {
    let rows = sensitivity(cfg)?;
    let mut header = vec![
        "param_value",
        "x_star_e",
        "rho_star_e",
        "x_star_r",
        "rho_star_r",
    ];
    let with_cf = cfg.model.is_gbm();
    if with_cf {
        header.extend([
            "cf_x_star_e",
            "cf_rho_star_e",
            "cf_x_star_r",
            "cf_rho_star_r",
        ]);
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|s| {
            let mut row = vec![
                fmt(s.param_value),
                fmt(s.x_star_e),
                fmt_opt(s.rho_star_e),
                fmt(s.x_star_r),
                fmt_opt(s.rho_star_r),
            ];
            if let Some(c) = s.closed_form {
                row.extend([
                    fmt(c.x_star_e),
                    fmt(c.rho_star_e),
                    fmt(c.x_star_r),
                    fmt(c.rho_star_r),
                ]);
            }
            row
        })
        .collect();
    let mut out = Outputs::default();
    out.csv("sensitivity.csv", &header, &table)?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonRow {
    pub claim: u8,
    pub r: Option<f64>,
    #[serde(flatten)]
    pub report: EpsilonReport,
}

/// `ε̂` nonincreasing in `N` for one claim and rate, allowing for the
/// half-widths of neighbouring entries.
#[derive(Debug, Clone, Serialize)]
pub struct SizeTrend {
    pub claim: u8,
    pub r: Option<f64>,
    pub n_players: Vec<usize>,
    pub nonincreasing: bool,
}

/// `ε̂` at the smallest rate no larger than at the largest, up to half-widths.
#[derive(Debug, Clone, Serialize)]
pub struct RateTrend {
    pub claim: u8,
    pub n_players: usize,
    pub r_small: f64,
    pub r_large: f64,
    pub smaller_at_small_r: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub ergodic: EquilibriumSolution,
    pub discounted: Vec<EquilibriumSolution>,
    pub equilibrium_run: NPlayerReport,
    pub theta_within_3_half_widths: bool,
    pub payoff_within_3_half_widths: bool,
    pub occupancy_ks: f64,
    /// Long-run control rate of one reflected path at `x*_e`.
    pub stationary_control_rate: Option<f64>,
    pub epsilon: Vec<EpsilonRow>,
    pub size_trends: Vec<SizeTrend>,
    pub rate_trends: Vec<RateTrend>,
}

fn within(a: &EpsilonReport, b: &EpsilonReport) -> bool {
    b.epsilon <= a.epsilon + a.epsilon_half_width + b.epsilon_half_width
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulationReport> {
    let sim = &cfg.sim;
    let solver = cfg.solver()?;
    let d = solver.diffusion();
    let profit = solver.profit();
    let ergodic = solver.solve_ergodic()?;
    let lambda = ergodic.ergodic_value.unwrap_or(f64::NAN);
    let x_e = ergodic.x_star;

    let claims: Vec<Claim> = sim
        .claims
        .iter()
        .map(|c| Claim::from_number(*c))
        .collect::<Result<_>>()?;
    let mut rates: Vec<f64> = Vec::new();
    if claims
        .iter()
        .any(|c| *c != Claim::ErgodicBarrierErgodicPayoff)
    {
        rates = sim.r_list.clone();
    }
    let discounted: Vec<EquilibriumSolution> = rates
        .par_iter()
        .map(|&r| solver.solve_discounted(r))
        .collect::<Result<_>>()?;

    info!(
        "equilibrium run with {} players at x* = {x_e}",
        sim.n_players
    );
    let equilibrium_run =
        simulator::nplayer_run(d, profit, &vec![x_e; sim.n_players], &sim.sim_config(0.0))?;
    let law = TruncatedSpeedLaw::new(d, x_e)?;
    let occupancy_ks = equilibrium_run.occupancy.ks_distance(|x| law.cdf(x))?;

    let mut n_list = sim.n_list.clone();
    n_list.sort_unstable();
    n_list.dedup();
    let mut epsilon = Vec::new();
    for claim in &claims {
        let claim_rates: Vec<Option<usize>> = match claim {
            Claim::ErgodicBarrierErgodicPayoff => vec![None],
            _ => (0..rates.len()).map(Some).collect(),
        };
        for ri in claim_rates {
            let r = ri.map(|i| rates[i]);
            let x_r = ri.map(|i| discounted[i].x_star);
            let barrier = if claim.uses_discounted_barrier() {
                x_r.unwrap()
            } else {
                x_e
            };
            let cap = simulator::barrier_cap(d, profit, r.zip(x_r), x_e)?;
            let grid = match &sim.deviation_grid {
                Some(g) => g.iter().cloned().filter(|z| *z <= cap).collect(),
                None => simulator::deviation_grid(barrier, cap, sim.grid_points),
            };
            for &n in &n_list {
                info!("claim {} r = {r:?} N = {n}", claim.number());
                let setup = DeviationSetup {
                    n_players: n,
                    equilibrium_barrier: barrier,
                    grid: grid.clone(),
                    payoff: claim.payoff(r.unwrap_or(0.0)),
                    cap,
                };
                let report = simulator::deviation_epsilon(d, profit, &setup, &sim.sim_config(0.0))?;
                epsilon.push(EpsilonRow {
                    claim: claim.number(),
                    r,
                    report,
                });
            }
        }
    }

    let mut size_trends = Vec::new();
    let mut rate_trends = Vec::new();
    for claim in &claims {
        let c = claim.number();
        let rows = |r: Option<f64>| -> Vec<&EpsilonRow> {
            epsilon
                .iter()
                .filter(|e| e.claim == c && e.r == r)
                .collect()
        };
        let keys: Vec<Option<f64>> = match claim {
            Claim::ErgodicBarrierErgodicPayoff => vec![None],
            _ => rates.iter().map(|r| Some(*r)).collect(),
        };
        for r in keys {
            let rs = rows(r);
            size_trends.push(SizeTrend {
                claim: c,
                r,
                n_players: rs.iter().map(|e| e.report.n_players).collect(),
                nonincreasing: rs.windows(2).all(|w| within(&w[0].report, &w[1].report)),
            });
        }
        if *claim != Claim::ErgodicBarrierErgodicPayoff && rates.len() >= 2 {
            let r_small = rates.iter().cloned().fold(f64::INFINITY, f64::min);
            let r_large = rates.iter().cloned().fold(0.0, f64::max);
            for &n in &n_list {
                let at = |r: f64| {
                    epsilon
                        .iter()
                        .find(|e| e.claim == c && e.r == Some(r) && e.report.n_players == n)
                };
                if let (Some(s), Some(l)) = (at(r_small), at(r_large)) {
                    rate_trends.push(RateTrend {
                        claim: c,
                        n_players: n,
                        r_small,
                        r_large,
                        smaller_at_small_r: within(&l.report, &s.report),
                    });
                }
            }
        }
    }

    Ok(SimulationReport {
        seed: sim.seed,
        theta_within_3_half_widths: equilibrium_run.theta_n.covers(ergodic.theta_star, 3.0),
        payoff_within_3_half_widths: equilibrium_run.payoff.covers(lambda, 3.0),
        stationary_control_rate: simulator::long_run_control_rate(d, x_e).ok(),
        ergodic,
        discounted,
        equilibrium_run,
        occupancy_ks,
        epsilon,
        size_trends,
        rate_trends,
    })
}

pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Outputs> {
    let report = simulate(cfg)?;
    let mut out = Outputs::default();
    out.json("report.json", &report)?;
    let law = TruncatedSpeedLaw::new(&cfg.diffusion()?, report.ergodic.x_star)?;
    let mut buf = Vec::new();
    report
        .equilibrium_run
        .occupancy
        .write_csv_to(&mut buf, Some(&law))?;
    out.insert("occupancy.csv", buf);
    out.insert("density.csv", density_csv(&law)?);
    let rows: Vec<Vec<String>> = report
        .epsilon
        .iter()
        .map(|e| {
            let rep = &e.report;
            vec![
                e.claim.to_string(),
                rep.n_players.to_string(),
                fmt_opt(e.r),
                fmt(rep.equilibrium_barrier),
                fmt(rep.epsilon),
                fmt(rep.epsilon_half_width),
                rep.below_noise_floor.to_string(),
                fmt_opt(rep.best_barrier),
                fmt(rep.theta_n.mean),
                fmt(rep.theta_n.half_width),
                fmt(rep.equilibrium_payoff.mean),
                fmt(rep.equilibrium_payoff.half_width),
                rep.moment_bound_ok.to_string(),
            ]
        })
        .collect();
    out.csv(
        "epsilon_table.csv",
        &[
            "claim",
            "n_players",
            "r",
            "equilibrium_barrier",
            "epsilon",
            "epsilon_half_width",
            "below_noise_floor",
            "best_barrier",
            "theta_n",
            "theta_n_half_width",
            "equilibrium_payoff",
            "equilibrium_payoff_half_width",
            "moment_bound_ok",
        ],
        &rows,
    )?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Validation {
    pub passed: bool,
    /// Largest relative error among the solver-against-closed-form rows.
    pub max_solver_relative_error: f64,
    pub checks: Vec<Check>,
}

struct Checks {
    rows: Vec<Check>,
    override_tol: Option<f64>,
}

impl Checks {
    fn push(&mut self, name: impl Into<String>, measured: f64, tolerance: f64) {
        let tolerance = self.override_tol.unwrap_or(tolerance);
        self.rows.push(Check {
            name: name.into(),
            measured,
            tolerance,
            passed: measured.is_finite() && measured <= tolerance,
        });
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn max_of(it: impl IntoIterator<Item = f64>) -> f64 {
    // NaN propagates so that a broken row cannot pass.
    it.into_iter().fold(0.0, |m, x| {
        if x.is_nan() || m.is_nan() {
            f64::NAN
        } else {
            m.max(x)
        }
    })
}

/// `φ̂'(b)/Ŝ'(b) - φ̂'(a)/Ŝ'(a) = ∫_a^b φ̂ (r - b') m̂' dy`, relative error.
fn integral_identity(d: &DiffusionModel, r: f64, opts: &FundamentalOptions) -> Result<f64> {
    let (a, b) = (0.3, 2.0);
    let phi = fundamental::solve_fundamental(d, r, Branch::Decreasing, Operator::Hatted, opts)?;
    let lhs =
        phi.eval_prime(b) / d.hat_scale_density(b)? - phi.eval_prime(a) / d.hat_scale_density(a)?;
    let rhs = quadrature::gauss_kronrod(
        |y| phi.eval(y) * (r - d.drift_prime(y)) * d.hat_speed_density(y).unwrap_or(f64::NAN),
        a,
        b,
        0.0,
        1e-12,
        400,
    )?
    .value;
    Ok(rel(lhs, rhs))
}

/// One-sided second differences at `x`, extrapolated to zero step.
fn one_sided_second(vf: &mfg_core::ValueFunction, x: f64, eps: f64, side: f64) -> Result<f64> {
    let d = |h: f64| -> Result<f64> {
        let h = side * h;
        Ok((vf.value(x + 2.0 * h)? - 2.0 * vf.value(x + h)? + vf.value(x)?) / (h * h))
    };
    Ok(2.0 * d(eps)? - d(2.0 * eps)?)
}

pub fn validate(cfg: &ExperimentConfig) -> Result<Validation> {
    let (delta, sigma) = match cfg.diffusion()?.gbm_params() {
        Some(p) if cfg.model.is_gbm() => p,
        _ => return Err(MfgError::Config("validate needs a gbm model".into())),
    };
    let beta = cfg.profit.beta();
    let v = &cfg.validate;
    let mut checks = Checks {
        rows: Vec::new(),
        override_tol: v.tolerance,
    };
    let solver = cfg.solver()?;
    let d = solver.diffusion().clone();
    let base = CaseStudyParams::new(delta, sigma, beta, v.rates.first().copied().unwrap_or(0.5))?;

    let e = solver.solve_ergodic()?;
    let ce = closed_form::ergodic_equilibrium(&base)?;
    let mut solver_rows = vec![
        (
            "solver_vs_closed_form/ergodic/x_star".to_string(),
            rel(e.x_star, ce.x_star),
        ),
        (
            "solver_vs_closed_form/ergodic/theta_star".to_string(),
            rel(e.theta_star, ce.theta_star),
        ),
        (
            "solver_vs_closed_form/ergodic/lambda_star".to_string(),
            rel(e.ergodic_value.unwrap_or(f64::NAN), ce.lambda_star),
        ),
    ];
    let discounted: Vec<(f64, EquilibriumSolution)> = v
        .rates
        .par_iter()
        .map(|&r| Ok((r, solver.solve_discounted(r)?)))
        .collect::<Result<_>>()?;
    for (r, sol) in &discounted {
        let c = closed_form::discounted_equilibrium(&base.with_r(*r))?;
        solver_rows.push((
            format!("solver_vs_closed_form/r={r}/x_star"),
            rel(sol.x_star, c.x_star),
        ));
        solver_rows.push((
            format!("solver_vs_closed_form/r={r}/theta_star"),
            rel(sol.theta_star, c.theta_star),
        ));
    }
    let max_solver_relative_error = max_of(solver_rows.iter().map(|r| r.1));
    for (name, err) in solver_rows {
        checks.push(name, err, 1e-6);
    }

    let ode = FundamentalOptions {
        method: MethodChoice::Ode,
        domain: Some((1e-3, 1e3)),
        ..Default::default()
    };
    let grid = log_grid(0.1, 10.0, 101);
    for &r in &v.rates {
        let mut worst = 0.0f64;
        for (branch, op) in [
            (Branch::Decreasing, Operator::Hatted),
            (Branch::Decreasing, Operator::Plain),
            (Branch::Increasing, Operator::Plain),
        ] {
            let exact = fundamental::solve_fundamental(&d, r, branch, op, &Default::default())?;
            let num = fundamental::solve_fundamental(&d, r, branch, op, &ode)?;
            worst = max_of([
                worst,
                max_of(grid.iter().map(|&x| rel(num.eval(x), exact.eval(x)))),
            ]);
        }
        checks.push(format!("ode_vs_closed_form/r={r}"), worst, 1e-7);
    }

    let (r_mc, y, a) = (0.5, 1.0, 0.5);
    let phi = fundamental::solve_fundamental(&d, r_mc, Branch::Decreasing, Operator::Hatted, &ode)?;
    let mc = fundamental::phi_hat_mc(
        &d,
        r_mc,
        y,
        a,
        &McOptions {
            paths: v.mc_paths,
            seed: cfg.sim.seed,
            ..Default::default()
        },
    )?;
    checks.push(
        format!("mc_vs_ode/r={r_mc}/standard_errors"),
        (mc.estimate - phi.eval(y) / phi.eval(a)).abs() / mc.std_error,
        3.0,
    );

    let id_grid = log_grid(0.01, 100.0, 50);
    let mut hat = 0.0f64;
    let mut plain = 0.0f64;
    for &x in &id_grid {
        let s = d.scale_density(x)?;
        hat = max_of([hat, (d.hat_speed_density(x)? * s - 2.0).abs()]);
        let vol = d.vol(x);
        plain = max_of([plain, (d.speed_density(x)? * s * vol * vol - 2.0).abs()]);
    }
    checks.push("identity/hat_speed_times_scale", hat, 1e-12);
    checks.push("identity/speed_times_scale_times_variance", plain, 1e-12);
    for r in [0.0, 0.5] {
        checks.push(
            format!("integral_identity/closed_form/r={r}"),
            integral_identity(&d, r, &Default::default())?,
            1e-6,
        );
        checks.push(
            format!("integral_identity/ode/r={r}"),
            integral_identity(&d, r, &ode)?,
            1e-6,
        );
    }

    let r = cfg.solver.r;
    let sol = solver.solve_discounted(r)?;
    let vf = solver.value_function(&sol)?;
    let x = sol.x_star;
    let lhs = r * vf.value(x)?;
    let rhs = d.drift(x) + solver.profit().pi(x, sol.theta_star);
    checks.push(
        format!("value/r={r}/boundary_identity"),
        rel(lhs, rhs),
        1e-6,
    );
    let jump = (one_sided_second(&vf, x, 1e-4, 1.0)? - one_sided_second(&vf, x, 1e-4, -1.0)?).abs();
    checks.push(format!("value/r={r}/second_derivative_jump"), jump, 1e-4);
    let res = log_grid(x * 1.001, 10.0 * x, 40)
        .into_iter()
        .map(|y| vf.hjb_residual(y))
        .collect::<Result<Vec<_>>>()?;
    checks.push(format!("value/r={r}/hjb_residual"), max_of(res), 1e-5);
    let slope = log_grid(x * 1.0001, 20.0 * x, 60)
        .into_iter()
        .map(|y| vf.derivative(y).map(|p| (-p).max(p - 1.0).max(0.0)))
        .collect::<Result<Vec<_>>>()?;
    checks.push(
        format!("value/r={r}/derivative_outside_unit_interval"),
        max_of(slope),
        1e-9,
    );

    Ok(Validation {
        passed: checks.rows.iter().all(|c| c.passed),
        max_solver_relative_error,
        checks: checks.rows,
    })
}

pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<Outputs> {
    let v = validate(cfg)?;
    let mut out = Outputs::default();
    out.json("validation.json", &v)?;
    if !v.passed {
        let failed: Vec<&str> = v
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        out.failure = Some(format!(
            "{} check(s) failed: {}",
            failed.len(),
            failed.join(", ")
        ));
    }
    Ok(out)
}
