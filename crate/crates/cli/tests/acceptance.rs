//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::time::{Duration, Instant};

use mfg_cli::commands::{self, SensitivityRow};
use mfg_cli::config::{ExperimentConfig, SensitivityParam};
use mfg_core::closed_form::{self, CaseStudyParams};
use mfg_core::diffusion::log_grid;
use mfg_core::fundamental::{self, FundamentalOptions, McOptions};
use mfg_core::simulator::{self, InitialLaw};
use mfg_core::{
    quadrature, Branch, DiffusionModel, EquilibriumSolver, MethodChoice, Operator, ProfitModel,
    Result, SimConfig, SolverConfig, TruncatedSpeedLaw, ValueFunction,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn gbm() -> DiffusionModel {
    DiffusionModel::gbm(2.0, 1.0).unwrap()
}

fn default_solver() -> EquilibriumSolver {
    EquilibriumSolver::new(
        gbm(),
        ProfitModel::isoelastic(0.6).unwrap(),
        SolverConfig::default(),
    )
    .unwrap()
}

fn oracle_closure() -> Result<Outcome> {
    let s = default_solver();
    let base = CaseStudyParams::default();
    let mut worst = 0.0f64;
    let mut slowest = Duration::ZERO;
    let t = Instant::now();
    let e = s.solve_ergodic()?;
    slowest = slowest.max(t.elapsed());
    let ce = closed_form::ergodic_equilibrium(&base)?;
    worst = worst
        .max(rel(e.x_star, ce.x_star))
        .max(rel(e.theta_star, ce.theta_star));
    for r in [0.05, 0.25, 0.5, 1.0] {
        let t = Instant::now();
        let d = s.solve_discounted(r)?;
        slowest = slowest.max(t.elapsed());
        let c = closed_form::discounted_equilibrium(&base.with_r(r))?;
        worst = worst
            .max(rel(d.x_star, c.x_star))
            .max(rel(d.theta_star, c.theta_star));
    }
    outcome(
        worst <= 1e-6 && slowest < Duration::from_secs(10),
        format!(
            "max relative error {worst:.2e}, slowest solve {:.3} s",
            slowest.as_secs_f64()
        ),
    )
}

fn abelian_limit() -> Result<Outcome> {
    let cfg = ExperimentConfig::default();
    let rows = commands::abelian_sweep(&cfg)?;
    let e = default_solver().solve_ergodic()?;
    let gx: Vec<f64> = rows.iter().map(|r| (r.x_star_r - e.x_star).abs()).collect();
    let gt: Vec<f64> = rows
        .iter()
        .map(|r| (r.theta_star_r - e.theta_star).abs())
        .collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let last = rows.last().unwrap();
    let value_gap = (last.r_v - last.lambda_star_e).abs();
    outcome(
        decreasing(&gx) && decreasing(&gt) && value_gap < 1e-2,
        format!(
            "|x*_r - x*_e| from {:.3e} to {:.3e}, |r v - λ*| = {value_gap:.3e} at r = {}",
            gx[0],
            gx[gx.len() - 1],
            last.r
        ),
    )
}

fn one_sided_second(vf: &ValueFunction, x: f64, eps: f64, side: f64) -> Result<f64> {
    let d = |h: f64| -> Result<f64> {
        let h = side * h;
        Ok((vf.value(x + 2.0 * h)? - 2.0 * vf.value(x + h)? + vf.value(x)?) / (h * h))
    };
    Ok(2.0 * d(eps)? - d(2.0 * eps)?)
}

fn hjb_suite() -> Result<Outcome> {
    let s = default_solver();
    let r = 0.5;
    let sol = s.solve_discounted(r)?;
    let vf = s.value_function(&sol)?;
    let x = sol.x_star;
    let mut slope_ok = true;
    for &y in &log_grid(x * 1e-2, 20.0 * x, 200) {
        let p = vf.derivative(y)?;
        slope_ok &= (-1e-9..=1.0 + 1e-9).contains(&p);
    }
    let jump = (one_sided_second(&vf, x, 1e-4, 1.0)? - one_sided_second(&vf, x, 1e-4, -1.0)?).abs();
    let mut residual = 0.0f64;
    for &y in &log_grid(x * 1.001, 10.0 * x, 60) {
        residual = residual.max(vf.hjb_residual(y)?);
    }
    let boundary = rel(
        r * vf.value(x)?,
        gbm().drift(x) + s.profit().pi(x, sol.theta_star),
    );
    outcome(
        slope_ok && jump < 1e-4 && residual < 1e-5 && boundary < 1e-6,
        format!("v' in [0,1]: {slope_ok}, C² jump {jump:.2e}, PDE residual {residual:.2e}, boundary identity {boundary:.2e}"),
    )
}

fn fundamental_checks() -> Result<Outcome> {
    let d = gbm();
    let ode = FundamentalOptions {
        method: MethodChoice::Ode,
        domain: Some((1e-3, 1e3)),
        ..Default::default()
    };
    let mut shoot = 0.0f64;
    for r in [0.05, 0.5, 1.0] {
        let exact = fundamental::solve_fundamental(
            &d,
            r,
            Branch::Decreasing,
            Operator::Hatted,
            &Default::default(),
        )?;
        let num =
            fundamental::solve_fundamental(&d, r, Branch::Decreasing, Operator::Hatted, &ode)?;
        for &x in &log_grid(0.1, 10.0, 201) {
            shoot = shoot.max(rel(num.eval(x), exact.eval(x)));
        }
    }
    let (r, y, a) = (0.5, 1.0, 0.5);
    let phi = fundamental::solve_fundamental(&d, r, Branch::Decreasing, Operator::Hatted, &ode)?;
    let mc = fundamental::phi_hat_mc(
        &d,
        r,
        y,
        a,
        &McOptions {
            paths: 100_000,
            ..Default::default()
        },
    )?;
    let z_score = (mc.estimate - phi.eval(y) / phi.eval(a)).abs() / mc.std_error;
    let (lo, hi) = (0.3, 2.0);
    let lhs = phi.eval_prime(hi) / d.hat_scale_density(hi)?
        - phi.eval_prime(lo) / d.hat_scale_density(lo)?;
    let rhs = quadrature::gauss_kronrod(
        |x| phi.eval(x) * (r - d.drift_prime(x)) * d.hat_speed_density(x).unwrap_or(f64::NAN),
        lo,
        hi,
        0.0,
        1e-12,
        400,
    )?
    .value;
    let identity = rel(lhs, rhs);
    outcome(
        shoot <= 1e-7 && z_score < 3.0 && identity < 1e-6,
        format!("ODE vs closed form {shoot:.2e}, MC {z_score:.2} standard errors, integral identity {identity:.2e}"),
    )
}

fn stationary_law() -> Result<Outcome> {
    let z = closed_form::ergodic_equilibrium(&CaseStudyParams::default())?.x_star;
    let cfg = SimConfig {
        dt: 1e-3,
        horizon: 2000.0,
        burn_in: 100.0,
        ..Default::default()
    };
    let t = Instant::now();
    let e = simulator::reflected_ensemble(&gbm(), z, &cfg)?;
    let elapsed = t.elapsed();
    let law = TruncatedSpeedLaw::new(&gbm(), z)?;
    let ks = e.occupancy.ks_distance(|x| law.cdf(x))?;
    outcome(
        ks < 0.02 && elapsed < Duration::from_secs(120),
        format!("KS distance {ks:.4}, run {:.1} s", elapsed.as_secs_f64()),
    )
}

fn epsilon_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.sim.n_players = 50;
    cfg.sim.dt = 1e-2;
    cfg.sim.horizon = 100.0;
    cfg.sim.burn_in = 5.0;
    cfg.sim.n_paths = 200;
    cfg.sim.initial = InitialLaw::Stationary;
    cfg.sim.n_list = vec![2, 5, 20, 50];
    cfg.sim.claims = vec![1, 2];
    cfg.sim.r_list = vec![0.5, 0.05];
    cfg
}

fn epsilon_trends() -> Result<Outcome> {
    let rep = commands::simulate(&epsilon_config())?;
    let claim1 = rep
        .size_trends
        .iter()
        .find(|t| t.claim == 1)
        .map(|t| t.nonincreasing)
        .unwrap_or(false);
    let claim2 = rep
        .rate_trends
        .iter()
        .find(|t| t.claim == 2 && t.n_players == 50)
        .map(|t| t.smaller_at_small_r)
        .unwrap_or(false);
    let eps = |c: u8, r: Option<f64>| -> Vec<String> {
        rep.epsilon
            .iter()
            .filter(|e| e.claim == c && e.r == r)
            .map(|e| format!("{:.4}±{:.4}", e.report.epsilon, e.report.epsilon_half_width))
            .collect()
    };
    outcome(
        claim1 && claim2 && rep.theta_within_3_half_widths && rep.payoff_within_3_half_widths,
        format!(
            "claim 1 ε̂_N [{}] nonincreasing: {claim1}; claim 2 at N = 50 r=0.5 {} vs r=0.05 {} smaller: {claim2}; θ^N {:.4}±{:.4} vs θ* {:.4}; G {:.4}±{:.4} vs λ* {:.4}",
            eps(1, None).join(", "),
            eps(2, Some(0.5)).last().cloned().unwrap_or_default(),
            eps(2, Some(0.05)).last().cloned().unwrap_or_default(),
            rep.equilibrium_run.theta_n.mean,
            rep.equilibrium_run.theta_n.half_width,
            rep.ergodic.theta_star,
            rep.equilibrium_run.payoff.mean,
            rep.equilibrium_run.payoff.half_width,
            rep.ergodic.ergodic_value.unwrap_or(f64::NAN),
        ),
    )
}

fn sensitivity_signs() -> Result<Outcome> {
    // (param, range, sign of dx*/dp, sign of dρ*/dp)
    let cases = [
        (SensitivityParam::Sigma, (0.5, 1.9), -1.0, 1.0),
        (SensitivityParam::Delta, (1.0, 3.0), -1.0, 1.0),
        (SensitivityParam::Beta, (0.2, 0.9), 1.0, -1.0),
    ];
    let mut failures = Vec::new();
    for (param, range, sx, srho) in cases {
        let mut cfg = ExperimentConfig::default();
        cfg.sensitivity.param = param;
        cfg.sensitivity.range = range;
        cfg.sensitivity.n_points = 20;
        cfg.validate()?;
        let rows = commands::sensitivity(&cfg)?;
        let signed = |f: &dyn Fn(&SensitivityRow) -> f64, s: f64| {
            rows.windows(2).all(|w| s * (f(&w[1]) - f(&w[0])) > 0.0)
        };
        let checks = [
            ("x*_e", signed(&|r| r.x_star_e, sx)),
            ("x*_r", signed(&|r| r.x_star_r, sx)),
            ("ρ*_e", signed(&|r| r.rho_star_e.unwrap_or(f64::NAN), srho)),
            ("ρ*_r", signed(&|r| r.rho_star_r.unwrap_or(f64::NAN), srho)),
        ];
        for (name, ok) in checks {
            if !ok {
                failures.push(format!("{name} in {}", param.name()));
            }
        }
    }
    let detail = if failures.is_empty() {
        "all six sign patterns hold in both columns".to_string()
    } else {
        format!("wrong sign: {}", failures.join(", "))
    };
    outcome(failures.is_empty(), detail)
}

fn determinism() -> Result<Outcome> {
    let mut cfg = epsilon_config();
    cfg.sim.n_players = 10;
    cfg.sim.horizon = 20.0;
    cfg.sim.burn_in = 1.0;
    cfg.sim.n_paths = 16;
    cfg.sim.n_list = vec![2, 5];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = pool.install(|| mfg_cli::cmd_simulate(&cfg))?;
    let b = pool.install(|| mfg_cli::cmd_simulate(&cfg))?;
    let dir = tempfile::tempdir()?;
    a.write_to(&dir.path().join("a"))?;
    b.write_to(&dir.path().join("b"))?;
    let mut same = a == b;
    let mut files = 0;
    for name in a.names() {
        files += 1;
        same &= std::fs::read(dir.path().join("a").join(name))?
            == std::fs::read(dir.path().join("b").join(name))?;
    }
    outcome(
        same && files > 0,
        format!("{files} files compared byte for byte"),
    )
}

type Criterion = fn() -> Result<Outcome>;

fn main() {
    let criteria: [(&str, Criterion); 8] = [
        ("oracle closure", oracle_closure),
        ("Abelian limit", abelian_limit),
        ("HJB and smooth fit", hjb_suite),
        ("fundamental solution cross-checks", fundamental_checks),
        ("stationary law", stationary_law),
        ("ε-Nash trends", epsilon_trends),
        ("sensitivity signs", sensitivity_signs),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (passed, detail) = match f() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {} {:<34} {} ({:.1} s) {detail}",
            i + 1,
            name,
            if passed { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
