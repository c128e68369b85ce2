use mfg_core::closed_form::{self, CaseStudyParams};
use mfg_core::diffusion::log_grid;
use mfg_core::{
    DiffusionModel, EquilibriumSolver, MethodChoice, Mode, ProfitModel, SolverConfig,
    TabulatedCoefficients,
};

fn gbm_solver(config: SolverConfig) -> EquilibriumSolver {
    EquilibriumSolver::new(
        DiffusionModel::gbm(2.0, 1.0).unwrap(),
        ProfitModel::isoelastic(0.6).unwrap(),
        config,
    )
    .unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

#[test]
fn closed_form_closure_across_rates() {
    let s = gbm_solver(SolverConfig::default());
    for r in [0.05, 0.25, 0.5, 1.0] {
        let sol = s.solve_discounted(r).unwrap();
        let cf =
            closed_form::discounted_equilibrium(&CaseStudyParams::default().with_r(r)).unwrap();
        assert!(
            rel(sol.x_star, cf.x_star) < 1e-6,
            "r={r}: {} vs {}",
            sol.x_star,
            cf.x_star
        );
        assert!(rel(sol.theta_star, cf.theta_star) < 1e-6, "r={r}");
        assert!(sol.x_star < sol.x_hat);
        let f = |x: f64| x.powf(0.6);
        assert!(f(sol.x_star) < s.profit().outer_inv(sol.theta_star));
    }
}

#[test]
fn ode_path_reproduces_closed_form() {
    let s = gbm_solver(SolverConfig {
        method: MethodChoice::Ode,
        ..Default::default()
    });
    let sol = s.solve_discounted(0.5).unwrap();
    let cf = closed_form::discounted_equilibrium(&CaseStudyParams::default()).unwrap();
    assert!(
        rel(sol.x_star, cf.x_star) < 1e-6,
        "{} vs {}",
        sol.x_star,
        cf.x_star
    );
    assert!(rel(sol.theta_star, cf.theta_star) < 1e-6);
    let sol = s.solve_ergodic().unwrap();
    let cf = closed_form::ergodic_equilibrium(&CaseStudyParams::default()).unwrap();
    assert!(rel(sol.x_star, cf.x_star) < 1e-6);
    assert!(rel(sol.ergodic_value.unwrap(), cf.lambda_star) < 1e-6);
}

#[test]
fn anchor_and_normalization_invariance() {
    let base = gbm_solver(SolverConfig::default())
        .solve_discounted(0.5)
        .unwrap();
    let moved = EquilibriumSolver::new(
        DiffusionModel::gbm(2.0, 1.0)
            .unwrap()
            .with_anchor(3.7)
            .unwrap(),
        ProfitModel::isoelastic(0.6).unwrap(),
        SolverConfig::default(),
    )
    .unwrap()
    .solve_discounted(0.5)
    .unwrap();
    let renormalized = gbm_solver(SolverConfig {
        normalization_point: Some(0.2),
        ..Default::default()
    })
    .solve_discounted(0.5)
    .unwrap();
    for other in [&moved, &renormalized] {
        assert!(rel(other.x_star, base.x_star) < 1e-8);
        assert!(rel(other.theta_star, base.theta_star) < 1e-8);
    }
}

#[test]
fn ergodic_is_the_small_rate_limit() {
    let s = gbm_solver(SolverConfig::default());
    let e = s.solve_ergodic().unwrap();
    let d = s.solve_discounted(1e-4).unwrap();
    assert!(rel(d.x_star, e.x_star) < 1e-3);
    assert!(rel(d.theta_star, e.theta_star) < 1e-3);
}

#[test]
fn q_has_a_single_sign_change() {
    let s = gbm_solver(SolverConfig::default());
    for mode in [Mode::Ergodic, Mode::Discounted { r: 0.5 }] {
        let ctx = s.context(mode).unwrap();
        let mut it = 0;
        let lo = ctx.theta_hat(&mut it).unwrap();
        let hi = 4.0 * lo;
        let signs: Vec<bool> = (0..200)
            .map(|i| lo + (hi - lo) * i as f64 / 199.0)
            .map(|t| ctx.q_hat(t).unwrap().0 > 0.0)
            .collect();
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(changes, 1, "{mode:?}");
    }
}

#[test]
fn newton_refinement_keeps_the_solution() {
    let plain = gbm_solver(SolverConfig::default()).solve_ergodic().unwrap();
    let refined = gbm_solver(SolverConfig {
        newton_refine: true,
        ..Default::default()
    })
    .solve_ergodic()
    .unwrap();
    assert!(rel(refined.x_star, plain.x_star) < 1e-8);
    assert!(refined.diagnostics.k_residual.abs() <= plain.diagnostics.k_residual.abs() + 1e-12);
}

#[test]
fn affine_model_equilibrium_is_consistent() {
    let d = DiffusionModel::affine(1.0, 0.3, 1.0).unwrap();
    let s = EquilibriumSolver::new(
        d,
        ProfitModel::isoelastic(0.6).unwrap(),
        SolverConfig::default(),
    )
    .unwrap();
    for mode in [Mode::Ergodic, Mode::Discounted { r: 0.3 }] {
        let sol = s.solve(mode).unwrap();
        assert!(
            sol.x_star > 0.0 && sol.x_star < sol.x_hat,
            "{mode:?}: {sol:?}"
        );
        assert!(
            sol.diagnostics.k_residual.abs() < 1e-8,
            "{:?}",
            sol.diagnostics
        );
        assert!(
            sol.diagnostics.q_residual.abs() < 1e-8,
            "{:?}",
            sol.diagnostics
        );
    }
    let e = s.solve_ergodic().unwrap();
    let d = s.solve_discounted(0.3).unwrap();
    assert!(d.x_star < e.x_star);
}

#[test]
fn affine_without_interior_barrier_is_an_assumption_violation() {
    // 0 is an entrance boundary here, so K stays bounded near 0 and the
    // barrier can collapse onto the lower end of the grid.
    let d = DiffusionModel::affine(1.5, 0.8, 0.7).unwrap();
    let s = EquilibriumSolver::new(
        d,
        ProfitModel::isoelastic(0.5).unwrap(),
        SolverConfig::default(),
    )
    .unwrap();
    let err = s.solve_discounted(0.3).unwrap_err();
    assert!(
        matches!(err, mfg_core::MfgError::AssumptionViolation(_)),
        "{err}"
    );
}

#[test]
fn tabulated_gbm_matches_closed_form() {
    let gbm = DiffusionModel::gbm(2.0, 1.0).unwrap();
    let table = TabulatedCoefficients::sample(&gbm, &log_grid(1e-3, 1e3, 600)).unwrap();
    let s = EquilibriumSolver::new(
        DiffusionModel::custom(table),
        ProfitModel::isoelastic(0.6).unwrap(),
        SolverConfig::default(),
    )
    .unwrap();
    let sol = s.solve_ergodic().unwrap();
    let cf = closed_form::ergodic_equilibrium(&CaseStudyParams::default()).unwrap();
    assert!(
        rel(sol.x_star, cf.x_star) < 1e-4,
        "{} vs {}",
        sol.x_star,
        cf.x_star
    );
    assert!(rel(sol.theta_star, cf.theta_star) < 1e-4);
}

#[test]
fn zero_rate_is_not_a_discounted_problem() {
    let s = gbm_solver(SolverConfig::default());
    assert!(s.solve_discounted(0.0).unwrap_err().is_config());
}
