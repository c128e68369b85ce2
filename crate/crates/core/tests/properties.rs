use mfg_core::closed_form::{self, exponents, CaseStudyParams};
use mfg_core::fundamental;
use mfg_core::simulator::Histogram;
use mfg_core::{
    Branch, DiffusionModel, EquilibriumSolver, Operator, ProfitModel, SolverConfig,
    TruncatedSpeedLaw,
};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = CaseStudyParams> {
    (0.5f64..3.0, 0.3f64..1.5, 0.1f64..0.9, 0.02f64..2.0)
        .prop_map(|(delta, sigma, beta, r)| CaseStudyParams::new(delta, sigma, beta, r).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_barrier_below_x_hat(p in params()) {
        let c = closed_form::discounted_equilibrium(&p).unwrap();
        let x_hat = (p.beta * c.rho_star / (p.r + p.delta)).powf(1.0 / (1.0 - p.beta));
        prop_assert!(c.x_star > 0.0 && c.x_star < x_hat);
        let e = closed_form::ergodic_equilibrium(&p).unwrap();
        let x_hat_e = (p.beta * e.rho_star / p.delta).powf(1.0 / (1.0 - p.beta));
        prop_assert!(e.x_star < x_hat_e);
    }

    #[test]
    fn wronskian_of_powers(p in params(), x in 0.05f64..20.0) {
        let d = DiffusionModel::gbm(p.delta, p.sigma).unwrap();
        let phi = fundamental::solve_fundamental(&d, p.r, Branch::Decreasing, Operator::Plain, &Default::default()).unwrap();
        let psi = fundamental::solve_fundamental(&d, p.r, Branch::Increasing, Operator::Plain, &Default::default()).unwrap();
        let (m, n) = exponents(&p);
        let w = fundamental::wronskian(&psi, &phi, x).unwrap();
        prop_assert!((w / (n - m) - 1.0).abs() < 1e-10);
        prop_assert!(phi.eval_prime(x) < 0.0 && psi.eval_prime(x) > 0.0);
    }

    #[test]
    fn stationary_quantile_inverts_cdf(z in 0.05f64..5.0, u in 0.0f64..0.999) {
        let law = TruncatedSpeedLaw::new(&DiffusionModel::gbm(2.0, 1.0).unwrap(), z).unwrap();
        let q = law.quantile(u);
        prop_assert!(q >= z);
        prop_assert!((law.cdf(q).unwrap() - u).abs() < 1e-12);
    }

    #[test]
    fn x_hat_decreases_in_theta(t1 in 0.1f64..3.0, dt in 0.01f64..2.0, r in 0.0f64..1.0) {
        let d = DiffusionModel::gbm(2.0, 1.0).unwrap();
        let p = ProfitModel::isoelastic(0.6).unwrap();
        prop_assert!(p.x_hat(&d, t1 + dt, r).unwrap() < p.x_hat(&d, t1, r).unwrap());
    }

    #[test]
    fn histogram_normalizes(xs in proptest::collection::vec(0.01f64..1e3, 1..200)) {
        let mut h = Histogram::new(0.1, 100.0, 50);
        for x in &xs {
            h.add(*x, 1.0);
        }
        h.normalize();
        prop_assert!((h.total() - 1.0).abs() < 1e-12);
        let cdf = h.cdf_at_edges();
        prop_assert!(cdf.windows(2).all(|w| w[1] >= w[0]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn solver_agrees_with_closed_form(p in params()) {
        let s = EquilibriumSolver::new(
            DiffusionModel::gbm(p.delta, p.sigma).unwrap(),
            ProfitModel::isoelastic(p.beta).unwrap(),
            SolverConfig::default(),
        ).unwrap();
        let sol = s.solve_discounted(p.r).unwrap();
        let c = closed_form::discounted_equilibrium(&p).unwrap();
        prop_assert!((sol.x_star / c.x_star - 1.0).abs() < 1e-6, "{:?}: {} vs {}", p, sol.x_star, c.x_star);
        prop_assert!((sol.theta_star / c.theta_star - 1.0).abs() < 1e-6);
    }
}
