use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volterra_core::hypothesis::coercivity_bound;
use volterra_core::*;

fn builtins() -> Vec<(KernelSpec, Grid)> {
    let unit = Grid::new(0.0, 1.0, 100).unwrap();
    vec![
        (zero_kernel(), unit),
        (linear_kernel(0.5), unit),
        (example1_kernel(1.0), unit),
        (
            example2_linw_atan(0.9).unwrap(),
            Grid::new(0.0, 0.9, 100).unwrap(),
        ),
    ]
}

fn random_fn(rng: &mut ChaCha8Rng, g: Grid, norm: f64) -> GridFunction {
    let c: Vec<f64> = (0..6)
        .map(|m| rng.gen_range(-1.0..1.0) / (m + 1) as f64)
        .collect();
    let (a, len) = (g.alpha(), g.length());
    let x = GridFunction::from_scalar_fn(g, |t| {
        let s = (t - a) / len;
        c.iter()
            .enumerate()
            .map(|(m, cm)| cm * ((m as f64 + 0.5) * std::f64::consts::PI * s).sin())
            .sum()
    })
    .unwrap();
    let n = x.ac_norm();
    x.scale(norm / n)
}

#[test]
fn newton_recovers_manufactured_solutions() {
    let tol = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (k, g) in builtins() {
        for _ in 0..20 {
            let norm = rng.gen_range(0.1..5.0);
            let xs = random_fn(&mut rng, g, norm);
            let y = apply_v(&k, &xs).unwrap();
            let (x, report) = solve_newton(&k, &y, None, tol, 50).unwrap();
            assert!(report.converged, "{}", k.name());
            // round trip as reported
            let back = apply_v(&k, &x).unwrap().ac_distance(&y).unwrap();
            assert!(back <= tol);
            assert!((back - report.final_residual()).abs() < 1e-15);
            let rel = x.ac_distance(&xs).unwrap() / xs.ac_norm();
            assert!(rel <= (10.0 * tol).max(1e-6), "{} rel {rel}", k.name());
            for w in report.residual_history.windows(2) {
                assert!(w[1] < w[0]);
            }
            for w in report.functional_history.windows(2) {
                assert!(w[1] < w[0]);
            }
        }
    }
}

#[test]
fn gradient_recovers_example2_solution() {
    let g = Grid::new(0.0, 0.9, 200).unwrap();
    let k = example2_linw_atan(0.9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..3 {
        let xs = random_fn(&mut rng, g, 2.0);
        let y = apply_v(&k, &xs).unwrap();
        let (x, report) = solve_gradient(&k, &y, None, 1e-9, 500).unwrap();
        assert!(report.converged);
        assert!(report.functional_history.last().unwrap() <= &1e-18);
        assert!(x.ac_distance(&xs).unwrap() <= 1e-4 * xs.ac_norm());
    }
}

#[test]
fn newton_and_gradient_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (k, g) in builtins() {
        let y = random_fn(&mut rng, g, 1.5);
        let (xn, rn) = solve_newton(&k, &y, None, 1e-11, 50).unwrap();
        let (xg, rg) = solve_gradient(&k, &y, None, 1e-9, 500).unwrap();
        assert!(rn.converged && rg.converged, "{}", k.name());
        assert!(xn.ac_distance(&xg).unwrap() < 1e-4, "{}", k.name());
    }
}

#[test]
fn coercivity_lower_bound_holds() {
    let g = Grid::new(0.0, 1.0, 200).unwrap();
    let zero = GridFunction::zero(g, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for k in [linear_kernel(0.5), example1_kernel(1.0)] {
        let bound = coercivity_bound(&k, &g).unwrap();
        assert!(bound.c_tilde < 0.5);
        for _ in 0..100 {
            let norm = 10f64.powf(rng.gen_range(-2.0..3.0));
            let x = random_fn(&mut rng, g, norm);
            let f0 = functional_f(&k, &x, &zero).unwrap();
            let lower = bound.lower_bound(norm) - 1e-3 * (1.0 + norm * norm);
            assert!(f0 >= lower, "{} norm {norm}: {f0} < {lower}", k.name());
        }
    }
}

#[test]
fn sensitivity_matches_finite_differences_for_builtins() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for (k, g) in builtins() {
        let a = random_fn(&mut rng, g, 1.0);
        let h = random_fn(&mut rng, g, 1.0);
        let d2 = fd_sensitivity_check(&k, &a, &h, 1e-2).unwrap();
        let d3 = fd_sensitivity_check(&k, &a, &h, 1e-3).unwrap();
        assert!(d3 <= 1e-3, "{}: {d3}", k.name());
        assert!(d3 < d2 || d3 < 1e-6, "{}: {d2} -> {d3}", k.name());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linearization_remainder_is_superlinear(seed in any::<u64>(), kidx in 0usize..4) {
        let (k, g) = builtins().swap_remove(kidx);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = rng.gen_range(0.1..3.0);
        let x0 = random_fn(&mut rng, g, norm);
        let h = random_fn(&mut rng, g, 1.0);
        let eps = 1e-3;
        let step = h.scale(eps);
        let lhs = apply_v(&k, &x0.add(&step).unwrap()).unwrap();
        let rhs = apply_v(&k, &x0).unwrap().add(&frechet_apply(&k, &x0, &step).unwrap()).unwrap();
        // ‖V(x₀+εh) − V(x₀) − εV′(x₀)h‖ / ε with ‖h‖ = 1
        let ratio = lhs.ac_distance(&rhs).unwrap() / eps;
        prop_assert!(ratio <= 1e-2);
    }

    #[test]
    fn neumann_and_collocation_agree(seed in any::<u64>(), kidx in 0usize..4) {
        let (k, g) = builtins().swap_remove(kidx);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = rng.gen_range(0.1..3.0);
        let x0 = random_fn(&mut rng, g, norm);
        let rhs = random_fn(&mut rng, g, 1.0);
        let (h, report) = neumann_solve(&k, &x0, &rhs, 1e-12, 500).unwrap();
        prop_assert!(report.converged);
        prop_assert!(report.residual_ac <= 1e-12);
        let c = collocation_solve(&k, &x0, &rhs).unwrap();
        prop_assert!(c.ac_distance(&h).unwrap() <= 1e-8);
    }
}
