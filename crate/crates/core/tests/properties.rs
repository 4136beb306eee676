//! Invariants checked over randomized inputs.

mod support;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::Gen;
use varcoef_hazard::baseline::{breslow_with_risk, FittedRisk};
use varcoef_hazard::inference::{infer_fit, residual_increments_with_risk};
use varcoef_hazard::multi::optimal_weights;
use varcoef_hazard::*;

fn gen_strategy(n: std::ops::Range<usize>) -> impl Strategy<Value = Gen> {
    (n, 1usize..=3, 1usize..=2, prop::bool::ANY, prop::bool::ANY).prop_map(|(n, members, p, ties, absent)| Gen {
        n,
        members,
        p,
        tie_grid: if ties { 0.2 } else { 0.0 },
        absent_prob: if absent { 0.3 } else { 0.0 },
        ..Gen::default()
    })
}

fn design(v: f64, h: f64) -> LocalDesign<f64> {
    Smoothing::gaussian(h).unwrap().with_min_effective_events(0.0).at(v)
}

fn zeta_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 5)
}

fn loglik_at(ds: &Dataset64, d: &LocalDesign64, zeta: &[f64]) -> f64 {
    let xi = LocalParams::from_rescaled(ds.p(), d.h(), zeta).unwrap();
    local_loglik(ds, d, &xi).unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_and_hessian_match_finite_differences(
        seed in any::<u64>(), gen in gen_strategy(4..12), z in zeta_strategy(),
        v in 0.2f64..0.8, h in 0.2f64..0.6,
    ) {
        let ds = support::random_dataset(seed, gen);
        let d = design(v, h);
        let zeta = &z[..2 * ds.p() + 1];
        let xi = LocalParams::from_rescaled(ds.p(), h, zeta).unwrap();
        let g = local_score(&ds, &d, &xi).unwrap();
        let fd = support::fd_gradient(|x| loglik_at(&ds, &d, x), zeta, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            prop_assert!(close(*a, *b, 1e-6), "score {a} vs {b}");
        }
        let hs = local_hessian(&ds, &d, &xi).unwrap();
        for a in 0..zeta.len() {
            let col = support::fd_gradient(
                |x| {
                    let xi = LocalParams::from_rescaled(ds.p(), h, x).unwrap();
                    local_score(&ds, &d, &xi).unwrap()[a]
                },
                zeta,
                1e-5,
            );
            for (b, fdv) in col.iter().enumerate() {
                prop_assert!(close(hs[(a, b)], *fdv, 1e-5), "hessian ({a},{b}) {} vs {fdv}", hs[(a, b)]);
            }
        }
        let eig = hs.symmetric_eigenvalues();
        prop_assert!(eig[eig.len() - 1] <= 1e-12 * (1.0 + eig[0].abs()));
    }

    #[test]
    fn loglik_is_concave_along_segments(
        seed in any::<u64>(), gen in gen_strategy(4..12),
        a in zeta_strategy(), b in zeta_strategy(), t in 0.0f64..1.0,
    ) {
        let ds = support::random_dataset(seed, gen);
        let d = design(0.5, 0.4);
        let m = 2 * ds.p() + 1;
        let (a, b) = (&a[..m], &b[..m]);
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let lhs = loglik_at(&ds, &d, &mid);
        let rhs = t * loglik_at(&ds, &d, a) + (1.0 - t) * loglik_at(&ds, &d, b);
        prop_assert!(lhs >= rhs - 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn residuals_sum_to_zero_at_each_event_time(
        seed in any::<u64>(), gen in gen_strategy(3..15), c0 in -1.0f64..1.0, c1 in -1.0f64..1.0,
    ) {
        let ds = support::random_dataset(seed, gen);
        let risk = FittedRisk::from_fn(&ds, |r| Ok(c0 * r.z[0] + c1 * r.v)).unwrap();
        let bases = breslow_all(&ds, &risk);
        let res = residual_increments_with_risk(&ds, &risk, &bases).unwrap();
        for m in &res {
            for k in 0..m.times.len() {
                let s: f64 = m.increments.iter().map(|row| row[k]).sum();
                prop_assert!(s.abs() < 1e-12, "member {} time {}: {s}", m.member, m.times[k]);
            }
        }
    }

    #[test]
    fn trapezoid_is_exact_for_linear_derivatives(
        mut pts in prop::collection::vec(-3.0f64..3.0, 2..40), a in -2.0f64..2.0, b in -2.0f64..2.0,
        anchor_frac in 0.0f64..1.0,
    ) {
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        prop_assume!(pts.len() >= 2);
        let anchor = ((pts.len() - 1) as f64 * anchor_frac) as usize;
        let gp: Vec<Option<f64>> = pts.iter().map(|w| Some(a + b * w)).collect();
        let g = integrate_gprime(&pts, &gp, anchor, false).unwrap();
        let w0 = pts[anchor];
        for (w, x) in pts.iter().zip(&g) {
            let want = a * (w - w0) + 0.5 * b * (w * w - w0 * w0);
            prop_assert!((x.unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_weights_minimize_variance_and_commute_with_permutation(
        entries in prop::collection::vec(-1.0f64..1.0, 16), m in 2usize..=4, seed in any::<u64>(),
    ) {
        let a = Matrix::from_row_major(m, m, entries[..m * m].to_vec());
        let mut sigma = a.matmul(&a.transpose());
        for i in 0..m {
            sigma[(i, i)] += 0.05;
        }
        let w = optimal_weights(&sigma).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = sigma.quad_form(&w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let raw: Vec<f64> = (0..m).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            if s.abs() < 1e-3 {
                continue;
            }
            let c: Vec<f64> = raw.iter().map(|x| x / s).collect();
            prop_assert!(best <= sigma.quad_form(&c) * (1.0 + 1e-10));
        }
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let mut ps = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                ps[(i, j)] = sigma[(perm[i], perm[j])];
            }
        }
        let pw = optimal_weights(&ps).unwrap();
        for i in 0..m {
            prop_assert!((pw[i] - w[perm[i]]).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fits_do_not_depend_on_record_order(seed in any::<u64>(), gen in gen_strategy(25..45)) {
        let ds = support::random_dataset(seed, gen);
        let d = design(0.5, 0.4);
        let opts = FitOptions::default();
        let fit = maximize_local(&ds, &d, &LocalParams::zeros(ds.p()), &opts);
        prop_assume!(fit.as_ref().is_ok_and(|f| f.converged));
        let fit = fit.unwrap();
        let mut recs: Vec<SubjectRecord64> = ds.present_records().cloned().collect();
        recs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        let shuffled = Dataset::from_records(recs, Some(ds.tau())).unwrap();
        let again = maximize_local(&shuffled, &d, &LocalParams::zeros(ds.p()), &opts).unwrap();
        prop_assert_eq!(&fit.xi_hat, &again.xi_hat);
    }

    #[test]
    fn sandwich_is_symmetric_psd(seed in any::<u64>(), gen in gen_strategy(25..45)) {
        let ds = support::random_dataset(seed, gen);
        let d = design(0.5, 0.4);
        let fit = maximize_local(&ds, &d, &LocalParams::zeros(ds.p()), &FitOptions::default());
        prop_assume!(fit.as_ref().is_ok_and(|f| f.converged));
        let fit = fit.unwrap();
        let risk = FittedRisk::from_fn(&ds, |r| Ok(0.4 * r.z[0] + r.v.sin())).unwrap();
        let bases = breslow_all(&ds, &risk);
        let parts = infer_fit(&ds, &fit, &d, &risk, &bases);
        prop_assume!(parts.is_ok());
        let s = parts.unwrap().sigma_hat;
        prop_assert_eq!(s.clone(), s.transpose());
        let eig = s.symmetric_eigenvalues();
        prop_assert!(eig[0] >= -1e-12 * eig[eig.len() - 1].abs());
    }

    #[test]
    fn simulation_is_a_function_of_the_seed(seed in any::<u64>(), theta in 0.1f64..4.0) {
        let scn = simgen::SimScenario::set1(30, theta, 2.0, seed);
        let a = simgen::simulate_dataset(&scn).unwrap();
        prop_assert_eq!(&a, &simgen::simulate_dataset(&scn).unwrap());
        let b = simgen::simulate_dataset(&scn.with_seed(seed.wrapping_add(1))).unwrap();
        prop_assert_ne!(&a, &b);
    }
}

fn breslow_all(ds: &Dataset64, risk: &FittedRisk<f64>) -> Vec<StepHazard64> {
    (1..=ds.members()).map(|j| breslow_with_risk(ds, j, risk).unwrap()).collect()
}
