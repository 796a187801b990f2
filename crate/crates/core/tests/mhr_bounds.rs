use proptest::prelude::*;
use seqauction::dist_core::{harmonic, ContinuousDist, PiecewiseLinearH};
use seqauction::mhr_bounds::*;
use seqauction::Error;

#[test]
fn exponential_four_and_three_draws() {
    let exp = ContinuousDist::exponential(1.0);
    // E[X_{2:n}] = H_n - 1 for Exp(1)
    let r = verify_mhr_bounds(&exp, 1, "exp_1").unwrap();
    assert!((r[0].lhs - (harmonic(4) - 1.0)).abs() < 1e-9);
    assert!((r[0].lhs - 13.0 / 12.0).abs() < 1e-9);
    assert!(r.iter().all(|b| b.pass));
    let nec = three_draws_insufficient(0.16).unwrap();
    assert!((nec.lhs - 1.0 / 6.0).abs() < 1e-8);
    assert!(nec.pass);
}

#[test]
fn zoo_satisfies_all_bounds() {
    for (id, d) in mhr_zoo() {
        for n in 1..=8 {
            let reports = verify_mhr_bounds(&d, n, &id).unwrap();
            assert_eq!(reports.len(), if n == 1 { 2 } else { 3 });
            for r in reports {
                assert!(r.pass, "{}", r.csv_row());
            }
            assert!(max_is_mhr(&d, n, 400).is_mhr, "{id} n={n}");
        }
    }
}

#[test]
fn near_point_mass_is_nearly_tight() {
    let d = ContinuousDist::uniform(3.0, 3.0 + 1e-6);
    for r in verify_mhr_bounds(&d, 2, "pt").unwrap() {
        assert!(r.pass);
        assert!((r.lhs - 3.0).abs() < 1e-5);
    }
    let (lhs, rhs) = spacing_identity(&d, 3).unwrap();
    assert!(lhs.abs() < 1e-6 && rhs.abs() < 1e-6);
}

#[test]
fn non_mhr_is_refused() {
    let er = ContinuousDist::truncated(ContinuousDist::equal_revenue(None), 100.0);
    assert!(matches!(verify_mhr_bounds(&er, 2, "er"), Err(Error::Domain(_))));
    assert!(min_two_bound(&er, "er").is_err());
}

#[test]
fn integral_of_identity_hazard() {
    let h = PiecewiseLinearH::identity(Some(40.0));
    assert!((integral_i(&h) - 1.0 / 12.0).abs() < 1e-10);
    // analytic: 3/4 - 8/3 + 3 - 1
    assert!((3.0 / 4.0 - 8.0 / 3.0 + 3.0 - 1.0 - 1.0 / 12.0f64).abs() < 1e-15);
    assert!((integral_i_quadrature(&h, 40.0) - 1.0 / 12.0).abs() < 1e-10);
}

#[test]
fn pl_approx_examples() {
    let sq = |x: f64| x * x;
    let g = pl_approx(sq, 1.0, 0.01).unwrap();
    let err = (0..=1000).map(|t| t as f64 / 1000.0).map(|x| (sq(x) - g.eval(x)).abs()).fold(0.0, f64::max);
    assert!(err < 0.01);

    let lin = pl_approx(|x| 2.5 * x, 3.0, 1e-9).unwrap();
    assert_eq!(lin.segments(), 1);
    assert!((lin.slopes()[0] - 2.5).abs() < 1e-15);

    let ex = |x: f64| x.exp() - 1.0;
    let g = pl_approx(ex, 2.0, 0.05).unwrap();
    let err = (0..=2000).map(|t| t as f64 / 1000.0).map(|x| (ex(x) - g.eval(x)).abs()).fold(0.0, f64::max);
    assert!(err < 0.05);
    assert!(g.slopes().windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn spacing_identity_cases() {
    let exp = ContinuousDist::exponential(1.0);
    for n in 2..=6 {
        let (lhs, rhs) = spacing_identity(&exp, n).unwrap();
        assert!((lhs - 1.0).abs() < 1e-8 && (rhs - 1.0).abs() < 1e-8);
    }
    let (lhs, rhs) = spacing_identity(&ContinuousDist::uniform(0.0, 1.0), 2).unwrap();
    assert!((lhs - 1.0 / 3.0).abs() < 1e-9 && (rhs - 1.0 / 3.0).abs() < 1e-9);
    for (id, d) in mhr_zoo() {
        let mut prev = f64::INFINITY;
        for n in 2..=8 {
            let (lhs, rhs) = spacing_identity(&d, n).unwrap();
            assert!((lhs - rhs).abs() < 1e-6, "{id} n={n}: {lhs} vs {rhs}");
            assert!(lhs <= prev + 1e-9, "{id}: spacing grew at n={n}");
            prev = lhs;
        }
    }
}

#[test]
fn two_draw_bounds() {
    let exp = min_two_bound(&ContinuousDist::exponential(1.0), "exp_1").unwrap();
    assert!((exp[0].lhs - 0.5).abs() < 1e-9 && (exp[0].rhs - 0.5).abs() < 1e-9);
    assert!(exp.iter().all(|r| r.pass));
    let uni = min_two_bound(&ContinuousDist::uniform(0.0, 1.0), "u").unwrap();
    assert!((uni[0].lhs - 1.0 / 3.0).abs() < 1e-9 && (uni[0].rhs - 0.25).abs() < 1e-12);
    let pt = min_two_bound(&ContinuousDist::uniform(7.0, 7.0 + 1e-7), "pt").unwrap();
    assert!((pt[0].lhs - 7.0).abs() < 1e-6);
    for (id, d) in mhr_zoo() {
        assert!(min_two_bound(&d, &id).unwrap().iter().all(|r| r.pass), "{id}");
    }
}

#[test]
fn coupling_has_no_violations() {
    for (d, n) in [(ContinuousDist::exponential(1.0), 2), (ContinuousDist::uniform(0.0, 1.0), 3)] {
        let c = coupling_check(&d, n, DEFAULT_TRIALS, DEFAULT_SEED, "d").unwrap();
        assert_eq!(c.violations, 0);
        assert!(c.report.pass && c.report.lhs >= 0.0);
        assert!(c.mean_second_of_all >= c.mean_second_of_blocks - 3.0 * c.diff_std_err);
        // the simulated mean agrees with quadrature
        let exact = d.expected_order_stat(2, 4 * n).unwrap();
        assert!((c.mean_second_of_all - exact).abs() < 0.01, "{} vs {exact}", c.mean_second_of_all);
    }
}

#[test]
fn coupling_is_reproducible() {
    let d = ContinuousDist::exponential(2.0);
    let a = coupling_check(&d, 1, 1000, 7, "d").unwrap();
    let b = coupling_check(&d, 1, 1000, 7, "d").unwrap();
    assert_eq!(a, b);
}

#[test]
fn truncated_equal_revenue_counterexample() {
    let r = equal_revenue_counterexample(1e6, 10).unwrap();
    assert!(r.lhs > r.rhs, "{}", r.csv_row());
    // mean of the law conditioned on [1, V]: ln V / (1 - 1/V)
    let v: f64 = 1e6;
    let mean = (v.ln()) / (1.0 - 1.0 / v);
    assert!((r.lhs - mean).abs() < 1e-6, "{} vs {mean}", r.lhs);
}

fn plh() -> impl Strategy<Value = PiecewiseLinearH> {
    (1usize..=6, any::<bool>())
        .prop_flat_map(|(k, bounded)| {
            (
                prop::collection::vec(0.01f64..5.0, k),
                prop::collection::vec(1e-3f64..20.0, k),
                0.01f64..10.0,
                Just(bounded),
            )
        })
        .prop_map(|(gaps, mut slopes, tail, bounded)| {
            slopes.sort_by(|a, b| a.total_cmp(b));
            let mut bps = vec![0.0];
            for g in &gaps[..gaps.len() - 1] {
                let last = *bps.last().unwrap();
                bps.push(last + g);
            }
            let end = bounded.then(|| bps.last().unwrap() + tail);
            PiecewiseLinearH::new(bps, slopes, end).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn integral_is_positive(h in plh()) {
        let i = integral_i(&h);
        prop_assert!(i > 0.0, "I = {}", i);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn closed_form_matches_quadrature(h in plh()) {
        let closed = integral_i(&h);
        // the integrand decays like e^{-H}; cut where H exceeds 60
        let upper = h.inverse(60.0);
        let quad = integral_i_quadrature(&h, upper);
        prop_assert!((closed - quad).abs() <= 1e-9 * closed.abs().max(1e-3), "{} vs {}", closed, quad);
    }
}

#[test]
fn posted_price_on_the_maximum_is_an_e_approximation() {
    for (id, d) in mhr_zoo() {
        for n in 1..=8 {
            let top = d.expected_order_stat(1, n).unwrap();
            let hi = d.effective_hi();
            let best = (1..=4000)
                .map(|i| hi * i as f64 / 4000.0)
                .map(|p| p * (1.0 - d.cdf(p).powi(n as i32)))
                .fold(0.0, f64::max);
            // tight for Exp(1) with one draw; the price grid costs about 1e-6
            assert!(best >= top / std::f64::consts::E * (1.0 - 1e-5), "{id} n={n}: {best} vs {top}");
        }
    }
}
