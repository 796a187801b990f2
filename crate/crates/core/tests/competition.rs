use proptest::prelude::*;
use seqauction::competition::*;
use seqauction::dist_core::{harmonic, ContinuousDist, DiscreteDist, Distribution};
use seqauction::duality_flows::{check_conservation, flow_correlated_dominance};
use seqauction::dynamic_lp::{optimal_revenue, verify_mechanism};
use seqauction::mhr_bounds::mhr_zoo;

fn cont(d: ContinuousDist) -> Distribution {
    Distribution::Continuous(d)
}

/// Best posted price by enumeration.
fn posted_price(d: &DiscreteDist) -> f64 {
    d.support()
        .iter()
        .map(|&p| p * d.support().iter().zip(d.probs()).filter(|(v, _)| **v >= p).map(|(_, q)| q).sum::<f64>())
        .fold(0.0, f64::max)
}

/// E[X_{2:t}] of a discrete law by summing P[X_{2:t} >= v] over support gaps.
fn second_of(d: &DiscreteDist, t: usize) -> f64 {
    let s = d.support();
    let mut total = s[0];
    for w in 1..s.len() {
        let below: f64 = d.probs()[..w].iter().sum();
        let above = 1.0 - below;
        let at_least_two = 1.0 - below.powi(t as i32) - t as f64 * above * below.powi(t as i32 - 1);
        total += (s[w] - s[w - 1]) * at_least_two;
    }
    total
}

#[test]
fn vcg_examples() {
    let exp = vec![cont(ContinuousDist::exponential(1.0)); 3];
    for t in 2..=8 {
        assert!((vcg_revenue(&exp, t).unwrap() - 3.0 * (harmonic(t) - 1.0)).abs() < 1e-8);
    }
    let pt = vec![Distribution::Discrete(DiscreteDist::point_mass(2.5)); 4];
    assert!((vcg_revenue(&pt, 3).unwrap() - 10.0).abs() < 1e-12);
    let er = vec![cont(ContinuousDist::equal_revenue(Some(1e8)))];
    for t in 2..=5 {
        // second price revenue of t equal-revenue bidders tends to t
        assert!((vcg_revenue(&er, t).unwrap() - t as f64).abs() < 1e-3);
    }
}

#[test]
fn vcg_matches_discrete_oracle() {
    let d = DiscreteDist::new(vec![1.0, 2.0, 5.0, 9.0], vec![0.4, 0.3, 0.2, 0.1]).unwrap();
    let stages = vec![Distribution::Discrete(d.clone())];
    for t in 2..=6 {
        assert!((vcg_revenue(&stages, t).unwrap() - second_of(&d, t)).abs() < 1e-12);
    }
}

#[test]
fn zoo_scans() {
    let zoo = mhr_zoo();
    for (id, d) in &zoo {
        for n in 2..=4 {
            for m in 1..=3 {
                let stages = vec![cont(d.clone()); m];
                let third = competition_complexity(&CcQuery::new(stages.clone(), n, 1.0 / 3.0, Benchmark::Welfare)).unwrap();
                assert_eq!(third.c_star, Some(0), "{id} n={n} m={m}");
                let inv_e = competition_complexity(&CcQuery::new(stages.clone(), n, (-1f64).exp(), Benchmark::Welfare)).unwrap();
                assert!(inv_e.c_star.unwrap() <= 1, "{id}");
                let full = competition_complexity(&CcQuery::new(stages, n, 1.0, Benchmark::Welfare)).unwrap();
                assert!(full.c_star.unwrap() <= 3 * n, "{id}");
                assert!(full.vcg_monotone && full.margin >= -1e-9);
                assert!(third.c_star <= inv_e.c_star && inv_e.c_star <= full.c_star);
            }
        }
    }
}

#[test]
fn mixed_stage_scan() {
    let zoo = mhr_zoo();
    let stages: Vec<_> = zoo.iter().take(3).map(|(_, d)| cont(d.clone())).collect();
    let r = competition_complexity(&CcQuery::new(stages.clone(), 2, 1.0, Benchmark::Welfare)).unwrap();
    let c = r.c_star.unwrap();
    assert!(c <= 6);
    let welfare: f64 = stages.iter().map(|d| d.expected_order_stat(1, 2).unwrap()).sum();
    assert!((r.benchmark_value - welfare).abs() < 1e-12);
    assert!(vcg_revenue(&stages, 2 + c).unwrap() >= welfare * (1.0 - 1e-9));
    if c > 0 {
        assert!(vcg_revenue(&stages, 2 + c - 1).unwrap() < welfare);
    }
}

#[test]
fn discrete_benchmarks_are_ordered() {
    let d = DiscreteDist::new(vec![1.0, 2.0, 4.0], vec![0.5, 0.3, 0.2]).unwrap();
    let stages = vec![Distribution::Discrete(d.clone()); 2];
    let value = |b| CcQuery::new(stages.clone(), 2, 1.0, b).benchmark_value().unwrap();
    let (lp, dual, welfare) = (value(Benchmark::LpOpt), value(Benchmark::DualityMinJ), value(Benchmark::Welfare));
    assert!(lp <= dual + 1e-6 && dual <= welfare + 1e-9, "{lp} {dual} {welfare}");
    let cc = |b| competition_complexity(&CcQuery::new(stages.clone(), 2, 1.0, b)).unwrap().c_star.unwrap();
    assert!(cc(Benchmark::LpOpt) <= cc(Benchmark::DualityMinJ));
    assert!(cc(Benchmark::DualityMinJ) <= cc(Benchmark::Welfare));
}

#[test]
fn query_validation() {
    let stages = vec![cont(ContinuousDist::exponential(1.0))];
    assert!(competition_complexity(&CcQuery::new(stages.clone(), 2, 0.0, Benchmark::Welfare)).is_err());
    assert!(competition_complexity(&CcQuery::new(stages.clone(), 2, 1.5, Benchmark::Welfare)).is_err());
    assert!(competition_complexity(&CcQuery::new(stages.clone(), 0, 0.5, Benchmark::Welfare)).is_err());
    assert!(competition_complexity(&CcQuery::new(stages, 2, 0.5, Benchmark::LpOpt)).is_err());
}

#[test]
fn query_json_round_trip() {
    let q = CcQuery::new(
        vec![cont(ContinuousDist::exponential(2.0)), Distribution::Discrete(DiscreteDist::point_mass(1.0))],
        3,
        0.5,
        Benchmark::DualityMinJ,
    );
    let text = serde_json::to_string(&q).unwrap();
    assert!(text.contains("duality-min-j"));
    assert_eq!(serde_json::from_str::<CcQuery>(&text).unwrap(), q);
}

#[test]
fn halving_reference_values() {
    for depth in 1..=MAX_EXAMPLE_DEPTH {
        let ex = halving_instance(depth).unwrap();
        assert!((ex.dynamic_revenue - depth as f64).abs() < 1e-12);
        for (k, mye) in ex.myerson.iter().enumerate() {
            assert!(*mye <= 2.0 + 1e-12, "depth {depth} stage {k}");
        }
        assert!(ex.stagewise_myerson() <= 4.0 + 1e-12);
        let space = ex.instance.space().unwrap();
        assert_eq!(space.marginal(2).len(), (1 << depth) + 1);
        // independent posted-price oracle
        assert!((ex.myerson[1] - posted_price(&space.marginal(2))).abs() < 1e-12);
    }
    assert!(halving_instance(0).is_err());
    assert!(matches!(halving_instance(6), Err(seqauction::Error::Size(_))));
}

#[test]
fn halving_lp_sandwich() {
    let ex = halving_instance(3).unwrap();
    let sol = optimal_revenue(&ex.instance).unwrap();
    let second_mean = ex.instance.space().unwrap().marginal(2).mean();
    assert!(sol.objective >= 3.0 - 1e-6);
    assert!(sol.objective <= ex.myerson[0] + second_mean + 1e-6);
    assert!(verify_mechanism(&ex.instance, &sol).unwrap().max_violation() <= 1e-6);
}

fn halving_scan(depth: u32, alpha: f64, cap: usize) -> CcResult {
    let ex = halving_instance(depth).unwrap();
    let stages = (1..=2).map(|k| Distribution::Discrete(ex.instance.space().unwrap().marginal(k))).collect();
    let mut q = CcQuery::new(stages, 1, alpha, Benchmark::LpOpt);
    q.cap = Some(cap);
    competition_complexity(&q).unwrap()
}

#[test]
fn halving_needs_more_buyers_as_depth_grows() {
    // at desk depths half the optimum is reached with one extra buyer throughout
    for depth in 1..=5 {
        assert_eq!(halving_scan(depth, 0.5, 10).c_star, Some(1), "depth {depth}");
    }
    assert!(halving_scan(4, 1.0, 10).c_star > halving_scan(3, 1.0, 10).c_star);
    let mut prev = 0;
    for depth in 1..=5 {
        let c = halving_scan(depth, 1.0, 10).c_star.unwrap();
        if depth >= 3 {
            assert!(c >= prev, "depth {depth}");
        }
        prev = c;
    }
    // with one extra buyer the VCG share of the optimum falls with depth
    let ratio = |d: u32| {
        let ex = halving_instance(d).unwrap();
        let stages: Vec<_> = (1..=2).map(|k| Distribution::Discrete(ex.instance.space().unwrap().marginal(k))).collect();
        vcg_revenue(&stages, 2).unwrap() / optimal_revenue(&ex.instance).unwrap().objective
    };
    assert!(ratio(3) > ratio(4) && ratio(4) > ratio(5));
    // hitting the cap is reported, not an error
    let r = halving_scan(5, 1.0, 1);
    assert_eq!(r.c_star, None);
    assert!(r.margin < 0.0 && r.csv_row().contains("unbounded"));
}

#[test]
fn lambert_estimates() {
    assert!((lambert_w0(std::f64::consts::E) - 1.0).abs() < 1e-12);
    assert!(lambert_cc_estimate(1, 2).unwrap().abs() < 1e-12);
    // n e / (m - 1) = e gives (m - 1) - n
    assert!((lambert_cc_estimate(4, 5).unwrap()).abs() < 1e-12);
    let limit = (std::f64::consts::E - 1.0) * 5.0;
    // k W(en/k) = en - (en)^2/k + O(1/k^2)
    let gap = limit - lambert_cc_estimate(5, 10_000).unwrap();
    assert!((gap - (5.0 * std::f64::consts::E).powi(2) / 9_999.0).abs() < 1e-3, "{gap}");
    assert!((lambert_cc_estimate(5, 10_000_000).unwrap() - limit).abs() < 1e-4);
    let mut prev = f64::NEG_INFINITY;
    for m in [2, 3, 5, 10, 100, 1000, 100_000] {
        let e = lambert_cc_estimate(5, m).unwrap();
        assert!(e > prev && e < limit);
        prev = e;
    }
    assert!(lambert_cc_estimate(0, 3).is_err() && lambert_cc_estimate(2, 1).is_err());
}

#[test]
fn lower_bound_construction() {
    let r = lower_bound_auction_revenue(2, 3, 0, DEFAULT_EXP_TRUNCATION, DEFAULT_ER_TRUNCATION).unwrap();
    assert!((r.auction_revenue - 2.0 * harmonic(2)).abs() < 1e-9);
    assert!((r.auction_revenue - 3.0).abs() < 1e-9);
    for m in [2, 4, 7] {
        let r = lower_bound_auction_revenue(1, m, 0, DEFAULT_EXP_TRUNCATION, DEFAULT_ER_TRUNCATION).unwrap();
        assert!((r.auction_revenue - (m - 1) as f64).abs() < 1e-9);
        assert_eq!(r.vcg_revenue, 0.0);
        // beats Myerson in every stage: (m - 1)/e for the exponential stages, 1 for the last
        if m >= 3 {
            assert!(r.auction_revenue > (m - 1) as f64 / std::f64::consts::E + 1.0);
        }
    }
    // VCG side against the harmonic oracle
    let r = lower_bound_auction_revenue(2, 5, 3, DEFAULT_EXP_TRUNCATION, DEFAULT_ER_TRUNCATION).unwrap();
    assert!((r.vcg_revenue - (4.0 * (harmonic(5) - 1.0) + 5.0)).abs() < 1e-3);
}

#[test]
fn crossing_tracks_lambert_estimate() {
    for n in 1..=5 {
        for m in [2, 5, 10] {
            let r = lower_bound_crossing(n, m, DEFAULT_EXP_TRUNCATION, DEFAULT_ER_TRUNCATION).unwrap();
            assert!(r.within_one(), "{r:?}");
            // harmonic oracle for the untruncated limit
            let k = (m - 1) as f64;
            let oracle = (0..)
                .find(|&c| {
                    let t = n + c;
                    let y = if t >= 2 { t as f64 } else { 0.0 };
                    let x = if t >= 2 { harmonic(t) - 1.0 } else { 0.0 };
                    k * x + y >= k * harmonic(n) - 1e-12
                })
                .unwrap();
            assert_eq!(r.c_star, oracle, "n={n} m={m}");
        }
    }
}

#[test]
fn correlation_raises_revenue_for_small_params() {
    for n in 2..=6u32 {
        let r = correlation_raises_revenue(n).unwrap();
        assert!((r.menu_revenue - r.menu_revenue_closed_form).abs() < 1e-9);
        assert!((r.independent_bound - r.independent_bound_closed_form).abs() < 1e-9 * r.independent_bound);
        assert!(r.menu_revenue > r.independent_bound);
        assert!(r.choices.iter().all(|c| c.assigned_is_best()));
        assert!(r.choices.iter().all(|c| c.utility >= -1e-9));
        assert_eq!(r.choices[0].assigned, 0);
        assert!(r.choices[1..].iter().all(|c| c.assigned == 1));
        // from the third type on the second option is the unique best response
        assert!(r.choices[2..].iter().all(|c| c.best == vec![Some(1)]));
        // the lowest type is indifferent between both options and walking away
        assert_eq!(r.choices[0].best.len(), 3);
        // LP optima bracket the menu
        let corr = optimal_revenue(&r.correlated).unwrap().objective;
        let indep = optimal_revenue(&r.independent).unwrap().objective;
        assert!(corr >= r.menu_revenue - 1e-6 * corr);
        assert!(indep <= r.independent_bound + 1e-6 * indep);
        // the two instances share their marginals
        let (a, b) = (r.correlated.space().unwrap(), r.independent.space().unwrap());
        for k in 1..=2 {
            assert_eq!(a.marginal(k).pruned(), b.marginal(k).pruned());
        }
    }
    assert!(correlation_raises_revenue(1).is_err());
}

#[test]
fn correlation_lowers_revenue_for_small_params() {
    for n in 2..=8u32 {
        let r = correlation_lowers_revenue(n).unwrap();
        assert!((r.correlated_bound - 3.0).abs() < 1e-12);
        assert!((r.posted_price_revenue - 3.0).abs() < 1e-12);
        assert!(r.independent_lower_bound > 3.0);
        assert!((r.independent_lower_bound - (4.0 - 0.5f64.powi(n as i32))).abs() < 1e-12);
        let flow = flow_correlated_dominance(&r.correlated, 1).unwrap();
        assert!(check_conservation(&r.correlated, &flow).unwrap() <= 1e-9);
        let opt = optimal_revenue(&r.correlated).unwrap().objective;
        assert!((opt - 3.0).abs() < 1e-6);
        let indep = optimal_revenue(&r.independent).unwrap().objective;
        assert!(indep >= r.independent_lower_bound - 1e-6);
    }
    let both = nonmonotonicity_instances(3).unwrap();
    assert_eq!(both.raises.param, 3);
    assert_eq!(both.lowers.param, 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scan_is_minimal(
        values in prop::collection::btree_set(1u32..30, 2..5),
        weights in prop::collection::vec(0.05f64..1.0, 5),
        n in 1usize..4,
        alpha in 0.05f64..1.0,
    ) {
        let support: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let w = &weights[..support.len()];
        let total: f64 = w.iter().sum();
        let d = DiscreteDist::new(support, w.iter().map(|x| x / total).collect()).unwrap();
        let stages = vec![Distribution::Discrete(d.clone()); 2];
        let r = competition_complexity(&CcQuery::new(stages.clone(), n, alpha, Benchmark::Welfare)).unwrap();
        prop_assert!(r.vcg_monotone);
        let target = alpha * r.benchmark_value;
        if let Some(c) = r.c_star {
            prop_assert!(vcg_revenue(&stages, n + c).unwrap() >= target * (1.0 - 1e-9));
            if c > 0 {
                prop_assert!(vcg_revenue(&stages, n + c - 1).unwrap() < target);
            }
        } else {
            prop_assert!(r.vcg_at_c < target);
        }
        // strictly increasing in t for non-degenerate marginals
        for t in 2..8 {
            prop_assert!(second_of(&d, t + 1) > second_of(&d, t));
        }
    }
}
