//! End-to-end acceptance checks, one per criterion, shared by the test suite and
//! the `reproduce-paper` command.
//!
//! Each check returns a [`CriterionResult`] instead of panicking so a run always
//! reports every criterion. Tolerances are pinned as constants next to the check
//! that uses them.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::competition::{self, Benchmark, CcQuery};
use crate::dist_core::{harmonic, ContinuousDist, DiscreteDist, Distribution, PiecewiseLinearH};
use crate::duality_flows as flows;
use crate::dynamic_lp::{self, DynamicInstance, IrMode, ProcessNode, ValueProcess};
use crate::error::Result;
use crate::mhr_bounds;
use crate::myerson::{self, DEFAULT_PROFILE_CAP};

/// Criteria that are implemented faithfully but cannot hold as stated.
pub const KNOWN_DEVIATIONS: [u8; 2] = [4, 10];

pub const DEFAULT_SEED: u64 = 0x5eed_0a11;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn expected_fail(&self) -> bool {
        KNOWN_DEVIATIONS.contains(&self.id)
    }

    pub fn line(&self) -> String {
        let status = match (self.pass, self.expected_fail()) {
            (true, _) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
        };
        format!("criterion {:>2}: {status} [{:.2} s] {}", self.id, self.seconds, self.detail)
    }
}

fn timed(id: u8, f: impl FnOnce() -> Result<(bool, String)>) -> CriterionResult {
    let start = Instant::now();
    let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult { id, pass, detail, seconds: start.elapsed().as_secs_f64() }
}

fn within(limit: Duration, start: Instant) -> bool {
    start.elapsed() < limit
}

pub fn run_all(seed: u64) -> Vec<CriterionResult> {
    vec![
        halving(),
        random_sandwich(seed),
        flow_certificates(seed),
        order_statistics(),
        mhr_zoo_bounds(),
        piecewise_integral(seed),
        competition_scans(),
        lower_bound_crossing(),
        correlation_raises(),
        verifier(seed),
    ]
}

const LP_TOL: f64 = 1e-6;

/// Halving instance at depth 3.
pub fn halving() -> CriterionResult {
    timed(1, || {
        let start = Instant::now();
        let ex = competition::halving_instance(3)?;
        let opt = dynamic_lp::optimal_revenue(&ex.instance)?.objective;
        let pass = opt >= 3.0 - LP_TOL
            && ex.myerson.iter().all(|&r| r <= 2.0 + LP_TOL)
            && within(Duration::from_secs(10), start);
        Ok((pass, format!("OPT {opt:.6} >= 3, Mye {:.6} and {:.6} <= 2", ex.myerson[0], ex.myerson[1])))
    })
}

fn random_stage(rng: &mut ChaCha8Rng, max_len: usize) -> DiscreteDist {
    let len = rng.gen_range(1..=max_len);
    let mut values: Vec<u32> = Vec::with_capacity(len);
    while values.len() < len {
        let v = rng.gen_range(1..=12);
        if !values.contains(&v) {
            values.push(v);
        }
    }
    values.sort_unstable();
    let weights: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    DiscreteDist::new(values.iter().map(|&v| f64::from(v)).collect(), weights.iter().map(|w| w / total).collect())
        .expect("normalized")
}

fn random_instance(rng: &mut ChaCha8Rng, max_n: usize, max_m: usize, max_len: usize) -> DynamicInstance {
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(1..=max_m);
    let stages = (0..m).map(|_| random_stage(rng, max_len)).collect();
    DynamicInstance::independent(n, stages, IrMode::ExPost).expect("valid instance")
}

fn is_regular(d: &DiscreteDist) -> bool {
    d.virtual_values().windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12)
}

/// min_j duality bound >= LP optimum >= stage-wise Myerson on random instances.
pub fn random_sandwich(seed: u64) -> CriterionResult {
    timed(2, || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut violations = 0;
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let inst = random_instance(&mut rng, 2, 3, 4);
            let ValueProcess::Independent(stages) = &inst.process else { unreachable!() };
            let (_, bound) = flows::best_independent_stage_bound(&inst)?;
            let opt = dynamic_lp::optimal_revenue(&inst)?.objective;
            let mye: f64 = stages
                .iter()
                .map(|d| myerson::myerson_revenue(d, inst.n, DEFAULT_PROFILE_CAP))
                .sum::<Result<f64>>()?;
            let gap = (opt - bound).max(mye - opt);
            worst = worst.max(gap);
            if gap > LP_TOL {
                violations += 1;
            }
        }
        let pass = violations == 0 && within(Duration::from_secs(300), start);
        Ok((pass, format!("200 instances, {violations} violations, worst excess {worst:.2e}")))
    })
}

fn doubling_chain(top: i32) -> Result<DynamicInstance> {
    let support: Vec<f64> = (1..=top + 1).map(f64::from).collect();
    let probs = (1..=top + 1).map(|i| 0.5f64.powi(i.min(top))).collect();
    let children = support.iter().map(|v| ProcessNode::leaf(DiscreteDist::point_mass(v.exp2()))).collect();
    let root = ProcessNode::new(DiscreteDist::new(support, probs)?, children)?;
    DynamicInstance::new(1, ValueProcess::Conditional(root), IrMode::ExPost)
}

const FLOW_TOL: f64 = flows::CONSERVATION_TOL;

/// Conservation of every canonical flow family plus the correlated zero-gap certificate.
pub fn flow_certificates(seed: u64) -> CriterionResult {
    timed(3, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let mut worst = 0.0f64;
        let mut flows_checked = 0;
        let mut check = |inst: &DynamicInstance, f: &flows::FlowSolution| -> Result<()> {
            worst = worst.max(flows::check_conservation(inst, f)?);
            flows_checked += 1;
            Ok(())
        };
        let mut built = 0;
        while built < 60 {
            let inst = random_instance(&mut rng, 2, 3, 4);
            let ValueProcess::Independent(stages) = &inst.process else { unreachable!() };
            if !stages.iter().all(is_regular) {
                continue;
            }
            built += 1;
            for j in 1..=inst.stages() {
                check(&inst, &flows::flow_general(&inst, j)?)?;
            }
            if inst.n == 1 && inst.stages() == 2 {
                check(&inst, &flows::flow_expectation_myerson(&inst)?)?;
                check(&inst, &flows::flow_myerson_expectation(&inst)?)?;
            }
            if inst.n == 1 {
                for j in 1..=inst.stages() {
                    check(&inst, &flows::flow_correlated_dominance(&inst, j)?)?;
                }
            }
        }
        for top in 2..=6 {
            let inst = doubling_chain(top)?;
            check(&inst, &flows::flow_correlated_dominance(&inst, 1)?)?;
        }
        let mut gap_ok = true;
        let mut detail = String::new();
        for n in 2..=6 {
            let r = competition::correlation_lowers_revenue(n)?;
            let opt = dynamic_lp::optimal_revenue(&r.correlated)?.objective;
            gap_ok &= (r.correlated_bound - 3.0).abs() <= 1e-9 && (opt - 3.0).abs() <= LP_TOL;
            if n == 6 {
                detail = format!("bound {:.9}, OPT {opt:.9}", r.correlated_bound);
            }
        }
        let pass = worst <= FLOW_TOL && gap_ok;
        Ok((pass, format!("{flows_checked} flows, worst residual {worst:.2e}; correlated chain {detail}")))
    })
}

/// Closed forms for exponential and equal-revenue order statistics.
pub fn order_statistics() -> CriterionResult {
    timed(4, || {
        let exp = ContinuousDist::exponential(1.0);
        let mut exp_err = 0.0f64;
        for n in 1..=10 {
            exp_err = exp_err.max((exp.expected_order_stat(1, n)? - harmonic(n)).abs());
            if n >= 2 {
                exp_err = exp_err.max((exp.expected_order_stat(2, n)? - (harmonic(n) - 1.0)).abs());
            }
        }
        let er = ContinuousDist::equal_revenue(Some(1e8));
        let mut er_err = 0.0f64;
        for n in 2..=10 {
            er_err = er_err.max((er.expected_order_stat(2, n)? - (n as f64 - 1.0)).abs());
        }
        let five_sixths = (exp.expected_order_stat(2, 3)? - 5.0 / 6.0).abs();
        let pass = exp_err <= 1e-6 && er_err <= 1e-3 && five_sixths <= 1e-8;
        Ok((
            pass,
            format!(
                "Exp(1) harmonic error {exp_err:.1e}; equal revenue E[Y(2:n)] - (n-1) up to {er_err:.6} (value is n); E[X(2:3)] error {five_sixths:.1e}"
            ),
        ))
    })
}

/// The three MHR inequalities on the zoo, and why three draws are not enough.
pub fn mhr_zoo_bounds() -> CriterionResult {
    timed(5, || {
        let mut rows = 0;
        let mut failed = Vec::new();
        for (id, d) in mhr_bounds::mhr_zoo() {
            for n in 1..=8 {
                for r in mhr_bounds::verify_mhr_bounds(&d, n, &id)? {
                    rows += 1;
                    if !r.pass {
                        failed.push(format!("{id}/{n}/{}", r.bound_name));
                    }
                }
            }
        }
        let nec = mhr_bounds::three_draws_insufficient(0.16)?;
        let pass = failed.is_empty() && nec.pass && nec.lhs >= 0.16;
        Ok((pass, format!("{rows} rows, {} failed; E[X] - E[X(2:3)] = {:.6}", failed.len(), nec.lhs)))
    })
}

/// Random valid piecewise-linear cumulative hazard with up to six pieces.
pub fn random_plh(rng: &mut ChaCha8Rng) -> PiecewiseLinearH {
    let k = rng.gen_range(1..=6);
    let mut slopes: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-3..20.0)).collect();
    slopes.sort_by(f64::total_cmp);
    let mut breakpoints = vec![0.0];
    for _ in 1..k {
        let last = *breakpoints.last().unwrap();
        breakpoints.push(last + rng.gen_range(0.01..5.0));
    }
    let end = rng.gen_bool(0.5).then(|| breakpoints.last().unwrap() + rng.gen_range(0.01..10.0));
    PiecewiseLinearH::new(breakpoints, slopes, end).expect("valid by construction")
}

/// Positivity of the piecewise-linear hazard integral.
pub fn piecewise_integral(seed: u64) -> CriterionResult {
    timed(6, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 6);
        let mut min_i = f64::INFINITY;
        for _ in 0..1000 {
            min_i = min_i.min(mhr_bounds::integral_i(&random_plh(&mut rng)));
        }
        let ident = mhr_bounds::integral_i(&PiecewiseLinearH::identity(None));
        let pass = min_i > 0.0 && (ident - 1.0 / 12.0).abs() <= 1e-10;
        Ok((pass, format!("min I over 1000 = {min_i:.3e}; I[x] = {ident:.15}")))
    })
}

/// Welfare-benchmark scans over the zoo.
pub fn competition_scans() -> CriterionResult {
    timed(7, || {
        let start = Instant::now();
        let mut bad = Vec::new();
        let mut scans = 0;
        let mut max_full = 0.0f64;
        for (id, d) in mhr_bounds::mhr_zoo() {
            for n in 2..=4 {
                for m in 1..=3 {
                    let stages = vec![Distribution::Continuous(d.clone()); m];
                    let cc = |alpha| competition::competition_complexity(&CcQuery::new(stages.clone(), n, alpha, Benchmark::Welfare));
                    let third = cc(1.0 / 3.0)?.c_star;
                    let inv_e = cc((-1f64).exp())?.c_star;
                    let full = cc(1.0)?.c_star;
                    scans += 3;
                    if third != Some(0) || inv_e.is_none_or(|c| c > 1) || full.is_none_or(|c| c > 3 * n) {
                        bad.push(format!("{id}/n={n}/m={m}"));
                    }
                    if let Some(c) = full {
                        max_full = max_full.max(c as f64 / n as f64);
                    }
                }
            }
        }
        let pass = bad.is_empty() && within(Duration::from_secs(120), start);
        Ok((pass, format!("{scans} scans, {} off; largest c*/n at alpha 1 is {max_full:.2}", bad.len())))
    })
}

/// Crossing point of the lower-bound construction against the Lambert estimate.
pub fn lower_bound_crossing() -> CriterionResult {
    timed(8, || {
        let w = competition::lambert_w0(std::f64::consts::E);
        let mut off = Vec::new();
        for n in 1..=5 {
            for m in [2, 5, 10] {
                let r = competition::lower_bound_crossing(
                    n,
                    m,
                    competition::DEFAULT_EXP_TRUNCATION,
                    competition::DEFAULT_ER_TRUNCATION,
                )?;
                if !r.within_one() {
                    off.push(format!("n={n} m={m}: c*={} est={:.3}", r.c_star, r.estimate));
                }
            }
        }
        let pass = off.is_empty() && (w - 1.0).abs() <= 1e-12;
        Ok((pass, format!("15 pairs, {} outside +-1; W(e) - 1 = {:.1e}", off.len(), w - 1.0)))
    })
}

/// Correlation raising revenue via the two-option menu.
pub fn correlation_raises() -> CriterionResult {
    timed(9, || {
        let mut ok = true;
        let mut smallest = f64::INFINITY;
        for n in 2..=6 {
            let r = competition::correlation_raises_revenue(n)?;
            let gap = r.menu_revenue - r.independent_bound;
            smallest = smallest.min(gap);
            ok &= gap > 0.0
                && (r.menu_revenue - r.menu_revenue_closed_form).abs() <= 1e-9
                && (r.independent_bound - r.independent_bound_closed_form).abs() <= 1e-9 * r.independent_bound
                && r.choices.iter().all(|c| c.assigned_is_best());
        }
        Ok((ok, format!("n = 2..6, smallest revenue gap {smallest:.6}, assigned choices are best responses")))
    })
}

const PERTURBATION_DETECT: f64 = 0.9;

/// LP solutions verify cleanly and unit payment perturbations are caught.
pub fn verifier(seed: u64) -> CriterionResult {
    timed(10, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 10);
        let mut instances = vec![competition::halving_instance(3)?.instance];
        for _ in 0..4 {
            let stages = (0..2).map(|_| random_stage(&mut rng, 3)).collect();
            instances.push(DynamicInstance::independent(1, stages, IrMode::ExPost)?);
        }
        for _ in 0..3 {
            let stages = (0..2).map(|_| random_stage(&mut rng, 3)).collect();
            instances.push(DynamicInstance::independent(2, stages, IrMode::ExPost)?);
        }
        let mut residual = 0.0f64;
        let (mut detect_one, mut detect_two) = (f64::INFINITY, f64::INFINITY);
        for inst in &instances {
            let sol = dynamic_lp::optimal_revenue(inst)?;
            residual = residual.max(dynamic_lp::verify_mechanism(inst, &sol)?.max_violation());
            let scan = dynamic_lp::payment_perturbation_scan(inst, &sol, 1.0)?;
            if inst.n == 1 {
                detect_one = detect_one.min(scan.min_detected);
            } else {
                detect_two = detect_two.min(scan.min_detected);
            }
        }
        let pass = residual <= LP_TOL && detect_one.min(detect_two) >= PERTURBATION_DETECT;
        Ok((
            pass,
            format!(
                "max residual {residual:.1e}; smallest detected violation {detect_one:.3} with one buyer, {detect_two:.3} with two"
            ),
        ))
    })
}
