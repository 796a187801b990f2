//! VCG revenue, competition complexity scans and the worked instances that
//! separate simple and optimal dynamic auctions.
//!
//! A competition complexity scan asks for the fewest extra buyers `c` such that
//! running a second price auction in every stage with `n + c` buyers earns at
//! least `alpha` times a benchmark computed with `n` buyers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dist_core::{ContinuousDist, DiscreteDist, Distribution};
use crate::duality_flows;
use crate::dynamic_lp::{self, DynamicInstance, IrMode, ProcessNode, ValueProcess};
use crate::error::{domain, Error, Result};
use crate::myerson::{self, DEFAULT_PROFILE_CAP};

/// Relative slack in the threshold test `VCG >= alpha * benchmark`.
pub const CC_TOL: f64 = 1e-9;

/// The scan gives up after `CAP_FACTOR * n` extra buyers unless told otherwise.
pub const CAP_FACTOR: usize = 10;

pub const MAX_EXAMPLE_DEPTH: u32 = 5;

/// Largest parameter accepted by the correlation instances (values reach `2^(2n+1)`).
pub const MAX_CORRELATION_PARAM: u32 = 20;

/// Relative slack in the crossing test. The untruncated construction ties
/// exactly at some `(n, m)`; truncating the stages moves VCG revenue below the
/// tie by about `t / er_cap`.
pub const CROSSING_TOL: f64 = 1e-6;

/// Truncation points used when the lower-bound construction is evaluated "in the limit".
pub const DEFAULT_EXP_TRUNCATION: f64 = 60.0;
pub const DEFAULT_ER_TRUNCATION: f64 = 1e8;

/// Expected revenue of a second price auction with `t` buyers in every stage,
/// `sum_k E[(X_k)_{2:t}]`. A single bidder pays nothing.
pub fn vcg_revenue(stages: &[Distribution], t: usize) -> Result<f64> {
    if t == 0 {
        return domain("a second price auction needs at least one buyer");
    }
    if t == 1 {
        return Ok(0.0);
    }
    stages.iter().map(|d| d.expected_order_stat(2, t)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    /// Ex-post IR optimum of the dynamic LP (discrete stages, small instances).
    LpOpt,
    /// Smallest independent-stage duality bound over the choice of stage.
    DualityMinJ,
    /// Expected welfare `sum_k E[(X_k)_{1:n}]`.
    Welfare,
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LpOpt => "lp-opt",
            Self::DualityMinJ => "duality-min-j",
            Self::Welfare => "welfare",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcQuery {
    /// Stage marginals, one per stage.
    pub stages: Vec<Distribution>,
    pub n: usize,
    pub alpha: f64,
    pub benchmark: Benchmark,
    /// Largest `c` tried; defaults to `CAP_FACTOR * n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
}

impl CcQuery {
    pub fn new(stages: Vec<Distribution>, n: usize, alpha: f64, benchmark: Benchmark) -> Self {
        Self { stages, n, alpha, benchmark, cap: None }
    }

    pub fn m(&self) -> usize {
        self.stages.len()
    }

    pub fn cap(&self) -> usize {
        self.cap.unwrap_or(CAP_FACTOR * self.n)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return domain("need at least one base buyer");
        }
        if self.stages.is_empty() {
            return domain("need at least one stage");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return domain(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        self.stages.iter().try_for_each(Distribution::validate)
    }

    /// Independent-stage instance with the base buyers (discrete stages only).
    pub fn instance(&self) -> Result<DynamicInstance> {
        let stages = self
            .stages
            .iter()
            .map(|d| match d {
                Distribution::Discrete(d) => Ok(d.clone()),
                Distribution::Continuous(_) => domain(format!("the {} benchmark needs discrete stages", self.benchmark)),
            })
            .collect::<Result<Vec<_>>>()?;
        DynamicInstance::independent(self.n, stages, IrMode::ExPost)
    }

    pub fn benchmark_value(&self) -> Result<f64> {
        match self.benchmark {
            Benchmark::Welfare => self.stages.iter().map(|d| d.expected_order_stat(1, self.n)).sum(),
            Benchmark::DualityMinJ => Ok(duality_flows::best_independent_stage_bound(&self.instance()?)?.1),
            Benchmark::LpOpt => Ok(dynamic_lp::optimal_revenue(&self.instance()?)?.objective),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcResult {
    pub benchmark: Benchmark,
    pub alpha: f64,
    pub n: usize,
    pub m: usize,
    /// Minimal number of extra buyers; `None` when the cap was reached first.
    pub c_star: Option<usize>,
    pub cap: usize,
    /// VCG revenue at `c_star`, or at the cap when unbounded.
    pub vcg_at_c: f64,
    pub benchmark_value: f64,
    /// `vcg_at_c - alpha * benchmark_value`.
    pub margin: f64,
    /// VCG revenue never decreased along the scan.
    pub vcg_monotone: bool,
}

impl CcResult {
    pub const CSV_HEADER: &'static str = "benchmark,alpha,n,m,c_star,vcg_at_c,benchmark_value";

    pub fn csv_row(&self) -> String {
        let c = self.c_star.map_or_else(|| "unbounded".to_string(), |c| c.to_string());
        format!(
            "{},{:.11e},{},{},{},{:.11e},{:.11e}",
            self.benchmark, self.alpha, self.n, self.m, c, self.vcg_at_c, self.benchmark_value
        )
    }
}

/// Linear scan `c = 0, 1, ...` for the smallest `c` with
/// `VCG(n + c) >= alpha * benchmark`.
pub fn competition_complexity(q: &CcQuery) -> Result<CcResult> {
    q.validate()?;
    let bench = q.benchmark_value()?;
    let target = q.alpha * bench;
    let slack = CC_TOL * target.abs().max(1.0);
    let mut monotone = true;
    let mut prev = f64::NEG_INFINITY;
    let mut result = CcResult {
        benchmark: q.benchmark,
        alpha: q.alpha,
        n: q.n,
        m: q.m(),
        c_star: None,
        cap: q.cap(),
        vcg_at_c: 0.0,
        benchmark_value: bench,
        margin: 0.0,
        vcg_monotone: true,
    };
    for c in 0..=q.cap() {
        let vcg = vcg_revenue(&q.stages, q.n + c)?;
        if vcg < prev - slack {
            monotone = false;
        }
        prev = vcg;
        result.vcg_at_c = vcg;
        if vcg >= target - slack {
            result.c_star = Some(c);
            break;
        }
    }
    if let Some(c) = result.c_star.filter(|&c| c > 0) {
        let below = vcg_revenue(&q.stages, q.n + c - 1)?;
        debug_assert!(below < target - slack, "scan skipped a smaller c");
    }
    result.margin = result.vcg_at_c - target;
    result.vcg_monotone = monotone;
    Ok(result)
}

/// Principal branch of the Lambert W function on `[0, inf)` by Newton's method.
pub fn lambert_w0(x: f64) -> f64 {
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 || x.is_infinite() {
        return x;
    }
    let mut w = if x < 1.0 {
        x.ln_1p()
    } else if x < std::f64::consts::E {
        1.0
    } else {
        x.ln() - x.ln().ln()
    };
    for _ in 0..100 {
        let ew = w.exp();
        let step = (w * ew - x) / (ew * (w + 1.0));
        w -= step;
        if step.abs() <= 1e-15 * w.abs().max(1.0) {
            break;
        }
    }
    w
}

/// `(m - 1) W(n e / (m - 1)) - n`, the real-valued crossing point of the
/// lower-bound construction.
pub fn lambert_cc_estimate(n: usize, m: usize) -> Result<f64> {
    if n == 0 || m < 2 {
        return domain("estimate needs n >= 1 and m >= 2");
    }
    let k = (m - 1) as f64;
    Ok(k * lambert_w0(n as f64 * std::f64::consts::E / k) - n as f64)
}

/// The lower-bound construction: `m - 1` truncated Exp(1) stages and a final
/// equal-revenue stage capped at `er_cap`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundAuction {
    pub n: usize,
    pub m: usize,
    pub c: usize,
    /// Revenue of first-price stages plus the free final-stage lottery, `(m-1) E[X_{1:n}]`.
    pub auction_revenue: f64,
    /// `(m-1) E[X_{2:n+c}] + E[Y_{2:n+c}]`.
    pub vcg_revenue: f64,
}

fn lower_bound_stages(m: usize, exp_cap: f64, er_cap: f64) -> (ContinuousDist, ContinuousDist, usize) {
    let x = ContinuousDist::truncated(ContinuousDist::exponential(1.0), exp_cap);
    let y = ContinuousDist::equal_revenue(Some(er_cap));
    (x, y, m - 1)
}

pub fn lower_bound_auction_revenue(n: usize, m: usize, c: usize, exp_cap: f64, er_cap: f64) -> Result<LowerBoundAuction> {
    if n == 0 || m < 2 {
        return domain("construction needs n >= 1 and m >= 2");
    }
    let (x, y, k) = lower_bound_stages(m, exp_cap, er_cap);
    let stages = [Distribution::Continuous(x.clone()), Distribution::Continuous(y)];
    let t = n + c;
    let vcg = if t == 1 { 0.0 } else { k as f64 * stages[0].expected_order_stat(2, t)? + stages[1].expected_order_stat(2, t)? };
    Ok(LowerBoundAuction {
        n,
        m,
        c,
        auction_revenue: k as f64 * x.expected_order_stat(1, n)?,
        vcg_revenue: vcg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingReport {
    pub n: usize,
    pub m: usize,
    /// Smallest `c` with VCG revenue at least the construction's revenue.
    pub c_star: usize,
    pub estimate: f64,
}

impl CrossingReport {
    /// The scan agrees with the estimate (floored at zero) to within one buyer.
    pub fn within_one(&self) -> bool {
        (self.c_star as f64 - self.estimate.max(0.0)).abs() <= 1.0
    }
}

pub fn lower_bound_crossing(n: usize, m: usize, exp_cap: f64, er_cap: f64) -> Result<CrossingReport> {
    let estimate = lambert_cc_estimate(n, m)?;
    for c in 0..=CAP_FACTOR * n {
        let r = lower_bound_auction_revenue(n, m, c, exp_cap, er_cap)?;
        if r.vcg_revenue >= r.auction_revenue * (1.0 - CROSSING_TOL) {
            return Ok(CrossingReport { n, m, c_star: c, estimate });
        }
    }
    Err(Error::Size(format!("no crossing within {} extra buyers", CAP_FACTOR * n)))
}

/// Stage with value `2^i` w.p. `2^-i` for `i = 1..=top` and `0` with the leftover `2^-top`.
pub fn halving_stage(top: u32) -> DiscreteDist {
    let mut support = vec![0.0];
    let mut probs = vec![0.5f64.powi(top as i32)];
    for i in 1..=top as i32 {
        support.push(2f64.powi(i));
        probs.push(0.5f64.powi(i));
    }
    DiscreteDist::new(support, probs).expect("halving probabilities sum to one")
}

/// Single buyer, two independent halving stages with tops `depth` and `2^depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalvingInstance {
    pub instance: DynamicInstance,
    /// Revenue of charging the first-stage report and giving the second item
    /// away with probability `report / E[X_2]`.
    pub dynamic_revenue: f64,
    pub myerson: [f64; 2],
}

impl HalvingInstance {
    pub fn stagewise_myerson(&self) -> f64 {
        self.myerson[0] + self.myerson[1]
    }
}

pub fn halving_instance(depth: u32) -> Result<HalvingInstance> {
    if depth == 0 {
        return domain("depth must be at least 1");
    }
    if depth > MAX_EXAMPLE_DEPTH {
        return Err(Error::Size(format!("depth {depth} exceeds the cap of {MAX_EXAMPLE_DEPTH}")));
    }
    let stages = [halving_stage(depth), halving_stage(1 << depth)];
    let myerson = [
        myerson::myerson_revenue(&stages[0], 1, DEFAULT_PROFILE_CAP)?,
        myerson::myerson_revenue(&stages[1], 1, DEFAULT_PROFILE_CAP)?,
    ];
    let dynamic_revenue = stages[0].mean();
    let instance = DynamicInstance::independent(1, stages.to_vec(), IrMode::ExPost)?;
    Ok(HalvingInstance { instance, dynamic_revenue, myerson })
}

/// First-stage menu option: pay `fee`, win item 1 with `prob`, then buy item 2
/// at `second_price`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MenuOption {
    pub fee: f64,
    pub prob: f64,
    pub second_price: f64,
}

impl MenuOption {
    /// Utility and payment of a buyer with values `(v1, v2)` who picks this
    /// option and then buys item 2 whenever it is weakly worth it.
    pub fn outcome(&self, v1: f64, v2: f64) -> (f64, f64) {
        let buys = v2 >= self.second_price;
        let u = self.prob * v1 - self.fee + if buys { v2 - self.second_price } else { 0.0 };
        let pay = self.fee + if buys { self.second_price } else { 0.0 };
        (u, pay)
    }
}

/// Best response of one first-stage type. Choice `None` is walking away.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuyerChoice {
    pub v1: f64,
    pub v2: f64,
    pub prob: f64,
    /// Option index the construction assigns to this type.
    pub assigned: usize,
    /// Every choice attaining the best utility.
    pub best: Vec<Option<usize>>,
    pub utility: f64,
    pub payment: f64,
}

impl BuyerChoice {
    pub fn assigned_is_best(&self) -> bool {
        self.best.contains(&Some(self.assigned))
    }
}

/// Correlation that raises revenue: a menu auction on the correlated process
/// beats every auction on the independent one.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRaises {
    pub param: u32,
    pub correlated: DynamicInstance,
    pub independent: DynamicInstance,
    pub menu: [MenuOption; 2],
    pub choices: Vec<BuyerChoice>,
    /// Revenue when each type takes its assigned option.
    pub menu_revenue: f64,
    /// `2^(n-1) + 2^n + 2^(n+1)`.
    pub menu_revenue_closed_form: f64,
    /// `Mye[X_1] + E[X_2]`, an upper bound for independent stages.
    pub independent_bound: f64,
    /// `2^(n+1) + (4/3) 2^n + (2/3) 2^-n`.
    pub independent_bound_closed_form: f64,
}

/// Correlation that lowers revenue: the correlated chain is capped at 3 while
/// independent stages with the same marginals earn more.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationLowers {
    pub param: u32,
    pub correlated: DynamicInstance,
    pub independent: DynamicInstance,
    /// Lagrangian of the stage-1 dominance flow.
    pub correlated_bound: f64,
    /// Price 1 in stage 1, then price 2.
    pub posted_price_revenue: f64,
    /// `E[X_1] + Mye[X_2]`, achieved on independent stages.
    pub independent_lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonMonotonicity {
    pub raises: CorrelationRaises,
    pub lowers: CorrelationLowers,
}

fn check_param(n: u32) -> Result<()> {
    if n < 2 {
        return domain("the correlation instances need n >= 2");
    }
    if n > MAX_CORRELATION_PARAM {
        return Err(Error::Size(format!("parameter {n} exceeds the cap of {MAX_CORRELATION_PARAM}")));
    }
    Ok(())
}

/// `w_i = 2^-i` for `i < len` and the last weight repeated so they sum to one.
fn halving_weights(len: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (1..len as i32).map(|i| 0.5f64.powi(i)).collect();
    w.push(0.5f64.powi(len as i32 - 1));
    w
}

fn point_chain(first: &DiscreteDist, second: &[f64]) -> Result<ValueProcess> {
    let children = second.iter().map(|&v| ProcessNode::leaf(DiscreteDist::point_mass(v))).collect();
    Ok(ValueProcess::Conditional(ProcessNode::new(first.clone(), children)?))
}

pub fn correlation_raises_revenue(n: u32) -> Result<CorrelationRaises> {
    check_param(n)?;
    let p = |e: i32| 2f64.powi(e);
    let ni = n as i32;
    let w = halving_weights(n as usize + 1);
    // X1 = 2^(n+i); X2 = 2^(n+1) after the lowest value, 2^(n+2-i) otherwise
    let v1: Vec<f64> = (1..=ni + 1).map(|i| p(ni + i)).collect();
    let v2: Vec<f64> = (1..=ni + 1).map(|i| if i == 1 { p(ni + 1) } else { p(ni + 2 - i) }).collect();
    let first = DiscreteDist::new(v1.clone(), w.clone())?;
    let mut pairs: Vec<(f64, f64)> = v2.iter().cloned().zip(w.iter().cloned()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let second = DiscreteDist::new(pairs.iter().map(|x| x.0).collect(), pairs.iter().map(|x| x.1).collect())?;

    let correlated = DynamicInstance::new(1, point_chain(&first, &v2)?, IrMode::ExPost)?;
    let independent = DynamicInstance::independent(1, vec![first.clone(), second.clone()], IrMode::ExPost)?;

    let menu = [
        MenuOption { fee: p(ni), prob: 0.5, second_price: p(ni + 1) },
        MenuOption { fee: p(ni + 2), prob: 1.0, second_price: 0.0 },
    ];
    let mut choices = Vec::with_capacity(v1.len());
    let mut menu_revenue = 0.0;
    for (idx, ((&a, &b), &q)) in v1.iter().zip(&v2).zip(&w).enumerate() {
        let assigned = usize::from(idx != 0);
        let outcomes = [(None, 0.0), (Some(0), menu[0].outcome(a, b).0), (Some(1), menu[1].outcome(a, b).0)];
        let top = outcomes.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
        let best = outcomes.iter().filter(|o| o.1 >= top - 1e-9 * top.abs().max(1.0)).map(|o| o.0).collect();
        let (utility, payment) = menu[assigned].outcome(a, b);
        menu_revenue += q * payment;
        choices.push(BuyerChoice { v1: a, v2: b, prob: q, assigned, best, utility, payment });
    }

    let independent_bound = myerson::myerson_revenue(&first, 1, DEFAULT_PROFILE_CAP)? + second.mean();
    Ok(CorrelationRaises {
        param: n,
        correlated,
        independent,
        menu,
        choices,
        menu_revenue,
        menu_revenue_closed_form: p(ni - 1) + p(ni) + p(ni + 1),
        independent_bound,
        independent_bound_closed_form: p(ni + 1) + 4.0 / 3.0 * p(ni) + 2.0 / 3.0 * p(-ni),
    })
}

pub fn correlation_lowers_revenue(n: u32) -> Result<CorrelationLowers> {
    check_param(n)?;
    let w = halving_weights(n as usize + 1);
    let v1: Vec<f64> = (1..=n + 1).map(f64::from).collect();
    let v2: Vec<f64> = v1.iter().map(|v| v.exp2()).collect();
    let first = DiscreteDist::new(v1, w.clone())?;
    let second = DiscreteDist::new(v2.clone(), w)?;
    let correlated = DynamicInstance::new(1, point_chain(&first, &v2)?, IrMode::ExPost)?;
    let independent = DynamicInstance::independent(1, vec![first.clone(), second.clone()], IrMode::ExPost)?;

    let flow = duality_flows::flow_correlated_dominance(&correlated, 1)?;
    let correlated_bound = duality_flows::lagrangian_bound(&correlated, &flow)?;
    let posted_price_revenue = first.prob_at_least(1.0) + 2.0 * second.prob_at_least(2.0);
    let independent_lower_bound = first.mean() + myerson::myerson_revenue(&second, 1, DEFAULT_PROFILE_CAP)?;
    Ok(CorrelationLowers {
        param: n,
        correlated,
        independent,
        correlated_bound,
        posted_price_revenue,
        independent_lower_bound,
    })
}

pub fn nonmonotonicity_instances(n: u32) -> Result<NonMonotonicity> {
    Ok(NonMonotonicity { raises: correlation_raises_revenue(n)?, lowers: correlation_lowers_revenue(n)? })
}
