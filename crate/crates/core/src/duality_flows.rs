//! Dual flows for the ex-post IR dynamic LP.
//!
//! A flow puts a non-negative multiplier on periodic IC rows (a transfer from
//! the true value `from` to the reported value `to`) and on ex-post IR rows
//! (absorbed at node `from`). Dualizing those rows leaves the Lagrangian
//! coefficients `c = objective + A^T y` over the LP's columns. A flow is useful
//! when every payment coefficient vanishes; then the largest value of `c_x · x`
//! over feasible allocations bounds the optimal revenue from above.
//!
//! Flows are always interpreted against the ex-post IR LP from
//! [`build_lp`], whatever IR mode the instance carries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dist_core::DiscreteDist;
use crate::dynamic_lp::{build_lp, DynamicInstance, IrMode, Layout, LpProblem, RowKey, ValueProcess, DEFAULT_NNZ_CAP};
use crate::error::{domain, Error, Result};
use crate::myerson;

/// Largest payment coefficient a useful flow may leave behind.
pub const CONSERVATION_TOL: f64 = 1e-9;

/// Multipliers this far below zero are rejected.
const NEGATIVE_TOL: f64 = 1e-12;

/// Below this, routed amounts count as zero.
const ZERO: f64 = 1e-14;

/// Enumeration cap for multi-buyer Myerson revenue in the stage bounds.
const MYERSON_PROFILE_CAP: u64 = 10_000_000;

/// One multiplier. `past` holds every buyer's value indices before `stage`.
/// With `to` set the entry is a same-stage transfer `from -> to` for `buyer`;
/// without it, flow absorbed at node `from`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowEntry {
    pub stage: usize,
    pub buyer: usize,
    pub past: Vec<Vec<usize>>,
    pub from: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<usize>,
    pub value: f64,
}

/// Sparse dual solution; zero entries are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSolution {
    pub n: usize,
    pub stages: usize,
    pub entries: Vec<FlowEntry>,
}

impl FlowSolution {
    pub fn zero(n: usize, stages: usize) -> Self {
        Self { n, stages, entries: Vec::new() }
    }

    /// Smallest multiplier, or 0 for the empty flow.
    pub fn min_multiplier(&self) -> f64 {
        self.entries.iter().map(|e| e.value).fold(0.0, f64::min)
    }

    /// Value of the entry matching the given coordinates, 0 if absent.
    pub fn value(&self, stage: usize, buyer: usize, past: &[Vec<usize>], from: usize, to: Option<usize>) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.stage == stage && e.buyer == buyer && e.past == past && e.from == from && e.to == to)
            .map(|e| e.value)
            .sum()
    }

    fn from_rows(layout: &Layout, rows: &BTreeMap<RowKey, f64>) -> Self {
        let entries = rows
            .iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|(key, &value)| {
                let (stage, buyer, past, from, to) = match *key {
                    RowKey::Pic { stage, buyer, past, truth, report } => (stage, buyer, past, truth, Some(report)),
                    RowKey::ExPostIr { stage, buyer, past, value } => (stage, buyer, past, value, None),
                    _ => unreachable!("flows only use IC and ex-post IR rows"),
                };
                let past = layout
                    .profile_hists(stage - 1, past)
                    .into_iter()
                    .map(|h| layout.space.decode(stage - 1, h))
                    .collect();
                FlowEntry { stage, buyer, past, from, to, value }
            })
            .collect();
        Self { n: layout.n, stages: layout.stages(), entries }
    }
}

fn row_key(layout: &Layout, e: &FlowEntry) -> Result<RowKey> {
    let (n, m) = (layout.n, layout.stages());
    if e.stage == 0 || e.stage > m || e.buyer >= n || e.past.len() != n {
        return domain(format!("flow entry at stage {} buyer {} does not fit the instance", e.stage, e.buyer));
    }
    let width = layout.space.support(e.stage).len();
    if e.from >= width || e.to.is_some_and(|t| t >= width || t == e.from) {
        return domain(format!("flow entry at stage {} has bad endpoints", e.stage));
    }
    let mut hists = Vec::with_capacity(n);
    for idx in &e.past {
        if idx.len() != e.stage - 1 || idx.iter().enumerate().any(|(t, &a)| a >= layout.space.support(t + 1).len()) {
            return domain(format!("flow entry at stage {} has a malformed history", e.stage));
        }
        hists.push(layout.space.encode(idx));
    }
    let past = layout.profile_id(e.stage - 1, &hists);
    Ok(match e.to {
        Some(report) => RowKey::Pic { stage: e.stage, buyer: e.buyer, past, truth: e.from, report },
        None => RowKey::ExPostIr { stage: e.stage, buyer: e.buyer, past, value: e.from },
    })
}

fn expost_lp(instance: &DynamicInstance) -> Result<LpProblem> {
    build_lp(&instance.with_ir(IrMode::ExPost), DEFAULT_NNZ_CAP)
}

fn add_row(lp: &LpProblem, c: &mut [f64], key: &RowKey, y: f64) -> Result<()> {
    let r = lp
        .row_index(key)
        .ok_or_else(|| Error::Domain(format!("no LP row for flow entry {key:?}")))?;
    for &(col, a) in &lp.rows[r].coeffs {
        c[col] += y * a;
    }
    Ok(())
}

/// Lagrangian coefficients `objective + A^T y` over the full ex-post LP.
fn coefficients(lp: &LpProblem, flow: &FlowSolution) -> Result<Vec<f64>> {
    let layout = &lp.layout;
    if flow.n != layout.n || flow.stages != layout.stages() {
        return domain(format!(
            "flow is for n = {}, m = {} but the instance has n = {}, m = {}",
            flow.n,
            flow.stages,
            layout.n,
            layout.stages()
        ));
    }
    let mut c = lp.objective.clone();
    for e in &flow.entries {
        if !e.value.is_finite() || e.value < -NEGATIVE_TOL {
            return domain(format!("multiplier {} at stage {} is negative", e.value, e.stage));
        }
        add_row(lp, &mut c, &row_key(layout, e)?, e.value)?;
    }
    Ok(c)
}

fn payment_residual(c: &[f64]) -> f64 {
    (1..c.len()).step_by(2).map(|col| c[col].abs()).fold(0.0, f64::max)
}

/// Largest absolute payment coefficient left by the flow (0 for a useful flow).
pub fn check_conservation(instance: &DynamicInstance, flow: &FlowSolution) -> Result<f64> {
    let lp = expost_lp(instance)?;
    let c = coefficients(&lp, flow)?;
    Ok(payment_residual(&c))
}

fn useful(instance: &DynamicInstance, flow: &FlowSolution) -> Result<(LpProblem, Vec<f64>)> {
    let lp = expost_lp(instance)?;
    let c = coefficients(&lp, flow)?;
    let r = payment_residual(&c);
    if r > CONSERVATION_TOL {
        return domain(format!("flow is not useful: conservation residual {r:e}"));
    }
    Ok((lp, c))
}

/// Induced virtual values, flattened per stage as `[profile * n + buyer]`.
/// Zero-probability profiles have no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualValueTable {
    pub n: usize,
    pub phi: Vec<Vec<Option<f64>>>,
}

impl VirtualValueTable {
    pub fn get(&self, stage: usize, profile: usize, buyer: usize) -> Option<f64> {
        self.phi[stage - 1][profile * self.n + buyer]
    }
}

/// `Φ = c_x / f` at every positive-probability profile.
pub fn induced_virtuals(instance: &DynamicInstance, flow: &FlowSolution) -> Result<VirtualValueTable> {
    let (lp, c) = useful(instance, flow)?;
    let layout = &lp.layout;
    let n = layout.n;
    let phi = (1..=layout.stages())
        .map(|k| {
            let mut out = vec![None; layout.stage_len(k)];
            for pid in 0..layout.profiles(k) {
                let f = layout.profile_prob(k, &layout.profile_hists(k, pid));
                if f > 0.0 {
                    for i in 0..n {
                        out[pid * n + i] = Some(c[layout.col_x(k, pid, i)] / f);
                    }
                }
            }
            out
        })
        .collect();
    Ok(VirtualValueTable { n, phi })
}

/// Maximum of the Lagrangian over feasible allocations: per profile, the item
/// goes to the largest positive coefficient.
pub fn lagrangian_bound(instance: &DynamicInstance, flow: &FlowSolution) -> Result<f64> {
    let (lp, c) = useful(instance, flow)?;
    let layout = &lp.layout;
    let mut total = 0.0;
    for k in 1..=layout.stages() {
        for pid in 0..layout.profiles(k) {
            let best = (0..layout.n).map(|i| c[layout.col_x(k, pid, i)]).fold(0.0, f64::max);
            total += best;
        }
    }
    Ok(total)
}

fn independent_stages(instance: &DynamicInstance) -> Result<&[DiscreteDist]> {
    match &instance.process {
        ValueProcess::Independent(stages) => Ok(stages),
        ValueProcess::Conditional(_) => domain("this flow needs independent stages"),
    }
}

fn check_stage(j: usize, m: usize) -> Result<()> {
    if j == 0 || j > m {
        return domain(format!("stage {j} is outside 1..={m}"));
    }
    Ok(())
}

fn is_regular(dist: &DiscreteDist) -> bool {
    dist.virtual_values().windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12)
}

fn tails(probs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    let mut acc = 0.0;
    for a in (0..probs.len()).rev() {
        acc += probs[a];
        out[a] = acc;
    }
    out
}

/// Canonical flow for `n` buyers and independent stages with the Myerson chain
/// on stage `j`: earlier stages absorb at every node, stage `j` pushes the upper
/// tail one value down, and later stages absorb only below the buyer's lowest
/// stage-`j` value. Refuses an irregular stage `j`.
pub fn flow_general(instance: &DynamicInstance, j: usize) -> Result<FlowSolution> {
    let dists = independent_stages(instance)?;
    let m = dists.len();
    check_stage(j, m)?;
    if !is_regular(&dists[j - 1].pruned()) {
        return domain(format!("stage {j} is irregular; ironed flows are not constructed"));
    }
    let layout = Layout::new(instance.n, instance.space()?)?;
    let space = &layout.space;
    let probs: Vec<Vec<f64>> = dists.iter().map(|d| d.pruned().probs().to_vec()).collect();
    let low_j = probs[j - 1][0];
    let tail_j = tails(&probs[j - 1]);
    let mut rows = BTreeMap::new();
    for k in 1..=m {
        let pk = &probs[k - 1];
        for past in 0..layout.profiles(k - 1) {
            let q = layout.profile_hists(k - 1, past);
            let fq = layout.profile_prob(k - 1, &q);
            if fq <= 0.0 {
                continue;
            }
            for i in 0..layout.n {
                let absorb = |rows: &mut BTreeMap<RowKey, f64>, scale: f64| {
                    for (a, p) in pk.iter().enumerate() {
                        rows.insert(RowKey::ExPostIr { stage: k, buyer: i, past, value: a }, scale * p);
                    }
                };
                if k < j {
                    absorb(&mut rows, fq);
                } else if k == j {
                    rows.insert(RowKey::ExPostIr { stage: k, buyer: i, past, value: 0 }, fq);
                    for a in 1..pk.len() {
                        rows.insert(RowKey::Pic { stage: k, buyer: i, past, truth: a, report: a - 1 }, fq * tail_j[a]);
                    }
                } else if space.decode(k - 1, q[i])[j - 1] == 0 {
                    absorb(&mut rows, fq / low_j);
                }
            }
        }
    }
    Ok(FlowSolution::from_rows(&layout, &rows))
}

fn single_buyer_two_stages(instance: &DynamicInstance) -> Result<(Vec<f64>, Vec<f64>)> {
    let dists = independent_stages(instance)?;
    if instance.n != 1 || dists.len() != 2 {
        return domain("this flow needs one buyer and two stages");
    }
    Ok((dists[0].pruned().probs().to_vec(), dists[1].pruned().probs().to_vec()))
}

fn node(stage: usize, past: &[usize], from: usize, to: Option<usize>, value: f64) -> FlowEntry {
    FlowEntry { stage, buyer: 0, past: vec![past.to_vec()], from, to, value }
}

/// One buyer, two independent stages: absorb all of stage 1 and run the
/// Myerson chain in stage 2. Bound `E[X_1] + Mye[X_2]` when stage 2 is regular.
pub fn flow_expectation_myerson(instance: &DynamicInstance) -> Result<FlowSolution> {
    let (f1, f2) = single_buyer_two_stages(instance)?;
    let t2 = tails(&f2);
    let mut entries = Vec::new();
    for (a, &p) in f1.iter().enumerate() {
        entries.push(node(1, &[], a, None, p));
        entries.push(node(2, &[a], 0, None, p));
        for b in 1..f2.len() {
            entries.push(node(2, &[a], b, Some(b - 1), p * t2[b]));
        }
    }
    Ok(FlowSolution { n: 1, stages: 2, entries })
}

/// One buyer, two independent stages: Myerson chain in stage 1, everything
/// collected at the lowest first value, whose children absorb `f(v_2)`.
pub fn flow_myerson_expectation(instance: &DynamicInstance) -> Result<FlowSolution> {
    let (f1, f2) = single_buyer_two_stages(instance)?;
    let t1 = tails(&f1);
    let mut entries = vec![node(1, &[], 0, None, 1.0)];
    for a in 1..f1.len() {
        entries.push(node(1, &[], a, Some(a - 1), t1[a]));
    }
    for (b, &p) in f2.iter().enumerate() {
        entries.push(node(2, &[0], b, None, p));
    }
    Ok(FlowSolution { n: 1, stages: 2, entries })
}

/// A pair of histories whose conditional next-stage distributions are out of
/// order: `lower <= upper` coordinatewise, yet `P[X_stage >= value | upper]`
/// falls below the same probability given `lower`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceWitness {
    pub stage: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceCheck {
    pub holds: bool,
    pub witness: Option<DominanceWitness>,
}

/// Whether higher histories always have stochastically larger next values.
pub fn check_dominance(instance: &DynamicInstance) -> Result<DominanceCheck> {
    let space = instance.space()?;
    for k in 2..=space.stages() {
        let width = space.support(k).len();
        let on: Vec<(Vec<usize>, Vec<f64>)> = (0..space.histories(k - 1))
            .filter(|&h| space.on_path(k - 1, h))
            .map(|h| {
                let probs: Vec<f64> = (0..width).map(|a| space.cond(k, space.child(k, h, a))).collect();
                (space.decode(k - 1, h), tails(&probs))
            })
            .collect();
        for (lo, tl) in &on {
            for (hi, th) in &on {
                if lo == hi || lo.iter().zip(hi).any(|(a, b)| a > b) {
                    continue;
                }
                if let Some(a) = (0..width).find(|&a| th[a] < tl[a] - 1e-12) {
                    let vals = |idx: &[usize]| idx.iter().enumerate().map(|(t, &x)| space.support(t + 1)[x]).collect();
                    return Ok(DominanceCheck {
                        holds: false,
                        witness: Some(DominanceWitness {
                            stage: k,
                            lower: vals(lo),
                            upper: vals(hi),
                            value: space.support(k)[a],
                        }),
                    });
                }
            }
        }
    }
    Ok(DominanceCheck { holds: true, witness: None })
}

/// Single-buyer flow for correlated stages under stochastic dominance, with the
/// Myerson chain on stage `j` (within each history).
///
/// Stages are filled in order. A node's pending payment coefficient splits into
/// the share of its parent's absorbed flow (`cond * kappa(parent)`) and the
/// imbalance left by earlier-stage transfers between sibling histories. Before
/// `j` everything is absorbed in place; at `j` everything is chained down the
/// values; after `j` the inherited share is absorbed in place and the imbalance
/// is chained down, which dominance keeps non-negative. Before the last stage a
/// chain cannot start at a zero-probability value (the LP has no IC row for
/// it); such instances get a domain error.
pub fn flow_correlated_dominance(instance: &DynamicInstance, j: usize) -> Result<FlowSolution> {
    if instance.n != 1 {
        return domain("correlated flows are single-buyer");
    }
    let check = check_dominance(instance)?;
    if let Some(w) = check.witness {
        return domain(format!(
            "stage {} is not dominance ordered: history {:?} puts less mass at or above {} than {:?}",
            w.stage, w.upper, w.value, w.lower
        ));
    }
    let lp = expost_lp(instance)?;
    let layout = &lp.layout;
    let space = &layout.space;
    let m = layout.stages();
    check_stage(j, m)?;
    let mut c = lp.objective.clone();
    let mut rows: BTreeMap<RowKey, f64> = BTreeMap::new();
    let mut kappa_prev = vec![1.0];
    for k in 1..=m {
        let width = space.support(k).len();
        let mut kappa = vec![0.0; space.histories(k)];
        let mut chosen: Vec<(RowKey, f64)> = Vec::new();
        for past in 0..space.histories(k - 1) {
            let nodes: Vec<usize> = (0..width).map(|a| space.child(k, past, a)).collect();
            let pending: Vec<f64> = nodes.iter().map(|&h| c[layout.col_p(k, h, 0)]).collect();
            let (keep, chain): (Vec<f64>, Vec<f64>) = if k < j {
                (pending.clone(), vec![0.0; width])
            } else if k == j {
                (vec![0.0; width], pending.clone())
            } else {
                let keep: Vec<f64> = nodes.iter().map(|&h| space.cond(k, h) * kappa_prev[past]).collect();
                let chain = pending.iter().zip(&keep).map(|(d, q)| d - q).collect();
                (keep, chain)
            };
            let mut absorbed = keep;
            let live: Vec<usize> = (0..width).filter(|&a| chain[a].abs() > ZERO).collect();
            let mut acc = 0.0;
            for t in (0..live.len()).rev() {
                acc += chain[live[t]];
                if t == 0 {
                    absorbed[live[0]] += acc;
                    break;
                }
                if acc < -ZERO {
                    return domain(format!(
                        "stage {k}: transfer out of value {} would be negative ({acc:e})",
                        space.support(k)[live[t]]
                    ));
                }
                if acc > ZERO {
                    let key = RowKey::Pic { stage: k, buyer: 0, past, truth: live[t], report: live[t - 1] };
                    if lp.row_index(&key).is_none() {
                        return domain(format!(
                            "stage {k}: the chain needs a transfer out of the zero-probability value {}",
                            space.support(k)[live[t]]
                        ));
                    }
                    chosen.push((key, acc));
                }
            }
            for (a, &v) in absorbed.iter().enumerate() {
                if v < -ZERO {
                    return domain(format!("stage {k}: negative absorption {v:e} at value {}", space.support(k)[a]));
                }
                if v > ZERO {
                    kappa[nodes[a]] = v;
                    chosen.push((RowKey::ExPostIr { stage: k, buyer: 0, past, value: a }, v));
                }
            }
        }
        for (key, y) in chosen {
            add_row(&lp, &mut c, &key, y)?;
            *rows.entry(key).or_insert(0.0) += y;
        }
        kappa_prev = kappa;
    }
    Ok(FlowSolution::from_rows(layout, &rows))
}

/// `Mye[X_j]` with `n` buyers plus `E[(X_k)_{1:n}]` over the other stages
/// (independent stages; ironed revenue on stage `j`).
pub fn independent_stage_bound(instance: &DynamicInstance, j: usize) -> Result<f64> {
    let dists = independent_stages(instance)?;
    check_stage(j, dists.len())?;
    let mut total = myerson::myerson_revenue(&dists[j - 1], instance.n, MYERSON_PROFILE_CAP)?;
    for (k, d) in dists.iter().enumerate() {
        if k + 1 != j {
            total += d.expected_order_stat(1, instance.n)?;
        }
    }
    Ok(total)
}

/// Smallest [`independent_stage_bound`] and the stage attaining it.
pub fn best_independent_stage_bound(instance: &DynamicInstance) -> Result<(usize, f64)> {
    let m = independent_stages(instance)?.len();
    let mut best = (0, f64::INFINITY);
    for j in 1..=m {
        let b = independent_stage_bound(instance, j)?;
        if b < best.1 {
            best = (j, b);
        }
    }
    Ok(best)
}

/// Single buyer: `E[Mye[X_j | history]] + sum_{k != j} E[X_k]`. Under dominance
/// this bounds the Lagrangian of [`flow_correlated_dominance`] from above.
pub fn conditional_stage_bound(instance: &DynamicInstance, j: usize) -> Result<f64> {
    if instance.n != 1 {
        return domain("the conditional stage bound is single-buyer");
    }
    let space = instance.space()?;
    check_stage(j, space.stages())?;
    let mut total = 0.0;
    for h in (0..space.histories(j - 1)).filter(|&h| space.on_path(j - 1, h)) {
        let cond = space.conditional(j, h).expect("on-path history has children");
        total += space.prob(j - 1, h) * myerson::myerson_revenue(&cond, 1, MYERSON_PROFILE_CAP)?;
    }
    for k in (1..=space.stages()).filter(|&k| k != j) {
        total += space.marginal(k).mean();
    }
    Ok(total)
}
