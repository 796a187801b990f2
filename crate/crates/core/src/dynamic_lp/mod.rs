//! Optimal dynamic mechanisms for `n` i.i.d. buyers over `m` stages as a linear program.
//!
//! Each buyer's values follow the same [`ValueProcess`] (a tree of conditional
//! distributions), independently of the other buyers. The LP has an allocation
//! and a payment per buyer, stage and full report-history profile, periodic IC
//! rows (truthful future play assumed), and either ex-post IR in expectation
//! form or ex-ante IR.
//!
//! Indexing: `V_k` is the set of stage-`k` values that occur with positive
//! probability. A buyer history `h` in `H_k = V_1 x ... x V_k` is a mixed-radix
//! integer with the latest value as the lowest digit. A profile at stage `k` is
//! `sum_i h_i |H_k|^i`.

pub mod simplex;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dist_core::DiscreteDist;
use crate::error::{domain, Error, Result};
use crate::myerson;

/// Default cap on constraint-matrix nonzeros.
pub const DEFAULT_NNZ_CAP: usize = 500_000;
/// Default relative objective tolerance for [`solve_lp`].
pub const DEFAULT_TOL: f64 = 1e-7;
/// Problems whose dense tableau has at most this many entries use the in-crate simplex.
pub const DENSE_TABLEAU_LIMIT: usize = 1_500_000;

/// Per-buyer stochastic process of stage values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueProcess {
    /// Stage values independent across stages.
    Independent(Vec<DiscreteDist>),
    /// Stage-1 distribution at the root; `children[j]` is the process after the
    /// root's `j`-th support value.
    Conditional(ProcessNode),
}

/// Node of a conditional value tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNode", into = "RawNode")]
pub struct ProcessNode {
    pub dist: DiscreteDist,
    pub children: Vec<ProcessNode>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    support: Vec<f64>,
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<ProcessNode>,
}

impl TryFrom<RawNode> for ProcessNode {
    type Error = Error;
    fn try_from(raw: RawNode) -> Result<Self> {
        ProcessNode::new(DiscreteDist::new(raw.support, raw.probs)?, raw.children)
    }
}

impl From<ProcessNode> for RawNode {
    fn from(node: ProcessNode) -> Self {
        RawNode {
            support: node.dist.support().to_vec(),
            probs: node.dist.probs().to_vec(),
            children: node.children,
        }
    }
}

impl ProcessNode {
    pub fn new(dist: DiscreteDist, children: Vec<ProcessNode>) -> Result<Self> {
        if !children.is_empty() && children.len() != dist.len() {
            return domain(format!(
                "node has {} support values but {} children",
                dist.len(),
                children.len()
            ));
        }
        let node = Self { dist, children };
        node.depth()?;
        Ok(node)
    }

    pub fn leaf(dist: DiscreteDist) -> Self {
        Self { dist, children: Vec::new() }
    }

    /// Number of stages below and including this node; all leaves must agree.
    pub fn depth(&self) -> Result<usize> {
        if self.children.is_empty() {
            return Ok(1);
        }
        let d = self.children[0].depth()?;
        for c in &self.children[1..] {
            if c.depth()? != d {
                return domain("all branches of a conditional process must have the same depth");
            }
        }
        Ok(d + 1)
    }
}

impl ValueProcess {
    pub fn stages(&self) -> usize {
        match self {
            Self::Independent(s) => s.len(),
            Self::Conditional(root) => root.depth().unwrap_or(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Independent(s) if s.is_empty() => domain("process needs at least one stage"),
            Self::Independent(_) => Ok(()),
            Self::Conditional(root) => root.depth().map(|_| ()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IrMode {
    ExPost,
    ExAnte,
}

/// `n` i.i.d. buyers with a common value process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct DynamicInstance {
    pub n: usize,
    pub ir_mode: IrMode,
    pub process: ValueProcess,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    n: usize,
    ir_mode: IrMode,
    process: ValueProcess,
}

impl TryFrom<RawInstance> for DynamicInstance {
    type Error = Error;
    fn try_from(raw: RawInstance) -> Result<Self> {
        DynamicInstance::new(raw.n, raw.process, raw.ir_mode)
    }
}

impl From<DynamicInstance> for RawInstance {
    fn from(i: DynamicInstance) -> Self {
        RawInstance { n: i.n, ir_mode: i.ir_mode, process: i.process }
    }
}

impl DynamicInstance {
    pub fn new(n: usize, process: ValueProcess, ir_mode: IrMode) -> Result<Self> {
        if n == 0 {
            return domain("need at least one buyer");
        }
        process.validate()?;
        Ok(Self { n, ir_mode, process })
    }

    pub fn independent(n: usize, stages: Vec<DiscreteDist>, ir_mode: IrMode) -> Result<Self> {
        Self::new(n, ValueProcess::Independent(stages), ir_mode)
    }

    pub fn stages(&self) -> usize {
        self.process.stages()
    }

    pub fn space(&self) -> Result<HistorySpace> {
        HistorySpace::new(&self.process)
    }

    pub fn with_ir(&self, ir_mode: IrMode) -> Self {
        Self { ir_mode, ..self.clone() }
    }
}

/// Single-buyer value histories with their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySpace {
    m: usize,
    independent: bool,
    /// `values[k-1]` is `V_k`.
    values: Vec<Vec<f64>>,
    /// `sizes[k] = |H_k|`, with `sizes[0] = 1`.
    sizes: Vec<usize>,
    /// `prob[k][h]`: probability of history `h` in `H_k`.
    prob: Vec<Vec<f64>>,
    /// `cond[k][h]`: probability of the last value of `h` given its parent.
    cond: Vec<Vec<f64>>,
}

impl HistorySpace {
    pub fn new(process: &ValueProcess) -> Result<Self> {
        process.validate()?;
        let m = process.stages();
        let values: Vec<Vec<f64>> = match process {
            ValueProcess::Independent(stages) => {
                stages.iter().map(|d| d.pruned().support().to_vec()).collect()
            }
            ValueProcess::Conditional(root) => {
                let mut sets: Vec<Vec<f64>> = vec![Vec::new(); m];
                collect_values(root, 0, &mut sets);
                for s in &mut sets {
                    s.sort_by(|a, b| a.total_cmp(b));
                    s.dedup();
                }
                sets
            }
        };
        let mut sizes = vec![1usize];
        for v in &values {
            let next = sizes.last().unwrap().checked_mul(v.len());
            match next {
                Some(s) if s <= 50_000_000 => sizes.push(s),
                _ => return Err(Error::Size("history space too large".into())),
            }
        }
        let mut prob: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
        let mut cond: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
        prob[0][0] = 1.0;
        cond[0][0] = 1.0;
        match process {
            ValueProcess::Independent(stages) => {
                for k in 1..=m {
                    let d = stages[k - 1].pruned();
                    let width = values[k - 1].len();
                    for parent in 0..sizes[k - 1] {
                        for (a, p) in d.probs().iter().enumerate() {
                            let h = parent * width + a;
                            cond[k][h] = *p;
                            prob[k][h] = prob[k - 1][parent] * p;
                        }
                    }
                }
            }
            ValueProcess::Conditional(root) => {
                fill_tree(root, 1, 0, 1.0, &values, &mut prob, &mut cond);
            }
        }
        Ok(Self { m, independent: matches!(process, ValueProcess::Independent(_)), values, sizes, prob, cond })
    }

    pub fn stages(&self) -> usize {
        self.m
    }

    /// True when built from independent stages.
    pub fn is_independent(&self) -> bool {
        self.independent
    }

    /// `V_k` for `k` in `1..=m`.
    pub fn support(&self, k: usize) -> &[f64] {
        &self.values[k - 1]
    }

    /// `|H_k|` for `k` in `0..=m`.
    pub fn histories(&self, k: usize) -> usize {
        self.sizes[k]
    }

    pub fn parent(&self, k: usize, h: usize) -> usize {
        h / self.values[k - 1].len()
    }

    pub fn last(&self, k: usize, h: usize) -> usize {
        h % self.values[k - 1].len()
    }

    pub fn child(&self, k: usize, parent: usize, a: usize) -> usize {
        parent * self.values[k - 1].len() + a
    }

    pub fn value(&self, k: usize, h: usize) -> f64 {
        self.values[k - 1][self.last(k, h)]
    }

    pub fn prob(&self, k: usize, h: usize) -> f64 {
        self.prob[k][h]
    }

    pub fn cond(&self, k: usize, h: usize) -> f64 {
        self.cond[k][h]
    }

    pub fn on_path(&self, k: usize, h: usize) -> bool {
        self.prob[k][h] > 0.0
    }

    /// Value indices `(a_1, ..., a_k)` of a history.
    pub fn decode(&self, k: usize, mut h: usize) -> Vec<usize> {
        let mut out = vec![0; k];
        for t in (1..=k).rev() {
            let w = self.values[t - 1].len();
            out[t - 1] = h % w;
            h /= w;
        }
        out
    }

    pub fn encode(&self, idx: &[usize]) -> usize {
        idx.iter().enumerate().fold(0, |h, (t, &a)| h * self.values[t].len() + a)
    }

    /// Children of `parent` (in `H_{k-1}`) with positive conditional probability.
    pub fn children(&self, k: usize, parent: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let w = self.values[k - 1].len();
        (0..w).filter_map(move |a| {
            let h = parent * w + a;
            let c = self.cond[k][h];
            (c > 0.0 && self.prob[k - 1][parent] > 0.0).then_some((h, c))
        })
    }

    /// Stage-`k` distribution given an on-path parent history.
    pub fn conditional(&self, k: usize, parent: usize) -> Option<DiscreteDist> {
        let (support, probs): (Vec<f64>, Vec<f64>) = self
            .children(k, parent)
            .map(|(h, c)| (self.value(k, h), c))
            .unzip();
        if support.is_empty() {
            return None;
        }
        let total: f64 = probs.iter().sum();
        DiscreteDist::new(support, probs.iter().map(|p| p / total).collect()).ok()
    }

    /// Marginal distribution of the stage-`k` value.
    pub fn marginal(&self, k: usize) -> DiscreteDist {
        let w = self.values[k - 1].len();
        let mut probs = vec![0.0; w];
        for (h, p) in self.prob[k].iter().enumerate() {
            probs[h % w] += p;
        }
        let total: f64 = probs.iter().sum();
        DiscreteDist::new(self.values[k - 1].clone(), probs.iter().map(|p| p / total).collect())
            .expect("marginal of a valid process")
    }
}

fn collect_values(node: &ProcessNode, depth: usize, sets: &mut [Vec<f64>]) {
    for (j, (v, p)) in node.dist.support().iter().zip(node.dist.probs()).enumerate() {
        if *p > 0.0 {
            sets[depth].push(*v);
            if let Some(child) = node.children.get(j) {
                collect_values(child, depth + 1, sets);
            }
        }
    }
}

fn fill_tree(
    node: &ProcessNode,
    k: usize,
    parent: usize,
    path: f64,
    values: &[Vec<f64>],
    prob: &mut [Vec<f64>],
    cond: &mut [Vec<f64>],
) {
    let width = values[k - 1].len();
    for (j, (v, p)) in node.dist.support().iter().zip(node.dist.probs()).enumerate() {
        if *p <= 0.0 {
            continue;
        }
        let a = values[k - 1].iter().position(|x| x == v).expect("value collected");
        let h = parent * width + a;
        cond[k][h] = *p;
        prob[k][h] = path * p;
        if let Some(child) = node.children.get(j) {
            fill_tree(child, k + 1, h, path * p, values, prob, cond);
        }
    }
}

/// Column layout and profile arithmetic shared by the LP, the verifier and flows.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub n: usize,
    pub space: HistorySpace,
    /// Column-pair offset of each stage (index `k`, `1..=m`).
    offsets: Vec<usize>,
}

impl Layout {
    pub fn new(n: usize, space: HistorySpace) -> Result<Self> {
        let m = space.stages();
        let mut offsets = vec![0usize; m + 2];
        for k in 1..=m {
            let profiles = (space.histories(k) as f64).powi(n as i32);
            if profiles > 1e8 {
                return Err(Error::Size(format!("{profiles:.0} report profiles at stage {k}")));
            }
            offsets[k + 1] = offsets[k] + n * space.histories(k).pow(n as u32);
        }
        Ok(Self { n, space, offsets })
    }

    pub fn stages(&self) -> usize {
        self.space.stages()
    }

    /// Number of report-history profiles at stage `k` (`0..=m`).
    pub fn profiles(&self, k: usize) -> usize {
        self.space.histories(k).pow(self.n as u32)
    }

    pub fn profile_id(&self, k: usize, hists: &[usize]) -> usize {
        let base = self.space.histories(k);
        hists.iter().rev().fold(0, |acc, &h| acc * base + h)
    }

    pub fn profile_hists(&self, k: usize, mut id: usize) -> Vec<usize> {
        let base = self.space.histories(k);
        (0..self.n)
            .map(|_| {
                let h = id % base;
                id /= base;
                h
            })
            .collect()
    }

    /// Joint probability of a profile.
    pub fn profile_prob(&self, k: usize, hists: &[usize]) -> f64 {
        hists.iter().map(|&h| self.space.prob(k, h)).product()
    }

    pub fn num_cols(&self) -> usize {
        2 * self.offsets[self.stages() + 1]
    }

    /// Entries per stage in a flattened `[profile * n + buyer]` table.
    pub fn stage_len(&self, k: usize) -> usize {
        self.offsets[k + 1] - self.offsets[k]
    }

    pub fn col_x(&self, k: usize, profile: usize, i: usize) -> usize {
        2 * (self.offsets[k] + profile * self.n + i)
    }

    pub fn col_p(&self, k: usize, profile: usize, i: usize) -> usize {
        self.col_x(k, profile, i) + 1
    }

    /// Decode a column into `(stage, profile, buyer, is_payment)`.
    pub fn decode_col(&self, col: usize) -> (usize, usize, usize, bool) {
        let pair = col / 2;
        let k = (1..=self.stages()).find(|&k| pair < self.offsets[k + 1]).expect("column in range");
        let local = pair - self.offsets[k];
        (k, local / self.n, local % self.n, col % 2 == 1)
    }

    /// Calls `f(next_hists, weight)` for every combination of positive-probability
    /// stage-`k` extensions of the buyers' stage-`k-1` histories, except buyer
    /// `skip`, whose slot is left as given.
    pub fn for_each_extension(&self, k: usize, hists: &[usize], skip: Option<usize>, f: &mut dyn FnMut(&[usize], f64)) {
        let mut next = hists.to_vec();
        self.extend_rec(k, hists, skip, 0, 1.0, &mut next, f);
    }

    #[allow(clippy::too_many_arguments)]
    fn extend_rec(
        &self,
        k: usize,
        hists: &[usize],
        skip: Option<usize>,
        j: usize,
        w: f64,
        next: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize], f64),
    ) {
        if j == self.n {
            f(next, w);
            return;
        }
        if Some(j) == skip {
            self.extend_rec(k, hists, skip, j + 1, w, next, f);
            return;
        }
        let children: Vec<(usize, f64)> = self.space.children(k, hists[j]).collect();
        for (h, c) in children {
            next[j] = h;
            self.extend_rec(k, hists, skip, j + 1, w * c, next, f);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Ge,
    Le,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Identity of an LP row. `past` is a profile id over `H_{k-1}`; values are indices into `V_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowKey {
    /// Buyer with true value `truth` prefers truthful reporting over `report`.
    Pic { stage: usize, buyer: usize, past: usize, truth: usize, report: usize },
    /// Expected stage utility, over the other buyers' current values, is non-negative.
    ExPostIr { stage: usize, buyer: usize, past: usize, value: usize },
    /// Expected continuation utility is non-negative.
    ExAnteIr { stage: usize, buyer: usize, past: usize, value: usize },
    /// At most one unit allocated at a profile.
    Supply { stage: usize, profile: usize },
}

/// The revenue-maximization LP (maximize `objective · z`). Columns alternate
/// allocation and payment as laid out by [`Layout`].
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub layout: Layout,
    pub ir_mode: IrMode,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<LpRow>,
    pub keys: Vec<RowKey>,
    index: HashMap<RowKey, usize>,
}

impl LpProblem {
    pub fn num_cols(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.coeffs.len()).sum()
    }

    pub fn row_index(&self, key: &RowKey) -> Option<usize> {
        self.index.get(key).copied()
    }
}

struct Accumulator {
    dense: Vec<f64>,
    touched: Vec<usize>,
}

impl Accumulator {
    fn new(cols: usize) -> Self {
        Self { dense: vec![0.0; cols], touched: Vec::new() }
    }

    fn add(&mut self, col: usize, v: f64) {
        if self.dense[col] == 0.0 {
            self.touched.push(col);
        }
        self.dense[col] += v;
        if self.dense[col] == 0.0 {
            // keep the column listed; it is filtered on take
            self.dense[col] = -0.0;
        }
    }

    fn take(&mut self) -> Vec<(usize, f64)> {
        self.touched.sort_unstable();
        self.touched.dedup();
        let out = self
            .touched
            .iter()
            .filter(|&&c| self.dense[c] != 0.0)
            .map(|&c| (c, self.dense[c]))
            .collect();
        for &c in &self.touched {
            self.dense[c] = 0.0;
        }
        self.touched.clear();
        out
    }
}

/// Adds `w` times buyer `i`'s utility from stage `k` on (current stage only
/// unless `future`), when her true history is `truth`, her report history is
/// `report`, the others' histories are `hists`, and everyone is truthful later.
#[allow(clippy::too_many_arguments)]
fn add_utility(
    layout: &Layout,
    acc: &mut Accumulator,
    i: usize,
    k: usize,
    truth: usize,
    report: usize,
    hists: &[usize],
    w: f64,
    future: bool,
) {
    let space = &layout.space;
    let mut profile = hists.to_vec();
    profile[i] = report;
    let pid = layout.profile_id(k, &profile);
    acc.add(layout.col_x(k, pid, i), w * space.value(k, truth));
    acc.add(layout.col_p(k, pid, i), -w);
    if !future || k == layout.stages() {
        return;
    }
    let own: Vec<(usize, f64)> = space.children(k + 1, truth).collect();
    for (t_next, c) in own {
        let r_next = space.child(k + 1, report, space.last(k + 1, t_next));
        layout.for_each_extension(k + 1, hists, Some(i), &mut |others, wo| {
            add_utility(layout, acc, i, k + 1, t_next, r_next, others, w * c * wo, true);
        });
    }
}

fn past_on_path(layout: &Layout, k: usize, past: &[usize], except: Option<usize>) -> bool {
    past.iter()
        .enumerate()
        .all(|(j, &h)| Some(j) == except || layout.space.on_path(k - 1, h))
}

/// Build the LP for an instance. Fails with a size error past `nnz_cap` nonzeros.
pub fn build_lp(instance: &DynamicInstance, nnz_cap: usize) -> Result<LpProblem> {
    let layout = Layout::new(instance.n, instance.space()?)?;
    let n = layout.n;
    let m = layout.stages();
    let cols = layout.num_cols();
    let mut objective = vec![0.0; cols];
    let mut lower = vec![0.0; cols];
    let mut upper = vec![1.0; cols];
    for k in 1..=m {
        for pid in 0..layout.profiles(k) {
            let f = layout.profile_prob(k, &layout.profile_hists(k, pid));
            for i in 0..n {
                let c = layout.col_p(k, pid, i);
                objective[c] = f;
                lower[c] = f64::NEG_INFINITY;
                upper[c] = f64::INFINITY;
            }
        }
    }

    let mut rows: Vec<LpRow> = Vec::new();
    let mut keys: Vec<RowKey> = Vec::new();
    let mut nnz = 0usize;
    let mut acc = Accumulator::new(cols);
    let mut push = |key: RowKey, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64, rows: &mut Vec<LpRow>, keys: &mut Vec<RowKey>| -> Result<()> {
        nnz += coeffs.len();
        if nnz > nnz_cap {
            return Err(Error::Size(format!(
                "LP exceeds {nnz_cap} nonzeros after {} rows ({cols} columns)",
                rows.len() + 1
            )));
        }
        rows.push(LpRow { coeffs, sense, rhs });
        keys.push(key);
        Ok(())
    };

    for k in 1..=m {
        let vk = layout.space.support(k).len();
        for past in 0..layout.profiles(k - 1) {
            let q = layout.profile_hists(k - 1, past);
            for i in 0..n {
                let all_on_path = past_on_path(&layout, k, &q, None);
                // periodic IC
                if all_on_path {
                    for a in 0..vk {
                        let t = layout.space.child(k, q[i], a);
                        if !(layout.space.cond(k, t) > 0.0 || k == m) {
                            continue;
                        }
                        for b in (0..vk).filter(|&b| b != a) {
                            let r = layout.space.child(k, q[i], b);
                            layout.for_each_extension(k, &q, Some(i), &mut |others, w| {
                                add_utility(&layout, &mut acc, i, k, t, t, others, w, true);
                                add_utility(&layout, &mut acc, i, k, t, r, others, -w, true);
                            });
                            let key = RowKey::Pic { stage: k, buyer: i, past, truth: a, report: b };
                            push(key, acc.take(), Sense::Ge, 0.0, &mut rows, &mut keys)?;
                        }
                    }
                }
                match instance.ir_mode {
                    IrMode::ExPost if past_on_path(&layout, k, &q, Some(i)) => {
                        for a in 0..vk {
                            let t = layout.space.child(k, q[i], a);
                            layout.for_each_extension(k, &q, Some(i), &mut |others, w| {
                                add_utility(&layout, &mut acc, i, k, t, t, others, w, false);
                            });
                            let key = RowKey::ExPostIr { stage: k, buyer: i, past, value: a };
                            push(key, acc.take(), Sense::Ge, 0.0, &mut rows, &mut keys)?;
                        }
                    }
                    IrMode::ExAnte if all_on_path => {
                        for a in 0..vk {
                            let t = layout.space.child(k, q[i], a);
                            if layout.space.cond(k, t) <= 0.0 {
                                continue;
                            }
                            layout.for_each_extension(k, &q, Some(i), &mut |others, w| {
                                add_utility(&layout, &mut acc, i, k, t, t, others, w, true);
                            });
                            let key = RowKey::ExAnteIr { stage: k, buyer: i, past, value: a };
                            push(key, acc.take(), Sense::Ge, 0.0, &mut rows, &mut keys)?;
                        }
                    }
                    _ => {}
                }
            }
        }
        if n >= 2 {
            for pid in 0..layout.profiles(k) {
                let coeffs = (0..n).map(|i| (layout.col_x(k, pid, i), 1.0)).collect();
                push(RowKey::Supply { stage: k, profile: pid }, coeffs, Sense::Le, 1.0, &mut rows, &mut keys)?;
            }
        }
    }
    let index = keys.iter().enumerate().map(|(r, k)| (*k, r)).collect();
    Ok(LpProblem { layout, ir_mode: instance.ir_mode, objective, lower, upper, rows, keys, index })
}

/// Allocation and payment tables, flattened per stage as `[profile * n + buyer]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSolution {
    pub n: usize,
    /// `x[k-1]`, `p[k-1]` hold stage `k`.
    pub x: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub objective: f64,
}

impl MechanismSolution {
    pub fn zeros(layout: &Layout) -> Self {
        let x: Vec<Vec<f64>> = (1..=layout.stages()).map(|k| vec![0.0; layout.stage_len(k)]).collect();
        Self { n: layout.n, p: x.clone(), x, objective: 0.0 }
    }

    fn from_columns(layout: &Layout, z: &[f64], objective: f64) -> Self {
        let mut sol = Self::zeros(layout);
        for k in 1..=layout.stages() {
            for pid in 0..layout.profiles(k) {
                for i in 0..layout.n {
                    sol.x[k - 1][pid * layout.n + i] = z[layout.col_x(k, pid, i)];
                    sol.p[k - 1][pid * layout.n + i] = z[layout.col_p(k, pid, i)];
                }
            }
        }
        sol.objective = objective;
        sol
    }

    /// Column vector in LP layout.
    pub fn to_columns(&self, layout: &Layout) -> Vec<f64> {
        let mut z = vec![0.0; layout.num_cols()];
        for k in 1..=layout.stages() {
            for pid in 0..layout.profiles(k) {
                for i in 0..layout.n {
                    z[layout.col_x(k, pid, i)] = self.x[k - 1][pid * layout.n + i];
                    z[layout.col_p(k, pid, i)] = self.p[k - 1][pid * layout.n + i];
                }
            }
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Dense tableau for small problems, HiGHS otherwise.
    Auto,
    Dense,
    Highs,
}

/// Solves the LP. Under ex-post IR the returned payments are additionally made
/// pointwise individually rational (see [`pointwise_ir`]), which leaves every
/// LP row and the revenue unchanged.
pub fn solve_lp(lp: &LpProblem, tol: f64) -> Result<MechanismSolution> {
    solve_lp_with(lp, tol, SolverKind::Auto)
}

pub fn solve_lp_with(lp: &LpProblem, tol: f64, kind: SolverKind) -> Result<MechanismSolution> {
    let (raw, expand) = match aggregate_payments(lp) {
        Some(reduced) => reduced,
        None => (RawLp::from(lp), (0..lp.num_cols()).collect()),
    };
    let kind = match kind {
        SolverKind::Auto => {
            let (r, c) = dense_shape(&raw);
            if r * (c + r) <= DENSE_TABLEAU_LIMIT {
                SolverKind::Dense
            } else {
                SolverKind::Highs
            }
        }
        k => k,
    };
    let zr = match kind {
        SolverKind::Dense => solve_dense(&raw, tol)?,
        _ => solve_highs(&raw)?,
    };
    let z: Vec<f64> = expand.iter().map(|&j| zr[j]).collect();
    let objective = lp.objective.iter().zip(&z).map(|(c, v)| c * v).sum();
    let sol = MechanismSolution::from_columns(&lp.layout, &z, objective);
    Ok(match lp.ir_mode {
        IrMode::ExPost => pointwise_ir_in(&lp.layout, &sol),
        IrMode::ExAnte => sol,
    })
}

/// Bare LP data handed to a solver.
struct RawLp {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<LpRow>,
}

impl RawLp {
    fn num_cols(&self) -> usize {
        self.objective.len()
    }

    fn num_rows(&self) -> usize {
        self.rows.len()
    }
}

impl From<&LpProblem> for RawLp {
    fn from(lp: &LpProblem) -> Self {
        Self {
            objective: lp.objective.clone(),
            lower: lp.lower.clone(),
            upper: lp.upper.clone(),
            rows: lp.rows.clone(),
        }
    }
}

/// Exact presolve: every row touches a buyer's stage-`k` payments only through
/// their average over the other buyers' current values, so each such group of
/// payment columns collapses to one variable (its conditional mean). Returns
/// the reduced LP and, per original column, its reduced column; `None` when
/// some row breaks the proportional pattern.
fn aggregate_payments(lp: &LpProblem) -> Option<(RawLp, Vec<usize>)> {
    let layout = &lp.layout;
    let space = &layout.space;
    let n = layout.n;
    let cols = lp.num_cols();
    let mut expand = vec![usize::MAX; cols];
    let mut weight = vec![0.0; cols];
    let mut group_weight: Vec<f64> = Vec::new();
    let mut objective = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut groups: HashMap<(usize, usize, usize, usize), usize> = HashMap::new();
    for k in 1..=layout.stages() {
        for pid in 0..layout.profiles(k) {
            let hists = layout.profile_hists(k, pid);
            let past: Vec<usize> = hists.iter().map(|&h| space.parent(k, h)).collect();
            let past_id = layout.profile_id(k - 1, &past);
            for i in 0..n {
                let cx = layout.col_x(k, pid, i);
                expand[cx] = objective.len();
                objective.push(0.0);
                lower.push(lp.lower[cx]);
                upper.push(lp.upper[cx]);
                group_weight.push(1.0);
                weight[cx] = 1.0;

                let cp = layout.col_p(k, pid, i);
                let key = (k, i, past_id, space.last(k, hists[i]));
                let g = *groups.entry(key).or_insert_with(|| {
                    objective.push(0.0);
                    lower.push(f64::NEG_INFINITY);
                    upper.push(f64::INFINITY);
                    group_weight.push(0.0);
                    objective.len() - 1
                });
                let w: f64 = (0..n).filter(|&j| j != i).map(|j| space.cond(k, hists[j])).product();
                expand[cp] = g;
                weight[cp] = w;
                group_weight[g] += w;
            }
        }
    }
    // coefficient of member j is alpha * weight[j] / group_weight[g]
    let consistent = |entries: &[(usize, f64)]| -> Option<Vec<(usize, f64)>> {
        let mut alpha: HashMap<usize, f64> = HashMap::new();
        for &(j, v) in entries {
            *alpha.entry(expand[j]).or_insert(0.0) += v;
        }
        for &(j, v) in entries {
            let g = expand[j];
            let gw = group_weight[g];
            let want = if gw > 0.0 { alpha[&g] * weight[j] / gw } else { 0.0 };
            if (v - want).abs() > 1e-12 * (1.0 + alpha[&g].abs()) {
                return None;
            }
        }
        let mut out: Vec<(usize, f64)> = alpha.into_iter().filter(|(_, a)| *a != 0.0).collect();
        out.sort_unstable_by_key(|e| e.0);
        Some(out)
    };
    let obj_entries: Vec<(usize, f64)> =
        lp.objective.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, c)| (j, *c)).collect();
    let mut reduced_obj = vec![0.0; objective.len()];
    for (g, a) in consistent(&obj_entries)? {
        reduced_obj[g] = a;
    }
    let mut rows = Vec::with_capacity(lp.num_rows());
    for row in &lp.rows {
        rows.push(LpRow { coeffs: consistent(&row.coeffs)?, sense: row.sense, rhs: row.rhs });
    }
    Some((RawLp { objective: reduced_obj, lower, upper, rows }, expand))
}

fn dense_shape(lp: &RawLp) -> (usize, usize) {
    let bounded = lp.upper.iter().filter(|u| u.is_finite()).count();
    let free = lp.lower.iter().filter(|l| !l.is_finite()).count();
    (lp.num_rows() + bounded, lp.num_cols() + free)
}

fn solve_dense(lp: &RawLp, tol: f64) -> Result<Vec<f64>> {
    // free columns split as z+ - z-; finite upper bounds become rows
    let mut map: Vec<(usize, Option<usize>)> = Vec::with_capacity(lp.num_cols());
    let mut next = 0;
    for j in 0..lp.num_cols() {
        if lp.lower[j].is_finite() {
            if lp.lower[j] != 0.0 {
                return Err(Error::Solver("dense solver expects zero lower bounds".into()));
            }
            map.push((next, None));
            next += 1;
        } else {
            map.push((next, Some(next + 1)));
            next += 2;
        }
    }
    let (rows, cols) = dense_shape(lp);
    debug_assert_eq!(cols, next);
    let mut a = vec![0.0; rows * cols];
    let mut b = vec![0.0; rows];
    for (r, row) in lp.rows.iter().enumerate() {
        let sign = match row.sense {
            Sense::Le => 1.0,
            Sense::Ge => -1.0,
        };
        b[r] = sign * row.rhs;
        for &(j, v) in &row.coeffs {
            let (pos, neg) = map[j];
            a[r * cols + pos] += sign * v;
            if let Some(neg) = neg {
                a[r * cols + neg] -= sign * v;
            }
        }
    }
    let mut r = lp.num_rows();
    for j in 0..lp.num_cols() {
        if lp.upper[j].is_finite() {
            a[r * cols + map[j].0] = 1.0;
            b[r] = lp.upper[j];
            r += 1;
        }
    }
    let mut c = vec![0.0; cols];
    for j in 0..lp.num_cols() {
        let (pos, neg) = map[j];
        c[pos] = lp.objective[j];
        if let Some(neg) = neg {
            c[neg] = -lp.objective[j];
        }
    }
    let sol = simplex::solve(&simplex::DenseLp { rows, cols, a, b, c }, tol * 1e-2)?;
    Ok(map
        .iter()
        .map(|&(pos, neg)| sol.z[pos] - neg.map_or(0.0, |q| sol.z[q]))
        .collect())
}

fn solve_highs(lp: &RawLp) -> Result<Vec<f64>> {
    let mut pb = highs::RowProblem::default();
    let cols: Vec<highs::Col> = (0..lp.num_cols())
        .map(|j| pb.add_column(lp.objective[j], lp.lower[j]..=lp.upper[j]))
        .collect();
    for row in &lp.rows {
        let entries: Vec<(highs::Col, f64)> = row.coeffs.iter().map(|&(j, v)| (cols[j], v)).collect();
        match row.sense {
            Sense::Ge => pb.add_row(row.rhs.., entries),
            Sense::Le => pb.add_row(..=row.rhs, entries),
        }
    }
    let mut model = pb.optimise(highs::Sense::Maximise);
    model.set_option("output_flag", false);
    model.set_option("threads", 1);
    let solved = model.solve();
    if solved.status() != highs::HighsModelStatus::Optimal {
        return Err(Error::Solver(format!("HiGHS status {:?}", solved.status())));
    }
    Ok(solved.get_solution().columns().to_vec())
}

/// Build and solve in one step with default caps.
pub fn optimal_revenue(instance: &DynamicInstance) -> Result<MechanismSolution> {
    let lp = build_lp(instance, DEFAULT_NNZ_CAP)?;
    solve_lp(&lp, DEFAULT_TOL)
}

/// Largest constraint violations of a mechanism, in utility units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub max_pic: f64,
    pub max_ir: f64,
    pub max_supply: f64,
    pub max_bounds: f64,
    /// Largest `p - v x` at a single positive-probability profile. Informational:
    /// the LP imposes ex-post IR only in expectation over the others' current values.
    pub max_pointwise_ir: f64,
    /// Description of the single worst violation.
    pub worst: String,
}

impl VerifyReport {
    pub fn max_violation(&self) -> f64 {
        self.max_pic.max(self.max_ir).max(self.max_supply).max(self.max_bounds)
    }

    fn note(&mut self, slot: fn(&mut Self) -> &mut f64, v: f64, what: impl FnOnce() -> String) {
        if v > self.max_violation() {
            self.worst = what();
        }
        let s = slot(self);
        *s = s.max(v);
    }
}

/// Recomputes every periodic IC, IR and feasibility condition of `sol` by direct
/// evaluation of expected utilities (no LP rows involved).
pub fn verify_mechanism(instance: &DynamicInstance, sol: &MechanismSolution) -> Result<VerifyReport> {
    let layout = Layout::new(instance.n, instance.space()?)?;
    let (n, m) = (layout.n, layout.stages());
    if sol.n != n || sol.x.len() != m || sol.p.len() != m {
        return domain("mechanism dimensions do not match the instance");
    }
    for k in 1..=m {
        if sol.x[k - 1].len() != layout.stage_len(k) || sol.p[k - 1].len() != layout.stage_len(k) {
            return domain(format!("stage {k} tables have the wrong length"));
        }
    }
    let mut rep = VerifyReport { worst: "none".into(), ..Default::default() };
    let space = &layout.space;
    for k in 1..=m {
        let vk = space.support(k).len();
        for past in 0..layout.profiles(k - 1) {
            let q = layout.profile_hists(k - 1, past);
            for i in 0..n {
                let all_on_path = past_on_path(&layout, k, &q, None);
                let expect = |t: usize, r: usize, future: bool| {
                    let mut total = 0.0;
                    layout.for_each_extension(k, &q, Some(i), &mut |others, w| {
                        total += w * utility(&layout, sol, i, k, t, r, others, future);
                    });
                    total
                };
                if all_on_path {
                    for a in 0..vk {
                        let t = space.child(k, q[i], a);
                        if !(space.cond(k, t) > 0.0 || k == m) {
                            continue;
                        }
                        let truthful = expect(t, t, true);
                        for b in (0..vk).filter(|&b| b != a) {
                            let dev = expect(t, space.child(k, q[i], b), true);
                            rep.note(|r| &mut r.max_pic, dev - truthful, || {
                                format!("PIC stage {k} buyer {i} past {past}: value #{a} gains {} by reporting #{b}", dev - truthful)
                            });
                        }
                    }
                }
                let (check, future) = match instance.ir_mode {
                    IrMode::ExPost => (past_on_path(&layout, k, &q, Some(i)), false),
                    IrMode::ExAnte => (all_on_path, true),
                };
                if check {
                    for a in 0..vk {
                        let t = space.child(k, q[i], a);
                        if instance.ir_mode == IrMode::ExAnte && space.cond(k, t) <= 0.0 {
                            continue;
                        }
                        let u = expect(t, t, future);
                        rep.note(|r| &mut r.max_ir, -u, || {
                            format!("IR stage {k} buyer {i} past {past} value #{a}: utility {u}")
                        });
                    }
                }
            }
        }
        for pid in 0..layout.profiles(k) {
            let xs = &sol.x[k - 1][pid * n..(pid + 1) * n];
            let total: f64 = xs.iter().sum();
            rep.note(|r| &mut r.max_supply, total - 1.0, || format!("supply stage {k} profile {pid}: {total}"));
            for (i, &x) in xs.iter().enumerate() {
                let out = (-x).max(x - 1.0);
                rep.note(|r| &mut r.max_bounds, out, || format!("allocation stage {k} profile {pid} buyer {i}: {x}"));
            }
            let hists = layout.profile_hists(k, pid);
            if layout.profile_prob(k, &hists) > 0.0 {
                for (i, &h) in hists.iter().enumerate() {
                    let loss = sol.p[k - 1][pid * n + i] - space.value(k, h) * xs[i];
                    rep.max_pointwise_ir = rep.max_pointwise_ir.max(loss);
                }
            }
        }
    }
    Ok(rep)
}

/// Rewrites payments so that stage utility is non-negative at every profile
/// while keeping each payment's conditional mean over the other buyers'
/// current values: `p'(o) = x(o) E[p] / E[x]`, or `p'(o) = E[p]` when `E[x] = 0`.
/// Every LP row depends on payments only through those means, so PIC and IR
/// values are unchanged.
pub fn pointwise_ir(instance: &DynamicInstance, sol: &MechanismSolution) -> Result<MechanismSolution> {
    Ok(pointwise_ir_in(&Layout::new(instance.n, instance.space()?)?, sol))
}

fn pointwise_ir_in(layout: &Layout, sol: &MechanismSolution) -> MechanismSolution {
    let space = &layout.space;
    let n = layout.n;
    let mut out = sol.clone();
    for k in 1..=layout.stages() {
        // group key: (buyer, past profile, own current history)
        let mut sums: HashMap<(usize, usize, usize), (f64, f64, f64)> = HashMap::new();
        for pid in 0..layout.profiles(k) {
            let hists = layout.profile_hists(k, pid);
            let past: Vec<usize> = hists.iter().map(|&h| space.parent(k, h)).collect();
            let past_id = layout.profile_id(k - 1, &past);
            for i in 0..n {
                let w: f64 = (0..n).filter(|&j| j != i).map(|j| space.cond(k, hists[j])).product();
                let e = sums.entry((i, past_id, hists[i])).or_insert((0.0, 0.0, 0.0));
                e.0 += w;
                e.1 += w * sol.x[k - 1][pid * n + i];
                e.2 += w * sol.p[k - 1][pid * n + i];
            }
        }
        for pid in 0..layout.profiles(k) {
            let hists = layout.profile_hists(k, pid);
            let past: Vec<usize> = hists.iter().map(|&h| space.parent(k, h)).collect();
            let past_id = layout.profile_id(k - 1, &past);
            for i in 0..n {
                let (w, ex, ep) = sums[&(i, past_id, hists[i])];
                if w <= 0.0 {
                    continue;
                }
                let (ex, ep) = (ex / w, ep / w);
                out.p[k - 1][pid * n + i] = if ex > 1e-12 { sol.x[k - 1][pid * n + i] * ep / ex } else { ep };
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn utility(
    layout: &Layout,
    sol: &MechanismSolution,
    i: usize,
    k: usize,
    truth: usize,
    report: usize,
    hists: &[usize],
    future: bool,
) -> f64 {
    let space = &layout.space;
    let n = layout.n;
    let mut profile = hists.to_vec();
    profile[i] = report;
    let pid = layout.profile_id(k, &profile);
    let mut u = space.value(k, truth) * sol.x[k - 1][pid * n + i] - sol.p[k - 1][pid * n + i];
    if future && k < layout.stages() {
        for (t_next, c) in space.children(k + 1, truth).collect::<Vec<_>>() {
            let r_next = space.child(k + 1, report, space.last(k + 1, t_next));
            layout.for_each_extension(k + 1, hists, Some(i), &mut |others, wo| {
                u += c * wo * utility(layout, sol, i, k + 1, t_next, r_next, others, true);
            });
        }
    }
    u
}

/// Outcome of perturbing payments one at a time and re-verifying.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationScan {
    /// Number of payment entries perturbed.
    pub checked: usize,
    /// Smallest worst-violation seen over all perturbed entries.
    pub min_detected: f64,
    /// `(stage, profile, buyer)` of the entry achieving `min_detected`.
    pub weakest: (usize, usize, usize),
}

/// Adds `delta` to each payment at a positive-probability profile in turn and
/// records the largest violation [`verify_mechanism`] reports.
pub fn payment_perturbation_scan(
    instance: &DynamicInstance,
    sol: &MechanismSolution,
    delta: f64,
) -> Result<PerturbationScan> {
    let layout = Layout::new(instance.n, instance.space()?)?;
    let n = layout.n;
    let mut scan = PerturbationScan { checked: 0, min_detected: f64::INFINITY, weakest: (0, 0, 0) };
    let mut probe = sol.clone();
    for k in 1..=layout.stages() {
        for pid in 0..layout.profiles(k) {
            if layout.profile_prob(k, &layout.profile_hists(k, pid)) <= 0.0 {
                continue;
            }
            for i in 0..n {
                let e = pid * n + i;
                probe.p[k - 1][e] += delta;
                let v = verify_mechanism(instance, &probe)?.max_violation();
                probe.p[k - 1][e] = sol.p[k - 1][e];
                scan.checked += 1;
                if v < scan.min_detected {
                    scan.min_detected = v;
                    scan.weakest = (k, pid, i);
                }
            }
        }
    }
    Ok(scan)
}

/// Expected revenue `sum_k sum_profiles f(profile) sum_i p`.
pub fn expected_revenue(instance: &DynamicInstance, sol: &MechanismSolution) -> Result<f64> {
    let layout = Layout::new(instance.n, instance.space()?)?;
    let mut total = 0.0;
    for k in 1..=layout.stages() {
        for pid in 0..layout.profiles(k) {
            let f = layout.profile_prob(k, &layout.profile_hists(k, pid));
            if f > 0.0 {
                total += f * sol.p[k - 1][pid * layout.n..(pid + 1) * layout.n].iter().sum::<f64>();
            }
        }
    }
    Ok(total)
}

/// Social-welfare upper bound `sum_k E[(X_k)_{1:n}]` over the stage marginals.
pub fn welfare_bound(instance: &DynamicInstance) -> Result<f64> {
    let space = instance.space()?;
    (1..=space.stages())
        .map(|k| space.marginal(k).expected_order_stat(1, instance.n))
        .sum()
}

/// Runs the ironed Myerson auction independently in every stage (independent
/// stages only). Ties among top ironed virtual values split the item evenly;
/// payments are the discrete threshold payments.
pub fn stagewise_myerson(instance: &DynamicInstance) -> Result<MechanismSolution> {
    let ValueProcess::Independent(stages) = &instance.process else {
        return domain("stage-wise Myerson needs independent stages");
    };
    let layout = Layout::new(instance.n, instance.space()?)?;
    let n = layout.n;
    let space = &layout.space;
    let mut sol = MechanismSolution::zeros(&layout);
    for k in 1..=layout.stages() {
        let iv = myerson::ironed_virtuals(&stages[k - 1]);
        let values = space.support(k);
        let alloc = |idx: &[usize]| -> Vec<f64> {
            let phis: Vec<f64> = idx.iter().map(|&a| iv.virtuals[a]).collect();
            let best = phis.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut x = vec![0.0; n];
            if best > 1e-12 {
                let winners: Vec<usize> = (0..n).filter(|&j| phis[j] >= best - 1e-12).collect();
                for &j in &winners {
                    x[j] = 1.0 / winners.len() as f64;
                }
            }
            x
        };
        for pid in 0..layout.profiles(k) {
            let hists = layout.profile_hists(k, pid);
            let idx: Vec<usize> = hists.iter().map(|&h| space.last(k, h)).collect();
            let x = alloc(&idx);
            for i in 0..n {
                // threshold payment: v x(v) - sum_{w < v} (w+ - w) x(w)
                let mut pay = values[idx[i]] * x[i];
                let mut probe = idx.clone();
                for a in 0..idx[i] {
                    probe[i] = a;
                    pay -= (values[a + 1] - values[a]) * alloc(&probe)[i];
                }
                sol.x[k - 1][pid * n + i] = x[i];
                sol.p[k - 1][pid * n + i] = pay;
            }
        }
    }
    sol.objective = expected_revenue(instance, &sol)?;
    Ok(sol)
}
