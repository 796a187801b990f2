//! Value distributions, order statistics, hazard rates and virtual values.
//!
//! Rank 1 is the maximum: `X_{1:n} >= X_{2:n} >= ... >= X_{n:n}`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quadrature;

/// Survival level below which an unbounded support is cut off for quadrature.
pub const TAIL_CUTOFF: f64 = 1e-12;
/// Tolerance on the total probability of a discrete distribution.
pub const PROB_SUM_TOL: f64 = 1e-12;
const QUAD_TOL: f64 = 1e-11;

/// Finite-support distribution. Support strictly increasing, probabilities sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDiscrete", deny_unknown_fields)]
pub struct DiscreteDist {
    support: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiscrete {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl TryFrom<RawDiscrete> for DiscreteDist {
    type Error = Error;
    fn try_from(raw: RawDiscrete) -> Result<Self> {
        DiscreteDist::new(raw.support, raw.probs)
    }
}

impl DiscreteDist {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return domain("empty support");
        }
        if support.len() != probs.len() {
            return domain(format!(
                "support has {} values but probs has {}",
                support.len(),
                probs.len()
            ));
        }
        if let Some(v) = support.iter().find(|v| !v.is_finite()) {
            return domain(format!("non-finite support value {v}"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return domain(format!("invalid probability {p}"));
        }
        if support.windows(2).any(|w| w[1] <= w[0]) {
            return domain("support must be strictly increasing");
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return domain(format!("probabilities sum to {total}, not 1"));
        }
        Ok(Self { support, probs })
    }

    pub fn point_mass(v: f64) -> Self {
        Self { support: vec![v], probs: vec![1.0] }
    }

    /// Equal weight on each value (values must be strictly increasing).
    pub fn uniform(values: &[f64]) -> Result<Self> {
        let p = 1.0 / values.len() as f64;
        let mut probs = vec![p; values.len()];
        // absorb rounding so the sum check is exact
        let rest: f64 = probs[1..].iter().sum();
        probs[0] = 1.0 - rest;
        Self::new(values.to_vec(), probs)
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Copy without zero-probability points.
    pub fn pruned(&self) -> Self {
        let (support, probs) = self
            .support
            .iter()
            .zip(&self.probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(v, p)| (*v, *p))
            .unzip();
        Self { support, probs }
    }

    pub fn index_of(&self, v: f64) -> Option<usize> {
        self.support.iter().position(|&s| s == v)
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    /// P[X <= x].
    pub fn cdf(&self, x: f64) -> f64 {
        self.support.iter().zip(&self.probs).filter(|(v, _)| **v <= x).map(|(_, p)| p).sum()
    }

    /// P[X > x], summed directly rather than as 1 - cdf.
    pub fn sf(&self, x: f64) -> f64 {
        self.support.iter().zip(&self.probs).filter(|(v, _)| **v > x).map(|(_, p)| p).sum()
    }

    /// P[X >= x].
    pub fn prob_at_least(&self, x: f64) -> f64 {
        self.support.iter().zip(&self.probs).filter(|(v, _)| **v >= x).map(|(_, p)| p).sum()
    }

    /// P[X > support[i]] for every index, accumulated from the top.
    pub fn upper_tails(&self) -> Vec<f64> {
        let mut tails = vec![0.0; self.len()];
        let mut acc = 0.0;
        for i in (0..self.len()).rev() {
            tails[i] = acc;
            acc += self.probs[i];
        }
        tails
    }

    /// P[X <= support[i]] for every index.
    pub fn lower_cums(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if factor <= 0.0 {
            return domain("scale factor must be positive");
        }
        Self::new(self.support.iter().map(|v| v * factor).collect(), self.probs.clone())
    }

    pub fn order_stat_cdf(&self, r: usize, n: usize, x: f64) -> Result<f64> {
        check_rank(r, n)?;
        Ok(order_stat_cdf_fs(self.cdf(x), self.sf(x), r, n))
    }

    /// Exact E[X_{r:n}] by summing over the support.
    pub fn expected_order_stat(&self, r: usize, n: usize) -> Result<f64> {
        check_rank(r, n)?;
        let cums = self.lower_cums();
        let tails = self.upper_tails();
        let mut prev = 0.0;
        let mut total = 0.0;
        for (i, v) in self.support.iter().enumerate() {
            let g = order_stat_cdf_fs(cums[i], tails[i], r, n);
            total += v * (g - prev);
            prev = g;
        }
        Ok(total)
    }

    /// Discrete virtual value `v - (v+ - v) P[X > v] / f(v)`; the top point maps to itself.
    pub fn virtual_value(&self, v: f64) -> Result<f64> {
        let i = self.index_of(v).ok_or_else(|| Error::Domain(format!("{v} is not in the support")))?;
        if self.probs[i] <= 0.0 {
            return domain(format!("{v} has zero probability"));
        }
        Ok(self.virtual_values_pruned_at(i))
    }

    fn virtual_values_pruned_at(&self, i: usize) -> f64 {
        let v = self.support[i];
        // successor among positive-probability points
        let next = (i + 1..self.len()).find(|&j| self.probs[j] > 0.0);
        match next {
            None => v,
            Some(j) => {
                let tail: f64 = self.probs[j..].iter().sum();
                v - (self.support[j] - v) * tail / self.probs[i]
            }
        }
    }

    /// Virtual values of the positive-probability points, in support order.
    pub fn virtual_values(&self) -> Vec<(f64, f64)> {
        (0..self.len())
            .filter(|&i| self.probs[i] > 0.0)
            .map(|i| (self.support[i], self.virtual_values_pruned_at(i)))
            .collect()
    }

    /// Sample by inverse cdf from a uniform draw in [0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (v, p) in self.support.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return *v;
            }
        }
        *self.support.last().expect("non-empty support")
    }
}

/// Convex piecewise-linear cumulative hazard `H` with `H(0) = 0`.
///
/// Segment `i` covers `[breakpoints[i], breakpoints[i+1])` with slope `slopes[i]`;
/// the last segment ends at `end` (`None` for an unbounded domain).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlh", deny_unknown_fields)]
pub struct PiecewiseLinearH {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<f64>,
    #[serde(skip)]
    intercepts: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlh {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    #[serde(default)]
    end: Option<f64>,
}

impl TryFrom<RawPlh> for PiecewiseLinearH {
    type Error = Error;
    fn try_from(raw: RawPlh) -> Result<Self> {
        PiecewiseLinearH::new(raw.breakpoints, raw.slopes, raw.end)
    }
}

impl PiecewiseLinearH {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, end: Option<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != slopes.len() {
            return domain("need one slope per segment start");
        }
        if breakpoints[0] != 0.0 {
            return domain("first breakpoint must be 0");
        }
        if breakpoints.iter().any(|x| !x.is_finite()) || breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return domain("breakpoints must be finite and strictly increasing");
        }
        if slopes.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return domain("slopes must be positive and finite");
        }
        if slopes.windows(2).any(|w| w[1] < w[0]) {
            return domain("slopes must be non-decreasing (convex H)");
        }
        if let Some(e) = end {
            if !(e > *breakpoints.last().unwrap()) || !e.is_finite() {
                return domain("end must exceed the last breakpoint");
            }
        }
        let mut intercepts = vec![0.0; slopes.len()];
        for i in 1..slopes.len() {
            intercepts[i] = intercepts[i - 1] + (slopes[i - 1] - slopes[i]) * breakpoints[i];
        }
        Ok(Self { breakpoints, slopes, end, intercepts })
    }

    /// `H(x) = x` on `[0, end)`.
    pub fn identity(end: Option<f64>) -> Self {
        Self::new(vec![0.0], vec![1.0], end).expect("valid")
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn end(&self) -> Option<f64> {
        self.end
    }

    pub fn segments(&self) -> usize {
        self.slopes.len()
    }

    fn segment(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= x).saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let i = self.segment(x);
        self.slopes[i] * x + self.intercepts[i]
    }

    /// Hazard rate: the slope of the segment containing `x`.
    pub fn slope_at(&self, x: f64) -> f64 {
        self.slopes[self.segment(x.max(0.0))]
    }

    /// Smallest x with H(x) = y.
    pub fn inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        for i in 0..self.segments() {
            let seg_end = self.breakpoints.get(i + 1).copied().unwrap_or(f64::INFINITY);
            let x = (y - self.intercepts[i]) / self.slopes[i];
            if x < seg_end {
                return x;
            }
        }
        unreachable!("last segment is unbounded")
    }
}

/// Continuous value distributions used in quadrature and sampling.
///
/// `EqualRevenue` with a cap and `PiecewiseLinearHazard` with an end put the
/// remaining mass as an atom at that point. `Truncated` conditions the base
/// distribution on `X <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContinuousDist {
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
    EqualRevenue {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap: Option<f64>,
    },
    Weibull { shape: f64, scale: f64 },
    PiecewiseLinearHazard { h: PiecewiseLinearH },
    Truncated { base: Box<ContinuousDist>, upper: f64 },
}

impl ContinuousDist {
    pub fn exponential(rate: f64) -> Self {
        Self::Exponential { rate }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self::Uniform { lo, hi }
    }

    pub fn equal_revenue(cap: Option<f64>) -> Self {
        Self::EqualRevenue { cap }
    }

    pub fn weibull(shape: f64, scale: f64) -> Self {
        Self::Weibull { shape, scale }
    }

    pub fn piecewise_hazard(h: PiecewiseLinearH) -> Self {
        Self::PiecewiseLinearHazard { h }
    }

    pub fn truncated(base: ContinuousDist, upper: f64) -> Self {
        Self::Truncated { base: Box::new(base), upper }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Exponential { rate } => rate.is_finite() && *rate > 0.0,
            Self::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && hi > lo,
            Self::EqualRevenue { cap } => cap.is_none_or(|c| c.is_finite() && c > 1.0),
            Self::Weibull { shape, scale } => {
                shape.is_finite() && scale.is_finite() && *shape > 0.0 && *scale > 0.0
            }
            Self::PiecewiseLinearHazard { .. } => true,
            Self::Truncated { base, upper } => {
                base.validate()?;
                upper.is_finite() && *upper > base.lo() && base.sf(*upper) < 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            domain(format!("invalid parameters: {self:?}"))
        }
    }

    pub fn lo(&self) -> f64 {
        match self {
            Self::Uniform { lo, .. } => *lo,
            Self::EqualRevenue { .. } => 1.0,
            Self::Truncated { base, .. } => base.lo(),
            _ => 0.0,
        }
    }

    pub fn hi(&self) -> f64 {
        match self {
            Self::Uniform { hi, .. } => *hi,
            Self::EqualRevenue { cap } => cap.unwrap_or(f64::INFINITY),
            Self::PiecewiseLinearHazard { h } => h.end().unwrap_or(f64::INFINITY),
            Self::Truncated { base, upper } => upper.min(base.hi()),
            _ => f64::INFINITY,
        }
    }

    /// P[X > x].
    pub fn sf(&self, x: f64) -> f64 {
        if x < self.lo() {
            return 1.0;
        }
        if x >= self.hi() {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => (-rate * x).exp(),
            Self::Uniform { lo, hi } => (hi - x) / (hi - lo),
            Self::EqualRevenue { .. } => 1.0 / x,
            Self::Weibull { shape, scale } => (-(x / scale).powf(*shape)).exp(),
            Self::PiecewiseLinearHazard { h } => (-h.eval(x)).exp(),
            Self::Truncated { base, upper } => {
                let su = base.sf(*upper);
                ((base.sf(x) - su) / (1.0 - su)).max(0.0)
            }
        }
    }

    /// P[X <= x].
    pub fn cdf(&self, x: f64) -> f64 {
        if x < self.lo() {
            return 0.0;
        }
        if x >= self.hi() {
            return 1.0;
        }
        match self {
            Self::Exponential { rate } => -(-rate * x).exp_m1(),
            Self::Uniform { lo, hi } => (x - lo) / (hi - lo),
            Self::EqualRevenue { .. } => 1.0 - 1.0 / x,
            Self::Weibull { shape, scale } => -(-(x / scale).powf(*shape)).exp_m1(),
            Self::PiecewiseLinearHazard { h } => -(-h.eval(x)).exp_m1(),
            Self::Truncated { base, upper } => (base.cdf(x) / base.cdf(*upper)).min(1.0),
        }
    }

    /// Density of the continuous part; zero outside `[lo, hi)`.
    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lo() || x >= self.hi() {
            return 0.0;
        }
        match self {
            Self::Exponential { rate } => rate * (-rate * x).exp(),
            Self::Uniform { lo, hi } => 1.0 / (hi - lo),
            Self::EqualRevenue { .. } => 1.0 / (x * x),
            Self::Weibull { shape, scale } => {
                let z = x / scale;
                shape / scale * z.powf(shape - 1.0) * (-z.powf(*shape)).exp()
            }
            Self::PiecewiseLinearHazard { h } => h.slope_at(x) * (-h.eval(x)).exp(),
            Self::Truncated { base, upper } => base.pdf(x) / base.cdf(*upper),
        }
    }

    /// Hazard rate `f / (1 - F)` on `[lo, hi)`.
    pub fn hazard(&self, x: f64) -> f64 {
        if x < self.lo() {
            return 0.0;
        }
        if x >= self.hi() {
            return f64::INFINITY;
        }
        match self {
            Self::Exponential { rate } => *rate,
            Self::Uniform { hi, .. } => 1.0 / (hi - x),
            Self::EqualRevenue { .. } => 1.0 / x,
            Self::Weibull { shape, scale } => shape / scale * (x / scale).powf(shape - 1.0),
            Self::PiecewiseLinearHazard { h } => h.slope_at(x),
            Self::Truncated { base, upper } => base.pdf(x) / (base.sf(x) - base.sf(*upper)),
        }
    }

    /// Inverse cdf for a uniform draw `u` in [0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let x = match self {
            Self::Exponential { rate } => -(-u).ln_1p() / rate,
            Self::Uniform { lo, hi } => lo + u * (hi - lo),
            Self::EqualRevenue { .. } => 1.0 / (1.0 - u),
            Self::Weibull { shape, scale } => scale * (-(-u).ln_1p()).powf(1.0 / shape),
            Self::PiecewiseLinearHazard { h } => h.inverse(-(-u).ln_1p()),
            Self::Truncated { base, upper } => base.quantile(u * base.cdf(*upper)),
        };
        x.clamp(self.lo(), self.hi())
    }

    /// Kinks of the cdf that quadrature panels should respect.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::PiecewiseLinearHazard { h } => h.breakpoints().to_vec(),
            Self::Truncated { base, .. } => base.breakpoints(),
            _ => Vec::new(),
        }
    }

    /// Finite integration limit: `hi` if bounded, else a point with survival below
    /// [`TAIL_CUTOFF`].
    pub fn effective_hi(&self) -> f64 {
        let hi = self.hi();
        if hi.is_finite() {
            return hi;
        }
        let mut x = self.lo().max(0.0) + 1.0;
        while self.sf(x) >= TAIL_CUTOFF {
            x *= 2.0;
        }
        // tighten by bisection so panels are not wasted on a negligible tail
        let (mut a, mut b) = (x / 2.0, x);
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if self.sf(m) >= TAIL_CUTOFF {
                a = m;
            } else {
                b = m;
            }
        }
        b
    }

    fn heavy_tailed(&self) -> bool {
        matches!(self, Self::EqualRevenue { cap: None })
    }

    pub fn order_stat_cdf(&self, r: usize, n: usize, x: f64) -> Result<f64> {
        check_rank(r, n)?;
        Ok(order_stat_cdf_fs(self.cdf(x), self.sf(x), r, n))
    }

    pub fn order_stat_sf(&self, r: usize, n: usize, x: f64) -> Result<f64> {
        check_rank(r, n)?;
        Ok(order_stat_sf_fs(self.cdf(x), self.sf(x), r, n))
    }

    /// E[X_{r:n}] = lo + ∫ P[X_{r:n} > x] dx by adaptive quadrature.
    pub fn expected_order_stat(&self, r: usize, n: usize) -> Result<f64> {
        check_rank(r, n)?;
        if self.heavy_tailed() && r == 1 {
            return Err(Error::Divergent(
                "the maximum of an untruncated equal-revenue distribution has infinite mean".into(),
            ));
        }
        Ok(self.lo() + self.integrate_tail(|x| order_stat_sf_fs(self.cdf(x), self.sf(x), r, n), self.lo()))
    }

    pub fn mean(&self) -> Result<f64> {
        self.expected_order_stat(1, 1)
    }

    /// ∫_from^hi g(x) dx over the effective support.
    pub fn integrate_tail<G: Fn(f64) -> f64>(&self, g: G, from: f64) -> f64 {
        let hi = self.effective_hi();
        let from = from.max(self.lo());
        if from >= hi {
            return 0.0;
        }
        quadrature::integrate_split(&g, from, hi, &self.breakpoints(), QUAD_TOL)
    }

    /// `v - (1 - F(v)) / f(v)`.
    pub fn virtual_value(&self, v: f64) -> Result<f64> {
        let f = self.pdf(v);
        if !(f > 0.0) {
            return domain(format!("density is zero at {v}"));
        }
        Ok(v - self.sf(v) / f)
    }

    /// Evaluation grid on `[lo, effective_hi)`.
    pub fn grid(&self, points: usize) -> Vec<f64> {
        let lo = self.lo();
        let hi = self.effective_hi();
        let points = points.max(2);
        (0..points).map(|i| lo + (hi - lo) * i as f64 / points as f64).collect()
    }
}

/// Result of a monotonicity scan of the hazard rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MhrCheck {
    pub is_mhr: bool,
    /// Largest drop `h(x_i) - h(x_{i+1})` seen on the grid (0 if none).
    pub max_violation: f64,
}

/// Is the hazard rate non-decreasing on a grid of `grid` points (relative tolerance 1e-9)?
pub fn check_mhr(dist: &ContinuousDist, grid: usize) -> MhrCheck {
    let hs: Vec<f64> = dist.grid(grid).into_iter().map(|x| dist.hazard(x)).collect();
    let mut max_violation = 0.0f64;
    let mut is_mhr = true;
    for w in hs.windows(2) {
        let drop = w[0] - w[1];
        if drop > 0.0 {
            max_violation = max_violation.max(drop);
            if drop > 1e-9 * w[0].abs().max(1.0) {
                is_mhr = false;
            }
        }
    }
    MhrCheck { is_mhr, max_violation }
}

/// Discrete or continuous marginal for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Discrete(DiscreteDist),
    Continuous(ContinuousDist),
}

impl Distribution {
    pub fn order_stat_cdf(&self, r: usize, n: usize, x: f64) -> Result<f64> {
        match self {
            Self::Discrete(d) => d.order_stat_cdf(r, n, x),
            Self::Continuous(c) => c.order_stat_cdf(r, n, x),
        }
    }

    pub fn expected_order_stat(&self, r: usize, n: usize) -> Result<f64> {
        match self {
            Self::Discrete(d) => d.expected_order_stat(r, n),
            Self::Continuous(c) => c.expected_order_stat(r, n),
        }
    }

    pub fn mean(&self) -> Result<f64> {
        self.expected_order_stat(1, 1)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Discrete(_) => Ok(()),
            Self::Continuous(c) => c.validate(),
        }
    }
}

fn check_rank(r: usize, n: usize) -> Result<()> {
    if r == 0 || r > n {
        return domain(format!("rank {r} out of range for {n} samples"));
    }
    Ok(())
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// P[X_{r:n} <= x] from F(x) and 1 - F(x): fewer than r draws exceed x.
pub fn order_stat_cdf_fs(f: f64, s: f64, r: usize, n: usize) -> f64 {
    (0..r).map(|j| binomial(n, j) * s.powi(j as i32) * f.powi((n - j) as i32)).sum()
}

/// P[X_{r:n} > x]: at least r draws exceed x.
pub fn order_stat_sf_fs(f: f64, s: f64, r: usize, n: usize) -> f64 {
    (r..=n).map(|j| binomial(n, j) * s.powi(j as i32) * f.powi((n - j) as i32)).sum()
}

pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}
