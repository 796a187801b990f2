//! One-shot optimal auctions for i.i.d. buyers.
//!
//! Discrete distributions are ironed via the upper concave hull of the revenue
//! curve in quantile space; continuous (regular) distributions use the best
//! second-price auction with a reserve over a fine grid.

use crate::dist_core::{ContinuousDist, DiscreteDist};
use crate::error::{domain, Error, Result};
use crate::quadrature;

/// Default cap on the number of enumerated buyer-value profiles.
pub const DEFAULT_PROFILE_CAP: u64 = 10_000_000;
/// Reserve grid resolution for continuous distributions.
pub const RESERVE_GRID: usize = 10_000;
const REGULARITY_GRID: usize = 4_000;
const CHECK_TOL: f64 = 1e-8;

/// Revenue curve `R(q) = v(q) q` at the quantiles of the support points,
/// ordered from q = 0 (nobody buys) to q = 1 (everyone buys).
#[derive(Debug, Clone, PartialEq)]
pub struct RevenueCurve {
    pub quantiles: Vec<f64>,
    pub revenues: Vec<f64>,
}

pub fn revenue_curve(dist: &DiscreteDist) -> RevenueCurve {
    let d = dist.pruned();
    let mut quantiles = vec![0.0];
    let mut revenues = vec![0.0];
    let mut q = 0.0;
    for i in (0..d.len()).rev() {
        q += d.probs()[i];
        quantiles.push(q);
        revenues.push(d.support()[i] * q);
    }
    RevenueCurve { quantiles, revenues }
}

/// Ironed virtual value per positive-probability support point.
#[derive(Debug, Clone, PartialEq)]
pub struct IronedVirtuals {
    pub values: Vec<f64>,
    pub virtuals: Vec<f64>,
}

impl IronedVirtuals {
    pub fn get(&self, v: f64) -> Option<f64> {
        self.values.iter().position(|&x| x == v).map(|i| self.virtuals[i])
    }
}

/// Slopes of the upper concave hull of the revenue curve, one per support point.
pub fn ironed_virtuals(dist: &DiscreteDist) -> IronedVirtuals {
    let d = dist.pruned();
    let curve = revenue_curve(&d);
    let (qs, rs) = (&curve.quantiles, &curve.revenues);
    let mut hull: Vec<usize> = Vec::with_capacity(qs.len());
    for i in 0..qs.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b if it lies on or below the chord a -> i
            let cross = (qs[b] - qs[a]) * (rs[i] - rs[a]) - (rs[b] - rs[a]) * (qs[i] - qs[a]);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let s = d.len();
    let mut virtuals = vec![0.0; s];
    // curve segment j spans points j -> j+1 and belongs to support index s-1-j
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let slope = (rs[b] - rs[a]) / (qs[b] - qs[a]);
        for j in a..b {
            virtuals[s - 1 - j] = slope;
        }
    }
    IronedVirtuals { values: d.support().to_vec(), virtuals }
}

/// Optimal expected revenue `E[max(0, max_i phi_bar(v_i))]` by enumerating all
/// `len^n` value profiles.
pub fn myerson_revenue(dist: &DiscreteDist, n: usize, cap: u64) -> Result<f64> {
    if n == 0 {
        return domain("need at least one buyer");
    }
    let d = dist.pruned();
    let iv = ironed_virtuals(&d);
    let s = d.len();
    let profiles = (s as f64).powi(n as i32);
    if profiles > cap as f64 {
        return Err(Error::Size(format!(
            "{s}^{n} = {profiles:.0} value profiles exceeds the cap of {cap}"
        )));
    }
    let probs = d.probs();
    let mut idx = vec![0usize; n];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        let mut best = 0.0f64;
        for &i in &idx {
            w *= probs[i];
            best = best.max(iv.virtuals[i]);
        }
        total += w * best;
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(total);
            }
            idx[pos] += 1;
            if idx[pos] < s {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Revenue-maximizing posted price over the support, lowest price on ties.
pub fn optimal_reserve(dist: &DiscreteDist) -> f64 {
    let (p, _) = best_posted_price(dist);
    p
}

/// `(price, price * P[X >= price])` maximizing single-buyer posted-price revenue.
pub fn best_posted_price(dist: &DiscreteDist) -> (f64, f64) {
    let d = dist.pruned();
    let mut tail = 0.0;
    let mut revs: Vec<(f64, f64)> = Vec::with_capacity(d.len());
    for i in (0..d.len()).rev() {
        tail += d.probs()[i];
        revs.push((d.support()[i], d.support()[i] * tail));
    }
    revs.reverse();
    let mut best = revs[0];
    for &(p, r) in &revs[1..] {
        if r > best.1 + 1e-12 * best.1.abs().max(1.0) {
            best = (p, r);
        }
    }
    best
}

/// Revenue of a second-price auction among `n` buyers with reserve `r`.
pub fn spa_with_reserve(dist: &ContinuousDist, n: usize, r: f64) -> Result<f64> {
    let sell = dist.order_stat_sf(1, n, r)?;
    let above = if n >= 2 {
        dist.integrate_tail(|x| dist.order_stat_sf(2, n, x).unwrap_or(0.0), r)
    } else {
        0.0
    };
    Ok(r * sell + above)
}

/// Best second-price-with-reserve revenue over a grid of [`RESERVE_GRID`] + 1 reserves.
pub fn continuous_myerson_revenue(dist: &ContinuousDist, n: usize) -> Result<f64> {
    if n == 0 {
        return domain("need at least one buyer");
    }
    dist.validate()?;
    let lo = dist.lo();
    let hi = dist.effective_hi();
    let grid: Vec<f64> = (0..=RESERVE_GRID)
        .map(|i| lo + (hi - lo) * i as f64 / RESERVE_GRID as f64)
        .collect();
    // tail[i] = ∫_{grid[i]}^{hi} P[X_{2:n} > x] dx, accumulated panel by panel
    let mut tail = vec![0.0; grid.len()];
    if n >= 2 {
        let s2 = |x: f64| dist.order_stat_sf(2, n, x).unwrap_or(0.0);
        for i in (0..RESERVE_GRID).rev() {
            tail[i] = tail[i + 1] + quadrature::integrate(&s2, grid[i], grid[i + 1], 1e-14, 1e-12);
        }
    }
    let mut best = 0.0f64;
    for (r, t) in grid.iter().zip(&tail) {
        best = best.max(r * dist.order_stat_sf(1, n, *r)? + t);
    }
    Ok(best)
}

/// Is `v - (1-F)/f` non-decreasing on a grid?
pub fn is_regular(dist: &ContinuousDist) -> bool {
    let mut prev = f64::NEG_INFINITY;
    for x in dist.grid(REGULARITY_GRID) {
        let Ok(phi) = dist.virtual_value(x) else { continue };
        if phi < prev - 1e-9 * prev.abs().max(1.0) {
            return false;
        }
        prev = phi;
    }
    true
}

/// Numeric check of the extra-bidder comparisons for a regular distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct BkReport {
    pub n: usize,
    /// Optimal revenue with `n` buyers.
    pub myerson: f64,
    /// E[X_{2:n+1}]: second-price revenue with one extra buyer.
    pub spa_extra: f64,
    /// E[X_{2:n}] (zero when n = 1).
    pub spa_same: f64,
    /// `spa_extra - myerson`.
    pub extra_margin: f64,
    /// `spa_same - (n-1)/n * myerson`.
    pub fraction_margin: f64,
    pub extra_pass: bool,
    pub fraction_pass: bool,
}

pub fn bk_check(dist: &ContinuousDist, n: usize) -> Result<BkReport> {
    if n == 0 {
        return domain("need at least one buyer");
    }
    if !is_regular(dist) {
        return domain(format!("distribution is not regular: {dist:?}"));
    }
    let myerson = continuous_myerson_revenue(dist, n)?;
    let spa_extra = dist.expected_order_stat(2, n + 1)?;
    let spa_same = if n >= 2 { dist.expected_order_stat(2, n)? } else { 0.0 };
    let extra_margin = spa_extra - myerson;
    let fraction_margin = spa_same - (n as f64 - 1.0) / n as f64 * myerson;
    let tol = CHECK_TOL * myerson.abs().max(1.0);
    Ok(BkReport {
        n,
        myerson,
        spa_extra,
        spa_same,
        extra_margin,
        fraction_margin,
        extra_pass: extra_margin >= -tol,
        fraction_pass: fraction_margin >= -tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halving_first_stage(depth: i32) -> DiscreteDist {
        let mut support = vec![0.0];
        let mut probs = vec![2f64.powi(-depth)];
        for i in 1..=depth {
            support.push(2f64.powi(i));
            probs.push(2f64.powi(-i));
        }
        DiscreteDist::new(support, probs).unwrap()
    }

    #[test]
    fn uniform_two_point() {
        let d = DiscreteDist::uniform(&[1.0, 2.0]).unwrap();
        let iv = ironed_virtuals(&d);
        assert_eq!(iv.virtuals, vec![0.0, 2.0]);
        assert_eq!(myerson_revenue(&d, 1, DEFAULT_PROFILE_CAP).unwrap(), 1.0);
        assert_eq!(optimal_reserve(&d), 1.0);
    }

    #[test]
    fn point_mass() {
        let d = DiscreteDist::point_mass(3.5);
        assert_eq!(ironed_virtuals(&d).virtuals, vec![3.5]);
        for n in 1..4 {
            assert_eq!(myerson_revenue(&d, n, DEFAULT_PROFILE_CAP).unwrap(), 3.5);
        }
        assert_eq!(optimal_reserve(&d), 3.5);
    }

    #[test]
    fn hull_slopes_match_unironed_when_monotone() {
        let d = DiscreteDist::new(vec![1.0, 2.0, 3.0], vec![0.2, 0.3, 0.5]).unwrap();
        let raw: Vec<f64> = d.virtual_values().into_iter().map(|(_, p)| p).collect();
        let iv = ironed_virtuals(&d);
        if raw.windows(2).all(|w| w[0] <= w[1]) {
            for (a, b) in raw.iter().zip(&iv.virtuals) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn halving_stage_revenue_below_two() {
        for depth in [3, 5] {
            let d = halving_first_stage(depth);
            let iv = ironed_virtuals(&d);
            assert!(iv.virtuals.windows(2).all(|w| w[0] <= w[1] + 1e-12));
            let rev = myerson_revenue(&d, 1, DEFAULT_PROFILE_CAP).unwrap();
            // every positive price 2^i earns 2 - 2^(i - depth)
            assert!((rev - (2.0 - 2f64.powi(1 - depth))).abs() < 1e-12);
            assert!(rev <= 2.0);
            assert_eq!(optimal_reserve(&d), 2.0);
        }
        assert!(myerson_revenue(&halving_first_stage(5), 1, DEFAULT_PROFILE_CAP).unwrap() > 1.9);
    }

    #[test]
    fn profile_cap() {
        let d = DiscreteDist::uniform(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(myerson_revenue(&d, 12, 1000), Err(Error::Size(_))));
    }

    #[test]
    fn continuous_uniform_single_buyer() {
        let u = ContinuousDist::uniform(0.0, 1.0);
        let rev = continuous_myerson_revenue(&u, 1).unwrap();
        assert!((rev - 0.25).abs() < 1e-8);
        let rep = bk_check(&u, 1).unwrap();
        assert!((rep.spa_extra - 1.0 / 3.0).abs() < 1e-9);
        assert!(rep.extra_pass && rep.fraction_pass);
    }

    #[test]
    fn exponential_two_buyers() {
        let e = ContinuousDist::exponential(1.0);
        let rep = bk_check(&e, 2).unwrap();
        assert!((rep.spa_extra - 5.0 / 6.0).abs() < 1e-9);
        // optimal reserve is 1 (phi(v) = v - 1): r(1 - F(r)^2) + ∫_r S_{2:2}
        let closed = (1.0 - (1.0 - (-1.0f64).exp()).powi(2)) + (-2.0f64).exp() / 2.0;
        assert!((rep.myerson - closed).abs() < 1e-7);
        assert!(rep.extra_pass && rep.fraction_pass);
    }

    #[test]
    fn irregular_rejected() {
        // Weibull with shape 1/2: phi(v) = v - 2 sqrt(v) decreases on (0, 1)
        let w = ContinuousDist::weibull(0.5, 1.0);
        assert!(!is_regular(&w));
        assert!(matches!(bk_check(&w, 2), Err(Error::Domain(_))));
    }
}
