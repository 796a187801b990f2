//! Order-statistic inequalities for monotone-hazard-rate values.
//!
//! Every check produces a [`BoundReport`] comparing a left side against a right
//! side, so results can be tabulated and exported as CSV.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dist_core::{check_mhr, ContinuousDist, MhrCheck, PiecewiseLinearH};
use crate::error::{domain, Result};
use crate::quadrature;

/// Relative slack in `lhs >= rhs`.
pub const BOUND_TOL: f64 = 1e-9;

/// Grid used for the hazard-monotonicity precondition.
pub const MHR_GRID: usize = 2000;

pub const DEFAULT_TRIALS: usize = 1_000_000;
pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub dist_id: String,
    pub n: usize,
    pub bound_name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

impl BoundReport {
    /// `pass` iff `lhs >= rhs - BOUND_TOL * max(1, |rhs|)`.
    pub fn new(dist_id: &str, n: usize, bound_name: &str, lhs: f64, rhs: f64) -> Self {
        let margin = lhs - rhs;
        let pass = margin >= -BOUND_TOL * rhs.abs().max(1.0);
        Self { dist_id: dist_id.to_string(), n, bound_name: bound_name.to_string(), lhs, rhs, margin, pass }
    }

    pub const CSV_HEADER: &'static str = "dist_id,n,bound_name,lhs,rhs,margin,pass";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.11e},{:.11e},{:.11e},{}",
            self.dist_id, self.n, self.bound_name, self.lhs, self.rhs, self.margin, self.pass
        )
    }
}

fn require_mhr(dist: &ContinuousDist) -> Result<()> {
    dist.validate()?;
    let MhrCheck { is_mhr, max_violation } = check_mhr(dist, MHR_GRID);
    if !is_mhr {
        return domain(format!("hazard rate decreases by {max_violation:e} on the check grid"));
    }
    Ok(())
}

/// The three second-order-statistic bounds against `E[X_{1:n}]`: with `4n`
/// draws (factor 1), with `n + 1` draws (factor 1/e) and with `n` draws
/// (factor 1/3, only for `n >= 2`).
pub fn verify_mhr_bounds(dist: &ContinuousDist, n: usize, dist_id: &str) -> Result<Vec<BoundReport>> {
    if n == 0 {
        return domain("need at least one buyer");
    }
    require_mhr(dist)?;
    let top = dist.expected_order_stat(1, n)?;
    let mut out = vec![
        BoundReport::new(dist_id, n, "second_of_4n_vs_max", dist.expected_order_stat(2, 4 * n)?, top),
        BoundReport::new(
            dist_id,
            n,
            "second_of_n_plus_1_vs_max_over_e",
            dist.expected_order_stat(2, n + 1)?,
            top / std::f64::consts::E,
        ),
    ];
    if n >= 2 {
        out.push(BoundReport::new(dist_id, n, "second_of_n_vs_max_over_3", dist.expected_order_stat(2, n)?, top / 3.0));
    }
    Ok(out)
}

/// Three draws are not enough: `E[X] - E[X_{2:3}]` for Exp(1) against the
/// required gap.
pub fn three_draws_insufficient(required_gap: f64) -> Result<BoundReport> {
    let d = ContinuousDist::exponential(1.0);
    let gap = d.mean()? - d.expected_order_stat(2, 3)?;
    Ok(BoundReport::new("exp_1", 1, "mean_minus_second_of_3", gap, required_gap))
}

/// `g(y) = -3/4 e^{-4y} + 8/3 e^{-3y} - 3 e^{-2y} + e^{-y} + 1/12`, the
/// antiderivative of the second-of-four integrand, shifted so `g(0) = 0`.
pub fn g_antiderivative(y: f64) -> f64 {
    if y == f64::INFINITY {
        return 1.0 / 12.0;
    }
    if y < 0.05 {
        // g(y) = sum_k c_{k-1} y^k / k!, c_j = 3(-4)^j - 8(-3)^j + 6(-2)^j - (-1)^j
        let mut sum = 0.0;
        let mut term = 1.0; // y^k / k!
        let (mut p4, mut p3, mut p2, mut p1) = (1.0, 1.0, 1.0, 1.0);
        for k in 1..40 {
            term *= y / k as f64;
            let c = 3.0 * p4 - 8.0 * p3 + 6.0 * p2 - p1;
            sum += c * term;
            p4 *= -4.0;
            p3 *= -3.0;
            p2 *= -2.0;
            p1 *= -1.0;
        }
        return sum;
    }
    -0.75 * (-4.0 * y).exp() + 8.0 / 3.0 * (-3.0 * y).exp() - 3.0 * (-2.0 * y).exp() + (-y).exp() + 1.0 / 12.0
}

/// `∫ 3e^{-4H} - 8e^{-3H} + 6e^{-2H} - e^{-H}` over the domain of `h`, summed
/// segment by segment as `(g(H(x_{i+1})) - g(H(x_i))) / a_i`.
pub fn integral_i(h: &PiecewiseLinearH) -> f64 {
    let bps = h.breakpoints();
    let slopes = h.slopes();
    let mut total = 0.0;
    for i in 0..h.segments() {
        let y0 = h.eval(bps[i]);
        let y1 = match bps.get(i + 1).copied().or(h.end()) {
            Some(x) => slopes[i] * x + h.intercepts()[i],
            None => f64::INFINITY,
        };
        total += (g_antiderivative(y1) - g_antiderivative(y0)) / slopes[i];
    }
    total
}

/// Convex piecewise-linear interpolant of `f` on `[0, b]` with sup error below
/// `eps` on a check grid of 16 points per segment. Needs `f(0) = 0` and
/// `f` increasing, so the result is a valid cumulative hazard. Chords with equal
/// slopes are merged.
pub fn pl_approx<F: Fn(f64) -> f64>(f: F, b: f64, eps: f64) -> Result<PiecewiseLinearH> {
    if !(eps > 0.0) {
        return domain("eps must be positive");
    }
    if !(b > 0.0 && b.is_finite()) {
        return domain("interval end must be positive and finite");
    }
    if f(0.0).abs() > 1e-12 {
        return domain("the function must vanish at 0");
    }
    let mut segments = 1usize;
    while segments <= 1 << 20 {
        let xs: Vec<f64> = (0..=segments).map(|j| b * j as f64 / segments as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let mut bps = Vec::new();
        let mut slopes: Vec<f64> = Vec::new();
        for j in 0..segments {
            let s = (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j]);
            if !(s > 0.0) {
                return domain(format!("the function is not increasing near {}", xs[j]));
            }
            let s = slopes.last().map_or(s, |&prev| s.max(prev));
            match slopes.last() {
                Some(&prev) if (s - prev).abs() <= 1e-12 * prev => {}
                _ => {
                    bps.push(xs[j]);
                    slopes.push(s);
                }
            }
        }
        let g = PiecewiseLinearH::new(bps, slopes, Some(b))?;
        let checks = 16 * segments;
        let err = (0..=checks)
            .map(|t| {
                let x = b * t as f64 / checks as f64;
                (f(x) - g.eval(x)).abs()
            })
            .fold(0.0, f64::max);
        if err < eps {
            return Ok(g);
        }
        segments *= 2;
    }
    domain(format!("no interpolant within {eps} using up to 2^20 segments"))
}

/// `(E[X_{1:n}] - E[X_{2:n}], E[1/h(X_{1:n})])`, each by its own quadrature.
pub fn spacing_identity(dist: &ContinuousDist, n: usize) -> Result<(f64, f64)> {
    if n < 2 {
        return domain("the spacing needs n >= 2");
    }
    let lhs = dist.expected_order_stat(1, n)? - dist.expected_order_stat(2, n)?;
    let nf = n as f64;
    let rhs = dist.integrate_tail(
        |x| {
            let f = dist.pdf(x);
            let h = dist.hazard(x);
            if f > 0.0 && h > 0.0 {
                nf * dist.cdf(x).powi(n as i32 - 1) * f / h
            } else {
                0.0
            }
        },
        dist.lo(),
    );
    Ok((lhs, rhs))
}

/// Two draws: `E[X_{2:2}] >= E[X] / 2`, and the top spacing is at most
/// `2/3 E[X_{1:2}]` (reported as `2/3 E[X_{1:2}] >= E[X_{1:2}] - E[X_{2:2}]`).
pub fn min_two_bound(dist: &ContinuousDist, dist_id: &str) -> Result<Vec<BoundReport>> {
    require_mhr(dist)?;
    let mean = dist.mean()?;
    let hi = dist.expected_order_stat(1, 2)?;
    let lo = dist.expected_order_stat(2, 2)?;
    Ok(vec![
        BoundReport::new(dist_id, 2, "min_of_2_vs_half_mean", lo, mean / 2.0),
        BoundReport::new(dist_id, 2, "two_thirds_max_vs_spacing", 2.0 / 3.0 * hi, hi - lo),
    ])
}

/// Monte Carlo comparison of the second largest of `4n` draws with the second
/// largest of the four block maxima of the same draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingReport {
    pub trials: usize,
    pub violations: usize,
    pub mean_second_of_all: f64,
    pub mean_second_of_blocks: f64,
    /// Standard error of the mean per-trial difference.
    pub diff_std_err: f64,
    /// `lhs` is the smallest per-trial difference, against 0.
    pub report: BoundReport,
}

pub fn coupling_check(dist: &ContinuousDist, n: usize, trials: usize, seed: u64, dist_id: &str) -> Result<CouplingReport> {
    if n == 0 || trials == 0 {
        return domain("need n >= 1 and at least one trial");
    }
    require_mhr(dist)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = vec![0.0; 4 * n];
    let (mut violations, mut sum_x, mut sum_y, mut sum_d, mut sum_d2) = (0usize, 0.0, 0.0, 0.0, 0.0);
    let mut min_gap = f64::INFINITY;
    for _ in 0..trials {
        for d in draws.iter_mut() {
            *d = dist.quantile(rng.gen::<f64>());
        }
        let x = second_largest(draws.iter().copied());
        let y = second_largest(draws.chunks(n).map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
        let d = x - y;
        if d < 0.0 {
            violations += 1;
        }
        min_gap = min_gap.min(d);
        sum_x += x;
        sum_y += y;
        sum_d += d;
        sum_d2 += d * d;
    }
    let t = trials as f64;
    let mean_d = sum_d / t;
    let var = (sum_d2 / t - mean_d * mean_d).max(0.0);
    Ok(CouplingReport {
        trials,
        violations,
        mean_second_of_all: sum_x / t,
        mean_second_of_blocks: sum_y / t,
        diff_std_err: (var / t).sqrt(),
        report: BoundReport::new(dist_id, n, "coupling_min_gap", min_gap, 0.0),
    })
}

fn second_largest(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for x in xs {
        if x > a {
            b = a;
            a = x;
        } else if x > b {
            b = x;
        }
    }
    b
}

/// Hazard of the maximum of `n` draws, `n F^{n-1} f / (1 - F^n)`, checked for
/// monotonicity on a grid (relative tolerance 1e-9).
pub fn max_is_mhr(dist: &ContinuousDist, n: usize, grid: usize) -> MhrCheck {
    let nf = n as f64;
    let hazard = |x: f64| {
        let (f, big_f) = (dist.pdf(x), dist.cdf(x));
        // 1 - F^n computed from the survival to keep precision in the tail
        let tail = -((n as f64) * (-dist.sf(x)).ln_1p()).exp_m1();
        if tail <= 0.0 {
            return f64::INFINITY;
        }
        nf * big_f.powi(n as i32 - 1) * f / tail
    };
    let hs: Vec<f64> = dist.grid(grid).into_iter().map(hazard).collect();
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

/// Equal-revenue values conditioned on `X <= cap`: the mean beats the
/// second-highest of `n` draws once the cap is large.
pub fn equal_revenue_counterexample(cap: f64, n: usize) -> Result<BoundReport> {
    let d = ContinuousDist::truncated(ContinuousDist::equal_revenue(None), cap);
    Ok(BoundReport::new(&format!("equal_revenue_trunc_{cap:e}"), n, "mean_vs_second_of_n", d.mean()?, d.expected_order_stat(2, n)?))
}

/// MHR test distributions with identifiers.
pub fn mhr_zoo() -> Vec<(String, ContinuousDist)> {
    let weibull_h = |x: f64| (x / 1.5).powf(2.5);
    let reconstructed = pl_approx(weibull_h, 4.0, 1e-3).expect("Weibull cumulative hazard is convex");
    let plh = PiecewiseLinearH::new(vec![0.0, 1.0, 2.5], vec![0.4, 1.0, 3.0], None).expect("valid");
    vec![
        ("exp_1".into(), ContinuousDist::exponential(1.0)),
        ("exp_3".into(), ContinuousDist::exponential(3.0)),
        ("exp_0.5_trunc_4".into(), ContinuousDist::truncated(ContinuousDist::exponential(0.5), 4.0)),
        ("uniform_0_1".into(), ContinuousDist::uniform(0.0, 1.0)),
        ("uniform_2_5".into(), ContinuousDist::uniform(2.0, 5.0)),
        ("uniform_near_point_10".into(), ContinuousDist::uniform(10.0, 10.001)),
        ("weibull_1_2".into(), ContinuousDist::weibull(1.0, 2.0)),
        ("weibull_2_1".into(), ContinuousDist::weibull(2.0, 1.0)),
        ("weibull_3.5_1_trunc_1.2".into(), ContinuousDist::truncated(ContinuousDist::weibull(3.5, 1.0), 1.2)),
        ("piecewise_hazard_3seg".into(), ContinuousDist::piecewise_hazard(plh)),
        ("weibull_2.5_1.5_pl_reconstruction".into(), ContinuousDist::piecewise_hazard(reconstructed)),
    ]
}

/// Plain adaptive quadrature of the second-of-four integrand, for cross-checks.
pub fn integral_i_quadrature(h: &PiecewiseLinearH, upper: f64) -> f64 {
    let f = |x: f64| {
        let y = h.eval(x);
        3.0 * (-4.0 * y).exp() - 8.0 * (-3.0 * y).exp() + 6.0 * (-2.0 * y).exp() - (-y).exp()
    };
    let end = h.end().unwrap_or(upper).min(upper);
    quadrature::integrate_split(&f, 0.0, end, h.breakpoints(), 1e-13)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_endpoints() {
        assert_eq!(g_antiderivative(0.0), 0.0);
        assert!((g_antiderivative(f64::INFINITY) - 1.0 / 12.0).abs() < 1e-15);
        assert!((g_antiderivative(60.0) - 1.0 / 12.0).abs() < 1e-15);
        // series and closed form agree across the switch
        let y: f64 = 0.05;
        let closed = -0.75 * (-4.0 * y).exp() + 8.0 / 3.0 * (-3.0 * y).exp() - 3.0 * (-2.0 * y).exp() + (-y).exp() + 1.0 / 12.0;
        assert!((g_antiderivative(0.0499999999) - closed).abs() < 1e-11);
        // interior stationary point is positive
        let s = ((5.0 + 13f64.sqrt()) / 2.0).ln();
        assert!(g_antiderivative(s) > 0.0);
    }

    #[test]
    fn identity_hazard_integral() {
        let h = PiecewiseLinearH::identity(Some(40.0));
        assert!((integral_i(&h) - 1.0 / 12.0).abs() < 1e-10);
        assert!((integral_i(&PiecewiseLinearH::identity(None)) - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn report_csv() {
        let r = BoundReport::new("d", 3, "b", 1.0, 2.0);
        assert!(!r.pass);
        assert_eq!(r.csv_row().split(',').count(), BoundReport::CSV_HEADER.split(',').count());
        assert!(BoundReport::new("d", 3, "b", 2.0 - 1e-12, 2.0).pass);
    }

    #[test]
    fn second_largest_picks_runner_up() {
        assert_eq!(second_largest([3.0, 1.0, 5.0, 4.0].into_iter()), 4.0);
        assert_eq!(second_largest([2.0, 2.0].into_iter()), 2.0);
    }

    #[test]
    fn pl_approx_rejects_bad_input() {
        assert!(pl_approx(|x| x, 1.0, 0.0).is_err());
        assert!(pl_approx(|x| x + 1.0, 1.0, 0.1).is_err());
        assert!(pl_approx(|x| -x, 1.0, 0.1).is_err());
    }
}
