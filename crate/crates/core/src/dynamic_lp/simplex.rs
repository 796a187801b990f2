//! Dense tableau simplex for `max c·z` subject to `A z <= b`, `z >= 0`, `b >= 0`.
//!
//! Starts from the all-slack basis. Entering columns are priced by the most
//! negative reduced cost; after a run of degenerate pivots the solver switches
//! to Bland's rule until the objective moves again, which rules out cycling.

use crate::error::{Error, Result};

const MAX_PIVOTS: usize = 2_000_000;

/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_RUN: usize = 50;

pub struct DenseLp {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols` constraint matrix.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

pub struct DenseSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

pub fn solve(lp: &DenseLp, eps: f64) -> Result<DenseSolution> {
    if let Some(bad) = lp.b.iter().find(|&&v| v < 0.0) {
        return Err(Error::Solver(format!("negative right-hand side {bad}: slack basis infeasible")));
    }
    // Homogeneous rows make the slack vertex highly degenerate. Solving with a
    // slightly raised right-hand side keeps every pivot strictly improving; the
    // final basis is then re-evaluated at the true right-hand side, where it is
    // still dual feasible and so optimal whenever it is primal feasible.
    let scale = lp.b.iter().fold(1.0f64, |a, &v| a.max(v));
    let raised: Vec<f64> = (0..lp.rows)
        .map(|r| lp.b[r] + PERTURBATION * scale * (0.5 + 0.5 * (r as f64 * 0.618_033_988_749_895).fract()))
        .collect();
    let mut tab = Tableau::new(lp, &raised);
    tab.run(eps)?;
    if let Some(sol) = tab.restore(lp, eps) {
        return Ok(sol);
    }
    let mut tab = Tableau::new(lp, &lp.b);
    let earlier = tab.pivots;
    tab.run(eps)?;
    tab.pivots += earlier;
    Ok(tab.solution(lp.cols))
}

/// Relative size of the right-hand-side perturbation.
const PERTURBATION: f64 = 1e-7;

struct Tableau {
    t: Vec<f64>,
    width: usize,
    rows: usize,
    cols: usize,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn new(lp: &DenseLp, b: &[f64]) -> Self {
        let (m, n) = (lp.rows, lp.cols);
        let width = n + m + 1;
        let mut t = vec![0.0; (m + 1) * width];
        for r in 0..m {
            let row = &mut t[r * width..(r + 1) * width];
            row[..n].copy_from_slice(&lp.a[r * n..(r + 1) * n]);
            row[n + r] = 1.0;
            row[width - 1] = b[r];
        }
        for j in 0..n {
            t[m * width + j] = -lp.c[j];
        }
        Self { t, width, rows: m, cols: n, basis: (n..n + m).collect(), pivots: 0 }
    }

    fn run(&mut self, eps: f64) -> Result<()> {
        let (m, width) = (self.rows, self.width);
        let mut stalled = 0;
        loop {
            let obj = &self.t[m * width..(m + 1) * width - 1];
            let enter = if stalled >= DEGENERATE_RUN {
                obj.iter().position(|&d| d < -eps)
            } else {
                obj.iter()
                    .enumerate()
                    .filter(|(_, &d)| d < -eps)
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(j, _)| j)
            };
            let Some(enter) = enter else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                let coef = self.t[r * width + enter];
                if coef > eps {
                    let ratio = self.t[r * width + width - 1] / coef;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            let tie = (ratio - lratio).abs() <= 1e-12 * lratio.abs().max(1.0);
                            if ratio < lratio && !tie || tie && self.basis[r] < self.basis[lr] {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((pr, ratio)) = leave else {
                return Err(Error::Solver(format!("objective unbounded along column {enter}")));
            };
            if ratio > 0.0 {
                stalled = 0;
            } else {
                stalled += 1;
            }
            pivot(&mut self.t, width, m, pr, enter);
            self.basis[pr] = enter;
            self.pivots += 1;
            if self.pivots > MAX_PIVOTS {
                return Err(Error::Solver(format!("no convergence after {MAX_PIVOTS} pivots")));
            }
        }
    }

    fn solution(&self, n: usize) -> DenseSolution {
        let (m, width) = (self.rows, self.width);
        let mut z = vec![0.0; n];
        for (r, &var) in self.basis.iter().enumerate() {
            if var < n {
                z[var] = self.t[r * width + width - 1];
            }
        }
        DenseSolution { z, objective: self.t[m * width + width - 1], pivots: self.pivots }
    }

    /// Basic solution `B^-1 b` of the final basis at the original right-hand
    /// side, read off the slack columns. `None` if it is not primal feasible.
    fn restore(&self, lp: &DenseLp, eps: f64) -> Option<DenseSolution> {
        let (m, n, width) = (self.rows, self.cols, self.width);
        let mut z = vec![0.0; n];
        let mut objective = 0.0;
        for (r, &var) in self.basis.iter().enumerate() {
            let row = &self.t[r * width..(r + 1) * width];
            let v: f64 = (0..m).map(|k| row[n + k] * lp.b[k]).sum();
            if v < -eps {
                return None;
            }
            if var < n {
                let v = v.max(0.0);
                z[var] = v;
                objective += lp.c[var] * v;
            }
        }
        Some(DenseSolution { z, objective, pivots: self.pivots })
    }
}

fn pivot(t: &mut [f64], width: usize, m: usize, pr: usize, pc: usize) {
    let inv = 1.0 / t[pr * width + pc];
    for v in &mut t[pr * width..(pr + 1) * width] {
        *v *= inv;
    }
    t[pr * width + pc] = 1.0;
    let prow: Vec<f64> = t[pr * width..(pr + 1) * width].to_vec();
    let nz: Vec<usize> = (0..width).filter(|&j| prow[j] != 0.0).collect();
    for r in 0..=m {
        if r == pr {
            continue;
        }
        let f = t[r * width + pc];
        if f == 0.0 {
            continue;
        }
        let row = &mut t[r * width..(r + 1) * width];
        for &j in &nz {
            row[j] -= f * prow[j];
        }
        row[pc] = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_lp() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let lp = DenseLp {
            rows: 3,
            cols: 2,
            a: vec![1.0, 0.0, 0.0, 2.0, 3.0, 2.0],
            b: vec![4.0, 12.0, 18.0],
            c: vec![3.0, 5.0],
        };
        let s = solve(&lp, 1e-12).unwrap();
        assert!((s.objective - 36.0).abs() < 1e-12);
        assert!((s.z[0] - 2.0).abs() < 1e-12 && (s.z[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_detected() {
        let lp = DenseLp { rows: 1, cols: 2, a: vec![1.0, -1.0], b: vec![1.0], c: vec![0.0, 1.0] };
        assert!(matches!(solve(&lp, 1e-12), Err(Error::Solver(_))));
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the largest-coefficient rule alone.
        let lp = DenseLp {
            rows: 3,
            cols: 4,
            a: vec![0.25, -60.0, -0.04, 9.0, 0.5, -90.0, -0.02, 3.0, 0.0, 0.0, 1.0, 0.0],
            b: vec![0.0, 0.0, 1.0],
            c: vec![0.75, -150.0, 0.02, -6.0],
        };
        let s = solve(&lp, 1e-12).unwrap();
        assert!((s.objective - 0.05).abs() < 1e-12);
    }
}
