//! Dense tableau simplex for the small linear programs that appear in the
//! pipeline: exact radii recovery and the linearized max-min steps. Problems
//! stay below a few dozen variables and a few hundred constraints, so a dense
//! two-phase tableau is both robust and fast. Dantzig pricing is used while
//! progress is made and switches to Bland's anti-cycling rule after a run of
//! degenerate pivots.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-10;
const DEGENERATE_SWITCH: usize = 12;

/// Maximize `objective · x` subject to `row · x <= rhs` for every constraint
/// and `x >= 0`. Right-hand sides may be negative; phase 1 handles them.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub constraints: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

struct Tableau {
    /// (m+1) x (width) matrix, last row is the cost row, last column the rhs.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn m(&self) -> usize {
        self.basis.len()
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.rows[row][col];
        let inv = 1.0 / piv;
        for v in self.rows[row].iter_mut() {
            *v *= inv;
        }
        let pivot_row = self.rows[row].clone();
        for (r, target) in self.rows.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let factor = target[col];
            if factor != 0.0 {
                for (t, p) in target.iter_mut().zip(pivot_row.iter()) {
                    *t -= factor * p;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Run the simplex on the current cost row (minimization). `allowed`
    /// bounds the eligible column range.
    fn run(&mut self, allowed: usize) -> Result<()> {
        let m = self.m();
        let cost_row = m;
        let mut degenerate_run = 0usize;
        let mut bland = false;
        // Generous iteration cap for the problem sizes at hand.
        let max_iters = 50 * (m + allowed) + 1000;
        for _ in 0..max_iters {
            // Entering column: most negative reduced cost (Dantzig), or the
            // first negative one once Bland's rule is engaged.
            let mut enter = None;
            if bland {
                for j in 0..allowed {
                    if self.rows[cost_row][j] < -PIVOT_TOL {
                        enter = Some(j);
                        break;
                    }
                }
            } else {
                let mut best = -PIVOT_TOL;
                for j in 0..allowed {
                    let c = self.rows[cost_row][j];
                    if c < best {
                        best = c;
                        enter = Some(j);
                    }
                }
            }
            let Some(col) = enter else {
                return Ok(());
            };

            // Leaving row: minimum ratio; ties go to the smallest basis index.
            let rhs_col = self.width - 1;
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                let a = self.rows[r][col];
                if a > PIVOT_TOL {
                    let ratio = self.rows[r][rhs_col] / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - PIVOT_TOL
                                || ((ratio - lratio).abs() <= PIVOT_TOL
                                    && self.basis[r] < self.basis[lr])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((row, ratio)) = leave else {
                return Err(Error::LpUnbounded);
            };
            if ratio.abs() <= PIVOT_TOL {
                degenerate_run += 1;
                if degenerate_run >= DEGENERATE_SWITCH {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            self.pivot(row, col);
        }
        Err(Error::Validation("simplex iteration cap exceeded".into()))
    }
}

/// Solve the LP exactly; see [`LpProblem`] for the form.
pub fn solve(problem: &LpProblem) -> Result<LpSolution> {
    let n = problem.objective.len();
    let m = problem.constraints.len();
    for (row, _) in &problem.constraints {
        if row.len() != n {
            return Err(Error::ShapeMismatch("LP constraint width mismatch".into()));
        }
    }

    // Rows with negative rhs get flipped and receive an artificial variable.
    let needs_artificial: Vec<bool> = problem.constraints.iter().map(|(_, b)| *b < 0.0).collect();
    let n_art = needs_artificial.iter().filter(|&&x| x).count();
    let n_slack = m;
    let width = n + n_slack + n_art + 1;

    let mut rows = Vec::with_capacity(m + 1);
    let mut basis = vec![0usize; m];
    let mut art_idx = 0usize;
    for (r, (coeffs, b)) in problem.constraints.iter().enumerate() {
        let mut row = vec![0.0; width];
        let flip = if needs_artificial[r] { -1.0 } else { 1.0 };
        for (j, &a) in coeffs.iter().enumerate() {
            row[j] = flip * a;
        }
        row[n + r] = flip; // slack
        row[width - 1] = flip * b;
        if needs_artificial[r] {
            let col = n + n_slack + art_idx;
            row[col] = 1.0;
            basis[r] = col;
            art_idx += 1;
        } else {
            basis[r] = n + r;
        }
        rows.push(row);
    }
    rows.push(vec![0.0; width]);

    let mut tab = Tableau { rows, basis, width };

    if n_art > 0 {
        // Phase 1: minimize the sum of artificials. The cost row starts as
        // the negated sum of rows whose basic variable is artificial.
        for r in 0..m {
            if tab.basis[r] >= n + n_slack {
                let row = tab.rows[r].clone();
                for (c, v) in tab.rows[m].iter_mut().zip(row.iter()) {
                    *c -= v;
                }
            }
        }
        tab.run(n + n_slack)?;
        let resid = -tab.rows[m][width - 1];
        if resid > 1e-7 {
            return Err(Error::LpInfeasible);
        }
        // Pivot any zero-valued artificial out of the basis when possible.
        for r in 0..m {
            if tab.basis[r] >= n + n_slack {
                let col = (0..n + n_slack).find(|&j| tab.rows[r][j].abs() > PIVOT_TOL);
                if let Some(col) = col {
                    tab.pivot(r, col);
                }
            }
        }
        // Reset the cost row for phase 2.
        for v in tab.rows[m].iter_mut() {
            *v = 0.0;
        }
    }

    // Phase 2 cost row: minimize -objective, eliminated over the basis.
    for j in 0..n {
        tab.rows[m][j] = -problem.objective[j];
    }
    for r in 0..m {
        let b = tab.basis[r];
        let c = tab.rows[m][b];
        if c != 0.0 {
            let row = tab.rows[r].clone();
            for (t, p) in tab.rows[m].iter_mut().zip(row.iter()) {
                *t -= c * p;
            }
        }
    }
    tab.run(n + n_slack)?;

    let mut x = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.rows[r][width - 1];
        }
    }
    let objective = problem
        .objective
        .iter()
        .zip(x.iter())
        .map(|(c, v)| c * v)
        .sum();
    Ok(LpSolution { x, objective })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_two_variable_lp() {
        // max 3x + 2y s.t. x + y <= 4, x <= 2 -> x=2, y=2, obj 10.
        let p = LpProblem {
            objective: vec![3.0, 2.0],
            constraints: vec![(vec![1.0, 1.0], 4.0), (vec![1.0, 0.0], 2.0)],
        };
        let s = solve(&p).unwrap();
        assert!((s.objective - 10.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9);
        assert!((s.x[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_needs_phase_one() {
        // max -x s.t. -x <= -1 (i.e. x >= 1) -> x=1.
        let p = LpProblem {
            objective: vec![-1.0],
            constraints: vec![(vec![-1.0], -1.0)],
        };
        let s = solve(&p).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        // x <= 1 and x >= 2.
        let p = LpProblem {
            objective: vec![1.0],
            constraints: vec![(vec![1.0], 1.0), (vec![-1.0], -2.0)],
        };
        assert!(matches!(solve(&p), Err(Error::LpInfeasible)));
    }

    #[test]
    fn detects_unbounded() {
        let p = LpProblem {
            objective: vec![1.0],
            constraints: vec![(vec![-1.0], 1.0)],
        };
        assert!(matches!(solve(&p), Err(Error::LpUnbounded)));
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Multiple constraints tight at the optimum.
        let p = LpProblem {
            objective: vec![1.0, 1.0],
            constraints: vec![
                (vec![1.0, 0.0], 1.0),
                (vec![0.0, 1.0], 1.0),
                (vec![1.0, 1.0], 2.0),
                (vec![1.0, 1.0], 2.0),
            ],
        };
        let s = solve(&p).unwrap();
        assert!((s.objective - 2.0).abs() < 1e-9);
    }
}
