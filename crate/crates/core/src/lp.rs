//! Dense two-phase simplex with Bland's rule. Minimizes `c·x` over
//! `x >= 0` subject to linear (in)equalities. Intended for the tiny
//! programs produced by the policy search.

use thiserror::Error;

pub const DEFAULT_ITERATION_CAP: usize = 10_000;
const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex did not terminate within {0} pivots")]
    IterationLimit(usize),
    #[error("constraint {index} has {got} coefficients, expected {expected}")]
    DimensionMismatch { index: usize, got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    iteration_cap: usize,
}

impl LinearProgram {
    /// Minimize `objective · x`.
    pub fn minimize(objective: Vec<f64>) -> Self {
        LinearProgram { objective, constraints: Vec::new(), iteration_cap: DEFAULT_ITERATION_CAP }
    }

    pub fn maximize(objective: Vec<f64>) -> Self {
        Self::minimize(objective.into_iter().map(|c| -c).collect())
    }

    pub fn with_iteration_cap(mut self, cap: usize) -> Self {
        self.iteration_cap = cap;
        self
    }

    pub fn constraint(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint { coeffs, relation, rhs });
        self
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let n = self.objective.len();
        for (index, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(LpError::DimensionMismatch { index, got: c.coeffs.len(), expected: n });
            }
        }
        Tableau::build(self).run(&self.objective, self.iteration_cap)
    }
}

struct Tableau {
    m: usize,
    n: usize,
    /// total columns excluding rhs
    width: usize,
    /// first artificial column
    art_start: usize,
    a: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.objective.len();
        let m = lp.constraints.len();
        let n_slack = lp.constraints.iter().filter(|c| c.relation != Relation::Eq).count();
        // after sign normalization, Le rows get a basic slack; Ge/Eq rows need an artificial
        let normalized: Vec<(Vec<f64>, Relation, f64)> = lp
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let rel = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.coeffs.iter().map(|v| -v).collect(), rel, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.relation, c.rhs)
                }
            })
            .collect();
        let n_art = normalized.iter().filter(|c| c.1 != Relation::Le).count();
        let art_start = n + n_slack;
        let width = art_start + n_art;
        let stride = width + 1;
        let mut a = vec![0.0; m * stride];
        let mut basis = vec![0; m];
        let mut slack = n;
        let mut art = art_start;
        for (i, (coeffs, rel, rhs)) in normalized.into_iter().enumerate() {
            let row = &mut a[i * stride..(i + 1) * stride];
            row[..n].copy_from_slice(&coeffs);
            row[width] = rhs;
            match rel {
                Relation::Le => {
                    row[slack] = 1.0;
                    basis[i] = slack;
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                    row[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    row[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        Tableau { m, n, width, art_start, a, basis }
    }

    fn stride(&self) -> usize {
        self.width + 1
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.stride() + j]
    }

    fn pivot(&mut self, r: usize, c: usize, obj: &mut [f64]) {
        let stride = self.stride();
        let p = self.at(r, c);
        for j in 0..stride {
            self.a[r * stride + j] /= p;
        }
        let prow: Vec<f64> = self.a[r * stride..(r + 1) * stride].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.a[i * stride + c];
            if f != 0.0 {
                for j in 0..stride {
                    self.a[i * stride + j] -= f * prow[j];
                }
                self.a[i * stride + c] = 0.0;
            }
        }
        let f = obj[c];
        if f != 0.0 {
            for j in 0..stride {
                obj[j] -= f * prow[j];
            }
            obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Reduced-cost row for costs `c` over all columns, last entry holds
    /// minus the objective value.
    fn reduced_costs(&self, c: &[f64]) -> Vec<f64> {
        let stride = self.stride();
        let mut obj = vec![0.0; stride];
        obj[..c.len()].copy_from_slice(c);
        for i in 0..self.m {
            let cb = c.get(self.basis[i]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for j in 0..stride {
                    obj[j] -= cb * self.at(i, j);
                }
            }
        }
        obj
    }

    /// Bland's rule iterations. Columns at or beyond `limit` never enter.
    fn iterate(&mut self, obj: &mut [f64], limit: usize, pivots: &mut usize, cap: usize) -> Result<(), LpError> {
        loop {
            let Some(enter) = (0..limit).find(|&j| obj[j] < -COST_TOL) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let aij = self.at(i, enter);
                if aij > PIVOT_TOL {
                    let ratio = self.at(i, self.width) / aij;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                            if ratio < best && !tie || tie && self.basis[i] < self.basis[r] {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(LpError::Unbounded);
            };
            if *pivots >= cap {
                return Err(LpError::IterationLimit(cap));
            }
            *pivots += 1;
            self.pivot(r, enter, obj);
        }
    }

    fn run(mut self, cost: &[f64], cap: usize) -> Result<LpSolution, LpError> {
        let mut pivots = 0;
        if self.art_start < self.width {
            let mut phase1 = vec![0.0; self.width];
            phase1[self.art_start..].iter_mut().for_each(|v| *v = 1.0);
            let mut obj = self.reduced_costs(&phase1);
            self.iterate(&mut obj, self.width, &mut pivots, cap)?;
            let infeas = -obj[self.width];
            let scale = 1.0 + (0..self.m).map(|i| self.at(i, self.width).abs()).fold(0.0, f64::max);
            if infeas > 1e-9 * scale {
                return Err(LpError::Infeasible);
            }
            // drive remaining artificials out of the basis
            for i in 0..self.m {
                if self.basis[i] >= self.art_start {
                    if let Some(j) = (0..self.art_start).find(|&j| self.at(i, j).abs() > PIVOT_TOL) {
                        let mut dummy = vec![0.0; self.stride()];
                        self.pivot(i, j, &mut dummy);
                    }
                }
            }
        }
        let mut obj = self.reduced_costs(cost);
        self.iterate(&mut obj, self.art_start, &mut pivots, cap)?;
        let mut x = vec![0.0; self.n];
        for i in 0..self.m {
            let b = self.basis[i];
            if b < self.n {
                x[b] = self.at(i, self.width).max(0.0);
            }
        }
        let objective = cost.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution { x, objective, pivots })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_max() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::maximize(vec![3.0, 5.0]);
        lp.constraint(vec![1.0, 0.0], Relation::Le, 4.0)
            .constraint(vec![0.0, 2.0], Relation::Le, 12.0)
            .constraint(vec![3.0, 2.0], Relation::Le, 18.0);
        let s = lp.solve().unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
        assert!((s.objective + 36.0).abs() < 1e-12);
    }

    #[test]
    fn equality_and_ge() {
        // min x + y, x + y = 2, x >= 0.5, y - x >= -1
        let mut lp = LinearProgram::minimize(vec![1.0, 2.0]);
        lp.constraint(vec![1.0, 1.0], Relation::Eq, 2.0)
            .constraint(vec![1.0, 0.0], Relation::Ge, 0.5)
            .constraint(vec![-1.0, 1.0], Relation::Ge, -1.0);
        let s = lp.solve().unwrap();
        assert!((s.x[0] - 1.5).abs() < 1e-12, "{:?}", s.x);
        assert!((s.objective - 2.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible() {
        let mut lp = LinearProgram::minimize(vec![1.0]);
        lp.constraint(vec![1.0], Relation::Ge, 2.0).constraint(vec![1.0], Relation::Le, 1.0);
        assert_eq!(lp.solve(), Err(LpError::Infeasible));
    }

    #[test]
    fn unbounded() {
        let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
        lp.constraint(vec![1.0, -1.0], Relation::Le, 1.0);
        assert_eq!(lp.solve(), Err(LpError::Unbounded));
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::minimize(vec![1.0, 1.0, 0.0]);
        lp.constraint(vec![1.0, 1.0, 1.0], Relation::Eq, 1.0)
            .constraint(vec![2.0, 2.0, 2.0], Relation::Eq, 2.0)
            .constraint(vec![1.0, 0.0, 0.0], Relation::Ge, 0.25);
        let s = lp.solve().unwrap();
        assert!((s.objective - 0.25).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the textbook rule; Bland terminates
        let mut lp = LinearProgram::minimize(vec![-0.75, 150.0, -0.02, 6.0]);
        lp.constraint(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0)
            .constraint(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0)
            .constraint(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0);
        let s = lp.solve().unwrap();
        assert!((s.objective + 0.05).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let mut lp = LinearProgram::minimize(vec![1.0, 1.0]);
        lp.constraint(vec![1.0], Relation::Le, 1.0);
        assert!(matches!(lp.solve(), Err(LpError::DimensionMismatch { .. })));
    }

    #[test]
    fn iteration_cap() {
        let mut lp = LinearProgram::maximize(vec![3.0, 5.0]).with_iteration_cap(1);
        lp.constraint(vec![1.0, 0.0], Relation::Le, 4.0)
            .constraint(vec![0.0, 2.0], Relation::Le, 12.0)
            .constraint(vec![3.0, 2.0], Relation::Le, 18.0);
        assert_eq!(lp.solve(), Err(LpError::IterationLimit(1)));
    }
}
