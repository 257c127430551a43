//! Primal revised simplex with lexicographic pivoting for the assignment LP.
//!
//! Two infinitesimal perturbations make the optimum unique for every column
//! subset, which is what lets independent solvers agree:
//!
//! - the right-hand side is read as `b + (eps, eps^2, ...)`, implemented by
//!   the lexicographic ratio test on the rows of `[B^-1 b | B^-1]`; no basis
//!   is ever degenerate and the method cannot cycle;
//! - the cost of the column with global rank `g` is read as `c - delta^(g+1)`;
//!   among equal-cost optima the one favouring low-rank columns wins, so the
//!   dual is never degenerate either.
//!
//! Primal and dual nondegeneracy together give exactly one optimal basis. The
//! starting basis uses one artificial column per row with cost `big_m`.

use std::collections::BTreeMap;

use crate::{Error, Result};

use super::{extract_assignment, AssignmentPlan, AssignmentProblem, Basis, BasisColumn, ColumnId, LPColumn};

const PIVOT_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

struct Column {
    id: ColumnId,
    rank: usize,
    cost: f64,
    rows: Vec<usize>,
}

/// Solves the assignment LP restricted to `columns` plus the artificial
/// columns, returning the unique lexicographically optimal basis.
///
/// Columns may arrive in any order and with duplicates; the result depends
/// only on the set.
pub fn solve_columns(n: usize, columns: &[LPColumn], big_m: f64) -> Result<Basis> {
    if n == 0 {
        return Err(Error::InvalidInput("assignment needs at least one agent".into()));
    }
    let m = 2 * n - 1;
    let mut unique: BTreeMap<ColumnId, f64> = BTreeMap::new();
    for c in columns {
        if c.owner >= n || c.region >= n {
            return Err(Error::InvalidInput(format!(
                "column ({}, {}) outside a {n}-agent problem",
                c.owner, c.region
            )));
        }
        if let Some(prev) = unique.insert(c.id(), c.cost) {
            if prev.to_bits() != c.cost.to_bits() {
                return Err(Error::ColumnPartition(format!(
                    "column ({}, {}) seen with costs {prev} and {}",
                    c.owner, c.region, c.cost
                )));
            }
        }
    }

    let mut cols: Vec<Column> = unique
        .into_iter()
        .map(|(id, cost)| {
            let (agent, region) = match id {
                ColumnId::Structural { agent, region } => (agent, region),
                ColumnId::Artificial { .. } => unreachable!("structural ids only"),
            };
            let mut rows = vec![agent];
            // The last region row is dropped.
            if region + 1 < n {
                rows.push(n + region);
            }
            Column {
                id,
                rank: id.rank(n),
                cost,
                rows,
            }
        })
        .collect();
    let first_artificial = cols.len();
    cols.extend((0..m).map(|row| {
        let id = ColumnId::Artificial { row };
        Column {
            id,
            rank: id.rank(n),
            cost: big_m,
            rows: vec![row],
        }
    }));

    let mut tableau = Tableau::new(m, (first_artificial..first_artificial + m).collect());
    let cost_tol = 1e-11 * big_m.abs().max(1.0);

    for _ in 0..MAX_PIVOTS {
        let duals = tableau.duals(&cols);
        let mut best_primary: Option<(f64, usize, usize)> = None;
        let mut best_tie: Option<(usize, usize)> = None;
        for (j, col) in cols.iter().enumerate() {
            if tableau.is_basic(j) {
                continue;
            }
            let reduced = col.cost - col.rows.iter().map(|&r| duals[r]).sum::<f64>();
            if reduced < -cost_tol {
                let better = match best_primary {
                    None => true,
                    Some((d, rank, _)) => reduced < d - cost_tol || (reduced <= d + cost_tol && col.rank < rank),
                };
                if better {
                    best_primary = Some((reduced, col.rank, j));
                }
            } else if reduced <= cost_tol
                && best_primary.is_none()
                && best_tie.is_none_or(|(rank, _)| col.rank < rank)
                && tableau.perturbation_improves(col, &cols)
            {
                best_tie = Some((col.rank, j));
            }
        }
        let entering = match (best_primary, best_tie) {
            (Some((_, _, j)), _) => j,
            (None, Some((_, j))) => j,
            (None, None) => return Ok(tableau.into_basis(n, &cols)),
        };
        let w = tableau.column(&cols[entering]);
        let leaving = tableau
            .lex_ratio_row(&w)
            .ok_or_else(|| Error::InvalidInput("assignment LP reported unbounded".into()))?;
        tableau.pivot(leaving, entering, &w);
    }
    Err(Error::InvalidInput(format!(
        "simplex did not terminate within {MAX_PIVOTS} pivots"
    )))
}

/// Dense basis inverse plus the basic column per row.
struct Tableau {
    m: usize,
    binv: Vec<f64>,
    beta: Vec<f64>,
    basic: Vec<usize>,
}

impl Tableau {
    fn new(m: usize, basic: Vec<usize>) -> Self {
        let mut binv = vec![0.0; m * m];
        for r in 0..m {
            binv[r * m + r] = 1.0;
        }
        Tableau {
            m,
            binv,
            beta: vec![1.0; m],
            basic,
        }
    }

    fn is_basic(&self, j: usize) -> bool {
        self.basic.contains(&j)
    }

    fn duals(&self, cols: &[Column]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for r in 0..m {
            let c = cols[self.basic[r]].cost;
            for (yj, b) in y.iter_mut().zip(&self.binv[r * m..(r + 1) * m]) {
                *yj += c * b;
            }
        }
        y
    }

    /// `B^-1 a_j`.
    fn column(&self, col: &Column) -> Vec<f64> {
        let m = self.m;
        (0..m)
            .map(|r| col.rows.iter().map(|&row| self.binv[r * m + row]).sum())
            .collect()
    }

    /// For a column whose plain reduced cost is zero: does the cost
    /// perturbation make it improving? The perturbed reduced cost has `-1` at
    /// the column's own rank and `+w_r` at the rank of each basic column; the
    /// sign of the lowest-rank nonzero entry decides.
    fn perturbation_improves(&self, col: &Column, cols: &[Column]) -> bool {
        let w = self.column(col);
        let mut lead = (col.rank, -1.0);
        for (r, &wr) in w.iter().enumerate() {
            let rank = cols[self.basic[r]].rank;
            if wr.abs() > PIVOT_TOL && rank < lead.0 {
                lead = (rank, wr);
            }
        }
        lead.1 < 0.0
    }

    /// Lexicographic minimum of `[beta_r, B^-1_r] / w_r` over rows with
    /// `w_r > 0`.
    fn lex_ratio_row(&self, w: &[f64]) -> Option<usize> {
        let m = self.m;
        let key = |r: usize| -> Vec<f64> {
            std::iter::once(self.beta[r])
                .chain(self.binv[r * m..(r + 1) * m].iter().copied())
                .map(|x| x / w[r])
                .collect()
        };
        let mut best: Option<(usize, Vec<f64>)> = None;
        for r in (0..m).filter(|&r| w[r] > PIVOT_TOL) {
            let k = key(r);
            let smaller = match &best {
                None => true,
                Some((_, bk)) => lex_less(&k, bk),
            };
            if smaller {
                best = Some((r, k));
            }
        }
        best.map(|(r, _)| r)
    }

    fn pivot(&mut self, leaving: usize, entering: usize, w: &[f64]) {
        let m = self.m;
        let p = w[leaving];
        for x in &mut self.binv[leaving * m..(leaving + 1) * m] {
            *x /= p;
        }
        self.beta[leaving] /= p;
        let pivot_row: Vec<f64> = self.binv[leaving * m..(leaving + 1) * m].to_vec();
        let pivot_beta = self.beta[leaving];
        for r in (0..m).filter(|&r| r != leaving) {
            let f = w[r];
            if f != 0.0 {
                for (x, pr) in self.binv[r * m..(r + 1) * m].iter_mut().zip(&pivot_row) {
                    *x -= f * pr;
                }
                self.beta[r] -= f * pivot_beta;
            }
        }
        self.basic[leaving] = entering;
    }

    fn into_basis(self, n: usize, cols: &[Column]) -> Basis {
        let mut columns: Vec<BasisColumn> = self
            .basic
            .iter()
            .zip(&self.beta)
            .map(|(&j, &level)| {
                // Basis matrices of the assignment LP are totally unimodular,
                // so levels are integers up to rounding.
                let rounded = level.round();
                let level = if (level - rounded).abs() < 1e-9 { rounded } else { level };
                BasisColumn {
                    id: cols[j].id,
                    cost: cols[j].cost,
                    level: level + 0.0,
                }
            })
            .collect();
        columns.sort_by_key(|c| c.id);
        let objective = columns.iter().map(|c| c.cost * c.level).sum();
        Basis {
            n,
            columns,
            objective,
        }
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > 1e-12 {
            return x < y;
        }
    }
    false
}

/// Centralized lexicographic simplex over the whole problem.
pub fn lex_simplex(p: &AssignmentProblem) -> Result<(Basis, AssignmentPlan)> {
    let n = p.size();
    let columns: Vec<LPColumn> = (0..n)
        .flat_map(|i| (0..n).map(move |k| (i, k)))
        .map(|(i, k)| LPColumn::new(n, i, k, p.cost(i, k)))
        .collect();
    let basis = solve_columns(n, &columns, p.big_m())?;
    if let Some(a) = basis.columns.iter().find(|c| c.id.is_artificial() && c.level > 0.0) {
        return Err(Error::ArtificialInBasis { level: a.level });
    }
    let plan = extract_assignment(&basis)?;
    Ok((basis, plan))
}
