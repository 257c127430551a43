//! Agent-to-region assignment as a linear program.
//!
//! With `N` agents and `N` regions the decision variables `Z_ik` (agent `i`
//! serves region `k`) live in a standard-form LP
//!
//! ```text
//! min  sum_ik C_ik Z_ik
//! s.t. sum_k Z_ik = 1  (every agent)
//!      sum_i Z_ik = 1  (every region)
//!      Z >= 0
//! ```
//!
//! whose vertices are permutation matrices. Column `(i, k)` carries its cost
//! and a 0/1 incidence vector with ones at rows `i` and `N + k`; agent `i`
//! owns exactly the columns `(i, *)`.
//!
//! The constraint matrix has rank `2N - 1` (row and column sums both total
//! `N`), so the solvers drop the last region row and work with `2N - 1`
//! equality constraints. Bases therefore hold `2N - 1` columns.

mod distributed;
mod hungarian;
mod simplex;

pub use distributed::{distributed_simplex, DistributedOutcome, MAX_ROUNDS};
pub use hungarian::hungarian_oracle;
pub use simplex::{lex_simplex, solve_columns};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Square, finite cost matrix `C[agent][region]`. Entries may be negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentProblem {
    n: usize,
    cost: Vec<Vec<f64>>,
}

impl AssignmentProblem {
    pub fn new(cost: Vec<Vec<f64>>) -> Result<Self> {
        let n = cost.len();
        if n == 0 {
            return Err(Error::InvalidInput("assignment needs at least one agent".into()));
        }
        for (i, row) in cost.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidInput(format!(
                    "cost matrix is not square: row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|c| !c.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite cost {bad} in row {i}")));
            }
        }
        Ok(AssignmentProblem { n, cost })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn cost(&self, agent: usize, region: usize) -> f64 {
        self.cost[agent][region]
    }

    pub fn costs(&self) -> &[Vec<f64>] {
        &self.cost
    }

    /// Artificial-column cost that dominates every feasible objective.
    pub fn big_m(&self) -> f64 {
        big_m_for(&self.cost)
    }

    /// Objective value of a plan.
    pub fn value(&self, plan: &AssignmentPlan) -> f64 {
        plan.region_of
            .iter()
            .enumerate()
            .map(|(i, &k)| self.cost[i][k])
            .sum()
    }
}

/// `1 + 2N (1 + max |C|)`.
pub fn big_m_for(cost: &[Vec<f64>]) -> f64 {
    let max_abs = cost
        .iter()
        .flatten()
        .fold(0.0_f64, |m, c| m.max(c.abs()));
    1.0 + 2.0 * cost.len() as f64 * (1.0 + max_abs)
}

/// Column `(owner, region)` of the LP: its cost and incidence vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LPColumn {
    pub owner: usize,
    pub region: usize,
    pub cost: f64,
    /// Length `2N`, ones at `owner` and `N + region`.
    pub incidence: Vec<u8>,
}

impl LPColumn {
    pub fn new(n: usize, owner: usize, region: usize, cost: f64) -> Self {
        let mut incidence = vec![0; 2 * n];
        incidence[owner] = 1;
        incidence[n + region] = 1;
        LPColumn {
            owner,
            region,
            cost,
            incidence,
        }
    }

    pub fn id(&self) -> ColumnId {
        ColumnId::Structural {
            agent: self.owner,
            region: self.region,
        }
    }
}

/// Identity of a column. Structural columns order by `(agent, region)` and
/// precede the artificial columns, which order by row. This order drives all
/// tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ColumnId {
    Structural { agent: usize, region: usize },
    Artificial { row: usize },
}

impl ColumnId {
    pub fn is_artificial(&self) -> bool {
        matches!(self, ColumnId::Artificial { .. })
    }

    /// Position in the global tie-breaking order for an `n`-agent problem.
    pub(crate) fn rank(&self, n: usize) -> usize {
        match *self {
            ColumnId::Structural { agent, region } => agent * n + region,
            ColumnId::Artificial { row } => n * n + row,
        }
    }
}

/// Builds the LP columns and splits them into the per-agent sets
/// `P^i = {(i, k)}_k`.
pub fn build_problem(costs: Vec<Vec<f64>>) -> Result<(AssignmentProblem, Vec<Vec<LPColumn>>)> {
    let problem = AssignmentProblem::new(costs)?;
    let n = problem.n;
    let sets = (0..n)
        .map(|i| (0..n).map(|k| LPColumn::new(n, i, k, problem.cost[i][k])).collect())
        .collect();
    Ok((problem, sets))
}

/// A basic column and its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisColumn {
    pub id: ColumnId,
    pub cost: f64,
    pub level: f64,
}

/// Simplex basis of the `2N - 1` row LP, columns sorted by [`ColumnId`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub n: usize,
    pub columns: Vec<BasisColumn>,
    pub objective: f64,
}

impl Basis {
    pub fn ids(&self) -> Vec<ColumnId> {
        self.columns.iter().map(|c| c.id).collect()
    }

    pub fn has_artificial(&self) -> bool {
        self.columns.iter().any(|c| c.id.is_artificial())
    }

    /// Structural basic columns as LP columns, for exchange with neighbors.
    pub fn structural_columns(&self) -> Vec<LPColumn> {
        self.columns
            .iter()
            .filter_map(|c| match c.id {
                ColumnId::Structural { agent, region } => {
                    Some(LPColumn::new(self.n, agent, region, c.cost))
                }
                ColumnId::Artificial { .. } => None,
            })
            .collect()
    }
}

/// Region assigned to each agent; a bijection.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssignmentPlan {
    region_of: Vec<usize>,
}

impl AssignmentPlan {
    pub fn new(region_of: Vec<usize>) -> Result<Self> {
        let n = region_of.len();
        let mut seen = vec![false; n];
        for &k in &region_of {
            if k >= n || std::mem::replace(&mut seen[k], true) {
                return Err(Error::InvalidInput(format!(
                    "assignment {region_of:?} is not a permutation"
                )));
            }
        }
        Ok(AssignmentPlan { region_of })
    }

    pub fn region_of(&self, agent: usize) -> usize {
        self.region_of[agent]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.region_of
    }

    pub fn len(&self) -> usize {
        self.region_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region_of.is_empty()
    }

    /// `Z[i][k] = 1` iff agent `i` serves region `k`.
    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        let n = self.region_of.len();
        self.region_of
            .iter()
            .map(|&k| {
                let mut row = vec![0; n];
                row[k] = 1;
                row
            })
            .collect()
    }

    /// `{"0": k0, "1": k1, ...}` as written to `plan.json`.
    pub fn to_map(&self) -> BTreeMap<String, usize> {
        self.region_of
            .iter()
            .enumerate()
            .map(|(i, &k)| (i.to_string(), k))
            .collect()
    }
}

/// Reads the permutation off an optimal basis: agent `i` goes to region `k`
/// for every basic column `(i, k)` at level one.
pub fn extract_assignment(basis: &Basis) -> Result<AssignmentPlan> {
    const TOL: f64 = 1e-9;
    let n = basis.n;
    let mut region_of = vec![usize::MAX; n];
    for c in &basis.columns {
        match c.id {
            ColumnId::Artificial { .. } => return Err(Error::ArtificialInBasis { level: c.level }),
            ColumnId::Structural { agent, region } => {
                if (c.level - 1.0).abs() <= TOL {
                    if region_of[agent] != usize::MAX {
                        return Err(Error::Fractional {
                            agent,
                            region,
                            value: c.level,
                        });
                    }
                    region_of[agent] = region;
                } else if c.level.abs() > TOL {
                    return Err(Error::Fractional {
                        agent,
                        region,
                        value: c.level,
                    });
                }
            }
        }
    }
    if let Some(agent) = region_of.iter().position(|&k| k == usize::MAX) {
        return Err(Error::InvalidInput(format!("agent {agent} has no region in the basis")));
    }
    AssignmentPlan::new(region_of)
}
