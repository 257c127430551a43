use std::collections::BTreeSet;

use crate::network::{sync_round, Graph};
use crate::{Error, Result};

use super::{extract_assignment, AssignmentPlan, Basis, ColumnId, LPColumn};
use super::simplex::solve_columns;

/// Hard cap on exchange rounds.
pub const MAX_ROUNDS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedOutcome {
    /// Final basis held by each agent.
    pub bases: Vec<Basis>,
    /// Exchange rounds run, including the stable ones.
    pub rounds: usize,
}

impl DistributedOutcome {
    /// The plan each agent reads off its own basis.
    pub fn plans(&self) -> Result<Vec<AssignmentPlan>> {
        self.bases.iter().map(extract_assignment).collect()
    }

    /// True when every agent holds the same basis.
    pub fn agreed(&self) -> bool {
        self.bases.windows(2).all(|w| w[0] == w[1])
    }
}

/// Column-partitioned simplex over a network.
///
/// Agent `i` permanently holds `local_columns[i]`. It starts from the optimum
/// of its own columns; every round it sends the structural columns of its
/// current basis to its neighbors and re-solves over its permanent columns,
/// its current basis and everything it received. Because the optimum of every
/// column set is unique, an agent's basis only ever improves and a state in
/// which no basis changes is a common global optimum. The run stops once the
/// bases have been unchanged for `max(diameter, 1)` consecutive rounds.
pub fn distributed_simplex(
    g: &Graph,
    local_columns: &[Vec<LPColumn>],
    big_m: f64,
) -> Result<DistributedOutcome> {
    g.ensure_connected()?;
    let agents = g.node_count();
    if local_columns.len() != agents {
        return Err(Error::DimensionMismatch {
            expected: agents,
            found: local_columns.len(),
        });
    }
    let n = check_partition(local_columns)?;
    let patience = g.diameter().unwrap_or(0).max(1);

    let mut bases = local_columns
        .iter()
        .map(|cols| solve_columns(n, cols, big_m))
        .collect::<Result<Vec<_>>>()?;

    let mut stable = 0;
    for round in 1..=MAX_ROUNDS {
        let outgoing: Vec<Vec<LPColumn>> = bases.iter().map(Basis::structural_columns).collect();
        let mailbox = sync_round(g, &outgoing)?;
        let next = (0..agents)
            .map(|i| {
                let mut pool = local_columns[i].clone();
                pool.extend(outgoing[i].iter().cloned());
                for cols in mailbox.payloads(i) {
                    pool.extend(cols.iter().cloned());
                }
                solve_columns(n, &pool, big_m)
            })
            .collect::<Result<Vec<_>>>()?;
        if next == bases {
            stable += 1;
        } else {
            stable = 0;
            bases = next;
        }
        if stable >= patience {
            return Ok(DistributedOutcome { bases, rounds: round });
        }
    }
    Err(Error::InvalidInput(format!(
        "distributed simplex did not settle within {MAX_ROUNDS} rounds"
    )))
}

/// Checks that the sets cover every `(agent, region)` column exactly once and
/// returns the problem size.
fn check_partition(local_columns: &[Vec<LPColumn>]) -> Result<usize> {
    let first = local_columns
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::ColumnPartition("no columns".into()))?;
    let n = first.incidence.len() / 2;
    let mut seen = BTreeSet::new();
    for c in local_columns.iter().flatten() {
        if c.incidence.len() != 2 * n || c.owner >= n || c.region >= n {
            return Err(Error::ColumnPartition(format!(
                "column ({}, {}) does not belong to a {n}-agent problem",
                c.owner, c.region
            )));
        }
        if !seen.insert(c.id()) {
            return Err(Error::ColumnPartition(format!(
                "column ({}, {}) held more than once",
                c.owner, c.region
            )));
        }
    }
    if seen.len() != n * n {
        let missing = (0..n)
            .flat_map(|i| (0..n).map(move |k| ColumnId::Structural { agent: i, region: k }))
            .find(|id| !seen.contains(id));
        return Err(Error::ColumnPartition(format!("column {missing:?} held by nobody")));
    }
    Ok(n)
}
