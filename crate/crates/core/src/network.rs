//! Undirected communication graphs and the lockstep round harness that every
//! distributed protocol in the crate runs on.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Undirected graph over nodes `0..n` with a 0/1 symmetric adjacency matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<i64>>", into = "Vec<Vec<i64>>")]
pub struct Graph {
    n: usize,
    adj: Vec<bool>,
}

impl Graph {
    /// Builds a graph from an integer adjacency matrix. Entries of magnitude
    /// one mark an edge, so matrices written with `-1` off-diagonals are
    /// accepted as-is.
    pub fn from_adjacency(rows: &[Vec<i64>]) -> Result<Self> {
        let n = rows.len();
        let mut adj = vec![false; n * n];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidGraph(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &a) in row.iter().enumerate() {
                match a.abs() {
                    0 => {}
                    1 if i == j => {
                        return Err(Error::InvalidGraph(format!("self-loop at node {i}")))
                    }
                    1 => adj[i * n + j] = true,
                    _ => {
                        return Err(Error::InvalidGraph(format!(
                            "entry ({i}, {j}) = {a} is not an edge indicator"
                        )))
                    }
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if adj[i * n + j] != adj[j * n + i] {
                    return Err(Error::InvalidGraph(format!(
                        "adjacency not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Graph { n, adj })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![false; n * n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::NodeOutOfRange { node: i.max(j), n });
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            adj[i * n + j] = true;
            adj[j * n + i] = true;
        }
        Ok(Graph { n, adj })
    }

    pub fn empty(n: usize) -> Self {
        Graph {
            n,
            adj: vec![false; n * n],
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut adj = vec![true; n * n];
        for i in 0..n {
            adj[i * n + i] = false;
        }
        Graph { n, adj }
    }

    /// Cycle `0 - 1 - ... - (n-1) - 0`. For `n == 2` this is a single edge.
    pub fn ring(n: usize) -> Self {
        let mut g = Graph::empty(n);
        if n >= 2 {
            for i in 0..n {
                let j = (i + 1) % n;
                g.adj[i * n + j] = true;
                g.adj[j * n + i] = true;
            }
        }
        g
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && self.adj[i * self.n + j]
    }

    /// Sorted neighbor list of node `i`.
    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>> {
        if i >= self.n {
            return Err(Error::NodeOutOfRange { node: i, n: self.n });
        }
        Ok(self.neighbors_unchecked(i).collect())
    }

    pub(crate) fn neighbors_unchecked(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.adj[i * self.n..(i + 1) * self.n];
        row.iter()
            .enumerate()
            .filter_map(|(j, &edge)| edge.then_some(j))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors_unchecked(i).count()
    }

    fn bfs_depths(&self, source: usize) -> Vec<Option<usize>> {
        let mut depth = vec![None; self.n];
        let mut queue = VecDeque::new();
        depth[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let d = depth[u].unwrap_or(0);
            for w in self.neighbors_unchecked(u) {
                if depth[w].is_none() {
                    depth[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        depth
    }

    /// True iff every node is reachable from node 0. The empty graph counts as
    /// connected.
    pub fn is_connected(&self) -> bool {
        self.n == 0 || self.bfs_depths(0).iter().all(Option::is_some)
    }

    /// Longest shortest path, or `None` when disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let mut diameter = 0;
        for s in 0..self.n {
            for d in self.bfs_depths(s) {
                diameter = diameter.max(d?);
            }
        }
        Some(diameter)
    }

    pub fn ensure_connected(&self) -> Result<()> {
        if self.is_connected() {
            Ok(())
        } else {
            Err(Error::Disconnected)
        }
    }

    pub fn to_adjacency(&self) -> Vec<Vec<i64>> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| i64::from(self.adj[i * self.n + j]))
                    .collect()
            })
            .collect()
    }
}

impl TryFrom<Vec<Vec<i64>>> for Graph {
    type Error = Error;

    fn try_from(rows: Vec<Vec<i64>>) -> Result<Self> {
        Graph::from_adjacency(&rows)
    }
}

impl From<Graph> for Vec<Vec<i64>> {
    fn from(g: Graph) -> Self {
        g.to_adjacency()
    }
}

/// Per-node inboxes for one synchronous round: `(sender, payload)` pairs
/// ordered by sender id.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMailbox<T> {
    inboxes: Vec<Vec<(usize, T)>>,
}

impl<T> RoundMailbox<T> {
    pub fn inbox(&self, node: usize) -> &[(usize, T)] {
        &self.inboxes[node]
    }

    pub fn payloads(&self, node: usize) -> impl Iterator<Item = &T> {
        self.inboxes[node].iter().map(|(_, p)| p)
    }

    pub fn senders(&self, node: usize) -> Vec<usize> {
        self.inboxes[node].iter().map(|&(j, _)| j).collect()
    }

    pub fn node_count(&self) -> usize {
        self.inboxes.len()
    }
}

/// Delivers every node's outgoing payload to each of its neighbors.
pub fn sync_round<T: Clone>(g: &Graph, outgoing: &[T]) -> Result<RoundMailbox<T>> {
    if outgoing.len() != g.n {
        return Err(Error::DimensionMismatch {
            expected: g.n,
            found: outgoing.len(),
        });
    }
    let inboxes = (0..g.n)
        .map(|i| {
            g.neighbors_unchecked(i)
                .map(|j| (j, outgoing[j].clone()))
                .collect()
        })
        .collect();
    Ok(RoundMailbox { inboxes })
}
