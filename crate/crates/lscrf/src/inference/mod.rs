//! Probabilistic inference and MAP labeling over [`EnergyFunction`]s.
//!
//! Exact routines (`exact_map`, enumeration-backed oracles) are guarded by
//! the global state-space limit; message-passing routines handle forests
//! exactly and loopy graphs approximately.

mod gibbs;
mod tree;
mod trws;

pub use gibbs::{gibbs_sample, GibbsOptions};
pub use tree::{tree_log_partition, tree_map, tree_marginals, tree_sample};
pub use trws::{trws_map, trws_map_trace, TrwsOptions};

use crate::error::{Error, Result};
use crate::graph::{enumerable_states, for_each_labeling, EnergyFunction, Labeling};

/// Outcome of a MAP solver: the labeling found, its energy, an optional
/// dual lower bound, and the number of iterations or sweeps performed.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub labeling: Labeling,
    pub energy: f64,
    pub lower_bound: Option<f64>,
    pub iterations: usize,
}

/// Global energy minimizer by exhaustive enumeration; ties are broken
/// towards the lexicographically smallest labeling.
pub fn exact_map(energy: &EnergyFunction) -> Result<InferenceResult> {
    let (m, r) = (energy.graph.num_nodes(), energy.r);
    enumerable_states(m, r)?;
    let edges = energy.graph.edges();
    let mut best = f64::INFINITY;
    let mut best_y = vec![0usize; m];
    for_each_labeling(m, r, |y| {
        let mut e = 0.0;
        for s in 0..m {
            e += energy.unary[s][y[s]];
        }
        for (idx, &(s, t)) in edges.iter().enumerate() {
            e += energy.pairwise[idx][y[s] * r + y[t]];
        }
        // lexicographic enumeration + strict < keeps the smallest tie
        if e < best {
            best = e;
            best_y.copy_from_slice(y);
        }
    });
    let labeling = Labeling(best_y);
    let e = energy.energy(&labeling)?;
    Ok(InferenceResult {
        labeling,
        energy: e,
        lower_bound: Some(e),
        iterations: 0,
    })
}

/// Iterated conditional modes: greedy per-node coordinate descent.
///
/// A node's label changes only when the move strictly lowers its local
/// energy, so the total energy never increases; terminates at a local
/// minimum or after `max_sweeps` sweeps.
pub fn icm(energy: &EnergyFunction, init: &Labeling, max_sweeps: usize) -> Result<InferenceResult> {
    let (m, r) = (energy.graph.num_nodes(), energy.r);
    init.validate(&energy.graph, crate::graph::LabelSet { r })?;
    let adj = energy.graph.adjacency();
    let edges = energy.graph.edges();
    let mut y = init.0.clone();
    let mut sweeps = 0;
    for _ in 0..max_sweeps {
        let mut changed = false;
        for s in 0..m {
            let mut local = vec![0.0f64; r];
            for (j, l) in local.iter_mut().enumerate() {
                *l = energy.unary[s][j];
            }
            for &(t, e) in &adj[s] {
                let (a, _) = edges[e];
                for (j, l) in local.iter_mut().enumerate() {
                    *l += if s == a {
                        energy.pairwise[e][j * r + y[t]]
                    } else {
                        energy.pairwise[e][y[t] * r + j]
                    };
                }
            }
            let mut best = 0usize;
            for j in 1..r {
                if local[j] < local[best] {
                    best = j;
                }
            }
            if best != y[s] && local[best] < local[y[s]] {
                y[s] = best;
                changed = true;
            }
        }
        sweeps += 1;
        if !changed {
            break;
        }
    }
    let labeling = Labeling(y);
    let e = energy.energy(&labeling)?;
    Ok(InferenceResult {
        labeling,
        energy: e,
        lower_bound: None,
        iterations: sweeps,
    })
}

/// Rooted view of a forest: BFS order per component with the smallest node
/// index as root.
pub(crate) struct RootedForest {
    /// Nodes in BFS order, roots first within each component.
    pub order: Vec<usize>,
    /// `(parent, edge index)` per node; `None` for roots.
    pub parent: Vec<Option<(usize, usize)>>,
    pub roots: Vec<usize>,
}

impl RootedForest {
    pub fn build(graph: &crate::graph::Graph) -> Result<Self> {
        if !graph.is_forest() {
            return Err(Error::CyclicGraph);
        }
        let m = graph.num_nodes();
        let adj = graph.adjacency();
        let mut order = Vec::with_capacity(m);
        let mut parent = vec![None; m];
        let mut visited = vec![false; m];
        let mut roots = Vec::new();
        for root in 0..m {
            if visited[root] {
                continue;
            }
            roots.push(root);
            visited[root] = true;
            let mut queue = std::collections::VecDeque::from([root]);
            while let Some(s) = queue.pop_front() {
                order.push(s);
                for &(t, e) in &adj[s] {
                    if !visited[t] {
                        visited[t] = true;
                        parent[t] = Some((s, e));
                        queue.push_back(t);
                    }
                }
            }
        }
        Ok(RootedForest {
            order,
            parent,
            roots,
        })
    }
}

/// Energy of the pairwise table entry for edge `e = (a, b)` (canonical
/// `a < b`) when node `node` takes `node_label` and the other endpoint
/// takes `other_label`.
#[inline]
pub(crate) fn edge_entry(
    energy: &EnergyFunction,
    e: usize,
    node: usize,
    node_label: usize,
    other_label: usize,
) -> f64 {
    let (a, _) = energy.graph.edges()[e];
    if node == a {
        energy.pairwise[e][node_label * energy.r + other_label]
    } else {
        energy.pairwise[e][other_label * energy.r + node_label]
    }
}

/// Stable `ln Σ exp(x_i)`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}
