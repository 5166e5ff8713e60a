//! Graph data model: labelings, attributed instances, marginal tables,
//! energy functions, and the closed-form maximum-likelihood estimator for
//! forest-structured models.
//!
//! Conventions shared by the whole crate:
//! - probabilities relate to energies as `P(y) ∝ exp(-E(y))`, so lower
//!   energy means higher probability;
//! - edges are stored in canonical orientation `s < t`, and pairwise tables
//!   are indexed `(label of s, label of t)`;
//! - labels are `0..r`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of labels; labels are the indices `0..r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub r: usize,
}

impl LabelSet {
    pub fn new(r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidParameter(
                "label set must be non-empty".into(),
            ));
        }
        Ok(LabelSet { r })
    }

    #[inline]
    pub fn contains(&self, label: usize) -> bool {
        label < self.r
    }
}

/// Undirected graph over nodes `0..m` with edges in canonical orientation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    m: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph, normalizing each edge to `s < t`. Rejects self-loops,
    /// duplicates and out-of-range endpoints.
    pub fn new(m: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut canon = Vec::with_capacity(edges.len());
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b {
                return Err(Error::Graph(format!("self-loop at node {a}")));
            }
            if a >= m || b >= m {
                return Err(Error::Graph(format!(
                    "edge ({a},{b}) out of range for {m} nodes"
                )));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::Graph(format!("duplicate edge ({},{})", e.0, e.1)));
            }
            canon.push(e);
        }
        Ok(Graph { m, edges: canon })
    }

    /// Node count.
    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.m
    }

    /// Edge count.
    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges in canonical orientation, in insertion order.
    #[inline]
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Per-node list of `(neighbor, edge index)` pairs.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m];
        for (e, &(s, t)) in self.edges.iter().enumerate() {
            adj[s].push((t, e));
            adj[t].push((s, e));
        }
        adj
    }

    /// Node degrees.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.m];
        for &(s, t) in &self.edges {
            deg[s] += 1;
            deg[t] += 1;
        }
        deg
    }

    /// True iff the graph is acyclic (a forest). Connectivity is not required.
    pub fn is_forest(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.m).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(s, t) in &self.edges {
            let (rs, rt) = (find(&mut parent, s), find(&mut parent, t));
            if rs == rt {
                return false;
            }
            parent[rs] = rt;
        }
        true
    }

    /// Nodes with no incident edges.
    pub fn isolated_nodes(&self) -> Vec<usize> {
        self.degrees()
            .iter()
            .enumerate()
            .filter(|&(_, &d)| d == 0)
            .map(|(s, _)| s)
            .collect()
    }
}

/// Joint label assignment, one label per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Labeling(pub Vec<usize>);

impl Labeling {
    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, graph: &Graph, labels: LabelSet) -> Result<()> {
        if self.0.len() != graph.num_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "labeling has {} entries, graph has {} nodes",
                self.0.len(),
                graph.num_nodes()
            )));
        }
        for &y in &self.0 {
            if !labels.contains(y) {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    r: labels.r,
                });
            }
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for Labeling {
    type Output = usize;
    #[inline]
    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

/// One attributed graph: topology plus per-node and per-edge feature vectors
/// and, for training data, a ground-truth labeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub graph: Graph,
    pub node_features: Vec<Vec<f64>>,
    pub edge_features: Vec<Vec<f64>>,
    pub labels: Option<Labeling>,
}

impl Instance {
    pub fn new(
        graph: Graph,
        node_features: Vec<Vec<f64>>,
        edge_features: Vec<Vec<f64>>,
        labels: Option<Labeling>,
    ) -> Result<Self> {
        if node_features.len() != graph.num_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "{} node feature vectors for {} nodes",
                node_features.len(),
                graph.num_nodes()
            )));
        }
        if edge_features.len() != graph.num_edges() {
            return Err(Error::DimensionMismatch(format!(
                "{} edge feature vectors for {} edges",
                edge_features.len(),
                graph.num_edges()
            )));
        }
        let node_dim = node_features.first().map_or(0, Vec::len);
        if node_features.iter().any(|f| f.len() != node_dim) {
            return Err(Error::DimensionMismatch(
                "node feature dimensions not uniform".into(),
            ));
        }
        let edge_dim = edge_features.first().map_or(0, Vec::len);
        if edge_features.iter().any(|f| f.len() != edge_dim) {
            return Err(Error::DimensionMismatch(
                "edge feature dimensions not uniform".into(),
            ));
        }
        for f in node_features.iter().chain(edge_features.iter()) {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("feature vector entry".into()));
            }
        }
        Ok(Instance {
            graph,
            node_features,
            edge_features,
            labels,
        })
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.first().map_or(0, Vec::len)
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.first().map_or(0, Vec::len)
    }
}

/// Unary and pairwise label marginals over one graph.
///
/// `unary[s][j]` is the probability of node `s` taking label `j`;
/// `pairwise[e][j * r + k]` is the probability of edge `e = (s,t)` taking
/// the pair `(j, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTables {
    pub r: usize,
    pub unary: Vec<Vec<f64>>,
    pub pairwise: Vec<Vec<f64>>,
}

impl MarginalTables {
    #[inline]
    pub fn pair(&self, edge: usize, j: usize, k: usize) -> f64 {
        self.pairwise[edge][j * self.r + k]
    }

    /// Checks normalization and edge-node consistency within `tol`.
    /// Returns the maximum violation on success.
    pub fn check_consistency(&self, graph: &Graph, tol: f64) -> Result<f64> {
        let r = self.r;
        let mut worst = 0.0f64;
        for row in &self.unary {
            let sum: f64 = row.iter().sum();
            worst = worst.max((sum - 1.0).abs());
        }
        for table in &self.pairwise {
            let sum: f64 = table.iter().sum();
            worst = worst.max((sum - 1.0).abs());
        }
        for (e, &(s, t)) in graph.edges().iter().enumerate() {
            for j in 0..r {
                let row: f64 = (0..r).map(|k| self.pair(e, j, k)).sum();
                worst = worst.max((row - self.unary[s][j]).abs());
            }
            for k in 0..r {
                let col: f64 = (0..r).map(|j| self.pair(e, j, k)).sum();
                worst = worst.max((col - self.unary[t][k]).abs());
            }
        }
        if worst > tol {
            return Err(Error::InconsistentMarginals(worst));
        }
        Ok(worst)
    }
}

/// Pairwise energy function over a graph: `E(y) = Σ_s unary[s][y_s] +
/// Σ_{(s,t)} pairwise[e][y_s * r + y_t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyFunction {
    pub graph: Graph,
    pub r: usize,
    pub unary: Vec<Vec<f64>>,
    pub pairwise: Vec<Vec<f64>>,
}

impl EnergyFunction {
    /// All-zero tables (the uniform distribution).
    pub fn zeros(graph: Graph, r: usize) -> Self {
        let m = graph.num_nodes();
        let e = graph.num_edges();
        EnergyFunction {
            graph,
            r,
            unary: vec![vec![0.0; r]; m],
            pairwise: vec![vec![0.0; r * r]; e],
        }
    }

    /// Builds an energy function, validating table shapes and finiteness.
    pub fn new(
        graph: Graph,
        r: usize,
        unary: Vec<Vec<f64>>,
        pairwise: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if unary.len() != graph.num_nodes() || unary.iter().any(|u| u.len() != r) {
            return Err(Error::DimensionMismatch("unary table shape".into()));
        }
        if pairwise.len() != graph.num_edges() || pairwise.iter().any(|p| p.len() != r * r) {
            return Err(Error::DimensionMismatch("pairwise table shape".into()));
        }
        if unary
            .iter()
            .chain(pairwise.iter())
            .any(|t| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("energy table entry".into()));
        }
        Ok(EnergyFunction {
            graph,
            r,
            unary,
            pairwise,
        })
    }

    #[inline]
    pub fn pair(&self, edge: usize, j: usize, k: usize) -> f64 {
        self.pairwise[edge][j * self.r + k]
    }

    /// Evaluates `E(y)`.
    pub fn energy(&self, y: &Labeling) -> Result<f64> {
        if y.len() != self.graph.num_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "labeling has {} entries, energy has {} nodes",
                y.len(),
                self.graph.num_nodes()
            )));
        }
        for &l in &y.0 {
            if l >= self.r {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    r: self.r,
                });
            }
        }
        let mut e = 0.0;
        for (s, u) in self.unary.iter().enumerate() {
            e += u[y[s]];
        }
        for (idx, &(s, t)) in self.graph.edges().iter().enumerate() {
            e += self.pair(idx, y[s], y[t]);
        }
        Ok(e)
    }
}

/// Upper bound on the enumerable state count `r^m` used by exhaustive
/// operations.
pub const ENUMERATION_GUARD: u64 = 1 << 20;

/// Checks `r^m <= ENUMERATION_GUARD` and returns the state count.
pub(crate) fn enumerable_states(m: usize, r: usize) -> Result<u64> {
    let states = (r as f64).powi(m as i32);
    if states > ENUMERATION_GUARD as f64 {
        return Err(Error::StateSpaceTooLarge {
            states,
            guard: ENUMERATION_GUARD,
        });
    }
    let mut n = 1u64;
    for _ in 0..m {
        n *= r as u64;
    }
    Ok(n)
}

/// Iterates all labelings of `m` nodes over `r` labels in lexicographic
/// order (node 0 most significant), calling `visit` on each.
pub(crate) fn for_each_labeling<F: FnMut(&[usize])>(m: usize, r: usize, mut visit: F) {
    let mut y = vec![0usize; m];
    loop {
        visit(&y);
        // increment rightmost position first
        let mut i = m;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            y[i] += 1;
            if y[i] < r {
                break;
            }
            y[i] = 0;
        }
    }
}

/// Empirical unary and pairwise marginals of a set of sampled labelings.
///
/// Counts are accumulated as integers and divided by the sample count once,
/// so the node/edge consistency identities hold exactly.
pub fn empirical_marginals(
    samples: &[Labeling],
    graph: &Graph,
    labels: LabelSet,
) -> Result<MarginalTables> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let (m, r) = (graph.num_nodes(), labels.r);
    let mut unary = vec![vec![0u64; r]; m];
    let mut pairwise = vec![vec![0u64; r * r]; graph.num_edges()];
    for y in samples {
        y.validate(graph, labels)?;
        for s in 0..m {
            unary[s][y[s]] += 1;
        }
        for (e, &(s, t)) in graph.edges().iter().enumerate() {
            pairwise[e][y[s] * r + y[t]] += 1;
        }
    }
    let t = samples.len() as f64;
    Ok(MarginalTables {
        r,
        unary: unary
            .into_iter()
            .map(|row| row.into_iter().map(|c| c as f64 / t).collect())
            .collect(),
        pairwise: pairwise
            .into_iter()
            .map(|row| row.into_iter().map(|c| c as f64 / t).collect())
            .collect(),
    })
}

/// Closed-form maximum-likelihood energy for a forest-structured model with
/// the given marginals.
///
/// Marginals are floored at `epsilon` before taking logarithms, then
/// `unary[s][j] = -ln μ_{s;j}` and
/// `pairwise[e][j,k] = -ln( μ_{st;jk} / (μ_{s;j} μ_{t;k}) )`.
/// With strictly positive consistent marginals, exact inference on the
/// result reproduces the input marginals.
pub fn tree_ml_params(
    marginals: &MarginalTables,
    graph: &Graph,
    epsilon: f64,
) -> Result<EnergyFunction> {
    if !graph.is_forest() {
        return Err(Error::CyclicGraph);
    }
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidParameter("epsilon must be >= 0".into()));
    }
    marginals.check_consistency(graph, 1e-6)?;
    let r = marginals.r;
    let floor = |v: f64| v.max(epsilon);
    if epsilon == 0.0 {
        let any_zero = marginals
            .unary
            .iter()
            .chain(marginals.pairwise.iter())
            .any(|t| t.iter().any(|&v| v <= 0.0));
        if any_zero {
            return Err(Error::InvalidParameter(
                "zero marginal with epsilon = 0 would give infinite energy".into(),
            ));
        }
    }
    let unary: Vec<Vec<f64>> = marginals
        .unary
        .iter()
        .map(|row| row.iter().map(|&v| -floor(v).ln()).collect())
        .collect();
    let mut pairwise = vec![vec![0.0; r * r]; graph.num_edges()];
    for (e, &(s, t)) in graph.edges().iter().enumerate() {
        for j in 0..r {
            for k in 0..r {
                let joint = floor(marginals.pair(e, j, k));
                let prod = floor(marginals.unary[s][j]) * floor(marginals.unary[t][k]);
                pairwise[e][j * r + k] = -(joint / prod).ln();
            }
        }
    }
    EnergyFunction::new(graph.clone(), r, unary, pairwise)
}

/// Log-partition function `ln Σ_y exp(-E(y))` by exhaustive enumeration.
///
/// Guarded by [`ENUMERATION_GUARD`]; accumulation is overflow-safe.
pub fn exact_partition(energy: &EnergyFunction) -> Result<f64> {
    let (m, r) = (energy.graph.num_nodes(), energy.r);
    enumerable_states(m, r)?;
    // streaming log-sum-exp: keep (max, sum of exp(x - max))
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0f64;
    let edges = energy.graph.edges();
    for_each_labeling(m, r, |y| {
        let mut e = 0.0;
        for s in 0..m {
            e += energy.unary[s][y[s]];
        }
        for (idx, &(s, t)) in edges.iter().enumerate() {
            e += energy.pairwise[idx][y[s] * r + y[t]];
        }
        let x = -e;
        if x > max {
            sum = sum * (max - x).exp() + 1.0;
            max = x;
        } else {
            sum += (x - max).exp();
        }
    });
    Ok(max + sum.ln())
}
