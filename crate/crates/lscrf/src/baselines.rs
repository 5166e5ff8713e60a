//! Classical conditional-likelihood trainers for log-linear pairwise CRFs,
//! used as references: independent logistic unaries, pseudolikelihood,
//! piecewise, and exact conditional likelihood on forests.
//!
//! All four objectives are convex and share one parameter layout
//! (`r × D_node` unary weights followed by `r² × D_edge` pair weights) and
//! one full-batch gradient-descent optimizer with backtracking line search,
//! so accuracy comparisons isolate the training objective. Energies are
//! `E(x,y;w) = Σ_s ⟨w_u[y_s], φ_s⟩ + Σ_{st} ⟨w_p[y_s,y_t], φ_st⟩` with
//! `P(y|x) ∝ exp(-E)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EnergyFunction, Instance, LabelSet};
use crate::inference::{tree_log_partition, tree_marginals};

/// Log-linear CRF weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearCRF {
    pub r: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    /// `r` weight vectors over node features.
    pub w_unary: Vec<Vec<f64>>,
    /// `r²` weight vectors over edge features, indexed `j * r + k`.
    pub w_pair: Vec<Vec<f64>>,
}

impl LogLinearCRF {
    fn from_flat(layout: &Layout, w: &[f64]) -> Self {
        LogLinearCRF {
            r: layout.r,
            node_dim: layout.node_dim,
            edge_dim: layout.edge_dim,
            w_unary: (0..layout.r)
                .map(|j| w[layout.unary(j)..layout.unary(j) + layout.node_dim].to_vec())
                .collect(),
            w_pair: (0..layout.r * layout.r)
                .map(|jk| w[layout.pair(jk)..layout.pair(jk) + layout.edge_dim].to_vec())
                .collect(),
        }
    }

    /// Instantiates the energy tables for one instance.
    pub fn energy(&self, instance: &Instance) -> Result<EnergyFunction> {
        if instance.node_dim() != self.node_dim && instance.graph.num_nodes() > 0 {
            return Err(Error::DimensionMismatch(format!(
                "instance node dim {} vs model {}",
                instance.node_dim(),
                self.node_dim
            )));
        }
        if instance.graph.num_edges() > 0 && instance.edge_dim() != self.edge_dim {
            return Err(Error::DimensionMismatch(format!(
                "instance edge dim {} vs model {}",
                instance.edge_dim(),
                self.edge_dim
            )));
        }
        let r = self.r;
        let mut energy = EnergyFunction::zeros(instance.graph.clone(), r);
        for (s, phi) in instance.node_features.iter().enumerate() {
            for j in 0..r {
                energy.unary[s][j] = dot(&self.w_unary[j], phi);
            }
        }
        for (e, phi) in instance.edge_features.iter().enumerate() {
            for jk in 0..r * r {
                energy.pairwise[e][jk] = dot(&self.w_pair[jk], phi);
            }
        }
        Ok(energy)
    }
}

/// Optimization outcome: the fitted model plus convergence diagnostics.
#[derive(Debug, Clone)]
pub struct BaselineFit {
    pub model: LogLinearCRF,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Stable `ln Σ exp(-e_j)` over an energy slice.
fn neg_log_sum_exp(energies: &[f64]) -> f64 {
    let min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    min.neg_lse_rest(energies)
}

trait NegLse {
    fn neg_lse_rest(self, energies: &[f64]) -> f64;
}

impl NegLse for f64 {
    fn neg_lse_rest(self, energies: &[f64]) -> f64 {
        -self
            + energies
                .iter()
                .map(|&e| (-(e - self)).exp())
                .sum::<f64>()
                .ln()
    }
}

/// Flat parameter layout shared by every baseline objective.
#[derive(Debug, Clone, Copy)]
struct Layout {
    r: usize,
    node_dim: usize,
    edge_dim: usize,
}

impl Layout {
    fn dim(&self) -> usize {
        self.r * self.node_dim + self.r * self.r * self.edge_dim
    }

    #[inline]
    fn unary(&self, j: usize) -> usize {
        j * self.node_dim
    }

    #[inline]
    fn pair(&self, jk: usize) -> usize {
        self.r * self.node_dim + jk * self.edge_dim
    }
}

/// Which surrogate of the conditional likelihood is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Logistic,
    Pseudolikelihood,
    Piecewise,
    TreeCll,
}

struct Problem<'a> {
    instances: &'a [Instance],
    labels: LabelSet,
    layout: Layout,
    lambda: f64,
    objective: Objective,
}

impl Problem<'_> {
    /// Objective value and gradient at `w`; per-instance contributions are
    /// reduced in instance order, so the result is thread-count
    /// independent.
    fn eval(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let per_instance: Vec<(f64, Vec<f64>)> = self
            .instances
            .par_iter()
            .map(|inst| self.eval_instance(inst, w))
            .collect();
        let mut value = 0.0;
        let mut grad = vec![0.0; self.layout.dim()];
        for (v, g) in &per_instance {
            value += v;
            for (slot, gi) in grad.iter_mut().zip(g) {
                *slot += gi;
            }
        }
        // ridge term
        for (slot, &wi) in grad.iter_mut().zip(w) {
            *slot += 2.0 * self.lambda * wi;
        }
        value += self.lambda * w.iter().map(|v| v * v).sum::<f64>();
        (value, grad)
    }

    fn eval_instance(&self, inst: &Instance, w: &[f64]) -> (f64, Vec<f64>) {
        match self.objective {
            Objective::Logistic => self.eval_logistic(inst, w, false),
            Objective::Pseudolikelihood => self.eval_logistic(inst, w, true),
            Objective::Piecewise => self.eval_piecewise(inst, w),
            Objective::TreeCll => self.eval_tree_cll(inst, w),
        }
    }

    /// Per-node multinomial logistic loss; with `condition_on_neighbors`
    /// each node's energies include the pair terms towards the observed
    /// neighbor labels, which is the pseudolikelihood.
    fn eval_logistic(
        &self,
        inst: &Instance,
        w: &[f64],
        condition_on_neighbors: bool,
    ) -> (f64, Vec<f64>) {
        let r = self.labels.r;
        let lay = &self.layout;
        let y = inst.labels.as_ref().expect("validated");
        let adj = inst.graph.adjacency();
        let edges = inst.graph.edges();
        let mut value = 0.0;
        let mut grad = vec![0.0; lay.dim()];
        let mut energies = vec![0.0f64; r];
        for s in 0..inst.graph.num_nodes() {
            let phi = &inst.node_features[s];
            for (j, slot) in energies.iter_mut().enumerate() {
                *slot = dot(&w[lay.unary(j)..lay.unary(j) + lay.node_dim], phi);
            }
            if condition_on_neighbors {
                for &(t, e) in &adj[s] {
                    let phi_e = &inst.edge_features[e];
                    let (a, _) = edges[e];
                    for (j, slot) in energies.iter_mut().enumerate() {
                        let jk = if s == a { j * r + y[t] } else { y[t] * r + j };
                        *slot += dot(&w[lay.pair(jk)..lay.pair(jk) + lay.edge_dim], phi_e);
                    }
                }
            }
            let lse = neg_log_sum_exp(&energies);
            value += energies[y[s]] + lse;
            for j in 0..r {
                let p = (-energies[j] - lse).exp();
                let c = f64::from(u8::from(y[s] == j)) - p;
                let base = lay.unary(j);
                for (d, &x) in phi.iter().enumerate() {
                    grad[base + d] += c * x;
                }
                if condition_on_neighbors {
                    for &(t, e) in &adj[s] {
                        let phi_e = &inst.edge_features[e];
                        let (a, _) = edges[e];
                        let jk = if s == a { j * r + y[t] } else { y[t] * r + j };
                        let base = lay.pair(jk);
                        for (d, &x) in phi_e.iter().enumerate() {
                            grad[base + d] += c * x;
                        }
                    }
                }
            }
        }
        (value, grad)
    }

    /// Per-edge local normalization over the r² pair labels.
    fn eval_piecewise(&self, inst: &Instance, w: &[f64]) -> (f64, Vec<f64>) {
        let r = self.labels.r;
        let lay = &self.layout;
        let y = inst.labels.as_ref().expect("validated");
        let mut value = 0.0;
        let mut grad = vec![0.0; lay.dim()];
        let mut energies = vec![0.0f64; r * r];
        for (e, &(s, t)) in inst.graph.edges().iter().enumerate() {
            let phi = &inst.edge_features[e];
            for (jk, slot) in energies.iter_mut().enumerate() {
                *slot = dot(&w[lay.pair(jk)..lay.pair(jk) + lay.edge_dim], phi);
            }
            let observed = y[s] * r + y[t];
            let lse = neg_log_sum_exp(&energies);
            value += energies[observed] + lse;
            for jk in 0..r * r {
                let p = (-energies[jk] - lse).exp();
                let c = f64::from(u8::from(jk == observed)) - p;
                let base = lay.pair(jk);
                for (d, &x) in phi.iter().enumerate() {
                    grad[base + d] += c * x;
                }
            }
        }
        (value, grad)
    }

    /// Exact negative conditional log-likelihood on a forest; expected
    /// feature counts come from sum-product marginals.
    fn eval_tree_cll(&self, inst: &Instance, w: &[f64]) -> (f64, Vec<f64>) {
        let r = self.labels.r;
        let lay = &self.layout;
        let y = inst.labels.as_ref().expect("validated");
        let model = LogLinearCRF::from_flat(lay, w);
        let energy = model.energy(inst).expect("validated dims");
        let log_z = tree_log_partition(&energy).expect("forest checked");
        let marginals = tree_marginals(&energy).expect("forest checked");
        let labeling = crate::graph::Labeling(y.0.clone());
        let mut value = energy.energy(&labeling).expect("valid labels");
        value += log_z;
        let mut grad = vec![0.0; lay.dim()];
        for (s, phi) in inst.node_features.iter().enumerate() {
            for j in 0..r {
                let c = f64::from(u8::from(y[s] == j)) - marginals.unary[s][j];
                let base = lay.unary(j);
                for (d, &x) in phi.iter().enumerate() {
                    grad[base + d] += c * x;
                }
            }
        }
        for (e, &(s, t)) in inst.graph.edges().iter().enumerate() {
            let phi = &inst.edge_features[e];
            let observed = y[s] * r + y[t];
            for jk in 0..r * r {
                let c = f64::from(u8::from(jk == observed)) - marginals.pairwise[e][jk];
                let base = lay.pair(jk);
                for (d, &x) in phi.iter().enumerate() {
                    grad[base + d] += c * x;
                }
            }
        }
        (value, grad)
    }
}

/// Accelerated full-batch gradient descent with Armijo backtracking.
///
/// Nesterov momentum with a restart whenever the momentum step stops
/// descending; everything is deterministic. Plain gradient descent needs
/// one to two orders of magnitude more iterations on the poorly
/// conditioned likelihood objectives.
fn minimize(problem: &Problem, w0: Vec<f64>, tol: f64, max_iter: usize) -> BaselineFit {
    let mut x = w0;
    let (mut fx, mut gx) = problem.eval(&x);
    let mut y = x.clone();
    let mut fy = fx;
    let mut gy = gx.clone();
    let mut momentum = 1.0f64;
    let mut step = 1.0f64;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let gx_norm = gx.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gx_norm <= tol {
            converged = true;
            break;
        }
        iterations += 1;
        let gy_sq: f64 = gy.iter().map(|g| g * g).sum();
        step = (step * 2.0).min(1e3);
        let mut accepted = None;
        for _ in 0..80 {
            let candidate: Vec<f64> = y.iter().zip(&gy).map(|(yi, gi)| yi - step * gi).collect();
            let (fc, gc) = problem.eval(&candidate);
            if fc <= fy - 1e-4 * step * gy_sq {
                accepted = Some((candidate, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, fx_new, gx_new)) = accepted else {
            if y == x {
                // no descent representable even without momentum
                break;
            }
            y = x.clone();
            fy = fx;
            gy = gx.clone();
            momentum = 1.0;
            continue;
        };
        if fx_new > fx {
            // the momentum point overshot; restart from the best iterate
            y = x.clone();
            fy = fx;
            gy = gx.clone();
            momentum = 1.0;
            continue;
        }
        let momentum_new = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / momentum_new;
        y = x_new
            .iter()
            .zip(&x)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        x = x_new;
        fx = fx_new;
        gx = gx_new;
        momentum = momentum_new;
        let (fy_new, gy_new) = problem.eval(&y);
        fy = fy_new;
        gy = gy_new;
    }
    if !converged {
        converged = gx.iter().map(|g| g * g).sum::<f64>().sqrt() <= tol;
    }
    BaselineFit {
        model: LogLinearCRF::from_flat(&problem.layout, &x),
        objective: fx,
        grad_norm: gx.iter().map(|g| g * g).sum::<f64>().sqrt(),
        iterations,
        converged,
    }
}

fn validate(
    instances: &[Instance],
    labels: LabelSet,
    lambda: f64,
    require_forest: bool,
) -> Result<Layout> {
    if instances.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidParameter("lambda must be >= 0".into()));
    }
    let node_dim = instances[0].node_dim();
    let edge_dim = instances
        .iter()
        .find(|i| i.graph.num_edges() > 0)
        .map_or(0, Instance::edge_dim);
    for inst in instances {
        let y = inst.labels.as_ref().ok_or(Error::MissingLabels)?;
        y.validate(&inst.graph, labels)?;
        if inst.node_dim() != node_dim {
            return Err(Error::DimensionMismatch(
                "node feature dimensions differ across instances".into(),
            ));
        }
        if inst.graph.num_edges() > 0 && inst.edge_dim() != edge_dim {
            return Err(Error::DimensionMismatch(
                "edge feature dimensions differ across instances".into(),
            ));
        }
        if require_forest && !inst.graph.is_forest() {
            return Err(Error::CyclicGraph);
        }
    }
    Ok(Layout {
        r: labels.r,
        node_dim,
        edge_dim,
    })
}

fn train(
    instances: &[Instance],
    labels: LabelSet,
    lambda: f64,
    max_iter: usize,
    tol: f64,
    objective: Objective,
) -> Result<BaselineFit> {
    let layout = validate(instances, labels, lambda, objective == Objective::TreeCll)?;
    let problem = Problem {
        instances,
        labels,
        layout,
        lambda,
        objective,
    };
    Ok(minimize(&problem, vec![0.0; layout.dim()], tol, max_iter))
}

/// Independent multinomial logistic regression over node features; the
/// returned model has zero pair weights.
pub fn logistic_unary_train(
    instances: &[Instance],
    labels: LabelSet,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<BaselineFit> {
    train(
        instances,
        labels,
        lambda,
        max_iter,
        tol,
        Objective::Logistic,
    )
}

/// Pseudolikelihood: each node conditioned on its observed neighbors.
pub fn pseudolikelihood_train(
    instances: &[Instance],
    labels: LabelSet,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<BaselineFit> {
    train(
        instances,
        labels,
        lambda,
        max_iter,
        tol,
        Objective::Pseudolikelihood,
    )
}

/// Piecewise training with edge pieces: every edge is normalized locally
/// over the r² pair labels. Node information enters through the edge
/// features; the returned model has zero unary weights.
pub fn piecewise_train(
    instances: &[Instance],
    labels: LabelSet,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<BaselineFit> {
    train(
        instances,
        labels,
        lambda,
        max_iter,
        tol,
        Objective::Piecewise,
    )
}

/// Exact negative conditional log-likelihood on forest instances, with
/// gradients from sum-product marginals.
pub fn tree_cll_train(
    instances: &[Instance],
    labels: LabelSet,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<BaselineFit> {
    train(instances, labels, lambda, max_iter, tol, Objective::TreeCll)
}

/// Objective value and gradient at the given weights, in the model layout.
/// Lets callers verify gradients or probe the loss surface directly.
pub fn objective_eval(
    instances: &[Instance],
    labels: LabelSet,
    lambda: f64,
    objective: Objective,
    weights: &LogLinearCRF,
) -> Result<(f64, LogLinearCRF)> {
    let layout = validate(instances, labels, lambda, objective == Objective::TreeCll)?;
    if weights.r != layout.r
        || weights.node_dim != layout.node_dim
        || weights.edge_dim != layout.edge_dim
    {
        return Err(Error::DimensionMismatch(
            "weight shapes do not match the corpus".into(),
        ));
    }
    let problem = Problem {
        instances,
        labels,
        layout,
        lambda,
        objective,
    };
    let mut flat = vec![0.0; layout.dim()];
    for (j, w) in weights.w_unary.iter().enumerate() {
        flat[layout.unary(j)..layout.unary(j) + layout.node_dim].copy_from_slice(w);
    }
    for (jk, w) in weights.w_pair.iter().enumerate() {
        flat[layout.pair(jk)..layout.pair(jk) + layout.edge_dim].copy_from_slice(w);
    }
    let (value, grad) = problem.eval(&flat);
    Ok((value, LogLinearCRF::from_flat(&layout, &grad)))
}
