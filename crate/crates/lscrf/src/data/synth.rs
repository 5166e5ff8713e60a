//! Synthetic corpus generators with known ground-truth conditionals.
//!
//! Tree corpora draw each instance's labels exactly from the conditional
//! distribution induced by a planted pair model `f*(φ)`: the per-edge pair
//! marginals are `f*(φ_e)` by construction (uniform node marginals keep
//! them consistent on any forest), so regressors trained on the indicator
//! targets should recover `f*`. Grid corpora sample a Potts field with
//! random unaries by Gibbs sampling and attach noisy one-hot features.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{tree_ml_params, EnergyFunction, Graph, Instance, MarginalTables};
use crate::inference::{gibbs_sample, tree_sample, GibbsOptions};

use super::Corpus;

/// Functional family of the planted pair model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeFamily {
    /// `f*` affine in the edge features; exactly representable by the
    /// linear regressors.
    Linear,
    /// Saturating nonlinearity of a linear score.
    Logistic,
    /// Products of feature pairs; not representable linearly.
    Xor,
}

impl std::str::FromStr for TreeFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(TreeFamily::Linear),
            "logistic" => Ok(TreeFamily::Logistic),
            "xor" => Ok(TreeFamily::Xor),
            other => Err(Error::Unknown {
                what: "generator family",
                value: other.into(),
            }),
        }
    }
}

/// Tree-corpus generator parameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TreeGenConfig {
    pub n_instances: usize,
    /// Nodes per instance.
    pub m: usize,
    pub r: usize,
    pub edge_dim: usize,
    pub family: TreeFamily,
    /// 0 plants a deterministic conditional (features encode the label
    /// pair); positive values shrink the signal amplitude of the smooth
    /// family towards the uniform distribution at 1.
    pub noise: f64,
    pub seed: u64,
}

/// The planted conditional pair model behind a tree corpus. Exposed so
/// tests and examples can query the exact `f*(φ)` that produced the data.
#[derive(Debug, Clone)]
pub struct TreeGenModel {
    pub r: usize,
    pub edge_dim: usize,
    pub family: TreeFamily,
    pub noise: f64,
    /// One weight vector per pair cell, doubly centered for the linear
    /// family.
    weights: Vec<Vec<f64>>,
    /// Coordinate pairs per cell for the xor family.
    xor_coords: Vec<(usize, usize)>,
    amplitude: f64,
}

/// Mass given to every non-planted cell in the deterministic mode.
const PLANTED_FLOOR: f64 = 1e-6;
/// Largest deviation of `r² f*` from 1 in the smooth families.
const MAX_AMPLITUDE: f64 = 0.85;

fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix-style mixing keeps per-instance streams decorrelated
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Subtracts row means, column means, and adds back the grand mean, making
/// all row and column sums of the `r × r` table zero.
fn double_center(table: &mut [f64], r: usize) {
    let mut row_mean = vec![0.0; r];
    let mut col_mean = vec![0.0; r];
    let mut grand = 0.0;
    for j in 0..r {
        for k in 0..r {
            let v = table[j * r + k];
            row_mean[j] += v;
            col_mean[k] += v;
            grand += v;
        }
    }
    for v in row_mean.iter_mut().chain(col_mean.iter_mut()) {
        *v /= r as f64;
    }
    grand /= (r * r) as f64;
    for j in 0..r {
        for k in 0..r {
            table[j * r + k] += grand - row_mean[j] - col_mean[k];
        }
    }
}

impl TreeGenModel {
    pub fn from_config(config: &TreeGenConfig) -> Result<Self> {
        if config.r < 2 || config.m == 0 || config.n_instances == 0 {
            return Err(Error::InvalidParameter(
                "tree generator needs r >= 2 and positive sizes".into(),
            ));
        }
        if !(0.0..=1.0).contains(&config.noise) {
            return Err(Error::InvalidParameter("noise must lie in [0, 1]".into()));
        }
        let edge_dim = config.effective_edge_dim();
        let r = config.r;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX));
        let mut weights: Vec<Vec<f64>> = (0..r * r)
            .map(|_| (0..edge_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        if config.family == TreeFamily::Linear {
            // center the weight vectors themselves so every H(φ) has zero
            // row and column sums, keeping f* exactly affine in φ
            for d in 0..edge_dim {
                let mut col: Vec<f64> = weights.iter().map(|w| w[d]).collect();
                double_center(&mut col, r);
                for (w, &v) in weights.iter_mut().zip(&col) {
                    w[d] = v;
                }
            }
            let max_l1 = weights
                .iter()
                .map(|w| w.iter().map(|v| v.abs()).sum::<f64>())
                .fold(f64::MIN_POSITIVE, f64::max);
            let amplitude = MAX_AMPLITUDE * (1.0 - config.noise);
            for w in weights.iter_mut() {
                for v in w.iter_mut() {
                    *v *= amplitude / max_l1;
                }
            }
        }
        // feature coordinates excluding the trailing constant
        let free = edge_dim.saturating_sub(1).max(1);
        let xor_coords = (0..r * r)
            .map(|_| (rng.gen_range(0..free), rng.gen_range(0..free)))
            .collect();
        Ok(TreeGenModel {
            r,
            edge_dim,
            family: config.family,
            noise: config.noise,
            weights,
            xor_coords,
            amplitude: MAX_AMPLITUDE * (1.0 - config.noise),
        })
    }

    /// For the linear family, the weight vectors `w_jk` with
    /// `f*_{jk}(φ) = ⟨w_jk, φ⟩` exactly (the trailing constant feature
    /// carries the offset). `None` for the other families.
    pub fn linear_pair_weights(&self) -> Option<Vec<Vec<f64>>> {
        if self.family != TreeFamily::Linear || self.noise == 0.0 {
            return None;
        }
        let cells = (self.r * self.r) as f64;
        Some(
            self.weights
                .iter()
                .map(|v| {
                    let mut w: Vec<f64> = v.iter().map(|x| x / cells).collect();
                    let last = w.len() - 1;
                    w[last] += 1.0 / cells;
                    w
                })
                .collect(),
        )
    }

    /// The exact conditional pair distribution `f*(φ)` as a row-major
    /// `r × r` table summing to one with uniform row and column sums.
    pub fn pair_distribution(&self, phi: &[f64]) -> Vec<f64> {
        let r = self.r;
        let cells = r * r;
        if self.noise == 0.0 {
            // deterministic mode: the one-hot block of φ names the pair
            let mut out = vec![PLANTED_FLOOR; cells];
            for (jk, slot) in out.iter_mut().enumerate() {
                if phi[jk] > 0.5 {
                    *slot = 1.0 - (cells - 1) as f64 * PLANTED_FLOOR;
                }
            }
            return out;
        }
        let mut h: Vec<f64> = match self.family {
            TreeFamily::Linear => self
                .weights
                .iter()
                .map(|w| w.iter().zip(phi).map(|(a, b)| a * b).sum())
                .collect(),
            TreeFamily::Logistic => self
                .weights
                .iter()
                .map(|w| {
                    let s: f64 = w.iter().zip(phi).map(|(a, b)| a * b).sum();
                    (2.0 * s).tanh()
                })
                .collect(),
            TreeFamily::Xor => self
                .xor_coords
                .iter()
                .map(|&(a, b)| phi[a] * phi[b])
                .collect(),
        };
        if self.family != TreeFamily::Linear {
            double_center(&mut h, r);
            let max_abs = h.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
            if max_abs > 1e-12 {
                let scale = self.amplitude / max_abs.max(self.amplitude);
                for v in h.iter_mut() {
                    *v *= scale;
                }
            }
        }
        h.iter().map(|&v| (1.0 + v) / cells as f64).collect()
    }
}

impl TreeGenConfig {
    /// The deterministic mode needs room for the pair one-hot block.
    pub fn effective_edge_dim(&self) -> usize {
        if self.noise == 0.0 {
            self.edge_dim.max(self.r * self.r + 1)
        } else {
            self.edge_dim.max(2)
        }
    }
}

/// Random tree by attachment: node `v` connects to a uniform earlier node.
fn random_tree(m: usize, rng: &mut ChaCha8Rng) -> Graph {
    let edges = (1..m).map(|v| (rng.gen_range(0..v), v)).collect();
    Graph::new(m, edges).expect("attachment edges are valid")
}

/// Generates a forest corpus whose labels are drawn exactly from the
/// conditional distribution `f*` of the chosen family. Deterministic given
/// the seed; instances are generated in parallel from derived seeds.
pub fn synth_tree_corpus(config: &TreeGenConfig) -> Result<Corpus> {
    let model = TreeGenModel::from_config(config)?;
    let edge_dim = model.edge_dim;
    let r = config.r;
    let instances: Vec<Instance> = (0..config.n_instances as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, i));
            let graph = random_tree(config.m, &mut rng);
            let (edge_features, labels) =
                sample_tree_instance(&model, &graph, &mut rng, derive_seed(config.seed, i) ^ 1);
            Instance::new(graph, vec![vec![]; config.m], edge_features, Some(labels))
                .expect("generated instance is valid")
        })
        .collect();
    let mut corpus = Corpus::new((0..r).map(|j| format!("label_{j}")).collect(), instances)?;
    corpus.schema.edge_dim = edge_dim;
    Ok(corpus)
}

fn sample_tree_instance(
    model: &TreeGenModel,
    graph: &Graph,
    rng: &mut ChaCha8Rng,
    sample_seed: u64,
) -> (Vec<Vec<f64>>, crate::graph::Labeling) {
    let r = model.r;
    let m = graph.num_nodes();
    let cells = r * r;
    if model.noise == 0.0 {
        // plant labels first, then encode each edge's pair in its features
        let planted: Vec<usize> = (0..m).map(|_| rng.gen_range(0..r)).collect();
        let edge_features: Vec<Vec<f64>> = graph
            .edges()
            .iter()
            .map(|&(s, t)| {
                let mut phi = vec![0.0; model.edge_dim];
                phi[planted[s] * r + planted[t]] = 1.0;
                for v in phi.iter_mut().take(model.edge_dim - 1).skip(cells) {
                    *v = rng.gen_range(-1.0..1.0);
                }
                phi[model.edge_dim - 1] = 1.0;
                phi
            })
            .collect();
        let energy = planted_energy(model, graph, &edge_features);
        let labels = tree_sample(&energy, 1, sample_seed)
            .expect("forest")
            .pop()
            .expect("one sample");
        (edge_features, labels)
    } else {
        let edge_features: Vec<Vec<f64>> = graph
            .edges()
            .iter()
            .map(|_| {
                let mut phi: Vec<f64> = (0..model.edge_dim - 1)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                phi.push(1.0);
                phi
            })
            .collect();
        let energy = planted_energy(model, graph, &edge_features);
        let labels = tree_sample(&energy, 1, sample_seed)
            .expect("forest")
            .pop()
            .expect("one sample");
        (edge_features, labels)
    }
}

/// Builds the instance's generative energy from the planted per-edge pair
/// marginals via the closed-form estimator, so exact inference on it
/// reproduces `f*(φ_e)` on every edge.
fn planted_energy(
    model: &TreeGenModel,
    graph: &Graph,
    edge_features: &[Vec<f64>],
) -> EnergyFunction {
    let r = model.r;
    let pairwise: Vec<Vec<f64>> = edge_features
        .iter()
        .map(|phi| model.pair_distribution(phi))
        .collect();
    let unary: Vec<Vec<f64>> = if model.noise == 0.0 {
        // marginals of the near-deterministic tables
        let mut unary = vec![vec![1.0 / r as f64; r]; graph.num_nodes()];
        let degrees = graph.degrees();
        for (e, &(s, t)) in graph.edges().iter().enumerate() {
            for j in 0..r {
                let row: f64 = (0..r).map(|k| pairwise[e][j * r + k]).sum();
                let col: f64 = (0..r).map(|i| pairwise[e][i * r + j]).sum();
                // consistent by construction: every incident edge gives the
                // same node marginal, keep the first
                if degrees[s] > 0 {
                    unary[s][j] = row;
                }
                if degrees[t] > 0 {
                    unary[t][j] = col;
                }
            }
        }
        unary
    } else {
        vec![vec![1.0 / r as f64; r]; graph.num_nodes()]
    };
    let marginals = MarginalTables { r, unary, pairwise };
    tree_ml_params(&marginals, graph, 1e-12).expect("planted marginals are consistent")
}

/// Chain-corpus generator parameters.
///
/// Unlike the pair-model trees of [`synth_tree_corpus`], chain corpora
/// carry per-node signal: every node has an intended class that biases its
/// label, neighbors are coupled by a Potts term, and the node features
/// encode the intent. Labels are drawn exactly by ancestral sampling.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ChainGenConfig {
    pub n_instances: usize,
    /// Nodes per chain.
    pub m: usize,
    pub r: usize,
    /// Potts penalty on disagreeing neighbors.
    pub coupling: f64,
    /// Signal-to-noise of the node features (see [`GridGenConfig`]).
    pub unary_snr: f64,
    /// Encode the intent as the sign of a two-attribute product instead of
    /// a noisy one-hot; requires `r = 2`. A linear regressor cannot decode
    /// these features, a depth-2 tree can.
    pub xor_features: bool,
    pub seed: u64,
}

/// Energy advantage of a node's intended class in the chain generator.
const CHAIN_UNARY_STRENGTH: f64 = 1.0;

/// Generates Potts chains with intent-encoding features; labels come from
/// exact ancestral sampling of the generative energy.
pub fn synth_chain_corpus(config: &ChainGenConfig) -> Result<Corpus> {
    if config.r < 2 || config.n_instances == 0 || config.m == 0 {
        return Err(Error::InvalidParameter(
            "chain generator needs r >= 2 and positive sizes".into(),
        ));
    }
    if config.coupling < 0.0 || config.unary_snr <= 0.0 {
        return Err(Error::InvalidParameter(
            "coupling must be >= 0 and unary_snr > 0".into(),
        ));
    }
    if config.xor_features && config.r != 2 {
        return Err(Error::InvalidParameter(
            "xor features are defined for r = 2".into(),
        ));
    }
    let m = config.m;
    let r = config.r;
    let graph = Graph::new(m, (0..m.saturating_sub(1)).map(|i| (i, i + 1)).collect())?;
    let sigma = 1.0 / config.unary_snr;
    let instances: Vec<Instance> = (0..config.n_instances as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, i));
            // latent per-node attributes and the intended class
            let (intents, node_features): (Vec<usize>, Vec<Vec<f64>>) = if config.xor_features {
                (0..m)
                    .map(|_| {
                        let a = rng.gen_range(-1.0..1.0f64);
                        let b = rng.gen_range(-1.0..1.0f64);
                        (usize::from(a * b > 0.0), vec![a, b, 1.0])
                    })
                    .unzip()
            } else {
                (0..m)
                    .map(|_| {
                        let c = rng.gen_range(0..r);
                        let mut f: Vec<f64> = (0..r)
                            .map(|j| f64::from(u8::from(c == j)) + gaussian(&mut rng) * sigma)
                            .collect();
                        f.push(1.0);
                        (c, f)
                    })
                    .unzip()
            };
            let mut energy = EnergyFunction::zeros(graph.clone(), r);
            for (s, &c) in intents.iter().enumerate() {
                for (j, slot) in energy.unary[s].iter_mut().enumerate() {
                    if j != c {
                        *slot = CHAIN_UNARY_STRENGTH;
                    }
                }
            }
            for table in energy.pairwise.iter_mut() {
                for j in 0..r {
                    for k in 0..r {
                        if j != k {
                            table[j * r + k] = config.coupling;
                        }
                    }
                }
            }
            let labels = tree_sample(&energy, 1, derive_seed(config.seed, i) ^ 1)
                .expect("chain is a tree")
                .pop()
                .expect("one sample");
            let nf_dim = node_features[0].len();
            let edge_features: Vec<Vec<f64>> = graph
                .edges()
                .iter()
                .map(|&(s, t)| {
                    let mut f = Vec::with_capacity(2 * (nf_dim - 1) + 1);
                    f.extend_from_slice(&node_features[s][..nf_dim - 1]);
                    f.extend_from_slice(&node_features[t][..nf_dim - 1]);
                    f.push(1.0);
                    f
                })
                .collect();
            Instance::new(graph.clone(), node_features, edge_features, Some(labels))
                .expect("generated instance is valid")
        })
        .collect();
    Corpus::new((0..r).map(|j| format!("label_{j}")).collect(), instances)
}

/// Grid-corpus generator parameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GridGenConfig {
    pub n_instances: usize,
    pub height: usize,
    pub width: usize,
    pub r: usize,
    /// Potts penalty added to every disagreeing edge of the generative
    /// field; 0 makes the labels independent.
    pub coupling: f64,
    /// Signal-to-noise of the node features: the one-hot signal is
    /// corrupted with Gaussian noise of standard deviation `1 / unary_snr`.
    pub unary_snr: f64,
    pub seed: u64,
}

/// Standard deviation of the random per-node label preferences of the
/// generative Potts field.
const GRID_UNARY_SIGMA: f64 = 0.5;
const GRID_BURN_IN: usize = 150;

/// Four-connected grid; row-major node order, right edge before down edge.
pub fn grid_graph(height: usize, width: usize) -> Result<Graph> {
    let mut edges = Vec::new();
    for i in 0..height {
        for j in 0..width {
            let s = i * width + j;
            if j + 1 < width {
                edges.push((s, s + 1));
            }
            if i + 1 < height {
                edges.push((s, s + width));
            }
        }
    }
    Graph::new(height * width, edges)
}

/// Generates a loopy corpus: labels from a Potts-plus-random-unary field by
/// Gibbs sampling, node features as noisy one-hot encodings, edge features
/// as the concatenation of the endpoint features plus a constant.
pub fn synth_grid_corpus(config: &GridGenConfig) -> Result<Corpus> {
    if config.r < 2 || config.n_instances == 0 || config.height * config.width == 0 {
        return Err(Error::InvalidParameter(
            "grid generator needs r >= 2 and positive sizes".into(),
        ));
    }
    if config.coupling < 0.0 || config.unary_snr <= 0.0 {
        return Err(Error::InvalidParameter(
            "coupling must be >= 0 and unary_snr > 0".into(),
        ));
    }
    let graph = grid_graph(config.height, config.width)?;
    let r = config.r;
    let m = graph.num_nodes();
    let sigma = 1.0 / config.unary_snr;
    let instances: Vec<Instance> = (0..config.n_instances as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, i));
            let mut energy = EnergyFunction::zeros(graph.clone(), r);
            for row in energy.unary.iter_mut() {
                for v in row.iter_mut() {
                    *v = gaussian(&mut rng) * GRID_UNARY_SIGMA;
                }
            }
            for table in energy.pairwise.iter_mut() {
                for j in 0..r {
                    for k in 0..r {
                        if j != k {
                            table[j * r + k] = config.coupling;
                        }
                    }
                }
            }
            let labels = gibbs_sample(
                &energy,
                GibbsOptions {
                    n: 1,
                    burn_in: GRID_BURN_IN,
                    thin: 1,
                    seed: derive_seed(config.seed, i) ^ 1,
                },
            )
            .expect("grid energy is valid")
            .pop()
            .expect("one sample");
            let node_features: Vec<Vec<f64>> = (0..m)
                .map(|s| {
                    let mut f: Vec<f64> = (0..r)
                        .map(|j| f64::from(u8::from(labels[s] == j)) + gaussian(&mut rng) * sigma)
                        .collect();
                    f.push(1.0);
                    f
                })
                .collect();
            let edge_features: Vec<Vec<f64>> = graph
                .edges()
                .iter()
                .map(|&(s, t)| {
                    let mut f = Vec::with_capacity(2 * r + 1);
                    f.extend_from_slice(&node_features[s][..r]);
                    f.extend_from_slice(&node_features[t][..r]);
                    f.push(1.0);
                    f
                })
                .collect();
            Instance::new(graph.clone(), node_features, edge_features, Some(labels))
                .expect("generated instance is valid")
        })
        .collect();
    Corpus::new((0..r).map(|j| format!("label_{j}")).collect(), instances)
}

/// Standard normal via Box-Muller; two uniforms per draw keeps the stream
/// layout simple and seed-stable.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{empirical_marginals, LabelSet};

    fn pair_agreement(corpus: &Corpus) -> f64 {
        let mut agree = 0usize;
        let mut total = 0usize;
        for inst in &corpus.instances {
            let y = inst.labels.as_ref().unwrap();
            for &(s, t) in inst.graph.edges() {
                agree += usize::from(y[s] == y[t]);
                total += 1;
            }
        }
        agree as f64 / total as f64
    }

    #[test]
    fn tree_corpus_is_seed_deterministic() {
        let config = TreeGenConfig {
            n_instances: 20,
            m: 5,
            r: 2,
            edge_dim: 4,
            family: TreeFamily::Linear,
            noise: 0.3,
            seed: 5,
        };
        let a = synth_tree_corpus(&config).unwrap();
        let b = synth_tree_corpus(&config).unwrap();
        assert_eq!(a, b);
        let c = synth_tree_corpus(&TreeGenConfig { seed: 6, ..config }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn planted_mode_reproduces_argmax_pairs_on_chains() {
        let config = TreeGenConfig {
            n_instances: 50,
            m: 6,
            r: 2,
            edge_dim: 5,
            family: TreeFamily::Linear,
            noise: 0.0,
            seed: 9,
        };
        let model = TreeGenModel::from_config(&config).unwrap();
        let corpus = synth_tree_corpus(&config).unwrap();
        let mut mismatches = 0usize;
        let mut total = 0usize;
        for inst in &corpus.instances {
            let y = inst.labels.as_ref().unwrap();
            for (e, &(s, t)) in inst.graph.edges().iter().enumerate() {
                let f = model.pair_distribution(&inst.edge_features[e]);
                let argmax = f
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                mismatches += usize::from(argmax != y[s] * 2 + y[t]);
                total += 1;
            }
        }
        // the planted conditional carries ~1e-6 mass off the argmax
        assert_eq!(mismatches, 0, "{mismatches}/{total}");
    }

    #[test]
    fn smooth_mode_marginals_match_generator() {
        // replicate one fixed edge feature vector many times (as m=2
        // instances) and compare sampled pair frequencies against f*
        let config = TreeGenConfig {
            n_instances: 1,
            m: 2,
            r: 2,
            edge_dim: 4,
            family: TreeFamily::Logistic,
            noise: 0.2,
            seed: 11,
        };
        let model = TreeGenModel::from_config(&config).unwrap();
        let phi = vec![0.4, -0.7, 0.1, 1.0];
        let f = model.pair_distribution(&phi);
        let graph = Graph::new(2, vec![(0, 1)]).unwrap();
        let energy = planted_energy(&model, &graph, &[phi]);
        let n = 10000;
        let samples = tree_sample(&energy, n, 13).unwrap();
        let mu = empirical_marginals(&samples, &graph, LabelSet::new(2).unwrap()).unwrap();
        for (cell, &p) in f.iter().enumerate() {
            let freq = mu.pairwise[0][cell];
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * sigma, "cell {cell}: {freq} vs {p}");
        }
    }

    #[test]
    fn smooth_mode_distribution_is_valid_and_consistent() {
        for family in [TreeFamily::Linear, TreeFamily::Logistic, TreeFamily::Xor] {
            let config = TreeGenConfig {
                n_instances: 1,
                m: 4,
                r: 3,
                edge_dim: 5,
                family,
                noise: 0.1,
                seed: 3,
            };
            let model = TreeGenModel::from_config(&config).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for _ in 0..50 {
                let mut phi: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                phi.push(1.0);
                let f = model.pair_distribution(&phi);
                let total: f64 = f.iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
                assert!(f.iter().all(|&v| v > 0.0));
                for j in 0..3 {
                    let row: f64 = (0..3).map(|k| f[j * 3 + k]).sum();
                    let col: f64 = (0..3).map(|k| f[k * 3 + j]).sum();
                    assert!((row - 1.0 / 3.0).abs() < 1e-9, "{family:?} row {row}");
                    assert!((col - 1.0 / 3.0).abs() < 1e-9, "{family:?} col {col}");
                }
            }
        }
    }

    #[test]
    fn chain_corpus_labels_follow_intent_and_coupling() {
        let config = ChainGenConfig {
            n_instances: 200,
            m: 6,
            r: 3,
            coupling: 0.6,
            unary_snr: 10.0,
            xor_features: false,
            seed: 19,
        };
        let corpus = synth_chain_corpus(&config).unwrap();
        assert_eq!(corpus.schema.node_dim, 4);
        assert_eq!(corpus.schema.edge_dim, 7);
        // high feature SNR: the signal argmax names the intent, and the
        // sampled label matches the intent clearly above chance
        let mut match_intent = 0usize;
        let mut total = 0usize;
        for inst in &corpus.instances {
            let y = inst.labels.as_ref().unwrap();
            for (s, f) in inst.node_features.iter().enumerate() {
                let intent = (0..3).max_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap();
                match_intent += usize::from(intent == y[s]);
                total += 1;
            }
        }
        let rate = match_intent as f64 / total as f64;
        assert!(rate > 0.5, "intent match {rate}");
        // and the coupling pulls neighbors together beyond independence
        let agree = pair_agreement(&corpus);
        assert!(agree > 0.45, "agreement {agree}");
    }

    #[test]
    fn chain_corpus_xor_mode_hides_intent_from_linear_views() {
        let config = ChainGenConfig {
            n_instances: 300,
            m: 4,
            r: 2,
            coupling: 0.4,
            unary_snr: 2.0,
            xor_features: true,
            seed: 23,
        };
        let corpus = synth_chain_corpus(&config).unwrap();
        assert_eq!(corpus.schema.node_dim, 3);
        // single attributes are uncorrelated with the label, the product
        // is strongly correlated
        let mut corr_a = 0.0;
        let mut corr_prod = 0.0;
        let mut n = 0.0;
        for inst in &corpus.instances {
            let y = inst.labels.as_ref().unwrap();
            for (s, f) in inst.node_features.iter().enumerate() {
                let sign = if y[s] == 1 { 1.0 } else { -1.0 };
                corr_a += sign * f[0];
                corr_prod += sign * (f[0] * f[1]).signum();
                n += 1.0;
            }
        }
        assert!((corr_a / n).abs() < 0.1, "linear view {}", corr_a / n);
        assert!(corr_prod / n > 0.3, "product view {}", corr_prod / n);
        assert!(synth_chain_corpus(&ChainGenConfig { r: 3, ..config }).is_err());
    }

    #[test]
    fn grid_corpus_coupling_controls_agreement() {
        let base = GridGenConfig {
            n_instances: 30,
            height: 6,
            width: 6,
            r: 2,
            coupling: 0.0,
            unary_snr: 2.0,
            seed: 21,
        };
        let independent = synth_grid_corpus(&base).unwrap();
        let strong = synth_grid_corpus(&GridGenConfig {
            coupling: 2.5,
            ..base
        })
        .unwrap();
        let a0 = pair_agreement(&independent);
        let a1 = pair_agreement(&strong);
        // chance agreement for r=2 sits near 1/2 (random unaries tilt it a
        // little); strong coupling must push it high
        assert!((a0 - 0.5).abs() < 0.08, "independent agreement {a0}");
        assert!(a1 > 0.9, "strong-coupling agreement {a1}");
    }

    #[test]
    fn grid_corpus_features_carry_label_signal() {
        let config = GridGenConfig {
            n_instances: 5,
            height: 5,
            width: 5,
            r: 3,
            coupling: 0.8,
            unary_snr: 10.0,
            seed: 7,
        };
        let corpus = synth_grid_corpus(&config).unwrap();
        assert_eq!(corpus.schema.node_dim, 4);
        assert_eq!(corpus.schema.edge_dim, 7);
        // at high SNR the argmax of the signal block is the label
        let mut correct = 0usize;
        let mut total = 0usize;
        for inst in &corpus.instances {
            let y = inst.labels.as_ref().unwrap();
            for (s, f) in inst.node_features.iter().enumerate() {
                let arg = (0..3).max_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap();
                correct += usize::from(arg == y[s]);
                total += 1;
            }
        }
        assert!(correct as f64 / total as f64 > 0.95);
    }

    #[test]
    fn grid_corpus_is_seed_deterministic() {
        let config = GridGenConfig {
            n_instances: 4,
            height: 4,
            width: 3,
            r: 2,
            coupling: 1.0,
            unary_snr: 1.5,
            seed: 33,
        };
        assert_eq!(
            synth_grid_corpus(&config).unwrap(),
            synth_grid_corpus(&config).unwrap()
        );
    }
}
