//! Exact inference on forest-structured energies: sum-product marginals,
//! log-partition, min-sum MAP, and ancestral sampling.
//!
//! All passes run in the log domain; messages are exact (unnormalized), so
//! the upward pass also yields the log-partition function.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{edge_entry, log_sum_exp, InferenceResult, RootedForest};
use crate::error::Result;
use crate::graph::{EnergyFunction, Labeling, MarginalTables};

/// Upward-pass state: per-node subtree energies and child-to-parent
/// messages, all as energy vectors over the receiving node's labels.
struct Upward {
    forest: RootedForest,
    /// `beta[s][j]`: energy of the subtree rooted at `s` with `y_s = j`,
    /// i.e. `theta_s(j) + sum of child messages`.
    beta: Vec<Vec<f64>>,
    /// `msg_to_parent[c][jp]`: message from `c` into its parent.
    msg_to_parent: Vec<Vec<f64>>,
}

fn upward_pass(energy: &EnergyFunction) -> Result<Upward> {
    let forest = RootedForest::build(&energy.graph)?;
    let r = energy.r;
    let m = energy.graph.num_nodes();
    let mut beta: Vec<Vec<f64>> = energy.unary.clone();
    let mut msg_to_parent = vec![Vec::new(); m];
    for &c in forest.order.iter().rev() {
        if let Some((p, e)) = forest.parent[c] {
            let mut msg = vec![0.0; r];
            let mut scratch = vec![0.0; r];
            for (jp, slot) in msg.iter_mut().enumerate() {
                for jc in 0..r {
                    scratch[jc] = -(beta[c][jc] + edge_entry(energy, e, c, jc, jp));
                }
                *slot = -log_sum_exp(&scratch);
            }
            for jp in 0..r {
                beta[p][jp] += msg[jp];
            }
            msg_to_parent[c] = msg;
        }
    }
    Ok(Upward {
        forest,
        beta,
        msg_to_parent,
    })
}

/// `ln Z` of a forest-structured energy, via one sum-product pass.
pub fn tree_log_partition(energy: &EnergyFunction) -> Result<f64> {
    let up = upward_pass(energy)?;
    let mut log_z = 0.0;
    for &root in &up.forest.roots {
        let negated: Vec<f64> = up.beta[root].iter().map(|&v| -v).collect();
        log_z += log_sum_exp(&negated);
    }
    Ok(log_z)
}

/// Exact unary and pairwise marginals of `P(y) ∝ exp(-E(y))` on a forest.
pub fn tree_marginals(energy: &EnergyFunction) -> Result<MarginalTables> {
    let up = upward_pass(energy)?;
    let r = energy.r;
    let m = energy.graph.num_nodes();

    // downward pass: alpha[s][j] is the energy of everything outside the
    // subtree of s, seen from y_s = j
    let mut alpha = vec![vec![0.0; r]; m];
    let mut unary = vec![vec![0.0; r]; m];
    let mut pairwise = vec![vec![0.0; r * r]; energy.graph.num_edges()];
    let mut scratch = vec![0.0; r];
    for &s in &up.forest.order {
        if let Some((p, e)) = up.forest.parent[s] {
            // parent context with this child's message removed
            let ctx: Vec<f64> = (0..r)
                .map(|jp| alpha[p][jp] + up.beta[p][jp] - up.msg_to_parent[s][jp])
                .collect();
            for js in 0..r {
                for jp in 0..r {
                    scratch[jp] = -(ctx[jp] + edge_entry(energy, e, s, js, jp));
                }
                alpha[s][js] = -log_sum_exp(&scratch);
            }
            // pairwise marginal over (smaller endpoint, larger endpoint)
            let (a, _) = energy.graph.edges()[e];
            let mut table = vec![0.0; r * r];
            for js in 0..r {
                for jp in 0..r {
                    let en = ctx[jp] + edge_entry(energy, e, s, js, jp) + up.beta[s][js];
                    let (ja, jb) = if s == a { (js, jp) } else { (jp, js) };
                    table[ja * r + jb] = -en;
                }
            }
            let z = log_sum_exp(&table);
            for (slot, &v) in pairwise[e].iter_mut().zip(table.iter()) {
                *slot = (v - z).exp();
            }
        }
        let logp: Vec<f64> = (0..r).map(|j| -(up.beta[s][j] + alpha[s][j])).collect();
        let z = log_sum_exp(&logp);
        for (j, slot) in unary[s].iter_mut().enumerate() {
            *slot = (logp[j] - z).exp();
        }
    }
    Ok(MarginalTables { r, unary, pairwise })
}

/// Global MAP labeling on a forest by min-sum message passing with
/// back-pointers; ties resolve to the lowest label index.
pub fn tree_map(energy: &EnergyFunction) -> Result<InferenceResult> {
    let forest = RootedForest::build(&energy.graph)?;
    let r = energy.r;
    let m = energy.graph.num_nodes();
    let mut beta: Vec<Vec<f64>> = energy.unary.clone();
    // choice[c][jp]: best label of c given its parent takes jp
    let mut choice = vec![Vec::new(); m];
    for &c in forest.order.iter().rev() {
        if let Some((p, e)) = forest.parent[c] {
            let mut best_label = vec![0usize; r];
            let mut best_value = vec![0.0f64; r];
            for jp in 0..r {
                let mut arg = 0usize;
                let mut val = f64::INFINITY;
                for jc in 0..r {
                    let v = beta[c][jc] + edge_entry(energy, e, c, jc, jp);
                    if v < val {
                        val = v;
                        arg = jc;
                    }
                }
                best_label[jp] = arg;
                best_value[jp] = val;
            }
            for jp in 0..r {
                beta[p][jp] += best_value[jp];
            }
            choice[c] = best_label;
        }
    }
    let mut y = vec![0usize; m];
    for &s in &forest.order {
        match forest.parent[s] {
            None => {
                let mut arg = 0usize;
                for j in 1..r {
                    if beta[s][j] < beta[s][arg] {
                        arg = j;
                    }
                }
                y[s] = arg;
            }
            Some((p, _)) => y[s] = choice[s][y[p]],
        }
    }
    let labeling = Labeling(y);
    let e = energy.energy(&labeling)?;
    Ok(InferenceResult {
        labeling,
        energy: e,
        lower_bound: Some(e),
        iterations: 0,
    })
}

fn sample_categorical(log_weights: &[f64], rng: &mut impl Rng) -> usize {
    let z = log_sum_exp(log_weights);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, &lw) in log_weights.iter().enumerate() {
        acc += (lw - z).exp();
        if u < acc {
            return j;
        }
    }
    log_weights.len() - 1
}

/// Draws `n` i.i.d. labelings from `P(y) ∝ exp(-E(y))` on a forest by
/// ancestral sampling after one upward pass. Deterministic given `seed`.
pub fn tree_sample(energy: &EnergyFunction, n: usize, seed: u64) -> Result<Vec<Labeling>> {
    let up = upward_pass(energy)?;
    let r = energy.r;
    let m = energy.graph.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut log_w = vec![0.0; r];
    for _ in 0..n {
        let mut y = vec![0usize; m];
        for &s in &up.forest.order {
            match up.forest.parent[s] {
                None => {
                    for j in 0..r {
                        log_w[j] = -up.beta[s][j];
                    }
                }
                Some((p, e)) => {
                    for j in 0..r {
                        log_w[j] = -(up.beta[s][j] + edge_entry(energy, e, s, j, y[p]));
                    }
                }
            }
            y[s] = sample_categorical(&log_w, &mut rng);
        }
        out.push(Labeling(y));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{
        empirical_marginals, exact_partition, for_each_labeling, tree_ml_params, Graph, LabelSet,
    };
    use crate::inference::exact_map;
    use approx::assert_abs_diff_eq;

    fn random_energy(graph: Graph, r: usize, scale: f64, rng: &mut impl Rng) -> EnergyFunction {
        let mut e = EnergyFunction::zeros(graph, r);
        for row in e.unary.iter_mut().chain(e.pairwise.iter_mut()) {
            for v in row.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
        e
    }

    /// Brute-force marginals by direct enumeration, independent of the
    /// message-passing code.
    fn enumeration_marginals(energy: &EnergyFunction) -> MarginalTables {
        let (m, r) = (energy.graph.num_nodes(), energy.r);
        let mut weights = Vec::new();
        let mut states = Vec::new();
        for_each_labeling(m, r, |y| {
            let lab = Labeling(y.to_vec());
            weights.push((-energy.energy(&lab).unwrap()).exp());
            states.push(y.to_vec());
        });
        let z: f64 = weights.iter().sum();
        let mut unary = vec![vec![0.0; r]; m];
        let mut pairwise = vec![vec![0.0; r * r]; energy.graph.num_edges()];
        for (w, y) in weights.iter().zip(states.iter()) {
            for s in 0..m {
                unary[s][y[s]] += w / z;
            }
            for (e, &(s, t)) in energy.graph.edges().iter().enumerate() {
                pairwise[e][y[s] * r + y[t]] += w / z;
            }
        }
        MarginalTables { r, unary, pairwise }
    }

    #[test]
    fn uniform_energy_gives_uniform_marginals() {
        let g = Graph::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let e = EnergyFunction::zeros(g.clone(), 3);
        let mu = tree_marginals(&e).unwrap();
        for row in &mu.unary {
            for &v in row {
                assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
            }
        }
        for table in &mu.pairwise {
            for &v in table {
                assert_abs_diff_eq!(v, 1.0 / 9.0, epsilon = 1e-12);
            }
        }
        mu.check_consistency(&g, 1e-12).unwrap();
    }

    #[test]
    fn chain_marginals_match_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let g = Graph::new(3, vec![(0, 1), (1, 2)]).unwrap();
            let e = random_energy(g.clone(), 2, 1.5, &mut rng);
            let bp = tree_marginals(&e).unwrap();
            let brute = enumeration_marginals(&e);
            for s in 0..3 {
                for j in 0..2 {
                    assert_abs_diff_eq!(bp.unary[s][j], brute.unary[s][j], epsilon = 1e-10);
                }
            }
            for edge in 0..2 {
                for jk in 0..4 {
                    assert_abs_diff_eq!(
                        bp.pairwise[edge][jk],
                        brute.pairwise[edge][jk],
                        epsilon = 1e-10
                    );
                }
            }
            bp.check_consistency(&g, 1e-12).unwrap();
        }
    }

    #[test]
    fn star_and_forest_marginals_match_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        // star with center 0 plus a detached edge and an isolated node
        let g = Graph::new(7, vec![(0, 1), (0, 2), (0, 3), (4, 5)]).unwrap();
        let e = random_energy(g.clone(), 2, 1.5, &mut rng);
        let bp = tree_marginals(&e).unwrap();
        let brute = enumeration_marginals(&e);
        for s in 0..7 {
            for j in 0..2 {
                assert_abs_diff_eq!(bp.unary[s][j], brute.unary[s][j], epsilon = 1e-10);
            }
        }
        for edge in 0..g.num_edges() {
            for jk in 0..4 {
                assert_abs_diff_eq!(
                    bp.pairwise[edge][jk],
                    brute.pairwise[edge][jk],
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn moment_matching_roundtrip() {
        // energies built from marginals must reproduce those marginals
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let g = Graph::new(4, vec![(0, 1), (1, 2), (1, 3)]).unwrap();
        let labels = LabelSet::new(2).unwrap();
        let model = random_energy(g.clone(), 2, 1.0, &mut rng);
        let samples = tree_sample(&model, 1000, 99).unwrap();
        let mu = empirical_marginals(&samples, &g, labels).unwrap();
        // floor only matters for zero cells; sampled tables here are dense
        let rebuilt = tree_ml_params(&mu, &g, 1e-9).unwrap();
        let recovered = tree_marginals(&rebuilt).unwrap();
        for s in 0..4 {
            for j in 0..2 {
                assert_abs_diff_eq!(recovered.unary[s][j], mu.unary[s][j], epsilon = 1e-10);
            }
        }
        for e in 0..3 {
            for jk in 0..4 {
                assert_abs_diff_eq!(
                    recovered.pairwise[e][jk],
                    mu.pairwise[e][jk],
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn log_partition_matches_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(24);
        let g = Graph::new(5, vec![(0, 1), (1, 2), (1, 3), (3, 4)]).unwrap();
        let e = random_energy(g, 3, 1.2, &mut rng);
        assert_abs_diff_eq!(
            tree_log_partition(&e).unwrap(),
            exact_partition(&e).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn tree_map_unaries_only_is_argmin() {
        let g = Graph::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let mut e = EnergyFunction::zeros(g, 3);
        e.unary = vec![
            vec![1.0, 0.0, 2.0],
            vec![0.5, 0.7, 0.1],
            vec![3.0, 2.0, 1.0],
        ];
        let res = tree_map(&e).unwrap();
        assert_eq!(res.labeling, Labeling(vec![1, 2, 2]));
    }

    #[test]
    fn tree_map_matches_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(25);
        for _ in 0..20 {
            // random 7-node tree via random attachment
            let mut edges = Vec::new();
            for v in 1..7 {
                edges.push((rng.gen_range(0..v), v));
            }
            let g = Graph::new(7, edges).unwrap();
            let e = random_energy(g, 3, 1.5, &mut rng);
            let res = tree_map(&e).unwrap();
            let opt = exact_map(&e).unwrap();
            assert_abs_diff_eq!(res.energy, opt.energy, epsilon = 1e-12);
        }
    }

    #[test]
    fn tree_map_strong_attraction_gives_constant_labeling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(26);
        let g = Graph::new(5, vec![(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let mut e = random_energy(g, 2, 0.5, &mut rng);
        for table in e.pairwise.iter_mut() {
            table[0b01] = 50.0;
            table[0b10] = 50.0;
            table[0] = 0.0;
            table[3] = 0.0;
        }
        let res = tree_map(&e).unwrap();
        let first = res.labeling[0];
        assert!(res.labeling.0.iter().all(|&l| l == first));
        let opt = exact_map(&e).unwrap();
        assert_abs_diff_eq!(res.energy, opt.energy, epsilon = 1e-12);
    }

    #[test]
    fn tree_map_rejects_cycles() {
        let g = Graph::new(3, vec![(0, 1), (1, 2), (0, 2)]).unwrap();
        let e = EnergyFunction::zeros(g, 2);
        assert!(tree_map(&e).is_err());
        assert!(tree_marginals(&e).is_err());
        assert!(tree_sample(&e, 1, 0).is_err());
    }

    #[test]
    fn sampling_uniform_frequencies() {
        let g = Graph::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let e = EnergyFunction::zeros(g, 2);
        let n = 20000;
        let samples = tree_sample(&e, n, 5).unwrap();
        // binomial: p = 1/2, sigma = sqrt(p(1-p)/n)
        let sigma = (0.25 / n as f64).sqrt();
        for s in 0..3 {
            let freq = samples.iter().filter(|y| y[s] == 0).count() as f64 / n as f64;
            assert!((freq - 0.5).abs() < 4.0 * sigma, "node {s}: {freq}");
        }
    }

    #[test]
    fn sampling_degenerate_energy_is_deterministic() {
        let g = Graph::new(2, vec![(0, 1)]).unwrap();
        let mut e = EnergyFunction::zeros(g, 2);
        e.unary[0] = vec![0.0, 60.0];
        e.unary[1] = vec![60.0, 0.0];
        for y in tree_sample(&e, 200, 1).unwrap() {
            assert_eq!(y, Labeling(vec![0, 1]));
        }
    }

    #[test]
    fn sampling_matches_marginals_on_chain() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(27);
        let g = Graph::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let e = random_energy(g.clone(), 2, 1.0, &mut rng);
        let mu = tree_marginals(&e).unwrap();
        let n = 50000;
        let samples = tree_sample(&e, n, 42).unwrap();
        let hat = empirical_marginals(&samples, &g, LabelSet::new(2).unwrap()).unwrap();
        for edge in 0..2 {
            for jk in 0..4 {
                let p = mu.pairwise[edge][jk];
                let sigma = (p * (1.0 - p) / n as f64).sqrt().max(1e-9);
                assert!(
                    (hat.pairwise[edge][jk] - p).abs() < 4.0 * sigma,
                    "edge {edge} cell {jk}"
                );
            }
        }
    }

    #[test]
    fn sampling_passes_chi_square_against_marginals() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let g = Graph::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let e = random_energy(g.clone(), 2, 1.0, &mut rng);
        let mu = tree_marginals(&e).unwrap();
        let n = 50_000usize;
        let samples = tree_sample(&e, n, 77).unwrap();
        let hat = empirical_marginals(&samples, &g, LabelSet::new(2).unwrap()).unwrap();
        // chi-square upper 0.999 quantiles: df=1 -> 10.828, df=3 -> 16.266
        for s in 0..3 {
            let stat: f64 = (0..2)
                .map(|j| {
                    let expect = mu.unary[s][j] * n as f64;
                    let observed = hat.unary[s][j] * n as f64;
                    (observed - expect).powi(2) / expect
                })
                .sum();
            assert!(stat < 10.828, "node {s}: chi-square {stat}");
        }
        for edge in 0..2 {
            let stat: f64 = (0..4)
                .map(|jk| {
                    let expect = mu.pairwise[edge][jk] * n as f64;
                    let observed = hat.pairwise[edge][jk] * n as f64;
                    (observed - expect).powi(2) / expect
                })
                .sum();
            assert!(stat < 16.266, "edge {edge}: chi-square {stat}");
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let g = Graph::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(28);
        let e = random_energy(g, 2, 1.0, &mut rng);
        assert_eq!(
            tree_sample(&e, 50, 7).unwrap(),
            tree_sample(&e, 50, 7).unwrap()
        );
        assert_ne!(
            tree_sample(&e, 50, 7).unwrap(),
            tree_sample(&e, 50, 8).unwrap()
        );
    }
}
