//! Single-site Gibbs sampling, used as the synthetic-data generator for
//! loopy models.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::log_sum_exp;
use crate::error::Result;
use crate::graph::{EnergyFunction, Labeling};

/// Chain parameters for [`gibbs_sample`].
#[derive(Debug, Clone, Copy)]
pub struct GibbsOptions {
    pub n: usize,
    /// Full sweeps discarded before the first recorded sample.
    pub burn_in: usize,
    /// Full sweeps between recorded samples.
    pub thin: usize,
    pub seed: u64,
}

/// Runs a single-site Gibbs chain over `P(y) ∝ exp(-E(y))`, sweeping nodes
/// in ascending order. Deterministic given the seed.
pub fn gibbs_sample(energy: &EnergyFunction, opts: GibbsOptions) -> Result<Vec<Labeling>> {
    let (m, r) = (energy.graph.num_nodes(), energy.r);
    let adj = energy.graph.adjacency();
    let edges = energy.graph.edges();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut y: Vec<usize> = (0..m).map(|_| rng.gen_range(0..r)).collect();
    let mut local = vec![0.0f64; r];

    let mut sweep = |y: &mut Vec<usize>, rng: &mut ChaCha8Rng| {
        for s in 0..m {
            for (j, slot) in local.iter_mut().enumerate() {
                *slot = -energy.unary[s][j];
            }
            for &(t, e) in &adj[s] {
                let (a, _) = edges[e];
                for (j, slot) in local.iter_mut().enumerate() {
                    *slot -= if s == a {
                        energy.pairwise[e][j * r + y[t]]
                    } else {
                        energy.pairwise[e][y[t] * r + j]
                    };
                }
            }
            let z = log_sum_exp(&local);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut drawn = r - 1;
            for (j, &lw) in local.iter().enumerate() {
                acc += (lw - z).exp();
                if u < acc {
                    drawn = j;
                    break;
                }
            }
            y[s] = drawn;
        }
    };

    let mut out = Vec::with_capacity(opts.n);
    for i in 0..opts.n {
        let sweeps = if i == 0 {
            opts.burn_in
        } else {
            opts.thin.max(1)
        };
        for _ in 0..sweeps {
            sweep(&mut y, &mut rng);
        }
        out.push(Labeling(y.clone()));
    }
    Ok(out)
}
