//! Closed-form maximum likelihood on a tree: sample labelings from a known
//! model, estimate marginals, rebuild the energy, and watch the estimate
//! converge as the sample count grows.

use lscrf::graph::{empirical_marginals, exact_partition, tree_ml_params, Graph, LabelSet};
use lscrf::inference::{tree_marginals, tree_sample};
use lscrf::{EnergyFunction, Labeling};
use rand::prelude::*;

fn kl_by_enumeration(p: &EnergyFunction, q: &EnergyFunction) -> f64 {
    let (m, r) = (p.graph.num_nodes(), p.r);
    let (log_zp, log_zq) = (exact_partition(p).unwrap(), exact_partition(q).unwrap());
    let mut kl = 0.0;
    let mut y = vec![0usize; m];
    loop {
        let lab = Labeling(y.clone());
        let log_p = -p.energy(&lab).unwrap() - log_zp;
        let log_q = -q.energy(&lab).unwrap() - log_zq;
        kl += log_p.exp() * (log_p - log_q);
        let mut i = m;
        loop {
            if i == 0 {
                return kl;
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

fn main() {
    let graph = Graph::new(5, vec![(0, 1), (1, 2), (1, 3), (3, 4)]).unwrap();
    let labels = LabelSet::new(2).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut truth = EnergyFunction::zeros(graph.clone(), 2);
    for row in truth.unary.iter_mut().chain(truth.pairwise.iter_mut()) {
        for v in row.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }

    println!("samples    KL(truth || estimate)");
    for t in [100usize, 1_000, 10_000] {
        let samples = tree_sample(&truth, t, 13).unwrap();
        let mu = empirical_marginals(&samples, &graph, labels).unwrap();
        let estimate = tree_ml_params(&mu, &graph, 1e-9).unwrap();
        println!("{t:>7}    {:.6}", kl_by_enumeration(&truth, &estimate));
    }

    // the defining property: inference on the rebuilt energy reproduces the
    // marginals it was built from
    let samples = tree_sample(&truth, 2_000, 29).unwrap();
    let mu = empirical_marginals(&samples, &graph, labels).unwrap();
    let rebuilt = tree_ml_params(&mu, &graph, 1e-9).unwrap();
    let recovered = tree_marginals(&rebuilt).unwrap();
    let mut worst = 0.0f64;
    for s in 0..5 {
        for j in 0..2 {
            worst = worst.max((recovered.unary[s][j] - mu.unary[s][j]).abs());
        }
    }
    println!("moment-matching max deviation: {worst:.2e}");
}
