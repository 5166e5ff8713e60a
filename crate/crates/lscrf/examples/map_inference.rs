//! MAP solvers side by side on a loopy grid energy: exhaustive search,
//! message passing with a dual bound, and greedy coordinate descent.

use lscrf::data::synth::grid_graph;
use lscrf::inference::{exact_map, icm, trws_map_trace, TrwsOptions};
use lscrf::{EnergyFunction, Labeling};
use rand::prelude::*;

fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let graph = grid_graph(3, 4).unwrap();
    let mut energy = EnergyFunction::zeros(graph, 2);
    for row in energy.unary.iter_mut().chain(energy.pairwise.iter_mut()) {
        for v in row.iter_mut() {
            *v = rng.gen_range(-1.5..1.5);
        }
    }

    let exact = exact_map(&energy).unwrap();
    println!("exhaustive optimum: {:.6}", exact.energy);

    let (trws, trace) = trws_map_trace(
        &energy,
        TrwsOptions {
            max_iters: 100,
            tol: 1e-10,
        },
    )
    .unwrap();
    println!(
        "message passing:    {:.6} (bound {:.6}, gap {:.2e}, {} iterations)",
        trws.energy,
        trws.lower_bound.unwrap(),
        trws.energy - trws.lower_bound.unwrap(),
        trws.iterations
    );
    let shown = trace
        .iter()
        .take(5)
        .map(|b| format!("{b:.4}"))
        .collect::<Vec<_>>();
    println!("bound trace (first iterations): {}", shown.join(" -> "));

    let init = Labeling(vec![0; energy.graph.num_nodes()]);
    let greedy = icm(&energy, &init, 50).unwrap();
    println!(
        "coordinate descent: {:.6} after {} sweeps (from the all-zero start)",
        greedy.energy, greedy.iterations
    );
}
