//! Gradient-boosted oblivious trees against a linear model on an
//! XOR-patterned target, which no linear regressor can represent.

use lscrf::regress::{
    gbt_train, ridge_factorize, ridge_solve, training_mse, GbtParams, RegressionDataset, Regressor,
};
use rand::prelude::*;

fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let n = 600;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0])
        .collect();
    let targets: Vec<f64> = rows
        .iter()
        .map(|r| if r[0] * r[1] > 0.0 { 1.0 } else { 0.0 })
        .collect();
    let dataset = RegressionDataset::new(rows, targets).unwrap();

    let linear = ridge_solve(
        &ridge_factorize(&dataset.features, 1e-6).unwrap(),
        &dataset.features,
        &dataset.targets,
    )
    .unwrap();
    println!(
        "linear model MSE: {:.4}",
        training_mse(&Regressor::Linear(linear), &dataset).unwrap()
    );

    println!("trees  depth  training MSE");
    for (n_trees, depth) in [(10, 2), (50, 2), (50, 3), (200, 3)] {
        let params = GbtParams {
            n_trees,
            depth,
            learning_rate: 0.3,
            seed: 0,
        };
        let model = gbt_train(&dataset, &params).unwrap();
        let mse = training_mse(&Regressor::Tree(model), &dataset).unwrap();
        println!("{n_trees:>5}  {depth:>5}  {mse:.5}");
    }
}
