//! One ridge problem, three solvers: the closed form behind a reusable
//! Cholesky factor, conjugate gradients, and single-pass SGD.

use lscrf::regress::{
    ridge_factorize, ridge_iterative, ridge_solve, IterativeMethod, RegressionDataset,
};
use rand::prelude::*;

fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let (n, d) = (400, 60);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let w_star: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let targets: Vec<f64> = rows
        .iter()
        .map(|row| {
            let signal: f64 = row.iter().zip(&w_star).map(|(a, b)| a * b).sum();
            (0.5 + signal + 0.05 * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0)
        })
        .collect();
    let dataset = RegressionDataset::new(rows, targets).unwrap();
    let lambda = 0.1;

    let factor = ridge_factorize(&dataset.features, lambda).unwrap();
    let closed = ridge_solve(&factor, &dataset.features, &dataset.targets).unwrap();

    // the factorization is reused across as many target vectors as needed
    let flipped: Vec<f64> = dataset.targets.iter().map(|t| 1.0 - t).collect();
    let closed_flipped = ridge_solve(&factor, &dataset.features, &flipped).unwrap();
    println!(
        "factor reuse: w[0] = {:+.6} for y, {:+.6} for 1-y",
        closed.w[0], closed_flipped.w[0]
    );

    let cg = ridge_iterative(
        &dataset,
        lambda,
        IterativeMethod::ConjugateGradient,
        1e-12,
        1_000,
        0,
    )
    .unwrap();
    let max_diff = closed
        .w
        .iter()
        .zip(&cg.model.w)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!(
        "conjugate gradients: {} iterations, residual {:.2e}, max |w_cf - w_cg| = {:.2e}",
        cg.iterations, cg.residual, max_diff
    );

    let sgd = ridge_iterative(&dataset, lambda, IterativeMethod::Sgd, 1e-3, 5, 11).unwrap();
    println!(
        "sgd: residual {:.3e} after {} shuffled passes (1.0 means no progress)",
        sgd.residual, sgd.iterations
    );
}
