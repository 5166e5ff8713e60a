//! End-to-end pipeline on a synthetic grid corpus: generate, train a
//! pairwise model and a unary-only one, predict by MAP, and compare.

use lscrf::data::synth::{synth_grid_corpus, GridGenConfig};
use lscrf::data::{evaluate, Corpus};
use lscrf::energy::{predict_labeling, Solver};
use lscrf::train::{train_lscrf, TrainConfig};
use lscrf::{Labeling, Result};

fn accuracy(corpus: &Corpus, config: &TrainConfig, test: &Corpus) -> Result<f64> {
    let labels = corpus.labels()?;
    let model = train_lscrf(&corpus.instances, labels, config)?;
    let solver = if config.unary_only {
        Solver::Icm
    } else {
        Solver::Trws
    };
    let predictions: Vec<Labeling> = test
        .instances
        .iter()
        .map(|inst| predict_labeling(&model, inst, solver))
        .collect::<Result<_>>()?;
    let truths: Vec<Labeling> = test
        .instances
        .iter()
        .map(|inst| inst.labels.clone().unwrap())
        .collect();
    Ok(evaluate(&predictions, &truths, labels)?.per_pixel_accuracy)
}

fn main() -> Result<()> {
    let gen = GridGenConfig {
        n_instances: 120,
        height: 10,
        width: 10,
        r: 2,
        coupling: 0.8,
        unary_snr: 1.0,
        seed: 3,
    };
    let train = synth_grid_corpus(&gen)?;
    let test = synth_grid_corpus(&GridGenConfig {
        n_instances: 40,
        seed: 9_000 + gen.seed,
        ..gen
    })?;

    let pairwise = TrainConfig {
        min_pair_count: 5,
        ..TrainConfig::default()
    };
    let unary_only = TrainConfig {
        unary_only: true,
        ..pairwise.clone()
    };
    let acc_pair = accuracy(&train, &pairwise, &test)?;
    let acc_unary = accuracy(&train, &unary_only, &test)?;
    println!("unary-only per-pixel accuracy: {acc_unary:.4}");
    println!("pairwise   per-pixel accuracy: {acc_pair:.4}");
    println!("margin: {:+.4}", acc_pair - acc_unary);
    Ok(())
}
