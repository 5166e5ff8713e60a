//! Regression-trained pairwise models against the classical
//! conditional-likelihood trainers on synthetic chain corpora.

use lscrf::baselines::{
    logistic_unary_train, piecewise_train, pseudolikelihood_train, tree_cll_train,
};
use lscrf::data::synth::{synth_chain_corpus, ChainGenConfig};
use lscrf::data::{evaluate, Corpus};
use lscrf::energy::{predict_labeling, Solver};
use lscrf::inference::tree_map;
use lscrf::train::{train_lscrf, TrainConfig};
use lscrf::{Labeling, Result};

fn truths(corpus: &Corpus) -> Vec<Labeling> {
    corpus
        .instances
        .iter()
        .map(|i| i.labels.clone().unwrap())
        .collect()
}

fn main() -> Result<()> {
    let gen = ChainGenConfig {
        n_instances: 1000,
        m: 5,
        r: 2,
        coupling: 0.8,
        unary_snr: 2.0,
        xor_features: false,
        seed: 11,
    };
    let train = synth_chain_corpus(&gen)?;
    let test = synth_chain_corpus(&ChainGenConfig {
        n_instances: 400,
        seed: 777,
        ..gen
    })?;
    let labels = train.labels()?;

    // regression-trained pairwise model, both decoding rules
    let lscrf = train_lscrf(
        &train.instances,
        labels,
        &TrainConfig {
            min_pair_count: 5,
            ..TrainConfig::default()
        },
    )?;
    for (name, solver) in [
        ("tree decoding", Solver::Tree),
        ("loopy decoding", Solver::Trws),
    ] {
        let preds: Vec<Labeling> = test
            .instances
            .iter()
            .map(|inst| predict_labeling(&lscrf, inst, solver))
            .collect::<Result<_>>()?;
        let acc = evaluate(&preds, &truths(&test), labels)?.per_pixel_accuracy;
        println!("lscrf-linear ({name}): {acc:.4}");
    }

    // likelihood-based trainers on the same features
    let fits = [
        (
            "logistic",
            logistic_unary_train(&train.instances, labels, 1e-3, 250, 1e-5)?,
        ),
        (
            "pseudolikelihood",
            pseudolikelihood_train(&train.instances, labels, 1e-3, 250, 1e-5)?,
        ),
        (
            "piecewise",
            piecewise_train(&train.instances, labels, 1e-3, 250, 1e-5)?,
        ),
        (
            "tree-cll",
            tree_cll_train(&train.instances, labels, 1e-3, 250, 1e-5)?,
        ),
    ];
    for (name, fit) in fits {
        let preds: Vec<Labeling> = test
            .instances
            .iter()
            .map(|inst| Ok(tree_map(&fit.model.energy(inst)?)?.labeling))
            .collect::<Result<_>>()?;
        let acc = evaluate(&preds, &truths(&test), labels)?.per_pixel_accuracy;
        println!(
            "{name:<17}    : {acc:.4} ({} iterations, gradient norm {:.1e})",
            fit.iterations, fit.grad_norm
        );
    }
    Ok(())
}
