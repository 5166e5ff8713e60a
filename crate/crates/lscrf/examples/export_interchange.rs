//! Export a composed energy to the text and UAI interchange formats, read
//! the text form back, and check that inference agrees.

use lscrf::data::synth::{synth_grid_corpus, GridGenConfig};
use lscrf::energy::{predict_energy_loopy, read_energy_text, write_energy_text, write_energy_uai};
use lscrf::inference::{trws_map, TrwsOptions};
use lscrf::train::{train_lscrf, TrainConfig};
use lscrf::Result;

fn main() -> Result<()> {
    let gen = GridGenConfig {
        n_instances: 40,
        height: 5,
        width: 5,
        r: 2,
        coupling: 0.8,
        unary_snr: 1.5,
        seed: 2,
    };
    let corpus = synth_grid_corpus(&gen)?;
    let model = train_lscrf(
        &corpus.instances,
        corpus.labels()?,
        &TrainConfig {
            min_pair_count: 5,
            ..TrainConfig::default()
        },
    )?;
    let energy = predict_energy_loopy(&model, &corpus.instances[0])?;

    let mut text = Vec::new();
    write_energy_text(&energy, &mut text)?;
    println!(
        "text export: {} bytes, header {:?}",
        text.len(),
        String::from_utf8_lossy(&text).lines().next().unwrap()
    );

    let mut uai = Vec::new();
    write_energy_uai(&energy, &mut uai)?;
    println!("uai export: {} bytes", uai.len());

    let reloaded = read_energy_text(&text[..])?;
    let a = trws_map(&energy, TrwsOptions::default())?;
    let b = trws_map(&reloaded, TrwsOptions::default())?;
    println!(
        "round-trip inference: energy {:.6} vs {:.6}, labelings equal: {}",
        a.energy,
        b.energy,
        a.labeling == b.labeling
    );
    Ok(())
}
