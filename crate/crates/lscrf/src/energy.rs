//! Turns a trained [`PairwiseModel`] and a new instance into an
//! [`EnergyFunction`], and runs the chosen MAP solver on it.
//!
//! Two composition rules are provided. The loopy rule writes
//! `-ln f_{jk}(φ_st)` straight into each pairwise table and keeps unaries
//! at zero: every edge is treated as its own little tree, and per-node
//! information is already inside the pairwise predictions. The tree rule
//! additionally forms per-node scores by marginalizing the incident edges'
//! predictions and divides them out of the pairwise tables, which on a
//! forest makes the composed distribution consistent with the predicted
//! marginals.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EnergyFunction, Graph, Instance, Labeling};
use crate::inference::{exact_map, icm, tree_map, trws_map, TrwsOptions};
use crate::train::{unary_from_pairwise, EdgeSide, PairwiseModel};

/// MAP solver selection for [`predict_labeling`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Exact,
    Tree,
    Trws,
    Icm,
}

impl std::str::FromStr for Solver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Solver::Exact),
            "tree" => Ok(Solver::Tree),
            "trws" => Ok(Solver::Trws),
            "icm" => Ok(Solver::Icm),
            other => Err(Error::Unknown {
                what: "solver",
                value: other.into(),
            }),
        }
    }
}

fn check_model_dims(model: &PairwiseModel, instance: &Instance) -> Result<()> {
    if instance.graph.num_edges() > 0 && model.pair_predictors.is_some() {
        // probe one edge so dimension mismatches surface as errors here
        model.pair_table(&instance.edge_features[0])?;
    }
    Ok(())
}

/// Isolated-node unary energies, shared by both composition rules.
fn isolated_unaries(
    model: &PairwiseModel,
    instance: &Instance,
    unary: &mut [Vec<f64>],
) -> Result<()> {
    let isolated = instance.graph.isolated_nodes();
    if isolated.is_empty() {
        return Ok(());
    }
    if model.unary_predictors.is_none() {
        return Err(Error::MissingUnaryRegressors);
    }
    for s in isolated {
        let scores = model.unary_scores(&instance.node_features[s])?;
        for (j, slot) in unary[s].iter_mut().enumerate() {
            *slot = -scores[j].ln();
        }
    }
    Ok(())
}

/// Loopy composition: pairwise tables `-ln f_{jk}(φ_st)`, zero unaries on
/// connected nodes, regressed unaries on isolated ones.
pub fn predict_energy_loopy(model: &PairwiseModel, instance: &Instance) -> Result<EnergyFunction> {
    check_model_dims(model, instance)?;
    let r = model.r();
    let graph = instance.graph.clone();
    let mut energy = EnergyFunction::zeros(graph, r);
    if model.pair_predictors.is_none() {
        // unary-only model: every node is scored independently
        if model.unary_predictors.is_none() {
            return Err(Error::MissingUnaryRegressors);
        }
        for s in 0..instance.graph.num_nodes() {
            let scores = model.unary_scores(&instance.node_features[s])?;
            for (j, slot) in energy.unary[s].iter_mut().enumerate() {
                *slot = -scores[j].ln();
            }
        }
        return Ok(energy);
    }
    for (e, phi) in instance.edge_features.iter().enumerate() {
        let table = model.pair_table(phi)?;
        for (slot, &f) in energy.pairwise[e].iter_mut().zip(&table) {
            *slot = -f.ln();
        }
    }
    isolated_unaries(model, instance, &mut energy.unary)?;
    Ok(energy)
}

/// Tree composition for forest instances: per-node scores are the mean of
/// the incident edges' marginalized predictions, pairwise tables hold the
/// ratio `-ln( f_{jk} / (f_{s;j} f_{t;k}) )`.
///
/// On a single edge this telescopes back to `-ln f_{jk}`, so both rules
/// induce the same MAP labeling there.
pub fn predict_energy_tree(model: &PairwiseModel, instance: &Instance) -> Result<EnergyFunction> {
    if !instance.graph.is_forest() {
        return Err(Error::CyclicGraph);
    }
    check_model_dims(model, instance)?;
    let r = model.r();
    let m = instance.graph.num_nodes();
    if model.pair_predictors.is_none() {
        return predict_energy_loopy(model, instance);
    }

    // clamped pair tables per edge, computed once
    let tables: Vec<Vec<f64>> = instance
        .edge_features
        .iter()
        .map(|phi| model.pair_table(phi))
        .collect::<Result<_>>()?;

    // per-node scores: mean over incident edges of the marginalized table
    let mut scores = vec![vec![0.0f64; r]; m];
    let degrees = instance.graph.degrees();
    for (e, &(s, t)) in instance.graph.edges().iter().enumerate() {
        for j in 0..r {
            let row: f64 = (0..r).map(|k| tables[e][j * r + k]).sum();
            let col: f64 = (0..r).map(|i| tables[e][i * r + j]).sum();
            scores[s][j] += row;
            scores[t][j] += col;
        }
    }
    let mut energy = EnergyFunction::zeros(instance.graph.clone(), r);
    for s in 0..m {
        if degrees[s] > 0 {
            for j in 0..r {
                scores[s][j] /= degrees[s] as f64;
                energy.unary[s][j] = -scores[s][j].ln();
            }
        }
    }
    for (e, &(s, t)) in instance.graph.edges().iter().enumerate() {
        for j in 0..r {
            for k in 0..r {
                let ratio = tables[e][j * r + k] / (scores[s][j] * scores[t][k]);
                energy.pairwise[e][j * r + k] = -ratio.ln();
            }
        }
    }
    isolated_unaries(model, instance, &mut energy.unary)?;
    Ok(energy)
}

/// Starting labeling for ICM: per-node argmax of the averaged marginalized
/// predictions (or of the unary predictors when there are no edges).
fn icm_init(model: &PairwiseModel, instance: &Instance) -> Result<Labeling> {
    let r = model.r();
    let m = instance.graph.num_nodes();
    let mut scores = vec![vec![0.0f64; r]; m];
    if model.pair_predictors.is_some() {
        for (e, &(s, t)) in instance.graph.edges().iter().enumerate() {
            let phi = &instance.edge_features[e];
            let from_s = unary_from_pairwise(model, phi, EdgeSide::S)?;
            let from_t = unary_from_pairwise(model, phi, EdgeSide::T)?;
            for j in 0..r {
                scores[s][j] += from_s[j];
                scores[t][j] += from_t[j];
            }
        }
    }
    if model.unary_predictors.is_some() {
        for s in instance.graph.isolated_nodes() {
            let u = model.unary_scores(&instance.node_features[s])?;
            for j in 0..r {
                scores[s][j] += u[j];
            }
        }
    }
    Ok(Labeling(
        scores
            .iter()
            .map(|sc| {
                let mut arg = 0;
                for j in 1..r {
                    if sc[j] > sc[arg] {
                        arg = j;
                    }
                }
                arg
            })
            .collect(),
    ))
}

/// Composes the energy for `instance` and minimizes it with `solver`.
/// The tree solver uses the tree composition; the others use the loopy one.
pub fn predict_labeling(
    model: &PairwiseModel,
    instance: &Instance,
    solver: Solver,
) -> Result<Labeling> {
    let result = match solver {
        Solver::Tree => tree_map(&predict_energy_tree(model, instance)?)?,
        Solver::Exact => exact_map(&predict_energy_loopy(model, instance)?)?,
        Solver::Trws => trws_map(
            &predict_energy_loopy(model, instance)?,
            TrwsOptions::default(),
        )?,
        Solver::Icm => {
            let energy = predict_energy_loopy(model, instance)?;
            icm(&energy, &icm_init(model, instance)?, 100)?
        }
    };
    Ok(result.labeling)
}

/// Writes an energy in the plain-text interchange format:
///
/// ```text
/// m r e
/// <r unary values per node, one node per line>
/// s t <r*r pairwise values, row-major by the label of s>
/// ```
pub fn write_energy_text<W: Write>(energy: &EnergyFunction, mut out: W) -> Result<()> {
    writeln!(
        out,
        "{} {} {}",
        energy.graph.num_nodes(),
        energy.r,
        energy.graph.num_edges()
    )?;
    for row in &energy.unary {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    for (e, &(s, t)) in energy.graph.edges().iter().enumerate() {
        let mut line = vec![s.to_string(), t.to_string()];
        line.extend(energy.pairwise[e].iter().map(f64::to_string));
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

fn parse_floats(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| Error::Format {
                line: lineno,
                message: format!("bad number {tok:?}"),
            })
        })
        .collect()
}

/// Reads an energy from the text format written by [`write_energy_text`].
pub fn read_energy_text<R: BufRead>(input: R) -> Result<EnergyFunction> {
    let mut lines = input.lines().enumerate();
    let (lineno, header) = lines
        .next()
        .ok_or(Error::Format {
            line: 1,
            message: "empty energy file".into(),
        })
        .and_then(|(i, l)| Ok((i + 1, l?)))?;
    let head = parse_floats(&header, lineno)?;
    if head.len() != 3 {
        return Err(Error::Format {
            line: lineno,
            message: "header must be: m r e".into(),
        });
    }
    let (m, r, e) = (head[0] as usize, head[1] as usize, head[2] as usize);
    let mut unary = Vec::with_capacity(m);
    for _ in 0..m {
        let (i, line) = lines
            .next()
            .ok_or(Error::Format {
                line: lineno,
                message: "missing unary rows".into(),
            })
            .and_then(|(i, l)| Ok((i + 1, l?)))?;
        let row = parse_floats(&line, i)?;
        if row.len() != r {
            return Err(Error::Format {
                line: i,
                message: format!("expected {r} unary values"),
            });
        }
        unary.push(row);
    }
    let mut edges = Vec::with_capacity(e);
    let mut pairwise = Vec::with_capacity(e);
    for _ in 0..e {
        let (i, line) = lines
            .next()
            .ok_or(Error::Format {
                line: lineno,
                message: "missing edge rows".into(),
            })
            .and_then(|(i, l)| Ok((i + 1, l?)))?;
        let row = parse_floats(&line, i)?;
        if row.len() != 2 + r * r {
            return Err(Error::Format {
                line: i,
                message: format!("expected s t and {} table values", r * r),
            });
        }
        edges.push((row[0] as usize, row[1] as usize));
        pairwise.push(row[2..].to_vec());
    }
    let graph = Graph::new(m, edges)?;
    EnergyFunction::new(graph, r, unary, pairwise)
}

/// Writes an energy as a UAI MARKOV network for cross-tool validation.
/// Factor tables hold `exp(-θ)`, one unary factor per node followed by one
/// pairwise factor per edge.
pub fn write_energy_uai<W: Write>(energy: &EnergyFunction, mut out: W) -> Result<()> {
    let m = energy.graph.num_nodes();
    writeln!(out, "MARKOV")?;
    writeln!(out, "{m}")?;
    let cards: Vec<String> = (0..m).map(|_| energy.r.to_string()).collect();
    writeln!(out, "{}", cards.join(" "))?;
    writeln!(out, "{}", m + energy.graph.num_edges())?;
    for s in 0..m {
        writeln!(out, "1 {s}")?;
    }
    for &(s, t) in energy.graph.edges() {
        writeln!(out, "2 {s} {t}")?;
    }
    for row in &energy.unary {
        writeln!(out)?;
        writeln!(out, "{}", row.len())?;
        let vals: Vec<String> = row.iter().map(|&v| (-v).exp().to_string()).collect();
        writeln!(out, "{}", vals.join(" "))?;
    }
    for table in &energy.pairwise {
        writeln!(out)?;
        writeln!(out, "{}", table.len())?;
        let vals: Vec<String> = table.iter().map(|&v| (-v).exp().to_string()).collect();
        writeln!(out, "{}", vals.join(" "))?;
    }
    Ok(())
}
