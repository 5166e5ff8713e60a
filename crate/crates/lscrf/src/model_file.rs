//! Versioned JSON envelope for trained models of either family.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::LogLinearCRF;
use crate::energy::{predict_energy_loopy, predict_energy_tree, predict_labeling, Solver};
use crate::error::{Error, Result};
use crate::graph::{EnergyFunction, Instance, Labeling};
use crate::inference::{exact_map, icm, tree_map, trws_map, TrwsOptions};
use crate::train::PairwiseModel;

/// Training method selector shared by the CLI and the model file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMethod {
    LscrfLinear,
    LscrfGbt,
    LscrfLinearUnary,
    LscrfGbtUnary,
    Logistic,
    Pl,
    Pw,
    TreeCll,
}

impl std::str::FromStr for TrainMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lscrf-linear" => Ok(TrainMethod::LscrfLinear),
            "lscrf-gbt" => Ok(TrainMethod::LscrfGbt),
            "lscrf-linear-unary" => Ok(TrainMethod::LscrfLinearUnary),
            "lscrf-gbt-unary" => Ok(TrainMethod::LscrfGbtUnary),
            "logistic" => Ok(TrainMethod::Logistic),
            "pl" => Ok(TrainMethod::Pl),
            "pw" => Ok(TrainMethod::Pw),
            "tree-cll" => Ok(TrainMethod::TreeCll),
            other => Err(Error::Unknown {
                what: "training method",
                value: other.into(),
            }),
        }
    }
}

impl std::fmt::Display for TrainMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            TrainMethod::LscrfLinear => "lscrf-linear",
            TrainMethod::LscrfGbt => "lscrf-gbt",
            TrainMethod::LscrfLinearUnary => "lscrf-linear-unary",
            TrainMethod::LscrfGbtUnary => "lscrf-gbt-unary",
            TrainMethod::Logistic => "logistic",
            TrainMethod::Pl => "pl",
            TrainMethod::Pw => "pw",
            TrainMethod::TreeCll => "tree-cll",
        };
        f.write_str(name)
    }
}

/// A trained model of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelPayload {
    Pairwise(PairwiseModel),
    LogLinear(LogLinearCRF),
}

impl ModelPayload {
    /// Composes the energy for one instance. Pairwise models use the tree
    /// or loopy rule depending on `tree_composition`; log-linear models
    /// instantiate their tables directly.
    pub fn energy(&self, instance: &Instance, tree_composition: bool) -> Result<EnergyFunction> {
        match self {
            ModelPayload::Pairwise(m) => {
                if tree_composition {
                    predict_energy_tree(m, instance)
                } else {
                    predict_energy_loopy(m, instance)
                }
            }
            ModelPayload::LogLinear(m) => m.energy(instance),
        }
    }

    /// MAP labeling of one instance under the chosen solver.
    pub fn predict(&self, instance: &Instance, solver: Solver) -> Result<Labeling> {
        match self {
            ModelPayload::Pairwise(m) => predict_labeling(m, instance, solver),
            ModelPayload::LogLinear(m) => {
                let energy = m.energy(instance)?;
                let result = match solver {
                    Solver::Tree => tree_map(&energy)?,
                    Solver::Exact => exact_map(&energy)?,
                    Solver::Trws => trws_map(&energy, TrwsOptions::default())?,
                    Solver::Icm => {
                        let init = Labeling(vec![0; instance.graph.num_nodes()]);
                        icm(&energy, &init, 100)?
                    }
                };
                Ok(result.labeling)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFileRecord {
    format_version: u32,
    kind: String,
    method: TrainMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
    model: ModelPayload,
}

/// Writes a model file; field order is fixed and floats use the shortest
/// round-trip encoding, so identical models give identical bytes.
pub fn write_model<W: Write>(
    payload: &ModelPayload,
    method: TrainMethod,
    provenance: Option<serde_json::Value>,
    mut out: W,
) -> Result<()> {
    let record = ModelFileRecord {
        format_version: 1,
        kind: "model".into(),
        method,
        provenance,
        model: payload.clone(),
    };
    serde_json::to_writer(&mut out, &record)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Reads a model file written by [`write_model`].
pub fn read_model<R: BufRead>(input: R) -> Result<(ModelPayload, TrainMethod)> {
    let record: ModelFileRecord = serde_json::from_reader(input)?;
    if record.kind != "model" {
        return Err(Error::Format {
            line: 1,
            message: format!("expected a model file, found kind {:?}", record.kind),
        });
    }
    Ok((record.model, record.method))
}

pub fn write_model_file<P: AsRef<Path>>(
    payload: &ModelPayload,
    method: TrainMethod,
    provenance: Option<serde_json::Value>,
    path: P,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_model(payload, method, provenance, std::io::BufWriter::new(file))
}

pub fn read_model_file<P: AsRef<Path>>(path: P) -> Result<(ModelPayload, TrainMethod)> {
    let file = std::fs::File::open(path)?;
    read_model(std::io::BufReader::new(file))
}
