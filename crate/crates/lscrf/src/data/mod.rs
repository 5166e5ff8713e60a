//! Corpus file format, evaluation metrics, and split management.
//!
//! A corpus is line-delimited JSON: one header record carrying the schema
//! and label names, then one record per instance. The format is streamable
//! and round-trips byte-identically.

pub mod synth;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Instance, LabelSet, Labeling};

/// Feature dimensions shared by all instances of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub node_dim: usize,
    pub edge_dim: usize,
}

/// An instance collection with uniform schema and unique instance ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub label_names: Vec<String>,
    pub schema: FeatureSchema,
    pub ids: Vec<u64>,
    pub instances: Vec<Instance>,
    /// Generator or pipeline configuration recorded for provenance.
    pub provenance: Option<serde_json::Value>,
}

impl Corpus {
    /// Builds a corpus with sequential ids, deriving the schema from the
    /// instances.
    pub fn new(label_names: Vec<String>, instances: Vec<Instance>) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if label_names.is_empty() {
            return Err(Error::InvalidParameter("no label names".into()));
        }
        let schema = FeatureSchema {
            node_dim: instances[0].node_dim(),
            edge_dim: instances
                .iter()
                .find(|i| i.graph.num_edges() > 0)
                .map_or(0, Instance::edge_dim),
        };
        let ids = (0..instances.len() as u64).collect();
        let corpus = Corpus {
            label_names,
            schema,
            ids,
            instances,
            provenance: None,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn labels(&self) -> Result<LabelSet> {
        LabelSet::new(self.label_names.len())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.ids.len() != self.instances.len() {
            return Err(Error::DimensionMismatch(
                "id count differs from instance count".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for &id in &self.ids {
            if !seen.insert(id) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate instance id {id}"
                )));
            }
        }
        let labels = self.labels()?;
        for inst in &self.instances {
            if inst.node_dim() != self.schema.node_dim && inst.graph.num_nodes() > 0 {
                return Err(Error::DimensionMismatch(
                    "instance node dim differs from corpus schema".into(),
                ));
            }
            if inst.graph.num_edges() > 0 && inst.edge_dim() != self.schema.edge_dim {
                return Err(Error::DimensionMismatch(
                    "instance edge dim differs from corpus schema".into(),
                ));
            }
            if let Some(y) = &inst.labels {
                y.validate(&inst.graph, labels)?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    format_version: u32,
    kind: String,
    label_names: Vec<String>,
    node_dim: usize,
    edge_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    id: u64,
    m: usize,
    edges: Vec<(usize, usize)>,
    node_features: Vec<Vec<f64>>,
    edge_features: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
}

/// Writes a corpus in the line-delimited format.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    let header = HeaderRecord {
        format_version: 1,
        kind: "corpus".into(),
        label_names: corpus.label_names.clone(),
        node_dim: corpus.schema.node_dim,
        edge_dim: corpus.schema.edge_dim,
        provenance: corpus.provenance.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (&id, inst) in corpus.ids.iter().zip(&corpus.instances) {
        let record = InstanceRecord {
            id,
            m: inst.graph.num_nodes(),
            edges: inst.graph.edges().to_vec(),
            node_features: inst.node_features.clone(),
            edge_features: inst.edge_features.clone(),
            labels: inst.labels.as_ref().map(|y| y.0.clone()),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a corpus written by [`write_corpus`]; malformed lines are reported
/// with their line number.
pub fn read_corpus<R: BufRead>(input: R) -> Result<Corpus> {
    let mut lines = input.lines();
    let header_line = lines.next().ok_or(Error::Format {
        line: 1,
        message: "empty corpus file".into(),
    })??;
    let header: HeaderRecord = serde_json::from_str(&header_line).map_err(|e| Error::Format {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.kind != "corpus" {
        return Err(Error::Format {
            line: 1,
            message: format!("expected a corpus file, found kind {:?}", header.kind),
        });
    }
    let mut ids = Vec::new();
    let mut instances = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: InstanceRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            line: lineno,
            message: e.to_string(),
        })?;
        let graph = Graph::new(record.m, record.edges).map_err(|e| Error::Format {
            line: lineno,
            message: e.to_string(),
        })?;
        let instance = Instance::new(
            graph,
            record.node_features,
            record.edge_features,
            record.labels.map(Labeling),
        )
        .map_err(|e| Error::Format {
            line: lineno,
            message: e.to_string(),
        })?;
        ids.push(record.id);
        instances.push(instance);
    }
    if instances.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let corpus = Corpus {
        label_names: header.label_names,
        schema: FeatureSchema {
            node_dim: header.node_dim,
            edge_dim: header.edge_dim,
        },
        ids,
        instances,
        provenance: header.provenance,
    };
    corpus.validate()?;
    Ok(corpus)
}

pub fn write_corpus_file<P: AsRef<Path>>(corpus: &Corpus, path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_corpus(corpus, std::io::BufWriter::new(file))
}

pub fn read_corpus_file<P: AsRef<Path>>(path: P) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    read_corpus(BufReader::new(file))
}

#[derive(Serialize, Deserialize)]
struct LabelingsHeader {
    format_version: u32,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct LabelingRecord {
    id: u64,
    labels: Vec<usize>,
}

/// Writes predicted labelings, one record per instance id.
pub fn write_labelings<W: Write>(
    ids: &[u64],
    labelings: &[Labeling],
    provenance: Option<serde_json::Value>,
    mut out: W,
) -> Result<()> {
    if ids.len() != labelings.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ids for {} labelings",
            ids.len(),
            labelings.len()
        )));
    }
    let header = LabelingsHeader {
        format_version: 1,
        kind: "labelings".into(),
        provenance,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (&id, labeling) in ids.iter().zip(labelings) {
        let record = LabelingRecord {
            id,
            labels: labeling.0.clone(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a labelings file back as `(ids, labelings)`.
pub fn read_labelings<R: BufRead>(input: R) -> Result<(Vec<u64>, Vec<Labeling>)> {
    let mut lines = input.lines();
    let header_line = lines.next().ok_or(Error::Format {
        line: 1,
        message: "empty labelings file".into(),
    })??;
    let header: LabelingsHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::Format {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
    if header.kind != "labelings" {
        return Err(Error::Format {
            line: 1,
            message: format!("expected a labelings file, found kind {:?}", header.kind),
        });
    }
    let mut ids = Vec::new();
    let mut labelings = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LabelingRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            line: i + 2,
            message: e.to_string(),
        })?;
        ids.push(record.id);
        labelings.push(Labeling(record.labels));
    }
    Ok((ids, labelings))
}

pub fn write_labelings_file<P: AsRef<Path>>(
    ids: &[u64],
    labelings: &[Labeling],
    provenance: Option<serde_json::Value>,
    path: P,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_labelings(ids, labelings, provenance, std::io::BufWriter::new(file))
}

pub fn read_labelings_file<P: AsRef<Path>>(path: P) -> Result<(Vec<u64>, Vec<Labeling>)> {
    let file = std::fs::File::open(path)?;
    read_labelings(BufReader::new(file))
}

/// Accuracy metrics of a prediction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Correct nodes over all nodes.
    pub per_pixel_accuracy: f64,
    /// Mean recall over the classes present in the ground truth.
    pub per_class_accuracy: f64,
    /// Counts indexed `[truth][prediction]`.
    pub confusion: Vec<Vec<u64>>,
    /// Per-phase wall-clock seconds, filled by the pipeline driver.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub wall_times: Vec<(String, f64)>,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "per-pixel accuracy: {:.4}", self.per_pixel_accuracy)?;
        writeln!(f, "per-class accuracy: {:.4}", self.per_class_accuracy)?;
        writeln!(f, "confusion (rows = truth):")?;
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>8}")).collect();
            writeln!(f, "  {}", cells.join(" "))?;
        }
        for (phase, secs) in &self.wall_times {
            writeln!(f, "{phase}: {secs:.3}s")?;
        }
        Ok(())
    }
}

/// Compares predictions against ground truth node by node. Classes absent
/// from the truth are excluded from the per-class mean.
pub fn evaluate(
    predictions: &[Labeling],
    truths: &[Labeling],
    labels: LabelSet,
) -> Result<EvalReport> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let r = labels.r;
    let mut confusion = vec![vec![0u64; r]; r];
    for (i, (pred, truth)) in predictions.iter().zip(truths).enumerate() {
        if pred.len() != truth.len() {
            return Err(Error::DimensionMismatch(format!(
                "instance {i}: prediction has {} nodes, truth has {}",
                pred.len(),
                truth.len()
            )));
        }
        for (&p, &t) in pred.0.iter().zip(&truth.0) {
            if p >= r || t >= r {
                return Err(Error::LabelOutOfRange { label: p.max(t), r });
            }
            confusion[t][p] += 1;
        }
    }
    let total: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..r).map(|j| confusion[j][j]).sum();
    let mut class_recalls = Vec::new();
    for j in 0..r {
        let row: u64 = confusion[j].iter().sum();
        if row > 0 {
            class_recalls.push(confusion[j][j] as f64 / row as f64);
        }
    }
    Ok(EvalReport {
        per_pixel_accuracy: if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        },
        per_class_accuracy: if class_recalls.is_empty() {
            0.0
        } else {
            class_recalls.iter().sum::<f64>() / class_recalls.len() as f64
        },
        confusion,
        wall_times: Vec::new(),
    })
}

/// Deterministic k-fold split of `0..n`: shuffled once by the seed, then
/// chunked into folds whose sizes differ by at most one. Returns
/// `(train, test)` index pairs.
pub fn cross_val_splits(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::InvalidParameter("need at least 2 folds".into()));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!(
            "{k} folds for {n} instances"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut splits = Vec::with_capacity(k);
    let mut start = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let test: Vec<usize> = indices[start..start + size].to_vec();
        let train: Vec<usize> = indices[..start]
            .iter()
            .chain(&indices[start + size..])
            .copied()
            .collect();
        splits.push((train, test));
        start += size;
    }
    Ok(splits)
}
