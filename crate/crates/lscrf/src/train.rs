//! Training pipeline: assemble one regression dataset per label pair from
//! annotated graphs and fit the [`PairwiseModel`].
//!
//! Every retained edge `(s,t)` with ground truth `(y_s, y_t)` contributes
//! its feature vector to all `r²` pair datasets, with target 1 in dataset
//! `(y_s, y_t)` and 0 elsewhere. The datasets are independent, so the
//! regressors can be fitted in parallel; for the linear parameterization a
//! single Gram factorization is shared across all pairs.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Instance, LabelSet};
use crate::regress::{
    clamp01, gbt_train, ridge_factorize, ridge_solve, FeatureMatrix, GbtParams, RegressionDataset,
    Regressor,
};

/// Which regressor family a model was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    Linear,
    Gbt,
}

/// Edge/node subsampling controls.
///
/// `pair_fraction` keeps roughly that share of all edges; `unary_fraction`
/// does the same for the node examples behind unary regressors. With
/// `balance` set, sampling preserves the corpus ratio of same-label to
/// different-label pairs and equalizes label combinations within each
/// group (respectively balances node classes).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub unary_fraction: f64,
    pub pair_fraction: f64,
    pub balance: bool,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            unary_fraction: 1.0,
            pair_fraction: 1.0,
            balance: false,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("unary_fraction", self.unary_fraction),
            ("pair_fraction", self.pair_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Reference to one edge of one instance together with its label pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeRef {
    pub instance: usize,
    pub edge: usize,
    pub pair: (usize, usize),
}

/// Full training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regressor_kind: RegressorKind,
    pub sampling: SamplingConfig,
    /// Pairs with fewer positive examples than this fall back to the
    /// constant probability below.
    pub min_pair_count: usize,
    pub rare_pair_constant: f64,
    /// Ridge regularization; 0 selects the automatic singularity fallback
    /// `1e-6 · trace(X'X) / D`.
    pub lambda: f64,
    pub gbt: GbtParams,
    /// Train unary regressors even when no training graph has isolated
    /// nodes, so the model can label edge-free instances.
    pub unary_fallback: bool,
    /// Additionally feed each edge with its node-feature halves swapped
    /// and the label pair transposed. Off by default: edge features are
    /// oriented `s < t` and the regressors learn that orientation.
    pub augment_symmetric: bool,
    /// Train only unary regressors over node features; the model then
    /// labels nodes independently.
    pub unary_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regressor_kind: RegressorKind::Linear,
            sampling: SamplingConfig::default(),
            min_pair_count: 20,
            rare_pair_constant: 1e-3,
            lambda: 0.0,
            gbt: GbtParams::default(),
            unary_fallback: false,
            augment_symmetric: false,
            unary_only: false,
        }
    }
}

/// A per-label-pair predictor: either a fitted regressor or the constant
/// used for pairs too rare to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPredictor {
    Trained(Regressor),
    Constant { value: f64 },
}

impl PairPredictor {
    /// Raw prediction; constants pass through unchanged.
    pub fn predict(&self, phi: &[f64]) -> Result<f64> {
        match self {
            PairPredictor::Trained(r) => r.predict(phi),
            PairPredictor::Constant { value } => Ok(*value),
        }
    }
}

/// The trained model: one predictor per label pair over edge features,
/// optional per-label unary predictors over node features, and metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseModel {
    pub label_set: LabelSet,
    pub regressor_kind: RegressorKind,
    /// Row-major `r × r` predictors, indexed `j * r + k`; `None` for
    /// unary-only models.
    pub pair_predictors: Option<Vec<PairPredictor>>,
    /// Per-label predictors over node features, present when the training
    /// graphs had isolated nodes, `unary_fallback` was set, or the model
    /// is unary-only.
    pub unary_predictors: Option<Vec<PairPredictor>>,
    pub rare_pair_constant: f64,
    /// The subsampling settings the model was trained with.
    pub sampling: SamplingConfig,
    /// Set when every label pair fell below `min_pair_count`, making the
    /// pairwise part all-constant.
    pub all_constant: bool,
}

impl PairwiseModel {
    pub fn r(&self) -> usize {
        self.label_set.r
    }

    pub fn pair_predictor(&self, j: usize, k: usize) -> Option<&PairPredictor> {
        self.pair_predictors
            .as_ref()
            .map(|p| &p[j * self.label_set.r + k])
    }

    /// Clamped pairwise predictions for one edge feature vector, as a
    /// row-major `r × r` table.
    pub fn pair_table(&self, phi_edge: &[f64]) -> Result<Vec<f64>> {
        let preds = self
            .pair_predictors
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("model has no pairwise predictors".into()))?;
        preds
            .iter()
            .map(|p| clamp01(p.predict(phi_edge)?))
            .collect()
    }

    /// Clamped unary predictions for one node feature vector.
    pub fn unary_scores(&self, phi_node: &[f64]) -> Result<Vec<f64>> {
        let preds = self
            .unary_predictors
            .as_ref()
            .ok_or(Error::MissingUnaryRegressors)?;
        preds
            .iter()
            .map(|p| clamp01(p.predict(phi_node)?))
            .collect()
    }
}

/// Side of an edge for [`unary_from_pairwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSide {
    /// The smaller endpoint (first pair index).
    S,
    /// The larger endpoint (second pair index).
    T,
}

/// Marginalizes the pairwise predictions of one edge onto one endpoint:
/// `f_{s;j} = Σ_k clamp(f_{jk}(φ))` for side `S`, summing over the first
/// index for side `T`. Entries are strictly positive.
pub fn unary_from_pairwise(
    model: &PairwiseModel,
    phi_edge: &[f64],
    side: EdgeSide,
) -> Result<Vec<f64>> {
    let r = model.r();
    let table = model.pair_table(phi_edge)?;
    let mut out = vec![0.0; r];
    for j in 0..r {
        for k in 0..r {
            let v = table[j * r + k];
            match side {
                EdgeSide::S => out[j] += v,
                EdgeSide::T => out[k] += v,
            }
        }
    }
    Ok(out)
}

/// Deterministic sample of `count` distinct indices from `0..n`.
fn sample_indices(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let count = count.min(n);
    for i in 0..count {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut picked = idx[..count].to_vec();
    picked.sort_unstable();
    picked
}

/// Equal allocation of `target` draws across subgroup sizes, spilling the
/// shortfall of small groups onto the rest.
fn water_fill(avail: &[usize], target: usize) -> Vec<usize> {
    let k = avail.len();
    let mut alloc = vec![0usize; k];
    if k == 0 {
        return alloc;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&i| avail[i]);
    let mut remaining = target.min(avail.iter().sum());
    for (pos, &i) in order.iter().enumerate() {
        let groups_left = k - pos;
        let share = remaining.div_ceil(groups_left);
        let take = share.min(avail[i]).min(remaining);
        alloc[i] = take;
        remaining -= take;
    }
    alloc
}

/// Subsamples an edge pool at `pair_fraction`, preserving the same-label /
/// different-label ratio and equalizing label combinations within each
/// group when `balance` is set. Deterministic given the seed; a fraction
/// of 1 returns the pool unchanged.
pub fn balanced_sample(pool: &[EdgeRef], sampling: &SamplingConfig) -> Result<Vec<EdgeRef>> {
    sampling.validate()?;
    if pool.is_empty() {
        return Err(Error::InvalidParameter("empty edge pool".into()));
    }
    if sampling.pair_fraction >= 1.0 {
        return Ok(pool.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    if !sampling.balance {
        let count = (sampling.pair_fraction * pool.len() as f64).round() as usize;
        return Ok(sample_indices(pool.len(), count, &mut rng)
            .into_iter()
            .map(|i| pool[i])
            .collect());
    }
    // group indices: same-label pairs by label, different-label pairs by
    // ordered label combination
    let mut same: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    let mut diff: std::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
    for (i, e) in pool.iter().enumerate() {
        if e.pair.0 == e.pair.1 {
            same.entry(e.pair.0).or_default().push(i);
        } else {
            diff.entry(e.pair).or_default().push(i);
        }
    }
    let n_same: usize = same.values().map(Vec::len).sum();
    let n_diff = pool.len() - n_same;
    let mut picked = Vec::new();
    for (groups, total) in [
        (same.values().collect::<Vec<_>>(), n_same),
        (diff.values().collect::<Vec<_>>(), n_diff),
    ] {
        let target = (sampling.pair_fraction * total as f64).round() as usize;
        let avail: Vec<usize> = groups.iter().map(|g| g.len()).collect();
        let alloc = water_fill(&avail, target);
        for (g, &take) in groups.iter().zip(&alloc) {
            for pos in sample_indices(g.len(), take, &mut rng) {
                picked.push(g[pos]);
            }
        }
    }
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i]).collect())
}

/// The `r²` pair datasets, sharing one feature matrix.
#[derive(Debug, Clone)]
pub struct PairDatasets {
    pub r: usize,
    pub features: Arc<FeatureMatrix>,
    /// `r²` indicator target vectors, indexed `j * r + k`.
    pub targets: Vec<Vec<f64>>,
    /// Positive-example count per pair.
    pub positives: Vec<usize>,
}

impl PairDatasets {
    /// View of the dataset for pair `(j, k)`.
    pub fn dataset(&self, j: usize, k: usize) -> Result<RegressionDataset> {
        RegressionDataset::from_shared(
            Arc::clone(&self.features),
            self.targets[j * self.r + k].clone(),
        )
    }
}

fn check_training_instances(instances: &[Instance], labels: LabelSet) -> Result<(usize, usize)> {
    if instances.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let node_dim = instances[0].node_dim();
    let edge_dim = instances
        .iter()
        .find(|i| i.graph.num_edges() > 0)
        .map_or(0, Instance::edge_dim);
    for inst in instances {
        let lab = inst.labels.as_ref().ok_or(Error::MissingLabels)?;
        lab.validate(&inst.graph, labels)?;
        if inst.graph.num_nodes() > 0 && inst.node_dim() != node_dim {
            return Err(Error::DimensionMismatch(
                "node feature dimensions differ across instances".into(),
            ));
        }
        if inst.graph.num_edges() > 0 && inst.edge_dim() != edge_dim {
            return Err(Error::DimensionMismatch(
                "edge feature dimensions differ across instances".into(),
            ));
        }
    }
    Ok((node_dim, edge_dim))
}

/// Collects every edge of every instance with its ground-truth label pair.
pub fn collect_edge_pool(instances: &[Instance]) -> Vec<EdgeRef> {
    let mut pool = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        let y = inst.labels.as_ref().expect("validated");
        for (e, &(s, t)) in inst.graph.edges().iter().enumerate() {
            pool.push(EdgeRef {
                instance: i,
                edge: e,
                pair: (y[s], y[t]),
            });
        }
    }
    pool
}

/// Swaps the two node-feature halves of an edge feature vector, keeping any
/// trailing entries (such as a constant bias component) in place.
fn swap_halves(phi: &[f64], node_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(phi.len());
    out.extend_from_slice(&phi[node_dim..2 * node_dim]);
    out.extend_from_slice(&phi[..node_dim]);
    out.extend_from_slice(&phi[2 * node_dim..]);
    out
}

/// Builds the `r²` regression datasets from the retained edges of the
/// training instances. Each retained edge contributes one row whose target
/// is 1 in exactly one dataset and 0 in the others.
pub fn assemble_pair_datasets(
    instances: &[Instance],
    labels: LabelSet,
    sampling: &SamplingConfig,
) -> Result<PairDatasets> {
    assemble_pair_datasets_with(instances, labels, sampling, false)
}

fn assemble_pair_datasets_with(
    instances: &[Instance],
    labels: LabelSet,
    sampling: &SamplingConfig,
    augment_symmetric: bool,
) -> Result<PairDatasets> {
    let (node_dim, edge_dim) = check_training_instances(instances, labels)?;
    let total_edges: usize = instances.iter().map(|i| i.graph.num_edges()).sum();
    if total_edges == 0 {
        return Err(Error::InvalidParameter(
            "no edges in the training corpus".into(),
        ));
    }
    if augment_symmetric && edge_dim < 2 * node_dim {
        return Err(Error::DimensionMismatch(format!(
            "symmetric augmentation needs edge features holding two node halves \
             (edge dim {edge_dim}, node dim {node_dim})"
        )));
    }
    let pool = collect_edge_pool(instances);
    let retained = balanced_sample(&pool, sampling)?;
    let r = labels.r;
    let rows = retained.len() * if augment_symmetric { 2 } else { 1 };

    // feature rows assembled per retained edge, in pool order
    let mut flat = Vec::with_capacity(rows * edge_dim);
    let mut targets = vec![vec![0.0f64; rows]; r * r];
    let mut positives = vec![0usize; r * r];
    let mut row = 0;
    for edge in &retained {
        let inst = &instances[edge.instance];
        let phi = &inst.edge_features[edge.edge];
        flat.extend_from_slice(phi);
        let (j, k) = edge.pair;
        targets[j * r + k][row] = 1.0;
        positives[j * r + k] += 1;
        row += 1;
        if augment_symmetric {
            flat.extend(swap_halves(phi, node_dim));
            targets[k * r + j][row] = 1.0;
            positives[k * r + j] += 1;
            row += 1;
        }
    }
    Ok(PairDatasets {
        r,
        features: Arc::new(FeatureMatrix::from_flat(flat, rows, edge_dim)?),
        targets,
        positives,
    })
}

/// Node-level dataset for unary regressors: one row per retained node,
/// one indicator target vector per label.
fn assemble_unary_datasets(
    instances: &[Instance],
    labels: LabelSet,
    sampling: &SamplingConfig,
) -> Result<PairDatasets> {
    let r = labels.r;
    // (instance, node, label) triples, balanced via the edge machinery by
    // encoding the label as a same-label pair
    let mut pool = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        let y = inst.labels.as_ref().ok_or(Error::MissingLabels)?;
        for s in 0..inst.graph.num_nodes() {
            pool.push(EdgeRef {
                instance: i,
                edge: s,
                pair: (y[s], y[s]),
            });
        }
    }
    if pool.is_empty() {
        return Err(Error::InvalidParameter(
            "no nodes in the training corpus".into(),
        ));
    }
    let node_sampling = SamplingConfig {
        pair_fraction: sampling.unary_fraction,
        ..*sampling
    };
    let retained = balanced_sample(&pool, &node_sampling)?;
    let node_dim = instances[0].node_dim();
    let mut flat = Vec::with_capacity(retained.len() * node_dim);
    let mut targets = vec![vec![0.0f64; retained.len()]; r];
    let mut positives = vec![0usize; r];
    for (row, node) in retained.iter().enumerate() {
        flat.extend_from_slice(&instances[node.instance].node_features[node.edge]);
        targets[node.pair.0][row] = 1.0;
        positives[node.pair.0] += 1;
    }
    Ok(PairDatasets {
        r,
        features: Arc::new(FeatureMatrix::from_flat(flat, retained.len(), node_dim)?),
        targets,
        positives,
    })
}

/// Fits one predictor per target vector of `datasets`, sharing the Gram
/// factorization in the linear case and training pairs in parallel in the
/// boosted case. Targets with fewer than `min_count` positives fall back
/// to `constant`.
fn fit_predictors(
    datasets: &PairDatasets,
    config: &TrainConfig,
    min_count: usize,
    constant: f64,
) -> Result<Vec<PairPredictor>> {
    let features = datasets.features.as_ref();
    match config.regressor_kind {
        RegressorKind::Linear => {
            let factor = match ridge_factorize(features, config.lambda) {
                Ok(f) => f,
                Err(Error::SingularGram) => {
                    // automatic fallback: scale-aware tiny ridge
                    let d = features.num_cols() as f64;
                    let trace: f64 = (0..features.num_rows())
                        .map(|i| features.row(i).iter().map(|v| v * v).sum::<f64>())
                        .sum();
                    ridge_factorize(features, 1e-6 * trace / d)?
                }
                Err(e) => return Err(e),
            };
            datasets
                .targets
                .iter()
                .zip(&datasets.positives)
                .map(|(y, &pos)| {
                    if pos < min_count {
                        Ok(PairPredictor::Constant { value: constant })
                    } else {
                        ridge_solve(&factor, features, y)
                            .map(|m| PairPredictor::Trained(Regressor::Linear(m)))
                    }
                })
                .collect()
        }
        RegressorKind::Gbt => datasets
            .targets
            .par_iter()
            .zip(&datasets.positives)
            .map(|(y, &pos)| {
                if pos < min_count {
                    Ok(PairPredictor::Constant { value: constant })
                } else {
                    let ds =
                        RegressionDataset::from_shared(Arc::clone(&datasets.features), y.clone())?;
                    gbt_train(&ds, &config.gbt).map(|m| PairPredictor::Trained(Regressor::Tree(m)))
                }
            })
            .collect(),
    }
}

/// Trains a [`PairwiseModel`] on annotated instances.
///
/// Pairwise predictors are fitted from edge features unless `unary_only`
/// is set. Unary predictors over node features are fitted when any
/// training graph has isolated nodes, when `unary_fallback` is set, or in
/// the unary-only mode.
pub fn train_lscrf(
    instances: &[Instance],
    labels: LabelSet,
    config: &TrainConfig,
) -> Result<PairwiseModel> {
    if labels.r < 2 {
        return Err(Error::InvalidParameter(
            "pairwise training needs at least two labels".into(),
        ));
    }
    config.sampling.validate()?;
    check_training_instances(instances, labels)?;
    let total_edges: usize = instances.iter().map(|i| i.graph.num_edges()).sum();
    let has_isolated = instances
        .iter()
        .any(|i| !i.graph.isolated_nodes().is_empty());

    let pairwise_wanted = !config.unary_only && total_edges > 0;
    let mut all_constant = false;
    let pair_predictors = if pairwise_wanted {
        let datasets = assemble_pair_datasets_with(
            instances,
            labels,
            &config.sampling,
            config.augment_symmetric,
        )?;
        let preds = fit_predictors(
            &datasets,
            config,
            config.min_pair_count,
            config.rare_pair_constant,
        )?;
        all_constant = preds
            .iter()
            .all(|p| matches!(p, PairPredictor::Constant { .. }));
        Some(preds)
    } else {
        None
    };

    let unary_wanted =
        config.unary_only || config.unary_fallback || has_isolated || total_edges == 0;
    let unary_predictors = if unary_wanted {
        let datasets = assemble_unary_datasets(instances, labels, &config.sampling)?;
        // a label never observed still needs a predictor; reuse the
        // constant fallback with a threshold of one positive example
        Some(fit_predictors(
            &datasets,
            config,
            1,
            config.rare_pair_constant,
        )?)
    } else {
        None
    };

    Ok(PairwiseModel {
        label_set: labels,
        regressor_kind: config.regressor_kind,
        pair_predictors,
        unary_predictors,
        rare_pair_constant: config.rare_pair_constant,
        sampling: config.sampling,
        all_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, Labeling};
    use approx::assert_abs_diff_eq;

    fn labeled_instance(
        m: usize,
        edges: Vec<(usize, usize)>,
        edge_dim: usize,
        labels: Vec<usize>,
        rng: &mut impl Rng,
    ) -> Instance {
        let graph = Graph::new(m, edges).unwrap();
        let node_features = vec![vec![1.0]; m];
        let edge_features = (0..graph.num_edges())
            .map(|_| {
                let mut f: Vec<f64> = (0..edge_dim - 1)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                f.push(1.0);
                f
            })
            .collect();
        Instance::new(graph, node_features, edge_features, Some(Labeling(labels))).unwrap()
    }

    #[test]
    fn single_edge_indicator_targets() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(61);
        let inst = labeled_instance(2, vec![(0, 1)], 3, vec![0, 1], &mut rng);
        let labels = LabelSet::new(2).unwrap();
        let ds = assemble_pair_datasets(&[inst], labels, &SamplingConfig::default()).unwrap();
        assert_eq!(ds.targets[1], vec![1.0]);
        assert_eq!(ds.targets[0], vec![0.0]);
        assert_eq!(ds.targets[2], vec![0.0]);
        assert_eq!(ds.targets[3], vec![0.0]);
        assert_eq!(ds.positives, vec![0, 1, 0, 0]);
    }

    #[test]
    fn full_fraction_partitions_all_edges() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(62);
        let instances: Vec<Instance> = (0..10)
            .map(|_| {
                let labels = (0..4).map(|_| rng.gen_range(0..3)).collect();
                labeled_instance(4, vec![(0, 1), (1, 2), (2, 3)], 4, labels, &mut rng)
            })
            .collect();
        let labels = LabelSet::new(3).unwrap();
        let ds = assemble_pair_datasets(&instances, labels, &SamplingConfig::default()).unwrap();
        let total_edges = 30;
        assert_eq!(ds.positives.iter().sum::<usize>(), total_edges);
        assert_eq!(ds.features.num_rows(), total_edges);
        // each row is positive in exactly one dataset
        for row in 0..total_edges {
            let ones: usize = ds.targets.iter().map(|t| usize::from(t[row] == 1.0)).sum();
            assert_eq!(ones, 1);
        }
    }

    #[test]
    fn balanced_sampling_preserves_same_diff_ratio() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(63);
        // 90% same-label pairs, 10% different
        let mut pool = Vec::new();
        for i in 0..900 {
            let l = rng.gen_range(0..2);
            pool.push(EdgeRef {
                instance: i,
                edge: 0,
                pair: (l, l),
            });
        }
        for i in 0..100 {
            pool.push(EdgeRef {
                instance: 900 + i,
                edge: 0,
                pair: (0, 1),
            });
        }
        let sampling = SamplingConfig {
            pair_fraction: 0.1,
            balance: true,
            seed: 3,
            ..Default::default()
        };
        let sample = balanced_sample(&pool, &sampling).unwrap();
        let same = sample.iter().filter(|e| e.pair.0 == e.pair.1).count();
        let diff = sample.len() - same;
        assert!((same as i64 - 90).unsigned_abs() <= 1, "same {same}");
        assert!((diff as i64 - 10).unsigned_abs() <= 1, "diff {diff}");
        // within the same-label group both labels are equally represented
        let zeros = sample.iter().filter(|e| e.pair == (0, 0)).count() as i64;
        let ones = sample.iter().filter(|e| e.pair == (1, 1)).count() as i64;
        assert!((zeros - ones).abs() <= 1, "zeros {zeros} ones {ones}");
    }

    #[test]
    fn sampling_identity_and_determinism() {
        let pool: Vec<EdgeRef> = (0..50)
            .map(|i| EdgeRef {
                instance: i,
                edge: 0,
                pair: (i % 2, (i / 2) % 2),
            })
            .collect();
        let full = balanced_sample(&pool, &SamplingConfig::default()).unwrap();
        assert_eq!(full, pool);
        let sampling = SamplingConfig {
            pair_fraction: 0.3,
            balance: true,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(
            balanced_sample(&pool, &sampling).unwrap(),
            balanced_sample(&pool, &sampling).unwrap()
        );
    }

    #[test]
    fn rare_pairs_fall_back_to_constant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(64);
        // labels drawn from {0,1} only, so any pair with label 2 is unseen
        let instances: Vec<Instance> = (0..40)
            .map(|_| {
                let labels = (0..3).map(|_| rng.gen_range(0..2)).collect();
                labeled_instance(3, vec![(0, 1), (1, 2)], 3, labels, &mut rng)
            })
            .collect();
        let labels = LabelSet::new(3).unwrap();
        let config = TrainConfig {
            min_pair_count: 5,
            ..TrainConfig::default()
        };
        let model = train_lscrf(&instances, labels, &config).unwrap();
        assert!(matches!(
            model.pair_predictor(2, 2),
            Some(PairPredictor::Constant { value }) if *value == 1e-3
        ));
        assert!(matches!(
            model.pair_predictor(0, 0),
            Some(PairPredictor::Trained(_))
        ));
        assert!(!model.all_constant);
    }

    #[test]
    fn all_rare_pairs_flagged_not_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(65);
        let inst = labeled_instance(2, vec![(0, 1)], 3, vec![0, 1], &mut rng);
        let labels = LabelSet::new(2).unwrap();
        let config = TrainConfig {
            min_pair_count: 10,
            ..TrainConfig::default()
        };
        let model = train_lscrf(&[inst], labels, &config).unwrap();
        assert!(model.all_constant);
    }

    #[test]
    fn edgeless_corpus_trains_unaries_only() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(66);
        let instances: Vec<Instance> = (0..30)
            .map(|_| {
                let y = rng.gen_range(0..2usize);
                let graph = Graph::new(1, vec![]).unwrap();
                Instance::new(
                    graph,
                    vec![vec![f64::from(y as u8), 1.0]],
                    vec![],
                    Some(Labeling(vec![y])),
                )
                .unwrap()
            })
            .collect();
        let labels = LabelSet::new(2).unwrap();
        let model = train_lscrf(&instances, labels, &TrainConfig::default()).unwrap();
        assert!(model.pair_predictors.is_none());
        assert!(model.unary_predictors.is_some());
        let scores = model.unary_scores(&[1.0, 1.0]).unwrap();
        assert!(scores[1] > scores[0]);
    }

    #[test]
    fn missing_labels_is_an_error() {
        let graph = Graph::new(2, vec![(0, 1)]).unwrap();
        let inst = Instance::new(graph, vec![vec![1.0]; 2], vec![vec![1.0]], None).unwrap();
        assert!(matches!(
            train_lscrf(&[inst], LabelSet::new(2).unwrap(), &TrainConfig::default()),
            Err(Error::MissingLabels)
        ));
    }

    #[test]
    fn learned_linear_pair_functions_recover_generator() {
        // targets generated from a linear pair model; the fitted linear
        // regressors must correlate strongly with it
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(67);
        let d = 4;
        let r = 2;
        let w_true: Vec<Vec<f64>> = (0..r * r)
            .map(|_| (0..d).map(|_| rng.gen_range(-0.2..0.2)).collect())
            .collect();
        let conditional = |phi: &[f64]| -> Vec<f64> {
            let scores: Vec<f64> = w_true
                .iter()
                .map(|w| (w.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>()).exp())
                .collect();
            let z: f64 = scores.iter().sum();
            scores.into_iter().map(|s| s / z).collect()
        };
        let mut instances = Vec::new();
        for _ in 0..4000 {
            let graph = Graph::new(2, vec![(0, 1)]).unwrap();
            let mut phi: Vec<f64> = (0..d - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
            phi.push(1.0);
            let probs = conditional(&phi);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pair = r * r - 1;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pair = i;
                    break;
                }
            }
            let (j, k) = (pair / r, pair % r);
            instances.push(
                Instance::new(
                    graph,
                    vec![vec![1.0]; 2],
                    vec![phi],
                    Some(Labeling(vec![j, k])),
                )
                .unwrap(),
            );
        }
        let labels = LabelSet::new(r).unwrap();
        let config = TrainConfig {
            min_pair_count: 1,
            ..TrainConfig::default()
        };
        let model = train_lscrf(&instances, labels, &config).unwrap();
        // compare predictions against the generator's true conditionals on
        // fresh inputs
        let mut pairs = Vec::new();
        for _ in 0..500 {
            let mut phi: Vec<f64> = (0..d - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
            phi.push(1.0);
            let probs = conditional(&phi);
            let table = model.pair_table(&phi).unwrap();
            for (idx, &t) in probs.iter().enumerate() {
                pairs.push((table[idx], t));
            }
        }
        let mean_true = pairs.iter().map(|&(_, t)| t).sum::<f64>() / pairs.len() as f64;
        let sse: f64 = pairs.iter().map(|&(p, t)| (p - t) * (p - t)).sum();
        let ssd: f64 = pairs
            .iter()
            .map(|&(_, t)| (t - mean_true) * (t - mean_true))
            .sum();
        let r2 = 1.0 - sse / ssd;
        assert!(r2 >= 0.9, "R^2 {r2}");
    }

    #[test]
    fn unary_from_pairwise_sums_rows() {
        let labels = LabelSet::new(2).unwrap();
        let values = [0.5, 0.3, 0.1, 0.1];
        let model = PairwiseModel {
            label_set: labels,
            regressor_kind: RegressorKind::Linear,
            pair_predictors: Some(
                values
                    .iter()
                    .map(|&v| PairPredictor::Constant { value: v })
                    .collect(),
            ),
            unary_predictors: None,
            rare_pair_constant: 1e-3,
            sampling: SamplingConfig::default(),
            all_constant: true,
        };
        let s = unary_from_pairwise(&model, &[0.0], EdgeSide::S).unwrap();
        assert_abs_diff_eq!(s[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], 0.2, epsilon = 1e-12);
        let t = unary_from_pairwise(&model, &[0.0], EdgeSide::T).unwrap();
        assert_abs_diff_eq!(t[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(t[1], 0.4, epsilon = 1e-12);
        // both sides sum to the table total
        let total: f64 = values.iter().sum();
        assert_abs_diff_eq!(s.iter().sum::<f64>(), total, epsilon = 1e-12);
        assert_abs_diff_eq!(t.iter().sum::<f64>(), total, epsilon = 1e-12);
    }

    #[test]
    fn uniform_constant_model_marginalizes_uniformly() {
        let labels = LabelSet::new(3).unwrap();
        let model = PairwiseModel {
            label_set: labels,
            regressor_kind: RegressorKind::Linear,
            pair_predictors: Some(vec![PairPredictor::Constant { value: 1.0 / 9.0 }; 9]),
            unary_predictors: None,
            rare_pair_constant: 1e-3,
            sampling: SamplingConfig::default(),
            all_constant: true,
        };
        for side in [EdgeSide::S, EdgeSide::T] {
            for v in unary_from_pairwise(&model, &[0.0], side).unwrap() {
                assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_augmentation_swaps_features_and_targets() {
        // edge features [phi_s, phi_t, 1] with node_dim 2
        let graph = Graph::new(2, vec![(0, 1)]).unwrap();
        let inst = Instance::new(
            graph,
            vec![vec![0.1, 0.2], vec![0.3, 0.4]],
            vec![vec![0.1, 0.2, 0.3, 0.4, 1.0]],
            Some(Labeling(vec![0, 1])),
        )
        .unwrap();
        let labels = LabelSet::new(2).unwrap();
        let ds =
            assemble_pair_datasets_with(&[inst.clone()], labels, &SamplingConfig::default(), true)
                .unwrap();
        assert_eq!(ds.features.num_rows(), 2);
        assert_eq!(ds.features.row(0), &[0.1, 0.2, 0.3, 0.4, 1.0]);
        assert_eq!(ds.features.row(1), &[0.3, 0.4, 0.1, 0.2, 1.0]);
        // original row is positive for (0,1), swapped row for (1,0)
        assert_eq!(ds.targets[1], vec![1.0, 0.0]);
        assert_eq!(ds.targets[2], vec![0.0, 1.0]);
        assert_eq!(ds.positives, vec![0, 1, 1, 0]);

        // too-narrow edge features are rejected when the flag is on
        let narrow = Instance::new(
            Graph::new(2, vec![(0, 1)]).unwrap(),
            vec![vec![0.1, 0.2]; 2],
            vec![vec![1.0, 2.0]],
            Some(Labeling(vec![0, 1])),
        )
        .unwrap();
        assert!(
            assemble_pair_datasets_with(&[narrow], labels, &SamplingConfig::default(), true)
                .is_err()
        );
    }

    #[test]
    fn gbt_predictions_approach_conditional_pair_frequencies() {
        // replicated-feature design: a handful of distinct edge feature
        // vectors, each repeated many times with pairs drawn from its own
        // conditional; the boosted regressors must reproduce the empirical
        // frequency of each feature vector
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(69);
        let r = 2;
        let distinct: Vec<Vec<f64>> = (0..6)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0])
            .collect();
        let conditionals: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                let raw: Vec<f64> = (0..r * r).map(|_| rng.gen_range(0.05..1.0)).collect();
                let z: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / z).collect()
            })
            .collect();
        let mut instances = Vec::new();
        let mut counts = vec![vec![0usize; r * r]; 6];
        for _ in 0..6000 {
            let which = rng.gen_range(0..6);
            let probs = &conditionals[which];
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pair = r * r - 1;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pair = i;
                    break;
                }
            }
            counts[which][pair] += 1;
            let graph = Graph::new(2, vec![(0, 1)]).unwrap();
            instances.push(
                Instance::new(
                    graph,
                    vec![vec![1.0]; 2],
                    vec![distinct[which].clone()],
                    Some(Labeling(vec![pair / r, pair % r])),
                )
                .unwrap(),
            );
        }
        let config = TrainConfig {
            regressor_kind: RegressorKind::Gbt,
            gbt: GbtParams {
                n_trees: 200,
                depth: 3,
                learning_rate: 0.25,
                seed: 0,
            },
            min_pair_count: 1,
            ..TrainConfig::default()
        };
        let model = train_lscrf(&instances, LabelSet::new(r).unwrap(), &config).unwrap();
        let mut mse = 0.0;
        let mut terms = 0.0;
        for (which, phi) in distinct.iter().enumerate() {
            let total: usize = counts[which].iter().sum();
            let table = model.pair_table(phi).unwrap();
            for jk in 0..r * r {
                let freq = counts[which][jk] as f64 / total as f64;
                mse += (table[jk] - freq).powi(2);
                terms += 1.0;
            }
        }
        mse /= terms;
        assert!(mse < 1e-3, "held-out frequency MSE {mse}");
    }

    #[test]
    fn pair_training_is_schedule_independent() {
        // training twice (rayon may schedule pair fits differently) gives
        // identical models
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(68);
        let instances: Vec<Instance> = (0..50)
            .map(|_| {
                let labels = (0..3).map(|_| rng.gen_range(0..2)).collect();
                labeled_instance(3, vec![(0, 1), (1, 2)], 4, labels, &mut rng)
            })
            .collect();
        let labels = LabelSet::new(2).unwrap();
        let config = TrainConfig {
            regressor_kind: RegressorKind::Gbt,
            gbt: GbtParams {
                n_trees: 10,
                depth: 2,
                learning_rate: 0.2,
                seed: 0,
            },
            min_pair_count: 1,
            ..TrainConfig::default()
        };
        let a = train_lscrf(&instances, labels, &config).unwrap();
        let b = train_lscrf(&instances, labels, &config).unwrap();
        assert_eq!(a, b);
    }
}
