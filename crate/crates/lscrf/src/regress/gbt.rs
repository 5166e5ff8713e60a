//! Gradient-boosted oblivious regression trees.
//!
//! Every level of an oblivious tree applies the same split predicate to all
//! of its nodes, so a depth-`d` tree is a lookup table with `2^d` leaves and
//! evaluates in `O(d)`. Boosting is stagewise least squares: each tree fits
//! the current residuals, split search is exhaustive over 32-quantile
//! thresholds per feature with squared-error gain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RegressionDataset;
use crate::error::{Error, Result};

const QUANTILE_BINS: usize = 32;
const MIN_GAIN: f64 = 1e-12;

/// Boosting hyperparameters.
///
/// `seed` is accepted for interface stability (and reserved for future
/// subsampling); the exhaustive trainer itself is deterministic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_trees: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_trees: 500,
            depth: 6,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

/// One shared split: examples with `phi[feature] > threshold` go right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObliviousLevel {
    pub feature: usize,
    pub threshold: f64,
}

/// A single oblivious tree: shared splits per level plus `2^levels` leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObliviousTree {
    pub levels: Vec<ObliviousLevel>,
    pub leaf_values: Vec<f64>,
}

impl ObliviousTree {
    fn leaf_index(&self, phi: &[f64]) -> usize {
        let mut idx = 0usize;
        for level in &self.levels {
            idx = 2 * idx + usize::from(phi[level.feature] > level.threshold);
        }
        idx
    }
}

/// Stagewise sum of oblivious trees around a constant base score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub trees: Vec<ObliviousTree>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub depth: usize,
    pub n_features: usize,
}

impl TreeEnsemble {
    pub fn predict(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.n_features {
            return Err(Error::DimensionMismatch(format!(
                "feature vector of dim {} for ensemble over {} features",
                phi.len(),
                self.n_features
            )));
        }
        let mut p = self.base_score;
        for tree in &self.trees {
            p += self.learning_rate * tree.leaf_values[tree.leaf_index(phi)];
        }
        Ok(p)
    }
}

/// Interior weighted-quantile cut points of one feature column,
/// deduplicated. With unit weights this is plain index-based quantiles;
/// with integer weights it matches duplicating each example weight-many
/// times.
fn quantile_cuts(column: &mut [(f64, f64)]) -> Vec<f64> {
    column.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = column.iter().map(|&(_, w)| w).sum();
    let max_value = column.last().expect("non-empty column").0;
    let mut cuts = Vec::with_capacity(QUANTILE_BINS - 1);
    let mut idx = 0usize;
    let mut cum = column[0].1;
    for q in 1..QUANTILE_BINS {
        let target = (q as f64 * total / QUANTILE_BINS as f64).floor();
        while cum <= target && idx + 1 < column.len() {
            idx += 1;
            cum += column[idx].1;
        }
        let v = column[idx].0;
        if cuts.last() != Some(&v) {
            cuts.push(v);
        }
    }
    // a cut equal to the maximum splits nothing
    while cuts.last() == Some(&max_value) {
        cuts.pop();
    }
    cuts
}

struct SplitChoice {
    gain: f64,
    feature: usize,
    boundary: usize,
}

/// Best shared boundary for one feature, given the current group of every
/// example. Sums and counts are weighted; the histogram is indexed
/// `group * (cuts + 1) + bin`.
fn best_boundary_for_feature(
    bins: &[u8],
    n_cuts: usize,
    groups: &[usize],
    residuals: &[f64],
    weights: Option<&[f64]>,
    n_groups: usize,
) -> Option<(f64, usize)> {
    if n_cuts == 0 {
        return None;
    }
    let width = n_cuts + 1;
    let mut sum = vec![0.0f64; n_groups * width];
    let mut cnt = vec![0.0f64; n_groups * width];
    for (i, ((&b, &g), &r)) in bins.iter().zip(groups).zip(residuals).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let idx = g * width + b as usize;
        sum[idx] += w * r;
        cnt[idx] += w;
    }
    // per-group totals
    let mut total_sum = vec![0.0f64; n_groups];
    let mut total_cnt = vec![0.0f64; n_groups];
    for g in 0..n_groups {
        for b in 0..width {
            total_sum[g] += sum[g * width + b];
            total_cnt[g] += cnt[g * width + b];
        }
    }
    let mut best: Option<(f64, usize)> = None;
    let mut left_sum = vec![0.0f64; n_groups];
    let mut left_cnt = vec![0.0f64; n_groups];
    for q in 1..=n_cuts {
        for g in 0..n_groups {
            left_sum[g] += sum[g * width + (q - 1)];
            left_cnt[g] += cnt[g * width + (q - 1)];
        }
        let mut gain = 0.0;
        for g in 0..n_groups {
            if total_cnt[g] <= 0.0 {
                continue;
            }
            let parent = total_sum[g] * total_sum[g] / total_cnt[g];
            let (ls, lc) = (left_sum[g], left_cnt[g]);
            let (rs, rc) = (total_sum[g] - ls, total_cnt[g] - lc);
            let score = if lc <= 0.0 || rc <= 0.0 {
                parent
            } else {
                ls * ls / lc + rs * rs / rc
            };
            gain += score - parent;
        }
        if best.map_or(true, |(g, _)| gain > g) {
            best = Some((gain, q));
        }
    }
    best
}

/// Trains a boosted ensemble of oblivious trees by stagewise least squares.
///
/// Training MSE is non-increasing in the number of trees; a dataset with no
/// usable split (for example constant features) yields an ensemble that
/// predicts the base score only.
pub fn gbt_train(dataset: &RegressionDataset, params: &GbtParams) -> Result<TreeEnsemble> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "boosting needs at least two examples".into(),
        ));
    }
    if params.depth == 0 {
        return Err(Error::InvalidParameter("depth must be >= 1".into()));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::InvalidParameter(
            "learning rate must be in (0, 1]".into(),
        ));
    }
    let d = dataset.dim();
    let features = dataset.features.as_ref();

    // per-feature quantile cuts and per-example bin indices, computed once
    let per_feature: Vec<(Vec<f64>, Vec<u8>)> = (0..d)
        .into_par_iter()
        .map(|f| {
            let mut column: Vec<(f64, f64)> = (0..n)
                .map(|i| (features.row(i)[f], dataset.weight(i)))
                .collect();
            let cuts = quantile_cuts(&mut column);
            let bins: Vec<u8> = (0..n)
                .map(|i| {
                    let x = features.row(i)[f];
                    cuts.iter().filter(|&&c| x > c).count() as u8
                })
                .collect();
            (cuts, bins)
        })
        .collect();

    let weights = dataset.weights.as_deref();
    let total_weight: f64 = (0..n).map(|i| dataset.weight(i)).sum();
    let base_score = (0..n)
        .map(|i| dataset.weight(i) * dataset.targets[i])
        .sum::<f64>()
        / total_weight;
    let mut residuals: Vec<f64> = dataset.targets.iter().map(|&t| t - base_score).collect();
    let mut trees = Vec::new();

    for _ in 0..params.n_trees {
        let mut groups = vec![0usize; n];
        let mut levels = Vec::with_capacity(params.depth);
        for level in 0..params.depth {
            let n_groups = 1usize << level;
            let choice = (0..d)
                .into_par_iter()
                .filter_map(|f| {
                    let (cuts, bins) = &per_feature[f];
                    best_boundary_for_feature(
                        bins,
                        cuts.len(),
                        &groups,
                        &residuals,
                        weights,
                        n_groups,
                    )
                    .map(|(gain, boundary)| SplitChoice {
                        gain,
                        feature: f,
                        boundary,
                    })
                })
                .collect::<Vec<_>>()
                .into_iter()
                // lowest feature index wins ties, so reduce in order
                .fold(None::<SplitChoice>, |acc, c| match acc {
                    Some(best) if best.gain >= c.gain => Some(best),
                    _ => Some(c),
                });
            let Some(choice) = choice else { break };
            if choice.gain <= MIN_GAIN {
                break;
            }
            let (cuts, bins) = &per_feature[choice.feature];
            let threshold = cuts[choice.boundary - 1];
            for (g, &b) in groups.iter_mut().zip(bins) {
                *g = 2 * *g + usize::from(b as usize >= choice.boundary);
            }
            levels.push(ObliviousLevel {
                feature: choice.feature,
                threshold,
            });
        }
        if levels.is_empty() {
            // no usable split anywhere; further trees would be zero too
            break;
        }
        let n_leaves = 1usize << levels.len();
        let mut sums = vec![0.0f64; n_leaves];
        let mut counts = vec![0.0f64; n_leaves];
        for (i, (&g, &r)) in groups.iter().zip(&residuals).enumerate() {
            let w = dataset.weight(i);
            sums[g] += w * r;
            counts[g] += w;
        }
        let leaf_values: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| if c <= 0.0 { 0.0 } else { s / c })
            .collect();
        for (r, &g) in residuals.iter_mut().zip(&groups) {
            *r -= params.learning_rate * leaf_values[g];
        }
        trees.push(ObliviousTree {
            levels,
            leaf_values,
        });
    }

    Ok(TreeEnsemble {
        trees,
        learning_rate: params.learning_rate,
        base_score,
        depth: params.depth,
        n_features: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::{ridge_factorize, ridge_solve, training_mse, Regressor};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;

    #[test]
    fn constant_target_is_base_score_only() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![f64::from(i)]).collect();
        let dataset = RegressionDataset::new(rows, vec![0.4; 10]).unwrap();
        let model = gbt_train(&dataset, &GbtParams::default()).unwrap();
        assert_abs_diff_eq!(model.base_score, 0.4, epsilon = 1e-12);
        for tree in &model.trees {
            assert!(tree.leaf_values.iter().all(|&v| v.abs() < 1e-12));
        }
        assert_abs_diff_eq!(model.predict(&[3.0]).unwrap(), 0.4, epsilon = 1e-9);
    }

    #[test]
    fn constant_features_yield_base_score_not_error() {
        let rows: Vec<Vec<f64>> = (0..8).map(|_| vec![1.0, 1.0]).collect();
        let targets: Vec<f64> = (0..8).map(|i| f64::from(i) / 8.0).collect();
        let dataset = RegressionDataset::new(rows, targets.clone()).unwrap();
        let model = gbt_train(&dataset, &GbtParams::default()).unwrap();
        assert!(model.trees.is_empty());
        let mean = targets.iter().sum::<f64>() / 8.0;
        assert_abs_diff_eq!(model.predict(&[1.0, 1.0]).unwrap(), mean, epsilon = 1e-12);
    }

    #[test]
    fn step_function_is_learned_by_depth_one_trees() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![f64::from(i) / 100.0]).collect();
        let targets: Vec<f64> = (0..100)
            .map(|i| if f64::from(i) / 100.0 > 0.5 { 1.0 } else { 0.0 })
            .collect();
        let dataset = RegressionDataset::new(rows, targets).unwrap();
        let params = GbtParams {
            n_trees: 200,
            depth: 1,
            learning_rate: 0.3,
            seed: 0,
        };
        let model = gbt_train(&dataset, &params).unwrap();
        let mse = training_mse(&Regressor::Tree(model), &dataset).unwrap();
        assert!(mse < 1e-4, "mse {mse}");
    }

    #[test]
    fn xor_pattern_beats_linear_model() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(51);
        let n = 400;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0])
            .collect();
        let targets: Vec<f64> = rows
            .iter()
            .map(|r| if r[0] * r[1] > 0.0 { 1.0 } else { 0.0 })
            .collect();
        let dataset = RegressionDataset::new(rows, targets.clone()).unwrap();
        let gbt = gbt_train(
            &dataset,
            &GbtParams {
                n_trees: 120,
                depth: 3,
                learning_rate: 0.3,
                seed: 0,
            },
        )
        .unwrap();
        let linear = ridge_solve(
            &ridge_factorize(&dataset.features, 1e-6).unwrap(),
            &dataset.features,
            &dataset.targets,
        )
        .unwrap();
        let gbt_mse = training_mse(&Regressor::Tree(gbt), &dataset).unwrap();
        let lin_mse = training_mse(&Regressor::Linear(linear), &dataset).unwrap();
        assert!(
            gbt_mse < lin_mse,
            "gbt {gbt_mse} should beat linear {lin_mse}"
        );
        assert!(gbt_mse < 0.05);
    }

    #[test]
    fn training_mse_is_non_increasing_in_tree_count() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(52);
        let n = 300;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<f64> = rows
            .iter()
            .map(|r| ((r[0] - r[1] * r[2]).tanh() + 1.0) / 2.0)
            .collect();
        let dataset = RegressionDataset::new(rows, targets).unwrap();
        let full = gbt_train(
            &dataset,
            &GbtParams {
                n_trees: 60,
                depth: 3,
                learning_rate: 0.2,
                seed: 0,
            },
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=full.trees.len() {
            let partial = TreeEnsemble {
                trees: full.trees[..k].to_vec(),
                ..full.clone()
            };
            let mse = training_mse(&Regressor::Tree(partial), &dataset).unwrap();
            assert!(mse <= prev + 1e-12, "mse rose at {k}: {prev} -> {mse}");
            prev = mse;
        }
    }

    #[test]
    fn identical_seeds_give_identical_models() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(53);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
        let dataset = RegressionDataset::new(rows, targets).unwrap();
        let params = GbtParams {
            n_trees: 20,
            depth: 2,
            learning_rate: 0.1,
            seed: 7,
        };
        let a = gbt_train(&dataset, &params).unwrap();
        let b = gbt_train(&dataset, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prediction_matches_manual_traversal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(54);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<f64> = rows.iter().map(|r| (r[0] + 1.0) / 2.0).collect();
        let dataset = RegressionDataset::new(rows.clone(), targets).unwrap();
        let model = gbt_train(
            &dataset,
            &GbtParams {
                n_trees: 15,
                depth: 3,
                learning_rate: 0.2,
                seed: 0,
            },
        )
        .unwrap();
        for row in rows.iter().take(20) {
            // independent traversal
            let mut expect = model.base_score;
            for tree in &model.trees {
                let mut idx = 0usize;
                for level in &tree.levels {
                    idx *= 2;
                    if row[level.feature] > level.threshold {
                        idx += 1;
                    }
                }
                expect += model.learning_rate * tree.leaf_values[idx];
            }
            assert_abs_diff_eq!(model.predict(row).unwrap(), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn ensemble_of_zero_trees_predicts_base_score() {
        let model = TreeEnsemble {
            trees: vec![],
            learning_rate: 0.1,
            base_score: 0.3,
            depth: 6,
            n_features: 2,
        };
        assert_eq!(model.predict(&[5.0, -1.0]).unwrap(), 0.3);
        assert!(model.predict(&[5.0]).is_err());
    }
}
