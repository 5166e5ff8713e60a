//! Linear least-squares regression: the closed form
//! `w = (X'X + λI)^{-1} X'y` behind a reusable Cholesky factor, plus
//! conjugate-gradient and stochastic-gradient solvers for the same
//! objective `λ‖w‖² + Σ_i (⟨w, φ_i⟩ - y_i)²`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, RegressionDataset};
use crate::error::{Error, Result};

/// Rows per parallel work unit. Fixed so that chunked reductions are
/// bit-identical for any thread count.
const CHUNK: usize = 4096;

/// Linear regressor; any bias term is an explicit constant-one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.w.len() {
            return Err(Error::DimensionMismatch(format!(
                "feature vector of dim {} for model of dim {}",
                phi.len(),
                self.w.len()
            )));
        }
        Ok(self.w.iter().zip(phi).map(|(a, b)| a * b).sum())
    }
}

/// Cholesky factorization of the regularized Gram matrix `X'X + λI`,
/// reusable across many target vectors.
pub struct RidgeFactor {
    chol: Cholesky<f64, Dyn>,
    gram: DMatrix<f64>,
    pub lambda: f64,
    pub dim: usize,
}

impl RidgeFactor {
    /// Lower-triangular factor `L` with `L L' = X'X + λI`.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// The factored matrix itself.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(rhs);
        self.chol.solve(&b).as_slice().to_vec()
    }
}

/// `X'WX` accumulated over fixed-size row chunks; the chunk partials are
/// combined in order, so the result does not depend on the thread count.
/// `W` is the identity when `weights` is `None`.
fn gram_matrix(features: &FeatureMatrix, weights: Option<&[f64]>) -> DMatrix<f64> {
    let d = features.num_cols();
    let n = features.num_rows();
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            // lower triangle, row-major
            let mut acc = vec![0.0f64; d * (d + 1) / 2];
            for i in lo..hi {
                let row = features.row(i);
                let w = weights.map_or(1.0, |w| w[i]);
                let mut idx = 0;
                for a in 0..d {
                    let ra = w * row[a];
                    for b in 0..=a {
                        acc[idx] += ra * row[b];
                        idx += 1;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0f64; d * (d + 1) / 2];
    for chunk in &chunks {
        for (t, v) in total.iter_mut().zip(chunk) {
            *t += v;
        }
    }
    let mut gram = DMatrix::zeros(d, d);
    let mut idx = 0;
    for a in 0..d {
        for b in 0..=a {
            gram[(a, b)] = total[idx];
            gram[(b, a)] = total[idx];
            idx += 1;
        }
    }
    gram
}

/// `X'Wy`, chunk-ordered like [`gram_matrix`].
fn xty(features: &FeatureMatrix, weights: Option<&[f64]>, targets: &[f64]) -> Vec<f64> {
    let d = features.num_cols();
    let n = features.num_rows();
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut acc = vec![0.0f64; d];
            for i in lo..hi {
                let row = features.row(i);
                let y = targets[i] * weights.map_or(1.0, |w| w[i]);
                for (slot, &x) in acc.iter_mut().zip(row) {
                    *slot += x * y;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0f64; d];
    for chunk in &chunks {
        for (t, v) in total.iter_mut().zip(chunk) {
            *t += v;
        }
    }
    total
}

/// Factorizes `X'X + λI`. With `λ = 0` a singular Gram matrix is an error,
/// signalling the caller to add regularization.
pub fn ridge_factorize(features: &FeatureMatrix, lambda: f64) -> Result<RidgeFactor> {
    ridge_factorize_weighted(features, None, lambda)
}

/// Weighted variant of [`ridge_factorize`]: factorizes `X'WX + λI`.
pub fn ridge_factorize_weighted(
    features: &FeatureMatrix,
    weights: Option<&[f64]>,
    lambda: f64,
) -> Result<RidgeFactor> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidParameter("lambda must be >= 0".into()));
    }
    if let Some(w) = weights {
        if w.len() != features.num_rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} rows",
                w.len(),
                features.num_rows()
            )));
        }
    }
    let d = features.num_cols();
    let mut gram = gram_matrix(features, weights);
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    match Cholesky::new(gram.clone()) {
        Some(chol) => Ok(RidgeFactor {
            chol,
            gram,
            lambda,
            dim: d,
        }),
        None => Err(Error::SingularGram),
    }
}

/// Solves for `w = (X'X + λI)^{-1} X'y` reusing a precomputed factor.
pub fn ridge_solve(
    factor: &RidgeFactor,
    features: &FeatureMatrix,
    targets: &[f64],
) -> Result<LinearModel> {
    ridge_solve_weighted(factor, features, None, targets)
}

/// Weighted variant of [`ridge_solve`]; the factor must come from
/// [`ridge_factorize_weighted`] with the same weights.
pub fn ridge_solve_weighted(
    factor: &RidgeFactor,
    features: &FeatureMatrix,
    weights: Option<&[f64]>,
    targets: &[f64],
) -> Result<LinearModel> {
    if features.num_cols() != factor.dim {
        return Err(Error::DimensionMismatch(format!(
            "features of dim {} for factor of dim {}",
            features.num_cols(),
            factor.dim
        )));
    }
    if targets.len() != features.num_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} rows",
            targets.len(),
            features.num_rows()
        )));
    }
    let rhs = xty(features, weights, targets);
    Ok(LinearModel {
        w: factor.solve(&rhs),
    })
}

/// Iterative solver selection for [`ridge_iterative`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterativeMethod {
    ConjugateGradient,
    Sgd,
}

/// Iterative solve outcome; `residual` is the relative normal-equation
/// residual `‖X'y - (X'X+λI)w‖ / ‖X'y‖`.
#[derive(Debug, Clone)]
pub struct IterativeFit {
    pub model: LinearModel,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn matvec(features: &FeatureMatrix, weights: Option<&[f64]>, lambda: f64, v: &[f64]) -> Vec<f64> {
    let n = features.num_rows();
    let xv: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            features
                .row(i)
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .collect();
    let mut out = xty(features, weights, &xv);
    for (o, &vi) in out.iter_mut().zip(v) {
        *o += lambda * vi;
    }
    out
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_residual(
    features: &FeatureMatrix,
    weights: Option<&[f64]>,
    lambda: f64,
    w: &[f64],
    b: &[f64],
) -> f64 {
    let aw = matvec(features, weights, lambda, w);
    let r: Vec<f64> = b.iter().zip(&aw).map(|(bi, ai)| bi - ai).collect();
    let bn = norm2(b);
    if bn == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / bn
    }
}

/// Minimizes the ridge objective iteratively. Conjugate gradients run on
/// the normal equations without forming the Gram matrix; SGD does a fixed
/// number of shuffled passes with step `0.5 / max_i ‖φ_i‖²`.
///
/// Never fails on non-convergence: the achieved residual is reported in
/// the returned [`IterativeFit`].
pub fn ridge_iterative(
    dataset: &RegressionDataset,
    lambda: f64,
    method: IterativeMethod,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<IterativeFit> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidParameter("lambda must be >= 0".into()));
    }
    let features = dataset.features.as_ref();
    let weights = dataset.weights.as_deref();
    let d = features.num_cols();
    let b = xty(features, weights, &dataset.targets);
    let mut w = vec![0.0f64; d];
    match method {
        IterativeMethod::ConjugateGradient => {
            let mut r = b.clone();
            let mut p = r.clone();
            let mut rs_old: f64 = r.iter().map(|x| x * x).sum();
            let b_norm = norm2(&b).max(f64::MIN_POSITIVE);
            let mut iterations = 0;
            while iterations < max_iter && rs_old.sqrt() > tol * b_norm {
                let ap = matvec(features, weights, lambda, &p);
                let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
                if pap.abs() < 1e-300 {
                    break;
                }
                let alpha = rs_old / pap;
                for i in 0..d {
                    w[i] += alpha * p[i];
                    r[i] -= alpha * ap[i];
                }
                let rs_new: f64 = r.iter().map(|x| x * x).sum();
                let beta = rs_new / rs_old;
                for i in 0..d {
                    p[i] = r[i] + beta * p[i];
                }
                rs_old = rs_new;
                iterations += 1;
            }
            let residual = relative_residual(features, weights, lambda, &w, &b);
            Ok(IterativeFit {
                model: LinearModel { w },
                residual,
                iterations,
                converged: residual <= tol,
            })
        }
        IterativeMethod::Sgd => {
            let n = features.num_rows();
            let max_sq = (0..n)
                .map(|i| dataset.weight(i) * features.row(i).iter().map(|x| x * x).sum::<f64>())
                .fold(0.0f64, f64::max)
                .max(f64::MIN_POSITIVE);
            let step = 0.5 / max_sq;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..n).collect();
            // constant-step SGD hovers in a noise ball around the optimum;
            // returning the average of the visited iterates removes most of
            // that variance (Polyak averaging)
            let mut avg = vec![0.0f64; d];
            let mut averaged_steps = 0u64;
            let mut passes = 0;
            while passes < max_iter {
                order.shuffle(&mut rng);
                for &i in &order {
                    let row = features.row(i);
                    let pred: f64 = w.iter().zip(row).map(|(a, b)| a * b).sum();
                    let g = 2.0 * dataset.weight(i) * (pred - dataset.targets[i]);
                    let reg = 2.0 * lambda / n as f64;
                    for (wj, &xj) in w.iter_mut().zip(row) {
                        *wj -= step * (g * xj + reg * *wj);
                    }
                    averaged_steps += 1;
                    let k = averaged_steps as f64;
                    for (aj, &wj) in avg.iter_mut().zip(w.iter()) {
                        *aj += (wj - *aj) / k;
                    }
                }
                passes += 1;
            }
            if averaged_steps > 0 {
                w = avg;
            }
            let residual = relative_residual(features, weights, lambda, &w, &b);
            Ok(IterativeFit {
                model: LinearModel { w },
                residual,
                iterations: passes,
                converged: residual <= tol,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_matrix(n: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn identity_features_reproduce_targets() {
        let d = 4;
        let rows: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        let x = FeatureMatrix::from_rows(rows).unwrap();
        let factor = ridge_factorize(&x, 0.0).unwrap();
        let y = vec![0.1, 0.9, 0.4, 0.7];
        let model = ridge_solve(&factor, &x, &y).unwrap();
        for (wi, yi) in model.w.iter().zip(&y) {
            assert_abs_diff_eq!(wi, yi, epsilon = 1e-12);
        }
        // factor of the identity is the identity
        let l = factor.lower();
        for i in 0..d {
            for j in 0..d {
                assert_abs_diff_eq!(l[(i, j)], f64::from(u8::from(i == j)), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn huge_lambda_shrinks_towards_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let x = FeatureMatrix::from_rows(random_matrix(30, 5, &mut rng)).unwrap();
        let y: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
        let factor = ridge_factorize(&x, 1e12).unwrap();
        let model = ridge_solve(&factor, &x, &y).unwrap();
        assert!(norm2(&model.w) < 1e-9);
    }

    #[test]
    fn closed_form_matches_direct_inverse() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let (n, d) = (60, 20);
        let rows = random_matrix(n, d, &mut rng);
        let x = FeatureMatrix::from_rows(rows.clone()).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let factor = ridge_factorize(&x, 0.1).unwrap();
        let model = ridge_solve(&factor, &x, &y).unwrap();

        // direct formula with an explicit inverse
        let xm = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let gram = xm.transpose() * &xm + DMatrix::identity(d, d) * 0.1;
        let rhs = xm.transpose() * DVector::from_column_slice(&y);
        let w_direct = gram.clone().try_inverse().unwrap() * rhs;
        for i in 0..d {
            assert_abs_diff_eq!(model.w[i], w_direct[i], epsilon = 1e-8);
        }
        // factor reconstructs the Gram matrix
        let l = factor.lower();
        let rebuilt = &l * l.transpose();
        let denom = gram.norm();
        assert!((rebuilt - &gram).norm() / denom < 1e-8);
    }

    #[test]
    fn singular_gram_at_zero_lambda_is_an_error() {
        // duplicated column makes X'X singular
        let rows = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![0.5, 0.5]];
        let x = FeatureMatrix::from_rows(rows).unwrap();
        assert!(matches!(ridge_factorize(&x, 0.0), Err(Error::SingularGram)));
        assert!(ridge_factorize(&x, 1e-6).is_ok());
    }

    #[test]
    fn duplicated_dataset_gives_same_weights() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        let rows = random_matrix(25, 6, &mut rng);
        let y: Vec<f64> = (0..25).map(|_| rng.gen()).collect();
        let x1 = FeatureMatrix::from_rows(rows.clone()).unwrap();
        let w1 = ridge_solve(&ridge_factorize(&x1, 0.0).unwrap(), &x1, &y).unwrap();
        let mut rows2 = rows.clone();
        rows2.extend(rows);
        let mut y2 = y.clone();
        y2.extend(y);
        let x2 = FeatureMatrix::from_rows(rows2).unwrap();
        let w2 = ridge_solve(&ridge_factorize(&x2, 0.0).unwrap(), &x2, &y2).unwrap();
        for (a, b) in w1.w.iter().zip(&w2.w) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn closed_form_minimizes_objective_against_perturbations() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        let (n, d) = (120, 50);
        let rows = random_matrix(n, d, &mut rng);
        let y: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let x = FeatureMatrix::from_rows(rows).unwrap();
        let lambda = 0.05;
        let model = ridge_solve(&ridge_factorize(&x, lambda).unwrap(), &x, &y).unwrap();
        let objective = |w: &[f64]| -> f64 {
            let mut obj = lambda * w.iter().map(|v| v * v).sum::<f64>();
            for i in 0..n {
                let p: f64 = x.row(i).iter().zip(w).map(|(a, b)| a * b).sum();
                obj += (p - y[i]).powi(2);
            }
            obj
        };
        let base = objective(&model.w);
        for _ in 0..1000 {
            let mut delta: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = 1e-3 / norm2(&delta);
            for v in delta.iter_mut() {
                *v *= s;
            }
            let perturbed: Vec<f64> = model.w.iter().zip(&delta).map(|(a, b)| a + b).collect();
            assert!(objective(&perturbed) >= base - 1e-12);
        }
    }

    #[test]
    fn cg_recovers_representable_target() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(45);
        let (n, d) = (80, 12);
        let rows = random_matrix(n, d, &mut rng);
        let w_star: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|row| {
                let v: f64 = row.iter().zip(&w_star).map(|(a, b)| a * b).sum();
                v.clamp(0.0, 1.0)
            })
            .collect();
        // keep only strictly representable rows
        let keep: Vec<bool> = rows
            .iter()
            .map(|row| {
                let v: f64 = row.iter().zip(&w_star).map(|(a, b)| a * b).sum();
                (0.0..=1.0).contains(&v)
            })
            .collect();
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(r, _)| r)
            .collect();
        let y: Vec<f64> = y
            .into_iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(v, _)| v)
            .collect();
        let dataset = RegressionDataset::new(rows, y).unwrap();
        let fit = ridge_iterative(
            &dataset,
            0.0,
            IterativeMethod::ConjugateGradient,
            1e-12,
            200,
            0,
        )
        .unwrap();
        for (a, b) in fit.model.w.iter().zip(&w_star) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
        assert!(fit.converged);
    }

    #[test]
    fn cg_matches_closed_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(46);
        let (n, d) = (220, 100);
        let rows = random_matrix(n, d, &mut rng);
        let y: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let dataset = RegressionDataset::new(rows, y.clone()).unwrap();
        let cf = ridge_solve(
            &ridge_factorize(&dataset.features, 0.1).unwrap(),
            &dataset.features,
            &y,
        )
        .unwrap();
        let cg = ridge_iterative(
            &dataset,
            0.1,
            IterativeMethod::ConjugateGradient,
            1e-12,
            2000,
            0,
        )
        .unwrap();
        let max_diff =
            cf.w.iter()
                .zip(&cg.model.w)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
        assert!(max_diff <= 1e-5, "max diff {max_diff}");
    }

    #[test]
    fn zero_iterations_returns_zero_vector_with_residual() {
        let dataset =
            RegressionDataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.25]).unwrap();
        for method in [IterativeMethod::ConjugateGradient, IterativeMethod::Sgd] {
            let fit = ridge_iterative(&dataset, 0.0, method, 1e-8, 0, 0).unwrap();
            assert!(fit.model.w.iter().all(|&w| w == 0.0));
            assert!(fit.residual > 0.0);
            assert!(!fit.converged);
            assert_eq!(fit.iterations, 0);
        }
    }

    #[test]
    fn sgd_improves_objective_and_is_seed_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(47);
        let (n, d) = (200, 8);
        let rows = random_matrix(n, d, &mut rng);
        let y: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let dataset = RegressionDataset::new(rows, y).unwrap();
        let fit1 = ridge_iterative(&dataset, 0.01, IterativeMethod::Sgd, 1e-3, 5, 11).unwrap();
        let fit2 = ridge_iterative(&dataset, 0.01, IterativeMethod::Sgd, 1e-3, 5, 11).unwrap();
        assert_eq!(fit1.model.w, fit2.model.w);
        let zero_residual = relative_residual(
            &dataset.features,
            None,
            0.01,
            &vec![0.0; d],
            &xty(&dataset.features, None, &dataset.targets),
        );
        assert!(fit1.residual < zero_residual);
    }
}
