//! Bagged and boosted tree ensembles over a [`TrainMatrix`].

use super::tree::{GrowParams, RegressionTree, TrainMatrix};
use crate::model::FeatureVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Per-tree generator seed, independent of how many trees are grown.
fn tree_seed(seed: u64, tree: usize) -> u64 {
    crate::rng::mix(&[seed, tree as u64])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Fraction of columns considered at each node.
    pub feature_fraction: f64,
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<RegressionTree>,
}

impl Forest {
    pub fn fit(m: &TrainMatrix, y: &[f64], allowed: &[usize], p: ForestParams, seed: u64) -> Self {
        let k = ((p.feature_fraction * allowed.len() as f64).ceil() as usize)
            .clamp(1, allowed.len().max(1));
        let grow = GrowParams {
            max_depth: p.max_depth,
            min_samples_leaf: p.min_samples_leaf,
            features_per_node: Some(k),
        };
        let n = m.n_rows();
        let trees = (0..p.n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(seed, t));
                let mut rows: Vec<u32> = if p.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n as u32)).collect()
                } else {
                    (0..n as u32).collect()
                };
                RegressionTree::fit(m, y, &mut rows, allowed, grow, Some(&mut rng))
            })
            .collect();
        Self { trees }
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    /// Mean of the trees' predictions.
    pub fn predict(&self, x: &FeatureVector) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub learning_rate: f64,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample_fraction: f64,
    /// Fraction of columns drawn for each tree.
    pub feature_fraction: f64,
}

/// Squared-error gradient boosting: base score is the training mean and each
/// stage fits a tree to the current residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boosted {
    base: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
}

impl Boosted {
    pub fn fit(m: &TrainMatrix, y: &[f64], allowed: &[usize], p: BoostParams, seed: u64) -> Self {
        Self::fit_traced(m, y, allowed, p, seed).0
    }

    /// Also returns the training MSE after each stage (index 0 is the base score).
    pub fn fit_traced(
        m: &TrainMatrix,
        y: &[f64],
        allowed: &[usize],
        p: BoostParams,
        seed: u64,
    ) -> (Self, Vec<f64>) {
        let n = m.n_rows();
        let base = if n == 0 {
            0.0
        } else {
            y.iter().sum::<f64>() / n as f64
        };
        let mut f = vec![base; n];
        let loss = |f: &[f64]| {
            if n == 0 {
                0.0
            } else {
                f.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / n as f64
            }
        };
        let mut trace = vec![loss(&f)];
        let mut trees = Vec::with_capacity(p.n_estimators);
        let grow = GrowParams {
            max_depth: p.max_depth,
            min_samples_leaf: p.min_samples_leaf,
            features_per_node: None,
        };
        let n_rows = ((p.subsample_fraction * n as f64).round() as usize).clamp(n.min(1), n);
        let n_cols = ((p.feature_fraction * allowed.len() as f64).round() as usize)
            .clamp(allowed.len().min(1), allowed.len());
        let mut residual = vec![0.0; n];
        for stage in 0..p.n_estimators {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(seed, stage));
            for i in 0..n {
                residual[i] = y[i] - f[i];
            }
            let mut rows: Vec<u32> = if n_rows < n {
                let mut r: Vec<u32> = sample(&mut rng, n, n_rows)
                    .into_iter()
                    .map(|i| i as u32)
                    .collect();
                r.sort_unstable();
                r
            } else {
                (0..n as u32).collect()
            };
            let cols: Vec<usize> = if n_cols < allowed.len() {
                let mut c: Vec<usize> = sample(&mut rng, allowed.len(), n_cols)
                    .into_iter()
                    .map(|i| allowed[i])
                    .collect();
                c.sort_unstable();
                c
            } else {
                allowed.to_vec()
            };
            let tree = RegressionTree::fit(m, &residual, &mut rows, &cols, grow, None);
            if p.learning_rate != 0.0 {
                f.par_iter_mut()
                    .enumerate()
                    .for_each(|(i, fi)| *fi += p.learning_rate * tree.predict_row(m, i));
            }
            trace.push(loss(&f));
            trees.push(tree);
        }
        (
            Self {
                base,
                learning_rate: p.learning_rate,
                trees,
            },
            trace,
        )
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn predict(&self, x: &FeatureVector) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::tree::DEFAULT_MAX_BINS;
    use crate::model::{DayContext, Feature, StationId};
    use chrono::NaiveDate;

    fn data(n: usize, seed: u64) -> (Vec<FeatureVector>, Vec<f64>) {
        let e = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut ctx =
                    DayContext::plain(e + chrono::Duration::days(rng.random_range(0..90)), e);
                ctx.avg_temperature = rng.random_range(0.0..30.0);
                let slot = rng.random_range(0..48);
                let x = FeatureVector::new(&ctx, slot, StationId(rng.random_range(0..4)));
                let y = ((slot as f64) / 8.0).sin() * 3.0
                    + 0.05 * ctx.avg_temperature
                    + rng.random_range(-0.3..0.3);
                (x, y)
            })
            .unzip()
    }

    fn boost(n_estimators: usize, lr: f64) -> BoostParams {
        BoostParams {
            n_estimators,
            max_depth: 3,
            min_samples_leaf: 1,
            learning_rate: lr,
            subsample_fraction: 1.0,
            feature_fraction: 1.0,
        }
    }

    #[test]
    fn forest_is_mean_of_trees() {
        let (xs, ys) = data(300, 1);
        let m = TrainMatrix::from_rows(&xs, &Feature::ALL, DEFAULT_MAX_BINS);
        let cols: Vec<usize> = (0..m.n_columns()).collect();
        let p = ForestParams {
            n_estimators: 7,
            max_depth: 4,
            min_samples_leaf: 2,
            feature_fraction: 0.5,
            bootstrap: true,
        };
        let f = Forest::fit(&m, &ys, &cols, p, 9);
        assert_eq!(f.trees().len(), 7);
        for x in &xs[..20] {
            let mean = f.trees().iter().map(|t| t.predict(x)).sum::<f64>() / 7.0;
            assert!((f.predict(x) - mean).abs() < 1e-12);
        }
        assert_eq!(f, Forest::fit(&m, &ys, &cols, p, 9));
    }

    #[test]
    fn boosting_degenerate_cases() {
        let (xs, ys) = data(200, 2);
        let m = TrainMatrix::from_rows(&xs, &Feature::ALL, DEFAULT_MAX_BINS);
        let cols: Vec<usize> = (0..m.n_columns()).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let zero_trees = Boosted::fit(&m, &ys, &cols, boost(0, 0.1), 1);
        assert!((zero_trees.predict(&xs[5]) - mean).abs() < 1e-12);
        let zero_rate = Boosted::fit(&m, &ys, &cols, boost(10, 0.0), 1);
        for x in &xs[..10] {
            assert!((zero_rate.predict(x) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn boosting_loss_is_non_increasing() {
        let (xs, ys) = data(400, 3);
        let m = TrainMatrix::from_rows(&xs, &Feature::ALL, DEFAULT_MAX_BINS);
        let cols: Vec<usize> = (0..m.n_columns()).collect();
        let (model, trace) = Boosted::fit_traced(&m, &ys, &cols, boost(50, 0.1), 4);
        assert_eq!(trace.len(), 51);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
        assert!(trace[50] < 0.5 * trace[0]);
        let direct: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - model.predict(x)).powi(2))
            .sum::<f64>()
            / 400.0;
        assert!((direct - trace[50]).abs() < 1e-9);
    }
}
