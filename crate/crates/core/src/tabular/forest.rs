use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree_on, predict_tree, TreeNode};
use super::{check_input, FitConfig};
use crate::error::Result;
use crate::rng::{derive_seed, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub per_tree_seeds: Vec<u64>,
    pub feature_subsample: usize,
    pub bootstrap: bool,
    pub n_features: usize,
}

/// Bagged CART ensemble. Tree `i` is grown from seed `derive_seed(seed, i)`,
/// so the result does not depend on how trees are scheduled across threads.
pub fn fit_forest(x: &[Vec<f64>], y: &[u8], config: &FitConfig) -> Result<ForestModel> {
    let p = check_input(x, y)?;
    let n_trees = config.n_trees.max(1);
    let feature_subsample = config
        .feature_subsample
        .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
        .clamp(1, p);
    let tree_config = FitConfig {
        feature_subsample: Some(feature_subsample),
        ..config.clone()
    };
    let per_tree_seeds: Vec<u64> = (0..n_trees as u64).map(|i| derive_seed(config.seed, i)).collect();
    let trees = per_tree_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = rng_for(s, 0);
            let rows: Vec<usize> = if config.bootstrap {
                (0..x.len()).map(|_| rng.random_range(0..x.len())).collect()
            } else {
                (0..x.len()).collect()
            };
            fit_tree_on(x, y, rows, &tree_config, p, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        trees,
        per_tree_seeds,
        feature_subsample,
        bootstrap: config.bootstrap,
        n_features: p,
    })
}

/// Mean of the member trees' class-1 probabilities.
pub fn predict_forest(model: &ForestModel, x: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for t in &model.trees {
        sum += predict_tree(t, x, model.n_features)?;
    }
    Ok(sum / model.trees.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::tree::fit_tree;

    fn toy() -> (Vec<Vec<f64>>, Vec<u8>) {
        let x: Vec<Vec<f64>> = (0..60)
            .map(|i| {
                let a = ((i * 37) % 60) as f64 / 60.0;
                let b = ((i * 11) % 13) as f64 / 13.0;
                vec![a, b, (a + b) / 2.0]
            })
            .collect();
        let y = x.iter().map(|r| (r[0] + 0.3 * r[1] > 0.6) as u8).collect();
        (x, y)
    }

    #[test]
    fn degenerate_forest_equals_tree() {
        let (x, y) = toy();
        let cfg = FitConfig {
            n_trees: 1,
            bootstrap: false,
            feature_subsample: Some(3),
            ..FitConfig::default()
        };
        let forest = fit_forest(&x, &y, &cfg).unwrap();
        let tree = fit_tree(&x, &y, &cfg).unwrap();
        assert_eq!(forest.trees, vec![tree]);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (x, y) = toy();
        let cfg = FitConfig {
            n_trees: 12,
            ..FitConfig::default()
        };
        let a = fit_forest(&x, &y, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| fit_forest(&x, &y, &cfg)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probability_is_mean_of_trees() {
        let (x, y) = toy();
        let cfg = FitConfig {
            n_trees: 7,
            ..FitConfig::default()
        };
        let f = fit_forest(&x, &y, &cfg).unwrap();
        for row in &x {
            let p = predict_forest(&f, row).unwrap();
            let mean: f64 = f.trees.iter().map(|t| predict_tree(t, row, 3).unwrap()).sum::<f64>() / 7.0;
            assert_eq!(p, mean);
            assert!((0.0..=1.0).contains(&p));
        }
    }
}
