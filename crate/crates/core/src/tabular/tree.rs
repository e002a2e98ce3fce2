//! CART decision trees with Gini impurity.

use rand::seq::index::sample as sample_indices;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_input, FitConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        class_counts: [usize; 2],
    },
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        class_counts: [usize; 2],
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

/// Gini impurity of a two-class count vector.
pub fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = counts[1] as f64 / n;
    2.0 * p * (1.0 - p)
}

/// Size-weighted Gini of a candidate split, `(n_l*G_l + n_r*G_r) / n`.
pub fn split_impurity(left: [usize; 2], right: [usize; 2]) -> f64 {
    let nl = (left[0] + left[1]) as f64;
    let nr = (right[0] + right[1]) as f64;
    (nl * gini(left) + nr * gini(right)) / (nl + nr)
}

impl TreeNode {
    pub fn class_counts(&self) -> [usize; 2] {
        match self {
            TreeNode::Leaf { class_counts } | TreeNode::Split { class_counts, .. } => *class_counts,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    /// Largest feature index used by any split, if any.
    pub fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split { feature, left, right, .. } => {
                Some((*feature).max(left.max_feature().unwrap_or(0)).max(right.max_feature().unwrap_or(0)))
            }
        }
    }

    fn leaf_for(&self, x: &[f64]) -> [usize; 2] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { class_counts } => return *class_counts,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    /// Accumulates size-weighted impurity decrease per feature into `acc`.
    pub(crate) fn accumulate_importance(&self, root_n: f64, acc: &mut [f64]) {
        if let TreeNode::Split {
            feature,
            class_counts,
            left,
            right,
            ..
        } = self
        {
            let n = (class_counts[0] + class_counts[1]) as f64;
            let lc = left.class_counts();
            let rc = right.class_counts();
            let nl = (lc[0] + lc[1]) as f64;
            let nr = (rc[0] + rc[1]) as f64;
            let decrease = (n * gini(*class_counts) - nl * gini(lc) - nr * gini(rc)) / root_n;
            acc[*feature] += decrease.max(0.0);
            left.accumulate_importance(root_n, acc);
            right.accumulate_importance(root_n, acc);
        }
    }
}

/// Probability of class 1 at the leaf reached by `x`.
pub fn predict_tree(tree: &TreeNode, x: &[f64], n_features: usize) -> Result<f64> {
    if x.len() != n_features {
        return Err(Error::DimMismatch {
            expected: n_features,
            found: x.len(),
        });
    }
    let c = tree.leaf_for(x);
    let n = c[0] + c[1];
    Ok(if n == 0 { 0.5 } else { c[1] as f64 / n as f64 })
}

/// Grows a tree on all rows, considering every feature at every split.
pub fn fit_tree(x: &[Vec<f64>], y: &[u8], config: &FitConfig) -> Result<TreeNode> {
    let p = check_input(x, y)?;
    let rows: Vec<usize> = (0..x.len()).collect();
    Ok(TreeGrower::new(x, y, config, p, None).grow(rows, 0))
}

/// Grows a tree on `rows` (may repeat), drawing `feature_subsample` candidate
/// features per split from `rng` when that is fewer than all features.
pub(crate) fn fit_tree_on(
    x: &[Vec<f64>],
    y: &[u8],
    rows: Vec<usize>,
    config: &FitConfig,
    p: usize,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    TreeGrower::new(x, y, config, p, Some(rng)).grow(rows, 0)
}

struct TreeGrower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    max_depth: usize,
    min_leaf: usize,
    p: usize,
    subsample: usize,
    rng: Option<&'a mut ChaCha8Rng>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl<'a> TreeGrower<'a> {
    fn new(x: &'a [Vec<f64>], y: &'a [u8], config: &FitConfig, p: usize, rng: Option<&'a mut ChaCha8Rng>) -> Self {
        Self {
            x,
            y,
            max_depth: config.max_depth.unwrap_or(usize::MAX),
            min_leaf: config.min_leaf_size.max(1),
            p,
            subsample: config.feature_subsample.unwrap_or(p).clamp(1, p),
            rng,
        }
    }

    fn counts(&self, rows: &[usize]) -> [usize; 2] {
        let mut c = [0, 0];
        for &r in rows {
            c[self.y[r] as usize] += 1;
        }
        c
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> TreeNode {
        let class_counts = self.counts(&rows);
        let pure = class_counts[0] == 0 || class_counts[1] == 0;
        if pure || depth >= self.max_depth || rows.len() < 2 * self.min_leaf {
            return TreeNode::Leaf { class_counts };
        }
        let Some(best) = self.best_split(&rows, class_counts) else {
            return TreeNode::Leaf { class_counts };
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| self.x[i][best.feature] <= best.threshold);
        let left = Box::new(self.grow(l, depth + 1));
        let right = Box::new(self.grow(r, depth + 1));
        TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            class_counts,
            left,
            right,
        }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.subsample < self.p => {
                let mut f = sample_indices(rng, self.p, self.subsample).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..self.p).collect(),
        }
    }

    /// Lowest weighted child impurity over midpoints between consecutive
    /// distinct values; ties go to the lower feature, then lower threshold.
    fn best_split(&mut self, rows: &[usize], total: [usize; 2]) -> Option<BestSplit> {
        let features = self.candidate_features();
        let mut best: Option<BestSplit> = None;
        let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(rows.len());
        for f in features {
            sorted.clear();
            sorted.extend(rows.iter().map(|&r| (self.x[r][f], self.y[r])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; 2];
            for i in 0..sorted.len() - 1 {
                left[sorted[i].1 as usize] += 1;
                let (lo, hi) = (sorted[i].0, sorted[i + 1].0);
                if lo == hi {
                    continue;
                }
                let nl = i + 1;
                if nl < self.min_leaf || sorted.len() - nl < self.min_leaf {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1]];
                let impurity = split_impurity(left, right);
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        impurity,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FitConfig {
        FitConfig {
            max_depth: None,
            min_leaf_size: 1,
            ..FitConfig::default()
        }
    }

    #[test]
    fn separable_pair() {
        let x = vec![vec![0.0], vec![1.0]];
        let t = fit_tree(&x, &[0, 1], &cfg()).unwrap();
        match &t {
            TreeNode::Split { feature, threshold, left, right, .. } => {
                assert_eq!((*feature, *threshold), (0, 0.5));
                assert!(left.is_leaf() && right.is_leaf());
            }
            _ => panic!("expected a split"),
        }
        assert_eq!(predict_tree(&t, &[0.0], 1).unwrap(), 0.0);
        assert_eq!(predict_tree(&t, &[1.0], 1).unwrap(), 1.0);
    }

    #[test]
    fn pure_root_is_a_leaf() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let t = fit_tree(&x, &[1, 1, 1], &cfg()).unwrap();
        assert_eq!(t, TreeNode::Leaf { class_counts: [0, 3] });
    }

    #[test]
    fn leaf_probabilities() {
        let leaf = TreeNode::Leaf { class_counts: [5, 0] };
        assert_eq!(predict_tree(&leaf, &[0.3], 1).unwrap(), 0.0);
        let tie = TreeNode::Leaf { class_counts: [2, 2] };
        assert_eq!(predict_tree(&tie, &[0.3], 1).unwrap(), 0.5);
        assert!(matches!(predict_tree(&tie, &[0.3, 1.0], 1), Err(Error::DimMismatch { .. })));
    }

    /// Exhaustive oracle: every (feature, midpoint) candidate evaluated from
    /// scratch by counting rows on either side.
    fn brute_force_split(x: &[Vec<f64>], y: &[u8]) -> (usize, f64, f64) {
        let mut best = (usize::MAX, f64::NAN, f64::INFINITY);
        for f in 0..x[0].len() {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let thr = (w[0] + w[1]) / 2.0;
                let (mut l, mut r) = ([0usize; 2], [0usize; 2]);
                for (row, &lab) in x.iter().zip(y) {
                    if row[f] <= thr {
                        l[lab as usize] += 1;
                    } else {
                        r[lab as usize] += 1;
                    }
                }
                let n = x.len() as f64;
                let g = |c: [usize; 2]| {
                    let m = (c[0] + c[1]) as f64;
                    1.0 - (c[0] as f64 / m).powi(2) - (c[1] as f64 / m).powi(2)
                };
                let imp = ((l[0] + l[1]) as f64 * g(l) + (r[0] + r[1]) as f64 * g(r)) / n;
                if imp < best.2 - 1e-12 {
                    best = (f, thr, imp);
                }
            }
        }
        best
    }

    #[test]
    fn root_split_matches_exhaustive_oracle() {
        // 8 rows, 2 features; feature 1 separates better than feature 0
        let x = vec![
            vec![1.0, 5.0],
            vec![2.0, 3.0],
            vec![3.0, 8.0],
            vec![4.0, 1.0],
            vec![5.0, 7.0],
            vec![6.0, 2.0],
            vec![7.0, 6.0],
            vec![8.0, 4.0],
        ];
        let y = [1, 0, 1, 0, 1, 0, 0, 1];
        let (f, thr, imp) = brute_force_split(&x, &y);
        // hand check: feature 1 sorted labels are 0,0,0,1,1,0,1,1; cutting at
        // 3.5 leaves a pure left side and a 4:1 right side, 5/8 * 0.32 = 0.2
        assert_eq!((f, thr), (1, 3.5));
        assert!((imp - 0.2).abs() < 1e-12);
        let c = FitConfig {
            max_depth: Some(1),
            ..cfg()
        };
        match fit_tree(&x, &y, &c).unwrap() {
            TreeNode::Split { feature, threshold, .. } => assert_eq!((feature, threshold), (f, thr)),
            _ => panic!("expected split"),
        }
    }

    #[test]
    fn memorizes_distinct_rows() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i * 37 % 40) as f64, (i * 11 % 7) as f64]).collect();
        let y: Vec<u8> = (0..40).map(|i| ((i * 13 + i / 3) % 2) as u8).collect();
        let t = fit_tree(&x, &y, &cfg()).unwrap();
        for (row, &lab) in x.iter().zip(&y) {
            let p = predict_tree(&t, row, 2).unwrap();
            assert_eq!((p >= 0.5) as u8, lab);
        }
    }

    #[test]
    fn min_leaf_respected() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let y: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
        let c = FitConfig {
            min_leaf_size: 4,
            ..cfg()
        };
        fn check(n: &TreeNode, min: usize) {
            match n {
                TreeNode::Leaf { class_counts } => assert!(class_counts[0] + class_counts[1] >= min),
                TreeNode::Split { left, right, .. } => {
                    check(left, min);
                    check(right, min)
                }
            }
        }
        check(&fit_tree(&x, &y, &c).unwrap(), 4);
    }

    #[test]
    fn empty_input() {
        assert!(matches!(fit_tree(&[], &[], &cfg()), Err(Error::EmptyInput)));
    }
}
