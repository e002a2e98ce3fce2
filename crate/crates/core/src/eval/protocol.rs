//! Out-of-distribution cross-validation and limited-data curves.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{mean, std_dev};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Stratified folds: each class is shuffled with a seed-derived stream and
/// dealt round-robin. Indices within a fold are sorted.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    let mut folds = vec![Vec::new(); k];
    for class in Label::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < k {
            return Err(Error::InvalidDataset(format!(
                "class {class} has {} samples, fewer than {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng_for(seed, class.index() as u64));
        for (j, i) in idx.into_iter().enumerate() {
            folds[j % k].push(i);
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Scores of one (config, fold) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodCvReport {
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
    pub config_labels: Vec<String>,
    /// `cells[config][fold]`; `None` when that cell failed.
    pub cells: Vec<Vec<Option<CellScore>>>,
    pub errors: Vec<Vec<Option<String>>>,
    pub chosen: usize,
    pub mean_val: f64,
    pub test_scores: Vec<f64>,
    pub mean_test: f64,
    /// Population standard deviation across folds.
    pub std_test: f64,
}

/// Runs `cell(config, val_indices, test_indices)` for every config and
/// every fold of `labels` (validation on one fold, testing on the others),
/// then picks the config with the highest mean validation score over its
/// successful folds (first on ties) and aggregates its test scores.
pub fn ood_cv<C, F>(labels: &[Label], grid: &[(String, C)], k: usize, seed: u64, mut cell: F) -> Result<OodCvReport>
where
    F: FnMut(&C, &[usize], &[usize]) -> Result<CellScore>,
{
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    let folds = stratified_folds(labels, k, seed)?;
    let mut cells = Vec::with_capacity(grid.len());
    let mut errors = Vec::with_capacity(grid.len());
    let mut last_err = None;
    for (_, config) in grid {
        let mut row = Vec::with_capacity(k);
        let mut err_row = Vec::with_capacity(k);
        for f in 0..k {
            let test: Vec<usize> = {
                let mut t: Vec<usize> = (0..k).filter(|&g| g != f).flat_map(|g| folds[g].iter().copied()).collect();
                t.sort_unstable();
                t
            };
            match cell(config, &folds[f], &test) {
                Ok(s) => {
                    row.push(Some(s));
                    err_row.push(None);
                }
                Err(e) => {
                    row.push(None);
                    err_row.push(Some(e.to_string()));
                    last_err = Some(e);
                }
            }
        }
        cells.push(row);
        errors.push(err_row);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in cells.iter().enumerate() {
        let vals: Vec<f64> = row.iter().flatten().map(|s| s.val).collect();
        if vals.is_empty() {
            continue;
        }
        let m = mean(&vals);
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((i, m));
        }
    }
    let Some((chosen, mean_val)) = best else {
        return Err(last_err.expect("every cell failed"));
    };
    let test_scores: Vec<f64> = cells[chosen].iter().flatten().map(|s| s.test).collect();
    Ok(OodCvReport {
        k,
        folds,
        config_labels: grid.iter().map(|(l, _)| l.clone()).collect(),
        mean_test: mean(&test_scores),
        std_test: std_dev(&test_scores),
        test_scores,
        cells,
        errors,
        chosen,
        mean_val,
    })
}

/// Stratified subsample of `fraction` of each class (rounded to nearest),
/// deterministic in `(fraction, seed)`. A fraction of 1 returns every index
/// in order.
pub fn stratified_subsample(labels: &[Label], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("fraction {fraction} outside (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok((0..labels.len()).collect());
    }
    let mut out = Vec::new();
    let mut present = 0;
    for class in Label::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        present += 1;
        let take = (idx.len() as f64 * fraction).round() as usize;
        if take == 0 {
            return Err(Error::FractionTooSmall {
                fraction,
                class: class.to_string(),
            });
        }
        idx.shuffle(&mut rng_for(seed ^ fraction.to_bits(), class.index() as u64));
        out.extend_from_slice(&idx[..take]);
    }
    if present < 2 {
        return Err(Error::InvalidDataset("subsampling needs at least two classes".into()));
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub n_train: usize,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

/// For every fraction and seed, fits on a stratified subsample of the
/// training labels via `fit_eval(indices, seed)` (which returns the test
/// accuracy) and averages over seeds.
pub fn limited_data_curve<F>(train_labels: &[Label], fractions: &[f64], seeds: &[u64], mut fit_eval: F) -> Result<Vec<CurvePoint>>
where
    F: FnMut(&[usize], u64) -> Result<f64>,
{
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("no seeds".into()));
    }
    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let mut accuracies = Vec::with_capacity(seeds.len());
        let mut n_train = 0;
        for &seed in seeds {
            let idx = stratified_subsample(train_labels, fraction, seed)?;
            n_train = idx.len();
            accuracies.push(fit_eval(&idx, seed)?);
        }
        points.push(CurvePoint {
            fraction,
            n_train,
            seeds: seeds.to_vec(),
            mean_accuracy: mean(&accuracies),
            accuracies,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::*;

    fn labels(n_true: usize, n_ooc: usize) -> Vec<Label> {
        let mut v = vec![Truthful; n_true];
        v.extend(vec![Ooc; n_ooc]);
        v
    }

    #[test]
    fn folds_are_stratified_partition() {
        let l = labels(10, 7);
        let folds = stratified_folds(&l, 3, 4).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..17).collect::<Vec<_>>());
        for f in &folds {
            let t = f.iter().filter(|&&i| l[i] == Truthful).count();
            assert!((3..=4).contains(&t));
            let o = f.len() - t;
            assert!((2..=3).contains(&o));
        }
        assert!(stratified_folds(&labels(2, 5), 3, 0).is_err());
    }

    #[test]
    fn each_fold_validates_once() {
        let l = labels(6, 6);
        let mut seen = Vec::new();
        let grid = vec![("only".to_string(), ())];
        let folds = stratified_folds(&l, 3, 0).unwrap();
        let report = ood_cv(&l, &grid, 3, 0, |_, val, test| {
            seen.push((val.to_vec(), test.to_vec()));
            Ok(CellScore {
                val: val.len() as f64,
                test: test.len() as f64,
            })
        })
        .unwrap();
        assert_eq!(seen.len(), 3);
        for (f, (val, test)) in seen.iter().enumerate() {
            assert_eq!(val, &folds[f]);
            let mut rest: Vec<usize> = (0..3).filter(|&g| g != f).flat_map(|g| folds[g].clone()).collect();
            rest.sort_unstable();
            assert_eq!(test, &rest);
        }
        assert_eq!(report.mean_test, 8.0);
        assert_eq!(report.std_test, 0.0);
    }

    #[test]
    fn failed_cells_are_skipped() {
        let l = labels(6, 6);
        let grid = vec![("bad".to_string(), true), ("good".to_string(), false)];
        let report = ood_cv(&l, &grid, 3, 0, |&fail, _, _| {
            if fail {
                Err(Error::Diverged { epoch: 1, loss: f64::NAN })
            } else {
                Ok(CellScore { val: 0.5, test: 0.25 })
            }
        })
        .unwrap();
        assert_eq!(report.chosen, 1);
        assert!(report.errors[0].iter().all(Option::is_some));
    }

    #[test]
    fn subsample_fraction_one_is_identity() {
        let l = labels(50, 30);
        assert_eq!(stratified_subsample(&l, 1.0, 3).unwrap(), (0..80).collect::<Vec<_>>());
        let half = stratified_subsample(&l, 0.5, 3).unwrap();
        assert_eq!(half.len(), 40);
        assert_eq!(half.iter().filter(|&&i| l[i] == Truthful).count(), 25);
        assert_eq!(half, stratified_subsample(&l, 0.5, 3).unwrap());
        assert!(matches!(
            stratified_subsample(&l, 0.001, 0),
            Err(Error::FractionTooSmall { .. })
        ));
        assert!(stratified_subsample(&l, 0.0, 0).is_err());
    }

    #[test]
    fn curve_averages_over_seeds() {
        let l = labels(100, 100);
        let curve = limited_data_curve(&l, &[1.0, 0.1], &[0, 1], |idx, seed| Ok(idx.len() as f64 + seed as f64)).unwrap();
        assert_eq!(curve[0].mean_accuracy, 200.5);
        assert_eq!(curve[1].accuracies, vec![20.0, 21.0]);
        assert_eq!(curve[1].n_train, 20);
    }
}
