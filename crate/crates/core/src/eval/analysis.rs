//! Similarity-component ablation and per-class distribution summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, EvalReport, Task};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSpec, MuseComponent};
use crate::tabular::{fit_mlp_with_validation, BinaryClassifier, FitConfig, TabularModel};

/// The component subsets of the published MLP ablation, in table order.
pub fn standard_subsets() -> Vec<Vec<MuseComponent>> {
    use MuseComponent::*;
    vec![
        vec![Pair],
        vec![ImgImg],
        vec![TxtImgev],
        vec![ImgTxtev],
        vec![TxtTxt],
        vec![EvEv],
        vec![ImgImg, TxtTxt],
        vec![Pair, TxtTxt],
        vec![Pair, ImgImg],
        vec![Pair, ImgImg, TxtTxt],
        vec![Pair, ImgImg, TxtTxt, EvEv],
        vec![Pair, ImgImg, TxtImgev, ImgTxtev, EvEv],
        vec![Pair, TxtImgev, ImgTxtev, TxtTxt, EvEv],
        vec![ImgImg, TxtImgev, ImgTxtev, TxtTxt, EvEv],
        MuseComponent::ALL.to_vec(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub components: Vec<MuseComponent>,
    pub val_accuracy: f64,
    /// One report per requested task that the test set supports.
    pub test: Vec<EvalReport>,
}

fn binary(labels: &[Label]) -> Vec<u8> {
    labels.iter().map(|&l| (l != Label::Truthful) as u8).collect()
}

/// Trains an MLP on each subset of columns (checkpointed on `val`) and
/// scores it on `test` for every task with data.
pub fn muse_ablation(
    subsets: &[Vec<MuseComponent>],
    train: &FeatureMatrix,
    val: &FeatureMatrix,
    test: &FeatureMatrix,
    tasks: &[Task],
    config: &FitConfig,
) -> Result<Vec<AblationRow>> {
    let (ytr, yva) = (binary(&train.labels), binary(&val.labels));
    let mut rows = Vec::with_capacity(subsets.len());
    for components in subsets {
        if components.is_empty() {
            return Err(Error::InvalidConfig("empty component subset".into()));
        }
        let spec = FeatureSpec {
            components: components.clone(),
            include_masks: false,
        };
        let xva = spec.design_matrix(val);
        let (params, _) = fit_mlp_with_validation(&spec.design_matrix(train), &ytr, Some((&xva, &yva)), config)?;
        let model = TabularModel::Mlp(params);
        let val_pred = model.predict_batch(&xva)?;
        let val_accuracy = val_pred.iter().zip(&yva).filter(|(p, y)| p == y).count() as f64 / yva.len() as f64;
        let test_pred = model.predict_batch(&spec.design_matrix(test))?;
        let mut reports = Vec::new();
        for &task in tasks {
            match evaluate(&test_pred, &test.labels, task) {
                Ok(r) => reports.push(r),
                Err(Error::EmptyAfterFilter(_)) => {}
                Err(e) => return Err(e),
            }
        }
        rows.push(AblationRow {
            components: components.clone(),
            val_accuracy,
            test: reports,
        });
    }
    Ok(rows)
}

pub const HIST_BINS: usize = 40;
pub const HIST_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    /// Samples contributing (masked entries are excluded).
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Counts over `[-1, 1]` in bins of width 0.05; 1.0 falls in the last bin.
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub classes: BTreeMap<Label, BTreeMap<MuseComponent, ComponentSummary>>,
}

/// Linear-interpolation quantile of sorted data (numpy's default).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn histogram_bin(v: f64) -> usize {
    (((v + 1.0) / HIST_WIDTH).floor().max(0.0) as usize).min(HIST_BINS - 1)
}

pub fn distribution_report(features: &FeatureMatrix) -> DistributionReport {
    let mut classes = BTreeMap::new();
    for class in Label::ALL {
        let rows: Vec<_> = features
            .rows
            .iter()
            .zip(&features.labels)
            .filter(|(_, &l)| l == class)
            .map(|(r, _)| r)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let mut per = BTreeMap::new();
        for c in MuseComponent::ALL {
            let mut v: Vec<f64> = rows.iter().filter(|r| r.is_live(c)).map(|r| r.get(c)).collect();
            if v.is_empty() {
                continue;
            }
            v.sort_by(f64::total_cmp);
            let mut histogram = vec![0; HIST_BINS];
            v.iter().for_each(|&x| histogram[histogram_bin(x)] += 1);
            per.insert(
                c,
                ComponentSummary {
                    n: v.len(),
                    median: quantile(&v, 0.5),
                    q1: quantile(&v, 0.25),
                    q3: quantile(&v, 0.75),
                    histogram,
                },
            );
        }
        classes.insert(class, per);
    }
    DistributionReport { classes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MuseVector;

    fn matrix(rows: Vec<([f64; 6], Label)>) -> FeatureMatrix {
        FeatureMatrix {
            ids: (0..rows.len()).map(|i| i.to_string()).collect(),
            labels: rows.iter().map(|r| r.1).collect(),
            rows: rows.iter().map(|r| MuseVector::from_array(r.0, [true, true])).collect(),
        }
    }

    #[test]
    fn quantiles_match_numpy() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.75), 3.25);
        assert_eq!(quantile(&[7.0], 0.5), 7.0);
    }

    #[test]
    fn histogram_edges() {
        assert_eq!(histogram_bin(-1.0), 0);
        assert_eq!(histogram_bin(1.0), HIST_BINS - 1);
        assert_eq!(histogram_bin(0.0), 20);
        assert_eq!(histogram_bin(-0.951), 0);
        assert_eq!(histogram_bin(-0.949), 1);
    }

    #[test]
    fn single_sample_class_and_mass() {
        let m = matrix(vec![
            ([0.3, 0.9, 0.1, 0.2, 0.6, 0.3], Label::Truthful),
            ([0.1, 0.5, 0.1, 0.2, 0.2, 0.1], Label::Ooc),
            ([0.2, 0.7, 0.0, 0.1, 0.4, 0.2], Label::Ooc),
        ]);
        let r = distribution_report(&m);
        assert_eq!(r.classes[&Label::Truthful][&MuseComponent::Pair].median, 0.3);
        assert!((r.classes[&Label::Ooc][&MuseComponent::TxtTxt].median - 0.3).abs() < 1e-12);
        for per in r.classes.values() {
            for s in per.values() {
                assert_eq!(s.histogram.iter().sum::<usize>(), s.n);
            }
        }
        assert!(!r.classes.contains_key(&Label::Miscaptioned));
    }

    #[test]
    fn masked_entries_are_excluded() {
        let mut m = matrix(vec![([0.5; 6], Label::Truthful), ([0.1; 6], Label::Truthful)]);
        m.rows[1] = MuseVector::from_array([0.1, 0.0, 0.0, 0.0, 0.0, 0.0], [false, false]);
        let r = distribution_report(&m);
        assert_eq!(r.classes[&Label::Truthful][&MuseComponent::Pair].n, 2);
        assert_eq!(r.classes[&Label::Truthful][&MuseComponent::ImgImg].n, 1);
    }

    #[test]
    fn standard_subsets_end_with_all() {
        let s = standard_subsets();
        assert_eq!(s.len(), 15);
        assert_eq!(s.last().unwrap().len(), 6);
    }
}
