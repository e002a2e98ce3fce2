//! Metrics, evaluation protocols and report exports.

mod analysis;
mod metrics;
mod protocol;
pub mod report;

use serde::{Deserialize, Serialize};

pub use analysis::{
    distribution_report, histogram_bin, muse_ablation, quantile, standard_subsets, AblationRow, ComponentSummary,
    DistributionReport, HIST_BINS, HIST_WIDTH,
};
pub use metrics::{evaluate, mean, std_dev, EvalReport, Task};
pub use protocol::{
    limited_data_curve, ood_cv, stratified_folds, stratified_subsample, CellScore, CurvePoint, OodCvReport,
};

use crate::aitr::{grid_search, AitrConfig, GridCell, Pooling, TrainingSet};
use crate::error::Result;

/// Best validation accuracy of one architecture variant across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AitrAblationRow {
    pub pooling: Pooling,
    pub use_muse: bool,
    pub seeds: Vec<u64>,
    pub val_accuracies: Vec<f64>,
    pub mean_val_accuracy: f64,
    pub best_configs: Vec<String>,
    pub cells: Vec<Vec<GridCell>>,
}

/// For each `(pooling, use_muse)` variant and seed, grid-searches the
/// configurations produced by `grid(variant_base)` and records the best
/// validation accuracy.
pub fn aitr_ablation<G>(
    train: &TrainingSet,
    val: &TrainingSet,
    base: &AitrConfig,
    variants: &[(Pooling, bool)],
    seeds: &[u64],
    grid: G,
) -> Result<Vec<AitrAblationRow>>
where
    G: Fn(&AitrConfig) -> Vec<AitrConfig>,
{
    let mut rows = Vec::with_capacity(variants.len());
    for &(pooling, use_muse) in variants {
        let mut row = AitrAblationRow {
            pooling,
            use_muse,
            seeds: seeds.to_vec(),
            val_accuracies: Vec::new(),
            mean_val_accuracy: 0.0,
            best_configs: Vec::new(),
            cells: Vec::new(),
        };
        for &seed in seeds {
            let variant = AitrConfig {
                pooling,
                use_muse,
                seed,
                ..base.clone()
            };
            let out = grid_search(train, val, &grid(&variant))?;
            row.val_accuracies.push(out.best_outcome.best_val_accuracy);
            row.best_configs.push(out.cells[out.best].label.clone());
            row.cells.push(out.cells);
        }
        row.mean_val_accuracy = mean(&row.val_accuracies);
        rows.push(row);
    }
    Ok(rows)
}
