//! Decision tree, random forest and MLP classifiers over similarity features.

mod forest;
mod mlp;
mod tree;

use std::path::Path;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSpec;

pub use forest::{fit_forest, predict_forest, ForestModel};
pub use mlp::{
    bce_with_logits, fit_mlp, fit_mlp_with_validation, gelu, gelu_grad, mlp_loss_and_grad, predict_mlp, sigmoid,
    MlpGrads, MlpParams,
};
pub use tree::{fit_tree, gini, predict_tree, split_impurity, TreeNode};

/// Hyperparameters for all tabular learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_leaf_size: usize,
    pub n_trees: usize,
    /// Candidate features per split; `None` means all for a single tree and
    /// `ceil(sqrt(p))` for a forest.
    pub feature_subsample: Option<usize>,
    pub bootstrap: bool,
    pub mlp_hidden_width: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Share of each class held out for early stopping by [`fit_mlp`].
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_depth: Some(6),
            min_leaf_size: 5,
            n_trees: 100,
            feature_subsample: None,
            bootstrap: true,
            mlp_hidden_width: 128,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            epochs: 100,
            batch_size: 64,
            patience: 10,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Validates a design matrix and binary labels; returns the feature count.
pub(crate) fn check_input(x: &[Vec<f64>], y: &[u8]) -> Result<usize> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput);
    }
    if x.len() != y.len() {
        return Err(Error::ShapeError(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let p = x[0].len();
    if p == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(r) = x.iter().find(|r| r.len() != p) {
        return Err(Error::DimMismatch {
            expected: p,
            found: r.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&t| t > 1) {
        return Err(Error::InvalidConfig(format!("labels must be 0 or 1, found {bad}")));
    }
    Ok(p)
}

/// A fitted binary classifier; class 1 is the falsified (positive) class.
pub trait BinaryClassifier: Send + Sync {
    fn n_features(&self) -> usize;

    fn predict_proba(&self, x: &[f64]) -> Result<f64>;

    /// Probability ties at 0.5 predict class 1.
    fn predict(&self, x: &[f64]) -> Result<u8> {
        Ok((self.predict_proba(x)? >= 0.5) as u8)
    }

    fn predict_batch(&self, x: &[Vec<f64>]) -> Result<Vec<u8>> {
        x.iter().map(|r| self.predict(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dt,
    Rf,
    Mlp,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dt" => Ok(ModelKind::Dt),
            "rf" => Ok(ModelKind::Rf),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(Error::InvalidConfig(format!("unknown tabular model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TabularModel {
    Tree { tree: TreeNode, n_features: usize },
    Forest(ForestModel),
    Mlp(MlpParams),
}

impl TabularModel {
    pub fn fit(kind: ModelKind, x: &[Vec<f64>], y: &[u8], config: &FitConfig) -> Result<Self> {
        Ok(match kind {
            ModelKind::Dt => TabularModel::Tree {
                tree: fit_tree(x, y, config)?,
                n_features: check_input(x, y)?,
            },
            ModelKind::Rf => TabularModel::Forest(fit_forest(x, y, config)?),
            ModelKind::Mlp => TabularModel::Mlp(fit_mlp(x, y, config)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            TabularModel::Tree { .. } => ModelKind::Dt,
            TabularModel::Forest(_) => ModelKind::Rf,
            TabularModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn feature_importance(&self) -> Result<Vec<f64>> {
        match self {
            TabularModel::Tree { tree, n_features } => tree_importance(tree, *n_features),
            TabularModel::Forest(f) => forest_importance(f),
            TabularModel::Mlp(_) => Err(Error::UnfitModel("impurity importance needs a tree model".into())),
        }
    }
}

impl BinaryClassifier for TabularModel {
    fn n_features(&self) -> usize {
        match self {
            TabularModel::Tree { n_features, .. } => *n_features,
            TabularModel::Forest(f) => f.n_features,
            TabularModel::Mlp(p) => p.input_dim,
        }
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        match self {
            TabularModel::Tree { tree, n_features } => predict_tree(tree, x, *n_features),
            TabularModel::Forest(f) => predict_forest(f, x),
            TabularModel::Mlp(p) => predict_mlp(p, x),
        }
    }
}

/// Mean decrease in Gini impurity per feature, normalized to sum to 1.
pub fn tree_importance(tree: &TreeNode, n_features: usize) -> Result<Vec<f64>> {
    let raw = raw_importance(tree, n_features);
    normalize(raw).ok_or_else(|| Error::UnfitModel("tree has no informative splits".into()))
}

fn raw_importance(tree: &TreeNode, n_features: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n_features];
    let c = tree.class_counts();
    tree.accumulate_importance((c[0] + c[1]) as f64, &mut acc);
    acc
}

/// Per-tree normalized importances averaged over trees that split at all,
/// then renormalized.
pub fn forest_importance(forest: &ForestModel) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; forest.n_features];
    let mut used = 0;
    for t in &forest.trees {
        if let Some(imp) = normalize(raw_importance(t, forest.n_features)) {
            mean.iter_mut().zip(imp).for_each(|(m, v)| *m += v);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::UnfitModel("no tree in the forest has informative splits".into()));
    }
    normalize(mean).ok_or_else(|| Error::UnfitModel("degenerate importances".into()))
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let s: f64 = v.iter().sum();
    if s <= 0.0 || !s.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= s);
    Some(v)
}

pub const MODEL_FORMAT: &str = "muse-ooc/tabular-model";
pub const MODEL_VERSION: u32 = 1;

/// A fitted tabular model together with the columns it consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub features: FeatureSpec,
    pub model: TabularModel,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    features: FeatureSpec,
    #[serde(flatten)]
    body: ModelBody,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelBody {
    Dt {
        n_features: usize,
        tree: TreeNode,
    },
    Rf {
        forest: ForestModel,
    },
    Mlp {
        input_dim: usize,
        hidden_width: usize,
        /// Named little-endian binary32 blocks, base64-encoded.
        blocks: Vec<(String, String)>,
    },
}

fn encode_block(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_block(name: &str, text: &str, len: usize) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Serialization(format!("block {name}: {e}")))?;
    if bytes.len() != len * 4 {
        return Err(Error::Serialization(format!(
            "block {name}: expected {len} floats, got {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

impl SavedModel {
    pub fn to_json(&self) -> Result<String> {
        let body = match &self.model {
            TabularModel::Tree { tree, n_features } => ModelBody::Dt {
                n_features: *n_features,
                tree: tree.clone(),
            },
            TabularModel::Forest(f) => ModelBody::Rf { forest: f.clone() },
            TabularModel::Mlp(p) => ModelBody::Mlp {
                input_dim: p.input_dim,
                hidden_width: p.hidden_width,
                blocks: [
                    ("input_mean", &p.input_mean),
                    ("input_scale", &p.input_scale),
                    ("w1", &p.w1),
                    ("b1", &p.b1),
                    ("w2", &p.w2),
                    ("b2", &p.b2),
                ]
                .into_iter()
                .map(|(n, v)| (n.to_string(), encode_block(v)))
                .collect(),
            },
        };
        let doc = ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            features: self.features.clone(),
            body,
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model document {} v{}",
                doc.format, doc.version
            )));
        }
        let model = match doc.body {
            ModelBody::Dt { n_features, tree } => TabularModel::Tree { tree, n_features },
            ModelBody::Rf { forest } => TabularModel::Forest(forest),
            ModelBody::Mlp {
                input_dim,
                hidden_width,
                blocks,
            } => {
                let mut p = MlpParams::zeros(input_dim, hidden_width);
                for (name, text) in &blocks {
                    let slot = match name.as_str() {
                        "input_mean" => &mut p.input_mean,
                        "input_scale" => &mut p.input_scale,
                        "w1" => &mut p.w1,
                        "b1" => &mut p.b1,
                        "w2" => &mut p.w2,
                        "b2" => &mut p.b2,
                        other => return Err(Error::Serialization(format!("unknown block `{other}`"))),
                    };
                    *slot = decode_block(name, text, slot.len())?;
                }
                TabularModel::Mlp(p)
            }
        };
        if model.n_features() != doc.features.width() {
            return Err(Error::DimMismatch {
                expected: doc.features.width(),
                found: model.n_features(),
            });
        }
        Ok(SavedModel {
            features: doc.features,
            model,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
