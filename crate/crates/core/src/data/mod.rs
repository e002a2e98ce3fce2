//! Dataset representation, the on-disk canonical format, deterministic
//! splitting and the calibrated synthetic generator.

mod io;
mod split;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, save_dataset, FORMAT_VERSION};
pub use split::split_dataset;
pub use synth::{generate_synthetic, Preset, SyntheticConfig};

/// A raw (unnormalized) embedding produced by a frozen encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Wraps `values`, rejecting non-finite entries and dims below 2.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "embedding dim must be at least 2, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite entry at position {pos}"
            )));
        }
        Ok(Self(values))
    }

    /// Wraps `values` without validation. Callers guarantee finiteness.
    pub(crate) fn from_raw(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    #[serde(rename = "true")]
    Truthful = 0,
    Ooc = 1,
    Miscaptioned = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Truthful, Label::Ooc, Label::Miscaptioned];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Truthful => "true",
            Label::Ooc => "ooc",
            Label::Miscaptioned => "miscaptioned",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" | "truthful" => Ok(Label::Truthful),
            "ooc" => Ok(Label::Ooc),
            "miscaptioned" => Ok(Label::Miscaptioned),
            other => Err(Error::InvalidConfig(format!("unknown label `{other}`"))),
        }
    }
}

/// A claim (image + caption) with its candidate external evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: EmbeddingVector,
    pub text: EmbeddingVector,
    pub image_evidence: Vec<EmbeddingVector>,
    pub text_evidence: Vec<EmbeddingVector>,
    pub label: Label,
}

impl Sample {
    pub fn dim(&self) -> usize {
        self.image.dim()
    }

    /// Checks that every embedding shares the claim image's dimension.
    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        let all = std::iter::once(&self.text)
            .chain(&self.image_evidence)
            .chain(&self.text_evidence);
        for e in all {
            if e.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: e.dim(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    External,
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            "external" => Ok(SplitTag::External),
            other => Err(Error::InvalidConfig(format!("unknown split tag `{other}`"))),
        }
    }
}

/// A validated, immutable collection of samples with a homogeneous dim.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    pub split_tag: SplitTag,
    pub backbone_tag: String,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, split_tag: SplitTag, backbone_tag: impl Into<String>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidDataset("dataset has no samples".into()));
        };
        let dim = first.dim();
        let mut ids = std::collections::HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: s.dim(),
                });
            }
            s.validate().map_err(|e| e.in_sample(&s.id))?;
            if !ids.insert(s.id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(Self {
            samples,
            split_tag,
            backbone_tag: backbone_tag.into(),
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Number of samples per label, indexed by [`Label::index`].
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    /// Samples whose label is in `keep`, preserving order.
    pub fn filter_labels(&self, keep: &[Label]) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .filter(|s| keep.contains(&s.label))
            .cloned()
            .collect();
        Dataset::new(samples, self.split_tag, self.backbone_tag.clone())
    }

    /// Subset by row indices, in the given order.
    pub fn select(&self, indices: &[usize], split_tag: SplitTag) -> Result<Dataset> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset::new(samples, split_tag, self.backbone_tag.clone())
    }
}
