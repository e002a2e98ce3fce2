//! Evidence re-ranking and the six-component multimodal similarity vector.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EmbeddingVector, Label, Sample};
use crate::error::{Error, Result};

/// Norms below this are treated as degenerate embeddings.
pub const ZERO_NORM: f64 = 1e-12;

/// Cosine similarity computed in double precision, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    cosine_slices(a.values(), b.values())
}

pub fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    for norm in [na.sqrt(), nb.sqrt()] {
        if norm < ZERO_NORM {
            return Err(Error::ZeroVector { norm });
        }
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// The six similarities, in storage/column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuseComponent {
    /// claim image vs claim text
    Pair,
    /// claim image vs image evidence
    ImgImg,
    /// claim text vs image evidence
    TxtImgev,
    /// claim image vs text evidence
    ImgTxtev,
    /// claim text vs text evidence
    TxtTxt,
    /// image evidence vs text evidence
    EvEv,
}

impl MuseComponent {
    pub const ALL: [MuseComponent; 6] = [
        MuseComponent::Pair,
        MuseComponent::ImgImg,
        MuseComponent::TxtImgev,
        MuseComponent::ImgTxtev,
        MuseComponent::TxtTxt,
        MuseComponent::EvEv,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MuseComponent::Pair => "pair",
            MuseComponent::ImgImg => "img_img",
            MuseComponent::TxtImgev => "txt_imgev",
            MuseComponent::ImgTxtev => "img_txtev",
            MuseComponent::TxtTxt => "txt_txt",
            MuseComponent::EvEv => "ev_ev",
        }
    }

    /// Whether the similarity involves image evidence / text evidence.
    fn needs(self) -> (bool, bool) {
        match self {
            MuseComponent::Pair => (false, false),
            MuseComponent::ImgImg | MuseComponent::TxtImgev => (true, false),
            MuseComponent::ImgTxtev | MuseComponent::TxtTxt => (false, true),
            MuseComponent::EvEv => (true, true),
        }
    }
}

impl fmt::Display for MuseComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MuseComponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MuseComponent::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown similarity component `{s}`")))
    }
}

/// Multimodal similarity vector of one claim and its top-1 evidence.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MuseVector {
    pub pair: f64,
    pub img_img: f64,
    pub txt_imgev: f64,
    pub img_txtev: f64,
    pub txt_txt: f64,
    pub ev_ev: f64,
    /// (image evidence present, text evidence present)
    pub evidence_mask: [bool; 2],
}

impl MuseVector {
    pub fn to_array(&self) -> [f64; 6] {
        [self.pair, self.img_img, self.txt_imgev, self.img_txtev, self.txt_txt, self.ev_ev]
    }

    pub fn from_array(values: [f64; 6], evidence_mask: [bool; 2]) -> Self {
        let [pair, img_img, txt_imgev, img_txtev, txt_txt, ev_ev] = values;
        Self {
            pair,
            img_img,
            txt_imgev,
            img_txtev,
            txt_txt,
            ev_ev,
            evidence_mask,
        }
    }

    pub fn get(&self, c: MuseComponent) -> f64 {
        self.to_array()[c.index()]
    }

    /// Whether component `c` was computed from present evidence.
    pub fn is_live(&self, c: MuseComponent) -> bool {
        let (img, txt) = c.needs();
        (!img || self.evidence_mask[0]) && (!txt || self.evidence_mask[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankedEvidence {
    pub image_index: Option<usize>,
    pub text_index: Option<usize>,
    pub image_score: f64,
    pub text_score: f64,
}

/// Index and score of the candidate most similar to `anchor`; ties keep the
/// lowest index. Degenerate candidates are skipped.
fn top1(anchor: &EmbeddingVector, candidates: &[EmbeddingVector]) -> (Option<usize>, f64) {
    let mut best: (Option<usize>, f64) = (None, 0.0);
    for (i, c) in candidates.iter().enumerate() {
        let Ok(score) = cosine(anchor, c) else { continue };
        if best.0.is_none() || score > best.1 {
            best = (Some(i), score);
        }
    }
    best
}

/// Selects the top-1 image evidence by image-to-image similarity and the
/// top-1 text evidence by text-to-text similarity.
pub fn rerank_evidence(sample: &Sample) -> RankedEvidence {
    let (image_index, image_score) = top1(&sample.image, &sample.image_evidence);
    let (text_index, text_score) = top1(&sample.text, &sample.text_evidence);
    RankedEvidence {
        image_index,
        text_index,
        image_score,
        text_score,
    }
}

pub fn compute_muse(sample: &Sample, ranked: &RankedEvidence) -> Result<MuseVector> {
    let ie = ranked.image_index.map(|i| &sample.image_evidence[i]);
    let te = ranked.text_index.map(|i| &sample.text_evidence[i]);
    let mut m = MuseVector {
        pair: cosine(&sample.image, &sample.text)?,
        evidence_mask: [ie.is_some(), te.is_some()],
        ..Default::default()
    };
    if let Some(ie) = ie {
        m.img_img = cosine(&sample.image, ie)?;
        m.txt_imgev = cosine(&sample.text, ie)?;
    }
    if let Some(te) = te {
        m.img_txtev = cosine(&sample.image, te)?;
        m.txt_txt = cosine(&sample.text, te)?;
    }
    if let (Some(ie), Some(te)) = (ie, te) {
        m.ev_ev = cosine(ie, te)?;
    }
    Ok(m)
}

/// Re-ranked similarity features for a whole dataset, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub rows: Vec<MuseVector>,
    pub labels: Vec<Label>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn values(&self) -> Vec<[f64; 6]> {
        self.rows.iter().map(MuseVector::to_array).collect()
    }

    pub fn masks(&self) -> Vec<[bool; 2]> {
        self.rows.iter().map(|r| r.evidence_mask).collect()
    }

    /// Rows whose label is in `keep`, preserving order.
    pub fn filter_labels(&self, keep: &[Label]) -> FeatureMatrix {
        self.select(
            &(0..self.len())
                .filter(|&i| keep.contains(&self.labels[i]))
                .collect::<Vec<_>>(),
        )
    }

    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            rows: indices.iter().map(|&i| self.rows[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut body = String::from("id,pair,img_img,txt_imgev,img_txtev,txt_txt,ev_ev,img_mask,txt_mask,label\n");
        for ((id, r), l) in self.ids.iter().zip(&self.rows).zip(&self.labels) {
            let v = r.to_array();
            body.push_str(&format!(
                "{id},{},{},{},{},{},{},{},{},{l}\n",
                v[0],
                v[1],
                v[2],
                v[3],
                v[4],
                v[5],
                r.evidence_mask[0] as u8,
                r.evidence_mask[1] as u8
            ));
        }
        out.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn featurize_sample(sample: &Sample) -> Result<MuseVector> {
    compute_muse(sample, &rerank_evidence(sample)).map_err(|e| e.in_sample(&sample.id))
}

/// Featurizes every sample; rows are computed in parallel into fixed slots.
pub fn featurize_dataset(dataset: &Dataset) -> Result<FeatureMatrix> {
    let rows = dataset
        .samples()
        .par_iter()
        .map(featurize_sample)
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix {
        ids: dataset.samples().iter().map(|s| s.id.clone()).collect(),
        rows,
        labels: dataset.labels(),
    })
}

/// Which columns a tabular model consumes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub components: Vec<MuseComponent>,
    /// Append the two evidence-presence indicators as 0/1 columns.
    #[serde(default)]
    pub include_masks: bool,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            components: MuseComponent::ALL.to_vec(),
            include_masks: false,
        }
    }
}

impl FeatureSpec {
    pub fn width(&self) -> usize {
        self.components.len() + if self.include_masks { 2 } else { 0 }
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.components.iter().map(|c| c.name().to_string()).collect();
        if self.include_masks {
            names.push("img_mask".into());
            names.push("txt_mask".into());
        }
        names
    }

    pub fn row(&self, m: &MuseVector) -> Vec<f64> {
        let mut r: Vec<f64> = self.components.iter().map(|&c| m.get(c)).collect();
        if self.include_masks {
            r.extend(m.evidence_mask.iter().map(|&b| b as u8 as f64));
        }
        r
    }

    pub fn design_matrix(&self, features: &FeatureMatrix) -> Vec<Vec<f64>> {
        features.rows.iter().map(|m| self.row(m)).collect()
    }
}
