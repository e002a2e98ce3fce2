//! Synthetic datasets with controlled per-class similarity medians.
//!
//! Every sample is built from four unit vectors (claim image, claim text,
//! true image evidence, true text evidence) whose six pairwise cosines are
//! prescribed. The prescribed cosines are the class medians jittered in
//! Fisher-z space, `tanh(atanh(t) + noise_scale * spread * N(0, 1))`, which
//! keeps every value inside (-1, 1) and leaves the median at `t`. A
//! Cholesky factor of the resulting 4x4 Gram matrix gives coordinates
//! in a random orthonormal 4-frame of R^dim. Distractor evidence is placed at
//! a cosine at least 0.1 below the true evidence, so top-1 re-ranking
//! recovers the planted item. Each stored vector gets a random norm.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingVector, Label, Sample, SplitTag};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Order of the six similarities, matching [`crate::features::MuseComponent`].
pub type SimilarityTargets = [f64; 6];

const MAX_RETRIES: usize = 200;
const DISTRACTOR_MARGIN: f64 = 0.1;
const NORM_RANGE: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_per_class: usize,
    pub dim: usize,
    /// Per-class medians of (pair, img_img, txt_imgev, img_txtev, txt_txt, ev_ev).
    pub target_medians: BTreeMap<Label, SimilarityTargets>,
    /// Per-component jitter standard deviation in Fisher-z space.
    pub component_spread: SimilarityTargets,
    pub noise_scale: f64,
    pub seed: u64,
    /// Upper bound on extra image-evidence candidates per sample.
    pub max_image_distractors: usize,
    /// Upper bound on extra text-evidence candidates per sample.
    pub max_text_distractors: usize,
    pub split_tag: SplitTag,
    pub backbone_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Truthful and OOC classes at the medians measured on the large
    /// algorithmically generated training corpus.
    NewsClippings,
    /// Truthful, OOC and Miscaptioned classes at the medians measured on the
    /// small annotated benchmark.
    Verite,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newsclippings" => Ok(Preset::NewsClippings),
            "verite" => Ok(Preset::Verite),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }
}

/// Fisher-z jitter shared by both presets.
///
/// The claim-pair similarity has the tightest spread relative to its class
/// gap, followed by image/image-evidence and then text/text-evidence, so the
/// single-feature separability ranks pair > img_img > txt_txt. The two
/// cross-modal evidence similarities share one median across classes.
pub const PRESET_SPREAD: SimilarityTargets = [0.045, 0.42, 0.08, 0.08, 0.34, 0.10];

impl Preset {
    pub fn medians(self) -> BTreeMap<Label, SimilarityTargets> {
        let mut m = BTreeMap::new();
        match self {
            Preset::NewsClippings => {
                m.insert(Label::Truthful, [0.27, 0.91, 0.24, 0.22, 0.63, 0.28]);
                m.insert(Label::Ooc, [0.19, 0.69, 0.24, 0.22, 0.32, 0.22]);
            }
            Preset::Verite => {
                m.insert(Label::Truthful, [0.31, 0.83, 0.24, 0.22, 0.32, 0.28]);
                m.insert(Label::Ooc, [0.24, 0.69, 0.24, 0.22, 0.28, 0.22]);
                m.insert(Label::Miscaptioned, [0.29, 0.82, 0.24, 0.22, 0.46, 0.28]);
            }
        }
        m
    }

    pub fn config(self, n_per_class: usize, dim: usize, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_per_class,
            dim,
            target_medians: self.medians(),
            component_spread: PRESET_SPREAD,
            noise_scale: 1.0,
            seed,
            max_image_distractors: 3,
            max_text_distractors: 5,
            split_tag: match self {
                Preset::NewsClippings => SplitTag::Train,
                Preset::Verite => SplitTag::External,
            },
            backbone_tag: format!("synthetic-{}", self.name()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::NewsClippings => "newsclippings",
            Preset::Verite => "verite",
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::InvalidConfig("n_per_class must be positive".into()));
        }
        if self.dim < 4 {
            return Err(Error::InfeasibleTargets(format!(
                "four independent directions need dim >= 4, got {}",
                self.dim
            )));
        }
        if self.target_medians.is_empty() {
            return Err(Error::InvalidConfig("no classes requested".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidConfig("noise_scale must be finite and nonnegative".into()));
        }
        if self.component_spread.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("component_spread must be finite and nonnegative".into()));
        }
        for (label, t) in &self.target_medians {
            if t.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::InfeasibleTargets(format!("{label}: targets outside [-1, 1]: {t:?}")));
            }
            if cholesky(&gram(t)).is_none() {
                return Err(Error::InfeasibleTargets(format!(
                    "{label}: targets {t:?} are not realizable by four vectors"
                )));
            }
        }
        Ok(())
    }
}

/// Generates `n_per_class` samples per configured class.
///
/// Classes are generated in label order, each from its own sub-seed derived
/// from `(seed, class)`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut samples = Vec::with_capacity(config.n_per_class * config.target_medians.len());
    for (&label, target) in &config.target_medians {
        let mut rng = rng_for(config.seed, 0x5EED_0000 + label.index() as u64);
        for i in 0..config.n_per_class {
            let id = format!("syn-{label}-{i:06}");
            samples.push(sample_one(&mut rng, config, label, target, id)?);
        }
    }
    Dataset::new(samples, config.split_tag, config.backbone_tag.clone())
}

fn sample_one(
    rng: &mut ChaCha8Rng,
    config: &SyntheticConfig,
    label: Label,
    target: &SimilarityTargets,
    id: String,
) -> Result<Sample> {
    let sims = jitter(rng, config, target)
        .ok_or_else(|| Error::InfeasibleTargets(format!("{label}: no realizable draw after {MAX_RETRIES} retries")))?;
    let factor = cholesky(&gram(&sims)).expect("jitter returns realizable targets");
    let frame = orthonormal_frame(rng, config.dim, 4);
    let unit: Vec<Vec<f64>> = (0..4)
        .map(|k| {
            let mut v = vec![0.0; config.dim];
            for (j, e) in frame.iter().enumerate().take(k + 1) {
                axpy(factor[k][j], e, &mut v);
            }
            v
        })
        .collect();

    let mut image_evidence = distractors(rng, &unit[0], sims[1], config.max_image_distractors);
    let mut text_evidence = distractors(rng, &unit[1], sims[4], config.max_text_distractors);
    let slot = rng.random_range(0..=image_evidence.len());
    image_evidence.insert(slot, unit[2].clone());
    let slot = rng.random_range(0..=text_evidence.len());
    text_evidence.insert(slot, unit[3].clone());

    let mut store = |v: &[f64]| {
        let norm = rng.random_range(NORM_RANGE.0..NORM_RANGE.1);
        EmbeddingVector::from_raw(v.iter().map(|x| (x * norm) as f32).collect())
    };
    Ok(Sample {
        image: store(&unit[0]),
        text: store(&unit[1]),
        image_evidence: image_evidence.iter().map(|v| store(v)).collect(),
        text_evidence: text_evidence.iter().map(|v| store(v)).collect(),
        id,
        label,
    })
}

fn jitter(rng: &mut ChaCha8Rng, config: &SyntheticConfig, target: &SimilarityTargets) -> Option<SimilarityTargets> {
    if config.noise_scale == 0.0 {
        return Some(*target);
    }
    for _ in 0..MAX_RETRIES {
        let mut s = [0.0; 6];
        for k in 0..6 {
            let eps: f64 = StandardNormal.sample(rng);
            let z = target[k].clamp(-0.999_999, 0.999_999).atanh();
            s[k] = (z + config.noise_scale * config.component_spread[k] * eps).tanh();
        }
        if cholesky(&gram(&s)).is_some() {
            return Some(s);
        }
    }
    None
}

/// Extra candidates at cosine `true_sim - 0.1 - U(0.001, 0.4)` to `anchor`.
fn distractors(rng: &mut ChaCha8Rng, anchor: &[f64], true_sim: f64, max: usize) -> Vec<Vec<f64>> {
    let count = rng.random_range(0..=max);
    (0..count)
        .map(|_| {
            let c = (true_sim - DISTRACTOR_MARGIN - rng.random_range(0.001..0.4)).max(-1.0);
            let w = &orthonormal_frame_against(rng, anchor);
            let s = (1.0 - c * c).max(0.0).sqrt();
            anchor.iter().zip(w).map(|(a, b)| c * a + s * b).collect()
        })
        .collect()
}

/// Gram matrix of (claim image, claim text, image evidence, text evidence).
fn gram(s: &SimilarityTargets) -> [[f64; 4]; 4] {
    let [pair, img_img, txt_imgev, img_txtev, txt_txt, ev_ev] = *s;
    [
        [1.0, pair, img_img, img_txtev],
        [pair, 1.0, txt_imgev, txt_txt],
        [img_img, txt_imgev, 1.0, ev_ev],
        [img_txtev, txt_txt, ev_ev, 1.0],
    ]
}

/// Lower-triangular factor of a positive semidefinite 4x4 matrix, or `None`
/// when a pivot is negative beyond rounding.
fn cholesky(g: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let mut l = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let sum: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let pivot = g[i][i] - sum;
                if pivot < -1e-9 {
                    return None;
                }
                l[i][i] = pivot.max(0.0).sqrt();
            } else if l[j][j] > 1e-12 {
                l[i][j] = (g[i][j] - sum) / l[j][j];
            } else if (g[i][j] - sum).abs() > 1e-9 {
                return None;
            }
        }
    }
    Some(l)
}

fn orthonormal_frame(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(k);
    while frame.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for e in &frame {
            let d = dot(&v, e);
            axpy(-d, e, &mut v);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            frame.push(v);
        }
    }
    frame
}

fn orthonormal_frame_against(rng: &mut ChaCha8Rng, anchor: &[f64]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..anchor.len()).map(|_| StandardNormal.sample(rng)).collect();
        let d = dot(&v, anchor);
        axpy(-d, anchor, &mut v);
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
