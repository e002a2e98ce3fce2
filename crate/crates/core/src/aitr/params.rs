use ndarray::{ArrayView1, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{AitrConfig, Pooling};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// A named, row-major parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerSlots {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub q_w: usize,
    pub q_b: usize,
    pub k_w: usize,
    pub k_b: usize,
    pub v_w: usize,
    pub v_b: usize,
    pub o_w: usize,
    pub o_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum PoolSlots {
    Attention { q: usize, k: usize, v: usize },
    Weighted { logits: usize },
    Plain,
}

/// Indices of every tensor in the flat list.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub cls: usize,
    pub muse: Option<(usize, usize)>,
    pub pos: Option<usize>,
    pub layers: Vec<LayerSlots>,
    pub norm_g: usize,
    pub norm_b: usize,
    pub pool: PoolSlots,
    pub w0: usize,
    pub b0: usize,
    pub w1: usize,
    pub b1: usize,
}

enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
}

struct Builder<'r, R: Rng> {
    tensors: Vec<Tensor>,
    rng: Option<&'r mut R>,
}

impl<R: Rng> Builder<'_, R> {
    fn push(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let n: usize = shape.iter().product();
        let data = match (&mut self.rng, init) {
            (_, Init::Zeros) | (None, _) => vec![0.0; n],
            (_, Init::Ones) => vec![1.0; n],
            (Some(rng), Init::Normal(std)) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            (Some(rng), Init::FanIn(fan_in)) => {
                let a = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..a)).collect()
            }
        };
        self.tensors.push(Tensor {
            name,
            shape: shape.to_vec(),
            data,
        });
        self.tensors.len() - 1
    }

    fn affine(&mut self, prefix: &str, out: usize, inp: usize) -> (usize, usize) {
        let w = self.push(format!("{prefix}.weight"), &[out, inp], Init::FanIn(inp));
        let b = self.push(format!("{prefix}.bias"), &[out], Init::FanIn(inp));
        (w, b)
    }

    fn norm(&mut self, prefix: &str, d: usize) -> (usize, usize) {
        let g = self.push(format!("{prefix}.gain"), &[d], Init::Ones);
        let b = self.push(format!("{prefix}.bias"), &[d], Init::Zeros);
        (g, b)
    }
}

fn build<R: Rng>(config: &AitrConfig, rng: Option<&mut R>) -> (Layout, Vec<Tensor>) {
    let d = config.dim;
    let z = config.ff_width;
    let mut b = Builder { tensors: Vec::new(), rng };
    let cls = b.push("cls_token".into(), &[d], Init::Normal(0.02));
    let muse = config.use_muse.then(|| b.affine("muse_proj", d, 6));
    let pos = config
        .positional
        .then(|| b.push("pos_embed".into(), &[config.seq_len(), d], Init::Normal(0.02)));
    let layers = (0..config.n_layers)
        .map(|i| {
            let p = format!("layers.{i}");
            let (ln1_g, ln1_b) = b.norm(&format!("{p}.ln1"), d);
            let (q_w, q_b) = b.affine(&format!("{p}.attn.q"), d, d);
            let (k_w, k_b) = b.affine(&format!("{p}.attn.k"), d, d);
            let (v_w, v_b) = b.affine(&format!("{p}.attn.v"), d, d);
            let (o_w, o_b) = b.affine(&format!("{p}.attn.out"), d, d);
            let (ln2_g, ln2_b) = b.norm(&format!("{p}.ln2"), d);
            let (ff1_w, ff1_b) = b.affine(&format!("{p}.ff1"), z, d);
            let (ff2_w, ff2_b) = b.affine(&format!("{p}.ff2"), d, z);
            LayerSlots {
                ln1_g,
                ln1_b,
                q_w,
                q_b,
                k_w,
                k_b,
                v_w,
                v_b,
                o_w,
                o_b,
                ln2_g,
                ln2_b,
                ff1_w,
                ff1_b,
                ff2_w,
                ff2_b,
            }
        })
        .collect();
    let (norm_g, norm_b) = b.norm("cls_norm", d);
    let pool = match config.pooling {
        Pooling::Attention => PoolSlots::Attention {
            q: b.push("pool.q.weight".into(), &[d, d], Init::FanIn(d)),
            k: b.push("pool.k.weight".into(), &[d, d], Init::FanIn(d)),
            v: b.push("pool.v.weight".into(), &[d, d], Init::FanIn(d)),
        },
        Pooling::Weighted => PoolSlots::Weighted {
            logits: b.push("pool.layer_logits".into(), &[config.n_layers], Init::Zeros),
        },
        Pooling::Max | Pooling::None => PoolSlots::Plain,
    };
    let (w0, b0) = b.affine("head.0", d, d);
    let (w1, b1) = b.affine("head.1", 1, d);
    let layout = Layout {
        cls,
        muse,
        pos,
        layers,
        norm_g,
        norm_b,
        pool,
        w0,
        b0,
        w1,
        b1,
    };
    (layout, b.tensors)
}

/// All trainable tensors of the model together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AitrParams {
    pub config: AitrConfig,
    pub(crate) layout: Layout,
    tensors: Vec<Tensor>,
}

impl AitrParams {
    /// Random initialization derived from `config.seed`.
    pub fn init(config: &AitrConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(config.seed, 0xA172);
        let (layout, tensors) = build(config, Some(&mut rng));
        Ok(Self {
            config: config.clone(),
            layout,
            tensors,
        })
    }

    /// Same layout as `init` with every tensor zeroed (used for gradients).
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in &mut out.tensors {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_tensors(config: &AitrConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let (layout, expected) = build::<rand_chacha::ChaCha8Rng>(config, None);
        if expected.len() != tensors.len() {
            return Err(Error::ShapeError(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (e, t) in expected.iter().zip(&tensors) {
            if e.name != t.name || e.shape != t.shape || t.data.len() != e.data.len() {
                return Err(Error::ShapeError(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    t.name, t.shape, e.name, e.shape
                )));
            }
        }
        Ok(Self {
            config: config.clone(),
            layout,
            tensors,
        })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub(crate) fn vec(&self, i: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.tensors[i].data[..])
    }

    pub(crate) fn mat(&self, i: usize) -> ArrayView2<'_, f64> {
        let t = &self.tensors[i];
        let cols = t.shape[1..].iter().product();
        ArrayView2::from_shape((t.shape[0], cols), &t.data[..]).expect("tensor shape")
    }

    pub(crate) fn data_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.tensors[i].data
    }

    pub(crate) fn mat_mut(&mut self, i: usize) -> ArrayViewMut2<'_, f64> {
        let t = &mut self.tensors[i];
        let cols = t.shape[1..].iter().product();
        ArrayViewMut2::from_shape((t.shape[0], cols), &mut t.data[..]).expect("tensor shape")
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}
