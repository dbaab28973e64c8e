//! Encoder configuration, construction and inference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fourier::Plans;
use crate::nn::layers::{BatchNorm, Conv2d, Ctx, Dense, Dropout, Gem, GlobalPool, Layer, MaxPool2, PRelu, Relu};
use crate::nn::tensor::Tensor;
use crate::rep_heads::{head_forward, HeadKind, HeadOutput};
use crate::scalar::{c, Real};
use crate::simulator::image::{bank_depth, blur_bank, preprocess, BlurMode};
use crate::so3::UnitQuaternion;
use crate::uncertainty::DispersionStats;

/// Convolutions `(kernel, channels)` followed by an optional 2×2 max pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub convs: Vec<(usize, usize)>,
    pub pool: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Gem { p_init: f64 },
    GlobalMax,
    MaxPlusAvg,
}

impl std::str::FromStr for Pooling {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gem" => Ok(Self::Gem { p_init: 3.0 }),
            "max" | "global_max" => Ok(Self::GlobalMax),
            "max_plus_avg" | "max+avg" => Ok(Self::MaxPlusAvg),
            other => Err(invalid(format!("unknown pooling {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    PRelu { alpha: f64 },
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_side: usize,
    pub blur: BlurMode,
    pub n_filters: usize,
    pub blocks: Vec<ConvBlock>,
    pub pooling: Pooling,
    pub activation: Activation,
    pub head: HeadKind,
    pub dropout: f64,
    pub l2: f64,
    pub batch_norm: bool,
}

impl EncoderConfig {
    /// Small encoder for 48-pixel images: four single-conv blocks of
    /// 16, 32, 64 and 128 channels, each followed by pooling. Dropout is off:
    /// with a thousand training images it only slowed convergence.
    pub fn desk() -> Self {
        Self {
            input_side: 48,
            blur: BlurMode::LowPass,
            n_filters: 3,
            blocks: [(5, 16), (3, 32), (3, 64), (3, 128)]
                .into_iter()
                .map(|kc| ConvBlock {
                    convs: vec![kc],
                    pool: true,
                })
                .collect(),
            pooling: Pooling::Gem { p_init: 3.0 },
            activation: Activation::PRelu { alpha: 0.25 },
            head: HeadKind::Qcqp,
            dropout: 0.0,
            l2: 1e-3,
            batch_norm: true,
        }
    }

    /// Full-size encoder for 128-pixel images with five blur filters.
    pub fn full() -> Self {
        let block = |convs: Vec<(usize, usize)>| ConvBlock { convs, pool: true };
        Self {
            input_side: 128,
            blur: BlurMode::LowPass,
            n_filters: 5,
            blocks: vec![
                block(vec![(7, 32)]),
                block(vec![(5, 64)]),
                block(vec![(3, 128), (3, 128)]),
                block(vec![(3, 256), (3, 256)]),
                block(vec![(3, 512), (3, 512)]),
                block(vec![(3, 1024), (3, 1024)]),
            ],
            dropout: 0.3,
            ..Self::desk()
        }
    }

    pub fn in_channels(&self) -> usize {
        bank_depth(self.blur, self.n_filters)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side < 2 {
            return Err(invalid("input_side must be at least 2"));
        }
        if self.blocks.is_empty() || self.blocks.iter().all(|b| b.convs.is_empty()) {
            return Err(invalid("encoder needs at least one convolution"));
        }
        if let Some(&(k, ch)) = self.blocks.iter().flat_map(|b| &b.convs).find(|(k, ch)| k % 2 == 0 || *ch == 0) {
            return Err(invalid(format!("conv ({k}, {ch}) needs an odd kernel and nonzero channels")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.l2 >= 0.0) {
            return Err(invalid("l2 must be nonnegative"));
        }
        if let Pooling::Gem { p_init } = self.pooling {
            if !(p_init > 0.0) {
                return Err(invalid(format!("GeM exponent {p_init} must be positive")));
            }
        }
        Ok(())
    }
}

/// One row of the shape report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerShape {
    pub name: String,
    pub output: Vec<usize>,
    pub params: usize,
}

/// A sequential encoder ending in a dense layer of head arity.
pub struct Model<T: Real> {
    pub config: EncoderConfig,
    pub seed: u64,
    pub layers: Vec<Box<dyn Layer<T>>>,
}

fn he_normal<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..n).map(|_| c(normal.sample(rng))).collect()
}

pub fn build_encoder<T: Real>(cfg: &EncoderConfig, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers: Vec<Box<dyn Layer<T>>> = Vec::new();
    let mut shape = vec![cfg.in_channels(), cfg.input_side, cfg.input_side];
    let push = |layers: &mut Vec<Box<dyn Layer<T>>>, shape: &mut Vec<usize>, layer: Box<dyn Layer<T>>| -> Result<()> {
        *shape = layer.output_shape(shape)?;
        layers.push(layer);
        Ok(())
    };
    for block in &cfg.blocks {
        for &(k, cout) in &block.convs {
            let cin = shape[0];
            let fan_in = cin * k * k;
            let w = he_normal(&mut rng, fan_in, cout * fan_in);
            push(&mut layers, &mut shape, Box::new(Conv2d::new(cin, cout, k, w, !cfg.batch_norm)?))?;
            if cfg.batch_norm {
                push(&mut layers, &mut shape, Box::new(BatchNorm::new(cout)))?;
            }
            let act: Box<dyn Layer<T>> = match cfg.activation {
                Activation::PRelu { alpha } => Box::new(PRelu::new(cout, c(alpha))),
                Activation::Relu => Box::new(Relu::new()),
            };
            push(&mut layers, &mut shape, act)?;
        }
        if block.pool {
            push(&mut layers, &mut shape, Box::new(MaxPool2::new()))?;
            if cfg.dropout > 0.0 {
                push(&mut layers, &mut shape, Box::new(Dropout::new(cfg.dropout)?))?;
            }
        }
    }
    let pool: Box<dyn Layer<T>> = match cfg.pooling {
        Pooling::Gem { p_init } => Box::new(Gem::new(c(p_init))?),
        Pooling::GlobalMax => Box::new(GlobalPool::max()),
        Pooling::MaxPlusAvg => Box::new(GlobalPool::max_plus_avg()),
    };
    push(&mut layers, &mut shape, pool)?;
    let fin = shape[0];
    let fout = cfg.head.arity();
    let w = he_normal(&mut rng, fin, fin * fout);
    push(&mut layers, &mut shape, Box::new(Dense::new(fin, fout, w)?))?;
    Ok(Model {
        config: cfg.clone(),
        seed,
        layers,
    })
}

/// Orientation estimate for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub q: UnitQuaternion<T>,
    /// Present for the QCQP head only.
    pub stats: Option<DispersionStats<T>>,
}

impl<T: Real> From<HeadOutput<T>> for Prediction<T> {
    fn from(h: HeadOutput<T>) -> Self {
        Self {
            q: h.q,
            stats: h.qcqp.map(|s| DispersionStats::from_eigen(&s.eigen)),
        }
    }
}

impl<T: Real> Model<T> {
    pub fn n_params(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|p| p.len()).sum()
    }

    /// Per-layer output shapes (per sample) and parameter counts.
    pub fn shapes(&self) -> Result<Vec<LayerShape>> {
        let mut shape = vec![self.config.in_channels(), self.config.input_side, self.config.input_side];
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
            out.push(LayerShape {
                name: l.name(),
                output: shape.clone(),
                params: l.params().iter().map(|p| p.len()).sum(),
            });
        }
        Ok(out)
    }

    /// Raw head inputs `[N, arity]` for a batch `[N, C, D, D]`.
    pub fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (k, l) in self.layers.iter_mut().enumerate() {
            h = l.forward(&h, ctx)?;
            h.check_finite(&format!("layer {k} ({}) output", l.name()))?;
        }
        Ok(h)
    }

    /// Propagates `∂L/∂raw` back, accumulating every parameter gradient.
    pub fn backward(&mut self, grad_raw: &[T]) -> Result<()> {
        let mut g = grad_raw.to_vec();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.params_mut().into_iter().for_each(|p| p.zero_grad());
        }
    }

    /// Stacks prepared inputs into a batch tensor.
    pub fn batch(&self, inputs: &[&[T]]) -> Result<Tensor<T>> {
        let d = self.config.input_side;
        let ch = self.config.in_channels();
        let per = ch * d * d;
        if let Some(bad) = inputs.iter().find(|x| x.len() != per) {
            return Err(invalid(format!("input has {} values, expected {per}", bad.len())));
        }
        let data: Vec<T> = inputs.iter().flat_map(|x| x.iter().copied()).collect();
        Tensor::new(vec![inputs.len(), ch, d, d], data)
    }

    /// Eval-mode predictions for prepared inputs (see [`prepare_inputs`]).
    ///
    /// Batch norm uses running statistics and dropout is off, so each output
    /// depends on its own image only.
    pub fn infer(&mut self, inputs: &[Vec<T>], batch_size: usize) -> Result<Vec<Prediction<T>>> {
        let mut ctx = Ctx {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        let arity = self.config.head.arity();
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(batch_size.max(1)) {
            let refs: Vec<&[T]> = chunk.iter().map(|x| x.as_slice()).collect();
            let raw = self.forward(&self.batch(&refs)?, &mut ctx)?;
            for r in raw.data.chunks(arity) {
                out.push(head_forward(self.config.head, r)?.into());
            }
        }
        Ok(out)
    }
}

/// Normalizes each `d × d` image inside the particle mask and expands it into
/// the configured blur bank.
pub fn prepare_inputs<T: Real>(images: &[Vec<T>], cfg: &EncoderConfig) -> Result<Vec<Vec<T>>> {
    let d = cfg.input_side;
    let plans = Plans::new(d);
    images
        .iter()
        .map(|img| {
            if img.len() != d * d {
                return Err(invalid(format!("image has {} pixels, expected {d}²", img.len())));
            }
            Ok(blur_bank(&plans, &preprocess(img, d)?, cfg.blur, cfg.n_filters))
        })
        .collect()
}
