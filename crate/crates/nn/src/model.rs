//! Encoder/decoder autoencoder emitting per-cell occupancy logits.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, NnResult};
use crate::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Geometry, LeakyRelu, Param};
use crate::real::Real;
use crate::tensor::Tensor;

/// Width and depth of the channel ladder. Encoder stage `i` outputs
/// `base_channels * 2^i` channels; the decoder mirrors it back down to
/// `base_channels` before the single-channel head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub depth: usize,
}

impl ModelConfig {
    /// 16-32-64-128.
    pub const FULL: ModelConfig = ModelConfig {
        base_channels: 16,
        depth: 4,
    };
    /// Half-width ladder, 8-16-32-64.
    pub const DESK: ModelConfig = ModelConfig {
        base_channels: 8,
        depth: 4,
    };
    /// Two stages, 2-4; small enough to check every parameter numerically.
    pub const TINY: ModelConfig = ModelConfig {
        base_channels: 2,
        depth: 2,
    };

    pub fn validate(&self) -> NnResult<()> {
        if self.base_channels == 0 || self.depth == 0 || self.depth > 8 {
            return Err(NnError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn encoder_channels(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|i| {
                let cin = if i == 0 { 1 } else { self.base_channels << (i - 1) };
                (cin, self.base_channels << i)
            })
            .collect()
    }

    pub fn decoder_channels(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|j| {
                let cin = self.base_channels << (self.depth - 1 - j);
                let cout = if j + 1 < self.depth {
                    self.base_channels << (self.depth - 2 - j)
                } else {
                    self.base_channels
                };
                (cin, cout)
            })
            .collect()
    }

    pub fn check_side(&self, side: usize) -> NnResult<()> {
        let f = 1usize << self.depth;
        if side == 0 || side % f != 0 {
            return Err(NnError::ShapeMismatch(format!(
                "side {side} is not a positive multiple of {f}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub enum Resample<T> {
    Down(Conv2d<T>),
    Up(ConvTranspose2d<T>),
}

/// Convolution (down or up), batch norm, LeakyReLU.
#[derive(Debug, Clone)]
pub struct Block<T> {
    pub conv: Resample<T>,
    pub bn: BatchNorm2d<T>,
    pub act: LeakyRelu<T>,
}

impl<T: Real> Block<T> {
    fn infer(&self, x: &Tensor<T>) -> NnResult<Tensor<T>> {
        let y = match &self.conv {
            Resample::Down(c) => c.infer(x)?,
            Resample::Up(c) => c.infer(x)?,
        };
        Ok(self.act.infer(&self.bn.infer(&y)?))
    }

    fn forward(&mut self, x: &Tensor<T>) -> NnResult<Tensor<T>> {
        let y = match &mut self.conv {
            Resample::Down(c) => c.forward(x)?,
            Resample::Up(c) => c.forward(x)?,
        };
        let y = self.bn.forward(&y)?;
        Ok(self.act.forward(&y))
    }

    fn clear_cache(&mut self) {
        match &mut self.conv {
            Resample::Down(c) => c.clear_cache(),
            Resample::Up(c) => c.clear_cache(),
        }
        self.bn.clear_cache();
        self.act.clear_cache();
    }

    fn backward(&mut self, dy: &Tensor<T>) -> NnResult<Tensor<T>> {
        let d = self.act.backward(dy)?;
        let d = self.bn.backward(&d)?;
        match &mut self.conv {
            Resample::Down(c) => c.backward(&d),
            Resample::Up(c) => c.backward(&d),
        }
    }

    fn params(&self) -> Vec<(String, &Param<T>)> {
        let conv = match &self.conv {
            Resample::Down(c) => c.params(),
            Resample::Up(c) => c.params(),
        };
        conv.into_iter()
            .map(|(n, p)| (format!("conv.{n}"), p))
            .chain(self.bn.params().into_iter().map(|(n, p)| (format!("bn.{n}"), p)))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let conv = match &mut self.conv {
            Resample::Down(c) => c.params_mut(),
            Resample::Up(c) => c.params_mut(),
        };
        conv.into_iter()
            .map(|(n, p)| (format!("conv.{n}"), p))
            .chain(self.bn.params_mut().into_iter().map(|(n, p)| (format!("bn.{n}"), p)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct AeModel<T> {
    pub config: ModelConfig,
    pub encoder: Vec<Block<T>>,
    pub decoder: Vec<Block<T>>,
    /// 3x3 convolution with bias and no normalization: unbounded logits.
    pub head: Conv2d<T>,
}

impl<T: Real> AeModel<T> {
    /// Weights drawn from N(0, 0.02) with a stream derived from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> NnResult<Self> {
        config.validate()?;
        let mut rng = gridwise_core::rng::stream(seed, &[0xAE]);
        let encoder = config
            .encoder_channels()
            .into_iter()
            .map(|(i, o)| Block {
                conv: Resample::Down(Conv2d::new(i, o, Geometry::DOWN, false, &mut rng)),
                bn: BatchNorm2d::new(o),
                act: LeakyRelu::default(),
            })
            .collect();
        let decoder = config
            .decoder_channels()
            .into_iter()
            .map(|(i, o)| Block {
                conv: Resample::Up(ConvTranspose2d::new(i, o, Geometry::DOWN, &mut rng)),
                bn: BatchNorm2d::new(o),
                act: LeakyRelu::default(),
            })
            .collect();
        let head = Conv2d::new(config.base_channels, 1, Geometry::SAME3, true, &mut rng);
        Ok(AeModel {
            config,
            encoder,
            decoder,
            head,
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> NnResult<()> {
        if x.channels() != 1 || x.rows() != x.cols() {
            return Err(NnError::ShapeMismatch(format!(
                "expected [N, 1, side, side], got {:?}",
                x.shape
            )));
        }
        self.config.check_side(x.rows())
    }

    /// Evaluation-mode forward pass using running batch-norm statistics.
    pub fn infer(&self, x: &Tensor<T>) -> NnResult<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for b in self.encoder.iter().chain(&self.decoder) {
            h = b.infer(&h)?;
        }
        self.head.infer(&h)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> NnResult<Tensor<T>> {
        if mode == Mode::Eval {
            return self.infer(x);
        }
        self.check_input(x)?;
        let mut h = x.clone();
        for b in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            h = b.forward(&h)?;
        }
        self.head.forward(&h)
    }

    /// Recomputes the running batch-norm statistics for the current weights as
    /// an equal-weight average over `batches`. Statistics accumulated during
    /// training lag behind the weights; this removes that lag.
    pub fn recalibrate_bn<I: IntoIterator<Item = Tensor<T>>>(&mut self, batches: I) -> NnResult<usize> {
        let saved: Vec<(Vec<T>, Vec<T>)> = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .map(|b| (b.bn.running_mean.clone(), b.bn.running_var.clone()))
            .collect();
        let mut seen = 0usize;
        for x in batches {
            for b in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
                if seen == 0 {
                    b.bn.running_mean.iter_mut().for_each(|v| *v = T::zero());
                    b.bn.running_var.iter_mut().for_each(|v| *v = T::zero());
                }
                b.bn.momentum = seen as f64 / (seen + 1) as f64;
            }
            let res = self.forward(&x, Mode::Train);
            for b in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
                b.bn.momentum = crate::layers::BN_MOMENTUM;
                b.clear_cache();
            }
            self.head.clear_cache();
            if let Err(e) = res {
                for (b, (m, v)) in self.encoder.iter_mut().chain(self.decoder.iter_mut()).zip(saved) {
                    b.bn.running_mean = m;
                    b.bn.running_var = v;
                }
                return Err(e);
            }
            seen += 1;
        }
        Ok(seen)
    }

    /// Back-propagates a gradient with respect to the logits of the last
    /// training forward pass, accumulating parameter gradients.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> NnResult<Tensor<T>> {
        let mut d = self.head.backward(dlogits)?;
        for b in self.decoder.iter_mut().rev().chain(self.encoder.iter_mut().rev()) {
            d = b.backward(&d)?;
        }
        Ok(d)
    }

    /// Parameters keyed by layer name, in a fixed order.
    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.iter().enumerate() {
            out.extend(b.params().into_iter().map(|(n, p)| (format!("enc{i}.{n}"), p)));
        }
        for (i, b) in self.decoder.iter().enumerate() {
            out.extend(b.params().into_iter().map(|(n, p)| (format!("dec{i}.{n}"), p)));
        }
        out.extend(self.head.params().into_iter().map(|(n, p)| (format!("head.{n}"), p)));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.iter_mut().enumerate() {
            out.extend(b.params_mut().into_iter().map(|(n, p)| (format!("enc{i}.{n}"), p)));
        }
        for (i, b) in self.decoder.iter_mut().enumerate() {
            out.extend(b.params_mut().into_iter().map(|(n, p)| (format!("dec{i}.{n}"), p)));
        }
        out.extend(self.head.params_mut().into_iter().map(|(n, p)| (format!("head.{n}"), p)));
        out
    }

    /// Running batch-norm statistics keyed by layer name.
    pub fn buffers(&self) -> Vec<(String, &Vec<T>)> {
        let mut out = Vec::new();
        let blocks = self
            .encoder
            .iter()
            .enumerate()
            .map(|(i, b)| (format!("enc{i}"), b))
            .chain(self.decoder.iter().enumerate().map(|(i, b)| (format!("dec{i}"), b)));
        for (name, b) in blocks {
            out.push((format!("{name}.bn.running_mean"), &b.bn.running_mean));
            out.push((format!("{name}.bn.running_var"), &b.bn.running_var));
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        let blocks = self
            .encoder
            .iter_mut()
            .enumerate()
            .map(|(i, b)| (format!("enc{i}"), b))
            .chain(self.decoder.iter_mut().enumerate().map(|(i, b)| (format!("dec{i}"), b)));
        for (name, b) in blocks {
            out.push((format!("{name}.bn.running_mean"), &mut b.bn.running_mean));
            out.push((format!("{name}.bn.running_var"), &mut b.bn.running_var));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// `sum w^2` over convolution weights.
    pub fn l2_penalty(&self) -> T {
        self.params()
            .into_iter()
            .filter(|(_, p)| p.decay)
            .map(|(_, p)| p.value.iter().map(|&w| w * w).sum::<T>())
            .sum()
    }

    /// Adds the gradient of `lambda * sum w^2`.
    pub fn add_l2_grad(&mut self, lambda: T) {
        let two = T::of(2.0);
        for (_, p) in self.params_mut() {
            if p.decay {
                for (g, &w) in p.grad.iter_mut().zip(&p.value) {
                    *g += two * lambda * w;
                }
            }
        }
    }

    /// LeakyReLU input signs of the last training pass, concatenated.
    pub fn activation_signs(&self) -> Vec<bool> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|b| b.act.signs().unwrap_or(&[]).iter().copied())
            .collect()
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> AeModel<U> {
        let mut out = AeModel::<U>::new(self.config, 0).expect("config already validated");
        for ((_, dst), (_, src)) in out.params_mut().into_iter().zip(self.params()) {
            dst.value = src.value.iter().map(|v| U::of(v.f64())).collect();
        }
        for ((_, dst), (_, src)) in out.buffers_mut().into_iter().zip(self.buffers()) {
            *dst = src.iter().map(|v| U::of(v.f64())).collect();
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.value.iter().all(|v| v.is_finite()))
            && self.buffers().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }
}

/// Occupancy in the `[-1, 1]` label scale: `tanh(l / 2) = 2 sigmoid(l) - 1`.
pub fn head_to_prob<T: Real>(logit: T) -> T {
    (logit * T::of(0.5)).tanh()
}

pub fn logits_to_probs<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    logits.map(head_to_prob)
}
