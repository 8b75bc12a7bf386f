//! Layer suite: convolution, transposed convolution, batch norm, LeakyReLU.
//!
//! Every layer has a pure `infer` (evaluation) path and a caching
//! `forward`/`backward` pair used in training. Backward accumulates into the
//! parameter gradients; call [`Param::zero_grad`] between steps.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NnError, NnResult};
use crate::real::Real;
use crate::tensor::Tensor;

/// Learnable tensor with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Whether the L2 penalty applies.
    pub decay: bool,
}

impl<T: Real> Param<T> {
    pub fn filled(shape: Vec<usize>, v: T, decay: bool) -> Self {
        let n = shape.iter().product();
        Param {
            shape,
            value: vec![v; n],
            grad: vec![T::zero(); n],
            decay,
        }
    }

    pub fn normal(shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("valid std");
        let mut p = Self::filled(shape, T::zero(), true);
        for v in &mut p.value {
            *v = T::of(dist.sample(rng));
        }
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Geometry {
    pub const DOWN: Geometry = Geometry {
        kernel: 4,
        stride: 2,
        pad: 1,
    };
    pub const SAME3: Geometry = Geometry {
        kernel: 3,
        stride: 1,
        pad: 1,
    };

    /// Output length of a convolution over `n` input samples.
    pub fn conv_out(&self, n: usize) -> NnResult<usize> {
        let padded = n + 2 * self.pad;
        if padded < self.kernel || self.stride == 0 {
            return Err(NnError::ShapeMismatch(format!(
                "input length {n} too small for kernel {}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// Output length of the transposed convolution over `n` input samples.
    pub fn tconv_out(&self, n: usize) -> NnResult<usize> {
        let full = (n.max(1) - 1) * self.stride + self.kernel;
        if n == 0 || full < 2 * self.pad {
            return Err(NnError::ShapeMismatch(format!("input length {n} too small")));
        }
        Ok(full - 2 * self.pad)
    }
}

/// Unrolls `x` (`c x h x w`) into `(c*k*k) x (ho*wo)` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, g: Geometry, ho: usize, wo: usize, cols: &mut [T]) {
    let k = g.kernel;
    let p = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((ci * k + ki) * k + kj) * p..][..p];
                for oi in 0..ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut row[oi * wo..(oi + 1) * wo];
                    if ii < 0 || ii >= h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                    for (oj, v) in out.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *v = if jj < 0 || jj >= w as isize {
                            T::zero()
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, g: Geometry, ho: usize, wo: usize, x: &mut [T]) {
    let k = g.kernel;
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((ci * k + ki) * k + kj) * p..][..p];
                for oi in 0..ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                    for (oj, &v) in row[oi * wo..(oi + 1) * wo].iter().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < w as isize {
                            dst[jj as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_channels(x: &Tensor<impl Real>, expected: usize, layer: &str) -> NnResult<()> {
    if x.channels() != expected {
        return Err(NnError::ShapeMismatch(format!(
            "{layer} expects {expected} channels, got {}",
            x.channels()
        )));
    }
    Ok(())
}

fn check_same_shape(a: [usize; 4], b: [usize; 4], layer: &str) -> NnResult<()> {
    if a != b {
        return Err(NnError::ShapeMismatch(format!("{layer}: gradient shape {b:?} vs output {a:?}")));
    }
    Ok(())
}

/// 2-D convolution, weight layout `[out, in, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: Geometry,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<([usize; 4], Vec<T>)>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, geometry: Geometry, bias: bool, rng: &mut impl Rng) -> Self {
        let k = geometry.kernel;
        Conv2d {
            in_channels,
            out_channels,
            geometry,
            weight: Param::normal(vec![out_channels, in_channels, k, k], 0.02, rng),
            bias: bias.then(|| Param::filled(vec![out_channels], T::zero(), false)),
            cache: None,
        }
    }

    pub fn output_shape(&self, input: [usize; 4]) -> NnResult<[usize; 4]> {
        Ok([
            input[0],
            self.out_channels,
            self.geometry.conv_out(input[2])?,
            self.geometry.conv_out(input[3])?,
        ])
    }

    fn run(&self, x: &Tensor<T>, keep_cols: bool) -> NnResult<(Tensor<T>, Vec<T>)> {
        check_channels(x, self.in_channels, "conv")?;
        let shape = self.output_shape(x.shape)?;
        let (ho, wo) = (shape[2], shape[3]);
        let kk = self.in_channels * self.geometry.kernel * self.geometry.kernel;
        let p = ho * wo;
        let mut y = Tensor::zeros(shape);
        let mut all_cols = if keep_cols { vec![T::zero(); x.batch() * kk * p] } else { Vec::new() };
        let mut scratch = vec![T::zero(); if keep_cols { 0 } else { kk * p }];
        for n in 0..x.batch() {
            let cols: &mut [T] = if keep_cols {
                &mut all_cols[n * kk * p..(n + 1) * kk * p]
            } else {
                &mut scratch
            };
            im2col(x.sample(n), self.in_channels, x.rows(), x.cols(), self.geometry, ho, wo, cols);
            let out = y.sample_mut(n);
            T::gemm(
                self.out_channels,
                kk,
                p,
                T::one(),
                &self.weight.value,
                (kk, 1),
                cols,
                (p, 1),
                T::zero(),
                out,
                (p, 1),
            );
            if let Some(b) = &self.bias {
                for (co, plane) in out.chunks_mut(p).enumerate() {
                    plane.iter_mut().for_each(|v| *v += b.value[co]);
                }
            }
        }
        Ok((y, all_cols))
    }

    pub fn infer(&self, x: &Tensor<T>) -> NnResult<Tensor<T>> {
        Ok(self.run(x, false)?.0)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> NnResult<Tensor<T>> {
        let (y, cols) = self.run(x, true)?;
        self.cache = Some((x.shape, cols));
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> NnResult<Tensor<T>> {
        let (dx_shape, cols) = self
            .cache
            .take()
            .ok_or_else(|| NnError::ShapeMismatch("conv backward without forward".into()))?;
        let mut dx = Tensor::zeros(dx_shape);
        check_same_shape(self.output_shape(dx.shape)?, dy.shape, "conv")?;
        let (ho, wo) = (dy.rows(), dy.cols());
        let kk = self.in_channels * self.geometry.kernel * self.geometry.kernel;
        let p = ho * wo;
        let mut dcols = vec![T::zero(); kk * p];
        let (h, w) = (dx.rows(), dx.cols());
        for n in 0..dy.batch() {
            let g = dy.sample(n);
            let c = &cols[n * kk * p..(n + 1) * kk * p];
            T::gemm(
                self.out_channels,
                p,
                kk,
                T::one(),
                g,
                (p, 1),
                c,
                (1, p),
                T::one(),
                &mut self.weight.grad,
                (kk, 1),
            );
            if let Some(b) = &mut self.bias {
                for (co, plane) in g.chunks(p).enumerate() {
                    b.grad[co] += plane.iter().copied().sum::<T>();
                }
            }
            T::gemm(
                kk,
                self.out_channels,
                p,
                T::one(),
                &self.weight.value,
                (1, kk),
                g,
                (p, 1),
                T::zero(),
                &mut dcols,
                (p, 1),
            );
            col2im(&dcols, self.in_channels, h, w, self.geometry, ho, wo, dx.sample_mut(n));
        }
        Ok(dx)
    }

    /// Drops the activations kept for the backward pass.
    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        let mut v = vec![("weight", &mut self.weight)];
        if let Some(b) = &mut self.bias {
            v.push(("bias", b));
        }
        v
    }

    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        let mut v = vec![("weight", &self.weight)];
        if let Some(b) = &self.bias {
            v.push(("bias", b));
        }
        v
    }
}

/// Transposed convolution, the adjoint of [`Conv2d`] with the same geometry.
/// Weight layout `[in, out, k, k]`; no bias (a batch norm always follows).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: Geometry,
    pub weight: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, geometry: Geometry, rng: &mut impl Rng) -> Self {
        let k = geometry.kernel;
        ConvTranspose2d {
            in_channels,
            out_channels,
            geometry,
            weight: Param::normal(vec![in_channels, out_channels, k, k], 0.02, rng),
            cache: None,
        }
    }

    pub fn output_shape(&self, input: [usize; 4]) -> NnResult<[usize; 4]> {
        Ok([
            input[0],
            self.out_channels,
            self.geometry.tconv_out(input[2])?,
            self.geometry.tconv_out(input[3])?,
        ])
    }

    pub fn infer(&self, x: &Tensor<T>) -> NnResult<Tensor<T>> {
        check_channels(x, self.in_channels, "transposed conv")?;
        let shape = self.output_shape(x.shape)?;
        let (h, w) = (x.rows(), x.cols());
        let kc = self.out_channels * self.geometry.kernel * self.geometry.kernel;
        let p = h * w;
        let mut y = Tensor::zeros(shape);
        let mut cols = vec![T::zero(); kc * p];
        for n in 0..x.batch() {
            T::gemm(
                kc,
                self.in_channels,
                p,
                T::one(),
                &self.weight.value,
                (1, kc),
                x.sample(n),
                (p, 1),
                T::zero(),
                &mut cols,
                (p, 1),
            );
            col2im(&cols, self.out_channels, shape[2], shape[3], self.geometry, h, w, y.sample_mut(n));
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> NnResult<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> NnResult<Tensor<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| NnError::ShapeMismatch("transposed conv backward without forward".into()))?;
        check_same_shape(self.output_shape(x.shape)?, dy.shape, "transposed conv")?;
        let (h, w) = (x.rows(), x.cols());
        let kc = self.out_channels * self.geometry.kernel * self.geometry.kernel;
        let p = h * w;
        let mut dx = Tensor::zeros(x.shape);
        let mut dcols = vec![T::zero(); kc * p];
        for n in 0..dy.batch() {
            im2col(dy.sample(n), self.out_channels, dy.rows(), dy.cols(), self.geometry, h, w, &mut dcols);
            T::gemm(
                self.in_channels,
                kc,
                p,
                T::one(),
                &self.weight.value,
                (kc, 1),
                &dcols,
                (p, 1),
                T::zero(),
                dx.sample_mut(n),
                (p, 1),
            );
            T::gemm(
                self.in_channels,
                p,
                kc,
                T::one(),
                x.sample(n),
                (p, 1),
                &dcols,
                (1, p),
                T::one(),
                &mut self.weight.grad,
                (kc, 1),
            );
        }
        Ok(dx)
    }

    /// Drops the activations kept for the backward pass.
    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![("weight", &mut self.weight)]
    }

    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        vec![("weight", &self.weight)]
    }
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization. Training uses batch statistics and
/// updates the running estimates as `r = momentum * r + (1 - momentum) * batch`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::filled(vec![channels], T::one(), false),
            beta: Param::filled(vec![channels], T::zero(), false),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    fn planes(x: &Tensor<T>, c: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let hw = x.rows() * x.cols();
        let cs = x.channels() * hw;
        (0..x.batch()).map(move |n| n * cs + c * hw..n * cs + (c + 1) * hw)
    }

    pub fn infer(&self, x: &Tensor<T>) -> NnResult<Tensor<T>> {
        check_channels(x, self.channels, "batch norm")?;
        let mut y = x.clone();
        for c in 0..self.channels {
            let inv = T::one() / (self.running_var[c] + T::of(self.eps)).sqrt();
            let scale = self.gamma.value[c] * inv;
            let shift = self.beta.value[c] - self.running_mean[c] * scale;
            for r in Self::planes(x, c) {
                y.data[r].iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> NnResult<Tensor<T>> {
        check_channels(x, self.channels, "batch norm")?;
        let m = x.batch() * x.rows() * x.cols();
        if m < 2 {
            return Err(NnError::ShapeMismatch("batch norm needs at least two values per channel".into()));
        }
        let mf = T::of(m as f64);
        let mut xhat = x.clone();
        let mut inv_std = vec![T::zero(); self.channels];
        let mut y = x.clone();
        for c in 0..self.channels {
            let mut sum = T::zero();
            for r in Self::planes(x, c) {
                sum += x.data[r].iter().copied().sum::<T>();
            }
            let mean = sum / mf;
            let mut sq = T::zero();
            for r in Self::planes(x, c) {
                sq += x.data[r].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
            }
            let var = sq / mf;
            let inv = T::one() / (var + T::of(self.eps)).sqrt();
            inv_std[c] = inv;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for r in Self::planes(x, c) {
                for (h, o) in xhat.data[r.clone()].iter_mut().zip(&mut y.data[r]) {
                    *h = (*h - mean) * inv;
                    *o = g * *h + b;
                }
            }
            let mom = T::of(self.momentum);
            let unbiased = var * mf / T::of((m - 1) as f64);
            self.running_mean[c] = mom * self.running_mean[c] + (T::one() - mom) * mean;
            self.running_var[c] = mom * self.running_var[c] + (T::one() - mom) * unbiased;
        }
        self.cache = Some((xhat, inv_std));
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> NnResult<Tensor<T>> {
        let (xhat, inv_std) = self
            .cache
            .take()
            .ok_or_else(|| NnError::ShapeMismatch("batch norm backward without forward".into()))?;
        check_same_shape(xhat.shape, dy.shape, "batch norm")?;
        let m = T::of((dy.batch() * dy.rows() * dy.cols()) as f64);
        let mut dx = Tensor::zeros(dy.shape);
        for c in 0..self.channels {
            let (mut sdy, mut sdyx) = (T::zero(), T::zero());
            for r in Self::planes(dy, c) {
                for (&g, &h) in dy.data[r.clone()].iter().zip(&xhat.data[r]) {
                    sdy += g;
                    sdyx += g * h;
                }
            }
            self.gamma.grad[c] += sdyx;
            self.beta.grad[c] += sdy;
            let k = self.gamma.value[c] * inv_std[c] / m;
            for r in Self::planes(dy, c) {
                for ((d, &g), &h) in dx.data[r.clone()].iter_mut().zip(&dy.data[r.clone()]).zip(&xhat.data[r]) {
                    *d = k * (m * g - sdy - h * sdyx);
                }
            }
        }
        Ok(dx)
    }

    /// Drops the activations kept for the backward pass.
    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        vec![("gamma", &mut self.gamma), ("beta", &mut self.beta)]
    }

    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        vec![("gamma", &self.gamma), ("beta", &self.beta)]
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct LeakyRelu<T> {
    pub slope: T,
    positive: Option<Vec<bool>>,
}

impl<T: Real> Default for LeakyRelu<T> {
    fn default() -> Self {
        LeakyRelu {
            slope: T::of(LEAKY_SLOPE),
            positive: None,
        }
    }
}

impl<T: Real> LeakyRelu<T> {
    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let s = self.slope;
        x.map(|v| if v > T::zero() { v } else { v * s })
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.positive = Some(x.data.iter().map(|&v| v > T::zero()).collect());
        self.infer(x)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> NnResult<Tensor<T>> {
        let pos = self
            .positive
            .take()
            .ok_or_else(|| NnError::ShapeMismatch("activation backward without forward".into()))?;
        if pos.len() != dy.data.len() {
            return Err(NnError::ShapeMismatch("activation gradient length".into()));
        }
        let mut dx = dy.clone();
        for (d, p) in dx.data.iter_mut().zip(pos) {
            if !p {
                *d *= self.slope;
            }
        }
        Ok(dx)
    }

    /// Sign pattern of the last training input (for kink detection).
    pub fn clear_cache(&mut self) {
        self.positive = None;
    }

    pub fn signs(&self) -> Option<&[bool]> {
        self.positive.as_deref()
    }
}
