//! Layers with hand-written reverse passes. Activations are batch-major
//! `[N, C, H, W]` (or `[N, F]` after global pooling).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::nn::tensor::Tensor;
use crate::scalar::{c, cu, Real};

/// Per-forward state: mode and the dropout stream.
pub struct Ctx {
    pub train: bool,
    pub rng: ChaCha8Rng,
}

pub trait Layer<T: Real>: Send + Sync {
    fn name(&self) -> String;
    /// Per-sample output shape for a per-sample input shape.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>>;
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>>;
    /// Gradient w.r.t. the last forward input; accumulates parameter grads.
    fn backward(&mut self, gy: &[T]) -> Result<Vec<T>>;
    fn params(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }
    /// Which of [`Layer::params`] receive the L2 penalty.
    fn l2_mask(&self) -> Vec<bool> {
        Vec::new()
    }
    /// Non-trainable state saved with the weights (batch-norm statistics).
    fn buffers(&self) -> Vec<&Vec<T>> {
        Vec::new()
    }
    fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        Vec::new()
    }
    /// Called after each optimizer step.
    fn post_update(&mut self) {}
}

fn batch_dims(x: &Tensor<impl Real>, rank: usize, what: &str) -> Result<()> {
    if x.shape.len() != rank {
        return Err(invalid(format!("{what} expects rank {rank}, got shape {:?}", x.shape)));
    }
    Ok(())
}

fn cached<'a, U>(c: &'a Option<U>, what: &str) -> Result<&'a U> {
    c.as_ref().ok_or_else(|| invalid(format!("{what}: backward called before forward")))
}

// ---------------------------------------------------------------- conv

/// Same-padded stride-1 convolution, odd kernel.
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// `[cout, cin·k·k]`
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(cin: usize, cout: usize, k: usize, weight: Vec<T>, bias: bool) -> Result<Self> {
        if k % 2 == 0 {
            return Err(invalid(format!("kernel size {k} must be odd")));
        }
        if weight.len() != cout * cin * k * k {
            return Err(invalid("conv weight has the wrong length"));
        }
        Ok(Self {
            cin,
            cout,
            k,
            weight: Tensor::param(vec![cout, cin * k * k], weight),
            bias: bias.then(|| Tensor::param(vec![cout], vec![T::zero(); cout])),
            input: None,
        })
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, cols: &mut [T]) {
        let k = self.k;
        let p = k / 2;
        let hw = h * w;
        for ci in 0..self.cin {
            let plane = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                    let x_lo = p.saturating_sub(kx);
                    let x_hi = (w + p).saturating_sub(kx).min(w);
                    for y in 0..h {
                        let sy = y + ky;
                        let out = &mut row[y * w..(y + 1) * w];
                        if sy < p || sy - p >= h {
                            out.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[(sy - p) * w..(sy - p + 1) * w];
                        out[..x_lo].iter_mut().for_each(|v| *v = T::zero());
                        if x_hi > x_lo {
                            out[x_lo..x_hi].copy_from_slice(&src[x_lo + kx - p..x_hi + kx - p]);
                        }
                        out[x_hi.max(x_lo)..].iter_mut().for_each(|v| *v = T::zero());
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, dx: &mut [T]) {
        let k = self.k;
        let p = k / 2;
        let hw = h * w;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                    let x_lo = p.saturating_sub(kx);
                    let x_hi = (w + p).saturating_sub(kx).min(w);
                    if x_hi <= x_lo {
                        continue;
                    }
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < p || sy - p >= h {
                            continue;
                        }
                        let dst = &mut plane[(sy - p) * w..(sy - p + 1) * w];
                        let src = &row[y * w..(y + 1) * w];
                        for (d, s) in dst[x_lo + kx - p..x_hi + kx - p].iter_mut().zip(&src[x_lo..x_hi]) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn name(&self) -> String {
        format!("conv{}x{}({}->{})", self.k, self.k, self.cin, self.cout)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 || input[0] != self.cin {
            return Err(invalid(format!("{} got per-sample shape {input:?}", self.name())));
        }
        Ok(vec![self.cout, input[1], input[2]])
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        batch_dims(x, 4, "conv")?;
        let (n, h, w) = (x.shape[0], x.shape[2], x.shape[3]);
        self.output_shape(&x.shape[1..])?;
        let hw = h * w;
        let kk = self.cin * self.k * self.k;
        let mut cols = vec![T::zero(); kk * hw];
        let mut out = Tensor::zeros(vec![n, self.cout, h, w]);
        for b in 0..n {
            self.im2col(&x.data[b * self.cin * hw..(b + 1) * self.cin * hw], h, w, &mut cols);
            let y = &mut out.data[b * self.cout * hw..(b + 1) * self.cout * hw];
            T::gemm(self.cout, kk, hw, T::one(), &self.weight.data, false, &cols, false, T::zero(), y);
            if let Some(bias) = &self.bias {
                for (co, row) in y.chunks_mut(hw).enumerate() {
                    row.iter_mut().for_each(|v| *v += bias.data[co]);
                }
            }
        }
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        let x = cached(&self.input, "conv")?;
        let (n, h, w) = (x.shape[0], x.shape[2], x.shape[3]);
        let hw = h * w;
        let kk = self.cin * self.k * self.k;
        let mut cols = vec![T::zero(); kk * hw];
        let mut dcols = vec![T::zero(); kk * hw];
        let mut dx = vec![T::zero(); x.data.len()];
        let xdata = &x.data;
        for b in 0..n {
            self.im2col(&xdata[b * self.cin * hw..(b + 1) * self.cin * hw], h, w, &mut cols);
            let g = &gy[b * self.cout * hw..(b + 1) * self.cout * hw];
            let wgrad = self.weight.grad.as_mut().expect("parameter gradient buffer");
            T::gemm(self.cout, hw, kk, T::one(), g, false, &cols, true, T::one(), wgrad);
            if let Some(bias) = &mut self.bias {
                let bg = bias.grad.as_mut().expect("parameter gradient buffer");
                for (co, row) in g.chunks(hw).enumerate() {
                    bg[co] += row.iter().copied().sum::<T>();
                }
            }
            T::gemm(kk, self.cout, hw, T::one(), &self.weight.data, true, g, false, T::zero(), &mut dcols);
            self.col2im(&dcols, h, w, &mut dx[b * self.cin * hw..(b + 1) * self.cin * hw]);
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.as_ref());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }

    fn l2_mask(&self) -> Vec<bool> {
        let mut v = vec![true];
        if self.bias.is_some() {
            v.push(false);
        }
        v
    }
}

// ---------------------------------------------------------------- batch norm

/// Per-channel batch normalization over `N × spatial`.
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
    cache: Option<BnCache<T>>,
}

struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
    train: bool,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Tensor::param(vec![channels], vec![T::one(); channels]),
            beta: Tensor::param(vec![channels], vec![T::zero(); channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: c(0.1),
            eps: c(1e-5),
            cache: None,
        }
    }
}

impl<T: Real> Layer<T> for BatchNorm<T> {
    fn name(&self) -> String {
        format!("batchnorm({})", self.channels)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.first() != Some(&self.channels) {
            return Err(invalid(format!("{} got per-sample shape {input:?}", self.name())));
        }
        Ok(input.to_vec())
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        self.output_shape(&x.shape[1..])?;
        let n = x.shape[0];
        let cch = self.channels;
        let s: usize = x.shape[2..].iter().product();
        let m = n * s;
        let mut inv_std = vec![T::zero(); cch];
        let mut mean = vec![T::zero(); cch];
        if ctx.train {
            if m < 2 {
                return Err(invalid("batch norm needs at least two values per channel in training"));
            }
            for ch in 0..cch {
                let mut acc = T::zero();
                for b in 0..n {
                    acc += x.data[(b * cch + ch) * s..][..s].iter().copied().sum::<T>();
                }
                let mu = acc / cu(m);
                let mut var = T::zero();
                for b in 0..n {
                    for v in &x.data[(b * cch + ch) * s..][..s] {
                        var += (*v - mu) * (*v - mu);
                    }
                }
                var /= cu(m);
                mean[ch] = mu;
                inv_std[ch] = T::one() / (var + self.eps).sqrt();
                let unbiased = var * cu(m) / cu(m - 1);
                self.running_mean[ch] = (T::one() - self.momentum) * self.running_mean[ch] + self.momentum * mu;
                self.running_var[ch] = (T::one() - self.momentum) * self.running_var[ch] + self.momentum * unbiased;
            }
        } else {
            for ch in 0..cch {
                mean[ch] = self.running_mean[ch];
                inv_std[ch] = T::one() / (self.running_var[ch] + self.eps).sqrt();
            }
        }
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut out = Tensor::zeros(x.shape.clone());
        for b in 0..n {
            for ch in 0..cch {
                let off = (b * cch + ch) * s;
                let (g, be, mu, is) = (self.gamma.data[ch], self.beta.data[ch], mean[ch], inv_std[ch]);
                for k in off..off + s {
                    let h = (x.data[k] - mu) * is;
                    xhat[k] = h;
                    out.data[k] = g * h + be;
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            shape: x.shape.clone(),
            train: ctx.train,
        });
        Ok(out)
    }

    fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        let cache = cached(&self.cache, "batchnorm")?;
        let n = cache.shape[0];
        let cch = self.channels;
        let s: usize = cache.shape[2..].iter().product();
        let m = cu::<T>(n * s);
        let mut dx = vec![T::zero(); gy.len()];
        let gg = self.gamma.grad.as_mut().expect("parameter gradient buffer");
        let bg = self.beta.grad.as_mut().expect("parameter gradient buffer");
        for ch in 0..cch {
            let (mut sg, mut sgx) = (T::zero(), T::zero());
            for b in 0..n {
                let off = (b * cch + ch) * s;
                for k in off..off + s {
                    sg += gy[k];
                    sgx += gy[k] * cache.xhat[k];
                }
            }
            gg[ch] += sgx;
            bg[ch] += sg;
            let scale = self.gamma.data[ch] * cache.inv_std[ch];
            for b in 0..n {
                let off = (b * cch + ch) * s;
                for k in off..off + s {
                    dx[k] = if cache.train {
                        scale * (gy[k] - (sg + cache.xhat[k] * sgx) / m)
                    } else {
                        scale * gy[k]
                    };
                }
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn l2_mask(&self) -> Vec<bool> {
        vec![false, false]
    }

    fn buffers(&self) -> Vec<&Vec<T>> {
        vec![&self.running_mean, &self.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

// ---------------------------------------------------------------- activations

/// `x` for `x > 0`, else `α_c x`, one slope per channel.
pub struct PRelu<T> {
    pub alpha: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> PRelu<T> {
    pub fn new(channels: usize, alpha: T) -> Self {
        Self {
            alpha: Tensor::param(vec![channels], vec![alpha; channels]),
            input: None,
        }
    }
}

impl<T: Real> Layer<T> for PRelu<T> {
    fn name(&self) -> String {
        format!("prelu({})", self.alpha.len())
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.first() != Some(&self.alpha.len()) {
            return Err(invalid(format!("{} got per-sample shape {input:?}", self.name())));
        }
        Ok(input.to_vec())
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        self.output_shape(&x.shape[1..])?;
        let cch = self.alpha.len();
        let s: usize = x.shape[2..].iter().product();
        let mut out = x.clone();
        out.requires_grad = false;
        out.grad = None;
        for (k, v) in out.data.iter_mut().enumerate() {
            if *v <= T::zero() {
                *v *= self.alpha.data[(k / s) % cch];
            }
        }
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        let x = cached(&self.input, "prelu")?;
        let cch = self.alpha.len();
        let s: usize = x.shape[2..].iter().product();
        let ag = self.alpha.grad.as_mut().expect("parameter gradient buffer");
        let mut dx = gy.to_vec();
        for (k, d) in dx.iter_mut().enumerate() {
            let xv = x.data[k];
            if xv <= T::zero() {
                let ch = (k / s) % cch;
                ag[ch] += *d * xv;
                *d *= self.alpha.data[ch];
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.alpha]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.alpha]
    }

    fn l2_mask(&self) -> Vec<bool> {
        vec![false]
    }
}

pub struct Relu<T> {
    input: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Self { input: None }
    }
}

impl<T: Real> Default for Relu<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Layer<T> for Relu<T> {
    fn name(&self) -> String {
        "relu".into()
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        let data = x.data.iter().map(|&v| v.max(T::zero())).collect();
        self.input = Some(x.clone());
        Tensor::new(x.shape.clone(), data)
    }

    fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        let x = cached(&self.input, "relu")?;
        Ok(gy
            .iter()
            .zip(&x.data)
            .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
            .collect())
    }
}

// ---------------------------------------------------------------- pooling

/// 2×2 stride-2 max pooling; odd trailing rows/columns are dropped.
pub struct MaxPool2 {
    argmax: Option<(Vec<usize>, usize)>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self { argmax: None }
    }
}

impl Default for MaxPool2 {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Layer<T> for MaxPool2 {
    fn name(&self) -> String {
        "maxpool2x2".into()
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 || input[1] < 2 || input[2] < 2 {
            return Err(invalid(format!("maxpool got per-sample shape {input:?}")));
        }
        Ok(vec![input[0], input[1] / 2, input[2] / 2])
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        batch_dims(x, 4, "maxpool")?;
        let os = <Self as Layer<T>>::output_shape(self, &x.shape[1..])?;
        let (n, cch, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let (oh, ow) = (os[1], os[2]);
        let mut out = Tensor::zeros(vec![n, cch, oh, ow]);
        let mut arg = vec![0usize; out.data.len()];
        for p in 0..n * cch {
            let plane = &x.data[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let k = (2 * oy + dy) * w + 2 * ox + dx;
                        if plane[k] > plane[best] {
                            best = k;
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    out.data[o] = plane[best];
                    arg[o] = p * h * w + best;
                }
            }
        }
        self.argmax = Some((arg, x.data.len()));
        Ok(out)
    }

    fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        let (arg, len) = cached(&self.argmax, "maxpool")?;
        let mut dx = vec![T::zero(); *len];
        for (g, &k) in gy.iter().zip(arg) {
            dx[k] += *g;
        }
        Ok(dx)
    }
}

/// Inverted dropout with one mask per step shared by every sample.
pub struct Dropout<T> {
    pub rate: f64,
    mask: Option<Vec<T>>,
}

impl<T: Real> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Self { rate, mask: None })
    }
}

impl<T: Real> Layer<T> for Dropout<T> {
    fn name(&self) -> String {
        format!("dropout({})", self.rate)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx) -> Result<Tensor<T>> {
        let per: usize = x.shape[1..].iter().product();
        if !ctx.train || self.rate == 0.0 {
            self.mask = Some(vec![T::one(); per]);
            return Ok(Tensor::new(x.shape.clone(), x.data.clone())?);
        }
        let scale = c::<T>(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..per)
            .map(|_| if ctx.rng.gen::<f64>() < self.rate { T::zero() } else { scale })
            .collect();
        let data = x.data.iter().enumerate().map(|(k, &v)| v * mask[k % per]).collect();
        self.mask = Some(mask);
        Tensor::new(x.shape.clone(), data)
    }

    fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        let mask = cached(&self.mask, "dropout")?;
        let per = mask.len();
        Ok(gy.iter().enumerate().map(|(k, &g)| g * mask[k % per]).collect())
    }
}

/// Floor applied before the generalized mean so `x^p` is defined.
pub const GEM_EPS: f64 = 1e-6;

/// Generalized-mean global pooling `(mean x^p)^{1/p}` with learnable `p`.
pub struct Gem<T> {
    pub p: Tensor<T>,
    cache: Option<GemCache<T>>,
}

struct GemCache<T> {
    input: Tensor<T>,
    out: Vec<T>,
    mean_pow: Vec<T>,
}

impl<T: Real> Gem<T> {
    pub fn new(p: T) -> Result<Self> {
        if !(p > T::zero()) {
            return Err(invalid(format!("GeM exponent {p} must be positive")));
        }
        Ok(Self {
            p: Tensor::param(vec![1], vec![p]),
            cache: None,
        })
    }
}

impl<T: Real> Layer<T> for Gem<T> {
    fn name(&self) -> String {
        "gem".into()
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 {
            return Err(invalid(format!("gem got per-sample shape {input:?}")));
        }
        Ok(vec![input[0]])
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        batch_dims(x, 4, "gem")?;
        let p = self.p.data[0];
        if !(p > T::zero()) {
            return Err(invalid(format!("GeM exponent {p} must be positive")));
        }
        let (n, cch) = (x.shape[0], x.shape[1]);
        let s = x.shape[2] * x.shape[3];
        let eps = c::<T>(GEM_EPS);
        let mut out = vec![T::zero(); n * cch];
        let mut mean_pow = vec![T::zero(); n * cch];
        for (o, plane) in x.data.chunks(s).enumerate() {
            let m = plane.iter().map(|&v| v.max(eps).powf(p)).sum::<T>() / cu(s);
            mean_pow[o] = m;
            out[o] = m.powf(T::one() / p);
        }
        self.cache = Some(GemCache {
            input: x.clone(),
            out: out.clone(),
            mean_pow,
        });
        Tensor::new(vec![n, cch], out)
    }

    fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        let cache = cached(&self.cache, "gem")?;
        let x = &cache.input;
        let p = self.p.data[0];
        let s = x.shape[2] * x.shape[3];
        let eps = c::<T>(GEM_EPS);
        let mut dx = vec![T::zero(); x.data.len()];
        let mut dp = T::zero();
        for (o, plane) in x.data.chunks(s).enumerate() {
            let f = cache.out[o];
            let m = cache.mean_pow[o];
            let g = gy[o];
            let coef = f.powf(T::one() - p) / cu(s);
            let mut m_log = T::zero();
            for (k, &v) in plane.iter().enumerate() {
                let xs = v.max(eps);
                let xp1 = xs.powf(p - T::one());
                if v > eps {
                    dx[o * s + k] = g * coef * xp1;
                }
                m_log += xp1 * xs * xs.ln();
            }
            m_log /= cu(s);
            dp += g * f * (m_log / (p * m) - m.ln() / (p * p));
        }
        self.p.grad_mut()[0] += dp;
        Ok(dx)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.p]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.p]
    }

    fn l2_mask(&self) -> Vec<bool> {
        vec![false]
    }

    fn post_update(&mut self) {
        // keep the mean between average and max pooling
        let p = &mut self.p.data[0];
        if *p < T::one() {
            *p = T::one();
        }
    }
}

/// Global max pooling; with `with_avg` the global average is appended
/// (`[max₁..max_C, avg₁..avg_C]`).
pub struct GlobalPool {
    pub with_avg: bool,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl GlobalPool {
    pub fn max() -> Self {
        Self {
            with_avg: false,
            cache: None,
        }
    }

    pub fn max_plus_avg() -> Self {
        Self {
            with_avg: true,
            cache: None,
        }
    }
}

impl<T: Real> Layer<T> for GlobalPool {
    fn name(&self) -> String {
        if self.with_avg { "global_max+avg" } else { "global_max" }.into()
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 {
            return Err(invalid(format!("global pool got per-sample shape {input:?}")));
        }
        Ok(vec![if self.with_avg { 2 * input[0] } else { input[0] }])
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        batch_dims(x, 4, "global pool")?;
        let (n, cch) = (x.shape[0], x.shape[1]);
        let s = x.shape[2] * x.shape[3];
        let width = if self.with_avg { 2 * cch } else { cch };
        let mut out = vec![T::zero(); n * width];
        let mut arg = vec![0usize; n * cch];
        for (o, plane) in x.data.chunks(s).enumerate() {
            let (b, ch) = (o / cch, o % cch);
            let mut best = 0;
            for k in 1..s {
                if plane[k] > plane[best] {
                    best = k;
                }
            }
            arg[o] = o * s + best;
            out[b * width + ch] = plane[best];
            if self.with_avg {
                out[b * width + cch + ch] = plane.iter().copied().sum::<T>() / cu(s);
            }
        }
        self.cache = Some((arg, x.shape.clone()));
        Tensor::new(vec![n, width], out)
    }

    fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        let (arg, shape) = cached(&self.cache, "global pool")?;
        let (n, cch) = (shape[0], shape[1]);
        let s = shape[2] * shape[3];
        let width = if self.with_avg { 2 * cch } else { cch };
        let mut dx = vec![T::zero(); n * cch * s];
        for o in 0..n * cch {
            let (b, ch) = (o / cch, o % cch);
            dx[arg[o]] += gy[b * width + ch];
            if self.with_avg {
                let g = gy[b * width + cch + ch] / cu(s);
                dx[o * s..(o + 1) * s].iter_mut().for_each(|v| *v += g);
            }
        }
        Ok(dx)
    }
}

// ---------------------------------------------------------------- dense

/// `y = x Wᵀ + b` with `W` of shape `[out, in]`.
pub struct Dense<T> {
    pub fin: usize,
    pub fout: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(fin: usize, fout: usize, weight: Vec<T>) -> Result<Self> {
        if weight.len() != fin * fout {
            return Err(invalid("dense weight has the wrong length"));
        }
        Ok(Self {
            fin,
            fout,
            weight: Tensor::param(vec![fout, fin], weight),
            bias: Tensor::param(vec![fout], vec![T::zero(); fout]),
            input: None,
        })
    }
}

impl<T: Real> Layer<T> for Dense<T> {
    fn name(&self) -> String {
        format!("dense({}->{})", self.fin, self.fout)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input != [self.fin] {
            return Err(invalid(format!("{} got per-sample shape {input:?}", self.name())));
        }
        Ok(vec![self.fout])
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx) -> Result<Tensor<T>> {
        batch_dims(x, 2, "dense")?;
        self.output_shape(&x.shape[1..])?;
        let n = x.shape[0];
        let mut out = vec![T::zero(); n * self.fout];
        for row in out.chunks_mut(self.fout) {
            row.copy_from_slice(&self.bias.data);
        }
        T::gemm(n, self.fin, self.fout, T::one(), &x.data, false, &self.weight.data, true, T::one(), &mut out);
        self.input = Some(x.clone());
        Tensor::new(vec![n, self.fout], out)
    }

    fn backward(&mut self, gy: &[T]) -> Result<Vec<T>> {
        let x = cached(&self.input, "dense")?;
        let n = x.shape[0];
        let wg = self.weight.grad.as_mut().expect("parameter gradient buffer");
        T::gemm(self.fout, n, self.fin, T::one(), gy, true, &x.data, false, T::one(), wg);
        let bg = self.bias.grad.as_mut().expect("parameter gradient buffer");
        for row in gy.chunks(self.fout) {
            for (b, g) in bg.iter_mut().zip(row) {
                *b += *g;
            }
        }
        let mut dx = vec![T::zero(); n * self.fin];
        T::gemm(n, self.fout, self.fin, T::one(), gy, false, &self.weight.data, false, T::zero(), &mut dx);
        Ok(dx)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn l2_mask(&self) -> Vec<bool> {
        vec![true, false]
    }
}
