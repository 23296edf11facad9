//! Layers with explicit forward caches and hand-written backward passes.
//! Everything is `f64`, NCHW.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// A dense NCHW batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Values of channel `c` of sample `i`.
    pub fn channel(&self, i: usize, c: usize) -> &[f64] {
        let p = self.plane();
        let start = (i * self.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn channel_mut(&mut self, i: usize, c: usize) -> &mut [f64] {
        let p = self.plane();
        let start = (i * self.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.c * self.plane();
        &self.data[i * len..(i + 1) * len]
    }
}

/// A named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let len = shape.iter().product();
        assert_eq!(value.len(), len, "param value does not match shape");
        Self {
            name: name.into(),
            shape,
            value,
            grad: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

const LANES: usize = 8;

/// Dot product with eight independent partial sums (vectorizes without
/// reassociating).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let (ac, bc) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// 3x3 convolution, stride 1, zero padding 1, no bias.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Param,
    input: Vec<f64>,
    input_dims: (usize, usize, usize),
}

const K: usize = 9;

impl Conv3x3 {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        // He-normal for ReLU networks
        let std = (2.0 / (in_ch * K) as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let value = (0..out_ch * in_ch * K).map(|_| normal.sample(rng)).collect();
        Self {
            in_ch,
            out_ch,
            weight: Param::new(format!("{name}.weight"), vec![out_ch, in_ch, 3, 3], value),
            input: Vec::new(),
            input_dims: (0, 0, 0),
        }
    }

    /// Writes the 3x3 patches of one sample into `col`, a `[in_ch * 9, stride]`
    /// matrix, at column `offset`.
    fn im2col(&self, x: &[f64], h: usize, w: usize, col: &mut [f64], stride: usize, offset: usize) {
        let p = h * w;
        for ci in 0..self.in_ch {
            let plane = &x[ci * p..(ci + 1) * p];
            for ky in 0..3 {
                for kx in 0..3 {
                    let start = (ci * K + ky * 3 + kx) * stride + offset;
                    let row = &mut col[start..start + p];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        let dst = &mut row[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize {
                            dst.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        match kx {
                            0 => {
                                dst[0] = 0.0;
                                dst[1..].copy_from_slice(&src[..w - 1]);
                            }
                            1 => dst.copy_from_slice(src),
                            _ => {
                                dst[..w - 1].copy_from_slice(&src[1..]);
                                dst[w - 1] = 0.0;
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], h: usize, w: usize, dx: &mut [f64], stride: usize, offset: usize) {
        let p = h * w;
        for ci in 0..self.in_ch {
            let plane = &mut dx[ci * p..(ci + 1) * p];
            for ky in 0..3 {
                for kx in 0..3 {
                    let start = (ci * K + ky * 3 + kx) * stride + offset;
                    let row = &col[start..start + p];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &row[y * w..(y + 1) * w];
                        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        match kx {
                            0 => axpy(1.0, &src[1..], &mut dst[..w - 1]),
                            1 => axpy(1.0, src, dst),
                            _ => axpy(1.0, &src[..w - 1], &mut dst[1..]),
                        }
                    }
                }
            }
        }
    }

    /// Samples per im2col block, sized so the patch matrix stays cache
    /// resident.
    fn block_samples(&self, p: usize) -> usize {
        let budget = 1 << 17; // doubles
        (budget / (self.in_ch * K * p).max(1)).max(1)
    }

    pub fn forward(&mut self, x: &Batch) -> Batch {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (n, h, w) = (x.n, x.h, x.w);
        let p = h * w;
        let kk = self.in_ch * K;
        self.input.clear();
        self.input.extend_from_slice(&x.data);
        self.input_dims = (n, h, w);
        let mut out = Batch::zeros(n, self.out_ch, h, w);
        let block = self.block_samples(p);
        let mut cols = Vec::new();
        let mut y = Vec::new();
        for first in (0..n).step_by(block) {
            let count = block.min(n - first);
            let np = count * p;
            cols.resize(kk * np, 0.0);
            for i in 0..count {
                self.im2col(x.sample(first + i), h, w, &mut cols, np, i * p);
            }
            y.clear();
            y.resize(self.out_ch * np, 0.0);
            gemm_acc(&self.weight.value, self.out_ch, kk, &cols, np, &mut y);
            for m in 0..self.out_ch {
                for i in 0..count {
                    out.channel_mut(first + i, m)
                        .copy_from_slice(&y[m * np + i * p..m * np + (i + 1) * p]);
                }
            }
        }
        out
    }

    /// Accumulates the weight gradient; returns the input gradient when
    /// asked for.
    pub fn backward(&mut self, dy: &Batch, want_input_grad: bool) -> Option<Batch> {
        let (n, h, w) = self.input_dims;
        let p = h * w;
        let kk = self.in_ch * K;
        let len = self.in_ch * p;
        let mut dx = want_input_grad.then(|| Batch::zeros(n, self.in_ch, h, w));
        let block = self.block_samples(p);
        let (mut cols, mut g, mut dcol) = (Vec::new(), Vec::new(), Vec::new());
        for first in (0..n).step_by(block) {
            let count = block.min(n - first);
            let np = count * p;
            cols.resize(kk * np, 0.0);
            for i in 0..count {
                let s = first + i;
                self.im2col(&self.input[s * len..(s + 1) * len], h, w, &mut cols, np, i * p);
            }
            g.resize(self.out_ch * np, 0.0);
            for m in 0..self.out_ch {
                for i in 0..count {
                    g[m * np + i * p..m * np + (i + 1) * p].copy_from_slice(dy.channel(first + i, m));
                }
            }
            gemm_nt_acc(&g, self.out_ch, &cols, kk, np, &mut self.weight.grad);
            if let Some(dx) = dx.as_mut() {
                dcol.clear();
                dcol.resize(kk * np, 0.0);
                gemm_tn_acc(&self.weight.value, self.out_ch, kk, &g, np, &mut dcol);
                for i in 0..count {
                    let s = first + i;
                    self.col2im(&dcol, h, w, &mut dx.data[s * len..(s + 1) * len], np, i * p);
                }
            }
        }
        dx
    }
}

/// `c[m x k] += a[m x n] * b[k x n]^T`, rows of `c` as lane-split dots.
fn gemm_nt_acc(a: &[f64], m: usize, b: &[f64], k: usize, n: usize, c: &mut [f64]) {
    for r in 0..m {
        let arow = &a[r * n..(r + 1) * n];
        for col in 0..k {
            c[r * k + col] += dot(arow, &b[col * n..(col + 1) * n]);
        }
    }
}

/// `c[m x n] += a[m x k] * b[k x n]`, four rows of `c` at a time.
fn gemm_acc(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    let mut i = 0;
    while i + 4 <= m {
        let (c0, rest) = c[i * n..(i + 4) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for kk in 0..k {
            let (a0, a1, a2, a3) = (a[i * k + kk], a[(i + 1) * k + kk], a[(i + 2) * k + kk], a[(i + 3) * k + kk]);
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                let bv = brow[j];
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
        i += 4;
    }
    for r in i..m {
        for kk in 0..k {
            axpy(a[r * k + kk], &b[kk * n..(kk + 1) * n], &mut c[r * n..(r + 1) * n]);
        }
    }
}

/// `c[k x n] += a[m x k]^T * b[m x n]`, four rows of `c` at a time.
fn gemm_tn_acc(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    let mut j = 0;
    while j + 4 <= k {
        let (c0, rest) = c[j * n..(j + 4) * n].split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for r in 0..m {
            let row = &a[r * k + j..r * k + j + 4];
            let brow = &b[r * n..(r + 1) * n];
            for t in 0..n {
                let bv = brow[t];
                c0[t] += row[0] * bv;
                c1[t] += row[1] * bv;
                c2[t] += row[2] * bv;
                c3[t] += row[3] * bv;
            }
        }
        j += 4;
    }
    for col in j..k {
        for r in 0..m {
            axpy(a[r * k + col], &b[r * n..(r + 1) * n], &mut c[col * n..(col + 1) * n]);
        }
    }
}

/// Per-channel batch normalization over `(N, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    train_cache: bool,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), vec![channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.beta"), vec![channels], vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: crate::fusion::DEFAULT_BN_EPS,
            momentum: crate::fusion::DEFAULT_BN_MOMENTUM,
            xhat: Vec::new(),
            inv_std: Vec::new(),
            train_cache: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Batch, train: bool) -> Batch {
        let (n, c, p) = (x.n, x.c, x.plane());
        assert_eq!(c, self.channels(), "batch norm channels");
        let count = (n * p) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if train {
            for ch in 0..c {
                let mut s = 0.0;
                for i in 0..n {
                    s += x.channel(i, ch).iter().sum::<f64>();
                }
                let m = s / count;
                let mut v = 0.0;
                for i in 0..n {
                    v += x.channel(i, ch).iter().map(|&a| (a - m) * (a - m)).sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = v / count;
            }
            let unbias = if n * p > 1 { count / (count - 1.0) } else { 1.0 };
            for ch in 0..c {
                self.running_mean[ch] =
                    self.momentum * self.running_mean[ch] + (1.0 - self.momentum) * mean[ch];
                self.running_var[ch] = self.momentum * self.running_var[ch]
                    + (1.0 - self.momentum) * var[ch] * unbias;
            }
        } else {
            mean.copy_from_slice(&self.running_mean);
            var.copy_from_slice(&self.running_var);
        }
        self.inv_std = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        self.xhat.resize(x.data.len(), 0.0);
        let mut out = Batch::zeros(n, c, x.h, x.w);
        for i in 0..n {
            for ch in 0..c {
                let (g, b, m, s) = (
                    self.gamma.value[ch],
                    self.beta.value[ch],
                    mean[ch],
                    self.inv_std[ch],
                );
                let start = (i * c + ch) * p;
                let src = &x.data[start..start + p];
                let xh = &mut self.xhat[start..start + p];
                let dst = &mut out.data[start..start + p];
                for j in 0..p {
                    let v = (src[j] - m) * s;
                    xh[j] = v;
                    dst[j] = g * v + b;
                }
            }
        }
        self.train_cache = train;
        out
    }

    pub fn backward(&mut self, dy: &Batch) -> Batch {
        let (n, c, p) = (dy.n, dy.c, dy.plane());
        let count = (n * p) as f64;
        let mut dx = Batch::zeros(n, c, dy.h, dy.w);
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for i in 0..n {
                let start = (i * c + ch) * p;
                let g = &dy.data[start..start + p];
                sum_dy += g.iter().sum::<f64>();
                sum_dy_xhat += dot(g, &self.xhat[start..start + p]);
            }
            self.gamma.grad[ch] += sum_dy_xhat;
            self.beta.grad[ch] += sum_dy;
            let gamma = self.gamma.value[ch];
            let s = self.inv_std[ch];
            for i in 0..n {
                let start = (i * c + ch) * p;
                let g = &dy.data[start..start + p];
                let xh = &self.xhat[start..start + p];
                let d = &mut dx.data[start..start + p];
                if self.train_cache {
                    let k = gamma * s / count;
                    for j in 0..p {
                        d[j] = k * (count * g[j] - sum_dy - xh[j] * sum_dy_xhat);
                    }
                } else {
                    for j in 0..p {
                        d[j] = gamma * s * g[j];
                    }
                }
            }
        }
        dx
    }
}

/// In-place ReLU; returns the activity mask.
pub fn relu_forward(x: &mut Batch) -> Vec<bool> {
    x.data
        .iter_mut()
        .map(|v| {
            let on = *v > 0.0;
            if !on {
                *v = 0.0;
            }
            on
        })
        .collect()
}

pub fn relu_backward(dy: &mut Batch, mask: &[bool]) {
    for (g, &on) in dy.data.iter_mut().zip(mask) {
        if !on {
            *g = 0.0;
        }
    }
}

/// 2x2 max pooling, stride 2, ceil mode (a trailing odd row/column forms
/// its own window).
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Vec<u32>,
    input_dims: (usize, usize, usize, usize),
}

impl MaxPool2 {
    pub fn forward(&mut self, x: &Batch) -> Batch {
        let (oh, ow) = (x.h.div_ceil(2), x.w.div_ceil(2));
        let mut out = Batch::zeros(x.n, x.c, oh, ow);
        self.argmax.resize(out.data.len(), 0);
        self.input_dims = (x.n, x.c, x.h, x.w);
        let p = x.plane();
        let op = oh * ow;
        for nc in 0..x.n * x.c {
            let src = &x.data[nc * p..(nc + 1) * p];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0;
                    for dy in 0..2 {
                        let y = 2 * oy + dy;
                        if y >= x.h {
                            continue;
                        }
                        for dx in 0..2 {
                            let xx = 2 * ox + dx;
                            if xx >= x.w {
                                continue;
                            }
                            let v = src[y * x.w + xx];
                            if v > best {
                                best = v;
                                arg = y * x.w + xx;
                            }
                        }
                    }
                    out.data[nc * op + oy * ow + ox] = best;
                    self.argmax[nc * op + oy * ow + ox] = arg as u32;
                }
            }
        }
        out
    }

    pub fn backward(&self, dy: &Batch) -> Batch {
        let (n, c, h, w) = self.input_dims;
        let mut dx = Batch::zeros(n, c, h, w);
        let (p, op) = (h * w, dy.plane());
        for nc in 0..n * c {
            for j in 0..op {
                dx.data[nc * p + self.argmax[nc * op + j] as usize] += dy.data[nc * op + j];
            }
        }
        dx
    }
}

/// Fully connected layer to a single logit.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Vec<f64>,
}

impl Linear {
    pub fn new(name: &str, inputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let value = (0..inputs).map(|_| dist.sample(rng)).collect();
        Self {
            weight: Param::new(format!("{name}.weight"), vec![1, inputs], value),
            bias: Param::new(format!("{name}.bias"), vec![1], vec![0.0]),
            input: Vec::new(),
        }
    }

    /// `features` is `n x inputs`, row-major.
    pub fn forward(&mut self, features: &[f64], n: usize) -> Vec<f64> {
        let d = self.weight.len();
        self.input = features.to_vec();
        (0..n)
            .map(|i| dot(&features[i * d..(i + 1) * d], &self.weight.value) + self.bias.value[0])
            .collect()
    }

    pub fn backward(&mut self, dlogits: &[f64]) -> Vec<f64> {
        let d = self.weight.len();
        let mut dfeat = vec![0.0; dlogits.len() * d];
        for (i, &g) in dlogits.iter().enumerate() {
            axpy(g, &self.input[i * d..(i + 1) * d], &mut self.weight.grad);
            self.bias.grad[0] += g;
            axpy(g, &self.weight.value, &mut dfeat[i * d..(i + 1) * d]);
        }
        dfeat
    }
}

pub fn global_avg_pool(x: &Batch) -> Vec<f64> {
    let p = x.plane() as f64;
    (0..x.n * x.c)
        .map(|nc| x.data[nc * x.plane()..(nc + 1) * x.plane()].iter().sum::<f64>() / p)
        .collect()
}

pub fn global_avg_pool_backward(dfeat: &[f64], n: usize, c: usize, h: usize, w: usize) -> Batch {
    let mut dx = Batch::zeros(n, c, h, w);
    let p = h * w;
    for nc in 0..n * c {
        let g = dfeat[nc] / p as f64;
        dx.data[nc * p..(nc + 1) * p].iter_mut().for_each(|v| *v = g);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn naive_conv(x: &Batch, weight: &[f64], out_ch: usize) -> Batch {
        let mut out = Batch::zeros(x.n, out_ch, x.h, x.w);
        for i in 0..x.n {
            for m in 0..out_ch {
                for y in 0..x.h {
                    for xx in 0..x.w {
                        let mut s = 0.0;
                        for ci in 0..x.c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                        continue;
                                    }
                                    s += weight[((m * x.c + ci) * 3 + ky) * 3 + kx]
                                        * x.channel(i, ci)[sy as usize * x.w + sx as usize];
                                }
                            }
                        }
                        out.channel_mut(i, m)[y * x.w + xx] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
        let mut conv = Conv3x3::new("c", 3, 4, &mut rng);
        let mut x = Batch::zeros(2, 3, 5, 4);
        x.data.iter_mut().for_each(|v| *v = rng.gen::<f64>() - 0.5);
        let fast = conv.forward(&x);
        let slow = naive_conv(&x, &conv.weight.value, 4);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_ceil_mode() {
        let x = Batch {
            n: 1,
            c: 1,
            h: 3,
            w: 3,
            data: vec![1.0, 5.0, 2.0, 3.0, 4.0, 9.0, 7.0, 0.0, 6.0],
        };
        let mut pool = MaxPool2::default();
        let y = pool.forward(&x);
        assert_eq!((y.h, y.w), (2, 2));
        assert_eq!(y.data, vec![5.0, 9.0, 7.0, 6.0]);
        let dx = pool.backward(&Batch {
            n: 1,
            c: 1,
            h: 2,
            w: 2,
            data: vec![1.0, 2.0, 3.0, 4.0],
        });
        assert_eq!(dx.data, vec![0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 3.0, 0.0, 4.0]);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
