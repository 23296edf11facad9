//! Training-time augmentation of `[0, 1]` RGB frames.
//!
//! Five transforms, each applied with probability `p_each`, always in the
//! order flip -> rotate -> blur -> brightness/contrast -> JPEG. Every coin
//! flip and parameter comes from the caller's RNG, so a given RNG state
//! always yields the same output. Cues are extracted afterwards from the
//! augmented frame.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_each: f64,
    pub max_rotation_deg: f64,
    pub blur_kernels: Vec<usize>,
    /// Brightness and contrast factors are drawn from `1 ± this`.
    pub brightness_contrast: f64,
    pub jpeg_quality: (u8, u8),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_each: 0.5,
            max_rotation_deg: 10.0,
            blur_kernels: vec![3, 5, 7],
            brightness_contrast: 0.1,
            jpeg_quality: (40, 100),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_each) {
            return Err(Error::InvalidArgument(format!("probability {} outside [0, 1]", self.p_each)));
        }
        if self.blur_kernels.is_empty() || self.blur_kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::InvalidArgument("blur kernels must be odd and non-empty".into()));
        }
        let (lo, hi) = self.jpeg_quality;
        if lo < 1 || hi > 100 || lo > hi {
            return Err(Error::InvalidArgument(format!("JPEG quality range {lo}..={hi} invalid")));
        }
        if !(self.max_rotation_deg >= 0.0) || !(self.brightness_contrast >= 0.0) {
            return Err(Error::InvalidArgument("negative augmentation magnitude".into()));
        }
        Ok(())
    }
}

/// Which transforms fired and with what parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentTrace {
    pub flipped: bool,
    pub rotation_deg: Option<f64>,
    pub blur_kernel: Option<usize>,
    pub brightness_contrast: Option<(f64, f64)>,
    pub jpeg_quality: Option<u8>,
}

impl AugmentTrace {
    pub fn is_identity(&self) -> bool {
        *self == AugmentTrace::default()
    }
}

pub fn augment(img: &ImageTensor, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<ImageTensor> {
    augment_traced(img, cfg, rng).map(|(out, _)| out)
}

pub fn augment_traced(
    img: &ImageTensor,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<(ImageTensor, AugmentTrace)> {
    cfg.validate()?;
    if img.channels() != 3 {
        return Err(Error::InvalidShape(format!(
            "augmentation expects RGB, got {} channels",
            img.channels()
        )));
    }
    let mut trace = AugmentTrace::default();
    let mut out = img.clone();
    if rng.gen_bool(cfg.p_each) {
        out = hflip(&out);
        trace.flipped = true;
    }
    if rng.gen_bool(cfg.p_each) {
        let deg = rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg);
        out = rotate(&out, deg)?;
        trace.rotation_deg = Some(deg);
    }
    if rng.gen_bool(cfg.p_each) {
        let k = cfg.blur_kernels[rng.gen_range(0..cfg.blur_kernels.len())];
        out = gaussian_blur(&out, k)?;
        trace.blur_kernel = Some(k);
    }
    if rng.gen_bool(cfg.p_each) {
        let r = cfg.brightness_contrast;
        let u = rng.gen_range(-r..=r);
        let v = rng.gen_range(-r..=r);
        out = brightness_contrast(&out, u, v)?;
        trace.brightness_contrast = Some((u, v));
    }
    if rng.gen_bool(cfg.p_each) {
        let q = rng.gen_range(cfg.jpeg_quality.0..=cfg.jpeg_quality.1);
        out = jpeg_roundtrip(&out, q)?;
        trace.jpeg_quality = Some(q);
    }
    Ok((clamp_unit(&out), trace))
}

fn clamp_unit(img: &ImageTensor) -> ImageTensor {
    img.map(|v| v.clamp(0.0, 1.0))
}

pub fn hflip(img: &ImageTensor) -> ImageTensor {
    let (c, h, w) = img.dims();
    ImageTensor::from_fn(c, h, w, |ch, y, x| img.get(ch, y, w - 1 - x)).unwrap()
}

/// Reflects an out-of-range index back into `0..n` (`dcb|abcd|cba`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Bilinear rotation about the image center, same size, reflect padding.
pub fn rotate(img: &ImageTensor, degrees: f64) -> Result<ImageTensor> {
    let (c, h, w) = img.dims();
    let theta = degrees.to_radians();
    let (s, co) = theta.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = img.plane(ch);
        for y in 0..h {
            for x in 0..w {
                // inverse map: output pixel -> source location
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let sx = co * dx + s * dy + cx;
                let sy = -s * dx + co * dy + cy;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as isize, y0 as isize);
                let px = |yy: isize, xx: isize| plane[reflect(yy, h) * w + reflect(xx, w)] as f64;
                let top = px(y0, x0) + (px(y0, x0 + 1) - px(y0, x0)) * fx;
                let bot = px(y0 + 1, x0) + (px(y0 + 1, x0 + 1) - px(y0 + 1, x0)) * fx;
                data.push((top + (bot - top) * fy) as f32);
            }
        }
    }
    ImageTensor::new(c, h, w, data)
}

/// Normalized 1-D Gaussian taps for an odd kernel size, with
/// `sigma = 0.3 * ((k - 1) / 2 - 1) + 0.8`.
pub fn gaussian_kernel(k: usize) -> Result<Vec<f64>> {
    if k % 2 == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!("kernel size {k} must be odd")));
    }
    let sigma = 0.3 * ((k as f64 - 1.0) / 2.0 - 1.0) + 0.8;
    let r = (k / 2) as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / sum).collect())
}

/// Mirrors an index with edge repeat (`cba|abc`). Convolving with a
/// symmetric kernel under this extension keeps the plane's sum unchanged.
fn symmetric(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let i = i.rem_euclid(period);
    if i >= n as isize {
        (period - 1 - i) as usize
    } else {
        i as usize
    }
}

/// Separable Gaussian blur with mirrored (edge-repeating) borders.
pub fn gaussian_blur(img: &ImageTensor, k: usize) -> Result<ImageTensor> {
    let taps = gaussian_kernel(k)?;
    let r = (k / 2) as isize;
    let (c, h, w) = img.dims();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = img.plane_f64(ch);
        let mut tmp = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t * plane[y * w + symmetric(x as isize + i as isize - r, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = taps
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t * tmp[symmetric(y as isize + i as isize - r, h) * w + x])
                    .sum();
                out.push(v as f32);
            }
        }
    }
    ImageTensor::new(c, h, w, out)
}

/// Brightness `x * (1 + u)` then contrast `(x - mean) * (1 + v) + mean`
/// (mean over the whole frame), clamped to `[0, 1]`.
pub fn brightness_contrast(img: &ImageTensor, u: f64, v: f64) -> Result<ImageTensor> {
    let bright: Vec<f64> = img.data().iter().map(|&x| x as f64 * (1.0 + u)).collect();
    let mean = bright.iter().sum::<f64>() / bright.len() as f64;
    let data = bright
        .iter()
        .map(|&x| ((x - mean) * (1.0 + v) + mean).clamp(0.0, 1.0) as f32)
        .collect();
    ImageTensor::new(img.channels(), img.height(), img.width(), data)
}

const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113,
    92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA_QUANT: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
];

/// Quality-scaled quantization table (IJG scaling).
pub fn quant_table(base: &[u16; 64], quality: u8) -> [f64; 64] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    m
}

/// Quantizes one plane (values on the 0..255 scale) block by block.
fn quantize_plane(plane: &mut [f64], h: usize, w: usize, table: &[f64; 64], basis: &[[f64; 8]; 8]) {
    let (bh, bw) = (h.div_ceil(8), w.div_ceil(8));
    let mut block = [[0.0; 8]; 8];
    let mut tmp = [[0.0; 8]; 8];
    for by in 0..bh {
        for bx in 0..bw {
            for (i, row) in block.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    // edge replicate for partial blocks
                    let y = (by * 8 + i).min(h - 1);
                    let x = (bx * 8 + j).min(w - 1);
                    *v = plane[y * w + x] - 128.0;
                }
            }
            // forward DCT: B * X * B^T
            for u in 0..8 {
                for j in 0..8 {
                    tmp[u][j] = (0..8).map(|i| basis[u][i] * block[i][j]).sum();
                }
            }
            for u in 0..8 {
                for v in 0..8 {
                    let c: f64 = (0..8).map(|j| tmp[u][j] * basis[v][j]).sum();
                    let q = table[u * 8 + v];
                    block[u][v] = (c / q).round() * q;
                }
            }
            // inverse: B^T * C * B
            for i in 0..8 {
                for v in 0..8 {
                    tmp[i][v] = (0..8).map(|u| basis[u][i] * block[u][v]).sum();
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    let y = by * 8 + i;
                    let x = bx * 8 + j;
                    if y < h && x < w {
                        let val: f64 = (0..8).map(|v| tmp[i][v] * basis[v][j]).sum();
                        plane[y * w + x] = val + 128.0;
                    }
                }
            }
        }
    }
}

/// Lossy JPEG round trip without entropy coding: RGB -> YCbCr (full
/// resolution chroma), 8x8 DCT, quantization with the standard luminance
/// and chrominance tables scaled to `quality`, dequantization, inverse DCT,
/// back to RGB and 8-bit rounding.
pub fn jpeg_roundtrip(img: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    if img.channels() != 3 {
        return Err(Error::InvalidShape("JPEG simulation needs RGB".into()));
    }
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidArgument(format!("JPEG quality {quality} outside 1..=100")));
    }
    let (h, w) = (img.height(), img.width());
    let n = h * w;
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut y = vec![0.0; n];
    let mut cb = vec![0.0; n];
    let mut cr = vec![0.0; n];
    for i in 0..n {
        let (rv, gv, bv) = (r[i] as f64 * 255.0, g[i] as f64 * 255.0, b[i] as f64 * 255.0);
        y[i] = 0.299 * rv + 0.587 * gv + 0.114 * bv;
        cb[i] = -0.168736 * rv - 0.331264 * gv + 0.5 * bv + 128.0;
        cr[i] = 0.5 * rv - 0.418688 * gv - 0.081312 * bv + 128.0;
    }
    let basis = dct_basis();
    quantize_plane(&mut y, h, w, &quant_table(&LUMA_QUANT, quality), &basis);
    let chroma = quant_table(&CHROMA_QUANT, quality);
    quantize_plane(&mut cb, h, w, &chroma, &basis);
    quantize_plane(&mut cr, h, w, &chroma, &basis);
    let mut data = vec![0f32; 3 * n];
    for i in 0..n {
        let (yv, cbv, crv) = (y[i], cb[i] - 128.0, cr[i] - 128.0);
        let rgb = [
            yv + 1.402 * crv,
            yv - 0.344136 * cbv - 0.714136 * crv,
            yv + 1.772 * cbv,
        ];
        for (c, v) in rgb.iter().enumerate() {
            data[c * n + i] = (v.round().clamp(0.0, 255.0) / 255.0) as f32;
        }
    }
    ImageTensor::new(3, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn smooth_rgb(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(3, h, w, |c, y, x| {
            let t = (y as f32 * 0.21 + x as f32 * 0.13 + c as f32).sin() * 0.35 + 0.5;
            (t * 255.0).round() / 255.0
        })
        .unwrap()
    }

    #[test]
    fn all_skips_are_identity() {
        let img = smooth_rgb(16, 16);
        let cfg = AugmentConfig {
            p_each: 0.0,
            ..AugmentConfig::default()
        };
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let (out, trace) = augment_traced(&img, &cfg, &mut rng).unwrap();
        assert!(trace.is_identity());
        assert_eq!(out, img);
    }

    #[test]
    fn some_seed_skips_everything_at_half_probability() {
        let img = smooth_rgb(16, 16);
        let cfg = AugmentConfig::default();
        let seed = (0..1000u64)
            .find(|&s| {
                let mut rng = Xoshiro256PlusPlus::seed_from_u64(s);
                augment_traced(&img, &cfg, &mut rng).unwrap().1.is_identity()
            })
            .expect("one in 32 seeds should skip all five transforms");
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let out = augment(&img, &cfg, &mut rng).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let img = smooth_rgb(5, 7);
        assert_eq!(hflip(&hflip(&img)), img);
        assert_ne!(hflip(&img), img);
    }

    #[test]
    fn same_rng_state_same_output() {
        let img = smooth_rgb(16, 24);
        let cfg = AugmentConfig {
            p_each: 1.0,
            ..AugmentConfig::default()
        };
        let a = augment(&img, &cfg, &mut Xoshiro256PlusPlus::seed_from_u64(77)).unwrap();
        let b = augment(&img, &cfg, &mut Xoshiro256PlusPlus::seed_from_u64(77)).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn kernels_are_normalized() {
        for k in [3, 5, 7] {
            let taps = gaussian_kernel(k).unwrap();
            assert_eq!(taps.len(), k);
            assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // 2-D kernel is the outer product, so it sums to 1 as well
            let total: f64 = taps.iter().flat_map(|a| taps.iter().map(move |b| a * b)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!(gaussian_kernel(4).is_err());
    }

    #[test]
    fn blur_preserves_mean() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        for (h, w) in [(20, 20), (9, 31), (3, 5)] {
            let img = ImageTensor::from_fn(3, h, w, |_, _, _| rng.gen::<f32>()).unwrap();
            for k in [3, 5, 7] {
                let out = gaussian_blur(&img, k).unwrap();
                for c in 0..3 {
                    let n = (h * w) as f64;
                    let before: f64 = img.plane_f64(c).iter().sum::<f64>() / n;
                    let after: f64 = out.plane_f64(c).iter().sum::<f64>() / n;
                    assert!((before - after).abs() < 1e-6, "k={k}: {before} vs {after}");
                }
            }
        }
    }

    #[test]
    fn rotation_keeps_dims_and_zero_is_identity() {
        let img = smooth_rgb(9, 13);
        let r = rotate(&img, 7.5).unwrap();
        assert_eq!(r.dims(), img.dims());
        let z = rotate(&img, 0.0).unwrap();
        for (a, b) in z.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn jpeg_quality_100_is_nearly_lossless() {
        let img = smooth_rgb(32, 32);
        let out = jpeg_roundtrip(&img, 100).unwrap();
        let mse: f64 = img
            .data()
            .iter()
            .zip(out.data())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / img.data().len() as f64;
        assert!(mse.sqrt() < 2.0 / 255.0, "rms {}", mse.sqrt());
        let low = jpeg_roundtrip(&img, 40).unwrap();
        assert_ne!(low, img);
    }

    #[test]
    fn quant_table_scaling() {
        assert!(quant_table(&LUMA_QUANT, 100).iter().all(|&q| q == 1.0));
        assert_eq!(quant_table(&LUMA_QUANT, 50)[0], 16.0);
        assert_eq!(quant_table(&LUMA_QUANT, 25)[0], 32.0);
    }

    #[test]
    fn brightness_and_contrast_clamp() {
        let img = ImageTensor::filled(3, 2, 2, 0.95);
        let out = brightness_contrast(&img, 0.1, 0.0).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_bad_config() {
        let img = smooth_rgb(4, 4);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(0);
        let cfg = AugmentConfig { blur_kernels: vec![4], ..AugmentConfig::default() };
        assert!(augment(&img, &cfg, &mut rng).is_err());
        let cfg = AugmentConfig { jpeg_quality: (0, 100), ..AugmentConfig::default() };
        assert!(augment(&img, &cfg, &mut rng).is_err());
    }
}
