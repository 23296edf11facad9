//! Rotation-invariant uniform local binary patterns.
//!
//! Each pixel is compared against `P` points on a circle of the given
//! radius (`neighbor >= center` sets the bit). Patterns with at most two
//! circular 0/1 transitions are labelled by their number of set bits
//! (`0..=P`); all others share label `P + 1`. Labels are then mapped
//! linearly with `x / (P + 2) * 2 - 1`, so for `P = 8` the channel spans
//! `[-1, 0.8]`.
//!
//! Pixels outside the image read the nearest edge pixel (replicate
//! padding), so the output has the input's size.

use std::f64::consts::PI;

use crate::cue::{CueChannel, CueKind};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// How neighbor positions off the pixel grid are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// Round each circle point to the nearest pixel. For radius 1 this is
    /// the 8-connected ring; codes depend only on intensity order.
    #[default]
    Nearest,
    /// Bilinear interpolation at the exact circle points.
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbpConfig {
    pub radius: f64,
    pub neighbors: usize,
    pub sampling: Sampling,
}

impl Default for LbpConfig {
    fn default() -> Self {
        Self {
            radius: 1.0,
            neighbors: 8,
            sampling: Sampling::Nearest,
        }
    }
}

impl LbpConfig {
    /// Radius 1 with 8 neighbors.
    pub fn is_reference(&self) -> bool {
        self.radius == 1.0 && self.neighbors == 8
    }

    /// Number of distinct labels, `P + 2`.
    pub fn label_count(&self) -> usize {
        self.neighbors + 2
    }

    fn validate(&self) -> Result<()> {
        if self.neighbors == 0 || self.neighbors > 32 {
            return Err(Error::InvalidArgument(format!(
                "neighbor count {} outside 1..=32",
                self.neighbors
            )));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidArgument(format!("radius {} must be positive", self.radius)));
        }
        if !self.is_reference() {
            log::debug!(
                "LBP with radius {} and {} neighbors differs from the reference configuration",
                self.radius,
                self.neighbors
            );
        }
        Ok(())
    }

    /// `(dy, dx)` offsets, counter-clockwise from the right-hand neighbor.
    fn offsets(&self) -> Vec<(f64, f64)> {
        let p = self.neighbors as f64;
        (0..self.neighbors)
            .map(|k| {
                let angle = 2.0 * PI * k as f64 / p;
                // round to kill 1e-17 residues such as sin(pi)
                let dy = round5(-self.radius * angle.sin());
                let dx = round5(self.radius * angle.cos());
                (dy, dx)
            })
            .collect()
    }
}

fn round5(v: f64) -> f64 {
    let r = (v * 1e5).round() / 1e5;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Maps a circular bit pattern to its rotation-invariant uniform label.
pub fn uniform_label(bits: &[bool]) -> usize {
    let p = bits.len();
    let transitions = (0..p).filter(|&i| bits[i] != bits[(i + 1) % p]).count();
    if transitions <= 2 {
        bits.iter().filter(|&&b| b).count()
    } else {
        p + 1
    }
}

struct Sampler<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
}

impl Sampler<'_> {
    #[inline]
    fn pixel(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.rows as isize - 1) as usize;
        let x = x.clamp(0, self.cols as isize - 1) as usize;
        self.data[y * self.cols + x]
    }

    fn nearest(&self, y: f64, x: f64) -> f64 {
        self.pixel(y.round() as isize, x.round() as isize)
    }

    fn bilinear(&self, y: f64, x: f64) -> f64 {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let a = self.pixel(y0, x0);
        let b = self.pixel(y0, x0 + 1);
        let c = self.pixel(y0 + 1, x0);
        let d = self.pixel(y0 + 1, x0 + 1);
        // lerp form: exact on flat patches
        let top = a + (b - a) * fx;
        let bottom = c + (d - c) * fx;
        top + (bottom - top) * fy
    }
}

/// Per-pixel labels in `0..=P+1`, stored as integral floats.
pub fn lbp_codes(img: &ImageTensor, cfg: &LbpConfig) -> Result<ImageTensor> {
    cfg.validate()?;
    if img.channels() != 1 {
        return Err(Error::InvalidShape(format!(
            "LBP needs a single-channel image, got {} channels",
            img.channels()
        )));
    }
    let (rows, cols) = (img.height(), img.width());
    let data = img.plane_f64(0);
    let sampler = Sampler {
        data: &data,
        rows,
        cols,
    };
    let offsets = cfg.offsets();
    let mut bits = vec![false; cfg.neighbors];
    let mut codes = Vec::with_capacity(rows * cols);
    for y in 0..rows {
        for x in 0..cols {
            let center = data[y * cols + x];
            for (bit, &(dy, dx)) in bits.iter_mut().zip(&offsets) {
                let (sy, sx) = (y as f64 + dy, x as f64 + dx);
                let v = match cfg.sampling {
                    Sampling::Nearest => sampler.nearest(sy, sx),
                    Sampling::Bilinear => sampler.bilinear(sy, sx),
                };
                *bit = v >= center;
            }
            codes.push(uniform_label(&bits) as f32);
        }
    }
    ImageTensor::new(1, rows, cols, codes)
}

/// Linear map of labels onto `x / (P + 2) * 2 - 1`.
pub fn normalize_codes(codes: &ImageTensor, neighbors: usize) -> Result<ImageTensor> {
    let max_code = (neighbors + 1) as f32;
    if let Some(&bad) = codes
        .data()
        .iter()
        .find(|&&c| !(0.0..=max_code).contains(&c) || c.fract() != 0.0)
    {
        return Err(Error::InvalidCode(bad));
    }
    let denom = (neighbors + 2) as f64;
    Ok(codes.map(|c| (c as f64 / denom * 2.0 - 1.0) as f32))
}

/// Normalizes eight-neighbor labels (`0..=9`) into an LBP cue channel.
pub fn lbp_normalize(codes: &ImageTensor) -> Result<CueChannel> {
    CueChannel::new(CueKind::Lbp, normalize_codes(codes, 8)?)
}

/// Codes plus normalization. Only eight-neighbor configurations produce a
/// tagged channel; use [`lbp_codes`] and [`normalize_codes`] for others.
pub fn lbp(img: &ImageTensor, cfg: &LbpConfig) -> Result<CueChannel> {
    if cfg.neighbors != 8 {
        return Err(Error::InvalidArgument(format!(
            "an LBP cue channel needs 8 neighbors, got {}",
            cfg.neighbors
        )));
    }
    lbp_normalize(&lbp_codes(img, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn center_code(center: f32, ring: [f32; 8], sampling: Sampling) -> f32 {
        // ring order: right, up-right, up, up-left, left, down-left, down, down-right
        let pos = [(1, 2), (0, 2), (0, 1), (0, 0), (1, 0), (2, 0), (2, 1), (2, 2)];
        let mut px = [[0f32; 3]; 3];
        px[1][1] = center;
        for (v, (y, x)) in ring.iter().zip(pos) {
            px[y][x] = *v;
        }
        let img = ImageTensor::from_fn(1, 3, 3, |_, y, x| px[y][x]).unwrap();
        let cfg = LbpConfig {
            sampling,
            ..LbpConfig::default()
        };
        lbp_codes(&img, &cfg).unwrap().get(0, 1, 1)
    }

    #[test]
    fn code_examples() {
        for s in [Sampling::Nearest, Sampling::Bilinear] {
            assert_eq!(center_code(0.0, [1.0; 8], s), 8.0);
            assert_eq!(center_code(1.0, [0.0; 8], s), 0.0);
        }
        let alternating = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        assert_eq!(center_code(0.5, alternating, Sampling::Nearest), 9.0);
        // two contiguous ones: uniform, label 2
        assert_eq!(
            center_code(0.5, [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], Sampling::Nearest),
            2.0
        );
    }

    #[test]
    fn ties_count_as_set() {
        let img = ImageTensor::filled(1, 4, 4, 0.3);
        let codes = lbp_codes(&img, &LbpConfig::default()).unwrap();
        assert!(codes.data().iter().all(|&c| c == 8.0));
        let bil = LbpConfig {
            sampling: Sampling::Bilinear,
            ..LbpConfig::default()
        };
        assert!(lbp_codes(&img, &bil).unwrap().data().iter().all(|&c| c == 8.0));
    }

    #[test]
    fn uniform_label_table() {
        assert_eq!(uniform_label(&[false; 8]), 0);
        assert_eq!(uniform_label(&[true; 8]), 8);
        let wrap = [true, false, false, false, false, false, false, true];
        assert_eq!(uniform_label(&wrap), 2);
        let two_runs = [true, false, true, true, false, false, false, false];
        assert_eq!(uniform_label(&two_runs), 9);
    }

    #[test]
    fn normalize_examples() {
        let codes = ImageTensor::new(1, 1, 3, vec![0.0, 5.0, 9.0]).unwrap();
        let n = lbp_normalize(&codes).unwrap();
        assert_eq!(n.tensor().data(), &[-1.0, 0.0, 0.8]);
        assert_eq!(n.kind(), CueKind::Lbp);
    }

    #[test]
    fn normalize_rejects_out_of_range() {
        for bad in [10.0, -1.0, 2.5] {
            let codes = ImageTensor::new(1, 1, 1, vec![bad]).unwrap();
            assert!(matches!(lbp_normalize(&codes), Err(Error::InvalidCode(_))));
        }
    }

    #[test]
    fn rejects_multichannel_and_bad_config() {
        assert!(lbp_codes(&ImageTensor::zeros(3, 4, 4), &LbpConfig::default()).is_err());
        let cfg = LbpConfig { neighbors: 0, ..LbpConfig::default() };
        assert!(lbp_codes(&ImageTensor::zeros(1, 4, 4), &cfg).is_err());
    }

    #[test]
    fn noise_produces_non_uniform_patterns() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let img = ImageTensor::from_fn(1, 32, 32, |_, _, _| rng.gen::<f32>()).unwrap();
        let codes = lbp_codes(&img, &LbpConfig::default()).unwrap();
        let mut hist = [0usize; 10];
        for &c in codes.data() {
            hist[c as usize] += 1;
        }
        assert!(hist[9] > 0);
        assert_eq!(hist.iter().sum::<usize>(), 32 * 32);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn output_range(seed in any::<u64>(), r in 1usize..12, c in 1usize..12) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let img = ImageTensor::from_fn(1, r, c, |_, _, _| rng.gen::<f32>()).unwrap();
            let cue = lbp(&img, &LbpConfig::default()).unwrap();
            for &v in cue.tensor().data() {
                prop_assert!((-1.0..=0.8).contains(&v));
            }
        }

        #[test]
        fn codes_survive_strictly_increasing_maps(seed in any::<u64>(), r in 3usize..14, c in 3usize..14) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let img = ImageTensor::from_fn(1, r, c, |_, _, _| rng.gen_range(0..256) as f32).unwrap();
            // random lookup table with positive steps
            let mut table = vec![rng.gen_range(-50.0f32..50.0)];
            for _ in 1..256 {
                let last = *table.last().unwrap();
                table.push(last + rng.gen_range(1..40) as f32);
            }
            let mapped = img.map(|v| table[v as usize]);
            let cfg = LbpConfig::default();
            prop_assert_eq!(lbp_codes(&img, &cfg).unwrap(), lbp_codes(&mapped, &cfg).unwrap());
        }

        #[test]
        fn bilinear_codes_survive_positive_affine_maps(seed in any::<u64>(), scale in 1u32..8, offset in 0u32..8) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let img = ImageTensor::from_fn(1, 8, 8, |_, _, _| rng.gen_range(0..256) as f32).unwrap();
            let mapped = img.map(|v| v * scale as f32 + offset as f32);
            let cfg = LbpConfig { sampling: Sampling::Bilinear, ..LbpConfig::default() };
            prop_assert_eq!(lbp_codes(&img, &cfg).unwrap(), lbp_codes(&mapped, &cfg).unwrap());
        }
    }
}
