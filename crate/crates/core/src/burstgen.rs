//! Synthetic burst generation.
//!
//! A reference patch is cropped from a source image; every neighbour frame
//! is the same-size crop displaced by an integer offset. All crops are box
//! downsampled 4x, then heteroscedastic Gaussian noise
//! `x ~ N(y, sigma_r^2 + sigma_s * y)` is added to every frame. The noise
//! map fed to the network is estimated from the noisy reference as
//! `sqrt(sigma_r^2 + sigma_s * max(x, 0))`.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::net::{Burst, NoiseMap};
use crate::tensor::{Real, Tensor};

pub const LARGE_OFFSET: i32 = 64;
pub const SMALL_OFFSET: i32 = 8;
pub const OFFSET_POISSON_LAMBDA: f64 = 1.5;
pub const DOWNSAMPLE: usize = 4;
pub const DEFAULT_PATCH: usize = 512;

/// Read/shot noise parameters of one noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainPreset {
    pub sigma_r: f64,
    pub sigma_s: f64,
}

/// Evaluation gains 1 to 4, in order of increasing noise.
pub const GAINS: [GainPreset; 4] = [
    GainPreset { sigma_r: 5e-3, sigma_s: 1e-3 },
    GainPreset { sigma_r: 2e-2, sigma_s: 4.3e-3 },
    GainPreset { sigma_r: 5e-2, sigma_s: 1e-2 },
    GainPreset { sigma_r: 8e-2, sigma_s: 2.3e-2 },
];

/// Training read-noise range `[1e-3, 10^-1.5]`.
pub const TRAIN_SIGMA_R: (f64, f64) = (1e-3, 0.031_622_776_601_683_79);
/// Training shot-noise range `[1e-4, 1e-2]`.
pub const TRAIN_SIGMA_S: (f64, f64) = (1e-4, 1e-2);

impl GainPreset {
    pub fn new(sigma_r: f64, sigma_s: f64) -> Result<Self> {
        if !(sigma_r > 0.0 && sigma_s > 0.0) || !sigma_r.is_finite() || !sigma_s.is_finite() {
            return Err(Error::invalid(
                "gain_preset",
                format!("sigma_r = {sigma_r}, sigma_s = {sigma_s} must both be positive"),
            ));
        }
        Ok(GainPreset { sigma_r, sigma_s })
    }

    /// Gain `1..=4`.
    pub fn gain(index: usize) -> Result<Self> {
        index
            .checked_sub(1)
            .and_then(|i| GAINS.get(i))
            .copied()
            .ok_or_else(|| Error::invalid("gain_preset", format!("gain {index} is not in 1..=4")))
    }

    /// Uniform draw from the training ranges.
    pub fn sample_training<R: Rng>(rng: &mut R) -> Self {
        GainPreset {
            sigma_r: rng.random_range(TRAIN_SIGMA_R.0..=TRAIN_SIGMA_R.1),
            sigma_s: rng.random_range(TRAIN_SIGMA_S.0..=TRAIN_SIGMA_S.1),
        }
    }

    /// Noise variance at clean intensity `y`.
    pub fn variance(&self, y: f64) -> f64 {
        self.sigma_r * self.sigma_r + self.sigma_s * y
    }
}

/// Whether the large-offset draw is made per neighbour frame or once per burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OffsetMode {
    #[default]
    PerFrame,
    PerBurst,
}

/// Integer `(dx, dy)` displacement of every frame; frame 0 is `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffsetSpec {
    pub offsets: Vec<(i32, i32)>,
    /// Which frames drew from the large range.
    pub large: Vec<bool>,
    /// The Poisson draw `n` for this burst.
    pub poisson_draw: u64,
}

/// Offsets for an `n`-frame burst. One `k ~ Poisson(1.5)` is drawn per
/// burst; a neighbour uses the `[-64, 64]` range with probability
/// `min(k, n) / n` and the `[-8, 8]` range otherwise.
pub fn sample_offsets<R: Rng>(n: usize, mode: OffsetMode, rng: &mut R) -> Result<OffsetSpec> {
    if n == 0 {
        return Err(Error::invalid("sample_offsets", "burst length must be at least 1"));
    }
    let poisson = Poisson::new(OFFSET_POISSON_LAMBDA).map_err(|e| Error::invalid("sample_offsets", format!("{e}")))?;
    let draw: f64 = poisson.sample(rng);
    let k = draw as u64;
    let p_large = (k.min(n as u64)) as f64 / n as f64;
    let burst_large = rng.random_bool(p_large);
    let mut offsets = Vec::with_capacity(n);
    let mut large = Vec::with_capacity(n);
    offsets.push((0, 0));
    large.push(false);
    for _ in 1..n {
        let is_large = match mode {
            OffsetMode::PerFrame => rng.random_bool(p_large),
            OffsetMode::PerBurst => burst_large,
        };
        let r = if is_large { LARGE_OFFSET } else { SMALL_OFFSET };
        offsets.push((rng.random_range(-r..=r), rng.random_range(-r..=r)));
        large.push(is_large);
    }
    Ok(OffsetSpec {
        offsets,
        large,
        poisson_draw: k,
    })
}

/// `[size_h, size_w]` window of `source` whose top-left corner is `(top, left)`.
pub fn crop<T: Real>(source: &Tensor<T>, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<Tensor<T>> {
    if source.rank() != 2 {
        return Err(Error::shape("crop", "rank", format!("expected [H,W], got {:?}", source.shape())));
    }
    let (h, w) = source.hw();
    if top + size_h > h || left + size_w > w {
        return Err(Error::shape(
            "crop",
            "window",
            format!("{size_h}x{size_w} at ({top}, {left}) exceeds {h}x{w}"),
        ));
    }
    let d = source.data();
    let mut out = Vec::with_capacity(size_h * size_w);
    for y in top..top + size_h {
        out.extend_from_slice(&d[y * w + left..y * w + left + size_w]);
    }
    Tensor::new(&[size_h, size_w], out)
}

/// Integer translation: the `size x size` crop at `origin + offset`, where
/// `origin` is `(top, left)` and `offset` is `(dx, dy)`.
pub fn shift_patch<T: Real>(
    source: &Tensor<T>,
    origin: (usize, usize),
    size: usize,
    offset: (i32, i32),
) -> Result<Tensor<T>> {
    let top = origin.0 as i64 + offset.1 as i64;
    let left = origin.1 as i64 + offset.0 as i64;
    if top < 0 || left < 0 {
        return Err(Error::shape(
            "shift_patch",
            "window",
            format!("offset {offset:?} from {origin:?} leaves the source"),
        ));
    }
    crop(source, top as usize, left as usize, size, size)
}

/// Non-overlapping 4x4 block means.
pub fn box_downsample4<T: Real>(image: &Tensor<T>) -> Result<Tensor<T>> {
    if image.rank() != 2 {
        return Err(Error::shape("box_downsample4", "rank", format!("expected [H,W], got {:?}", image.shape())));
    }
    let (h, w) = image.hw();
    if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 || h == 0 || w == 0 {
        return Err(Error::shape(
            "box_downsample4",
            "spatial extent",
            format!("{h}x{w} is not a positive multiple of {DOWNSAMPLE}"),
        ));
    }
    let (oh, ow) = (h / DOWNSAMPLE, w / DOWNSAMPLE);
    let d = image.data();
    let inv = 1.0 / (DOWNSAMPLE * DOWNSAMPLE) as f64;
    Ok(Tensor::from_fn(&[oh, ow], |i| {
        let (y, x) = (i / ow, i % ow);
        let mut acc = 0.0;
        for dy in 0..DOWNSAMPLE {
            let row = (y * DOWNSAMPLE + dy) * w + x * DOWNSAMPLE;
            for dx in 0..DOWNSAMPLE {
                acc += d[row + dx].as_f64();
            }
        }
        T::of(acc * inv)
    }))
}

/// Add `N(0, sigma_r^2 + sigma_s * y)` to every pixel. The result is not clamped.
pub fn add_noise<T: Real, R: Rng>(clean: &Tensor<T>, preset: &GainPreset, rng: &mut R) -> Tensor<T> {
    let mut out = clean.clone();
    out.requires_grad = false;
    out.grad = None;
    for v in out.data_mut() {
        let y = v.as_f64();
        let std = libm::sqrt(preset.variance(y.max(0.0)));
        let z: f64 = StandardNormal.sample(rng);
        *v = T::of(y + std * z);
    }
    out
}

/// `sqrt(sigma_r^2 + sigma_s * max(x, 0))` per pixel of the noisy reference.
pub fn estimate_noise_map<T: Real>(reference: &Tensor<T>, preset: &GainPreset) -> NoiseMap<T> {
    NoiseMap {
        sigma: reference.map(|x| T::of(libm::sqrt(preset.variance(x.as_f64().max(0.0))))),
    }
}

/// Noise level for a synthesized sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    Fixed(GainPreset),
    /// Drawn per sample from the training ranges.
    TrainingRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    /// Clean reference `[H, W]`.
    pub ground_truth: Tensor<f64>,
    /// Displaced, downsampled frames before noise `[N, H, W]`.
    pub clean: Tensor<f64>,
    /// Noisy frames `[N, H, W]`, unclamped.
    pub noisy: Tensor<f64>,
    pub noise_map: NoiseMap<f64>,
    pub preset: GainPreset,
    pub offsets: OffsetSpec,
    pub seed: u64,
}

impl SynthSample {
    pub fn burst_len(&self) -> usize {
        self.clean.shape()[0]
    }

    pub fn burst<T: Real>(&self) -> Result<Burst<T>> {
        Burst::new(self.noisy.cast())
    }

    pub fn noise_map_as<T: Real>(&self) -> NoiseMap<T> {
        NoiseMap {
            sigma: self.noise_map.sigma.cast(),
        }
    }

    /// The same clean frames under another noise level.
    pub fn renoise(&self, preset: GainPreset, seed: u64) -> SynthSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = add_noise(&self.clean, &preset, &mut rng);
        let noise_map = estimate_noise_map(&noisy.index0(0), &preset);
        SynthSample {
            noisy,
            noise_map,
            preset,
            seed,
            ..self.clone()
        }
    }
}

/// Build one training/evaluation sample from `source` (`[H, W]`, linear
/// intensities). The source must exceed `patch` by 64 pixels on every side.
/// The whole pipeline is a pure function of its arguments.
pub fn synthesize_burst(
    source: &Tensor<f64>,
    burst_len: usize,
    noise: NoiseLevel,
    patch: usize,
    mode: OffsetMode,
    seed: u64,
) -> Result<SynthSample> {
    if source.rank() != 2 {
        return Err(Error::shape("synthesize_burst", "rank", format!("expected [H,W], got {:?}", source.shape())));
    }
    if patch == 0 || !patch.is_multiple_of(DOWNSAMPLE) {
        return Err(Error::invalid("synthesize_burst", format!("patch {patch} must be a positive multiple of 4")));
    }
    let margin = LARGE_OFFSET as usize;
    let (h, w) = source.hw();
    if h < patch + 2 * margin || w < patch + 2 * margin {
        return Err(Error::shape(
            "synthesize_burst",
            "source extent",
            format!("{h}x{w} source is smaller than {0}x{0} (patch {patch} + 2*{margin})", patch + 2 * margin),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let preset = match noise {
        NoiseLevel::Fixed(p) => p,
        NoiseLevel::TrainingRange => GainPreset::sample_training(&mut rng),
    };
    let top = rng.random_range(margin..=h - patch - margin);
    let left = rng.random_range(margin..=w - patch - margin);
    let offsets = sample_offsets(burst_len, mode, &mut rng)?;
    let frames = offsets
        .offsets
        .iter()
        .map(|&o| box_downsample4(&shift_patch(source, (top, left), patch, o)?))
        .collect::<Result<Vec<_>>>()?;
    let clean = Tensor::stack(&frames)?;
    let ground_truth = frames[0].clone();
    let noisy = add_noise(&clean, &preset, &mut rng);
    let noise_map = estimate_noise_map(&noisy.index0(0), &preset);
    Ok(SynthSample {
        ground_truth,
        clean,
        noisy,
        noise_map,
        preset,
        offsets,
        seed,
    })
}

/// Procedural grayscale test chart `[size, size]` with values in `[0, 1]`:
/// a smooth background with rectangles, discs, gratings and checkerboards.
pub fn test_chart(size: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6368_6172_7473);
    let s = size as f64;
    let (gx, gy, base) = (
        rng.random_range(-0.4..0.4),
        rng.random_range(-0.4..0.4),
        rng.random_range(0.25..0.6),
    );
    let mut img: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 / s, (i % size) as f64 / s);
            base + gx * (x - 0.5) + gy * (y - 0.5)
        })
        .collect();
    let shapes = 24 + (size / 64);
    for _ in 0..shapes {
        let cx = rng.random_range(0.0..s);
        let cy = rng.random_range(0.0..s);
        let extent = rng.random_range(s * 0.03..s * 0.25);
        let level: f64 = rng.random_range(0.0..1.0);
        let kind = rng.random_range(0..4u8);
        let period = rng.random_range(3.0..24.0);
        let angle: f64 = rng.random_range(0.0..core::f64::consts::PI);
        let (ca, sa) = (libm::cos(angle), libm::sin(angle));
        let contrast = rng.random_range(0.1..0.5);
        let y0 = (cy - extent).max(0.0) as usize;
        let y1 = ((cy + extent) as usize).min(size);
        let x0 = (cx - extent).max(0.0) as usize;
        let x1 = ((cx + extent) as usize).min(size);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let v = &mut img[y * size + x];
                match kind {
                    0 => *v = level,
                    1 => {
                        if dx * dx + dy * dy <= extent * extent {
                            *v = level;
                        }
                    }
                    2 => {
                        let phase = (dx * ca + dy * sa) / period * core::f64::consts::TAU;
                        *v = level + contrast * libm::sin(phase);
                    }
                    _ => {
                        let cell = ((x as f64 / period) as i64 + (y as f64 / period) as i64) % 2 == 0;
                        *v = if cell { level } else { level * 0.3 };
                    }
                }
            }
        }
    }
    let data = img.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::new(&[size, size], data).expect("square buffer")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gain_lookup() {
        assert_eq!(GainPreset::gain(3).unwrap(), GainPreset { sigma_r: 5e-2, sigma_s: 1e-2 });
        assert!(GainPreset::gain(0).is_err());
        assert!(GainPreset::gain(5).is_err());
        assert!(GainPreset::new(0.0, 1e-3).is_err());
    }

    #[test]
    fn offsets_bounded_and_reference_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in [OffsetMode::PerFrame, OffsetMode::PerBurst] {
            for _ in 0..500 {
                let o = sample_offsets(8, mode, &mut rng).unwrap();
                assert_eq!(o.offsets[0], (0, 0));
                for (&(dx, dy), &large) in o.offsets.iter().zip(&o.large) {
                    let r = if large { LARGE_OFFSET } else { SMALL_OFFSET };
                    assert!(dx.abs() <= r && dy.abs() <= r);
                }
                if o.poisson_draw == 0 {
                    assert!(o.large.iter().all(|&l| !l));
                }
            }
        }
    }

    #[test]
    fn shift_round_trip() {
        let src = Tensor::from_fn(&[12, 12], |i| i as f64);
        let a = shift_patch(&src, (4, 4), 4, (0, 0)).unwrap();
        assert_eq!(a, crop(&src, 4, 4, 4, 4).unwrap());
        let right = shift_patch(&src, (4, 4), 4, (1, 0)).unwrap();
        let back = shift_patch(&src, (4, 5), 4, (-1, 0)).unwrap();
        assert_eq!(back, a);
        assert_eq!(right.data()[0], src.data()[4 * 12 + 5]);
        assert!(shift_patch(&src, (0, 0), 4, (-1, 0)).is_err());
        assert!(shift_patch(&src, (8, 8), 4, (1, 1)).is_err());
    }

    #[test]
    fn downsample_block_mean() {
        let block = Tensor::from_fn(&[4, 4], |i| i as f64);
        assert_eq!(box_downsample4(&block).unwrap().data(), &[7.5]);
        let c = Tensor::full(&[8, 12], 0.3f64);
        assert!(box_downsample4(&c).unwrap().data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert!(box_downsample4(&Tensor::<f64>::zeros(&[6, 8])).is_err());
    }

    #[test]
    fn noise_map_formula() {
        let g1 = GainPreset::gain(1).unwrap();
        let x = Tensor::new(&[3], alloc::vec![-0.2, 0.0, 0.25]).unwrap();
        let m = estimate_noise_map(&x, &g1).sigma;
        assert_eq!(m.data()[0], g1.sigma_r);
        assert_eq!(m.data()[1], g1.sigma_r);
        assert!((m.data()[2] - 1.658_312_395e-2).abs() < 1e-10);
    }

    #[test]
    fn tiny_noise_leaves_image_nearly_clean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clean = Tensor::from_fn(&[4, 4], |i| i as f64 / 16.0);
        let p = GainPreset::new(1e-300, 1e-300).unwrap();
        let noisy = add_noise(&clean, &p, &mut rng);
        assert_eq!(noisy, clean);
    }

    #[test]
    fn synthesis_extents_and_determinism() {
        let src = test_chart(384, 3);
        let s = synthesize_burst(&src, 3, NoiseLevel::TrainingRange, 256, OffsetMode::PerFrame, 9).unwrap();
        assert_eq!(s.noisy.shape(), &[3, 64, 64]);
        assert_eq!(s.ground_truth.shape(), &[64, 64]);
        assert_eq!(s.clean.index0(0), s.ground_truth);
        let again = synthesize_burst(&src, 3, NoiseLevel::TrainingRange, 256, OffsetMode::PerFrame, 9).unwrap();
        assert_eq!(s, again);
        assert!(synthesize_burst(&test_chart(383, 3), 3, NoiseLevel::TrainingRange, 256, OffsetMode::PerFrame, 9).is_err());
    }
}
