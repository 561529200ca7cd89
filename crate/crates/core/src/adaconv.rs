//! Per-pixel adaptive convolution and the kernel/residual reconstruction.
//!
//! Every output pixel `p` of frame `i` is the inner product of its own
//! `S x S` kernel with the neighbourhood of `p` in frame `i`. Neighbours
//! outside the frame are edge-clamped. Kernels are used as predicted; no
//! normalisation is applied.
//!
//! The reconstruction blends the filtered frame with a residual through a
//! sigmoid weight and averages the per-frame predictions:
//!
//! ```text
//! Y_i = s_i * (X_i (*) K_i) + (1 - s_i) * R_i,   s_i = sigmoid(W_i)
//! Y   = mean_i Y_i
//! ```

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{accumulate, Graph, Node, Op, Var};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_KERNEL_SIZE: usize = 5;

/// Per-frame, per-pixel kernels `[N, S*S, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelField<T> {
    pub values: Tensor<T>,
    pub size: usize,
}

impl<T: Real> KernelField<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        if values.rank() != 4 {
            return Err(Error::shape("kernel_field", "rank", format!("expected [N,S*S,H,W], got {:?}", values.shape())));
        }
        let size = kernel_size_from_taps(values.shape()[1])?;
        Ok(KernelField { values, size })
    }

    /// Kernels that copy the centre pixel: output equals input.
    pub fn center_delta(frames: usize, size: usize, height: usize, width: usize) -> Result<Self> {
        check_odd(size)?;
        let taps = size * size;
        let center = taps / 2;
        let plane = height * width;
        let values = Tensor::from_fn(&[frames, taps, height, width], |i| {
            if (i / plane) % taps == center {
                T::one()
            } else {
                T::zero()
            }
        });
        Ok(KernelField { values, size })
    }
}

/// Per-frame residual maps `[N, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField<T> {
    pub values: Tensor<T>,
}

/// Per-frame pre-sigmoid blend logits `[N, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField<T> {
    pub logits: Tensor<T>,
}

fn check_odd(size: usize) -> Result<()> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::invalid("adaptive_conv", format!("kernel size {size} must be odd and >= 1")));
    }
    Ok(())
}

fn kernel_size_from_taps(taps: usize) -> Result<usize> {
    let s = libm::round(libm::sqrt(taps as f64)) as usize;
    if s * s != taps {
        return Err(Error::shape("adaptive_conv", "kernel taps", format!("{taps} is not a square")));
    }
    check_odd(s)?;
    Ok(s)
}

struct Dims {
    frames: usize,
    height: usize,
    width: usize,
    size: usize,
}

fn dims<T: Real>(frames: &Tensor<T>, kernels: &Tensor<T>) -> Result<Dims> {
    let (n, fh, fw, ks) = match (frames.rank(), kernels.rank()) {
        (2, 3) => (1, frames.shape()[0], frames.shape()[1], kernels.shape()),
        (3, 4) => {
            let f = frames.shape();
            if kernels.shape()[0] != f[0] {
                return Err(Error::shape(
                    "adaptive_conv",
                    "frame count",
                    format!("{} frames, {} kernel sets", f[0], kernels.shape()[0]),
                ));
            }
            (f[0], f[1], f[2], &kernels.shape()[1..])
        }
        _ => {
            return Err(Error::shape(
                "adaptive_conv",
                "rank",
                format!(
                    "expected [H,W] with [S*S,H,W] or [N,H,W] with [N,S*S,H,W], got {:?} and {:?}",
                    frames.shape(),
                    kernels.shape()
                ),
            ))
        }
    };
    if ks[1] != fh || ks[2] != fw {
        return Err(Error::shape(
            "adaptive_conv",
            "spatial extent",
            format!("frame is {fh}x{fw}, kernels are {}x{}", ks[1], ks[2]),
        ));
    }
    let size = kernel_size_from_taps(ks[0])?;
    Ok(Dims {
        frames: n,
        height: fh,
        width: fw,
        size,
    })
}

#[inline]
fn clamp_index(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

/// Neighbour column index for every `(tap column, x)` pair.
fn column_map(d: &Dims) -> Vec<usize> {
    let r = (d.size / 2) as isize;
    let mut map = Vec::with_capacity(d.size * d.width);
    for dx in 0..d.size as isize {
        for x in 0..d.width as isize {
            map.push(clamp_index(x + dx - r, d.width));
        }
    }
    map
}

fn forward<T: Real>(frames: &[T], kernels: &[T], d: &Dims) -> Vec<T> {
    let (h, w, s) = (d.height, d.width, d.size);
    let plane = h * w;
    let taps = s * s;
    let r = (s / 2) as isize;
    let cols = column_map(d);
    let mut out = vec![T::zero(); d.frames * plane];
    for n in 0..d.frames {
        let frame = &frames[n * plane..(n + 1) * plane];
        let dst = &mut out[n * plane..(n + 1) * plane];
        for dy in 0..s {
            for dx in 0..s {
                let k = &kernels[(n * taps + dy * s + dx) * plane..][..plane];
                let cmap = &cols[dx * w..(dx + 1) * w];
                for y in 0..h {
                    let sy = clamp_index(y as isize + dy as isize - r, h);
                    let src = &frame[sy * w..(sy + 1) * w];
                    let krow = &k[y * w..(y + 1) * w];
                    let orow = &mut dst[y * w..(y + 1) * w];
                    for x in 0..w {
                        orow[x] += krow[x] * src[cmap[x]];
                    }
                }
            }
        }
    }
    out
}

impl<T: Real> Graph<T> {
    /// Apply per-pixel kernels. Accepts a single frame `[H,W]` with kernels
    /// `[S*S,H,W]`, or a burst `[N,H,W]` with kernels `[N,S*S,H,W]`.
    pub fn adaptive_conv(&mut self, frames: Var, kernels: Var) -> Result<Var> {
        let (f, k) = (self.value(frames), self.value(kernels));
        let d = dims(f, k)?;
        let out = forward(f.data(), k.data(), &d);
        let value = Tensor::new(f.shape(), out)?;
        Ok(self.push(
            value,
            Op::AdaptiveConv {
                frames: frames.0,
                kernels: kernels.0,
                size: d.size,
            },
            &[frames.0, kernels.0],
        ))
    }
}

pub(crate) fn adaptive_conv_backward<T: Real>(
    nodes: &[Node<T>],
    frames: usize,
    kernels: usize,
    _size: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let (f, k) = (&nodes[frames].value, &nodes[kernels].value);
    let d = dims(f, k).expect("validated at record time");
    let (h, w, s) = (d.height, d.width, d.size);
    let plane = h * w;
    let taps = s * s;
    let r = (s / 2) as isize;
    let cols = column_map(&d);
    let (fd, kd) = (f.data(), k.data());

    accumulate(nodes, grads, kernels, |gk| {
        for n in 0..d.frames {
            let frame = &fd[n * plane..(n + 1) * plane];
            let gn = &g[n * plane..(n + 1) * plane];
            for dy in 0..s {
                for dx in 0..s {
                    let dst = &mut gk[(n * taps + dy * s + dx) * plane..][..plane];
                    let cmap = &cols[dx * w..(dx + 1) * w];
                    for y in 0..h {
                        let sy = clamp_index(y as isize + dy as isize - r, h);
                        let src = &frame[sy * w..(sy + 1) * w];
                        for x in 0..w {
                            dst[y * w + x] += gn[y * w + x] * src[cmap[x]];
                        }
                    }
                }
            }
        }
    });
    accumulate(nodes, grads, frames, |gf| {
        for n in 0..d.frames {
            let gn = &g[n * plane..(n + 1) * plane];
            let dst = &mut gf[n * plane..(n + 1) * plane];
            for dy in 0..s {
                for dx in 0..s {
                    let k = &kd[(n * taps + dy * s + dx) * plane..][..plane];
                    let cmap = &cols[dx * w..(dx + 1) * w];
                    for y in 0..h {
                        let sy = clamp_index(y as isize + dy as isize - r, h);
                        for x in 0..w {
                            dst[sy * w + cmap[x]] += gn[y * w + x] * k[y * w + x];
                        }
                    }
                }
            }
        }
    });
}

/// Result of the reconstruction: the burst estimate and each frame's own
/// prediction (kept for the annealed per-frame loss).
#[derive(Debug, Clone, Copy)]
pub struct Reconstruction {
    /// `[H, W]`
    pub denoised: Var,
    /// `[N, H, W]`
    pub per_frame: Var,
}

/// `filtered + (1 - sigmoid(logits)) * (residual - filtered)`, which is the
/// convex blend `s * filtered + (1 - s) * residual`. In this form a
/// saturated weight or a residual equal to the filtered value reproduces
/// the filtered value exactly.
pub fn blend<T: Real>(g: &mut Graph<T>, filtered: Var, residual: Var, logits: Var) -> Result<Var> {
    if g.shape(filtered) != g.shape(residual) || g.shape(filtered) != g.shape(logits) {
        return Err(Error::shape(
            "per_frame_prediction",
            "map shape",
            format!(
                "filtered {:?}, residual {:?}, weights {:?}",
                g.shape(filtered),
                g.shape(residual),
                g.shape(logits)
            ),
        ));
    }
    let s = g.sigmoid(logits);
    let ones = g.input(Tensor::full(g.shape(s), T::one()));
    let keep_residual = g.sub(ones, s)?;
    let delta = g.sub(residual, filtered)?;
    let correction = g.mul(keep_residual, delta)?;
    g.add(filtered, correction)
}

/// One frame's prediction `s * (X (*) K) + (1 - s) * R`. Also accepts the
/// whole burst at once (`[N,H,W]` maps with `[N,S*S,H,W]` kernels).
pub fn per_frame_prediction<T: Real>(
    g: &mut Graph<T>,
    frame: Var,
    kernels: Var,
    residual: Var,
    logits: Var,
) -> Result<Var> {
    let filtered = g.adaptive_conv(frame, kernels)?;
    blend(g, filtered, residual, logits)
}

fn burst_dims<T: Real>(g: &Graph<T>, burst: Var) -> Result<(usize, usize, usize)> {
    let s = g.shape(burst);
    if s.len() != 3 {
        return Err(Error::shape("reconstruct", "rank", format!("burst must be [N,H,W], got {s:?}")));
    }
    if s[0] == 0 {
        return Err(Error::invalid("reconstruct", "burst has no frames"));
    }
    Ok((s[0], s[1], s[2]))
}

fn mean_over_frames<T: Real>(g: &mut Graph<T>, per_frame: Var) -> Result<Reconstruction> {
    let (_, h, w) = burst_dims(g, per_frame)?;
    let m = g.channel_mean(per_frame)?;
    let denoised = g.reshape(m, &[h, w])?;
    Ok(Reconstruction {
        denoised,
        per_frame,
    })
}

/// Full reconstruction: blend every frame's filtered output with its
/// residual, then average over the burst.
pub fn reconstruct<T: Real>(
    g: &mut Graph<T>,
    burst: Var,
    kernels: Var,
    residuals: Var,
    logits: Var,
) -> Result<Reconstruction> {
    burst_dims(g, burst)?;
    let per_frame = per_frame_prediction(g, burst, kernels, residuals, logits)?;
    mean_over_frames(g, per_frame)
}

/// Reconstruction without the residual branch: the mean of the filtered frames.
pub fn reconstruct_kernel_only<T: Real>(g: &mut Graph<T>, burst: Var, kernels: Var) -> Result<Reconstruction> {
    burst_dims(g, burst)?;
    let per_frame = g.adaptive_conv(burst, kernels)?;
    mean_over_frames(g, per_frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn center_delta_is_identity() {
        let mut seed = 3;
        let frame = Tensor::from_fn(&[5, 7], |_| lcg(&mut seed));
        for s in [1, 3, 5] {
            let k = KernelField::<f64>::center_delta(1, s, 5, 7).unwrap();
            let mut g = Graph::new();
            let f = g.input(frame.clone());
            let kv = g.input(k.values.clone().reshape(&[s * s, 5, 7]).unwrap());
            let y = g.adaptive_conv(f, kv).unwrap();
            assert_eq!(g.data(y), frame.data());
        }
    }

    #[test]
    fn constant_frame_scales_by_kernel_sum() {
        let mut seed = 9;
        let c = 0.37;
        let kernels = Tensor::from_fn(&[9, 4, 6], |_| lcg(&mut seed));
        let mut g = Graph::new();
        let f = g.input(Tensor::full(&[4, 6], c));
        let k = g.input(kernels.clone());
        let y = g.adaptive_conv(f, k).unwrap();
        for p in 0..24 {
            let s: f64 = (0..9).map(|j| kernels.data()[j * 24 + p]).sum();
            assert!((g.data(y)[p] - c * s).abs() < 1e-12);
        }
    }

    #[test]
    fn even_and_mismatched_kernels_rejected() {
        let mut g = Graph::<f64>::new();
        let f = g.input(Tensor::zeros(&[4, 4]));
        let even = g.input(Tensor::zeros(&[4, 4, 4]));
        assert!(g.adaptive_conv(f, even).is_err());
        let wrong = g.input(Tensor::zeros(&[9, 4, 5]));
        assert!(matches!(g.adaptive_conv(f, wrong), Err(Error::Shape { dim: "spatial extent", .. })));
        let burst = g.input(Tensor::zeros(&[2, 4, 4]));
        let one_set = g.input(Tensor::zeros(&[1, 9, 4, 4]));
        assert!(matches!(g.adaptive_conv(burst, one_set), Err(Error::Shape { dim: "frame count", .. })));
    }

    #[test]
    fn blend_limits() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::new(&[3], vec![0.2, -1.0, 4.0]).unwrap());
        let r = g.input(Tensor::new(&[3], vec![1.0, 3.0, -2.0]).unwrap());
        let sat = g.input(Tensor::full(&[3], 1e3));
        let zero = g.input(Tensor::zeros(&[3]));
        let y = blend(&mut g, a, r, sat).unwrap();
        assert_eq!(g.data(y), g.data(a));
        let y = blend(&mut g, a, r, zero).unwrap();
        for i in 0..3 {
            let want = 0.5 * g.data(a)[i] + 0.5 * g.data(r)[i];
            assert!((g.data(y)[i] - want).abs() < 1e-15);
        }
        let y = blend(&mut g, a, a, r).unwrap();
        assert_eq!(g.data(y), g.data(a));
    }

    #[test]
    fn empty_burst_rejected() {
        let mut g = Graph::<f64>::new();
        let b = g.input(Tensor::zeros(&[0, 4, 4]));
        let k = g.input(Tensor::zeros(&[0, 9, 4, 4]));
        assert!(reconstruct_kernel_only(&mut g, b, k).is_err());
    }
}
