//! Denoising arbitrary-size bursts with a trained network.

use burstforge_core::burstgen::{estimate_noise_map, GainPreset};
use burstforge_core::net::{Burst, KpnNet};
use burstforge_core::{ParamStore, Tensor};

use crate::error::{Error, Result};

/// Replicate the last row and column until both sides are multiples of `m`.
pub fn pad_edge(plane: &Tensor<f64>, m: usize) -> Tensor<f64> {
    let (h, w) = plane.hw();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    Tensor::from_fn(&[ph, pw], |i| {
        let (y, x) = ((i / pw).min(h - 1), (i % pw).min(w - 1));
        plane.data()[y * w + x]
    })
}

/// Top-left `h x w` window.
pub fn crop_to(plane: &Tensor<f64>, h: usize, w: usize) -> Tensor<f64> {
    let pw = plane.hw().1;
    Tensor::from_fn(&[h, w], |i| plane.data()[(i / w) * pw + i % w])
}

/// Denoise one channel of a burst. `frames[0]` is the reference; the noise
/// map is estimated from it with `preset`.
pub fn denoise_plane(
    net: &KpnNet,
    params: &ParamStore<f32>,
    frames: &[Tensor<f64>],
    preset: &GainPreset,
) -> Result<Tensor<f64>> {
    let n = net.config().burst_len;
    if frames.len() != n {
        return Err(Error::Usage(format!("checkpoint expects N = {n} frames, got {}", frames.len())));
    }
    let (h, w) = frames[0].hw();
    if let Some(f) = frames.iter().find(|f| f.hw() != (h, w)) {
        let (fh, fw) = f.hw();
        return Err(Error::Data(format!("frame size {fh}x{fw} differs from the reference {h}x{w}")));
    }
    let m = net.config().size_multiple();
    let padded: Vec<Tensor<f64>> = frames.iter().map(|f| pad_edge(f, m)).collect();
    let burst = Burst::new(Tensor::stack(&padded)?.cast::<f32>())?;
    let noise = estimate_noise_map(&burst.reference(), preset);
    let (out, _) = net.denoise(params, &burst, &noise)?;
    Ok(crop_to(&out.cast(), h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_then_crop_is_identity() {
        let t = Tensor::from_fn(&[5, 3], |i| i as f64);
        let p = pad_edge(&t, 4);
        assert_eq!(p.shape(), &[8, 4]);
        assert_eq!(p.data()[7 * 4 + 3], 14.0);
        assert_eq!(crop_to(&p, 5, 3), t);
    }

    #[test]
    fn aligned_planes_are_untouched() {
        let t = Tensor::from_fn(&[4, 8], |i| i as f64);
        assert_eq!(pad_edge(&t, 4), t);
    }
}
