//! Gamma-domain reconstruction loss with an annealed per-frame term.
//!
//! ```text
//! l(Y, G) = mean((g(Y) - g(G))^2) + lambda * (mean|dx g(Y) - dx g(G)| + mean|dy g(Y) - dy g(G)|)
//! L       = l(Y, G) + beta * alpha^t * sum_i l(Y_i, G)
//! ```
//!
//! `g` is `clamp(x, 0, 1)^(1/2.2)`; `dx`/`dy` are forward differences with a
//! replicated edge.

use alloc::format;

use crate::error::{Error, Result};
use crate::tape::{Axis, Graph, Var};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_GAMMA: f64 = 2.2;
pub const DEFAULT_ALPHA: f64 = 0.9998;
pub const DEFAULT_BETA: f64 = 100.0;
pub const DEFAULT_LAMBDA: f64 = 1.0;
/// Gamma-curve slope is evaluated no closer to zero than this.
pub const GAMMA_GRAD_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_grad: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_grad: DEFAULT_LAMBDA,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("loss_config", format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid("loss_config", format!("beta {} must be positive", self.beta)));
        }
        if !(self.lambda_grad >= 0.0) {
            return Err(Error::invalid("loss_config", format!("lambda {} must be non-negative", self.lambda_grad)));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::invalid("loss_config", format!("gamma {} must be positive", self.gamma)));
        }
        Ok(())
    }
}

/// `clamp(x, 0, 1)^(1/gamma)` on a plain value.
pub fn gamma_value(x: f64, gamma: f64) -> f64 {
    libm::pow(x.clamp(0.0, 1.0), 1.0 / gamma)
}

/// [`gamma_value`] applied to every element of a tensor.
pub fn gamma_tensor<T: Real>(t: &Tensor<T>, gamma: f64) -> Tensor<T> {
    t.map(|v| T::of(gamma_value(v.as_f64(), gamma)))
}

/// Differentiable gamma correction.
pub fn gamma_correct<T: Real>(g: &mut Graph<T>, image: Var, gamma: f64) -> Var {
    let c = g.clamp(image, T::zero(), T::one());
    g.pow_floored(c, T::of(1.0 / gamma), T::of(GAMMA_GRAD_FLOOR))
}

/// `beta * alpha^t`.
pub fn anneal_weight(t: u64, cfg: &LossConfig) -> f64 {
    cfg.beta * libm::pow(cfg.alpha, t as f64)
}

/// Basic loss against a ground truth that is already gamma-corrected.
fn loss_vs_gamma_target<T: Real>(g: &mut Graph<T>, pred: Var, target_gamma: Var, cfg: &LossConfig) -> Result<Var> {
    let p = gamma_correct(g, pred, cfg.gamma);
    let diff = g.sub(p, target_gamma)?;
    let sq = g.square(diff);
    let l2 = g.mean(sq)?;
    if cfg.lambda_grad == 0.0 {
        return Ok(l2);
    }
    // d(p) - d(t) == d(p - t) since the forward difference is linear.
    let dx = g.forward_diff(diff, Axis::X)?;
    let dy = g.forward_diff(diff, Axis::Y)?;
    let ax = g.abs(dx);
    let ay = g.abs(dy);
    let mx = g.mean(ax)?;
    let my = g.mean(ay)?;
    let l1 = g.add(mx, my)?;
    let reg = g.scale(l1, T::of(cfg.lambda_grad));
    g.add(l2, reg)
}

/// Gamma-corrected target through the same arithmetic as the prediction,
/// detached from the graph.
fn gamma_target<T: Real>(g: &mut Graph<T>, gt: Var, cfg: &LossConfig) -> Var {
    let exponent = T::of(1.0 / cfg.gamma);
    let t = g.value(gt).map(|v| v.max(T::zero()).min(T::one()).max(T::zero()).powf(exponent));
    g.input(t)
}

fn check_pair<T: Real>(g: &Graph<T>, pred: Var, gt: Var) -> Result<()> {
    if g.shape(pred) != g.shape(gt) {
        return Err(Error::shape(
            "basic_loss",
            "image shape",
            format!("prediction {:?}, ground truth {:?}", g.shape(pred), g.shape(gt)),
        ));
    }
    if g.shape(pred).len() != 2 {
        return Err(Error::shape("basic_loss", "rank", format!("expected [H,W], got {:?}", g.shape(pred))));
    }
    Ok(())
}

/// Gamma-domain MSE plus `lambda` times the L1 gap between image gradients.
pub fn basic_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var, cfg: &LossConfig) -> Result<Var> {
    check_pair(g, pred, gt)?;
    let target = gamma_target(g, gt, cfg);
    loss_vs_gamma_target(g, pred, target, cfg)
}

/// Loss terms of one evaluation of the total objective.
#[derive(Debug, Clone, Copy)]
pub struct TotalLoss {
    pub total: Var,
    pub basic: Var,
    pub anneal_weight: f64,
}

/// `basic(denoised) + beta * alpha^t * sum_i basic(per_frame[i])`.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    denoised: Var,
    per_frame: Var,
    gt: Var,
    t: u64,
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    check_pair(g, denoised, gt)?;
    let ps = g.shape(per_frame).to_vec();
    if ps.len() != 3 || ps[1..] != *g.shape(gt) {
        return Err(Error::shape(
            "total_loss",
            "per-frame shape",
            format!("expected [N, {:?}], got {:?}", g.shape(gt), ps),
        ));
    }
    let (n, h, w) = (ps[0], ps[1], ps[2]);
    let target = gamma_target(g, gt, cfg);
    let basic = loss_vs_gamma_target(g, denoised, target, cfg)?;
    let weight = anneal_weight(t, cfg);
    let mut frames_sum = None;
    for i in 0..n {
        let f = g.narrow_channels(per_frame, i, 1)?;
        let f = g.reshape(f, &[h, w])?;
        let l = loss_vs_gamma_target(g, f, target, cfg)?;
        frames_sum = Some(match frames_sum {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    let total = match frames_sum {
        Some(s) => {
            let annealed = g.scale(s, T::of(weight));
            g.add(basic, annealed)?
        }
        None => basic,
    };
    Ok(TotalLoss {
        total,
        basic,
        anneal_weight: weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_endpoints_and_midpoint() {
        assert_eq!(gamma_value(0.0, 2.2), 0.0);
        assert_eq!(gamma_value(1.0, 2.2), 1.0);
        assert!((gamma_value(0.5, 2.2) - 0.729_740_1).abs() < 1e-6);
        assert_eq!(gamma_value(-0.3, 2.2), 0.0);
        assert_eq!(gamma_value(1.7, 2.2), 1.0);
    }

    #[test]
    fn anneal_values() {
        let cfg = LossConfig::default();
        assert_eq!(anneal_weight(0, &cfg), 100.0);
        let w = anneal_weight(80_000, &cfg);
        assert!((w - 1.1236e-5).abs() / w < 1e-3, "{w}");
        for t in [0u64, 1, 17, 5000] {
            let ratio = anneal_weight(t + 1, &cfg) / anneal_weight(t, &cfg);
            assert!((ratio - cfg.alpha).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let mut g = Graph::<f64>::new();
        let img = Tensor::from_fn(&[4, 5], |i| i as f64 / 20.0);
        let p = g.input(img.clone());
        let t = g.input(img.clone());
        let l = basic_loss(&mut g, p, t, &LossConfig::default()).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let frames = g.input(Tensor::stack(&[img.clone(), img.clone()]).unwrap());
        let tl = total_loss(&mut g, p, frames, t, 0, &LossConfig::default()).unwrap();
        assert_eq!(g.value(tl.total).item(), 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut g = Graph::<f64>::new();
        let p = g.input(Tensor::zeros(&[4, 5]));
        let t = g.input(Tensor::zeros(&[5, 4]));
        assert!(basic_loss(&mut g, p, t, &LossConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = [
            LossConfig { alpha: 1.0, ..Default::default() },
            LossConfig { beta: 0.0, ..Default::default() },
            LossConfig { lambda_grad: -1.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
