//! Gradient checks for every differentiable operation and for a toy
//! end-to-end network, as one list of named cases.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_gradients, GradCheckOptions, GradCheckReport};
use crate::adaconv::{blend, reconstruct, reconstruct_kernel_only};
use crate::attention::{AttentionBlock, ChannelAttention, SpatialAttention};
use crate::error::Result;
use crate::net::{build_ablation, KpnNet, NetConfig};
use crate::objective::{basic_loss, total_loss, LossConfig};
use crate::params::ParamStore;
use crate::tape::{Axis, Graph, Var};
use crate::tensor::Tensor;

/// Tolerance for single operations.
pub const OP_RTOL: f64 = 1e-4;
/// Tolerance for the end-to-end network.
pub const END_TO_END_RTOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub name: String,
    pub rtol: f64,
    pub report: GradCheckReport,
    /// Parameter or input name of the worst entry.
    pub worst_name: String,
}

fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values whose pairwise gaps exceed the finite-difference step, so max and
/// ReLU decisions cannot flip under perturbation.
fn separated(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_fn(shape, |i| (order[i] as f64 - n as f64 / 2.0 + 0.5) * 0.05)
}

/// `sum(y * r)` with a fixed random `r`, so every output element matters.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = g.input(random(g.shape(y), -1.0, 1.0, seed));
    let p = g.mul(y, r)?;
    g.sum(p)
}

fn params_as_inputs(store: &ParamStore<f64>) -> (Vec<String>, Vec<Tensor<f64>>) {
    store.iter().map(|(n, t)| (n.to_string(), t.clone())).unzip()
}

fn bind_all(g: &mut Graph<f64>, names: &[String], vars: &[Var]) {
    for (n, &v) in names.iter().zip(vars) {
        g.bind_param(n, v);
    }
}

struct Suite {
    cases: Vec<SuiteCase>,
}

impl Suite {
    fn run<F>(&mut self, name: &str, inputs: &[Tensor<f64>], options: GradCheckOptions, names: &[String], f: F) -> Result<()>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let report = check_gradients(inputs, &options, f)?;
        let worst_name = names
            .get(report.worst_input)
            .cloned()
            .unwrap_or_else(|| format!("input {}", report.worst_input));
        self.cases.push(SuiteCase {
            name: name.into(),
            rtol: options.rtol,
            report,
            worst_name,
        });
        Ok(())
    }

    fn op<F>(&mut self, name: &str, inputs: &[Tensor<f64>], f: F) -> Result<()>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        self.run(name, inputs, GradCheckOptions::with_rtol(OP_RTOL), &[], f)
    }
}

fn conv_cases(s: &mut Suite) -> Result<()> {
    for (k, stride, pad, bias) in [(3, 1, 1, true), (3, 2, 1, false), (1, 1, 0, true), (5, 1, 2, true), (3, 1, 0, false)] {
        let x = random(&[3, 7, 6], -1.0, 1.0, 1);
        let w = random(&[4, 3, k, k], -0.5, 0.5, 2);
        let b = random(&[4], -0.5, 0.5, 3);
        s.op(&format!("conv2d k{k} stride{stride} pad{pad}"), &[x, w, b], |g, v| {
            let y = g.conv2d(v[0], v[1], bias.then_some(v[2]), stride, pad)?;
            project(g, y, 9)
        })?;
    }
    Ok(())
}

fn elementwise_cases(s: &mut Suite) -> Result<()> {
    let x = separated(&[2, 3, 4], 5);
    let y = random(&[2, 3, 4], -1.0, 1.0, 6);
    s.op("relu", core::slice::from_ref(&x), |g, v| {
        let y = g.relu(v[0]);
        project(g, y, 1)
    })?;
    s.op("sigmoid", core::slice::from_ref(&y), |g, v| {
        let y = g.sigmoid(v[0]);
        project(g, y, 1)
    })?;
    s.op("add/sub/mul", &[x.clone(), y.clone()], |g, v| {
        let a = g.add(v[0], v[1])?;
        let d = g.sub(v[0], v[1])?;
        let m = g.mul(a, d)?;
        project(g, m, 2)
    })?;
    s.op("scale/square", core::slice::from_ref(&y), |g, v| {
        let a = g.scale(v[0], 0.7);
        let q = g.square(a);
        project(g, q, 3)
    })?;
    s.op("abs", core::slice::from_ref(&x), |g, v| {
        let a = g.abs(v[0]);
        project(g, a, 4)
    })?;
    s.op("clamp", &[x], |g, v| {
        let c = g.clamp(v[0], -0.21, 0.33);
        project(g, c, 5)
    })?;
    s.op("pow", &[random(&[2, 3, 4], 0.05, 1.0, 7)], |g, v| {
        let p = g.pow_floored(v[0], 1.0 / 2.2, 1e-4);
        project(g, p, 6)
    })?;
    let img = random(&[5, 6], -1.0, 1.0, 8);
    for (axis, label) in [(Axis::X, "x"), (Axis::Y, "y")] {
        s.op(&format!("forward_diff {label}"), core::slice::from_ref(&img), |g, v| {
            let d = g.forward_diff(v[0], axis)?;
            project(g, d, 7)
        })?;
    }
    s.op("sum/mean", &[y], |g, v| {
        let q = g.square(v[0]);
        let m = g.mean(q)?;
        let t = g.sum(v[0])?;
        g.add(m, t)
    })
}

fn pooling_cases(s: &mut Suite) -> Result<()> {
    let x = separated(&[3, 4, 6], 11);
    s.op("avg_pool2", core::slice::from_ref(&x), |g, v| {
        let y = g.avg_pool2(v[0])?;
        project(g, y, 1)
    })?;
    s.op("max_pool2", core::slice::from_ref(&x), |g, v| {
        let y = g.max_pool2(v[0])?;
        project(g, y, 2)
    })?;
    s.op("upsample2_nearest", core::slice::from_ref(&x), |g, v| {
        let y = g.upsample2_nearest(v[0])?;
        project(g, y, 3)
    })?;
    s.op("global avg/max pool", core::slice::from_ref(&x), |g, v| {
        let a = g.global_avg_pool(v[0])?;
        let m = g.global_max_pool(v[0])?;
        let t = g.add(a, m)?;
        project(g, t, 4)
    })?;
    s.op("channel mean/max", core::slice::from_ref(&x), |g, v| {
        let a = g.channel_mean(v[0])?;
        let m = g.channel_max(v[0])?;
        let t = g.concat_channels(&[a, m])?;
        project(g, t, 5)
    })?;
    let other = random(&[2, 4, 6], -1.0, 1.0, 12);
    s.op("concat/narrow/reshape", &[x.clone(), other], |g, v| {
        let c = g.concat_channels(&[v[0], v[1]])?;
        let n = g.narrow_channels(c, 2, 2)?;
        let r = g.reshape(n, &[4, 12])?;
        let q = g.square(r);
        project(g, q, 6)
    })?;
    let gate_c = random(&[3], 0.1, 0.9, 13);
    let gate_s = random(&[1, 4, 6], 0.1, 0.9, 14);
    s.op("scale_channels/scale_spatial", &[x, gate_c, gate_s], |g, v| {
        let a = g.scale_channels(v[0], v[1])?;
        let b = g.scale_spatial(a, v[2])?;
        project(g, b, 7)
    })
}

fn adaptive_cases(s: &mut Suite) -> Result<()> {
    for size in [1, 3, 5] {
        let frame = random(&[5, 4], 0.0, 1.0, 20);
        let kernels = random(&[size * size, 5, 4], -0.5, 0.5, 21);
        s.op(&format!("adaptive_conv S={size}"), &[frame, kernels], |g, v| {
            let y = g.adaptive_conv(v[0], v[1])?;
            project(g, y, 22)
        })?;
    }
    let frames = random(&[3, 4, 5], 0.0, 1.0, 23);
    let kernels = random(&[3, 9, 4, 5], -0.5, 0.5, 24);
    s.op("adaptive_conv batched", &[frames, kernels], |g, v| {
        let y = g.adaptive_conv(v[0], v[1])?;
        project(g, y, 25)
    })?;

    let burst = random(&[3, 4, 4], 0.0, 1.0, 30);
    let kernels = random(&[3, 9, 4, 4], -0.4, 0.4, 31);
    let residuals = random(&[3, 4, 4], -0.2, 0.2, 32);
    let logits = random(&[3, 4, 4], -2.0, 2.0, 33);
    s.op("blend", &[burst.clone(), residuals.clone(), logits.clone()], |g, v| {
        let y = blend(g, v[0], v[1], v[2])?;
        project(g, y, 34)
    })?;
    s.op("reconstruct", &[burst.clone(), kernels.clone(), residuals, logits], |g, v| {
        let r = reconstruct(g, v[0], v[1], v[2], v[3])?;
        let a = project(g, r.denoised, 35)?;
        let b = project(g, r.per_frame, 36)?;
        g.add(a, b)
    })?;
    s.op("reconstruct kernel-only", &[burst, kernels], |g, v| {
        let r = reconstruct_kernel_only(g, v[0], v[1])?;
        let a = project(g, r.denoised, 37)?;
        let b = project(g, r.per_frame, 38)?;
        g.add(a, b)
    })
}

fn attention_case(s: &mut Suite) -> Result<()> {
    let ca = ChannelAttention::new("a", 32, 16)?;
    let sa = SpatialAttention::new("a", 7)?;
    let mut store = ParamStore::<f64>::new();
    ca.register(&mut store, 3)?;
    sa.register(&mut store, 3)?;
    for (_, t) in store.iter_mut() {
        if t.rank() == 1 {
            *t = random(t.shape(), -0.3, 0.3, t.len() as u64);
        }
    }
    let (mut names, mut inputs) = params_as_inputs(&store);
    let n = names.len();
    names.push("features".into());
    inputs.push(random(&[32, 4, 4], -1.0, 1.0, 40));
    let block = AttentionBlock {
        channel: Some(ca),
        spatial: Some(sa),
    };
    let empty = ParamStore::new();
    let options = GradCheckOptions::with_rtol(OP_RTOL);
    let bound = names[..n].to_vec();
    s.run("channel+spatial attention", &inputs, options, &names, |g, v| {
        bind_all(g, &bound, &v[..n]);
        let y = block.apply(g, &empty, v[n])?;
        project(g, y, 41)
    })
}

fn loss_cases(s: &mut Suite) -> Result<()> {
    let pred = random(&[6, 5], 0.05, 0.95, 50);
    let gt = random(&[6, 5], 0.05, 0.95, 51);
    let frames = random(&[3, 6, 5], 0.05, 0.95, 52);
    let cfg = LossConfig::default();
    s.op("basic_loss", core::slice::from_ref(&pred), |g, v| {
        let target = g.input(gt.clone());
        basic_loss(g, v[0], target, &cfg)
    })?;
    s.op("total_loss", &[pred, frames], |g, v| {
        let target = g.input(gt.clone());
        Ok(total_loss(g, v[0], v[1], target, 1000, &cfg)?.total)
    })
}

/// Two-frame 16x16 network with all modules, through the full objective.
///
/// The kernel head is started near a box filter (small weights, bias
/// `1/S^2`) so the per-frame predictions stay inside `(0, 1)`: the gamma
/// curve has an unbounded slope at zero, where no finite difference is
/// meaningful. A step of `1e-6` keeps ReLU switching points out of reach of
/// the perturbation; `atol` covers roundoff of a loss of magnitude ~10.
fn end_to_end_case(s: &mut Suite) -> Result<()> {
    let config = NetConfig {
        burst_len: 2,
        kernel_size: 3,
        widths: vec![4, 8],
        ..build_ablation(6)?
    };
    let taps = config.taps();
    let kernel_channels = config.burst_len * taps;
    let net = KpnNet::new(config)?;
    let mut store: ParamStore<f64> = net.init_params(7)?;
    if let Some(w) = store.get_mut("head_kr.conv2.weight") {
        w.data_mut().iter_mut().for_each(|v| *v *= 0.05);
    }
    if let Some(b) = store.get_mut("head_kr.conv2.bias") {
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            *v = if i < kernel_channels { 1.0 / taps as f64 } else { 0.0 };
        }
    }
    let (mut names, mut inputs) = params_as_inputs(&store);
    let n = names.len();
    names.push("burst".into());
    names.push("noise_map".into());
    inputs.push(random(&[2, 16, 16], 0.05, 0.95, 60));
    inputs.push(random(&[16, 16], 0.01, 0.05, 61));
    let gt = random(&[16, 16], 0.05, 0.95, 62);
    let options = GradCheckOptions {
        step: 1e-6,
        atol: 1e-7,
        max_entries: Some(40),
        ..GradCheckOptions::with_rtol(END_TO_END_RTOL)
    };
    let empty = ParamStore::new();
    let bound = names[..n].to_vec();
    s.run("end-to-end toy network", &inputs, options, &names, |g, v| {
        bind_all(g, &bound, &v[..n]);
        let out = net.forward_vars(g, &empty, v[n], v[n + 1])?;
        let target = g.input(gt.clone());
        let r = out.reconstruction;
        Ok(total_loss(g, r.denoised, r.per_frame, target, 0, &LossConfig::default())?.total)
    })
}

/// Run every case.
pub fn run_suite() -> Result<Vec<SuiteCase>> {
    let mut s = Suite { cases: Vec::new() };
    conv_cases(&mut s)?;
    elementwise_cases(&mut s)?;
    pooling_cases(&mut s)?;
    adaptive_cases(&mut s)?;
    attention_case(&mut s)?;
    loss_cases(&mut s)?;
    end_to_end_case(&mut s)?;
    Ok(s.cases)
}
