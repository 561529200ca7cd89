use alloc::format;
use alloc::vec::Vec;

use super::expect_rank;
use crate::error::{Error, Result};
use crate::tape::{accumulate, Graph, Node, Op, Var};
use crate::tensor::{Real, Tensor};

fn chw<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    expect_rank(op, t, 3)?;
    let s = t.shape();
    Ok((s[0], s[1], s[2]))
}

fn pool_dims<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (c, h, w) = chw(op, t)?;
    if h == 0 || w == 0 {
        return Err(Error::shape(op, "spatial extent", "zero-sized spatial dimension"));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            op,
            "spatial extent",
            format!("{h}x{w} is not even; pad to an even size first"),
        ));
    }
    Ok((c, h, w))
}

impl<T: Real> Graph<T> {
    /// 2x2 mean pooling with stride 2 on `[C,H,W]`.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (c, h, w) = pool_dims("avg_pool2", t)?;
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::of(0.25);
        let d = t.data();
        let out = Tensor::from_fn(&[c, oh, ow], |i| {
            let (ch, y, xx) = (i / (oh * ow), (i / ow) % oh, i % ow);
            let base = ch * h * w + 2 * y * w + 2 * xx;
            (d[base] + d[base + 1] + d[base + w] + d[base + w + 1]) * quarter
        });
        Ok(self.push(out, Op::AvgPool2(x.0), &[x.0]))
    }

    /// 2x2 max pooling with stride 2 on `[C,H,W]`. Ties resolve to the first
    /// element in row-major order within the window.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (c, h, w) = pool_dims("max_pool2", t)?;
        let (oh, ow) = (h / 2, w / 2);
        let d = t.data();
        let mut argmax = Vec::with_capacity(c * oh * ow);
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = ch * h * w + 2 * y * w + 2 * xx;
                    let mut best = base;
                    for cand in [base + 1, base + w, base + w + 1] {
                        if d[cand] > d[best] {
                            best = cand;
                        }
                    }
                    argmax.push(best);
                    out.push(d[best]);
                }
            }
        }
        let out = Tensor::new(&[c, oh, ow], out)?;
        Ok(self.push(out, Op::MaxPool2 { x: x.0, argmax }, &[x.0]))
    }

    /// Nearest-neighbour 2x upsampling on `[C,H,W]`.
    pub fn upsample2_nearest(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (c, h, w) = chw("upsample2_nearest", t)?;
        let (oh, ow) = (2 * h, 2 * w);
        let d = t.data();
        let out = Tensor::from_fn(&[c, oh, ow], |i| {
            let (ch, y, xx) = (i / (oh * ow), (i / ow) % oh, i % ow);
            d[ch * h * w + (y / 2) * w + xx / 2]
        });
        Ok(self.push(out, Op::Upsample2(x.0), &[x.0]))
    }

    /// `[C,H,W] -> [C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (c, h, w) = chw("global_avg_pool", t)?;
        if h * w == 0 {
            return Err(Error::shape("global_avg_pool", "spatial extent", "empty"));
        }
        let inv = T::one() / T::of((h * w) as f64);
        let out = Tensor::from_fn(&[c], |ch| {
            t.data()[ch * h * w..(ch + 1) * h * w].iter().copied().sum::<T>() * inv
        });
        Ok(self.push(out, Op::GlobalAvgPool(x.0), &[x.0]))
    }

    /// `[C,H,W] -> [C]` spatial max (first index on ties).
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (c, h, w) = chw("global_max_pool", t)?;
        if h * w == 0 {
            return Err(Error::shape("global_max_pool", "spatial extent", "empty"));
        }
        let d = t.data();
        let argmax: Vec<usize> = (0..c)
            .map(|ch| {
                let base = ch * h * w;
                (base..base + h * w).fold(base, |best, i| if d[i] > d[best] { i } else { best })
            })
            .collect();
        let out = Tensor::new(&[c], argmax.iter().map(|&i| d[i]).collect())?;
        Ok(self.push(out, Op::GlobalMaxPool { x: x.0, argmax }, &[x.0]))
    }

    /// `[C,H,W] -> [1,H,W]` mean across channels. Computed as a running
    /// mean, so identical channels give back their common value exactly.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (c, h, w) = chw("channel_mean", t)?;
        if c == 0 {
            return Err(Error::shape("channel_mean", "channels", "empty"));
        }
        let d = t.data();
        let plane = h * w;
        let out = Tensor::from_fn(&[1, h, w], |p| {
            (1..c).fold(d[p], |m, ch| m + (d[ch * plane + p] - m) / T::of((ch + 1) as f64))
        });
        Ok(self.push(out, Op::ChannelMean(x.0), &[x.0]))
    }

    /// `[C,H,W] -> [1,H,W]` max across channels (first channel on ties).
    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (c, h, w) = chw("channel_max", t)?;
        if c == 0 {
            return Err(Error::shape("channel_max", "channels", "empty"));
        }
        let d = t.data();
        let plane = h * w;
        let argmax: Vec<usize> = (0..plane)
            .map(|p| {
                (1..c).fold(p, |best, ch| {
                    let i = ch * plane + p;
                    if d[i] > d[best] {
                        i
                    } else {
                        best
                    }
                })
            })
            .collect();
        let out = Tensor::new(&[1, h, w], argmax.iter().map(|&i| d[i]).collect())?;
        Ok(self.push(out, Op::ChannelMax { x: x.0, argmax }, &[x.0]))
    }

    /// `x[c,h,w] * gate[c]`.
    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (c, h, w) = chw("scale_channels", self.value(x))?;
        if self.shape(gate) != [c] {
            return Err(Error::shape(
                "scale_channels",
                "gate length",
                format!("expected [{c}], got {:?}", self.shape(gate)),
            ));
        }
        let plane = h * w;
        let (d, gv) = (self.data(x), self.data(gate));
        let out = Tensor::from_fn(&[c, h, w], |i| d[i] * gv[i / plane]);
        Ok(self.push(out, Op::ScaleChannels { x: x.0, gate: gate.0 }, &[x.0, gate.0]))
    }

    /// `x[c,h,w] * gate[0,h,w]` broadcast over channels.
    pub fn scale_spatial(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (c, h, w) = chw("scale_spatial", self.value(x))?;
        if self.shape(gate) != [1, h, w] {
            return Err(Error::shape(
                "scale_spatial",
                "gate extent",
                format!("expected [1, {h}, {w}], got {:?}", self.shape(gate)),
            ));
        }
        let plane = h * w;
        let (d, gv) = (self.data(x), self.data(gate));
        let out = Tensor::from_fn(&[c, h, w], |i| d[i] * gv[i % plane]);
        Ok(self.push(out, Op::ScaleSpatial { x: x.0, gate: gate.0 }, &[x.0, gate.0]))
    }
}

pub(crate) fn avg_pool2_backward<T: Real>(
    nodes: &[Node<T>],
    x: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let s = nodes[x].value.shape();
    let (h, w) = (s[1], s[2]);
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    accumulate(nodes, grads, x, |gx| {
        for (i, &gv) in g.iter().enumerate() {
            let (ch, y, xx) = (i / (oh * ow), (i / ow) % oh, i % ow);
            let base = ch * h * w + 2 * y * w + 2 * xx;
            let v = gv * quarter;
            gx[base] += v;
            gx[base + 1] += v;
            gx[base + w] += v;
            gx[base + w + 1] += v;
        }
    });
}

pub(crate) fn scatter_backward<T: Real>(
    nodes: &[Node<T>],
    x: usize,
    argmax: &[usize],
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    accumulate(nodes, grads, x, |gx| {
        for (&src, &gv) in argmax.iter().zip(g) {
            gx[src] += gv;
        }
    });
}

pub(crate) fn upsample2_backward<T: Real>(
    nodes: &[Node<T>],
    x: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let s = nodes[x].value.shape();
    let (h, w) = (s[1], s[2]);
    let (oh, ow) = (2 * h, 2 * w);
    accumulate(nodes, grads, x, |gx| {
        for (i, &gv) in g.iter().enumerate() {
            let (ch, y, xx) = (i / (oh * ow), (i / ow) % oh, i % ow);
            gx[ch * h * w + (y / 2) * w + xx / 2] += gv;
        }
    });
}

pub(crate) fn global_avg_backward<T: Real>(
    nodes: &[Node<T>],
    x: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let s = nodes[x].value.shape();
    let plane = s[1] * s[2];
    let inv = T::one() / T::of(plane as f64);
    accumulate(nodes, grads, x, |gx| {
        for (i, v) in gx.iter_mut().enumerate() {
            *v += g[i / plane] * inv;
        }
    });
}

pub(crate) fn channel_mean_backward<T: Real>(
    nodes: &[Node<T>],
    x: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let s = nodes[x].value.shape();
    let plane = s[1] * s[2];
    let inv = T::one() / T::of(s[0] as f64);
    accumulate(nodes, grads, x, |gx| {
        for (i, v) in gx.iter_mut().enumerate() {
            *v += g[i % plane] * inv;
        }
    });
}

pub(crate) fn scale_channels_backward<T: Real>(
    nodes: &[Node<T>],
    x: usize,
    gate: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let xs = &nodes[x].value;
    let gv = nodes[gate].value.data();
    let plane = xs.shape()[1] * xs.shape()[2];
    accumulate(nodes, grads, x, |gx| {
        for (i, v) in gx.iter_mut().enumerate() {
            *v += g[i] * gv[i / plane];
        }
    });
    accumulate(nodes, grads, gate, |gg| {
        for (i, (&gi, &xi)) in g.iter().zip(xs.data()).enumerate() {
            gg[i / plane] += gi * xi;
        }
    });
}

pub(crate) fn scale_spatial_backward<T: Real>(
    nodes: &[Node<T>],
    x: usize,
    gate: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let xs = &nodes[x].value;
    let gv = nodes[gate].value.data();
    let plane = xs.shape()[1] * xs.shape()[2];
    accumulate(nodes, grads, x, |gx| {
        for (i, v) in gx.iter_mut().enumerate() {
            *v += g[i] * gv[i % plane];
        }
    });
    accumulate(nodes, grads, gate, |gg| {
        for (i, (&gi, &xi)) in g.iter().zip(xs.data()).enumerate() {
            gg[i % plane] += gi * xi;
        }
    });
}
