use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::expect_rank;
use crate::error::{Error, Result};
use crate::tape::{accumulate, Graph, Node, Op, Var};
use crate::tensor::{gemm, Layout, Real, Tensor};

/// Output extent of a convolution along one axis.
pub fn conv2d_output_extent(extent: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = extent + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfold `[C,H,W]` into `[C*k*k, H'*W']` with zero padding.
pub fn im2col<T: Real>(
    input: &[T],
    (channels, height, width): (usize, usize, usize),
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Vec<T> {
    let out_h = conv2d_output_extent(height, kernel, stride, padding).unwrap_or(0);
    let out_w = conv2d_output_extent(width, kernel, stride, padding).unwrap_or(0);
    let positions = out_h * out_w;
    let mut cols = vec![T::zero(); channels * kernel * kernel * positions];
    for c in 0..channels {
        let plane = &input[c * height * width..(c + 1) * height * width];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * width..(iy as usize + 1) * width];
                    let drow = &mut dst[oy * out_w..(oy + 1) * out_w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < width as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: fold `[C*k*k, H'*W']` back into `[C,H,W]`, summing overlaps.
pub fn col2im<T: Real>(
    cols: &[T],
    (channels, height, width): (usize, usize, usize),
    kernel: usize,
    stride: usize,
    padding: usize,
    out: &mut [T],
) {
    let out_h = conv2d_output_extent(height, kernel, stride, padding).unwrap_or(0);
    let out_w = conv2d_output_extent(width, kernel, stride, padding).unwrap_or(0);
    let positions = out_h * out_w;
    for c in 0..channels {
        let plane = &mut out[c * height * width..(c + 1) * height * width];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    let prow = &mut plane[iy as usize * width..(iy as usize + 1) * width];
                    for ox in 0..out_w {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < width as isize {
                            prow[ix as usize] += src[oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn geometry<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<(Geometry, usize)> {
    expect_rank("conv2d", input, 3)?;
    expect_rank("conv2d", weight, 4)?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let ws = weight.shape();
    let (out_c, k) = (ws[0], ws[2]);
    if ws[1] != c {
        return Err(Error::shape(
            "conv2d",
            "input channels",
            format!("weight expects {} input channels, input has {}", ws[1], c),
        ));
    }
    if ws[3] != k {
        return Err(Error::shape(
            "conv2d",
            "kernel width",
            format!("kernel must be square, got {}x{}", k, ws[3]),
        ));
    }
    if k % 2 == 0 {
        return Err(Error::invalid("conv2d", format!("kernel size {k} is not odd")));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be at least 1"));
    }
    if let Some(b) = bias {
        if b.shape() != [out_c] {
            return Err(Error::shape(
                "conv2d",
                "bias length",
                format!("expected [{}], got {:?}", out_c, b.shape()),
            ));
        }
    }
    let out_h = conv2d_output_extent(h, k, stride, padding)
        .ok_or_else(|| Error::shape("conv2d", "height", format!("{h} (+2*{padding}) < kernel {k}")))?;
    let out_w = conv2d_output_extent(w, k, stride, padding)
        .ok_or_else(|| Error::shape("conv2d", "width", format!("{w} (+2*{padding}) < kernel {k}")))?;
    Ok((
        Geometry {
            channels: c,
            height: h,
            width: w,
            kernel: k,
            stride,
            padding,
            out_h,
            out_w,
        },
        out_c,
    ))
}

fn columns<'a, T: Real>(input: &'a [T], geo: &Geometry, scratch: &'a mut Vec<T>) -> &'a [T] {
    if geo.is_pointwise() {
        input
    } else {
        *scratch = im2col(
            input,
            (geo.channels, geo.height, geo.width),
            geo.kernel,
            geo.stride,
            geo.padding,
        );
        scratch
    }
}

impl<T: Real> Graph<T> {
    /// Cross-correlation of `input [C,H,W]` with `weight [O,C,k,k]` plus an
    /// optional `bias [O]`. Output is `[O, H', W']` with
    /// `H' = (H + 2*padding - k) / stride + 1`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = bias.map(|b| self.value(b));
        let (geo, out_c) = geometry(x, w, b, stride, padding)?;
        let positions = geo.positions();
        let mut out = vec![T::zero(); out_c * positions];
        if let Some(b) = b {
            for (o, &bv) in b.data().iter().enumerate() {
                out[o * positions..(o + 1) * positions].fill(bv);
            }
        }
        let mut scratch = Vec::new();
        let cols = columns(x.data(), &geo, &mut scratch);
        gemm(
            out_c,
            geo.patch_len(),
            positions,
            w.data(),
            Layout::N,
            cols,
            Layout::N,
            T::one(),
            &mut out,
        );
        let value = Tensor::new(&[out_c, geo.out_h, geo.out_w], out)?;
        let mut inputs = vec![input.0, weight.0];
        inputs.extend(bias.map(|b| b.0));
        Ok(self.push(
            value,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.map(|b| b.0),
                stride,
                padding,
            },
            &inputs,
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    nodes: &[Node<T>],
    input: usize,
    weight: usize,
    bias: Option<usize>,
    stride: usize,
    padding: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let x = &nodes[input].value;
    let w = &nodes[weight].value;
    let (geo, out_c) = geometry(x, w, bias.map(|b| &nodes[b].value), stride, padding)
        .expect("validated at record time");
    let positions = geo.positions();
    let patch = geo.patch_len();

    if let Some(b) = bias {
        accumulate(nodes, grads, b, |gb| {
            for (o, acc) in gb.iter_mut().enumerate() {
                *acc += g[o * positions..(o + 1) * positions].iter().copied().sum::<T>();
            }
        });
    }
    if nodes[weight].value.requires_grad {
        let mut scratch = Vec::new();
        let cols = columns(x.data(), &geo, &mut scratch);
        accumulate(nodes, grads, weight, |gw| {
            gemm(out_c, positions, patch, g, Layout::N, cols, Layout::T, T::one(), gw);
        });
    }
    if nodes[input].value.requires_grad {
        if geo.is_pointwise() {
            accumulate(nodes, grads, input, |gx| {
                gemm(patch, out_c, positions, w.data(), Layout::T, g, Layout::N, T::one(), gx);
            });
        } else {
            let mut dcols = vec![T::zero(); patch * positions];
            gemm(patch, out_c, positions, w.data(), Layout::T, g, Layout::N, T::zero(), &mut dcols);
            accumulate(nodes, grads, input, |gx| {
                col2im(
                    &dcols,
                    (geo.channels, geo.height, geo.width),
                    geo.kernel,
                    geo.stride,
                    geo.padding,
                    gx,
                );
            });
        }
    }
}
