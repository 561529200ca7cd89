//! Differentiable primitives recorded on a [`Graph`](crate::Graph).
//!
//! Each submodule adds builder methods to `Graph` and provides the matching
//! vector-Jacobian product used by [`backward`].

mod conv;
mod elementwise;
mod pool;
mod shape;

pub use conv::{col2im, conv2d_output_extent, im2col};

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Node, Op};
use crate::tensor::{Real, Tensor};

pub(crate) fn backward<T: Real>(
    nodes: &[Node<T>],
    out: usize,
    op: &Op<T>,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    match op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            padding,
        } => conv::conv2d_backward(nodes, *input, *weight, *bias, *stride, *padding, g, grads),
        Op::AdaptiveConv {
            frames,
            kernels,
            size,
        } => crate::adaconv::adaptive_conv_backward(nodes, *frames, *kernels, *size, g, grads),
        Op::AvgPool2(x) => pool::avg_pool2_backward(nodes, *x, g, grads),
        Op::MaxPool2 { x, argmax }
        | Op::GlobalMaxPool { x, argmax }
        | Op::ChannelMax { x, argmax } => pool::scatter_backward(nodes, *x, argmax, g, grads),
        Op::Upsample2(x) => pool::upsample2_backward(nodes, *x, g, grads),
        Op::GlobalAvgPool(x) => pool::global_avg_backward(nodes, *x, g, grads),
        Op::ChannelMean(x) => pool::channel_mean_backward(nodes, *x, g, grads),
        Op::ScaleChannels { x, gate } => pool::scale_channels_backward(nodes, *x, *gate, g, grads),
        Op::ScaleSpatial { x, gate } => pool::scale_spatial_backward(nodes, *x, *gate, g, grads),
        Op::Concat(parts) => shape::concat_backward(nodes, parts, g, grads),
        Op::Narrow { x, start } => shape::narrow_backward(nodes, *x, *start, g, grads),
        Op::Reshape(x) => shape::reshape_backward(nodes, *x, g, grads),
        _ => elementwise::backward(nodes, out, op, g, grads),
    }
}

pub(crate) fn expect_rank<T: Real>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            "rank",
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}
