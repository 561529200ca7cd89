use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{accumulate, Graph, Node, Op, Var};
use crate::tensor::{numel, Real, Tensor};

impl<T: Real> Graph<T> {
    /// Concatenate along the leading (channel) dimension. Trailing extents
    /// must agree.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
        let tail = self.shape(*first).get(1..).unwrap_or(&[]).to_vec();
        if self.shape(*first).is_empty() {
            return Err(Error::shape("concat_channels", "rank", "scalars cannot be concatenated"));
        }
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            let s = self.shape(*p);
            if s.len() != tail.len() + 1 || s[1..] != tail[..] {
                return Err(Error::shape(
                    "concat_channels",
                    "spatial extent",
                    format!("{:?} does not match trailing extents {:?}", s, tail),
                ));
            }
            channels += s[0];
            data.extend_from_slice(self.data(*p));
        }
        let mut shape = alloc::vec![channels];
        shape.extend_from_slice(&tail);
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Concat(idx.clone()), &idx))
    }

    /// Channels `start..start+len` of the leading dimension.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start + len > s[0] {
            return Err(Error::shape(
                "narrow_channels",
                "channels",
                format!("range {}..{} outside {:?}", start, start + len, s),
            ));
        }
        let inner = numel(&s[1..]);
        let mut shape = s.clone();
        shape[0] = len;
        let data = self.data(x)[start * inner..(start + len) * inner].to_vec();
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Narrow { x: x.0, start: start * inner }, &[x.0]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x.0), &[x.0]))
    }
}

pub(crate) fn concat_backward<T: Real>(
    nodes: &[Node<T>],
    parts: &[usize],
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let mut offset = 0;
    for &p in parts {
        let n = nodes[p].value.len();
        let slice = &g[offset..offset + n];
        accumulate(nodes, grads, p, |gp| {
            gp.iter_mut().zip(slice).for_each(|(a, &b)| *a += b);
        });
        offset += n;
    }
}

pub(crate) fn narrow_backward<T: Real>(
    nodes: &[Node<T>],
    x: usize,
    start: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    accumulate(nodes, grads, x, |gx| {
        gx[start..start + g.len()]
            .iter_mut()
            .zip(g)
            .for_each(|(a, &b)| *a += b);
    });
}

pub(crate) fn reshape_backward<T: Real>(
    nodes: &[Node<T>],
    x: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    accumulate(nodes, grads, x, |gx| {
        gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
    });
}
