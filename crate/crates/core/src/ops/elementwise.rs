use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{accumulate, Axis, Graph, Node, Op, Var};
use crate::tensor::{Real, Tensor};

fn unary<T: Real>(g: &mut Graph<T>, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
    let out = g.value(x).map(f);
    g.push(out, op, &[x.0])
}

fn binary<T: Real>(
    g: &mut Graph<T>,
    name: &'static str,
    a: Var,
    b: Var,
    op: Op<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(
            name,
            "operand shape",
            format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        ));
    }
    let (da, db) = (g.data(a), g.data(b));
    let data: Vec<T> = da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect();
    let out = Tensor::new(g.shape(a), data)?;
    Ok(g.push(out, op, &[a.0, b.0]))
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn relu(&mut self, x: Var) -> Var {
        unary(self, x, Op::Relu(x.0), |v| v.max(T::zero()))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        unary(self, x, Op::Sigmoid(x.0), sigmoid)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        binary(self, "add", a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        binary(self, "sub", a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        binary(self, "mul", a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        unary(self, x, Op::Scale(x.0, factor), |v| v * factor)
    }

    pub fn square(&mut self, x: Var) -> Var {
        unary(self, x, Op::Square(x.0), |v| v * v)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        unary(self, x, Op::Abs(x.0), |v| v.abs())
    }

    /// Clamp to `[lo, hi]`; the gradient passes only where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        unary(self, x, Op::Clamp { x: x.0, lo, hi }, |v| v.max(lo).min(hi))
    }

    /// `x^exponent` for `x >= 0`. The derivative is evaluated at
    /// `max(x, floor)` so it stays finite at zero for exponents below one.
    pub fn pow_floored(&mut self, x: Var, exponent: T, floor: T) -> Var {
        unary(
            self,
            x,
            Op::Pow {
                x: x.0,
                exponent,
                floor,
            },
            |v| v.max(T::zero()).powf(exponent),
        )
    }

    /// Forward difference along `axis` over the last two dimensions with a
    /// replicated edge (the last row/column difference is zero).
    pub fn forward_diff(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 2 {
            return Err(Error::shape("forward_diff", "rank", "needs at least [H, W]"));
        }
        let (h, w) = t.hw();
        let d = t.data();
        let out = Tensor::from_fn(t.shape(), |i| {
            let (y, xx) = ((i / w) % h, i % w);
            match axis {
                Axis::X if xx + 1 < w => d[i + 1] - d[i],
                Axis::Y if y + 1 < h => d[i + w] - d[i],
                _ => T::zero(),
            }
        });
        Ok(self.push(out, Op::ForwardDiff { x: x.0, axis }, &[x.0]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().copied().sum::<T>();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x.0), &[x.0]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::shape("mean", "element count", "empty tensor"));
        }
        let s = self.data(x).iter().copied().sum::<T>() / T::of(n as f64);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x.0), &[x.0]))
    }
}

fn add_scaled<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    idx: usize,
    g: &[T],
    f: impl Fn(usize, T) -> T,
) {
    accumulate(nodes, grads, idx, |gx| {
        for (i, (a, &gv)) in gx.iter_mut().zip(g).enumerate() {
            *a += f(i, gv);
        }
    });
}

pub(crate) fn backward<T: Real>(
    nodes: &[Node<T>],
    out: usize,
    op: &Op<T>,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let val = |i: usize| nodes[i].value.data();
    match *op {
        Op::Relu(x) => {
            let xv = val(x);
            add_scaled(nodes, grads, x, g, |i, gv| if xv[i] > T::zero() { gv } else { T::zero() });
        }
        Op::Sigmoid(x) => {
            let y = val(out);
            add_scaled(nodes, grads, x, g, |i, gv| gv * y[i] * (T::one() - y[i]));
        }
        Op::Add(a, b) => {
            add_scaled(nodes, grads, a, g, |_, gv| gv);
            add_scaled(nodes, grads, b, g, |_, gv| gv);
        }
        Op::Sub(a, b) => {
            add_scaled(nodes, grads, a, g, |_, gv| gv);
            add_scaled(nodes, grads, b, g, |_, gv| -gv);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(a), val(b));
            add_scaled(nodes, grads, a, g, |i, gv| gv * bv[i]);
            add_scaled(nodes, grads, b, g, |i, gv| gv * av[i]);
        }
        Op::Scale(x, f) => add_scaled(nodes, grads, x, g, |_, gv| gv * f),
        Op::Square(x) => {
            let xv = val(x);
            let two = T::of(2.0);
            add_scaled(nodes, grads, x, g, |i, gv| gv * two * xv[i]);
        }
        Op::Abs(x) => {
            let xv = val(x);
            add_scaled(nodes, grads, x, g, |i, gv| {
                if xv[i] > T::zero() {
                    gv
                } else if xv[i] < T::zero() {
                    -gv
                } else {
                    T::zero()
                }
            });
        }
        Op::Clamp { x, lo, hi } => {
            let xv = val(x);
            add_scaled(nodes, grads, x, g, |i, gv| {
                if xv[i] >= lo && xv[i] <= hi {
                    gv
                } else {
                    T::zero()
                }
            });
        }
        Op::Pow { x, exponent, floor } => {
            let xv = val(x);
            let em1 = exponent - T::one();
            add_scaled(nodes, grads, x, g, |i, gv| {
                if xv[i] < T::zero() {
                    T::zero()
                } else {
                    gv * exponent * xv[i].max(floor).powf(em1)
                }
            });
        }
        Op::ForwardDiff { x, axis } => {
            let (h, w) = nodes[x].value.hw();
            accumulate(nodes, grads, x, |gx| {
                for (i, &gv) in g.iter().enumerate() {
                    let (y, xx) = ((i / w) % h, i % w);
                    match axis {
                        Axis::X if xx + 1 < w => {
                            gx[i + 1] += gv;
                            gx[i] -= gv;
                        }
                        Axis::Y if y + 1 < h => {
                            gx[i + w] += gv;
                            gx[i] -= gv;
                        }
                        _ => {}
                    }
                }
            });
        }
        Op::Sum(x) => {
            let gv = g[0];
            accumulate(nodes, grads, x, |gx| gx.iter_mut().for_each(|a| *a += gv));
        }
        Op::Mean(x) => {
            let gv = g[0] / T::of(nodes[x].value.len() as f64);
            accumulate(nodes, grads, x, |gx| gx.iter_mut().for_each(|a| *a += gv));
        }
        _ => unreachable!("routed elsewhere"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_and_relu_values() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[3], alloc::vec![0.0, -2.0, 3.0]).unwrap());
        let s = g.sigmoid(x);
        let r = g.relu(x);
        assert_eq!(g.data(s)[0], 0.5);
        assert_eq!(g.data(r), &[0.0, 0.0, 3.0]);
        // extreme logits stay finite
        let big = g.input(Tensor::new(&[2], alloc::vec![-800.0, 800.0]).unwrap());
        let sb = g.sigmoid(big);
        assert_eq!(g.data(sb), &[0.0, 1.0]);
    }

    #[test]
    fn sum_and_half_square_gradients() {
        let p = Tensor::new(&[4], alloc::vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let mut g = Graph::<f64>::new();
        let v = g.leaf(p.clone());
        let l = g.sum(v).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(v).unwrap(), &[1.0; 4]);

        let mut g = Graph::<f64>::new();
        let v = g.leaf(p.clone());
        let sq = g.square(v);
        let s = g.sum(sq).unwrap();
        let l = g.scale(s, 0.5);
        g.backward(l).unwrap();
        assert_eq!(g.grad(v).unwrap(), p.data());
    }

    #[test]
    fn backward_rejects_non_scalar_and_accumulates() {
        let mut g = Graph::<f64>::new();
        let v = g.leaf(Tensor::full(&[3], 2.0));
        assert!(matches!(g.backward(v), Err(Error::NonScalarLoss(_))));
        let l = g.sum(v).unwrap();
        g.backward(l).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(v).unwrap(), &[2.0; 3]);
        g.zero_grad();
        assert!(g.grad(v).is_none());
    }

    #[test]
    fn forward_diff_replicates_edge() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[2, 3], alloc::vec![1.0, 2.0, 4.0, 0.0, 5.0, 5.0]).unwrap());
        let dx = g.forward_diff(x, Axis::X).unwrap();
        let dy = g.forward_diff(x, Axis::Y).unwrap();
        assert_eq!(g.data(dx), &[1.0, 2.0, 0.0, 5.0, 0.0, 0.0]);
        assert_eq!(g.data(dy), &[-1.0, 3.0, 1.0, 0.0, 0.0, 0.0]);
    }
}
