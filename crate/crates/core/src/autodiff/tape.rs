use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    ScalarMul(Var, f64),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { src: Var, axis: usize, start: usize },
    Sum(Var),
    SumAxis { src: Var, axis: usize },
    Broadcast { src: Var, axis: usize },
    Reshape(Var),
    Square(Var),
    Sqrt(Var),
    Ln(Var),
    LeakyRelu(Var, f64),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a computation for reverse-mode differentiation.
///
/// Binary element-wise ops broadcast the right operand when its shape is a
/// suffix of the left operand's shape (a rank-0 right operand always fits).
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<Var>,
}

/// Gradients of a scalar with respect to every registered parameter, in
/// registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, param: usize) -> Option<&Tensor<T>> {
        self.grads.get(param)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.grads.iter()
    }

    pub fn into_vec(self) -> Vec<Tensor<T>> {
        self.grads
    }
}

/// `(outer, mid, inner)` extents around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf; its gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push(v);
        v
    }

    /// `a @ b` where `b` is a matrix and every leading axis of `a` is a row.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let k = sb[0];
        let n = sb[1];
        let rows = self.value(a).len() / k.max(1);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = vec![T::ZERO; rows * n];
        T::gemm(
            rows,
            k,
            n,
            self.value(a).data(),
            k,
            1,
            self.value(b).data(),
            n,
            1,
            &mut out,
            false,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Matmul(a, b), needs))
    }

    fn broadcast_check(&self, a: Var, b: Var, op: &str) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Shape(format!("{op} {sa:?} with {sb:?}")));
        }
        Ok(self.value(b).len())
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, op: Op, f: impl Fn(T, T) -> T) -> Result<Var> {
        let inner = self.broadcast_check(a, b, name)?;
        let bv = self.value(b).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| f(*x, bv[i % inner]))
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", Op::Div(a, b), |x, y| x / y)
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let k = T::from_f64(c);
        let value = self.value(a).map(|x| x * k);
        let needs = self.needs(a);
        self.push(value, Op::ScalarMul(a, c), needs)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} on {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::Shape(format!(
                    "concat {s:?} with {base:?} on axis {axis}"
                )));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = self.shape(*p)[axis] * inner;
                out.extend_from_slice(&self.value(*p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        Ok(self.push(Tensor::new(&shape, out)?, op, needs))
    }

    /// Entries `start..start + len` along `axis`.
    pub fn slice(&mut self, src: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(src).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::Shape(format!(
                "slice {start}..{} on axis {axis} of {s:?}",
                start + len
            )));
        }
        let (outer, mid, inner) = split_at_axis(&s, axis);
        let data = self.value(src).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let needs = self.needs(src);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Slice { src, axis, start },
            needs,
        ))
    }

    /// Sum of every entry, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: T = self.value(a).data().iter().copied().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum(a), needs)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, src: Var, axis: usize) -> Result<Var> {
        let s = self.shape(src).to_vec();
        if axis >= s.len() {
            return Err(Error::Shape(format!("sum over axis {axis} of {s:?}")));
        }
        let (outer, mid, inner) = split_at_axis(&s, axis);
        let data = self.value(src).data();
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for k in 0..mid {
                let row = &data[(o * mid + k) * inner..(o * mid + k + 1) * inner];
                for (d, x) in dst.iter_mut().zip(row) {
                    *d += *x;
                }
            }
        }
        let mut shape = s;
        shape.remove(axis);
        let needs = self.needs(src);
        Ok(self.push(Tensor::new(&shape, out)?, Op::SumAxis { src, axis }, needs))
    }

    /// Inserts a new axis of extent `n` at position `axis`, repeating `src`.
    pub fn broadcast_axis(&mut self, src: Var, axis: usize, n: usize) -> Result<Var> {
        let s = self.shape(src).to_vec();
        if axis > s.len() {
            return Err(Error::Shape(format!("broadcast axis {axis} into {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis..].iter().product();
        let data = self.value(src).data();
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let row = &data[o * inner..(o + 1) * inner];
            for _ in 0..n {
                out.extend_from_slice(row);
            }
        }
        let mut shape = s;
        shape.insert(axis, n);
        let needs = self.needs(src);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Broadcast { src, axis },
            needs,
        ))
    }

    pub fn reshape(&mut self, src: Var, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        if len != self.value(src).len() {
            return Err(Error::Shape(format!(
                "reshape {:?} to {shape:?}",
                self.shape(src)
            )));
        }
        let value = self.value(src).clone().reshaped(shape);
        let needs = self.needs(src);
        Ok(self.push(value, Op::Reshape(src), needs))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let needs = self.needs(a);
        self.push(value, Op::Square(a), needs)
    }

    fn check_positive(&self, a: Var, op: &'static str) -> Result<()> {
        if self.value(a).data().iter().all(|x| *x > T::ZERO) {
            Ok(())
        } else {
            Err(Error::Domain {
                node: self.nodes.len(),
                op,
            })
        }
    }

    /// Square root; every input entry must be strictly positive.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check_positive(a, "sqrt")?;
        let value = self.value(a).map(T::sqrt);
        let needs = self.needs(a);
        Ok(self.push(value, Op::Sqrt(a), needs))
    }

    /// Natural log; every input entry must be strictly positive.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.check_positive(a, "ln")?;
        let value = self.value(a).map(T::ln);
        let needs = self.needs(a);
        Ok(self.push(value, Op::Ln(a), needs))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let k = T::from_f64(slope);
        let value = self.value(a).map(|x| if x > T::ZERO { x } else { k * x });
        let needs = self.needs(a);
        self.push(value, Op::LeakyRelu(a, slope), needs)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].needs_grad {
            adj[loss.0] = Some(Tensor::filled(self.shape(loss), T::ONE));
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                adj[idx] = Some(g);
                continue;
            }
            self.propagate(idx, g, &mut adj);
        }
        let grads = self
            .params
            .iter()
            .map(|p| match adj.get_mut(p.0).and_then(Option::take) {
                Some(g) => g,
                None => Tensor::zeros(self.shape(*p)),
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, adj: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut adj[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Adjoint of the broadcast right operand: fold `g` onto `b`'s shape.
    fn fold(&self, b: Var, data: impl Iterator<Item = T>) -> Tensor<T> {
        let inner = self.value(b).len();
        let mut out = vec![T::ZERO; inner];
        for (i, x) in data.enumerate() {
            out[i % inner] += x;
        }
        Tensor::new(self.shape(b), out).expect("fold keeps shape")
    }

    fn propagate(&self, idx: usize, g: Tensor<T>, adj: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let sb = self.shape(b);
                let (k, n) = (sb[0], sb[1]);
                let rows = self.value(a).len() / k.max(1);
                if self.needs(a) {
                    let mut ga = vec![T::ZERO; rows * k];
                    T::gemm(
                        rows,
                        n,
                        k,
                        g.data(),
                        n,
                        1,
                        self.value(b).data(),
                        1,
                        n,
                        &mut ga,
                        false,
                    );
                    self.accumulate(adj, a, Tensor::new(self.shape(a), ga).unwrap());
                }
                if self.needs(b) {
                    let mut gb = vec![T::ZERO; k * n];
                    T::gemm(
                        k,
                        rows,
                        n,
                        self.value(a).data(),
                        1,
                        k,
                        g.data(),
                        n,
                        1,
                        &mut gb,
                        false,
                    );
                    self.accumulate(adj, b, Tensor::new(sb, gb).unwrap());
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                let negate = matches!(node.op, Op::Sub(..));
                if self.needs(b) {
                    let folded = self.fold(b, g.data().iter().copied());
                    let folded = if negate { folded.map(|x| -x) } else { folded };
                    self.accumulate(adj, b, folded);
                }
                self.accumulate(adj, a, g);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                let inner = bv.len();
                if self.needs(b) {
                    let prod = g.data().iter().zip(av).map(|(g, x)| *g * *x);
                    let folded = self.fold(b, prod);
                    self.accumulate(adj, b, folded);
                }
                if self.needs(a) {
                    let mut ga = g;
                    for (i, x) in ga.data_mut().iter_mut().enumerate() {
                        *x *= bv[i % inner];
                    }
                    self.accumulate(adj, a, ga);
                }
            }
            Op::Div(a, b) => {
                let (a, b) = (*a, *b);
                let bv = self.value(b).data();
                let inner = bv.len();
                if self.needs(b) {
                    let out = node.value.data();
                    let prod = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, g)| -*g * out[i] / bv[i % inner]);
                    let folded = self.fold(b, prod);
                    self.accumulate(adj, b, folded);
                }
                if self.needs(a) {
                    let mut ga = g;
                    for (i, x) in ga.data_mut().iter_mut().enumerate() {
                        *x = *x / bv[i % inner];
                    }
                    self.accumulate(adj, a, ga);
                }
            }
            Op::ScalarMul(a, c) => {
                let k = T::from_f64(*c);
                self.accumulate(adj, *a, g.map(|x| x * k));
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_at_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let width = self.shape(*p)[*axis];
                    if self.needs(*p) {
                        let mut out = Vec::with_capacity(outer * width * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            out.extend_from_slice(&g.data()[base..base + width * inner]);
                        }
                        self.accumulate(adj, *p, Tensor::new(self.shape(*p), out).unwrap());
                    }
                    offset += width;
                }
            }
            Op::Slice { src, axis, start } => {
                let (outer, mid, inner) = split_at_axis(self.shape(*src), *axis);
                let len = node.value.shape()[*axis];
                let mut out = vec![T::ZERO; outer * mid * inner];
                for o in 0..outer {
                    let base = (o * mid + start) * inner;
                    out[base..base + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(adj, *src, Tensor::new(self.shape(*src), out).unwrap());
            }
            Op::Sum(a) => {
                let v = g.data()[0];
                self.accumulate(adj, *a, Tensor::filled(self.shape(*a), v));
            }
            Op::SumAxis { src, axis } => {
                let (outer, mid, inner) = split_at_axis(self.shape(*src), *axis);
                let mut out = Vec::with_capacity(outer * mid * inner);
                for o in 0..outer {
                    let row = &g.data()[o * inner..(o + 1) * inner];
                    for _ in 0..mid {
                        out.extend_from_slice(row);
                    }
                }
                self.accumulate(adj, *src, Tensor::new(self.shape(*src), out).unwrap());
            }
            Op::Broadcast { src, axis } => {
                let (outer, n, inner) = split_at_axis(node.value.shape(), *axis);
                let mut out = vec![T::ZERO; outer * inner];
                for o in 0..outer {
                    let dst = &mut out[o * inner..(o + 1) * inner];
                    for k in 0..n {
                        let row = &g.data()[(o * n + k) * inner..(o * n + k + 1) * inner];
                        for (d, x) in dst.iter_mut().zip(row) {
                            *d += *x;
                        }
                    }
                }
                self.accumulate(adj, *src, Tensor::new(self.shape(*src), out).unwrap());
            }
            Op::Reshape(src) => {
                let shape = self.shape(*src).to_vec();
                self.accumulate(adj, *src, g.reshaped(&shape));
            }
            Op::Square(a) => {
                let two = T::from_f64(2.0);
                let x = self.value(*a).data();
                let mut ga = g;
                for (d, x) in ga.data_mut().iter_mut().zip(x) {
                    *d *= two * *x;
                }
                self.accumulate(adj, *a, ga);
            }
            Op::Sqrt(a) => {
                let half = T::from_f64(0.5);
                let y = node.value.data();
                let mut ga = g;
                for (d, y) in ga.data_mut().iter_mut().zip(y) {
                    *d = *d * half / *y;
                }
                self.accumulate(adj, *a, ga);
            }
            Op::Ln(a) => {
                let x = self.value(*a).data();
                let mut ga = g;
                for (d, x) in ga.data_mut().iter_mut().zip(x) {
                    *d = *d / *x;
                }
                self.accumulate(adj, *a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let k = T::from_f64(*slope);
                let x = self.value(*a).data();
                let mut ga = g;
                for (d, x) in ga.data_mut().iter_mut().zip(x) {
                    if *x <= T::ZERO {
                        *d *= k;
                    }
                }
                self.accumulate(adj, *a, ga);
            }
        }
    }
}
