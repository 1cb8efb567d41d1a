use std::sync::Arc;

use super::kernels::{self, ConvGeom, Dims};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    ConvT {
        x: Var,
        w: Var,
        b: Var,
        input: Dims,
        stride: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Relu(Var),
    Softmax(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Concat(Var, Var),
    Reshape(Var),
    Channel(Var, usize),
    Sum(Var),
    WeightedSum(Var, Arc<Vec<T>>),
    Ln {
        x: Var,
        floor: T,
    },
    PairAgreement {
        y: Var,
        pairs: Arc<[(u32, u32)]>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Conv { x, w, b, .. } | ConvT { x, w, b, .. } | Linear { x, w, b } => vec![*x, *w, *b],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Concat(a, b) => vec![*a, *b],
            MaxPool { x, .. }
            | Relu(x)
            | Softmax(x)
            | Scale(x, _)
            | Offset(x)
            | Reshape(x)
            | Channel(x, _)
            | Sum(x)
            | WeightedSum(x, _)
            | Ln { x, .. }
            | PairAgreement { y: x, .. } => vec![*x],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of executed ops for reverse-mode differentiation.
///
/// Every forward op appends one node; [`Tape::backward`] walks the nodes in
/// exact reverse order, summing the contributions of every consumer into
/// each input's gradient. A tape is single-use: a second `backward` call
/// fails with [`Error::BackwardTwice`].
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when `var` does not require a gradient. A trainable leaf that
    /// the loss does not depend on gets an all-zero gradient.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn check_same(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn dims4(op: &'static str, t: &Tensor<impl Real>) -> Result<Dims> {
    match t.shape()[..] {
        [c, d, h, w] => Ok(Dims { c, d, h, w }),
        _ => Err(Error::shape(
            op,
            format!("expected C×D×H×W, got {:?}", t.shape()),
        )),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|&i| self.rg(i));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// 3D convolution. `x: C_in×D×H×W`, `w: C_out×C_in×k×k×k`, `b: C_out`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let input = dims4("conv3d", self.value(x))?;
        let (c_out, k) = match self.value(w).shape()[..] {
            [co, ci, k0, k1, k2] if ci == input.c && k0 == k1 && k1 == k2 => (co, k0),
            _ => {
                return Err(Error::shape(
                    "conv3d",
                    format!(
                        "weight {:?} incompatible with input {:?}",
                        self.value(w).shape(),
                        self.value(x).shape()
                    ),
                ))
            }
        };
        if self.value(b).shape() != [c_out] {
            return Err(Error::shape(
                "conv3d",
                format!("bias {:?}, expected [{}]", self.value(b).shape(), c_out),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv3d", "stride must be >= 1"));
        }
        let geom = ConvGeom::new(input, k, stride, pad).ok_or_else(|| {
            Error::shape(
                "conv3d",
                format!("kernel {k} exceeds padded extent of {:?}", self.value(x).shape()),
            )
        })?;
        let out = kernels::conv3d_forward(
            self.value(x).data(),
            &geom,
            self.value(w).data(),
            self.value(b).data(),
            c_out,
        );
        let value = Tensor::new([c_out, geom.od, geom.oh, geom.ow], out)?;
        self.push("conv3d", value, Op::Conv { x, w, b, geom })
    }

    /// Transposed 3D convolution with kernel size equal to `stride`, which
    /// multiplies each spatial extent by `stride` exactly.
    /// `w: C_in×C_out×s×s×s`.
    pub fn conv_transpose3d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let input = dims4("conv_transpose3d", self.value(x))?;
        let c_out = match self.value(w).shape()[..] {
            [ci, co, k0, k1, k2] if ci == input.c && k0 == stride && k1 == stride && k2 == stride => {
                co
            }
            _ => {
                return Err(Error::shape(
                    "conv_transpose3d",
                    format!(
                        "weight {:?} incompatible with input {:?} at stride {stride} (kernel must equal stride)",
                        self.value(w).shape(),
                        self.value(x).shape()
                    ),
                ))
            }
        };
        if stride == 0 {
            return Err(Error::shape("conv_transpose3d", "stride must be >= 1"));
        }
        if self.value(b).shape() != [c_out] {
            return Err(Error::shape(
                "conv_transpose3d",
                format!("bias {:?}, expected [{}]", self.value(b).shape(), c_out),
            ));
        }
        let out = kernels::conv_t_forward(
            self.value(x).data(),
            input,
            self.value(w).data(),
            self.value(b).data(),
            c_out,
            stride,
        );
        let value = Tensor::new(
            [c_out, input.d * stride, input.h * stride, input.w * stride],
            out,
        )?;
        self.push("conv_transpose3d", value, Op::ConvT { x, w, b, input, stride })
    }

    pub fn maxpool3d(&mut self, x: Var, k: usize) -> Result<Var> {
        let input = dims4("maxpool3d", self.value(x))?;
        if k == 0 || input.d % k != 0 || input.h % k != 0 || input.w % k != 0 {
            return Err(Error::shape(
                "maxpool3d",
                format!("extents {:?} not divisible by {k}", self.value(x).shape()),
            ));
        }
        let (out, argmax) = kernels::maxpool_forward(self.value(x).data(), input, k);
        let value = Tensor::new([input.c, input.d / k, input.h / k, input.w / k], out)?;
        self.push("maxpool3d", value, Op::MaxPool { x, argmax })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push("relu", value, Op::Relu(x))
    }

    /// Softmax over the leading (channel) axis, independently per voxel.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let c = *xt.shape().first().ok_or_else(|| Error::shape("softmax", "scalar input"))?;
        let sp = xt.len() / c.max(1);
        let src = xt.data();
        let mut out = vec![T::zero(); xt.len()];
        for j in 0..sp {
            let mut m = T::neg_infinity();
            for i in 0..c {
                m = m.max(src[i * sp + j]);
            }
            let mut z = T::zero();
            for i in 0..c {
                let e = (src[i * sp + j] - m).exp();
                out[i * sp + j] = e;
                z += e;
            }
            for i in 0..c {
                out[i * sp + j] = out[i * sp + j] / z;
            }
        }
        let value = Tensor::new(xt.shape().to_vec(), out)?;
        self.push("softmax", value, Op::Softmax(x))
    }

    /// `y = x·Wᵀ + b` for `x` of shape `[n_in]` or `[N, n_in]`,
    /// `w: n_out×n_in`, `b: n_out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        let (rows, n_in, batched) = match xs[..] {
            [n] => (1, n, false),
            [r, n] => (r, n, true),
            _ => return Err(Error::shape("linear", format!("input {:?}", xs))),
        };
        let n_out = match ws[..] {
            [o, i] if i == n_in => o,
            _ => {
                return Err(Error::shape(
                    "linear",
                    format!("weight {:?} vs input {:?}", ws, xs),
                ))
            }
        };
        if bs != [n_out] {
            return Err(Error::shape("linear", format!("bias {:?}", bs)));
        }
        let mut out = Vec::with_capacity(rows * n_out);
        for _ in 0..rows {
            out.extend_from_slice(self.value(b).data());
        }
        T::gemm(
            rows,
            n_in,
            n_out,
            T::one(),
            self.value(x).data(),
            (n_in as isize, 1),
            self.value(w).data(),
            (1, n_in as isize),
            T::one(),
            &mut out,
            (n_out as isize, 1),
        );
        let shape = if batched { vec![rows, n_out] } else { vec![n_out] };
        let value = Tensor::new(shape, out)?;
        self.push("linear", value, Op::Linear { x, w, b })
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        check_same(name, self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("add", a, b, |p, q| p + q)?;
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("sub", a, b, |p, q| p - q)?;
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip("mul", a, b, |p, q| p * q)?;
        self.push("mul", v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a).map(|p| p * s);
        self.push("scale", v, Op::Scale(a, s))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, c: T) -> Result<Var> {
        let v = self.value(a).map(|p| p + c);
        self.push("offset", v, Op::Offset(a))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (dims4("concat", self.value(a))?, dims4("concat", self.value(b))?);
        if (da.d, da.h, da.w) != (db.d, db.h, db.w) {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let v = Tensor::new([da.c + db.c, da.d, da.h, da.w], data)?;
        self.push("concat", v, Op::Concat(a, b))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape.to_vec())?;
        self.push("reshape", v, Op::Reshape(a))
    }

    /// Channel `i` of a `C×D×H×W` tensor as a `1×D×H×W` tensor.
    pub fn channel(&mut self, a: Var, i: usize) -> Result<Var> {
        let d = dims4("channel", self.value(a))?;
        if i >= d.c {
            return Err(Error::shape("channel", format!("index {i} of {} channels", d.c)));
        }
        let sp = d.spatial();
        let data = self.value(a).data()[i * sp..(i + 1) * sp].to_vec();
        let v = Tensor::new([1, d.d, d.h, d.w], data)?;
        self.push("channel", v, Op::Channel(a, i))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// `Σ_j weights_j · a_j` with constant weights of the same length.
    pub fn weighted_sum(&mut self, a: Var, weights: Arc<Vec<T>>) -> Result<Var> {
        if weights.len() != self.value(a).len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), self.value(a).len()),
            ));
        }
        let s: T = self
            .value(a)
            .data()
            .iter()
            .zip(weights.iter())
            .map(|(&p, &q)| p * q)
            .sum();
        self.push("weighted_sum", Tensor::scalar(s), Op::WeightedSum(a, weights))
    }

    /// Natural log of `max(a, floor)`; the gradient is zero where clamped.
    pub fn ln_clamped(&mut self, a: Var, floor: T) -> Result<Var> {
        let v = self.value(a).map(|p| p.max(floor).ln());
        self.push("ln", v, Op::Ln { x: a, floor })
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.ln_clamped(a, T::zero())
    }

    /// `Σ_c Σ_(k,l) y[c,k]·y[c,l]` over spatial index pairs of a `C×…`
    /// tensor, i.e. the unnormalized probability that paired voxels agree.
    pub fn pair_agreement(&mut self, y: Var, pairs: Arc<[(u32, u32)]>) -> Result<Var> {
        let yt = self.value(y);
        let c = *yt.shape().first().ok_or_else(|| Error::shape("pair_agreement", "scalar input"))?;
        let sp = yt.len() / c.max(1);
        if let Some(&(k, l)) = pairs.iter().find(|&&(k, l)| k as usize >= sp || l as usize >= sp) {
            return Err(Error::shape(
                "pair_agreement",
                format!("pair ({k},{l}) outside {sp} voxels"),
            ));
        }
        let d = yt.data();
        let mut s = T::zero();
        for ch in d.chunks(sp) {
            for &(k, l) in pairs.iter() {
                s += ch[k as usize] * ch[l as usize];
            }
        }
        self.push("pair_agreement", Tensor::scalar(s), Op::PairAgreement { y, pairs })
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        if !self.value(loss).all_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        self.done = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), T::one()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.backprop_node(idx, &g, &mut grads)?;
            // intermediate gradients are not retained
        }
        // trainable leaves the loss never touched get explicit zeros
        for (i, n) in self.nodes.iter().enumerate() {
            if n.requires_grad && matches!(n.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(n.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let gd = g.data();
        let mut acc = |v: Var, data: Vec<T>| -> Result<()> {
            if !self.rg(v) {
                return Ok(());
            }
            let shape = self.value(v).shape().to_vec();
            match &mut grads[v.0] {
                Some(t) => {
                    for (a, b) in t.data_mut().iter_mut().zip(data) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(Tensor::new(shape, data)?),
            }
            Ok(())
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let c_out = self.value(*w).shape()[0];
                let r = kernels::conv3d_backward(
                    self.value(*x).data(),
                    geom,
                    self.value(*w).data(),
                    c_out,
                    gd,
                    (self.rg(*x), self.rg(*w), self.rg(*b)),
                );
                if let Some(dx) = r.dx {
                    acc(*x, dx)?;
                }
                if let Some(dw) = r.dw {
                    acc(*w, dw)?;
                }
                if let Some(db) = r.db {
                    acc(*b, db)?;
                }
            }
            Op::ConvT { x, w, b, input, stride } => {
                let c_out = self.value(*w).shape()[1];
                let r = kernels::conv_t_backward(
                    self.value(*x).data(),
                    *input,
                    self.value(*w).data(),
                    c_out,
                    *stride,
                    gd,
                    (self.rg(*x), self.rg(*w), self.rg(*b)),
                );
                if let Some(dx) = r.dx {
                    acc(*x, dx)?;
                }
                if let Some(dw) = r.dw {
                    acc(*w, dw)?;
                }
                if let Some(db) = r.db {
                    acc(*b, db)?;
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (&src, &gv) in argmax.iter().zip(gd) {
                    dx[src as usize] += gv;
                }
                acc(*x, dx)?;
            }
            Op::Relu(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&y, &gv)| if y > T::zero() { gv } else { T::zero() })
                    .collect();
                acc(*x, dx)?;
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let c = node.value.shape()[0];
                let sp = y.len() / c;
                let mut dx = vec![T::zero(); y.len()];
                for j in 0..sp {
                    let mut dot = T::zero();
                    for i in 0..c {
                        dot += y[i * sp + j] * gd[i * sp + j];
                    }
                    for i in 0..c {
                        dx[i * sp + j] = y[i * sp + j] * (gd[i * sp + j] - dot);
                    }
                }
                acc(*x, dx)?;
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let (n_out, n_in) = (self.value(*w).shape()[0], self.value(*w).shape()[1]);
                let rows = xv.len() / n_in;
                if self.rg(*b) {
                    let mut db = vec![T::zero(); n_out];
                    for row in gd.chunks(n_out) {
                        for (a, &v) in db.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    acc(*b, db)?;
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); n_out * n_in];
                    T::gemm(
                        n_out,
                        rows,
                        n_in,
                        T::one(),
                        gd,
                        (1, n_out as isize),
                        xv.data(),
                        (n_in as isize, 1),
                        T::zero(),
                        &mut dw,
                        (n_in as isize, 1),
                    );
                    acc(*w, dw)?;
                }
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); rows * n_in];
                    T::gemm(
                        rows,
                        n_out,
                        n_in,
                        T::one(),
                        gd,
                        (n_out as isize, 1),
                        self.value(*w).data(),
                        (n_in as isize, 1),
                        T::zero(),
                        &mut dx,
                        (n_in as isize, 1),
                    );
                    acc(*x, dx)?;
                }
            }
            Op::Add(a, b) => {
                acc(*a, gd.to_vec())?;
                acc(*b, gd.to_vec())?;
            }
            Op::Sub(a, b) => {
                acc(*a, gd.to_vec())?;
                acc(*b, gd.iter().map(|&v| -v).collect())?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, gd.iter().zip(bv).map(|(&g, &q)| g * q).collect())?;
                acc(*b, gd.iter().zip(av).map(|(&g, &p)| g * p).collect())?;
            }
            Op::Scale(a, s) => acc(*a, gd.iter().map(|&v| v * *s).collect())?,
            Op::Offset(a) | Op::Reshape(a) => acc(*a, gd.to_vec())?,
            Op::Concat(a, b) => {
                let n = self.value(*a).len();
                acc(*a, gd[..n].to_vec())?;
                acc(*b, gd[n..].to_vec())?;
            }
            Op::Channel(a, i) => {
                let src = self.value(*a);
                let sp = gd.len();
                let mut dx = vec![T::zero(); src.len()];
                dx[i * sp..(i + 1) * sp].copy_from_slice(gd);
                acc(*a, dx)?;
            }
            Op::Sum(a) => acc(*a, vec![gd[0]; self.value(*a).len()])?,
            Op::WeightedSum(a, w) => acc(*a, w.iter().map(|&q| q * gd[0]).collect())?,
            Op::Ln { x, floor } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&p, &gv)| if p > *floor { gv / p } else { T::zero() })
                    .collect();
                acc(*x, dx)?;
            }
            Op::PairAgreement { y, pairs } => {
                let yv = self.value(*y);
                let c = yv.shape()[0];
                let sp = yv.len() / c;
                let mut dx = vec![T::zero(); yv.len()];
                for (ch, dch) in yv.data().chunks(sp).zip(dx.chunks_mut(sp)) {
                    for &(k, l) in pairs.iter() {
                        let (k, l) = (k as usize, l as usize);
                        dch[k] += ch[l] * gd[0];
                        dch[l] += ch[k] * gd[0];
                    }
                }
                acc(*y, dx)?;
            }
        }
        Ok(())
    }
}
