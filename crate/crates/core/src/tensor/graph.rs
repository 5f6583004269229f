use super::kernels::{self, ConvGeometry};
use super::shape::{broadcast_shape, for_each_broadcast, reduced_shape, row_major_strides};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Pointwise nonlinearity selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "none" | "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (expected relu, sigmoid or none)"
            ))),
        }
    }
}

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Hyperparameters of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: 1,
            dilation: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Conv2dSpec {
            stride,
            dilation,
            padding,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// Spatial extent covered by a dilated kernel of size `k`.
    pub fn effective_kernel(&self, k: usize) -> usize {
        k + (k - 1) * (self.dilation - 1)
    }

    pub fn output_size(&self, input: usize, k: usize) -> Result<usize> {
        let k_eff = self.effective_kernel(k);
        if k_eff > input + 2 * self.padding {
            return Err(Error::Dimension(format!(
                "conv2d: dilated kernel extent {k_eff} (k={k}, dilation={}) exceeds padded input {}",
                self.dilation,
                input + 2 * self.padding
            )));
        }
        Ok((input + 2 * self.padding - k_eff) / self.stride + 1)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Abs(Var),
    ClampMin(Var, f64),
    Sum(Var),
    Reshape(Var),
    Permute { input: Var, perm: Vec<usize> },
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var },
    Conv2d { input: Var, weight: Var, spec: Conv2dSpec },
    Concat { inputs: Vec<Var>, axis: usize },
    Softmax(Var),
    Patchify { input: Var, patch: usize },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run tape. Nodes are appended in execution order, so every
/// input precedes its consumers.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Tensor {
                requires_grad,
                grad: None,
                ..value
            },
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input tensor; gradients are tracked when
    /// `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad;
        self.push(tensor, Op::Leaf, rg)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        self.grad(v)
            .map(|g| Tensor::new(self.shape(v).to_vec(), g.to_vec()).expect("grad shape"))
    }

    // ---- elementwise -------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb).map_err(|_| Error::Shape {
            op,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let ia = broadcast_indices(&out_shape, &sa);
        let ib = broadcast_indices(&out_shape, &sb);
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let numel: usize = out_shape.iter().product();
        let data = (0..numel)
            .map(|o| f(va[pick(&ia, o)], vb[pick(&ib, o)]))
            .collect();
        Ok((Tensor::new(out_shape, data)?, self.rg(a) || self.rg(b)))
    }

    /// Broadcasting addition.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b), rg))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let t = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let k = T::lit(c);
        self.unary(x, Op::Scale(x, c), |v| v * k)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let k = T::lit(c);
        self.unary(x, Op::Offset(x), |v| v + k)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), |v| v.ln())
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), |v| v.sqrt())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let f = T::lit(floor);
        self.unary(x, Op::ClampMin(x, floor), |v| if v > f { v } else { f })
    }

    // ---- reductions and shape ----------------------------------------

    /// Sums over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if let Some(&bad) = axes.iter().find(|&&a| a >= shape.len()) {
            return Err(Error::Dimension(format!(
                "sum: axis {bad} out of range for shape {shape:?}"
            )));
        }
        let out_shape = reduced_shape(&shape, axes);
        let mut out = vec![T::zero(); out_shape.iter().product()];
        let xv = self.value(x).data();
        for_each_broadcast(&shape, &out_shape, |i, o| out[o] += xv[i]);
        let t = Tensor::new(out_shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::Sum(x),
            rg,
        ))
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let count: usize = axes.iter().filter_map(|&a| shape.get(a)).product();
        let s = self.sum_axes(x, axes)?;
        Ok(self.scale(s, 1.0 / count as f64))
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        let s = self.sum_axes(x, &axes).expect("all axes valid");
        self.reshape(s, vec![1]).expect("single element")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..shape.len()).collect::<Vec<_>>() {
            return Err(Error::Dimension(format!(
                "permute: {perm:?} is not a permutation of the axes of {shape:?}"
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for_each_permuted(&shape, perm, |o, i| out[o] = src[i]);
        let t = Tensor::new(out_shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::Permute {
                input: x,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Contract("concat: no inputs".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Dimension(format!(
                "concat: axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let block = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * block..(o + 1) * block]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    // ---- linear algebra ----------------------------------------------

    /// `[.., M, K] × [K, N] → [.., M, N]`, or batched `[B, M, K] × [B, K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 {
            return Err(mismatch());
        }
        let rg = self.rg(a) || self.rg(b);
        if sb.len() == 2 {
            let k = sa[sa.len() - 1];
            if k != sb[0] {
                return Err(mismatch());
            }
            let n = sb[1];
            let m = self.value(a).numel() / k;
            let mut out = vec![T::zero(); m * n];
            kernels::gemm_nn(m, n, k, self.value(a).data(), self.value(b).data(), &mut out);
            let mut out_shape = sa.clone();
            *out_shape.last_mut().unwrap() = n;
            let t = Tensor::new(out_shape, out)?;
            return Ok(self.push(t, Op::MatMul { a, b }, rg));
        }
        if sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1] {
            let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
            let mut out = vec![T::zero(); batch * m * n];
            let (va, vb) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                kernels::gemm_nn(
                    m,
                    n,
                    k,
                    &va[i * m * k..(i + 1) * m * k],
                    &vb[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
            let t = Tensor::new(vec![batch, m, n], out)?;
            return Ok(self.push(t, Op::BatchMatMul { a, b }, rg));
        }
        Err(mismatch())
    }

    /// Cross-correlation of `[B, C_in, H, W]` (or `[C_in, H, W]`) with a
    /// `[C_out, C_in/groups, k, k]` kernel and zero padding.
    pub fn conv2d(&mut self, input: Var, weight: Var, spec: Conv2dSpec) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let sw = self.shape(weight).to_vec();
        let mismatch = || Error::Shape {
            op: "conv2d",
            lhs: si.clone(),
            rhs: sw.clone(),
        };
        let (batch, c_in, h, w) = match *si.as_slice() {
            [c, h, w] => (1, c, h, w),
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(mismatch()),
        };
        if sw.len() != 4 || sw[2] != sw[3] {
            return Err(mismatch());
        }
        if spec.stride == 0 || spec.dilation == 0 || spec.groups == 0 {
            return Err(Error::Config(format!(
                "conv2d: stride, dilation and groups must be >= 1, got {spec:?}"
            )));
        }
        let (c_out, cg_in, k) = (sw[0], sw[1], sw[2]);
        if c_in % spec.groups != 0 || c_out % spec.groups != 0 || cg_in * spec.groups != c_in {
            return Err(mismatch());
        }
        let out_h = spec.output_size(h, k)?;
        let out_w = spec.output_size(w, k)?;
        let geo = ConvGeometry {
            channels: cg_in,
            height: h,
            width: w,
            kernel: k,
            stride: spec.stride,
            dilation: spec.dilation,
            padding: spec.padding,
            out_h,
            out_w,
        };
        let mut out = vec![T::zero(); batch * c_out * out_h * out_w];
        kernels::conv2d_forward(
            &geo,
            spec.groups,
            batch,
            c_out,
            self.value(input).data(),
            self.value(weight).data(),
            &mut out,
        );
        let out_shape = if si.len() == 3 {
            vec![c_out, out_h, out_w]
        } else {
            vec![batch, c_out, out_h, out_w]
        };
        let rg = self.rg(input) || self.rg(weight);
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                input,
                weight,
                spec,
            },
            rg,
        ))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if let Some(bad) = t.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "softmax: non-finite logit {bad:?}"
            )));
        }
        let k = *t.shape().last().unwrap();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(k) {
            softmax_in_place(row);
        }
        let t = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax(x), rg))
    }

    /// Splits `[B, C, H, W]` into non-overlapping `patch×patch` tiles,
    /// giving `[B, T, C·patch·patch]` with tokens in row-major tile order.
    pub fn patchify(&mut self, x: Var, patch: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let &[b, c, h, w] = s.as_slice() else {
            return Err(Error::Dimension(format!(
                "patchify expects [B, C, H, W], got {s:?}"
            )));
        };
        if patch == 0 || h % patch != 0 || w % patch != 0 {
            return Err(Error::Dimension(format!(
                "patchify: {h}x{w} is not divisible by patch size {patch}"
            )));
        }
        let (gh, gw) = (h / patch, w / patch);
        let feat = c * patch * patch;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for_each_patch_index(b, c, h, w, patch, |o, i| out[o] = src[i]);
        let t = Tensor::new(vec![b, gh * gw, feat], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Patchify { input: x, patch }, rg))
    }

    // ---- backward ----------------------------------------------------

    /// Reverse-mode sweep from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accum(&mut self, v: Var) -> Option<&mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backprop_node(&mut self, idx: usize, g: &[T]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(op, Op::Sub(..));
                let out_shape = self.nodes[idx].value.shape().to_vec();
                for (v, sign) in [(a, T::one()), (b, if neg { -T::one() } else { T::one() })] {
                    let s = self.shape(v).to_vec();
                    if let Some(acc) = self.accum(v) {
                        for_each_broadcast(&out_shape, &s, |o, i| acc[i] += sign * g[o]);
                    }
                }
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let div = matches!(op, Op::Div(..));
                let out_shape = self.nodes[idx].value.shape().to_vec();
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let ia = broadcast_indices(&out_shape, &sa);
                let ib = broadcast_indices(&out_shape, &sb);
                let va = self.value(a).data().to_vec();
                let vb = self.value(b).data().to_vec();
                if let Some(acc) = self.accum(a) {
                    for (o, &go) in g.iter().enumerate() {
                        let y = vb[pick(&ib, o)];
                        acc[pick(&ia, o)] += if div { go / y } else { go * y };
                    }
                }
                if let Some(acc) = self.accum(b) {
                    for (o, &go) in g.iter().enumerate() {
                        let x = va[pick(&ia, o)];
                        let y = vb[pick(&ib, o)];
                        acc[pick(&ib, o)] += if div { -go * x / (y * y) } else { go * x };
                    }
                }
            }
            Op::Scale(x, c) => {
                let k = T::lit(c);
                if let Some(acc) = self.accum(x) {
                    acc.iter_mut().zip(g).for_each(|(a, &go)| *a += go * k);
                }
            }
            Op::Offset(x) | Op::Reshape(x) => {
                if let Some(acc) = self.accum(x) {
                    acc.iter_mut().zip(g).for_each(|(a, &go)| *a += go);
                }
            }
            Op::Relu(x) | Op::Abs(x) | Op::ClampMin(x, _) | Op::Square(x) | Op::Log(x) => {
                let xv = self.value(x).data().to_vec();
                let deriv: Box<dyn Fn(T) -> T> = match op {
                    Op::Relu(_) => Box::new(|v| if v > T::zero() { T::one() } else { T::zero() }),
                    Op::Abs(_) => Box::new(|v: T| {
                        if v > T::zero() {
                            T::one()
                        } else if v < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        }
                    }),
                    Op::ClampMin(_, f) => {
                        let f = T::lit(f);
                        Box::new(move |v| if v > f { T::one() } else { T::zero() })
                    }
                    Op::Square(_) => Box::new(|v: T| v + v),
                    _ => Box::new(|v: T| T::one() / v),
                };
                if let Some(acc) = self.accum(x) {
                    for ((a, &go), &v) in acc.iter_mut().zip(g).zip(&xv) {
                        *a += go * deriv(v);
                    }
                }
            }
            Op::Sigmoid(x) | Op::Exp(x) | Op::Sqrt(x) => {
                let yv = self.nodes[idx].value.data().to_vec();
                let two = T::lit(2.0);
                let deriv = |y: T| match op {
                    Op::Sigmoid(_) => y * (T::one() - y),
                    Op::Exp(_) => y,
                    _ => T::one() / (two * y),
                };
                if let Some(acc) = self.accum(x) {
                    for ((a, &go), &y) in acc.iter_mut().zip(g).zip(&yv) {
                        *a += go * deriv(y);
                    }
                }
            }
            Op::Sum(input) => {
                let in_shape = self.shape(input).to_vec();
                let out_shape = self.nodes[idx].value.shape().to_vec();
                if let Some(acc) = self.accum(input) {
                    for_each_broadcast(&in_shape, &out_shape, |i, o| acc[i] += g[o]);
                }
            }
            Op::Permute { input, perm } => {
                let in_shape = self.shape(input).to_vec();
                if let Some(acc) = self.accum(input) {
                    for_each_permuted(&in_shape, &perm, |o, i| acc[i] += g[o]);
                }
            }
            Op::Concat { inputs, axis } => {
                let out_shape = self.nodes[idx].value.shape().to_vec();
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[axis];
                let mut offset = 0;
                for v in inputs {
                    let d = self.shape(v)[axis];
                    if let Some(acc) = self.accum(v) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + d) * inner];
                            let dst = &mut acc[o * d * inner..(o + 1) * d * inner];
                            dst.iter_mut().zip(src).for_each(|(a, &s)| *a += s);
                        }
                    }
                    offset += d;
                }
            }
            Op::MatMul { a, b } => {
                let sb = self.shape(b).to_vec();
                let (k, n) = (sb[0], sb[1]);
                let m = self.value(a).numel() / k;
                let va = self.value(a).data().to_vec();
                let vb = self.value(b).data().to_vec();
                if let Some(acc) = self.accum(a) {
                    kernels::gemm_nt(m, k, n, g, &vb, acc);
                }
                if let Some(acc) = self.accum(b) {
                    kernels::gemm_tn(k, n, m, &va, g, acc);
                }
            }
            Op::BatchMatMul { a, b } => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let va = self.value(a).data().to_vec();
                let vb = self.value(b).data().to_vec();
                if let Some(acc) = self.accum(a) {
                    for i in 0..batch {
                        kernels::gemm_nt(
                            m,
                            k,
                            n,
                            &g[i * m * n..(i + 1) * m * n],
                            &vb[i * k * n..(i + 1) * k * n],
                            &mut acc[i * m * k..(i + 1) * m * k],
                        );
                    }
                }
                if let Some(acc) = self.accum(b) {
                    for i in 0..batch {
                        kernels::gemm_tn(
                            k,
                            n,
                            m,
                            &va[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut acc[i * k * n..(i + 1) * k * n],
                        );
                    }
                }
            }
            Op::Conv2d {
                input,
                weight,
                spec,
            } => {
                let si = self.shape(input).to_vec();
                let sw = self.shape(weight).to_vec();
                let so = self.nodes[idx].value.shape().to_vec();
                let (batch, h, w) = match *si.as_slice() {
                    [_, h, w] => (1, h, w),
                    [b, _, h, w] => (b, h, w),
                    _ => unreachable!(),
                };
                let geo = ConvGeometry {
                    channels: sw[1],
                    height: h,
                    width: w,
                    kernel: sw[2],
                    stride: spec.stride,
                    dilation: spec.dilation,
                    padding: spec.padding,
                    out_h: so[so.len() - 2],
                    out_w: so[so.len() - 1],
                };
                let vi = self.value(input).data().to_vec();
                let vw = self.value(weight).data().to_vec();
                let mut gi = self.rg(input).then(|| vec![T::zero(); vi.len()]);
                let mut gw = self.rg(weight).then(|| vec![T::zero(); vw.len()]);
                kernels::conv2d_backward(
                    &geo,
                    spec.groups,
                    batch,
                    sw[0],
                    &vi,
                    &vw,
                    g,
                    gi.as_deref_mut(),
                    gw.as_deref_mut(),
                );
                if let (Some(d), Some(acc)) = (gi, self.accum(input)) {
                    acc.iter_mut().zip(d).for_each(|(a, x)| *a += x);
                }
                if let (Some(d), Some(acc)) = (gw, self.accum(weight)) {
                    acc.iter_mut().zip(d).for_each(|(a, x)| *a += x);
                }
            }
            Op::Softmax(x) => {
                let y = self.nodes[idx].value.data().to_vec();
                let k = *self.nodes[idx].value.shape().last().unwrap();
                if let Some(acc) = self.accum(x) {
                    for ((yr, gr), ar) in y.chunks(k).zip(g.chunks(k)).zip(acc.chunks_mut(k)) {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((a, &yi), &gi) in ar.iter_mut().zip(yr).zip(gr) {
                            *a += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::Patchify { input, patch } => {
                let s = self.shape(input).to_vec();
                if let Some(acc) = self.accum(input) {
                    for_each_patch_index(s[0], s[1], s[2], s[3], patch, |o, i| acc[i] += g[o]);
                }
            }
        }
    }

    /// Sign pattern of every non-differentiable branch point (relu, abs,
    /// clamp) in the current graph. Two evaluations with equal signatures
    /// lie on the same smooth piece.
    pub fn branch_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) | Op::Abs(x) => {
                    sig.extend(self.value(x).data().iter().map(|&v| v > T::zero()))
                }
                Op::ClampMin(x, f) => {
                    let f = T::lit(f);
                    sig.extend(self.value(x).data().iter().map(|&v| v > f))
                }
                _ => {}
            }
        }
        sig
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Index map from `out` onto `small`; empty when the shapes are equal.
fn broadcast_indices(out: &[usize], small: &[usize]) -> Vec<usize> {
    if out == small {
        return Vec::new();
    }
    let mut idx = vec![0; out.iter().product()];
    for_each_broadcast(out, small, |o, s| idx[o] = s);
    idx
}

#[inline]
fn pick(map: &[usize], o: usize) -> usize {
    if map.is_empty() {
        o
    } else {
        map[o]
    }
}

/// Calls `f(out_index, in_index)` for a permutation of `in_shape`.
fn for_each_permuted(in_shape: &[usize], perm: &[usize], mut f: impl FnMut(usize, usize)) {
    let in_strides = row_major_strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    let numel: usize = out_shape.iter().product();
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for o in 0..numel {
        f(o, offset);
        let mut axis = rank;
        while axis > 0 {
            axis -= 1;
            counter[axis] += 1;
            offset += strides[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            offset -= strides[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
}

/// Calls `f(token_index, image_index)` for the patch layout of
/// [`Graph::patchify`].
fn for_each_patch_index(
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    p: usize,
    mut f: impl FnMut(usize, usize),
) {
    let (gh, gw) = (h / p, w / p);
    let feat = c * p * p;
    let mut o = 0;
    for bi in 0..b {
        for ty in 0..gh {
            for tx in 0..gw {
                debug_assert_eq!(o, ((bi * gh + ty) * gw + tx) * feat);
                for ci in 0..c {
                    for i in 0..p {
                        let row = ((bi * c + ci) * h + ty * p + i) * w + tx * p;
                        for j in 0..p {
                            f(o, row + j);
                            o += 1;
                        }
                    }
                }
            }
        }
    }
}
