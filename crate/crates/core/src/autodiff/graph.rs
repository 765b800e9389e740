//! Reverse-mode differentiation tape.
//!
//! Every backward rule is written in terms of tape operations, so a backward
//! pass run with `create_graph` records its own derivative graph. That is what
//! lets the gradient penalty differentiate an input gradient with respect to
//! parameters.

use std::collections::HashMap;
use std::rc::Rc;

use super::kernels;
use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulConst(Var, Rc<Tensor<T>>),
    LeakyRelu(Var, T),
    Sum(Var),
    Broadcast(Var),
    Reshape(Var),
    Sqrt(Var),
    Recip(Var),
    Conv(Var, Var),
    ConvTranspose(Var, Var),
    ConvKernelGrad(Var, Var),
    ChannelSum(Var),
    ChannelBroadcast(Var),
    MulChannel(Var, Var),
    Resize(Var, usize),
    ResizeAdjoint(Var, usize),
    Pool(Var),
    PoolAdjoint(Var),
    Crop(Var, Vec<usize>),
    Pad(Var, Vec<usize>),
    Concat(Vec<Var>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to the requires-grad leaves that reach it.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into `self` (opt-in accumulation across backward passes).
    pub fn accumulate(&mut self, other: &Gradients<T>) -> Result<()> {
        for (v, g) in &other.grads {
            match self.grads.get_mut(v) {
                Some(acc) => *acc = acc.zip_map(g, |a, b| a + b)?,
                None => {
                    self.grads.insert(*v, g.clone());
                }
            }
        }
        Ok(())
    }
}

/// Append-only computation graph. Node indices are a topological order.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that never records gradients (inference).
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> T {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        let requires_grad = self.recording && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.recording,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a), &[a])
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, a: Var, m: Rc<Tensor<T>>) -> Result<Var> {
        let v = self.value(a).zip_map(&m, |x, y| x * y)?;
        Ok(self.push(v, Op::MulConst(a, m), &[a]))
    }

    /// `max(x, slope·x)` elementwise.
    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        if !(slope >= T::zero() && slope < T::one()) {
            return invalid(format!("leaky_relu slope {slope} outside [0, 1)"));
        }
        let v = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x * slope });
        Ok(self.push(v, Op::LeakyRelu(a, slope), &[a]))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).len()).unwrap();
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// Repeats a single-element node over `shape`.
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.value(a).len() != 1 {
            return shape_err(format!("broadcast source {:?} is not a scalar", self.shape(a)));
        }
        let v = Tensor::full(shape, self.item(a));
        Ok(self.push(v, Op::Broadcast(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.sqrt());
        self.push(v, Op::Sqrt(a), &[a])
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.recip());
        self.push(v, Op::Recip(a), &[a])
    }

    /// Valid 3-D cross-correlation (no bias).
    pub fn conv3d(&mut self, x: Var, w: Var) -> Result<Var> {
        let v = kernels::conv3d(self.value(x), self.value(w))?;
        Ok(self.push(v, Op::Conv(x, w), &[x, w]))
    }

    /// Valid 3-D convolution plus per-output-channel bias.
    pub fn conv3d_bias(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.conv3d(x, w)?;
        self.add_channel_bias(y, b)
    }

    pub fn conv3d_transpose(&mut self, g: Var, w: Var) -> Result<Var> {
        let v = kernels::conv3d_transpose(self.value(g), self.value(w))?;
        Ok(self.push(v, Op::ConvTranspose(g, w), &[g, w]))
    }

    pub fn conv3d_kernel_grad(&mut self, x: Var, g: Var, k: usize) -> Result<Var> {
        let v = kernels::conv3d_kernel_grad(self.value(x), self.value(g), k)?;
        Ok(self.push(v, Op::ConvKernelGrad(x, g), &[x, g]))
    }

    pub fn channel_sum(&mut self, a: Var) -> Result<Var> {
        let v = kernels::channel_sum(self.value(a))?;
        Ok(self.push(v, Op::ChannelSum(a), &[a]))
    }

    pub fn channel_broadcast(&mut self, b: Var, shape: &[usize]) -> Result<Var> {
        let v = kernels::channel_broadcast(self.value(b), shape)?;
        Ok(self.push(v, Op::ChannelBroadcast(b), &[b]))
    }

    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let bb = self.channel_broadcast(b, &shape)?;
        self.add(x, bb)
    }

    /// `y[c, …] = x[c, …] · s[c]`.
    pub fn mul_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        let v = kernels::mul_channel(self.value(x), self.value(s))?;
        Ok(self.push(v, Op::MulChannel(x, s), &[x, s]))
    }

    /// Channelwise affine `x·scale[c] + shift[c]`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let y = self.mul_channel(x, scale)?;
        self.add_channel_bias(y, shift)
    }

    pub fn trilinear_resize(&mut self, x: Var, factor: usize) -> Result<Var> {
        let v = kernels::trilinear_resize(self.value(x), factor)?;
        Ok(self.push(v, Op::Resize(x, factor), &[x]))
    }

    fn resize_adjoint(&mut self, g: Var, factor: usize, src: [usize; 3]) -> Result<Var> {
        let v = kernels::trilinear_resize_adjoint(self.value(g), factor, src)?;
        Ok(self.push(v, Op::ResizeAdjoint(g, factor), &[g]))
    }

    pub fn mean_pool2(&mut self, x: Var) -> Result<Var> {
        let v = kernels::mean_pool2(self.value(x))?;
        Ok(self.push(v, Op::Pool(x), &[x]))
    }

    fn pool_adjoint(&mut self, g: Var, src: [usize; 3]) -> Result<Var> {
        let v = kernels::mean_pool2_adjoint(self.value(g), src)?;
        Ok(self.push(v, Op::PoolAdjoint(g), &[g]))
    }

    pub fn crop(&mut self, x: Var, offset: &[usize], extent: &[usize]) -> Result<Var> {
        let v = kernels::crop(self.value(x), offset, extent)?;
        Ok(self.push(v, Op::Crop(x, offset.to_vec()), &[x]))
    }

    /// Crops every spatial axis of a `C×D×H×W` node symmetrically to `extent`.
    pub fn center_crop(&mut self, x: Var, extent: [usize; 3]) -> Result<Var> {
        let [c, d, h, w] = self.value(x).dims4()?;
        let mut offset = vec![0];
        for (n, m) in [d, h, w].into_iter().zip(extent) {
            if m > n || (n - m) % 2 != 0 {
                return shape_err(format!(
                    "cannot center-crop spatial extents {:?} to {extent:?}",
                    [d, h, w]
                ));
            }
            offset.push((n - m) / 2);
        }
        self.crop(x, &offset, &[c, extent[0], extent[1], extent[2]])
    }

    /// Zero-embeds `x` into `shape` at `offset`.
    pub fn pad(&mut self, x: Var, offset: &[usize], shape: &[usize]) -> Result<Var> {
        let v = kernels::pad(self.value(x), offset, shape)?;
        Ok(self.push(v, Op::Pad(x, offset.to_vec()), &[x]))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = kernels::concat_channels(&tensors)?;
        Ok(self.push(v, Op::Concat(parts.to_vec()), parts))
    }

    /// Local vector-Jacobian products of node `id` given upstream gradient `gy`.
    fn vjp(&mut self, id: usize, gy: Var, wanted: &[bool]) -> Result<Vec<(Var, Var)>> {
        let op = self.nodes[id].op.clone();
        let want = |v: &Var| wanted[v.0];
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(&a) {
                    out.push((a, gy));
                }
                if want(&b) {
                    out.push((b, gy));
                }
            }
            Op::Sub(a, b) => {
                if want(&a) {
                    out.push((a, gy));
                }
                if want(&b) {
                    out.push((b, self.scale(gy, -T::one())));
                }
            }
            Op::Mul(a, b) => {
                if want(&a) {
                    out.push((a, self.mul(gy, b)?));
                }
                if want(&b) {
                    out.push((b, self.mul(gy, a)?));
                }
            }
            Op::Scale(a, c) => {
                if want(&a) {
                    out.push((a, self.scale(gy, c)));
                }
            }
            Op::AddScalar(a) => {
                if want(&a) {
                    out.push((a, gy));
                }
            }
            Op::MulConst(a, m) => {
                if want(&a) {
                    out.push((a, self.mul_const(gy, m)?));
                }
            }
            Op::LeakyRelu(a, slope) => {
                if want(&a) {
                    let mask = self
                        .value(a)
                        .map(|x| if x > T::zero() { T::one() } else { slope });
                    out.push((a, self.mul_const(gy, Rc::new(mask))?));
                }
            }
            Op::Sum(a) => {
                if want(&a) {
                    let shape = self.shape(a).to_vec();
                    out.push((a, self.broadcast(gy, &shape)?));
                }
            }
            Op::Broadcast(a) => {
                if want(&a) {
                    let s = self.sum(gy);
                    let shape = self.shape(a).to_vec();
                    out.push((a, self.reshape(s, &shape)?));
                }
            }
            Op::Reshape(a) => {
                if want(&a) {
                    let shape = self.shape(a).to_vec();
                    out.push((a, self.reshape(gy, &shape)?));
                }
            }
            Op::Sqrt(a) => {
                if want(&a) {
                    let y = Var(id);
                    let r = self.recip(y);
                    let h = self.scale(r, T::lit(0.5));
                    out.push((a, self.mul(gy, h)?));
                }
            }
            Op::Recip(a) => {
                if want(&a) {
                    let y = Var(id);
                    let y2 = self.mul(y, y)?;
                    let n = self.scale(y2, -T::one());
                    out.push((a, self.mul(gy, n)?));
                }
            }
            Op::Conv(x, w) => {
                if want(&x) {
                    out.push((x, self.conv3d_transpose(gy, w)?));
                }
                if want(&w) {
                    let k = self.shape(w)[2];
                    out.push((w, self.conv3d_kernel_grad(x, gy, k)?));
                }
            }
            Op::ConvTranspose(g, w) => {
                if want(&g) {
                    out.push((g, self.conv3d(gy, w)?));
                }
                if want(&w) {
                    let k = self.shape(w)[2];
                    out.push((w, self.conv3d_kernel_grad(gy, g, k)?));
                }
            }
            Op::ConvKernelGrad(x, g) => {
                if want(&x) {
                    out.push((x, self.conv3d_transpose(g, gy)?));
                }
                if want(&g) {
                    out.push((g, self.conv3d(x, gy)?));
                }
            }
            Op::ChannelSum(a) => {
                if want(&a) {
                    let shape = self.shape(a).to_vec();
                    out.push((a, self.channel_broadcast(gy, &shape)?));
                }
            }
            Op::ChannelBroadcast(b) => {
                if want(&b) {
                    out.push((b, self.channel_sum(gy)?));
                }
            }
            Op::MulChannel(x, s) => {
                if want(&x) {
                    out.push((x, self.mul_channel(gy, s)?));
                }
                if want(&s) {
                    let p = self.mul(gy, x)?;
                    out.push((s, self.channel_sum(p)?));
                }
            }
            Op::Resize(x, f) => {
                if want(&x) {
                    let [_, d, h, w] = self.value(x).dims4()?;
                    out.push((x, self.resize_adjoint(gy, f, [d, h, w])?));
                }
            }
            Op::ResizeAdjoint(g, f) => {
                if want(&g) {
                    out.push((g, self.trilinear_resize(gy, f)?));
                }
            }
            Op::Pool(x) => {
                if want(&x) {
                    let [_, d, h, w] = self.value(x).dims4()?;
                    out.push((x, self.pool_adjoint(gy, [d, h, w])?));
                }
            }
            Op::PoolAdjoint(g) => {
                if want(&g) {
                    out.push((g, self.mean_pool2(gy)?));
                }
            }
            Op::Crop(x, offset) => {
                if want(&x) {
                    let shape = self.shape(x).to_vec();
                    out.push((x, self.pad(gy, &offset, &shape)?));
                }
            }
            Op::Pad(x, offset) => {
                if want(&x) {
                    let shape = self.shape(x).to_vec();
                    out.push((x, self.crop(gy, &offset, &shape)?));
                }
            }
            Op::Concat(parts) => {
                let mut c0 = 0;
                for p in parts {
                    let shape = self.shape(p).to_vec();
                    if want(&p) {
                        let mut offset = vec![0; shape.len()];
                        offset[0] = c0;
                        out.push((p, self.crop(gy, &offset, &shape)?));
                    }
                    c0 += shape[0];
                }
            }
        }
        Ok(out)
    }

    /// Gradients of scalar `root` with respect to each node in `wrt`.
    ///
    /// With `create_graph` the returned gradients are themselves differentiable
    /// nodes; otherwise they are constants. Entries are `None` for nodes that
    /// do not influence `root`.
    pub fn grad(&mut self, root: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Option<Var>>> {
        if self.value(root).len() != 1 {
            return Err(Error::Graph(format!(
                "backward requires a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let n = root.0 + 1;
        // nodes lying on some path from a `wrt` node to the root
        let mut reaches = vec![false; n];
        for w in wrt {
            if w.0 < n && self.nodes[w.0].requires_grad {
                reaches[w.0] = true;
            }
        }
        for i in 0..n {
            if reaches[i] || !self.nodes[i].requires_grad {
                continue;
            }
            reaches[i] = op_parents(&self.nodes[i].op).iter().any(|p| reaches[p.0]);
        }
        let mut grads: Vec<Option<Var>> = vec![None; n];
        if reaches[root.0] {
            let shape = self.shape(root).to_vec();
            grads[root.0] = Some(self.constant(Tensor::ones(&shape)));
        }
        let saved = self.recording;
        self.recording = create_graph;
        let result = (|| -> Result<()> {
            for i in (0..n).rev() {
                let Some(gy) = grads[i] else { continue };
                if !reaches[i] {
                    continue;
                }
                for (p, g) in self.vjp(i, gy, &reaches)? {
                    grads[p.0] = Some(match grads[p.0] {
                        None => g,
                        Some(acc) => self.add(acc, g)?,
                    });
                }
            }
            Ok(())
        })();
        self.recording = saved;
        result?;
        Ok(wrt
            .iter()
            .map(|w| if w.0 < n { grads[w.0] } else { None })
            .collect())
    }

    /// Gradients of `root` for every requires-grad leaf that influences it.
    /// Each call starts from zero; see [`Gradients::accumulate`] to sum passes.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>> {
        let leaves: Vec<Var> = (0..=root.0.min(self.nodes.len().saturating_sub(1)))
            .filter(|&i| self.nodes[i].requires_grad && matches!(self.nodes[i].op, Op::Leaf))
            .map(Var)
            .collect();
        let gs = self.grad(root, &leaves, false)?;
        let mut grads = HashMap::new();
        for (leaf, g) in leaves.into_iter().zip(gs) {
            if let Some(g) = g {
                grads.insert(leaf, self.value(g).clone());
            }
        }
        Ok(Gradients { grads })
    }

    /// Adds the gradients of `root` into `acc`.
    pub fn backward_accumulate(&mut self, root: Var, acc: &mut Gradients<T>) -> Result<()> {
        let g = self.backward(root)?;
        acc.accumulate(&g)
    }

    /// `∇_wrt root`. With `retain`, the result is a graph node so a later
    /// backward pass yields second-order parameter gradients.
    pub fn input_gradient(&mut self, root: Var, wrt: Var, retain: bool) -> Result<Var> {
        match self.grad(root, &[wrt], retain)?[0] {
            Some(g) => Ok(g),
            None => Err(Error::Graph(format!(
                "node {} does not influence the root (or does not require grad)",
                wrt.0
            ))),
        }
    }
}

fn op_parents<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Conv(a, b)
        | Op::ConvTranspose(a, b)
        | Op::ConvKernelGrad(a, b)
        | Op::MulChannel(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::MulConst(a, _)
        | Op::LeakyRelu(a, _)
        | Op::Sum(a)
        | Op::Broadcast(a)
        | Op::Reshape(a)
        | Op::Sqrt(a)
        | Op::Recip(a)
        | Op::ChannelSum(a)
        | Op::ChannelBroadcast(a)
        | Op::Resize(a, _)
        | Op::ResizeAdjoint(a, _)
        | Op::Pool(a)
        | Op::PoolAdjoint(a)
        | Op::Crop(a, _)
        | Op::Pad(a, _) => vec![*a],
        Op::Concat(parts) => parts.clone(),
    }
}
