//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records operations in execution order; since every operand
//! precedes its consumer on the tape, walking the tape backwards is a valid
//! reverse topological order and each node is visited exactly once.

pub mod gradcheck;
pub mod kernels;
mod params;

pub use params::{Gradients, ParamId, ParamStore, Parameter};

use kernels::{sigmoid, ConvGeometry};

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d { input: Var, kernel: Var, bias: Var, stride: usize },
    Dense { input: Var, weights: Var, bias: Var },
    Relu(Var),
    Sigmoid(Var),
    Upsample2x(Var),
    Lerp { a: Var, b: Var, w: Var },
    Broadcast(Var),
    Sobel(Var),
    MulConst { x: Var, factor: Tensor<T> },
    Huber { x: Var, target: Tensor<T>, delta: T },
    Mse { a: Var, b: Var },
    WeightedSum(Vec<(Var, T)>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Result of a backward pass: gradients of every graph node that requires
/// one, plus the parameter gradients gathered from them.
#[derive(Debug)]
pub struct Backward<T> {
    node_grads: Vec<Option<Tensor<T>>>,
    params: Gradients<T>,
}

impl<T: Scalar> Backward<T> {
    pub fn wrt(&self, var: Var) -> Option<&Tensor<T>> {
        self.node_grads[var.0].as_ref()
    }

    pub fn params(&self) -> &Gradients<T> {
        &self.params
    }

    pub fn into_params(self) -> Gradients<T> {
        self.params
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Constant leaf; no gradient is propagated into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Leaf whose gradient is tracked (used for input-gradient checks).
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    /// 3x3 "same" convolution, zero padded, stride 1 or 2.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let (h, w, ci) = self.value(input).hwc()?;
        let kd = self.value(kernel).dims();
        if kd.len() != 4 || kd[0] != 3 || kd[1] != 3 {
            return Err(Error::shape("conv2d", format!("kernel must be 3x3xCinxCout, got {kd:?}")));
        }
        if kd[2] != ci {
            return Err(Error::shape("conv2d", format!("input has {ci} channels, kernel expects {}", kd[2])));
        }
        let co = kd[3];
        if self.value(bias).dims() != [co] {
            return Err(Error::shape("conv2d", format!("bias dims {:?}, expected [{co}]", self.value(bias).dims())));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::InvalidArgument(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        let g = ConvGeometry { height: h, width: w, in_channels: ci, out_channels: co, stride };
        let out = kernels::conv2d_forward(self.value(input).data(), self.value(kernel).data(), self.value(bias).data(), &g);
        let value = Tensor::from_vec(&[g.out_height(), g.out_width(), co], out)?;
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, stride }, rg))
    }

    /// Affine map of a flattened input: `x W + b`.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let n = self.value(input).len();
        let wd = self.value(weights).dims().to_vec();
        if wd.len() != 2 || wd[0] != n {
            return Err(Error::shape("dense", format!("input length {n}, weights dims {wd:?}")));
        }
        let m = wd[1];
        if self.value(bias).dims() != [m] {
            return Err(Error::shape("dense", format!("bias dims {:?}, expected [{m}]", self.value(bias).dims())));
        }
        let mut out = self.value(bias).data().to_vec();
        gemm(MatRef::new(self.value(input).data(), 1, n), MatRef::new(self.value(weights).data(), n, m), T::one(), &mut out);
        let value = Tensor::from_vec(&[1, 1, m], out)?;
        let rg = self.rg(input) || self.rg(weights) || self.rg(bias);
        Ok(self.push(value, Op::Dense { input, weights, bias }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::from_vec(src.dims(), data).expect("same dims");
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::from_vec(src.dims(), data).expect("same dims");
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// Nearest-neighbour 2x spatial upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = self.value(x).hwc()?;
        let out = kernels::upsample2x_forward(self.value(x).data(), h, w, c);
        let value = Tensor::from_vec(&[2 * h, 2 * w, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Upsample2x(x), rg))
    }

    /// `s(w) * a + (1 - s(w)) * b` with `s` the logistic function.
    pub fn lerp_merge(&mut self, a: Var, b: Var, w: Var) -> Result<Var> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(Error::shape(
                "lerp_merge",
                format!("{:?} vs {:?}", self.value(a).dims(), self.value(b).dims()),
            ));
        }
        if self.value(w).len() != 1 {
            return Err(Error::shape("lerp_merge", "blend weight must be a scalar"));
        }
        let s = sigmoid(self.value(w).item());
        let t = T::one() - s;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| s * x + t * y).collect();
        let value = Tensor::from_vec(self.value(a).dims(), data)?;
        let rg = self.rg(a) || self.rg(b) || self.rg(w);
        Ok(self.push(value, Op::Lerp { a, b, w }, rg))
    }

    /// Copies a `1x1xC` vector to every cell of an `h x w` grid.
    pub fn broadcast_spatial(&mut self, v: Var, h: usize, w: usize) -> Result<Var> {
        let src = self.value(v);
        let c = src.len();
        if src.dims().len() == 3 && (src.dims()[0] != 1 || src.dims()[1] != 1) {
            return Err(Error::shape("broadcast_spatial", format!("expected 1x1xC vector, got {:?}", src.dims())));
        }
        let mut data = Vec::with_capacity(h * w * c);
        for _ in 0..h * w {
            data.extend_from_slice(src.data());
        }
        let value = Tensor::from_vec(&[h, w, c], data)?;
        let rg = self.rg(v);
        Ok(self.push(value, Op::Broadcast(v), rg))
    }

    pub fn sobel(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = self.value(x).hwc()?;
        let out = kernels::sobel_forward(self.value(x).data(), h, w, c);
        let value = Tensor::from_vec(&[h, w, 2 * c], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Sobel(x), rg))
    }

    /// Elementwise product with a constant. A single-channel `factor` is
    /// broadcast across the channels of `x`.
    pub fn mul_const(&mut self, x: Var, factor: &Tensor<T>) -> Result<Var> {
        let (h, w, c) = self.value(x).hwc()?;
        let (fh, fw, fc) = factor.hwc()?;
        if fh != h || fw != w || (fc != c && fc != 1) {
            return Err(Error::shape("mul_const", format!("{:?} vs factor {:?}", self.value(x).dims(), factor.dims())));
        }
        let expanded = if fc == c { factor.clone() } else { expand_channels(factor, c) };
        let data = self.value(x).data().iter().zip(expanded.data()).map(|(&a, &b)| a * b).collect();
        let value = Tensor::from_vec(&[h, w, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MulConst { x, factor: expanded }, rg))
    }

    /// Mean Huber penalty of `x - target` over all elements.
    pub fn huber_mean(&mut self, x: Var, target: &Tensor<T>, delta: T) -> Result<Var> {
        if self.value(x).dims() != target.dims() {
            return Err(Error::shape("huber", format!("{:?} vs {:?}", self.value(x).dims(), target.dims())));
        }
        let half = T::lit(0.5);
        let n = T::from_usize(target.len()).expect("count");
        let total: T = self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&o, &y)| {
                let r = (o - y).abs();
                if r <= delta {
                    half * r * r
                } else {
                    delta * r - half * delta * delta
                }
            })
            .sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(total / n), Op::Huber { x, target: target.clone(), delta }, rg))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(Error::shape("mse", format!("{:?} vs {:?}", self.value(a).dims(), self.value(b).dims())));
        }
        let n = T::from_usize(self.value(a).len()).expect("count");
        let total: T = self.value(a).data().iter().zip(self.value(b).data()).map(|(&p, &q)| (p - q) * (p - q)).sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(total / n), Op::Mse { a, b }, rg))
    }

    /// `sum_i weight_i * term_i` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, weight) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::shape("weighted_sum", "terms must be scalars"));
            }
            total += weight * self.value(v).item();
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Backward<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got dims {:?}", self.value(loss).dims())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).dims(), T::one()));
        let mut params = Gradients { per_param: Vec::new() };

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads, &mut params)?;
            grads[idx] = Some(g);
        }
        Ok(Backward { node_grads: grads, params })
    }

    /// Runs [`Graph::backward`] and adds the parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let back = self.backward(loss)?;
        store.accumulate(back.params());
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        params: &mut Gradients<T>,
    ) -> Result<()> {
        let send = |grads: &mut [Option<Tensor<T>>], v: Var, contribution: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contribution),
                slot => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                if params.per_param.len() <= id.0 {
                    params.per_param.resize(id.0 + 1, None);
                }
                match &mut params.per_param[id.0] {
                    Some(existing) => existing.add_assign(g),
                    slot => *slot = Some(g.clone()),
                }
            }
            Op::Conv2d { input, kernel, bias, stride } => {
                let x = self.value(*input);
                let k = self.value(*kernel);
                let (h, w, ci) = x.hwc()?;
                let geom = ConvGeometry { height: h, width: w, in_channels: ci, out_channels: k.dims()[3], stride: *stride };
                let cg = kernels::conv2d_backward(x.data(), k.data(), g.data(), &geom, self.rg(*input));
                if let Some(gi) = cg.input {
                    send(grads, *input, Tensor::from_vec(x.dims(), gi)?);
                }
                send(grads, *kernel, Tensor::from_vec(k.dims(), cg.kernel)?);
                send(grads, *bias, Tensor::from_vec(self.value(*bias).dims(), cg.bias)?);
            }
            Op::Dense { input, weights, bias } => {
                let x = self.value(*input);
                let wts = self.value(*weights);
                let (n, m) = (wts.dims()[0], wts.dims()[1]);
                let mut gw = vec![T::zero(); n * m];
                gemm(MatRef::new(x.data(), 1, n).t(), MatRef::new(g.data(), 1, m), T::zero(), &mut gw);
                send(grads, *weights, Tensor::from_vec(wts.dims(), gw)?);
                send(grads, *bias, Tensor::from_vec(&[m], g.data().to_vec())?);
                if self.rg(*input) {
                    let mut gx = vec![T::zero(); n];
                    gemm(MatRef::new(g.data(), 1, m), MatRef::new(wts.data(), n, m).t(), T::zero(), &mut gx);
                    send(grads, *input, Tensor::from_vec(x.dims(), gx)?);
                }
            }
            Op::Relu(x) => {
                let src = self.value(*x);
                let data =
                    src.data().iter().zip(g.data()).map(|(&v, &d)| if v > T::zero() { d } else { T::zero() }).collect();
                send(grads, *x, Tensor::from_vec(src.dims(), data)?);
            }
            Op::Sigmoid(x) => {
                let data = node.value.data().iter().zip(g.data()).map(|(&s, &d)| d * s * (T::one() - s)).collect();
                send(grads, *x, Tensor::from_vec(node.value.dims(), data)?);
            }
            Op::Upsample2x(x) => {
                let (h, w, c) = self.value(*x).hwc()?;
                let gi = kernels::upsample2x_backward(g.data(), h, w, c);
                send(grads, *x, Tensor::from_vec(&[h, w, c], gi)?);
            }
            Op::Lerp { a, b, w } => {
                let s = sigmoid(self.value(*w).item());
                let t = T::one() - s;
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.rg(*a) {
                    let data = g.data().iter().map(|&d| d * s).collect();
                    send(grads, *a, Tensor::from_vec(av.dims(), data)?);
                }
                if self.rg(*b) {
                    let data = g.data().iter().map(|&d| d * t).collect();
                    send(grads, *b, Tensor::from_vec(bv.dims(), data)?);
                }
                let dot: T = g.data().iter().zip(av.data().iter().zip(bv.data())).map(|(&d, (&x, &y))| d * (x - y)).sum();
                send(grads, *w, Tensor::from_vec(self.value(*w).dims(), vec![dot * s * t])?);
            }
            Op::Broadcast(v) => {
                let src = self.value(*v);
                let c = src.len();
                let mut acc = vec![T::zero(); c];
                for cell in g.data().chunks_exact(c) {
                    for (a, &d) in acc.iter_mut().zip(cell) {
                        *a += d;
                    }
                }
                send(grads, *v, Tensor::from_vec(src.dims(), acc)?);
            }
            Op::Sobel(x) => {
                let (h, w, c) = self.value(*x).hwc()?;
                let gi = kernels::sobel_backward(g.data(), h, w, c);
                send(grads, *x, Tensor::from_vec(&[h, w, c], gi)?);
            }
            Op::MulConst { x, factor } => {
                let data = g.data().iter().zip(factor.data()).map(|(&d, &f)| d * f).collect();
                send(grads, *x, Tensor::from_vec(factor.dims(), data)?);
            }
            Op::Huber { x, target, delta } => {
                let upstream = g.item();
                let n = T::from_usize(target.len()).expect("count");
                let scale = upstream / n;
                let data = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&o, &y)| {
                        let r = o - y;
                        let d = if r.abs() <= *delta { r } else { *delta * r.signum() };
                        d * scale
                    })
                    .collect();
                send(grads, *x, Tensor::from_vec(target.dims(), data)?);
            }
            Op::Mse { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let n = T::from_usize(av.len()).expect("count");
                let scale = T::lit(2.0) * g.item() / n;
                let diff: Vec<T> = av.data().iter().zip(bv.data()).map(|(&p, &q)| (p - q) * scale).collect();
                if self.rg(*b) {
                    let neg = diff.iter().map(|&d| -d).collect();
                    send(grads, *b, Tensor::from_vec(bv.dims(), neg)?);
                }
                send(grads, *a, Tensor::from_vec(av.dims(), diff)?);
            }
            Op::WeightedSum(terms) => {
                let upstream = g.item();
                for &(v, weight) in terms {
                    let dims = self.value(v).dims().to_vec();
                    send(grads, v, Tensor::from_vec(&dims, vec![upstream * weight])?);
                }
            }
        }
        Ok(())
    }
}

fn expand_channels<T: Scalar>(single: &Tensor<T>, c: usize) -> Tensor<T> {
    let (h, w, _) = single.hwc().expect("rank-3");
    let data = single.data().iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect();
    Tensor::from_vec(&[h, w, c], data).expect("expanded dims")
}
