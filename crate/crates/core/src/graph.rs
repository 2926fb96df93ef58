//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operator applied during a forward pass. Nodes are
//! appended in evaluation order, so the tape is topologically sorted by
//! construction and [`Graph::backward`] simply walks it in reverse.
//!
//! Parameters enter the tape through [`Graph::param`]. After a backward pass
//! their gradients are *added* into the owning [`ParamStore`]; calling
//! `backward` twice without [`ParamStore::zero_grads`] in between accumulates.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How [`Graph::mse_loss`] normalizes the summed squared error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MseReduction {
    /// Sum of squared errors divided by the leading dimension (frame count).
    /// A rank-1 tensor counts as a single frame.
    PerFrame,
    /// Sum of squared errors divided by the element count.
    Mean,
    Sum,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: (usize, usize),
        dilation: (usize, usize),
        cols: Vec<F>,
    },
    MatVec {
        w: Var,
        x: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Slice {
        input: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    EmbeddingRow {
        table: Var,
        row: usize,
    },
    Sum(Var),
    Mse {
        pred: Var,
        target: Var,
        divisor: F,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<F>,
    },
}

#[derive(Debug)]
struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Debug)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    param_vars: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<F>>>,
    no_grad: bool,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grads: Vec::new(),
            no_grad: false,
        }
    }

    /// A graph that never tracks gradients; intermediate buffers needed only
    /// by the backward pass are not kept.
    pub fn inference() -> Self {
        Self {
            no_grad: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Which inputs of every ReLU on the tape are strictly positive, in tape
    /// order. Two evaluations with equal patterns lie on the same linear
    /// piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(&self.nodes[a.0].value),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|&x| x > F::zero()))
            .collect()
    }

    /// Gradient of the last backward pass with respect to a leaf node.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>, inputs: &[Var]) -> Var {
        let requires_grad = !self.no_grad && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, inputs: &[Var]) -> bool {
        !self.no_grad && inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            requires_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A free leaf whose gradient can be read back with [`Graph::grad`].
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        let requires_grad = !self.no_grad;
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let tensor = store.tensor(id);
        let requires_grad = !self.no_grad && tensor.requires_grad();
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Tensor::new(tensor.shape().to_vec(), tensor.data().to_vec()).expect("valid param"),
            requires_grad,
            param: Some(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn unary(&mut self, a: Var, op: Op<F>, f: impl Fn(F) -> F) -> Var {
        let src = &self.nodes[a.0].value;
        let data = src.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(op, value, &[a])
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa != sb {
            let axis = (0..sa.len().max(sb.len()))
                .find(|&i| sa.get(i) != sb.get(i))
                .unwrap_or(0);
            return Err(Error::shape(
                op,
                format!("axis {axis}"),
                sa.get(axis).copied().unwrap_or(0),
                sb.get(axis).copied().unwrap_or(0),
            ));
        }
        Ok(())
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Result<Var> {
        self.check_same(name, a, b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        Ok(self.push(op, value, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > F::zero() { x } else { F::zero() })
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().copied().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), &[a])
    }

    /// Contiguous run `[start, start + len)` of the flattened input.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        if len == 0 || start + len > src.numel() {
            return Err(Error::shape("slice", "end", src.numel(), start + len));
        }
        let value = Tensor::from_vec(src.data()[start..start + len].to_vec());
        Ok(self.push(Op::Slice { input: a, start }, value, &[a]))
    }

    /// Flattens and joins the inputs into one rank-1 tensor.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let data: Vec<F> = parts
            .iter()
            .flat_map(|v| self.nodes[v.0].value.data().iter().copied())
            .collect();
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::from_vec(data), parts))
    }

    /// Stacks equally sized inputs as rows of a `[parts.len(), n]` matrix.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero tensors".into()))?;
        let n = self.nodes[first.0].value.numel();
        for (i, v) in parts.iter().enumerate() {
            let got = self.nodes[v.0].value.numel();
            if got != n {
                return Err(Error::shape("stack", format!("row {i} length"), n, got));
            }
        }
        let cat = self.concat(parts)?;
        self.reshape(cat, vec![parts.len(), n])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        let value = Tensor::new(shape, src.data().to_vec())?;
        Ok(self.push(Op::Reshape(a), value, &[a]))
    }

    /// Row `row` of a rank-2 table.
    pub fn embedding_row(&mut self, table: Var, row: usize) -> Result<Var> {
        let t = &self.nodes[table.0].value;
        if t.shape().len() != 2 {
            return Err(Error::shape("embedding", "rank", 2, t.shape().len()));
        }
        let (rows, width) = (t.shape()[0], t.shape()[1]);
        if row >= rows {
            return Err(Error::InvalidArgument(format!("embedding row {row} out of range 0..{rows}")));
        }
        let value = Tensor::from_vec(t.data()[row * width..(row + 1) * width].to_vec());
        Ok(self.push(Op::EmbeddingRow { table, row }, value, &[table]))
    }

    /// `W · x` for `W` of shape `[m, n]` and `x` holding `n` elements.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wt, xt) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        if wt.shape().len() != 2 {
            return Err(Error::shape("matvec", "weight rank", 2, wt.shape().len()));
        }
        let (m, n) = (wt.shape()[0], wt.shape()[1]);
        if xt.numel() != n {
            return Err(Error::shape("matvec", "input length", n, xt.numel()));
        }
        let mut y = vec![F::zero(); m];
        F::gemm(m, n, 1, F::one(), wt.data(), n as isize, 1, xt.data(), 1, 1, F::zero(), &mut y, 1, 1);
        Ok(self.push(Op::MatVec { w, x }, Tensor::from_vec(y), &[w, x]))
    }

    /// `W · x + b`.
    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let y = self.matvec(w, x)?;
        self.add(y, b)
    }

    /// Valid (unpadded) 2-D cross-correlation of a `[C, H, W]` input with
    /// `[O, C, kH, kW]` kernels, strided and dilated.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: (usize, usize),
        dilation: (usize, usize),
    ) -> Result<Var> {
        let (it, kt, bt) = (
            &self.nodes[input.0].value,
            &self.nodes[kernel.0].value,
            &self.nodes[bias.0].value,
        );
        let geom = ConvGeometry::new(it.shape(), kt.shape(), stride, dilation)?;
        if bt.numel() != geom.out_channels {
            return Err(Error::shape("conv2d", "bias length", geom.out_channels, bt.numel()));
        }
        let cols = geom.im2col(it.data());
        let p = geom.out_h * geom.out_w;
        let ckk = geom.patch_len();
        let mut out = Vec::with_capacity(geom.out_channels * p);
        for &b in bt.data() {
            out.extend(std::iter::repeat(b).take(p));
        }
        F::gemm(
            geom.out_channels,
            ckk,
            p,
            F::one(),
            kt.data(),
            ckk as isize,
            1,
            &cols,
            p as isize,
            1,
            F::one(),
            &mut out,
            p as isize,
            1,
        );
        let value = Tensor::new(vec![geom.out_channels, geom.out_h, geom.out_w], out)?;
        let keep = self.needs_grad(&[input, kernel, bias]);
        let op = Op::Conv2d {
            input,
            kernel,
            bias,
            stride,
            dilation,
            cols: if keep { cols } else { Vec::new() },
        };
        Ok(self.push(op, value, &[input, kernel, bias]))
    }

    /// Squared-error loss between equally shaped tensors.
    pub fn mse_loss(&mut self, pred: Var, target: Var, reduction: MseReduction) -> Result<Var> {
        self.check_same("mse_loss", pred, target)?;
        let (p, t) = (&self.nodes[pred.0].value, &self.nodes[target.0].value);
        let divisor = match reduction {
            MseReduction::PerFrame if p.shape().len() >= 2 => p.shape()[0],
            MseReduction::PerFrame | MseReduction::Sum => 1,
            MseReduction::Mean => p.numel(),
        };
        let divisor = F::from_usize(divisor).expect("small integer");
        let sq: F = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let op = Op::Mse { pred, target, divisor };
        Ok(self.push(op, Tensor::scalar(sq / divisor), &[pred, target]))
    }

    /// Mean over rows of `-log softmax(logits[row])[targets[row]]` for a
    /// `[T, V]` logits matrix.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lt = &self.nodes[logits.0].value;
        let (rows, width) = match lt.shape() {
            [r, w] => (*r, *w),
            [w] => (1, *w),
            s => return Err(Error::shape("cross_entropy", "logits rank", 2, s.len())),
        };
        if targets.len() != rows {
            return Err(Error::shape("cross_entropy", "target count", rows, targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= width) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} outside vocabulary of size {width}"
            )));
        }
        let mut probs = Vec::with_capacity(rows * width);
        let mut total = F::zero();
        for (r, &target) in targets.iter().enumerate() {
            let row = &lt.data()[r * width..(r + 1) * width];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let z: F = row.iter().map(|&x| (x - max).exp()).sum();
            let log_z = z.ln() + max;
            total += log_z - row[target];
            probs.extend(row.iter().map(|&x| (x - log_z).exp()));
        }
        let rows_f = F::from_usize(rows).expect("small integer");
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push(op, Tensor::scalar(total / rows_f), &[logits]))
    }

    /// Reverse-mode pass from a scalar `loss`. Parameter gradients are added
    /// into `store`; other leaf gradients are readable via [`Graph::grad`].
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<F>) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Graph(format!("node {} is not on this graph", loss.0)));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Graph("loss is detached from every differentiable input".into()));
        }
        let mut grads: Vec<Option<Vec<F>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                if let Some(pid) = self.nodes[i].param {
                    store.get_mut(pid).tensor.accumulate_grad(&g);
                }
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, wants(*a), g.iter().copied());
                accumulate(grads, *b, wants(*b), g.iter().copied());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, wants(*a), g.iter().copied());
                accumulate(grads, *b, wants(*b), g.iter().map(|&x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                accumulate(grads, *a, wants(*a), g.iter().zip(vb).map(|(&x, &y)| x * y));
                accumulate(grads, *b, wants(*b), g.iter().zip(va).map(|(&x, &y)| x * y));
            }
            Op::Scale(a, s) => accumulate(grads, *a, true, g.iter().map(|&x| x * *s)),
            Op::Sigmoid(a) => {
                let y = node.value.data();
                accumulate(grads, *a, true, g.iter().zip(y).map(|(&d, &s)| d * s * (F::one() - s)));
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                accumulate(grads, *a, true, g.iter().zip(y).map(|(&d, &t)| d * (F::one() - t * t)));
            }
            Op::Relu(a) => {
                let x = val(*a);
                accumulate(
                    grads,
                    *a,
                    true,
                    g.iter().zip(x).map(|(&d, &x)| if x > F::zero() { d } else { F::zero() }),
                );
            }
            Op::Softplus(a) => {
                let x = val(*a);
                accumulate(grads, *a, true, g.iter().zip(x).map(|(&d, &x)| d * sigmoid(x)));
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.numel();
                accumulate(grads, *a, true, std::iter::repeat(g[0]).take(n));
            }
            Op::Slice { input, start } => {
                let n = self.nodes[input.0].value.numel();
                let slot = grad_slot(grads, *input, n);
                slot[*start..*start + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(s, &d)| *s += d);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.numel();
                    accumulate(grads, p, wants(p), g[offset..offset + n].iter().copied());
                    offset += n;
                }
            }
            Op::Reshape(a) => accumulate(grads, *a, true, g.iter().copied()),
            Op::EmbeddingRow { table, row } => {
                let t = &self.nodes[table.0].value;
                let width = t.shape()[1];
                let slot = grad_slot(grads, *table, t.numel());
                slot[row * width..(row + 1) * width]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(s, &d)| *s += d);
            }
            Op::MatVec { w, x } => {
                let wt = &self.nodes[w.0].value;
                let (m, n) = (wt.shape()[0], wt.shape()[1]);
                if wants(*w) {
                    let xv = val(*x);
                    let slot = grad_slot(grads, *w, m * n);
                    F::gemm(m, 1, n, F::one(), g, 1, 1, xv, n as isize, 1, F::one(), slot, n as isize, 1);
                }
                if wants(*x) {
                    let slot = grad_slot(grads, *x, n);
                    F::gemm(n, m, 1, F::one(), wt.data(), 1, n as isize, g, 1, 1, F::one(), slot, 1, 1);
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                dilation,
                cols,
            } => {
                let (it, kt) = (&self.nodes[input.0].value, &self.nodes[kernel.0].value);
                let geom = ConvGeometry::new(it.shape(), kt.shape(), *stride, *dilation).expect("validated in forward");
                let p = geom.out_h * geom.out_w;
                let ckk = geom.patch_len();
                let o = geom.out_channels;
                if wants(*bias) {
                    let slot = grad_slot(grads, *bias, o);
                    for (oc, s) in slot.iter_mut().enumerate() {
                        *s += g[oc * p..(oc + 1) * p].iter().copied().sum();
                    }
                }
                if wants(*kernel) {
                    let slot = grad_slot(grads, *kernel, o * ckk);
                    F::gemm(o, p, ckk, F::one(), g, p as isize, 1, cols, 1, p as isize, F::one(), slot, ckk as isize, 1);
                }
                if wants(*input) {
                    let mut dcols = vec![F::zero(); ckk * p];
                    F::gemm(
                        ckk,
                        o,
                        p,
                        F::one(),
                        kt.data(),
                        1,
                        ckk as isize,
                        g,
                        p as isize,
                        1,
                        F::zero(),
                        &mut dcols,
                        p as isize,
                        1,
                    );
                    let slot = grad_slot(grads, *input, it.numel());
                    geom.col2im_add(&dcols, slot);
                }
            }
            Op::Mse { pred, target, divisor } => {
                let (p, t) = (val(*pred), val(*target));
                let two = F::from_f64c(2.0) * g[0] / *divisor;
                accumulate(grads, *pred, wants(*pred), p.iter().zip(t).map(|(&a, &b)| two * (a - b)));
                accumulate(grads, *target, wants(*target), p.iter().zip(t).map(|(&a, &b)| two * (b - a)));
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let rows = targets.len();
                let width = probs.len() / rows;
                let scale = g[0] / F::from_usize(rows).expect("small integer");
                let mut d: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * width + t] -= scale;
                }
                accumulate(grads, *logits, true, d.into_iter());
            }
        }
    }
}

fn grad_slot<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, n: usize) -> &mut Vec<F> {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); n])
}

fn accumulate<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, wanted: bool, g: impl Iterator<Item = F>) {
    if !wanted {
        return;
    }
    match &mut grads[v.0] {
        Some(slot) => slot.iter_mut().zip(g).for_each(|(s, d)| *s += d),
        slot @ None => *slot = Some(g.collect()),
    }
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub(crate) fn softplus<F: Real>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

/// Output extent of a valid strided, dilated convolution along one axis, or
/// `None` when the dilated kernel does not fit.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, dilation: usize) -> Option<usize> {
    let extent = (kernel.checked_sub(1)?) * dilation + 1;
    if stride == 0 || extent > input {
        return None;
    }
    Some((input - extent) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    in_channels: usize,
    in_h: usize,
    in_w: usize,
    out_channels: usize,
    k_h: usize,
    k_w: usize,
    stride: (usize, usize),
    dilation: (usize, usize),
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], kernel: &[usize], stride: (usize, usize), dilation: (usize, usize)) -> Result<Self> {
        let [c, h, w] = input else {
            return Err(Error::shape("conv2d", "input rank", 3, input.len()));
        };
        let [o, kc, kh, kw] = kernel else {
            return Err(Error::shape("conv2d", "kernel rank", 4, kernel.len()));
        };
        if c != kc {
            return Err(Error::shape("conv2d", "input channels", *kc, *c));
        }
        if stride.0 == 0 || stride.1 == 0 || dilation.0 == 0 || dilation.1 == 0 {
            return Err(Error::InvalidArgument("conv2d stride and dilation must be positive".into()));
        }
        let out_h = conv_output_len(*h, *kh, stride.0, dilation.0)
            .ok_or_else(|| Error::shape("conv2d", "height", (kh - 1) * dilation.0 + 1, *h))?;
        let out_w = conv_output_len(*w, *kw, stride.1, dilation.1)
            .ok_or_else(|| Error::shape("conv2d", "width", (kw - 1) * dilation.1 + 1, *w))?;
        Ok(Self {
            in_channels: *c,
            in_h: *h,
            in_w: *w,
            out_channels: *o,
            k_h: *kh,
            k_w: *kw,
            stride,
            dilation,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.k_h * self.k_w
    }

    /// `[C·kH·kW, H'·W']` patch matrix.
    fn im2col<F: Real>(&self, input: &[F]) -> Vec<F> {
        let p = self.out_h * self.out_w;
        let mut cols = vec![F::zero(); self.patch_len() * p];
        for c in 0..self.in_channels {
            for ky in 0..self.k_h {
                for kx in 0..self.k_w {
                    let r = (c * self.k_h + ky) * self.k_w + kx;
                    let row = &mut cols[r * p..(r + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = oy * self.stride.0 + ky * self.dilation.0;
                        let base = (c * self.in_h + iy) * self.in_w + kx * self.dilation.1;
                        for ox in 0..self.out_w {
                            row[oy * self.out_w + ox] = input[base + ox * self.stride.1];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im_add<F: Real>(&self, dcols: &[F], dinput: &mut [F]) {
        let p = self.out_h * self.out_w;
        for c in 0..self.in_channels {
            for ky in 0..self.k_h {
                for kx in 0..self.k_w {
                    let r = (c * self.k_h + ky) * self.k_w + kx;
                    let row = &dcols[r * p..(r + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = oy * self.stride.0 + ky * self.dilation.0;
                        let base = (c * self.in_h + iy) * self.in_w + kx * self.dilation.1;
                        for ox in 0..self.out_w {
                            dinput[base + ox * self.stride.1] += row[oy * self.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn store_with(values: &[(&str, Vec<usize>, Vec<f64>)]) -> (ParamStore<f64>, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = values
            .iter()
            .map(|(n, s, d)| {
                store.add(
                    *n,
                    crate::params::ParamGroup::Denoiser,
                    Tensor::new(s.clone(), d.clone()).unwrap(),
                )
            })
            .collect();
        (store, ids)
    }

    #[test]
    fn square_has_derivative_two_x() {
        let (mut store, ids) = store_with(&[("x", vec![1], vec![3.0])]);
        let mut g = Graph::new();
        let x = g.param(&store, ids[0]);
        let y = g.mul(x, x).unwrap();
        g.backward(y, &mut store).unwrap();
        assert_eq!(store.tensor(ids[0]).grad().unwrap(), &[6.0]);
    }

    #[test]
    fn mean_squared_error_gradient() {
        let (mut store, ids) = store_with(&[("x", vec![2], vec![1.0, 2.0])]);
        let mut g = Graph::new();
        let x = g.param(&store, ids[0]);
        let zero = g.constant(Tensor::zeros(&[2]));
        let loss = g.mse_loss(x, zero, MseReduction::Mean).unwrap();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.tensor(ids[0]).grad().unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let (mut store, ids) = store_with(&[("x", vec![1], vec![3.0])]);
        let mut g = Graph::new();
        let x = g.param(&store, ids[0]);
        let y = g.mul(x, x).unwrap();
        g.backward(y, &mut store).unwrap();
        g.backward(y, &mut store).unwrap();
        assert_eq!(store.tensor(ids[0]).grad().unwrap(), &[12.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let (mut store, ids) = store_with(&[("x", vec![2], vec![1.0, 2.0])]);
        let mut g = Graph::new();
        let x = g.param(&store, ids[0]);
        let y = g.tanh(x);
        assert!(matches!(g.backward(y, &mut store), Err(Error::Graph(_))));
        let c = g.constant(Tensor::scalar(1.0));
        let s = g.scale(c, 2.0);
        assert!(matches!(g.backward(s, &mut store), Err(Error::Graph(_))));
        let mut other = Graph::<f64>::new();
        let lone = other.constant(Tensor::scalar(1.0));
        let _ = lone;
        assert!(matches!(g.backward(Var(999), &mut store), Err(Error::Graph(_))));
    }

    #[test]
    fn mse_per_frame_divides_by_frame_count() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let t = g.constant(Tensor::zeros(&[1, 2]));
        let l = g.mse_loss(p, t, MseReduction::PerFrame).unwrap();
        assert_eq!(g.value(l).item(), 2.0);
        let p2 = g.constant(Tensor::new(vec![2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap());
        let t2 = g.constant(Tensor::zeros(&[2, 2]));
        let l2 = g.mse_loss(p2, t2, MseReduction::PerFrame).unwrap();
        assert_eq!(g.value(l2).item(), 2.0);
        let bad = g.constant(Tensor::zeros(&[3]));
        assert!(g.mse_loss(p, bad, MseReduction::PerFrame).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_vocab() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::zeros(&[3, 857]));
        let l = g.cross_entropy(logits, &[0, 5, 856]).unwrap();
        assert_relative_eq!(g.value(l).item(), (857f64).ln(), epsilon = 1e-12);
        assert_relative_eq!(g.value(l).item(), 6.7535, epsilon = 1e-4);
        assert!(g.cross_entropy(logits, &[0, 5, 857]).is_err());
    }

    #[test]
    fn cross_entropy_confident_margin_is_tiny() {
        let mut g = Graph::<f64>::new();
        let mut row = vec![0.0; 10];
        row[3] = 30.0;
        let logits = g.constant(Tensor::new(vec![1, 10], row).unwrap());
        let l = g.cross_entropy(logits, &[3]).unwrap();
        assert!(g.value(l).item() < 1e-9);
        assert!(g.value(l).item() >= 0.0);
    }

    #[test]
    fn cross_entropy_small_case_matches_softmax_oracle() {
        // Direct evaluation: row 0 = [1,0,0] target 0, row 1 = [0,2,0] target 1.
        let l0 = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        let l1 = -(2f64.exp() / (2f64.exp() + 2.0)).ln();
        let expected = (l0 + l1) / 2.0;
        assert_relative_eq!(expected, 0.3954947400769678, epsilon = 1e-12);

        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0]).unwrap());
        let l = g.cross_entropy(logits, &[0, 1]).unwrap();
        assert_relative_eq!(g.value(l).item(), expected, epsilon = 1e-12);
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let x = g.constant(Tensor::new(vec![1, 3, 4], data.clone()).unwrap());
        let k = g.constant(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b, (1, 1), (1, 1)).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 4]);
        assert_eq!(g.value(y).data(), data.as_slice());
    }

    #[test]
    fn conv_zero_input_yields_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 256, 8]));
        let k = g.constant(Tensor::new(vec![2, 1, 7, 5], (0..70).map(|v| v as f64 * 0.1).collect()).unwrap());
        let b = g.constant(Tensor::from_vec(vec![0.25, -1.5]));
        let y = g.conv2d(x, k, b, (3, 1), (2, 1)).unwrap();
        let out = g.value(y);
        assert_eq!(out.shape(), &[2, 82, 4]);
        let p = 82 * 4;
        assert!(out.data()[..p].iter().all(|&v| v == 0.25));
        assert!(out.data()[p..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn conv_shape_errors_name_the_axis() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 10, 8]));
        let k = g.constant(Tensor::zeros(&[1, 1, 7, 5]));
        let b = g.constant(Tensor::zeros(&[1]));
        match g.conv2d(x, k, b, (3, 1), (2, 1)) {
            Err(Error::Shape { axis, .. }) => assert_eq!(axis, "height"),
            other => panic!("expected height error, got {other:?}"),
        }
        let k2 = g.constant(Tensor::zeros(&[1, 2, 1, 1]));
        match g.conv2d(x, k2, b, (1, 1), (1, 1)) {
            Err(Error::Shape { axis, .. }) => assert_eq!(axis, "input channels"),
            other => panic!("expected channel error, got {other:?}"),
        }
        let k3 = g.constant(Tensor::zeros(&[1, 1, 1, 9]));
        match g.conv2d(x, k3, b, (1, 1), (1, 1)) {
            Err(Error::Shape { axis, .. }) => assert_eq!(axis, "width"),
            other => panic!("expected width error, got {other:?}"),
        }
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert_relative_eq!(softplus(0.0f64), 2f64.ln());
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(64))]
        #[test]
        fn conv_shape_and_values_match_direct_sum(
            (cin, cout) in (1usize..3, 1usize..3),
            (h, w) in (1usize..20, 1usize..10),
            (kh, kw) in (1usize..5, 1usize..4),
            (sh, sw, dh, dw) in (1usize..4, 1usize..3, 1usize..3, 1usize..3),
            seed in 0u64..1000,
        ) {
            let oh = conv_output_len(h, kh, sh, dh);
            let ow = conv_output_len(w, kw, sw, dw);
            let val = |i: usize| (((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0) - 1.0;
            let xs: Vec<f64> = (0..cin * h * w).map(val).collect();
            let ks: Vec<f64> = (0..cout * cin * kh * kw).map(|i| val(i + 7)).collect();
            let bs: Vec<f64> = (0..cout).map(|i| val(i + 3)).collect();
            let mut g = Graph::<f64>::new();
            let x = g.constant(Tensor::new(vec![cin, h, w], xs.clone()).unwrap());
            let k = g.constant(Tensor::new(vec![cout, cin, kh, kw], ks.clone()).unwrap());
            let b = g.constant(Tensor::from_vec(bs.clone()));
            let y = g.conv2d(x, k, b, (sh, sw), (dh, dw));
            let (Some(oh), Some(ow)) = (oh, ow) else {
                proptest::prop_assert!(y.is_err());
                return Ok(());
            };
            let y = y.unwrap();
            proptest::prop_assert_eq!(g.value(y).shape(), &[cout, oh, ow]);
            let out = g.value(y).data();
            for o in 0..cout {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = bs[o];
                        for c in 0..cin {
                            for p in 0..kh {
                                for q in 0..kw {
                                    acc += ks[((o * cin + c) * kh + p) * kw + q] * xs[(c * h + i * sh + p * dh) * w + j * sw + q * dw];
                                }
                            }
                        }
                        proptest::prop_assert!((out[(o * oh + i) * ow + j] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
