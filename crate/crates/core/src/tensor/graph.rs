use std::cell::RefCell;
use std::fmt;

use super::kernels::{self, ConvDims, NormStats, PoolDims, Window};
use super::{conv_out_size, dims4, Tensor};
use crate::error::{dim_err, Error, Result};

/// Records of every operation applied during one forward pass.
///
/// Nodes are appended in execution order, so the tape is topologically sorted
/// by construction. A graph is built fresh for each training step and dropped
/// afterwards.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
    op: Op,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f32),
    AddScalar(usize),
    Abs(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    LeakyRelu(usize, f32),
    Softplus(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Concat(Vec<usize>),
    Crop {
        input: usize,
        h0: usize,
        w0: usize,
    },
    ChannelMean(usize),
    ReflectPad {
        input: usize,
        pad: usize,
    },
    Upsample {
        input: usize,
        scale: usize,
    },
    AvgPool {
        input: usize,
        dims: PoolDims,
    },
    Conv {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        stride: usize,
        pad: usize,
    },
    InstanceNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        stats: NormStats,
    },
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds a leaf. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var<'_>) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.id];
        node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape.clone(),
            data: g.clone(),
        })
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, value: Tensor, inputs: &[usize], op: Op) -> Var<'_> {
        let rg = self.needs(inputs);
        self.push(value, rg, op)
    }

    /// Reverse-mode sweep from a one-element `loss`. Leaf gradients accumulate
    /// across calls until [`Graph::zero_grad`].
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                root.value.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = Vec::new();
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((id, g));
                continue;
            }
            backward_rule(&nodes, node, g, &mut grads);
        }
        drop(nodes);
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match nodes[id].grad.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => nodes[id].grad = Some(g),
            }
        }
        Ok(())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f32>>], id: usize, g: Vec<f32>) {
    if !nodes[id].requires_grad {
        return;
    }
    match grads[id].as_mut() {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => grads[id] = Some(g),
    }
}

fn zip_map(a: &[f32], b: &[f32], f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn backward_rule(nodes: &[Node], node: &Node, g: Vec<f32>, grads: &mut [Option<Vec<f32>>]) {
    let val = |i: usize| nodes[i].value.data.as_slice();
    let rg = |i: usize| nodes[i].requires_grad;
    let y = node.value.data.as_slice();
    match &node.op {
        Op::Leaf => unreachable!(),
        &Op::Add(a, b) => {
            if rg(b) {
                accumulate(nodes, grads, b, g.clone());
            }
            accumulate(nodes, grads, a, g);
        }
        &Op::Sub(a, b) => {
            if rg(b) {
                accumulate(nodes, grads, b, g.iter().map(|v| -v).collect());
            }
            accumulate(nodes, grads, a, g);
        }
        &Op::Mul(a, b) => {
            if rg(a) {
                accumulate(nodes, grads, a, zip_map(&g, val(b), |g, b| g * b));
            }
            if rg(b) {
                accumulate(nodes, grads, b, zip_map(&g, val(a), |g, a| g * a));
            }
        }
        &Op::Div(a, b) => {
            if rg(a) {
                accumulate(nodes, grads, a, zip_map(&g, val(b), |g, b| g / b));
            }
            if rg(b) {
                let gb = g
                    .iter()
                    .zip(val(a))
                    .zip(val(b))
                    .map(|((&g, &a), &b)| -g * a / (b * b))
                    .collect();
                accumulate(nodes, grads, b, gb);
            }
        }
        &Op::Scale(a, c) => accumulate(nodes, grads, a, g.iter().map(|v| v * c).collect()),
        &Op::AddScalar(a) | &Op::Reshape(a) => accumulate(nodes, grads, a, g),
        &Op::Abs(a) => {
            let gi = zip_map(&g, val(a), |g, x| {
                if x > 0.0 {
                    g
                } else if x < 0.0 {
                    -g
                } else {
                    0.0
                }
            });
            accumulate(nodes, grads, a, gi)
        }
        &Op::Exp(a) => accumulate(nodes, grads, a, zip_map(&g, y, |g, y| g * y)),
        &Op::Log(a) => accumulate(nodes, grads, a, zip_map(&g, val(a), |g, x| g / x)),
        &Op::Tanh(a) => accumulate(nodes, grads, a, zip_map(&g, y, |g, y| g * (1.0 - y * y))),
        &Op::Sigmoid(a) => accumulate(nodes, grads, a, zip_map(&g, y, |g, y| g * y * (1.0 - y))),
        &Op::Relu(a) => {
            accumulate(nodes, grads, a, zip_map(&g, val(a), |g, x| if x > 0.0 { g } else { 0.0 }))
        }
        &Op::LeakyRelu(a, s) => {
            accumulate(nodes, grads, a, zip_map(&g, val(a), |g, x| if x > 0.0 { g } else { g * s }))
        }
        &Op::Softplus(a) => accumulate(nodes, grads, a, zip_map(&g, val(a), |g, x| g * sigmoid(x))),
        &Op::Square(a) => accumulate(nodes, grads, a, zip_map(&g, val(a), |g, x| 2.0 * g * x)),
        &Op::Sum(a) => accumulate(nodes, grads, a, vec![g[0]; nodes[a].value.len()]),
        &Op::Mean(a) => {
            let n = nodes[a].value.len();
            accumulate(nodes, grads, a, vec![g[0] / n as f32; n])
        }
        Op::Concat(inputs) => {
            let (n, _, h, w) = dims4(&node.value.shape, "concat").expect("recorded shape");
            let plane = h * w;
            let total_c = node.value.shape[1];
            let mut c0 = 0;
            for &i in inputs {
                let ci = nodes[i].value.shape[1];
                if rg(i) {
                    let mut gi = Vec::with_capacity(n * ci * plane);
                    for b in 0..n {
                        let start = (b * total_c + c0) * plane;
                        gi.extend_from_slice(&g[start..start + ci * plane]);
                    }
                    accumulate(nodes, grads, i, gi);
                }
                c0 += ci;
            }
        }
        &Op::Crop { input, h0, w0 } => {
            let (n, c, h, w) = dims4(&nodes[input].value.shape, "crop").expect("recorded shape");
            let (_, _, oh, ow) = dims4(&node.value.shape, "crop").expect("recorded shape");
            let mut gi = vec![0.0; n * c * h * w];
            for pl in 0..n * c {
                for y in 0..oh {
                    let src = &g[(pl * oh + y) * ow..][..ow];
                    gi[(pl * h + h0 + y) * w + w0..][..ow].copy_from_slice(src);
                }
            }
            accumulate(nodes, grads, input, gi)
        }
        &Op::ChannelMean(a) => {
            let (n, c, h, w) = dims4(&nodes[a].value.shape, "channel_mean").expect("recorded shape");
            let plane = h * w;
            let inv = 1.0 / c as f32;
            let mut gi = vec![0.0; n * c * plane];
            for b in 0..n {
                let src = &g[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    let dst = &mut gi[(b * c + ch) * plane..][..plane];
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s * inv);
                }
            }
            accumulate(nodes, grads, a, gi)
        }
        &Op::ReflectPad { input, pad } => {
            let (n, c, h, w) = dims4(&nodes[input].value.shape, "reflect_pad").expect("recorded shape");
            accumulate(nodes, grads, input, kernels::reflect_pad_backward(&g, n * c, h, w, pad))
        }
        &Op::Upsample { input, scale } => {
            let (n, c, h, w) = dims4(&nodes[input].value.shape, "upsample").expect("recorded shape");
            accumulate(nodes, grads, input, kernels::upsample_backward(&g, n * c, h, w, scale))
        }
        Op::AvgPool { input, dims } => {
            accumulate(nodes, grads, *input, kernels::avg_pool_backward(&g, dims))
        }
        &Op::Conv {
            input,
            weight,
            bias,
            stride,
            pad,
        } => {
            let d = conv_dims(&nodes[input].value, &nodes[weight].value, stride, pad);
            let need = [rg(input), rg(weight), bias.is_some_and(rg)];
            let cg = kernels::conv2d_backward(val(input), val(weight), &g, &d, need);
            if let Some(gi) = cg.input {
                accumulate(nodes, grads, input, gi);
            }
            if let Some(gw) = cg.weight {
                accumulate(nodes, grads, weight, gw);
            }
            if let (Some(b), Some(gb)) = (bias, cg.bias) {
                accumulate(nodes, grads, b, gb);
            }
        }
        &Op::ConvTranspose {
            input,
            weight,
            bias,
            stride,
            pad,
        } => {
            let d = conv_t_dims(&nodes[input].value, &nodes[weight].value, stride, pad);
            let need = [rg(input), rg(weight), bias.is_some_and(rg)];
            let cg = kernels::conv_transpose2d_backward(val(input), val(weight), &g, &d, need);
            if let Some(gi) = cg.input {
                accumulate(nodes, grads, input, gi);
            }
            if let Some(gw) = cg.weight {
                accumulate(nodes, grads, weight, gw);
            }
            if let (Some(b), Some(gb)) = (bias, cg.bias) {
                accumulate(nodes, grads, b, gb);
            }
        }
        Op::InstanceNorm {
            input,
            gamma,
            beta,
            stats,
        } => {
            let (n, c, h, w) = dims4(&nodes[*input].value.shape, "instance_norm").expect("recorded shape");
            let (gi, gg, gb) =
                kernels::instance_norm_backward(val(*input), &g, n, c, h * w, val(*gamma), stats);
            accumulate(nodes, grads, *input, gi);
            accumulate(nodes, grads, *gamma, gg);
            accumulate(nodes, grads, *beta, gb);
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn conv_dims(input: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> ConvDims {
    let (n, c, h, w) = (input.shape[0], input.shape[1], input.shape[2], input.shape[3]);
    let (cout, kh, kw) = (weight.shape[0], weight.shape[2], weight.shape[3]);
    ConvDims {
        n,
        cout,
        win: Window {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        },
    }
}

fn conv_t_dims(input: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> ConvDims {
    let (n, cin, h, w) = (input.shape[0], input.shape[1], input.shape[2], input.shape[3]);
    let (cout, kh, kw) = (weight.shape[1], weight.shape[2], weight.shape[3]);
    ConvDims {
        n,
        cout: cin,
        win: Window {
            c: cout,
            h: (h - 1) * stride + kh - 2 * pad,
            w: (w - 1) * stride + kw - 2 * pad,
            kh,
            kw,
            stride,
            pad,
            oh: h,
            ow: w,
        },
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape.clone()
    }

    pub fn value(&self) -> Tensor {
        self.graph.value(*self)
    }

    pub fn item(&self) -> Result<f32> {
        self.graph.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.graph.grad(*self)
    }

    /// A constant copy of this value, cut from the graph.
    pub fn detach(self) -> Var<'g> {
        let v = self.value();
        self.graph.constant(v)
    }

    fn same_graph(&self, other: &Var<'g>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "vars from different graphs"
        );
    }

    fn unary(self, f: impl Fn(f32) -> f32, op: Op) -> Var<'g> {
        let out = {
            let nodes = self.graph.nodes.borrow();
            nodes[self.id].value.map(f)
        };
        self.graph.record(out, &[self.id], op)
    }

    fn binary(
        self,
        other: Var<'g>,
        name: &'static str,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var<'g>> {
        self.same_graph(&other);
        let out = {
            let nodes = self.graph.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape != b.shape {
                return Err(dim_err(
                    name,
                    format!("operand shapes {:?} and {:?} differ", a.shape, b.shape),
                ));
            }
            Tensor {
                shape: a.shape.clone(),
                data: zip_map(&a.data, &b.data, f),
            }
        };
        Ok(self.graph.record(out, &[self.id, other.id], op))
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn scale(self, c: f32) -> Var<'g> {
        self.unary(|v| v * c, Op::Scale(self.id, c))
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f32) -> Var<'g> {
        self.unary(|v| v + c, Op::AddScalar(self.id))
    }

    pub fn abs(self) -> Var<'g> {
        self.unary(f32::abs, Op::Abs(self.id))
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(f32::exp, Op::Exp(self.id))
    }

    pub fn log(self) -> Var<'g> {
        self.unary(f32::ln, Op::Log(self.id))
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(f32::tanh, Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(sigmoid, Op::Sigmoid(self.id))
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(|v| v.max(0.0), Op::Relu(self.id))
    }

    /// Leaky ReLU; the subgradient at 0 is the negative-side slope.
    pub fn leaky_relu(self, slope: f32) -> Var<'g> {
        self.unary(
            move |v| if v > 0.0 { v } else { v * slope },
            Op::LeakyRelu(self.id, slope),
        )
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'g> {
        self.unary(softplus, Op::Softplus(self.id))
    }

    pub fn square(self) -> Var<'g> {
        self.unary(|v| v * v, Op::Square(self.id))
    }

    pub fn sum(self) -> Var<'g> {
        let out = {
            let nodes = self.graph.nodes.borrow();
            Tensor::scalar(nodes[self.id].value.data.iter().sum())
        };
        self.graph.record(out, &[self.id], Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let out = {
            let nodes = self.graph.nodes.borrow();
            let d = &nodes[self.id].value.data;
            Tensor::scalar(d.iter().sum::<f32>() / d.len() as f32)
        };
        self.graph.record(out, &[self.id], Op::Mean(self.id))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'g>> {
        let out = self.value().reshape(shape)?;
        Ok(self.graph.record(out, &[self.id], Op::Reshape(self.id)))
    }

    /// Concatenates N×Ci×H×W tensors along the channel axis, in order.
    pub fn concat_channels(parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts.first().ok_or_else(|| dim_err("concat", "empty list"))?;
        let graph = first.graph;
        let out = {
            let nodes = graph.nodes.borrow();
            let (n, _, h, w) = dims4(&nodes[first.id].value.shape, "concat")?;
            let mut shapes = Vec::with_capacity(parts.len());
            for p in parts {
                first.same_graph(p);
                let s = &nodes[p.id].value.shape;
                let (pn, pc, ph, pw) = dims4(s, "concat")?;
                if (pn, ph, pw) != (n, h, w) {
                    return Err(dim_err(
                        "concat",
                        format!(
                            "shape {s:?} disagrees with {:?} outside the channel axis",
                            nodes[first.id].value.shape
                        ),
                    ));
                }
                shapes.push(pc);
            }
            let total_c: usize = shapes.iter().sum();
            let plane = h * w;
            let mut data = Vec::with_capacity(n * total_c * plane);
            for b in 0..n {
                for (p, &pc) in parts.iter().zip(&shapes) {
                    let src = &nodes[p.id].value.data;
                    data.extend_from_slice(&src[b * pc * plane..(b + 1) * pc * plane]);
                }
            }
            Tensor {
                shape: vec![n, total_c, h, w],
                data,
            }
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(graph.record(out, &ids, Op::Concat(ids.clone())))
    }

    /// Spatial window `[h0, h0+h) × [w0, w0+w)` of every plane.
    pub fn crop(self, h0: usize, h: usize, w0: usize, w: usize) -> Result<Var<'g>> {
        let out = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            let (n, c, ih, iw) = dims4(&src.shape, "crop")?;
            if h == 0 || w == 0 || h0 + h > ih || w0 + w > iw {
                return Err(dim_err(
                    "crop",
                    format!("window rows {h0}+{h}, cols {w0}+{w} outside {ih}×{iw}"),
                ));
            }
            let mut data = Vec::with_capacity(n * c * h * w);
            for pl in 0..n * c {
                for y in 0..h {
                    data.extend_from_slice(&src.data[(pl * ih + h0 + y) * iw + w0..][..w]);
                }
            }
            Tensor {
                shape: vec![n, c, h, w],
                data,
            }
        };
        Ok(self
            .graph
            .record(out, &[self.id], Op::Crop { input: self.id, h0, w0 }))
    }

    /// Mean over the channel axis: N×C×H×W → N×1×H×W.
    pub fn channel_mean(self) -> Result<Var<'g>> {
        let out = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            let (n, c, h, w) = dims4(&src.shape, "channel_mean")?;
            let plane = h * w;
            let mut data = vec![0.0f32; n * plane];
            for b in 0..n {
                let dst = &mut data[b * plane..(b + 1) * plane];
                for ch in 0..c {
                    let s = &src.data[(b * c + ch) * plane..][..plane];
                    dst.iter_mut().zip(s).for_each(|(d, &v)| *d += v);
                }
                dst.iter_mut().for_each(|d| *d /= c as f32);
            }
            Tensor {
                shape: vec![n, 1, h, w],
                data,
            }
        };
        Ok(self.graph.record(out, &[self.id], Op::ChannelMean(self.id)))
    }

    pub fn reflect_pad(self, pad: usize) -> Result<Var<'g>> {
        if pad == 0 {
            return Ok(self);
        }
        let out = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            let (n, c, h, w) = dims4(&src.shape, "reflect_pad")?;
            if pad >= h || pad >= w {
                return Err(dim_err(
                    "reflect_pad",
                    format!("padding {pad} needs H and W > {pad}, got {h}×{w}"),
                ));
            }
            Tensor {
                shape: vec![n, c, h + 2 * pad, w + 2 * pad],
                data: kernels::reflect_pad_forward(&src.data, n * c, h, w, pad),
            }
        };
        Ok(self
            .graph
            .record(out, &[self.id], Op::ReflectPad { input: self.id, pad }))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(self, scale: usize) -> Result<Var<'g>> {
        if scale == 0 {
            return Err(dim_err("upsample_nearest", "scale must be positive"));
        }
        let out = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            let (n, c, h, w) = dims4(&src.shape, "upsample_nearest")?;
            Tensor {
                shape: vec![n, c, h * scale, w * scale],
                data: kernels::upsample_forward(&src.data, n * c, h, w, scale),
            }
        };
        Ok(self.graph.record(
            out,
            &[self.id],
            Op::Upsample {
                input: self.id,
                scale,
            },
        ))
    }

    /// Window-mean pooling without padding.
    pub fn avg_pool2d(self, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var<'g>> {
        let (out, dims) = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            let (n, c, h, w) = dims4(&src.shape, "avg_pool2d")?;
            let (kh, kw) = kernel;
            let (sh, sw) = stride;
            let oh = conv_out_size(h, kh, sh, 0);
            let ow = conv_out_size(w, kw, sw, 0);
            let (Some(oh), Some(ow)) = (oh, ow) else {
                return Err(dim_err(
                    "avg_pool2d",
                    format!("kernel {kh}×{kw} stride {sh}×{sw} does not fit input {h}×{w}"),
                ));
            };
            let dims = PoolDims {
                planes: n * c,
                h,
                w,
                kh,
                kw,
                sh,
                sw,
                oh,
                ow,
            };
            let out = Tensor {
                shape: vec![n, c, oh, ow],
                data: kernels::avg_pool_forward(&src.data, &dims),
            };
            (out, dims)
        };
        Ok(self.graph.record(
            out,
            &[self.id],
            Op::AvgPool {
                input: self.id,
                dims,
            },
        ))
    }

    /// Cross-correlation with zero padding. `weight` is Cout×Cin×kh×kw.
    pub fn conv2d(
        self,
        weight: Var<'g>,
        bias: Option<Var<'g>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'g>> {
        self.same_graph(&weight);
        let out = {
            let nodes = self.graph.nodes.borrow();
            let (x, wt) = (&nodes[self.id].value, &nodes[weight.id].value);
            let (_, cin, h, w) = dims4(&x.shape, "conv2d")?;
            let (cout, wcin, kh, kw) = dims4(&wt.shape, "conv2d")?;
            if wcin != cin {
                return Err(dim_err(
                    "conv2d",
                    format!("input channels (axis 1) = {cin} but weight expects {wcin} (axis 1)"),
                ));
            }
            if stride == 0 {
                return Err(dim_err("conv2d", "stride must be positive"));
            }
            if conv_out_size(h, kh, stride, padding).is_none() {
                return Err(dim_err(
                    "conv2d",
                    format!("kernel height {kh} exceeds padded input height {} (axis 2)", h + 2 * padding),
                ));
            }
            if conv_out_size(w, kw, stride, padding).is_none() {
                return Err(dim_err(
                    "conv2d",
                    format!("kernel width {kw} exceeds padded input width {} (axis 3)", w + 2 * padding),
                ));
            }
            let b = match bias {
                Some(b) => {
                    self.same_graph(&b);
                    let bt = &nodes[b.id].value;
                    if bt.shape != [cout] {
                        return Err(dim_err(
                            "conv2d",
                            format!("bias shape {:?} != [{cout}]", bt.shape),
                        ));
                    }
                    Some(bt.data.as_slice())
                }
                None => None,
            };
            let d = conv_dims(x, wt, stride, padding);
            Tensor {
                shape: vec![d.n, cout, d.win.oh, d.win.ow],
                data: kernels::conv2d_forward(&x.data, &wt.data, b, &d),
            }
        };
        let mut ids = vec![self.id, weight.id];
        ids.extend(bias.map(|b| b.id));
        Ok(self.graph.record(
            out,
            &ids,
            Op::Conv {
                input: self.id,
                weight: weight.id,
                bias: bias.map(|b| b.id),
                stride,
                pad: padding,
            },
        ))
    }

    /// Transposed convolution (adjoint of [`Var::conv2d`] with the same weight).
    /// `weight` is Cin×Cout×kh×kw; output extent is `(H−1)·stride − 2·padding + kh`.
    pub fn conv_transpose2d(
        self,
        weight: Var<'g>,
        bias: Option<Var<'g>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'g>> {
        self.same_graph(&weight);
        let out = {
            let nodes = self.graph.nodes.borrow();
            let (x, wt) = (&nodes[self.id].value, &nodes[weight.id].value);
            let (_, cin, h, w) = dims4(&x.shape, "conv_transpose2d")?;
            let (wcin, cout, kh, kw) = dims4(&wt.shape, "conv_transpose2d")?;
            if wcin != cin {
                return Err(dim_err(
                    "conv_transpose2d",
                    format!("input channels (axis 1) = {cin} but weight expects {wcin} (axis 0)"),
                ));
            }
            if stride == 0 {
                return Err(dim_err("conv_transpose2d", "stride must be positive"));
            }
            if (h - 1) * stride + kh <= 2 * padding || (w - 1) * stride + kw <= 2 * padding {
                return Err(dim_err(
                    "conv_transpose2d",
                    format!("padding {padding} leaves an empty output for input {h}×{w}"),
                ));
            }
            let b = match bias {
                Some(b) => {
                    self.same_graph(&b);
                    let bt = &nodes[b.id].value;
                    if bt.shape != [cout] {
                        return Err(dim_err(
                            "conv_transpose2d",
                            format!("bias shape {:?} != [{cout}]", bt.shape),
                        ));
                    }
                    Some(bt.data.as_slice())
                }
                None => None,
            };
            let d = conv_t_dims(x, wt, stride, padding);
            Tensor {
                shape: vec![d.n, cout, d.win.h, d.win.w],
                data: kernels::conv_transpose2d_forward(&x.data, &wt.data, b, &d),
            }
        };
        let mut ids = vec![self.id, weight.id];
        ids.extend(bias.map(|b| b.id));
        Ok(self.graph.record(
            out,
            &ids,
            Op::ConvTranspose {
                input: self.id,
                weight: weight.id,
                bias: bias.map(|b| b.id),
                stride,
                pad: padding,
            },
        ))
    }

    /// Per-(image, channel) normalization with affine `gamma`/`beta` of length C.
    pub fn instance_norm(self, gamma: Var<'g>, beta: Var<'g>, eps: f32) -> Result<Var<'g>> {
        self.same_graph(&gamma);
        self.same_graph(&beta);
        let (out, stats) = {
            let nodes = self.graph.nodes.borrow();
            let x = &nodes[self.id].value;
            let (n, c, h, w) = dims4(&x.shape, "instance_norm")?;
            let (g, b) = (&nodes[gamma.id].value, &nodes[beta.id].value);
            if g.shape != [c] || b.shape != [c] {
                return Err(dim_err(
                    "instance_norm",
                    format!(
                        "gamma {:?} / beta {:?} must both be [{c}] (channel axis 1)",
                        g.shape, b.shape
                    ),
                ));
            }
            let (data, stats) =
                kernels::instance_norm_forward(&x.data, n, c, h * w, &g.data, &b.data, eps);
            (
                Tensor {
                    shape: x.shape.clone(),
                    data,
                },
                stats,
            )
        };
        Ok(self.graph.record(
            out,
            &[self.id, gamma.id, beta.id],
            Op::InstanceNorm {
                input: self.id,
                gamma: gamma.id,
                beta: beta.id,
                stats,
            },
        ))
    }
}
