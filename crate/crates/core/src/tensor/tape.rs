use std::collections::HashMap;

use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Elementwise and reduction operators, selectable by kind.
#[derive(Clone, Copy, Debug)]
pub enum Elementwise {
    /// `x^q` by repeated multiplication, `q >= 1`.
    Pow(u32),
    Tanh,
    Add(Var),
    Scale(f64),
    SumAll,
    /// Mean squared error against a same-shaped operand.
    MseAgainst(Var),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resize {
    NearestUp(usize),
    BilinearUp(usize),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        geom: ConvGeometry,
        batch: usize,
        out_channels: usize,
    },
    Pow {
        input: usize,
        q: u32,
    },
    Tanh {
        input: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        input: usize,
        factor: f64,
    },
    SumAll {
        input: usize,
    },
    Mse {
        input: usize,
        target: usize,
    },
    NearestUp {
        input: usize,
        factor: usize,
    },
    BilinearUp {
        input: usize,
        factor: usize,
    },
    ConcatChannels {
        inputs: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order and replays their adjoints.
///
/// A tape supports exactly one [`backward`](Tape::backward) call. Leaves are
/// copied in; parameter tensors are recognised by identity so their gradients
/// can be looked up afterwards with [`Gradients::for_tensor`].
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    tensor_leaves: HashMap<u64, usize>,
    consumed: bool,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            tensor_leaves: HashMap::new(),
            consumed: false,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Enables or disables the per-operation NaN/Inf check (on by default in
    /// debug builds).
    pub fn with_finite_checks(mut self, enabled: bool) -> Self {
        self.check_finite = enabled;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor as a leaf. A tensor that requires grad is registered
    /// once; later calls with the same tensor return the same handle.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        if tensor.requires_grad() {
            if let Some(&idx) = self.tensor_leaves.get(&tensor.id) {
                return Var(idx);
            }
        }
        let idx = self.nodes.len();
        self.nodes.push(Node {
            shape: tensor.shape().to_vec(),
            value: tensor.data().to_vec(),
            op: Op::Leaf,
            requires_grad: tensor.requires_grad(),
        });
        if tensor.requires_grad() {
            self.tensor_leaves.insert(tensor.id, idx);
        }
        Var(idx)
    }

    /// Registers a non-differentiable leaf.
    pub fn constant(&mut self, shape: &[usize], value: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, value)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape is consistent")
    }

    fn dims4(&self, v: Var, op: &'static str) -> Result<[usize; 4]> {
        match self.nodes[v.0].shape.as_slice() {
            &[b, c, h, w] => Ok([b, c, h, w]),
            other => Err(Error::shape(op, format!("expected 4-D input, got {other:?}"))),
        }
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.check_finite && value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = self.inputs_of(&op).iter().any(|&i| self.nodes[i].requires_grad);
        let idx = self.nodes.len();
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(idx))
    }

    fn inputs_of(&self, op: &Op) -> Vec<usize> {
        match op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, kernel, bias, ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            Op::Pow { input, .. }
            | Op::Tanh { input }
            | Op::Scale { input, .. }
            | Op::SumAll { input }
            | Op::NearestUp { input, .. }
            | Op::BilinearUp { input, .. } => vec![*input],
            Op::Add { a, b } => vec![*a, *b],
            Op::Mse { input, target } => vec![*input, *target],
            Op::ConcatChannels { inputs } => inputs.clone(),
        }
    }

    /// Cross-correlation with zero padding. Output extents use floor division,
    /// `(H + 2p - Kh) / stride + 1`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [batch, cin, h, w] = self.dims4(input, "conv2d")?;
        let [cout, kcin, kh, kw] = self.dims4(kernel, "conv2d")?;
        if kcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects {kcin} input channels, input has {cin}"),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        if let Some(b) = bias {
            if self.nodes[b.0].shape != [cout] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias shape {:?}, expected [{cout}]", self.nodes[b.0].shape),
                ));
            }
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::shape(
                "conv2d",
                format!("{kh}x{kw} kernel does not fit {h}x{w} input with padding {padding}"),
            ));
        }
        let geom = ConvGeometry {
            in_channels: cin,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let value = kernels::conv_forward(
            &geom,
            batch,
            &self.nodes[input.0].value,
            &self.nodes[kernel.0].value,
            bias.map(|b| self.nodes[b.0].value.as_slice()),
            cout,
        );
        self.push(
            "conv2d",
            vec![batch, cout, geom.out_h, geom.out_w],
            value,
            Op::Conv2d {
                input: input.0,
                kernel: kernel.0,
                bias: bias.map(|b| b.0),
                geom,
                batch,
                out_channels: cout,
            },
        )
    }

    pub fn elementwise(&mut self, input: Var, kind: Elementwise) -> Result<Var> {
        match kind {
            Elementwise::Pow(q) => self.pow(input, q),
            Elementwise::Tanh => self.tanh(input),
            Elementwise::Add(other) => self.add(input, other),
            Elementwise::Scale(f) => self.scale(input, f),
            Elementwise::SumAll => self.sum_all(input),
            Elementwise::MseAgainst(target) => self.mse(input, target),
        }
    }

    pub fn pow(&mut self, input: Var, q: u32) -> Result<Var> {
        if q < 1 {
            return Err(Error::InvalidArgument(format!("power order must be >= 1, got {q}")));
        }
        let x = &self.nodes[input.0];
        let value = x
            .value
            .iter()
            .map(|&v| (1..q).fold(v, |acc, _| acc * v))
            .collect();
        let shape = x.shape.clone();
        self.push("pow", shape, value, Op::Pow { input: input.0, q })
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        let x = &self.nodes[input.0];
        let value = x.value.iter().map(|v| v.tanh()).collect();
        let shape = x.shape.clone();
        self.push("tanh", shape, value, Op::Tanh { input: input.0 })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if na.shape != nb.shape {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", na.shape, nb.shape),
            ));
        }
        let value = na.value.iter().zip(&nb.value).map(|(x, y)| x + y).collect();
        let shape = na.shape.clone();
        self.push("add", shape, value, Op::Add { a: a.0, b: b.0 })
    }

    /// Sums any number of same-shaped values left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("add_all needs at least one term".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let x = &self.nodes[input.0];
        let value = x.value.iter().map(|v| v * factor).collect();
        let shape = x.shape.clone();
        self.push(
            "scale",
            shape,
            value,
            Op::Scale {
                input: input.0,
                factor,
            },
        )
    }

    pub fn sum_all(&mut self, input: Var) -> Result<Var> {
        let total = self.nodes[input.0].value.iter().sum();
        self.push("sum_all", vec![1], vec![total], Op::SumAll { input: input.0 })
    }

    pub fn mse(&mut self, input: Var, target: Var) -> Result<Var> {
        let (ni, nt) = (&self.nodes[input.0], &self.nodes[target.0]);
        if ni.shape != nt.shape {
            return Err(Error::shape(
                "mse",
                format!("{:?} vs {:?}", ni.shape, nt.shape),
            ));
        }
        if ni.value.is_empty() {
            return Err(Error::shape("mse", "empty operands"));
        }
        let sq: f64 = ni
            .value
            .iter()
            .zip(&nt.value)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let mean = sq / ni.value.len() as f64;
        self.push(
            "mse",
            vec![1],
            vec![mean],
            Op::Mse {
                input: input.0,
                target: target.0,
            },
        )
    }

    pub fn resize(&mut self, input: Var, mode: Resize) -> Result<Var> {
        match mode {
            Resize::NearestUp(f) => self.upsample_nearest(input, f),
            Resize::BilinearUp(f) => self.upsample_bilinear(input, f),
        }
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(Error::InvalidArgument("resize factor must be >= 1".into()));
        }
        let [b, c, h, w] = self.dims4(input, "upsample_nearest")?;
        let (oh, ow) = (h * factor, w * factor);
        let x = &self.nodes[input.0].value;
        let mut value = vec![0.0; b * c * oh * ow];
        for (plane_in, plane_out) in x.chunks_exact(h * w).zip(value.chunks_exact_mut(oh * ow)) {
            for oy in 0..oh {
                let src = &plane_in[(oy / factor) * w..(oy / factor + 1) * w];
                for (ox, v) in plane_out[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                    *v = src[ox / factor];
                }
            }
        }
        self.push(
            "upsample_nearest",
            vec![b, c, oh, ow],
            value,
            Op::NearestUp {
                input: input.0,
                factor,
            },
        )
    }

    /// Half-pixel-centred bilinear upsampling with edge clamping.
    pub fn upsample_bilinear(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(Error::InvalidArgument("resize factor must be >= 1".into()));
        }
        let [b, c, h, w] = self.dims4(input, "upsample_bilinear")?;
        let (oh, ow) = (h * factor, w * factor);
        let ty = kernels::bilinear_taps(h, factor);
        let tx = kernels::bilinear_taps(w, factor);
        let x = &self.nodes[input.0].value;
        let mut value = vec![0.0; b * c * oh * ow];
        for (src, dst) in x.chunks_exact(h * w).zip(value.chunks_exact_mut(oh * ow)) {
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                    let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                    dst[oy * ow + ox] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
        self.push(
            "upsample_bilinear",
            vec![b, c, oh, ow],
            value,
            Op::BilinearUp {
                input: input.0,
                factor,
            },
        )
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let [b, _, h, w] = self.dims4(first, "concat_channels")?;
        let mut channels = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let [vb, vc, vh, vw] = self.dims4(v, "concat_channels")?;
            if (vb, vh, vw) != (b, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{:?} vs {:?}", self.nodes[v.0].shape, self.nodes[first.0].shape),
                ));
            }
            channels.push(vc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut value = Vec::with_capacity(b * total * plane);
        for bi in 0..b {
            for (&v, &c) in inputs.iter().zip(&channels) {
                let src = &self.nodes[v.0].value;
                value.extend_from_slice(&src[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        self.push(
            "concat_channels",
            vec![b, total, h, w],
            value,
            Op::ConcatChannels {
                inputs: inputs.iter().map(|v| v.0).collect(),
            },
        )
    }

    /// Propagates adjoints from a single-element `loss` back to every leaf
    /// that requires grad. The tape cannot be reused afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
        }

        let mut leaf_grads = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[idx].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                leaf_grads.insert(idx, g);
            }
        }
        Ok(Gradients {
            by_node: leaf_grads,
            by_tensor: self.tensor_leaves.clone(),
        })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |i: usize| nodes[i].requires_grad;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                batch,
                out_channels,
            } => {
                let (x, k) = (&nodes[*input].value, &nodes[*kernel].value);
                if let Some(b) = bias.filter(|&b| wants(b)) {
                    let mut buf = take_or_zero(grads, b, nodes[b].value.len());
                    kernels::conv_backward(geom, *batch, x, k, *out_channels, g, None, None, Some(&mut buf));
                    grads[b] = Some(buf);
                }
                if wants(*kernel) {
                    let mut buf = take_or_zero(grads, *kernel, k.len());
                    kernels::conv_backward(geom, *batch, x, k, *out_channels, g, None, Some(&mut buf), None);
                    grads[*kernel] = Some(buf);
                }
                if wants(*input) {
                    let mut buf = take_or_zero(grads, *input, x.len());
                    kernels::conv_backward(geom, *batch, x, k, *out_channels, g, Some(&mut buf), None, None);
                    grads[*input] = Some(buf);
                }
            }
            Op::Pow { input, q } => {
                if wants(*input) {
                    let x = &nodes[*input].value;
                    let q = *q;
                    let acc = acc_mut(grads, *input, x.len());
                    for ((a, &gv), &xv) in acc.iter_mut().zip(g).zip(x) {
                        let d = if q == 1 {
                            1.0
                        } else {
                            q as f64 * (1..q - 1).fold(xv, |p, _| p * xv)
                        };
                        *a += gv * d;
                    }
                }
            }
            Op::Tanh { input } => {
                if wants(*input) {
                    let y = &nodes[idx].value;
                    let acc = acc_mut(grads, *input, y.len());
                    for ((a, &gv), &yv) in acc.iter_mut().zip(g).zip(y) {
                        *a += gv * (1.0 - yv * yv);
                    }
                }
            }
            Op::Add { a, b } => {
                for &i in [a, b] {
                    if wants(i) {
                        let acc = acc_mut(grads, i, g.len());
                        for (x, gv) in acc.iter_mut().zip(g) {
                            *x += gv;
                        }
                    }
                }
            }
            Op::Scale { input, factor } => {
                if wants(*input) {
                    let acc = acc_mut(grads, *input, g.len());
                    for (x, gv) in acc.iter_mut().zip(g) {
                        *x += gv * factor;
                    }
                }
            }
            Op::SumAll { input } => {
                if wants(*input) {
                    let n = nodes[*input].value.len();
                    for x in acc_mut(grads, *input, n).iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::Mse { input, target } => {
                let (xi, xt) = (&nodes[*input].value, &nodes[*target].value);
                let scale = 2.0 * g[0] / xi.len() as f64;
                if wants(*input) {
                    let acc = acc_mut(grads, *input, xi.len());
                    for ((a, p), t) in acc.iter_mut().zip(xi).zip(xt) {
                        *a += scale * (p - t);
                    }
                }
                if wants(*target) {
                    let acc = acc_mut(grads, *target, xt.len());
                    for ((a, p), t) in acc.iter_mut().zip(xi).zip(xt) {
                        *a -= scale * (p - t);
                    }
                }
            }
            Op::NearestUp { input, factor } => {
                if wants(*input) {
                    let &[_, _, h, w] = nodes[*input].shape.as_slice() else { unreachable!() };
                    let (oh, ow) = (h * factor, w * factor);
                    let n = nodes[*input].value.len();
                    let acc = acc_mut(grads, *input, n);
                    for (dst, src) in acc.chunks_exact_mut(h * w).zip(g.chunks_exact(oh * ow)) {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                dst[(oy / factor) * w + ox / factor] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
            Op::BilinearUp { input, factor } => {
                if wants(*input) {
                    let &[_, _, h, w] = nodes[*input].shape.as_slice() else { unreachable!() };
                    let (oh, ow) = (h * factor, w * factor);
                    let ty = kernels::bilinear_taps(h, *factor);
                    let tx = kernels::bilinear_taps(w, *factor);
                    let n = nodes[*input].value.len();
                    let acc = acc_mut(grads, *input, n);
                    for (dst, src) in acc.chunks_exact_mut(h * w).zip(g.chunks_exact(oh * ow)) {
                        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                                let gv = src[oy * ow + ox];
                                dst[y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                                dst[y0 * w + x1] += gv * (1.0 - wy) * wx;
                                dst[y1 * w + x0] += gv * wy * (1.0 - wx);
                                dst[y1 * w + x1] += gv * wy * wx;
                            }
                        }
                    }
                }
            }
            Op::ConcatChannels { inputs } => {
                let &[b, total, h, w] = nodes[idx].shape.as_slice() else { unreachable!() };
                let plane = h * w;
                let mut offset = 0;
                for &i in inputs {
                    let c = nodes[i].shape[1];
                    if wants(i) {
                        let acc = acc_mut(grads, i, b * c * plane);
                        for bi in 0..b {
                            let src = &g[(bi * total + offset) * plane..(bi * total + offset + c) * plane];
                            for (a, s) in acc[bi * c * plane..(bi + 1) * c * plane].iter_mut().zip(src) {
                                *a += s;
                            }
                        }
                    }
                    offset += c;
                }
            }
        }
    }
}

fn acc_mut(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

fn take_or_zero(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> Vec<f64> {
    grads[idx].take().unwrap_or_else(|| vec![0.0; len])
}

/// Leaf adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    by_node: HashMap<usize, Vec<f64>>,
    by_tensor: HashMap<u64, usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.by_node.get(&v.0).map(Vec::as_slice)
    }

    /// Gradient of a tensor that was registered with [`Tape::leaf`].
    pub fn for_tensor(&self, t: &Tensor) -> Option<&[f64]> {
        self.by_tensor.get(&t.id).and_then(|idx| self.get(Var(*idx)))
    }

    /// Stores each tensor's gradient in its `grad` slot. Tensors that never
    /// reached the tape are left untouched.
    pub fn write_into<'a>(&self, params: impl IntoIterator<Item = &'a mut Tensor>) -> Result<()> {
        for p in params {
            if let Some(g) = self.for_tensor(p) {
                p.set_grad(g.to_vec())?;
            }
        }
        Ok(())
    }
}
