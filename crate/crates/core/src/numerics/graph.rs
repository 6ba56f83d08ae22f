use crate::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Conv2d { stride: usize, pad: usize },
    Dense,
    Relu,
    Sigmoid,
    UpsampleNearest { factor: usize },
    MeanPool2,
    Add,
    AddChannel,
    Mul,
    MulChannel,
    ConcatChannels,
    Sum,
    L1Loss,
    MseLoss,
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    needs_grad: bool,
}

/// Reverse-mode autodiff over an acyclic graph built in topological order.
///
/// The operation set is fixed: conv2d, dense, relu, sigmoid, nearest
/// upsampling, 2x2 mean pooling, elementwise add/mul (plus their per-channel
/// broadcast forms used for biases and feature scaling), channel
/// concatenation, sum, and the l1/mse losses. Every forward result is
/// checked finite; NaN or Inf is reported as an error rather than silently
/// propagated.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    /// Leaf that does not require a gradient (images, targets, embeddings
    /// computed outside the graph).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value, false)
    }

    /// Trainable leaf; its gradient is available after `backward`.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target w.r.t. node `id`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, inputs, value, needs_grad });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> Result<NodeId> {
        value.check_finite(op_name(op))?;
        let needs_grad = inputs.iter().any(|&i| self.nodes[i.0].needs_grad);
        Ok(self.push(op, inputs, value, needs_grad))
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// 2-D convolution: `x [c,h,w]`, square `weight [o,c,k,k]`, `bias [o]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[2] != ws[3] || bs != [ws[0]] || ws[1] != xs[0] {
            return Err(Error::shape("conv2d", format!("x {:?}, weight {:?}, bias {:?}", xs, ws, bs)));
        }
        if stride == 0 {
            return Err(Error::InvalidArg("conv2d stride must be >= 1".into()));
        }
        let (c_in, h, w) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape("conv2d", format!("kernel {k} exceeds padded input {h}x{w}+{pad}")));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[c_out, oh, ow]);
        conv2d_forward(
            self.nodes[x.0].value.data(),
            (c_in, h, w),
            self.nodes[weight.0].value.data(),
            (c_out, k),
            self.nodes[bias.0].value.data(),
            stride,
            pad,
            out.data_mut(),
            (oh, ow),
        );
        self.push_op(Op::Conv2d { stride, pad }, vec![x, weight, bias], out)
    }

    /// Fully connected layer: `x [n]`, `weight [m,n]`, `bias [m]`.
    pub fn dense(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] || bs != [ws[0]] {
            return Err(Error::shape("dense", format!("x {:?}, weight {:?}, bias {:?}", xs, ws, bs)));
        }
        let (m, n) = (ws[0], ws[1]);
        let xv = self.nodes[x.0].value.data();
        let wv = self.nodes[weight.0].value.data();
        let bv = self.nodes[bias.0].value.data();
        let mut out = Tensor::zeros(&[m]);
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o = bv[i] + dot(&wv[i * n..(i + 1) * n], xv);
        }
        self.push_op(Op::Dense, vec![x, weight, bias], out)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(|v| v.max(0.0));
        self.push_op(Op::Relu, vec![x], out)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push_op(Op::Sigmoid, vec![x], out)
    }

    /// Nearest-neighbor upsampling of `[c,h,w]` by an integer factor.
    pub fn upsample_nearest(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape("upsample_nearest", format!("expected [c,h,w], got {:?}", xs)));
        }
        if factor == 0 {
            return Err(Error::InvalidArg("upsample factor must be >= 1".into()));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h * factor, w * factor);
        let mut out = Tensor::zeros(&[c, oh, ow]);
        {
            let xv = self.nodes[x.0].value.data();
            let ov = out.data_mut();
            for ci in 0..c {
                for oy in 0..oh {
                    let src = &xv[(ci * h + oy / factor) * w..][..w];
                    let dst = &mut ov[(ci * oh + oy) * ow..][..ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        *d = src[ox / factor];
                    }
                }
            }
        }
        self.push_op(Op::UpsampleNearest { factor }, vec![x], out)
    }

    /// 2x2 average pooling; spatial dims must be even.
    pub fn mean_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[1] % 2 != 0 || xs[2] % 2 != 0 {
            return Err(Error::shape("mean_pool2", format!("expected even [c,h,w], got {:?}", xs)));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[c, oh, ow]);
        {
            let xv = self.nodes[x.0].value.data();
            let ov = out.data_mut();
            for ci in 0..c {
                for oy in 0..oh {
                    let r0 = &xv[(ci * h + 2 * oy) * w..][..w];
                    let r1 = &xv[(ci * h + 2 * oy + 1) * w..][..w];
                    let dst = &mut ov[(ci * oh + oy) * ow..][..ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        *d = 0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
                    }
                }
            }
        }
        self.push_op(Op::MeanPool2, vec![x], out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(Op::Add, a, b, |x, y| x + y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(Op::Mul, a, b, |x, y| x * y)
    }

    fn binary_elementwise(
        &mut self,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op_name(op),
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let data = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(self.shape(a).to_vec().as_slice(), data)?;
        self.push_op(op, vec![a, b], out)
    }

    /// `x [c,h,w] + b [c]`, the per-channel bias broadcast.
    pub fn add_channel(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        self.channel_broadcast(Op::AddChannel, x, b, |v, s| v + s)
    }

    /// `x [c,h,w] * s [c]`, per-channel scaling of a feature map.
    pub fn mul_channel(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.channel_broadcast(Op::MulChannel, x, s, |v, s| v * s)
    }

    fn channel_broadcast(
        &mut self,
        op: Op,
        x: NodeId,
        per_c: NodeId,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let cs = self.shape(per_c).to_vec();
        if xs.len() != 3 || cs != [xs[0]] {
            return Err(Error::shape(op_name(op), format!("x {:?}, channel vec {:?}", xs, cs)));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let xv = self.nodes[x.0].value.data();
        let cv = self.nodes[per_c.0].value.data();
        let mut out = Tensor::zeros(&xs);
        {
            let ov = out.data_mut();
            for ci in 0..c {
                let s = cv[ci];
                for (o, &v) in ov[ci * h * w..(ci + 1) * h * w].iter_mut().zip(&xv[ci * h * w..(ci + 1) * h * w]) {
                    *o = f(v, s);
                }
            }
        }
        self.push_op(op, vec![x, per_c], out)
    }

    /// Concatenate two `[c,h,w]` maps along the channel axis.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(Error::shape("concat_channels", format!("{:?} vs {:?}", sa, sb)));
        }
        let mut data = Vec::with_capacity((sa[0] + sb[0]) * sa[1] * sa[2]);
        data.extend_from_slice(self.nodes[a.0].value.data());
        data.extend_from_slice(self.nodes[b.0].value.data());
        let out = Tensor::from_vec(&[sa[0] + sb[0], sa[1], sa[2]], data)?;
        self.push_op(Op::ConcatChannels, vec![a, b], out)
    }

    /// Sum of all elements, returned as a `[1]` tensor.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total = sum_slice(self.nodes[x.0].value.data());
        self.push_op(Op::Sum, vec![x], Tensor::scalar(total))
    }

    /// Mean absolute error between two same-shape tensors.
    pub fn l1_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("l1_loss", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let n = av.len() as f32;
        let mut acc = 0.0f64;
        for (x, y) in av.iter().zip(bv) {
            acc += (x - y).abs() as f64;
        }
        self.push_op(Op::L1Loss, vec![a, b], Tensor::scalar((acc as f32) / n))
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mse_loss", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let n = av.len() as f32;
        let mut acc = 0.0f64;
        for (x, y) in av.iter().zip(bv) {
            let d = (x - y) as f64;
            acc += d * d;
        }
        self.push_op(Op::MseLoss, vec![a, b], Tensor::scalar((acc as f32) / n))
    }

    /// Reverse-mode pass from a scalar loss node. Gradients accumulate into
    /// every node on a path to a trainable leaf; other subtrees are skipped.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape("backward", "loss must be scalar"));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::scalar(1.0));
        for nid in (0..self.nodes.len()).rev() {
            if self.grads[nid].is_none() || matches!(self.nodes[nid].op, Op::Leaf) {
                continue;
            }
            let g = self.grads[nid].take().unwrap();
            self.backprop_node(nid, &g);
            self.grads[nid] = Some(g);
        }
        Ok(())
    }

    fn accum(&mut self, id: NodeId, update: impl FnOnce(&mut Tensor, &[Node])) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let mut g = self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.nodes[id.0].value.shape()));
        update(&mut g, &self.nodes);
        self.grads[id.0] = Some(g);
    }

    fn backprop_node(&mut self, nid: usize, g: &Tensor) {
        let op = self.nodes[nid].op;
        let inputs = self.nodes[nid].inputs.clone();
        match op {
            Op::Leaf => {}
            Op::Conv2d { stride, pad } => {
                let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
                let xs = self.nodes[x.0].value.shape().to_vec();
                let ws = self.nodes[w.0].value.shape().to_vec();
                let os = self.nodes[nid].value.shape().to_vec();
                let dims = ConvDims {
                    c_in: xs[0],
                    h: xs[1],
                    w: xs[2],
                    c_out: ws[0],
                    k: ws[2],
                    stride,
                    pad,
                    oh: os[1],
                    ow: os[2],
                };
                self.accum(b, |gb, _| {
                    for o in 0..dims.c_out {
                        gb.data_mut()[o] += sum_slice(&g.data()[o * dims.oh * dims.ow..][..dims.oh * dims.ow]);
                    }
                });
                self.accum(w, |gw, nodes| {
                    conv2d_grad_weight(nodes[x.0].value.data(), g.data(), gw.data_mut(), &dims);
                });
                self.accum(x, |gx, nodes| {
                    conv2d_grad_input(nodes[w.0].value.data(), g.data(), gx.data_mut(), &dims);
                });
            }
            Op::Dense => {
                let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
                let n = self.nodes[x.0].value.numel();
                self.accum(b, |gb, _| gb.axpy(1.0, g));
                self.accum(w, |gw, nodes| {
                    let xv = nodes[x.0].value.data();
                    for (m, &gm) in g.data().iter().enumerate() {
                        for (dst, &xi) in gw.data_mut()[m * n..(m + 1) * n].iter_mut().zip(xv) {
                            *dst += gm * xi;
                        }
                    }
                });
                self.accum(x, |gx, nodes| {
                    let wv = nodes[w.0].value.data();
                    for (m, &gm) in g.data().iter().enumerate() {
                        for (dst, &wi) in gx.data_mut().iter_mut().zip(&wv[m * n..(m + 1) * n]) {
                            *dst += gm * wi;
                        }
                    }
                });
            }
            Op::Relu => {
                let x = inputs[0];
                self.accum(x, |gx, nodes| {
                    for ((dst, &gv), &xv) in
                        gx.data_mut().iter_mut().zip(g.data()).zip(nodes[x.0].value.data())
                    {
                        if xv > 0.0 {
                            *dst += gv;
                        }
                    }
                });
            }
            Op::Sigmoid => {
                let x = inputs[0];
                let y = nid;
                self.accum(x, |gx, nodes| {
                    for ((dst, &gv), &yv) in
                        gx.data_mut().iter_mut().zip(g.data()).zip(nodes[y].value.data())
                    {
                        *dst += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::UpsampleNearest { factor } => {
                let x = inputs[0];
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (oh, ow) = (h * factor, w * factor);
                self.accum(x, |gx, _| {
                    let gxv = gx.data_mut();
                    for ci in 0..c {
                        for oy in 0..oh {
                            let grow = &g.data()[(ci * oh + oy) * ow..][..ow];
                            let xrow = &mut gxv[(ci * h + oy / factor) * w..][..w];
                            for (ox, &gv) in grow.iter().enumerate() {
                                xrow[ox / factor] += gv;
                            }
                        }
                    }
                });
            }
            Op::MeanPool2 => {
                let x = inputs[0];
                let xs = self.nodes[x.0].value.shape().to_vec();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (oh, ow) = (h / 2, w / 2);
                self.accum(x, |gx, _| {
                    let gxv = gx.data_mut();
                    for ci in 0..c {
                        for oy in 0..oh {
                            let grow = &g.data()[(ci * oh + oy) * ow..][..ow];
                            for (ox, &gv) in grow.iter().enumerate() {
                                let q = 0.25 * gv;
                                gxv[(ci * h + 2 * oy) * w + 2 * ox] += q;
                                gxv[(ci * h + 2 * oy) * w + 2 * ox + 1] += q;
                                gxv[(ci * h + 2 * oy + 1) * w + 2 * ox] += q;
                                gxv[(ci * h + 2 * oy + 1) * w + 2 * ox + 1] += q;
                            }
                        }
                    }
                });
            }
            Op::Add => {
                self.accum(inputs[0], |gx, _| gx.axpy(1.0, g));
                self.accum(inputs[1], |gx, _| gx.axpy(1.0, g));
            }
            Op::AddChannel => {
                let (x, b) = (inputs[0], inputs[1]);
                let xs = self.nodes[x.0].value.shape().to_vec();
                let plane = xs[1] * xs[2];
                self.accum(x, |gx, _| gx.axpy(1.0, g));
                self.accum(b, |gb, _| {
                    for ci in 0..xs[0] {
                        gb.data_mut()[ci] += sum_slice(&g.data()[ci * plane..][..plane]);
                    }
                });
            }
            Op::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                self.accum(a, |ga, nodes| {
                    for ((dst, &gv), &bv) in
                        ga.data_mut().iter_mut().zip(g.data()).zip(nodes[b.0].value.data())
                    {
                        *dst += gv * bv;
                    }
                });
                self.accum(b, |gb, nodes| {
                    for ((dst, &gv), &av) in
                        gb.data_mut().iter_mut().zip(g.data()).zip(nodes[a.0].value.data())
                    {
                        *dst += gv * av;
                    }
                });
            }
            Op::MulChannel => {
                let (x, s) = (inputs[0], inputs[1]);
                let xs = self.nodes[x.0].value.shape().to_vec();
                let plane = xs[1] * xs[2];
                self.accum(x, |gx, nodes| {
                    let sv = nodes[s.0].value.data();
                    for ci in 0..xs[0] {
                        let sc = sv[ci];
                        for (dst, &gv) in gx.data_mut()[ci * plane..][..plane]
                            .iter_mut()
                            .zip(&g.data()[ci * plane..][..plane])
                        {
                            *dst += gv * sc;
                        }
                    }
                });
                self.accum(s, |gs, nodes| {
                    let xv = nodes[x.0].value.data();
                    for ci in 0..xs[0] {
                        let mut acc = 0.0f32;
                        for (&gv, &xvv) in g.data()[ci * plane..][..plane].iter().zip(&xv[ci * plane..][..plane]) {
                            acc += gv * xvv;
                        }
                        gs.data_mut()[ci] += acc;
                    }
                });
            }
            Op::ConcatChannels => {
                let (a, b) = (inputs[0], inputs[1]);
                let na = self.nodes[a.0].value.numel();
                self.accum(a, |ga, _| {
                    for (dst, &gv) in ga.data_mut().iter_mut().zip(&g.data()[..na]) {
                        *dst += gv;
                    }
                });
                self.accum(b, |gb, _| {
                    for (dst, &gv) in gb.data_mut().iter_mut().zip(&g.data()[na..]) {
                        *dst += gv;
                    }
                });
            }
            Op::Sum => {
                let gv = g.item();
                self.accum(inputs[0], |gx, _| {
                    for dst in gx.data_mut() {
                        *dst += gv;
                    }
                });
            }
            Op::L1Loss => {
                let (a, b) = (inputs[0], inputs[1]);
                let n = self.nodes[a.0].value.numel() as f32;
                let gv = g.item() / n;
                self.accum(a, |ga, nodes| {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    for ((dst, &x), &y) in ga.data_mut().iter_mut().zip(av).zip(bv) {
                        *dst += gv * sign(x - y);
                    }
                });
                self.accum(b, |gb, nodes| {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    for ((dst, &x), &y) in gb.data_mut().iter_mut().zip(av).zip(bv) {
                        *dst -= gv * sign(x - y);
                    }
                });
            }
            Op::MseLoss => {
                let (a, b) = (inputs[0], inputs[1]);
                let n = self.nodes[a.0].value.numel() as f32;
                let gv = 2.0 * g.item() / n;
                self.accum(a, |ga, nodes| {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    for ((dst, &x), &y) in ga.data_mut().iter_mut().zip(av).zip(bv) {
                        *dst += gv * (x - y);
                    }
                });
                self.accum(b, |gb, nodes| {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    for ((dst, &x), &y) in gb.data_mut().iter_mut().zip(av).zip(bv) {
                        *dst -= gv * (x - y);
                    }
                });
            }
        }
    }
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn op_name(op: Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::Dense => "dense",
        Op::Relu => "relu",
        Op::Sigmoid => "sigmoid",
        Op::UpsampleNearest { .. } => "upsample_nearest",
        Op::MeanPool2 => "mean_pool2",
        Op::Add => "add",
        Op::AddChannel => "add_channel",
        Op::Mul => "mul",
        Op::MulChannel => "mul_channel",
        Op::ConcatChannels => "concat_channels",
        Op::Sum => "sum",
        Op::L1Loss => "l1_loss",
        Op::MseLoss => "mse_loss",
    }
}

/// Fixed-order summation with eight accumulator lanes; deterministic and
/// fast enough for bias/weight gradients.
fn sum_slice(v: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let chunks = v.chunks_exact(8);
    let rem = chunks.remainder();
    for ch in chunks {
        for i in 0..8 {
            lanes[i] += ch[i];
        }
    }
    let mut total = lanes.iter().sum::<f32>();
    for &r in rem {
        total += r;
    }
    total
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut total = lanes.iter().sum::<f32>();
    for (x, y) in ra.iter().zip(rb) {
        total += x * y;
    }
    total
}

struct ConvDims {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

/// Output-coordinate range `[lo, hi)` whose input coordinate
/// `o*stride + k_off - pad` stays inside `[0, limit)`.
fn out_range(limit: usize, k_off: usize, pad: usize, stride: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k_off { (pad - k_off).div_ceil(stride) } else { 0 };
    let max_in = limit as i64 - 1 - k_off as i64 + pad as i64;
    if max_in < 0 {
        return (0, 0);
    }
    let hi = (max_in as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    x: &[f32],
    (c_in, h, w): (usize, usize, usize),
    wt: &[f32],
    (c_out, k): (usize, usize),
    bias: &[f32],
    stride: usize,
    pad: usize,
    out: &mut [f32],
    (oh, ow): (usize, usize),
) {
    for o in 0..c_out {
        let ob = &mut out[o * oh * ow..(o + 1) * oh * ow];
        ob.fill(bias[o]);
        for c in 0..c_in {
            let xc = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (oy0, oy1) = out_range(h, ky, pad, stride, oh);
                for kx in 0..k {
                    let wv = wt[((o * c_in + c) * k + ky) * k + kx];
                    let (ox0, ox1) = out_range(w, kx, pad, stride, ow);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - pad;
                        let xrow = &xc[iy * w..iy * w + w];
                        let orow = &mut ob[oy * ow..oy * ow + ow];
                        if stride == 1 {
                            let ix0 = ox0 + kx - pad;
                            for (dst, &src) in
                                orow[ox0..ox1].iter_mut().zip(&xrow[ix0..ix0 + (ox1 - ox0)])
                            {
                                *dst += wv * src;
                            }
                        } else {
                            for (ox, dst) in orow[ox0..ox1].iter_mut().enumerate() {
                                *dst += wv * xrow[(ox0 + ox) * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_grad_weight(x: &[f32], g: &[f32], gw: &mut [f32], d: &ConvDims) {
    for o in 0..d.c_out {
        let gb = &g[o * d.oh * d.ow..(o + 1) * d.oh * d.ow];
        for c in 0..d.c_in {
            let xc = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
            for ky in 0..d.k {
                let (oy0, oy1) = out_range(d.h, ky, d.pad, d.stride, d.oh);
                for kx in 0..d.k {
                    let (ox0, ox1) = out_range(d.w, kx, d.pad, d.stride, d.ow);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let mut acc = 0.0f32;
                    for oy in oy0..oy1 {
                        let iy = oy * d.stride + ky - d.pad;
                        let grow = &gb[oy * d.ow + ox0..oy * d.ow + ox1];
                        if d.stride == 1 {
                            let ix0 = ox0 + kx - d.pad;
                            acc += dot(grow, &xc[iy * d.w + ix0..iy * d.w + ix0 + (ox1 - ox0)]);
                        } else {
                            for (i, &gv) in grow.iter().enumerate() {
                                acc += gv * xc[iy * d.w + (ox0 + i) * d.stride + kx - d.pad];
                            }
                        }
                    }
                    gw[((o * d.c_in + c) * d.k + ky) * d.k + kx] += acc;
                }
            }
        }
    }
}

fn conv2d_grad_input(wt: &[f32], g: &[f32], gx: &mut [f32], d: &ConvDims) {
    for o in 0..d.c_out {
        let gb = &g[o * d.oh * d.ow..(o + 1) * d.oh * d.ow];
        for c in 0..d.c_in {
            let xc = &mut gx[c * d.h * d.w..(c + 1) * d.h * d.w];
            for ky in 0..d.k {
                let (oy0, oy1) = out_range(d.h, ky, d.pad, d.stride, d.oh);
                for kx in 0..d.k {
                    let wv = wt[((o * d.c_in + c) * d.k + ky) * d.k + kx];
                    let (ox0, ox1) = out_range(d.w, kx, d.pad, d.stride, d.ow);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * d.stride + ky - d.pad;
                        let grow = &gb[oy * d.ow + ox0..oy * d.ow + ox1];
                        if d.stride == 1 {
                            let ix0 = ox0 + kx - d.pad;
                            for (dst, &gv) in
                                xc[iy * d.w + ix0..iy * d.w + ix0 + (ox1 - ox0)].iter_mut().zip(grow)
                            {
                                *dst += wv * gv;
                            }
                        } else {
                            for (i, &gv) in grow.iter().enumerate() {
                                xc[iy * d.w + (ox0 + i) * d.stride + kx - d.pad] += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}
