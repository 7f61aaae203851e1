//! A minimal reverse-mode autodiff tape over [`Tensor`]s.
//!
//! Every forward op appends a node holding its output and whatever it needs
//! for the backward pass. [`Graph::backward`] walks the tape in reverse,
//! starting from caller-supplied output gradients.

use std::collections::BTreeMap;

use super::tensor::{col2im, gemm, im2col, ConvGeom, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

const IN_EPS: f32 = 1e-5;

enum Op {
    Input,
    Param,
    Conv {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
        cols: Vec<f32>,
    },
    InstanceNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
    },
    LeakyRelu {
        x: NodeId,
        slope: f32,
    },
    Tanh {
        x: NodeId,
    },
    AvgPool2 {
        x: NodeId,
    },
    Upsample2 {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Reshape {
        x: NodeId,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Softmax2 {
        x: NodeId,
    },
    SliceChannels {
        x: NodeId,
        start: usize,
    },
    MulBroadcast {
        x: NodeId,
        a: NodeId,
    },
    Affine {
        x: NodeId,
        scale: f32,
    },
    Mean {
        x: NodeId,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Forward tape. Build one per forward pass; it is consumed by backprop.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite activation produced on the tape");
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    /// A constant input; no gradient flows into it unless `track` is set.
    pub fn input(&mut self, t: Tensor, track: bool) -> NodeId {
        self.push(t, Op::Input, track)
    }

    /// A named trainable leaf. Its gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, name: &str, t: &Tensor) -> NodeId {
        let id = self.push(t.clone(), Op::Param, true);
        self.params.push((name.to_string(), id));
        id
    }

    /// Convolution; `w` has shape (Cout, Cin·k·k, 1), `b` (Cout, 1, 1).
    pub fn conv(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, geom: ConvGeom) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let cout = wv.c;
        let kk = xv.c * geom.k * geom.k;
        assert_eq!(wv.h, kk, "conv weight fan-in does not match input channels");
        let (cols, ho, wo) = im2col(xv, geom);
        let n = ho * wo;
        let mut out = Tensor::zeros(cout, ho, wo);
        if let Some(b) = b {
            let bv = &self.nodes[b.0].value;
            for o in 0..cout {
                out.data[o * n..(o + 1) * n].fill(bv.data[o]);
            }
        }
        gemm(cout, kk, n, &wv.data, false, &cols, false, &mut out.data, 1.0);
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        self.push(out, Op::Conv { x, w, b, geom, cols }, ng)
    }

    /// Per-channel instance normalization with learned scale and shift.
    pub fn instance_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gamma.0].value.data;
        let bt = &self.nodes[beta.0].value.data;
        let p = xv.plane();
        let mut xhat = vec![0.0f32; xv.len()];
        let mut inv_std = vec![0.0f32; xv.c];
        let mut out = Tensor::zeros(xv.c, xv.h, xv.w);
        for c in 0..xv.c {
            let src = xv.channel(c);
            let mean = src.iter().map(|&v| v as f64).sum::<f64>() / p as f64;
            let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / p as f64;
            let is = 1.0 / (var + IN_EPS as f64).sqrt();
            inv_std[c] = is as f32;
            for i in 0..p {
                let xh = ((src[i] as f64 - mean) * is) as f32;
                xhat[c * p + i] = xh;
                out.data[c * p + i] = g[c] * xh + bt[c];
            }
        }
        let ng = self.ng(&[x, gamma, beta]);
        self.push(
            out,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f32) -> NodeId {
        let mut out = self.nodes[x.0].value.clone();
        out.data.iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v *= slope
            }
        });
        let ng = self.ng(&[x]);
        self.push(out, Op::LeakyRelu { x, slope }, ng)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let mut out = self.nodes[x.0].value.clone();
        out.data.iter_mut().for_each(|v| *v = v.tanh());
        let ng = self.ng(&[x]);
        self.push(out, Op::Tanh { x }, ng)
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let (h, w) = (xv.h / 2, xv.w / 2);
        let mut out = Tensor::zeros(xv.c, h, w);
        for c in 0..xv.c {
            for y in 0..h {
                for xx in 0..w {
                    let s = xv.at(c, 2 * y, 2 * xx)
                        + xv.at(c, 2 * y, 2 * xx + 1)
                        + xv.at(c, 2 * y + 1, 2 * xx)
                        + xv.at(c, 2 * y + 1, 2 * xx + 1);
                    *out.at_mut(c, y, xx) = 0.25 * s;
                }
            }
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::AvgPool2 { x }, ng)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let (h, w) = (xv.h * 2, xv.w * 2);
        let mut out = Tensor::zeros(xv.c, h, w);
        for c in 0..xv.c {
            for y in 0..h {
                let src = &xv.data[(c * xv.h + y / 2) * xv.w..(c * xv.h + y / 2 + 1) * xv.w];
                let dst = &mut out.data[(c * h + y) * w..(c * h + y + 1) * w];
                for (xx, d) in dst.iter_mut().enumerate() {
                    *d = src[xx / 2];
                }
            }
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::Upsample2 { x }, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.nodes[a.0].value.clone();
        out.add_assign(&self.nodes[b.0].value);
        let ng = self.ng(&[a, b]);
        self.push(out, Op::Add { a, b }, ng)
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let p = xv.plane() as f32;
        let data = (0..xv.c).map(|c| xv.channel(c).iter().sum::<f32>() / p).collect();
        let ng = self.ng(&[x]);
        self.push(Tensor::vector(data), Op::GlobalAvgPool { x }, ng)
    }

    /// Dense layer; `w` has shape (out, in, 1), `x` is a vector of length `in`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(wv.h, xv.len(), "linear fan-in mismatch");
        let mut out = bv.data.clone();
        gemm(wv.c, wv.h, 1, &wv.data, false, &xv.data, false, &mut out, 1.0);
        let ng = self.ng(&[x, w, b]);
        self.push(Tensor::vector(out), Op::Linear { x, w, b }, ng)
    }

    pub fn reshape(&mut self, x: NodeId, c: usize, h: usize, w: usize) -> NodeId {
        let out = self.nodes[x.0].value.clone().reshaped(c, h, w);
        let ng = self.ng(&[x]);
        self.push(out, Op::Reshape { x }, ng)
    }

    /// Channel-wise concatenation.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!((av.h, av.w), (bv.h, bv.w), "concat spatial mismatch");
        let mut data = Vec::with_capacity(av.len() + bv.len());
        data.extend_from_slice(&av.data);
        data.extend_from_slice(&bv.data);
        let out = Tensor::from_vec(av.c + bv.c, av.h, av.w, data);
        let ng = self.ng(&[a, b]);
        self.push(out, Op::Concat { a, b }, ng)
    }

    /// Per-pixel softmax across exactly two channels.
    pub fn softmax2(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.c, 2, "softmax2 expects two channels");
        let p = xv.plane();
        let mut out = Tensor::zeros(2, xv.h, xv.w);
        for i in 0..p {
            // the second weight is computed as 1 - first so the pair sums to one exactly
            let d = xv.data[p + i] - xv.data[i];
            let s0 = 1.0 / (1.0 + d.exp());
            out.data[i] = s0;
            out.data[p + i] = 1.0 - s0;
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::Softmax2 { x }, ng)
    }

    pub fn slice_channels(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let p = xv.plane();
        let out = Tensor::from_vec(len, xv.h, xv.w, xv.data[start * p..(start + len) * p].to_vec());
        let ng = self.ng(&[x]);
        self.push(out, Op::SliceChannels { x, start }, ng)
    }

    /// `x * a` where `a` is a single-channel map broadcast over x's channels.
    pub fn mul_broadcast(&mut self, x: NodeId, a: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let av = &self.nodes[a.0].value;
        assert_eq!((av.c, av.h, av.w), (1, xv.h, xv.w), "broadcast map shape mismatch");
        let p = xv.plane();
        let mut out = xv.clone();
        for c in 0..xv.c {
            for (v, m) in out.data[c * p..(c + 1) * p].iter_mut().zip(&av.data) {
                *v *= m;
            }
        }
        let ng = self.ng(&[x, a]);
        self.push(out, Op::MulBroadcast { x, a }, ng)
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&mut self, x: NodeId, scale: f32, shift: f32) -> NodeId {
        let mut out = self.nodes[x.0].value.clone();
        out.data.iter_mut().for_each(|v| *v = scale * *v + shift);
        let ng = self.ng(&[x]);
        self.push(out, Op::Affine { x, scale }, ng)
    }

    /// Mean over all elements, as a 1-vector.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let m = xv.data.iter().map(|&v| v as f64).sum::<f64>() / xv.len() as f64;
        let ng = self.ng(&[x]);
        self.push(Tensor::vector(vec![m as f32]), Op::Mean { x }, ng)
    }

    /// Backpropagates the given output gradients through the tape.
    ///
    /// Returns the gradient of every named parameter plus the gradients of
    /// any tracked inputs, keyed by node.
    pub fn backward(&self, seeds: &[(NodeId, Tensor)]) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            assert_eq!(
                g.shape(),
                self.nodes[id.0].value.shape(),
                "seed gradient shape mismatch"
            );
            accumulate(&mut grads[id.0], g.clone());
        }
        let start = seeds.iter().map(|(i, _)| i.0).max().unwrap_or(0);
        for i in (0..=start.min(self.nodes.len().saturating_sub(1))).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &gout, &mut grads);
            // leaves keep their gradient for reporting
            if matches!(node.op, Op::Input | Op::Param) {
                grads[i] = Some(gout);
            }
        }
        let mut params = BTreeMap::new();
        for (name, id) in &self.params {
            let g = grads[id.0].clone().unwrap_or_else(|| {
                let v = &self.nodes[id.0].value;
                Tensor::zeros(v.c, v.h, v.w)
            });
            match params.get_mut(name) {
                None => {
                    params.insert(name.clone(), g);
                }
                Some(acc) => Tensor::add_assign(acc, &g),
            }
        }
        let inputs = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Input) && n.needs_grad)
            .filter_map(|(i, _)| grads[i].take().map(|g| (NodeId(i), g)))
            .collect();
        Gradients { params, inputs }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn backprop_node(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Conv { x, w, b, geom, cols } => {
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let n = gout.plane();
                let cout = gout.c;
                let kk = wv.h;
                if self.needs(*w) {
                    let mut gw = Tensor::zeros(wv.c, wv.h, wv.w);
                    gemm(cout, n, kk, &gout.data, false, cols, true, &mut gw.data, 0.0);
                    accumulate(&mut grads[w.0], gw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let gb = (0..cout).map(|o| gout.data[o * n..(o + 1) * n].iter().sum()).collect();
                        accumulate(&mut grads[b.0], Tensor::vector(gb));
                    }
                }
                if self.needs(*x) {
                    let mut gcols = vec![0.0f32; kk * n];
                    gemm(kk, cout, n, &wv.data, true, &gout.data, false, &mut gcols, 0.0);
                    accumulate(&mut grads[x.0], col2im(&gcols, xv.c, xv.h, xv.w, *geom));
                }
            }
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let p = gout.plane();
                let c = gout.c;
                let g = &self.nodes[gamma.0].value.data;
                let mut gg = vec![0.0f32; c];
                let mut gb = vec![0.0f32; c];
                let mut gx = Tensor::zeros(gout.c, gout.h, gout.w);
                for ch in 0..c {
                    let go = &gout.data[ch * p..(ch + 1) * p];
                    let xh = &xhat[ch * p..(ch + 1) * p];
                    let sum_g: f64 = go.iter().map(|&v| v as f64).sum();
                    let sum_gx: f64 = go.iter().zip(xh).map(|(&a, &b)| a as f64 * b as f64).sum();
                    gg[ch] = sum_gx as f32;
                    gb[ch] = sum_g as f32;
                    let k = g[ch] as f64 * inv_std[ch] as f64 / p as f64;
                    for i in 0..p {
                        let v = k * (p as f64 * go[i] as f64 - sum_g - xh[i] as f64 * sum_gx);
                        gx.data[ch * p + i] = v as f32;
                    }
                }
                if self.needs(*gamma) {
                    accumulate(&mut grads[gamma.0], Tensor::vector(gg));
                }
                if self.needs(*beta) {
                    accumulate(&mut grads[beta.0], Tensor::vector(gb));
                }
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = &self.nodes[x.0].value;
                let mut g = gout.clone();
                for (gv, &v) in g.data.iter_mut().zip(&xv.data) {
                    if v < 0.0 {
                        *gv *= slope;
                    }
                }
                accumulate(&mut grads[x.0], g);
            }
            Op::Tanh { x } => {
                let mut g = gout.clone();
                for (gv, &y) in g.data.iter_mut().zip(&node.value.data) {
                    *gv *= 1.0 - y * y;
                }
                accumulate(&mut grads[x.0], g);
            }
            Op::AvgPool2 { x } => {
                let xv = &self.nodes[x.0].value;
                let mut g = Tensor::zeros(xv.c, xv.h, xv.w);
                for c in 0..xv.c {
                    for y in 0..xv.h {
                        for xx in 0..xv.w {
                            *g.at_mut(c, y, xx) = 0.25 * gout.at(c, y / 2, xx / 2);
                        }
                    }
                }
                accumulate(&mut grads[x.0], g);
            }
            Op::Upsample2 { x } => {
                let xv = &self.nodes[x.0].value;
                let mut g = Tensor::zeros(xv.c, xv.h, xv.w);
                for c in 0..gout.c {
                    for y in 0..gout.h {
                        for xx in 0..gout.w {
                            *g.at_mut(c, y / 2, xx / 2) += gout.at(c, y, xx);
                        }
                    }
                }
                accumulate(&mut grads[x.0], g);
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], gout.clone());
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], gout.clone());
                }
            }
            Op::GlobalAvgPool { x } => {
                let xv = &self.nodes[x.0].value;
                let p = xv.plane();
                let mut g = Tensor::zeros(xv.c, xv.h, xv.w);
                for c in 0..xv.c {
                    g.data[c * p..(c + 1) * p].fill(gout.data[c] / p as f32);
                }
                accumulate(&mut grads[x.0], g);
            }
            Op::Linear { x, w, b } => {
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                if self.needs(*w) {
                    let mut gw = Tensor::zeros(wv.c, wv.h, wv.w);
                    gemm(wv.c, 1, wv.h, &gout.data, false, &xv.data, false, &mut gw.data, 0.0);
                    accumulate(&mut grads[w.0], gw);
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], gout.clone());
                }
                if self.needs(*x) {
                    let mut gx = vec![0.0f32; wv.h];
                    gemm(wv.h, wv.c, 1, &wv.data, true, &gout.data, false, &mut gx, 0.0);
                    accumulate(&mut grads[x.0], Tensor::from_vec(xv.c, xv.h, xv.w, gx));
                }
            }
            Op::Reshape { x } => {
                let xv = &self.nodes[x.0].value;
                accumulate(&mut grads[x.0], gout.clone().reshaped(xv.c, xv.h, xv.w));
            }
            Op::Concat { a, b } => {
                let av = &self.nodes[a.0].value;
                let split = av.len();
                if self.needs(*a) {
                    accumulate(
                        &mut grads[a.0],
                        Tensor::from_vec(av.c, av.h, av.w, gout.data[..split].to_vec()),
                    );
                }
                if self.needs(*b) {
                    let bv = &self.nodes[b.0].value;
                    accumulate(
                        &mut grads[b.0],
                        Tensor::from_vec(bv.c, bv.h, bv.w, gout.data[split..].to_vec()),
                    );
                }
            }
            Op::Softmax2 { x } => {
                let p = gout.plane();
                let s = &node.value.data;
                let mut g = Tensor::zeros(2, gout.h, gout.w);
                for i in 0..p {
                    // d s0 / d z0 = s0 s1, d s0 / d z1 = -s0 s1
                    let k = s[i] * s[p + i] * (gout.data[i] - gout.data[p + i]);
                    g.data[i] = k;
                    g.data[p + i] = -k;
                }
                accumulate(&mut grads[x.0], g);
            }
            Op::SliceChannels { x, start } => {
                let xv = &self.nodes[x.0].value;
                let p = xv.plane();
                let mut g = Tensor::zeros(xv.c, xv.h, xv.w);
                g.data[start * p..start * p + gout.len()].copy_from_slice(&gout.data);
                accumulate(&mut grads[x.0], g);
            }
            Op::MulBroadcast { x, a } => {
                let xv = &self.nodes[x.0].value;
                let av = &self.nodes[a.0].value;
                let p = xv.plane();
                if self.needs(*x) {
                    let mut g = gout.clone();
                    for c in 0..xv.c {
                        for (gv, m) in g.data[c * p..(c + 1) * p].iter_mut().zip(&av.data) {
                            *gv *= m;
                        }
                    }
                    accumulate(&mut grads[x.0], g);
                }
                if self.needs(*a) {
                    let mut g = Tensor::zeros(1, xv.h, xv.w);
                    for c in 0..xv.c {
                        for i in 0..p {
                            g.data[i] += gout.data[c * p + i] * xv.data[c * p + i];
                        }
                    }
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Affine { x, scale } => {
                let mut g = gout.clone();
                g.scale(*scale);
                accumulate(&mut grads[x.0], g);
            }
            Op::Mean { x } => {
                let xv = &self.nodes[x.0].value;
                let v = gout.data[0] / xv.len() as f32;
                accumulate(&mut grads[x.0], Tensor::filled(xv.c, xv.h, xv.w, v));
            }
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => acc.add_assign(&g),
    }
}

/// Result of a backward pass.
pub struct Gradients {
    /// Gradient per parameter name; parameters used several times are summed.
    pub params: BTreeMap<String, Tensor>,
    /// Gradients of inputs created with `track = true`.
    pub inputs: Vec<(NodeId, Tensor)>,
}

impl Gradients {
    pub fn input(&self, id: NodeId) -> Option<&Tensor> {
        self.inputs.iter().find(|(i, _)| *i == id).map(|(_, g)| g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds a scalar objective `sum(r ⊙ f(x))` and checks d/dx by central differences.
    fn check_input_grad(build: impl Fn(&mut Graph, NodeId) -> NodeId, x: Tensor) {
        let mut g = Graph::new();
        let xi = g.input(x.clone(), true);
        let out = build(&mut g, xi);
        let ov = g.value(out).clone();
        let r: Vec<f32> = (0..ov.len()).map(|i| ((i * 7919 % 13) as f32) / 13.0 - 0.4).collect();
        let seed = Tensor::from_vec(ov.c, ov.h, ov.w, r.clone());
        let grads = g.backward(&[(out, seed)]);
        let gx = grads.input(xi).unwrap().clone();
        let obj = |t: &Tensor| -> f64 {
            let mut g = Graph::new();
            let xi = g.input(t.clone(), false);
            let o = build(&mut g, xi);
            g.value(o).data.iter().zip(&r).map(|(a, b)| *a as f64 * *b as f64).sum()
        };
        let h = 1e-2f32;
        for i in (0..x.len()).step_by(3) {
            let mut p = x.clone();
            p.data[i] += h;
            let mut m = x.clone();
            m.data[i] -= h;
            let fd = (obj(&p) - obj(&m)) / (2.0 * h as f64);
            let an = gx.data[i] as f64;
            assert!(
                (fd - an).abs() <= 2e-2 * fd.abs().max(1.0) * 0.1 + 2e-3,
                "element {i}: finite difference {fd} vs analytic {an}"
            );
        }
    }

    fn sample(c: usize, h: usize, w: usize, k: f32) -> Tensor {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|i| ((i as f32) * k).sin()).collect())
    }

    #[test]
    fn conv_and_norm_gradients() {
        let wt = sample(3, 2 * 9, 1, 0.31);
        let gm = Tensor::vector(vec![1.2, 0.7, -0.4]);
        let bt = Tensor::vector(vec![0.1, 0.0, -0.2]);
        check_input_grad(
            |g, x| {
                let w = g.param("w", &wt);
                let c = g.conv(
                    x,
                    w,
                    None,
                    ConvGeom {
                        k: 3,
                        stride: 1,
                        pad: 1,
                    },
                );
                let ga = g.param("g", &gm);
                let be = g.param("b", &bt);
                let n = g.instance_norm(c, ga, be);
                g.leaky_relu(n, 0.2)
            },
            sample(2, 6, 6, 0.77),
        );
    }

    #[test]
    fn pooling_resampling_and_fusion_gradients() {
        check_input_grad(
            |g, x| {
                let p = g.avg_pool2(x);
                let u = g.upsample2(p);
                let s = g.slice_channels(u, 0, 2);
                let a = g.softmax2(s);
                let a0 = g.slice_channels(a, 0, 1);
                let m = g.mul_broadcast(x, a0);
                let t = g.tanh(m);
                let cat = g.concat(t, x);
                g.affine(cat, 0.5, 0.5)
            },
            sample(3, 4, 4, 0.53),
        );
    }

    #[test]
    fn dense_path_gradients() {
        let wt = sample(5, 3, 1, 0.9);
        let bt = sample(5, 1, 1, 0.2);
        check_input_grad(
            |g, x| {
                let v = g.global_avg_pool(x);
                let w = g.param("w", &wt);
                let b = g.param("b", &bt);
                let l = g.linear(v, w, b);
                let r = g.reshape(l, 5, 1, 1);
                let m = g.mean(r);
                g.add(m, m)
            },
            sample(3, 4, 4, 0.41),
        );
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let x = sample(2, 5, 5, 0.63);
        let w0 = sample(2, 2 * 16, 1, 0.17);
        let loss = |w: &Tensor| -> (f64, Tensor) {
            let mut g = Graph::new();
            let xi = g.input(x.clone(), false);
            let wi = g.param("w", w);
            let c = g.conv(
                xi,
                wi,
                None,
                ConvGeom {
                    k: 4,
                    stride: 2,
                    pad: 1,
                },
            );
            let m = g.mean(c);
            let val = g.value(m).data[0] as f64;
            let gr = g.backward(&[(m, Tensor::vector(vec![1.0]))]);
            (val, gr.params["w"].clone())
        };
        let (_, an) = loss(&w0);
        for i in 0..w0.len() {
            let mut p = w0.clone();
            p.data[i] += 1e-2;
            let mut m = w0.clone();
            m.data[i] -= 1e-2;
            let fd = (loss(&p).0 - loss(&m).0) / 2e-2;
            assert!((fd - an.data[i] as f64).abs() < 1e-4, "{i}: {fd} vs {}", an.data[i]);
        }
    }

    #[test]
    fn softmax_pair_sums_to_one() {
        let mut g = Graph::new();
        let x = g.input(sample(2, 3, 3, 5.0), false);
        let s = g.softmax2(x);
        let v = g.value(s);
        for i in 0..9 {
            assert!((v.data[i] + v.data[9 + i] - 1.0).abs() < 1e-7);
        }
    }
}
