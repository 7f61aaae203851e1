//! Parameter registration and graph construction for the shared building blocks.
//! `register_*` and the matching `Layers` method must agree on names and shapes.

use rand::Rng;

use crate::nn::{init_normal, ConvGeom, Graph, NodeId, ParamStore, Tensor};

pub const LEAK: f32 = 0.2;

pub const CONV3: ConvGeom = ConvGeom {
    k: 3,
    stride: 1,
    pad: 1,
};
pub const CONV1: ConvGeom = ConvGeom {
    k: 1,
    stride: 1,
    pad: 0,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    None,
    Down,
    Up,
}

pub fn register_conv<R: Rng>(ps: &mut ParamStore, rng: &mut R, name: &str, cin: usize, cout: usize, k: usize) {
    let fan_in = cin * k * k;
    ps.insert(format!("{name}.w"), init_normal(rng, cout, fan_in, 1, fan_in));
    ps.insert(format!("{name}.b"), Tensor::zeros(cout, 1, 1));
}

/// Convolution without bias, for layers followed by a normalization that would cancel it.
pub fn register_conv_nobias<R: Rng>(ps: &mut ParamStore, rng: &mut R, name: &str, cin: usize, cout: usize, k: usize) {
    let fan_in = cin * k * k;
    ps.insert(format!("{name}.w"), init_normal(rng, cout, fan_in, 1, fan_in));
}

pub fn register_conv_zero(ps: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize) {
    ps.insert(format!("{name}.w"), Tensor::zeros(cout, cin * k * k, 1));
    ps.insert(format!("{name}.b"), Tensor::zeros(cout, 1, 1));
}

pub fn register_norm(ps: &mut ParamStore, name: &str, c: usize) {
    ps.insert(format!("{name}.gamma"), Tensor::filled(c, 1, 1, 1.0));
    ps.insert(format!("{name}.beta"), Tensor::zeros(c, 1, 1));
}

pub fn register_linear<R: Rng>(ps: &mut ParamStore, rng: &mut R, name: &str, n_in: usize, n_out: usize) {
    ps.insert(format!("{name}.w"), init_normal(rng, n_out, n_in, 1, n_in));
    ps.insert(format!("{name}.b"), Tensor::zeros(n_out, 1, 1));
}

/// Pre-activation residual block: `skip(r(x)) + conv(act(norm(conv(act(norm(r(x)))))))`
/// where `r` is the optional resampling. The convolutions carry no bias: every
/// path out of a block ends in an instance norm, which removes per-channel offsets.
pub fn register_res_block<R: Rng>(ps: &mut ParamStore, rng: &mut R, name: &str, cin: usize, cout: usize) {
    register_norm(ps, &format!("{name}.n1"), cin);
    register_conv_nobias(ps, rng, &format!("{name}.c1"), cin, cout, 3);
    register_norm(ps, &format!("{name}.n2"), cout);
    register_conv_nobias(ps, rng, &format!("{name}.c2"), cout, cout, 3);
    if cin != cout {
        register_conv_nobias(ps, rng, &format!("{name}.skip"), cin, cout, 1);
    }
}

/// Graph-building view over a parameter store.
pub struct Layers<'a> {
    pub g: &'a mut Graph,
    pub p: &'a ParamStore,
}

impl<'a> Layers<'a> {
    pub fn param(&mut self, name: &str) -> NodeId {
        self.g.param(name, self.p.get(name))
    }

    pub fn conv(&mut self, x: NodeId, name: &str, geom: ConvGeom) -> NodeId {
        let w = self.param(&format!("{name}.w"));
        let bias = format!("{name}.b");
        let b = self.p.contains(&bias).then(|| self.param(&bias));
        self.g.conv(x, w, b, geom)
    }

    pub fn norm(&mut self, x: NodeId, name: &str) -> NodeId {
        let gamma = self.param(&format!("{name}.gamma"));
        let beta = self.param(&format!("{name}.beta"));
        self.g.instance_norm(x, gamma, beta)
    }

    pub fn norm_act(&mut self, x: NodeId, name: &str) -> NodeId {
        let n = self.norm(x, name);
        self.g.leaky_relu(n, LEAK)
    }

    pub fn linear(&mut self, x: NodeId, name: &str) -> NodeId {
        let w = self.param(&format!("{name}.w"));
        let b = self.param(&format!("{name}.b"));
        self.g.linear(x, w, b)
    }

    pub fn res_block(&mut self, x: NodeId, name: &str, resample: Resample) -> NodeId {
        let x = match resample {
            Resample::None => x,
            Resample::Down => self.g.avg_pool2(x),
            Resample::Up => self.g.upsample2(x),
        };
        let h = self.norm_act(x, &format!("{name}.n1"));
        let h = self.conv(h, &format!("{name}.c1"), CONV3);
        let h = self.norm_act(h, &format!("{name}.n2"));
        let h = self.conv(h, &format!("{name}.c2"), CONV3);
        let skip_name = format!("{name}.skip.w");
        let skip = if self.p.contains(&skip_name) {
            self.conv(x, &format!("{name}.skip"), CONV1)
        } else {
            x
        };
        self.g.add(h, skip)
    }
}
