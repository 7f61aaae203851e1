//! Feature-space perceptual distance with a pluggable backbone.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{init_normal, ConvGeom, Graph, Tensor};

const NORM_EPS: f32 = 1e-10;

/// Multi-layer feature extractor.
pub trait Backbone: Sync {
    /// Identifier recorded in reports.
    fn id(&self) -> String;
    /// Whether values are comparable with published LPIPS numbers.
    fn comparable(&self) -> bool;
    fn features(&self, img: &Image) -> Result<Vec<Tensor>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    /// `cout × (cin·k·k)`, row-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "unsupported conv geometry k={} stride={}",
                self.k, self.stride
            )));
        }
        if self.weights.len() != self.cout * self.cin * self.k * self.k || self.bias.len() != self.cout {
            return Err(Error::shape(
                format!(
                    "{} weights and {} biases",
                    self.cout * self.cin * self.k * self.k,
                    self.cout
                ),
                format!("{} and {}", self.weights.len(), self.bias.len()),
            ));
        }
        Ok(())
    }
}

/// Stack of conv + leaky-ReLU layers; every layer's activation is a feature tap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBackbone {
    pub id: String,
    #[serde(default)]
    pub comparable: bool,
    pub layers: Vec<ConvLayer>,
}

impl ConvBackbone {
    /// Fixed random extractor for tests and desk-scale runs. Values are not
    /// comparable with published numbers.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = [(3, 8, 1), (8, 16, 2), (16, 32, 2), (32, 32, 2)];
        let layers = spec
            .iter()
            .map(|&(cin, cout, stride)| {
                let k = 3;
                let w = init_normal(&mut rng, cout, cin * k * k, 1, cin * k * k);
                ConvLayer {
                    cin,
                    cout,
                    k,
                    stride,
                    weights: w.data,
                    bias: vec![0.0; cout],
                }
            })
            .collect();
        Self {
            id: format!("random-conv-{seed}"),
            comparable: false,
            layers,
        }
    }

    /// Loads pretrained weights exported as JSON (same structure as this type).
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingBackbone(format!(
                "weights file {} not found",
                path.display()
            )));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let b: ConvBackbone = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("malformed backbone weights {}: {e}", path.display())))?;
        if b.layers.is_empty() {
            return Err(Error::Config("backbone has no layers".into()));
        }
        let mut cin = 3;
        for l in &b.layers {
            l.validate()?;
            if l.cin != cin {
                return Err(Error::shape(format!("layer input {cin}"), l.cin));
            }
            cin = l.cout;
        }
        Ok(b)
    }
}

impl Backbone for ConvBackbone {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn comparable(&self) -> bool {
        self.comparable
    }

    fn features(&self, img: &Image) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let mut h = g.input(img.to_signed_tensor(), false);
        let mut taps = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let w = g.input(Tensor::from_vec(l.cout, l.cin * l.k * l.k, 1, l.weights.clone()), false);
            let b = g.input(Tensor::from_vec(l.cout, 1, 1, l.bias.clone()), false);
            let geom = ConvGeom {
                k: l.k,
                stride: l.stride,
                pad: (l.k - 1) / 2,
            };
            let c = g.conv(h, w, Some(b), geom);
            h = g.leaky_relu(c, 0.2);
            taps.push(g.value(h).clone());
        }
        Ok(taps)
    }
}

/// Which backbone to use, as written in config files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackboneSpec {
    /// No LPIPS column.
    #[default]
    None,
    Random {
        seed: u64,
    },
    External {
        path: PathBuf,
    },
}

impl BackboneSpec {
    pub fn build(&self) -> Result<Option<Box<dyn Backbone>>> {
        Ok(match self {
            BackboneSpec::None => None,
            BackboneSpec::Random { seed } => Some(Box::new(ConvBackbone::random(*seed))),
            BackboneSpec::External { path } => Some(Box::new(ConvBackbone::load(path)?)),
        })
    }
}

/// Per-pixel unit normalization along channels.
fn unit_normalize(t: &Tensor) -> Tensor {
    let p = t.h * t.w;
    let mut out = t.clone();
    for i in 0..p {
        let n: f32 = (0..t.c).map(|c| t.data[c * p + i].powi(2)).sum::<f32>().sqrt();
        for c in 0..t.c {
            out.data[c * p + i] = t.data[c * p + i] / (n + NORM_EPS);
        }
    }
    out
}

/// Mean over layers of the spatially averaged squared distance between
/// channel-normalized features.
pub fn lpips(a: &Image, b: &Image, backbone: &dyn Backbone) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let fa = backbone.features(a)?;
    let fb = backbone.features(b)?;
    if fa.is_empty() {
        return Err(Error::Config("backbone produced no features".into()));
    }
    let mut total = 0.0;
    for (x, y) in fa.iter().zip(&fb) {
        let (x, y) = (unit_normalize(x), unit_normalize(y));
        let p = x.h * x.w;
        let mut energy = 0.0f64;
        for i in 0..p {
            let d: f64 = (0..x.c)
                .map(|c| {
                    let d = (x.data[c * p + i] - y.data[c * p + i]) as f64;
                    d * d
                })
                .sum();
            energy += d;
        }
        total += energy / p as f64;
    }
    Ok(total / fa.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_have_zero_distance() {
        let bb = ConvBackbone::random(1);
        let a = Image::from_fn(32, 32, |y, x| [(x % 5) as f64 / 5.0, (y % 3) as f64 / 3.0, 0.2]);
        assert_eq!(lpips(&a, &a, &bb).unwrap(), 0.0);
    }

    #[test]
    fn missing_external_weights() {
        let spec = BackboneSpec::External {
            path: "/nonexistent/lpips.json".into(),
        };
        assert!(matches!(spec.build(), Err(Error::MissingBackbone(_))));
    }

    #[test]
    fn external_weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bb.json");
        let bb = ConvBackbone::random(4);
        fs::write(&p, serde_json::to_string(&bb).unwrap()).unwrap();
        assert_eq!(ConvBackbone::load(&p).unwrap(), bb);
        let mut bad = bb.clone();
        bad.layers[1].cin = 5;
        fs::write(&p, serde_json::to_string(&bad).unwrap()).unwrap();
        assert!(ConvBackbone::load(&p).is_err());
    }
}
