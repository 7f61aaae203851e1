//! Small CPU tensor engine: channel-major tensors, a reverse-mode tape and Adam.

mod graph;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub use params::{init_normal, Adam, ParamStore};
pub use tensor::{col2im, gemm, im2col, ConvGeom, Tensor};
