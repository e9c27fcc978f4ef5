//! Dense tensors, a reverse-mode autodiff tape, and the operators the
//! enhancement network is built from.

pub mod blocks;
mod conv;
pub mod gradcheck;
mod graph;
pub mod linalg;
mod lstm;
mod norm;
pub mod optim;
pub mod params;
mod tensor;

pub use blocks::{Conv, ConvBlock, SAME_3X3};
pub use conv::{conv_out_len, deconv_out_len};
pub use graph::{Graph, NonFinite, Var};
pub use linalg::ConvGeom;
pub use lstm::LstmLayerVars;
pub use norm::{BnMode, BN_EPS, BN_MOMENTUM};
pub use optim::{adam_step, AdamState};
pub use params::{uniform_init, Ctx, Mode, ParamEntry, ParamId, ParamStore};
pub use tensor::Tensor;
