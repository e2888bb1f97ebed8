//! Minimal differentiable tensor toolkit backing the encoders, generators,
//! discriminator and selector.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use layers::{Conv2d, ConvGruCell, GruCell, Linear, Mlp};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
