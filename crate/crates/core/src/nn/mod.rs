//! Function approximators: feedforward networks, Adam, and the Gaussian policy head.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod policy;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{ForwardCache, Init, Mlp, ParamVector};
pub use policy::{ActionInterval, GaussianPolicy, LogProbCache};
