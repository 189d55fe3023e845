pub mod env;
pub mod error;
pub mod exchange;
pub mod experiment;
pub mod nn;
pub mod ppo;
pub mod rollout;
pub mod search;
pub mod testbed;

pub use error::{Error, Result};
