pub mod bayes_nn;
pub mod bcart;
pub mod cart;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod neural_net;
pub mod pipeline;

pub use error::{Error, Result};
