//! Compiles every chapter of the guide in `book/src` as doctests, one module
//! per chapter so a failure points at its file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/cart.md")]
pub mod cart {}
#[doc = include_str!("../../../book/src/bcart.md")]
pub mod bcart {}
#[doc = include_str!("../../../book/src/networks.md")]
pub mod networks {}
#[doc = include_str!("../../../book/src/bnn.md")]
pub mod bnn {}
#[doc = include_str!("../../../book/src/pipelines.md")]
pub mod pipelines {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
