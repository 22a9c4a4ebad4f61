//! The chapters of the guide in `book/src`, compiled as documentation so
//! that `cargo test` runs every code snippet in them.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/expanded.md")]
pub mod expanded {}
#[doc = include_str!("../../../book/src/riccati.md")]
pub mod riccati {}
#[doc = include_str!("../../../book/src/dynamic_programming.md")]
pub mod dynamic_programming {}
#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
