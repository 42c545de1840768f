//! The guide in `book/` is written for mdbook, which cannot run Rust
//! samples that depend on workspace crates. Each chapter is included here as
//! module docs instead, so `cargo test --doc -p printseg-book` runs every
//! sample against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/gcode.md")]
pub mod gcode {}
#[doc = include_str!("../../../book/src/labels.md")]
pub mod labels {}
#[doc = include_str!("../../../book/src/scenes.md")]
pub mod scenes {}
#[doc = include_str!("../../../book/src/rendering.md")]
pub mod rendering {}
#[doc = include_str!("../../../book/src/datasets.md")]
pub mod datasets {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/jobstats.md")]
pub mod jobstats {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
