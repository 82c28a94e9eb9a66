//! Image ranking through tag-mined subclasses.
//!
//! Tags that co-occur almost exclusively with one top-level class are mined
//! as subclasses ([`tagmine`]). One calibrated linear classifier per subclass
//! ([`svm`], [`prob`]) maps each image to a vector of subclass probabilities,
//! and a one-vs-one model over top-level classes ranks test images in that
//! space ([`pipeline`]). [`eval`] scores the rankings by average precision.
//!
//! The guide in `book/` walks through each stage with runnable examples.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod prob;
pub mod seed;
pub mod svm;
pub mod synth;
pub mod tagmine;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/mining.md")]
    mod mining {}
    #[doc = include_str!("../../../book/src/svm.md")]
    mod svm {}
    #[doc = include_str!("../../../book/src/probabilities.md")]
    mod probabilities {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
