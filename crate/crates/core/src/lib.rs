//! Mesh-guided hand refinement.
//!
//! A hand mesh is rendered into a depth-shaded guidance map; its padded
//! bounding box becomes the inpainting mask; a masked DDIM loop regenerates
//! the boxed region against a pluggable noise predictor while the rest of
//! the image is re-noised from the input at every step. A detector-fusion
//! gate decides which hands to predict meshes for, and a two-keypoint
//! similarity transform moves a reference hand pose onto an input hand.
//!
//! See the guide in `book/` for a walk-through of each stage.

pub mod detection;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod meshproc;
pub mod pipeline;

pub use error::{Error, Result};

// The guide's code listings run as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/rasterization.md")]
    mod rasterization {}
    #[doc = include_str!("../../../book/src/inpainting.md")]
    mod inpainting {}
    #[doc = include_str!("../../../book/src/double-check.md")]
    mod double_check {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
