//! Object perception toolkit: three recognition pipelines (modified SIFT
//! recognition, vocabulary-tree classification over region proposals, and a
//! boosted Haar cascade), the segmentation algorithms that feed them, and a
//! benchmark harness with synthetic ground-truth scenes.

pub mod cascade;
pub mod error;
pub mod features;
pub mod imaging;
pub mod matching;
pub mod segment;
pub mod sift;
pub mod synth;
pub mod vtree;

pub use error::{Error, Result};

/// One detector output on a single image: a class, a box and a confidence
/// score. The harness attaches frame ids when it aggregates these.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Detection {
    pub class: String,
    pub bbox: imaging::BoundingBox,
    pub score: f64,
}
