//! Color-space, quantization and statistics primitives for classification-based
//! image colorization.
//!
//! The crate is organised bottom-up:
//!
//! * [`colorspace`] converts 8-bit sRGB to CIE Lab (D65) and back, and splits a
//!   Lab image into the lightness input and the chroma target.
//! * [`quantize`] builds the quantized in-gamut `ab` output space, soft-encodes
//!   chroma into per-pixel distributions and decodes predictions with the
//!   annealed mean.
//! * [`rebalance`] estimates the empirical color prior and turns it into
//!   per-class loss weights.
//! * [`metrics`] holds the AuC-of-CMF accuracy metrics and bootstrap statistics.
//! * [`ppm`], [`dataset`] and [`priors_file`] are the persisted formats.

pub mod colorspace;
pub mod dataset;
mod error;
pub mod metrics;
pub mod ppm;
pub mod priors_file;
pub mod quantize;
pub mod rebalance;

pub use colorspace::{ChromaPlane, LabImage, LightnessPlane, RgbImage};
pub use error::{Error, Result};
pub use quantize::{ColorDistribution, GamutBins};
pub use rebalance::PriorWeights;
