//! Desk-scale industrial anomaly detection: anomaly forging with Poisson
//! blending, prompt-ensemble and memory-bank anomaly maps, text-gated feature
//! enhancement, multi-mask fusion, staged training, and evaluation.

pub mod dataset;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod learn;
pub mod mmf;
pub mod numerics;
pub mod pipeline;
pub mod pnm;
pub mod prompt_bank;
pub mod rng;
pub mod scoring;
pub mod synth;
pub mod texture;
pub mod tge;

pub use encoders::{EncoderConfig, ImageEncoder, ImageFeatures, PatchFeatureStack, TextEncoder, ToyEncoder};
pub use error::{Error, Result};
pub use eval::grid::GridCell;
pub use numerics::Tensor;
pub use prompt_bank::{ClassPrompts, PromptBank, PromptMatrix};
pub use scoring::{AnomalyMapSet, DecoderParams, MemoryBank};
pub use synth::{Label, SynthConfig, SynthSample};
