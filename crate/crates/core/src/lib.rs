pub mod data;
pub mod dsp;
pub mod eval;
pub mod linalg;
pub mod pipeline;
pub mod serde_util;
pub mod spatial;
pub mod synth;
#[cfg(feature = "cli")]
pub mod cli;
