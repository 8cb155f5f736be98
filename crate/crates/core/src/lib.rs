//! Inference for temporal action segmentation.
//!
//! Given frame-wise class probabilities and a transcript (the ordered list of
//! actions in a video), alignment finds the segment lengths. Two decoders are
//! provided:
//!
//! * [`exact`]: dynamic programming over segment boundaries with a Poisson
//!   length prior and a segment-length cap, `O(L N T)`.
//! * [`fifa`]: gradient descent on a differentiable approximation of the same
//!   energy, `O(M N T)` for `M` optimizer steps.
//!
//! [`metrics`] scores segmentations, [`data`] reads and writes instances and
//! generates synthetic ones.

pub mod data;
pub mod error;
pub mod exact;
pub mod fifa;
pub mod metrics;
pub mod types;

pub use error::{Error, Result};
pub use exact::{
    brute_force_align, select_transcript_exact, viterbi_align, viterbi_with_sampling, DecodeResult, ExactConfig,
};
pub use fifa::{
    fifa_align, init_lengths, select_transcript_fifa, EnergyBreakdown, FifaConfig, InitMode, OptimTrace, OptimizerKind,
    RelaxedFamily,
};
pub use metrics::MetricReport;
pub use types::{
    alpha, round_lengths, to_framewise, LengthConfig, LengthFamily, LengthModel, ProbMatrix, Segmentation, Transcript,
};
