//! Unsupervised alignment of continuous feature sequences (speech frames) to
//! the words of a parallel sentence.
//!
//! Each target word is explained by a latent cluster whose prototype is
//! compared to a source span with length-normalized DTW, and by a
//! diagonal-favoring distortion over the span's endpoints. Training is hard
//! EM: spans and clusters are re-assigned by per-word argmax, prototypes are
//! re-estimated with DTW barycenter averaging.

pub mod corpus;
pub mod distortion;
pub mod dtw;
pub mod evalkit;
pub mod model;
pub mod segmentation;
pub mod synth;
pub mod trainer;

pub use corpus::{load_corpus, normalize_utterance, Corpus, FeatureSequence, Frames, GoldAlignment, SentencePair};
pub use distortion::{allocate_mu, DistortionParams};
pub use dtw::{dba_centroid, dtw_distance, DbaConfig, WarpResult};
pub use evalkit::{alignment_to_links, naive_baseline, score, EvalReport};
pub use model::{Alignment, ClusterId, ClusterInventory, ModelParams, Variant, WordAlignment};
pub use segmentation::{CandidateSpans, SegmentationConfig, Span};
pub use synth::{synth_generate, SynthConfig};
pub use trainer::{train, TrainConfig, TrainState};
