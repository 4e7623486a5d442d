//! Acoustic front end and training: speaker normalization, time-extended
//! feature windows, a feed-forward network emitting per-frame log
//! posteriors, and the ADAM training loop for both loss kinds.

mod features;
mod net;
mod train;

pub use features::{extract_windows, speaker_normalize, FeatureSequence, WindowedFeatures};
pub use net::{load_checkpoint, save_checkpoint, AcousticNet, Checkpoint, NetGradients};
pub use train::{
    train, train_step, AdamState, EpochMetrics, LossKind, StepOutcome, TrainConfig, TrainItem,
    TrainOutcome,
};
