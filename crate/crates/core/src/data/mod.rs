//! Silhouette data: synthetic walkers, alignment, corpora on disk, split
//! protocols and batch sampling.

pub mod dataset;
pub mod preprocess;
pub mod protocol;
pub mod sampler;
pub mod sequence;
pub mod walker;

pub use dataset::{
    generate_synthetic_corpus, load_dataset, read_sequence, scan_corpus, write_sequence, write_synthetic_corpus,
    seed_mix, LoadedDataset, SynthCorpusOptions,
};
pub use preprocess::{align_and_crop, ALIGNED_HEIGHT, ALIGNED_WIDTH};
pub use protocol::{ProbeSet, ProtocolKind, SeqSelector, SplitProtocol, CASIA_B_VIEWS, OUMVLP_VIEWS};
pub use sampler::{
    clip_to_feature_map, sample_training_batch, sequence_to_feature_map, Clip, TrainingSet, MIN_TRAIN_FRAMES,
};
pub use sequence::{Condition, SequenceKey, SilhouetteSequence};
pub use walker::{generate_walker_sequence, render_walker_sequence, Canvas, WalkerSpec};
