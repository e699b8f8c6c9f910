//! Corpus ingestion: sentence grammar, frame preprocessing, augmentation,
//! splits and generator input windows.

pub mod corpus;
pub mod preprocess;
pub mod sentence;
pub mod split;
pub mod video;
pub mod window;

pub use corpus::{scan_corpus, speaker_of_id, CorpusClip, PreparedCorpus};
pub use preprocess::{preprocess_frames, Anchors, PreprocessConfig, RawFrame, CANONICAL_ANCHORS};
pub use sentence::{parse_grid_sentence, GridSentence};
pub use split::{
    make_speaker_dependent_split, make_speaker_independent_split, ClipRef, DatasetSplit, SpeakerAssignment, SplitMode,
};
pub use video::{augment_mirror, samples_per_frame, VideoSample, VideoTensor, WaveformClip, FPS};
pub use window::{sliding_windows, window_indices};
