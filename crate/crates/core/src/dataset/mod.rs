//! Segments, montage geometry, training statistics, subject splits, storage
//! and the synthetic generator.

mod montage;
mod segment;
mod stats;
mod store;
mod synth;

pub use montage::{project, Angles, Montage, SOURCE_NAMES, TARGET_NAMES};
pub use segment::{bandpass_segment, segment_recording, to_f32, Segment};
pub use stats::{split_sizes, ChannelStats, Split, SPLIT_RATIOS, STD_FLOOR};
pub use store::{load_segments, read_manifest, save_segments, Manifest, SegmentEntry, STORE_VERSION};
pub use synth::{subject_id, synth_dataset, synth_subject, Latent, SynthConfig};
