//! Annotation data model: scenes, boxes, identities and ordered captions.

mod io;
mod split;
mod stats;
mod synth;
mod types;
mod validate;

pub use io::{load_dataset, read_pfm, save_dataset, write_pfm, ANNOTATION_FILE};
pub use split::{split_dataset, Splits};
pub use stats::{dataset_stats, StatsReport, LENGTH_BINS};
pub use synth::{
    generate_synthetic, generate_synthetic_with_attributes, Attributes, SynthConfig, Slot,
};
pub use types::{BoundingBox, BoxRef, Caption, Dataset, Language, SceneImage, Vocab, MAX_CAPTION_LEN};
pub use validate::{validate_dataset, ValidationConfig, Violation};
