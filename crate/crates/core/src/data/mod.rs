//! Moving-digit sequence synthesis, MNIST ingestion and the SWDS dataset
//! format.

mod dataset;
mod generator;
mod idx;

pub use dataset::{
    build_dataset, DatasetHeader, SampleType, SequenceBatch, SequenceDataset, Sprites, SWDS_MAGIC, SWDS_VERSION,
};
pub use generator::{
    generate_sequence, procedural_glyph, reflect, render_trajectory, GeneratorConfig, Motion, Sequence,
};
pub use idx::{encode_images, load_idx, parse_images, parse_labels, Bitmap, IMAGES_MAGIC, LABELS_MAGIC};
