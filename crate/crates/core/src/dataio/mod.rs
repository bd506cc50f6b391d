//! Dataset ingestion, preprocessing, and the synthetic data generator.

mod pgm;
mod records;
mod resize;
pub mod synth;

pub use pgm::{decode_pgm, load_gray_image, read_pgm, read_pgm_dimensions, write_pgm, GrayImage};
pub use records::{BBox, Label, Manifest, SampleRecord, Subset, MANIFEST_HEADER};
pub use resize::crop_resize;
pub use synth::{
    manifest_path, render_sample, synth_generate, ClassCounts, RenderedSample, SynthConfig,
    SynthStyle,
};
