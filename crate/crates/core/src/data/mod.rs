//! Synthetic dataset generation, bicubic degradation, image I/O and the
//! on-disk dataset layout.

mod manifest;
mod ppm;
mod resample;
mod synthetic;

pub use manifest::{
    generate_dataset, hex_prefix, load_dataset, synthesize_dataset, Dataset, DatasetManifest,
    ManifestEntry, SamplePair,
};
pub use ppm::{byte_to_pixel, decode_ppm, encode_ppm, pixel_to_byte, read_image, write_image};
pub use resample::{bicubic_resample, cubic_kernel, degrade, tap_weights, CUBIC_A};
pub use synthetic::{
    generate_synthetic, render, SyntheticSpec, BROW_CURVATURE_RANGE, BROW_THICKNESS_RANGE,
    EYE_DX_RANGE, EYE_Y_RANGE, FACE_TONE_RANGE, HEAD_RX_RANGE, HEAD_RY_RANGE,
};
