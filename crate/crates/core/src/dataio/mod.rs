//! Data preparation: frame extraction, landmark providers, face cropping,
//! headset-mask synthesis and dataset materialization.

mod crop;
mod dataset;
mod frames;
mod landmarks;
mod mask;
pub mod synthetic;

pub use crop::{crop_box, crop_face, CropBox, CROP_SCALE};
pub use dataset::{
    build_dataset, jittered_geometry, DatasetConfig, DatasetManifest, FaceSample, Record, Split, MANIFEST_FILE,
};
pub use frames::{extract_frames, extract_indexed_frames, list_stills};
pub use landmarks::{
    detect_landmarks, CommandProvider, FixtureProvider, FrameRef, Label, LandmarkProvider, LandmarkSet, SidecarProvider,
};
pub use mask::{apply_mask, band_extents, synthesize_hmd_mask, MaskGeometry, MAX_MASK_AREA, MIN_MASK_AREA};
