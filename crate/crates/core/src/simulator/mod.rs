//! Synthetic projection data and image preprocessing.

pub mod dataset;
pub mod image;
pub mod mrc;
pub mod projection;
pub mod volume;

pub use dataset::{generate_dataset, CtfRange, ProjectionStack, SimConfig};
pub use image::{add_noise_to_snr, blur_bank, ctf_apply, preprocess, BlurMode, CtfParams};
pub use mrc::MrcData;
pub use projection::{grid_orientations, project};
pub use volume::{Blob, PhantomSpec, Volume};
