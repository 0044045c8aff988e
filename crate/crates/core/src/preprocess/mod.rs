//! Grayscale images, PGM files, resizing, crop/flip augmentation and
//! illumination normalization.

mod augment;
mod illum;
mod image;

pub use augment::{augment_labeled, crops_all, hflip, resize, AugmentConfig};
pub use illum::{illum_normalize, IllumParams};
pub use image::{load_dataset, load_image, parse_pgm, save_dataset, save_image, write_pgm, GrayImage, LabeledImage};
