//! Training corpora: the 1D mixture, IDX image files, grayscale
//! preprocessing and a synthetic motif corpus.

mod gmm;
mod idx;
mod image;
mod toy;

pub use gmm::GmmSpec;
pub use idx::{encode_idx_images, load_idx_images, parse_idx_images, save_idx_images, IDX3_MAGIC};
pub use image::{
    bilinear_resize, gaussian_blur, gaussian_kernel, grayscale_preprocess, rescale_resize,
    ImageDataset, Preprocessing,
};
pub use toy::{synth_toy_dataset, MOTIFS};
