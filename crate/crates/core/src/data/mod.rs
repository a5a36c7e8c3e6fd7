//! Synthetic datasets, IDX ingestion, and the on-disk dataset layout.

mod dataset;
mod generate;
mod idx;

pub use dataset::{Dataset, DatasetMeta, Image, PairSampler};
pub use generate::{gen_blob_digits, gen_tri_circ, MIN_SIZE};
pub use idx::{load_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
