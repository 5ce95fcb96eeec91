//! Dataset ingestion, splitting, preprocessing, augmentation and minority
//! oversampling.

mod augment;
mod dataset;
mod preprocess;
mod smote;
mod split;
pub mod synthetic;

pub use augment::{apply_augment, augment, max_shift, sample_augment, AugmentDraw, MAX_SHIFT_FRACTION};
pub use dataset::{
    class_counts, decode_image, encode_png, find_image, load_dataset, write_dataset, DatasetRecord, DxType, Lesion, LoadedDataset,
    Rejection, JPEG_SUPPORTED,
};
pub use preprocess::{image_to_tensor, normalize, preprocess, resize_tensor, tensor_to_image, NormStats, DEFAULT_IMAGE_SIZE};
pub use smote::{
    interpolate, smote_oversample, smote_samples, target_counts, Provenance, SmoteConfig, SmoteOutput, SmoteTarget, SyntheticSample,
    DEFAULT_NEIGHBORS,
};
pub use split::{split, Partition, SplitAssignment, DEFAULT_RATIOS};
