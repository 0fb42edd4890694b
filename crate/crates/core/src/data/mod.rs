//! Ingest, windowing, normalization, splitting and missingness injection.

pub mod cache;
pub mod csvio;
pub mod dir;
pub mod masking;
pub mod normalize;
pub mod split;
pub mod synthetic;
pub mod window;

pub use cache::{read_cache, write_cache};
pub use csvio::{load_csv, read_series};
pub use dir::{dataset_from_csv, load_dataset, mask_dataset, save_dataset, DatasetMeta};
pub use masking::{inject_mask, inject_missing, random_submask, submask, MaskPlan, MissingPattern, DEFAULT_SPAN};
pub use normalize::NormalizerState;
pub use split::{split, DatasetSplit};
pub use synthetic::{make_synthetic, Dataset, SyntheticSpec};
pub use window::{window, window_origins, MtsWindow, Sample, Series};
