//! On-disk formats: raw arrays, datasets and PNG previews.

mod dataset;
mod png;
mod rawarray;

pub use self::png::{to_gray8, write_gray_png, write_magnitude_png, write_rgb_png};
pub use dataset::{
    read_dataset, read_manifest, write_dataset, write_manifest, Dataset, DatasetEntry,
    DatasetManifest, ManifestEntry, FORMAT_VERSION, MANIFEST_FILE,
};
pub use rawarray::{read_array, write_array, ArrayData, RawArray, MAGIC};
