//! Dataset ingestion: feature files, manifests, MOS rescaling, content-
//! disjoint splits, batch assembly and the synthetic dataset generator.
//!
//! On disk a data tree looks like
//!
//! ```text
//! <root>/<dataset_id>/descriptor.json   {dataset_id, native_min, native_max, higher_is_better}
//! <root>/<dataset_id>/manifest.csv      sample_id,content_id,feature_path,mos_raw
//! <root>/<dataset_id>/features/*.mqaf   feature files (paths in the CSV are relative to <root>)
//! ```

mod batch;
mod feature_file;
mod manifest;
mod split;
pub mod synth;

pub use batch::{make_batches, Batch};
pub use feature_file::{
    decode_feature, encode_feature, read_feature_file, write_feature_file, FEATURE_MAGIC,
    FEATURE_VERSION,
};
pub use manifest::{
    discover_datasets, load_dataset, rescale_mos, DatasetDescriptor, DatasetManifest,
    LoadedDataset, ManifestRow, SampleRecord, DESCRIPTOR_FILE, MANIFEST_FILE,
};
pub use split::{split_all, split_by_content, DataSplit, Proportions, SplitAssignment, Subset};

/// FNV-1a, used to derive per-dataset RNG streams from a base seed.
pub(crate) fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub(crate) fn stream_seed(base: u64, id: &str, salt: u64) -> u64 {
    base ^ id_hash(id).rotate_left(17) ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}
