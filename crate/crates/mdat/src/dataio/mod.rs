//! Feature files, manifests, vocabularies, splits and synthetic data.

mod dataset;
mod feature;
mod manifest;
mod split;
mod synth;
mod vocab;

pub use dataset::{Dataset, Dims};
pub use feature::{
    align_length, decode_feature, encode_feature, read_feature_file, write_feature_file, FeatureError,
    FeatureSequence, MAGIC,
};
pub use manifest::{load_manifest, write_manifest, Sample, Split};
pub use split::{split_dataset, stratified_split};
pub use synth::{synth_dataset, SynthSpec, MANIFEST_NAME};
pub use vocab::{Corpus, LabelVocabulary};
