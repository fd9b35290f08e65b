//! From marker-annotated recordings to labeled, flattened epochs.

mod dataset;
mod epoch;
mod filter;

pub use dataset::{
    flatten, read_epoch_cache, read_feature_csv, split_indices, split_train_test, unflatten,
    write_epoch_cache, write_feature_csv, EpochedDataset, FeatureMatrix, EPOCH_CACHE_MAGIC,
    N_CLASSES,
};
pub use epoch::{
    detect_onsets, erp_average, extract_epoch, extract_epochs, sample_rest_epochs, Epoch,
    MarkerEvent, RestSample, EPOCH_CHANNELS, EPOCH_SAMPLES, LABEL_LEFT, LABEL_REST, LABEL_RIGHT,
};
pub use filter::{highpass_filter, Biquad, HighPass, DEFAULT_FILTER_ORDER, DEFAULT_HIGHPASS_HZ};
