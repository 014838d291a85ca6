//! Ingestion, alignment, windowing, rebalancing and splitting of motion data.

pub mod align;
pub mod cache;
pub mod ldpa;
pub mod prepare;
pub mod smote;
pub mod split;
pub mod synthetic;
mod types;
pub mod window;

pub use align::{align_and_merge, AlignedSequence};
pub use cache::{dataset_summary, load_dataset, save_dataset};
pub use ldpa::{parse_ldpa_csv, BodyLocation, ColumnMap, RawRecord};
pub use prepare::{prepare_from_records, PrepareConfig, PreparedDataset};
pub use smote::{smote_oversample, SmoteOutcome};
pub use split::{split_train_test, ClientData, DatasetSplit, SequenceData, TestSelection};
pub use types::{MergedRecord, Origin, SequenceWindow, MERGED_FEATURE_NAMES};
pub use window::{window_count, window_segments};
