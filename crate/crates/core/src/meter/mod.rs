//! Bidirectional flow metering.

mod cache;
mod features;
mod key;
mod record;
mod stats;

pub use cache::{meter_packets, Anonymize, FlowMeter, LookupStrategy, MeterConfig, MeterStats};
pub use features::{finalize_features, records_to_dataset, FeatureDef, FeatureRow, METADATA_COLUMNS};
pub use key::{canonicalize, dual_hash, flow_hash, CanonicalKey, Direction, Endpoint, FlowKey};
pub use record::{ExportReason, FlowRecord, SpltEntry};
pub use stats::{DirStats, StreamingMoments};
